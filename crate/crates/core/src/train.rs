//! The four training regimes: full-graph GAE, FastGAE with degree-weighted
//! subgraph sampling, independently trained patch GAEs aligned afterwards
//! (GAE+L2G), and one shared encoder trained on synchronized patches (L2G2G).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{
    backward, forward, loss_and_grad, recon_loss_and_grad, sigmoid, AdamState, EncoderInput,
    GcnModel, Gradients, EMBEDDING_DIM, HIDDEN_DIM,
};
use crate::graph::Graph;
use crate::linalg::{dot, Matrix};
use crate::partition::{self, PatchGraph, PatchSet};
use crate::sync::{align_and_average, synchronize_with, SyncPolicy, Transform};

/// Independent random streams derived from one run seed.
pub mod streams {
    pub const SPLIT: u64 = 0;
    pub const PARTITION: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SAMPLE: u64 = 3;
}

/// RNG for `stream` of run `seed`; `index` separates per-patch streams and
/// index 0 is the plain run stream.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    rng.set_stream(stream);
    rng
}

/// Seed handed to the partitioner for run `seed`.
pub fn partition_seed(seed: u64) -> u64 {
    stream_rng(seed, streams::PARTITION, 0).gen()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Gae,
    #[serde(rename = "fastgae")]
    FastGae,
    GaeL2g,
    L2g2g,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Gae, Regime::FastGae, Regime::GaeL2g, Regime::L2g2g];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Gae => "gae",
            Regime::FastGae => "fastgae",
            Regime::GaeL2g => "gae-l2g",
            Regime::L2g2g => "l2g2g",
        }
    }

    /// Whether the regime trains on patches.
    pub fn uses_patches(self) -> bool {
        matches!(self, Regime::GaeL2g | Regime::L2g2g)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown regime {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub k: usize,
    pub min_overlap: usize,
    pub sync_every: usize,
    /// FastGAE sample size; `None` means `⌊√N⌋`.
    pub sample_size: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub sync_policy: SyncPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.001,
            k: 10,
            min_overlap: partition::DEFAULT_MIN_OVERLAP,
            sync_every: 10,
            sample_size: None,
            seed: 0,
            sync_policy: SyncPolicy::Strict,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.sync_every == 0 {
            return Err(Error::Parameter("sync_every must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {} is not positive", self.lr)));
        }
        if self.k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sample_size_for(&self, n_nodes: usize) -> Result<usize> {
        let n_s = self
            .sample_size
            .unwrap_or_else(|| (n_nodes as f64).sqrt().floor() as usize);
        if n_s == 0 || n_s > n_nodes {
            return Err(Error::Parameter(format!(
                "sample size {n_s} outside 1..={n_nodes}"
            )));
        }
        Ok(n_s)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub regime: Regime,
    pub losses: Vec<f64>,
    /// Seconds per epoch, partitioning excluded.
    pub epoch_times: Vec<f64>,
    pub embedding: Matrix,
    pub transforms: Option<Vec<Transform>>,
}

impl TrainReport {
    pub fn mean_epoch_time(&self) -> f64 {
        if self.epoch_times.is_empty() {
            return 0.0;
        }
        self.epoch_times.iter().sum::<f64>() / self.epoch_times.len() as f64
    }
}

fn init_model(g: &Graph, seed: u64, index: u64) -> GcnModel {
    let mut rng = stream_rng(seed, streams::INIT, index);
    GcnModel::glorot(g.n_features(), HIDDEN_DIM, EMBEDDING_DIM, &mut rng)
}

pub fn train_gae(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let input = EncoderInput::new(g)?;
    let mut model = init_model(g, cfg.seed, 0);
    let mut adam = AdamState::new(&model, cfg.lr);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut times = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (loss, grads) = loss_and_grad(&model, &input, g, None).map_err(|e| e.at_epoch(epoch))?;
        adam.step(&mut model, &grads);
        times.push(start.elapsed().as_secs_f64());
        losses.push(loss);
    }
    let embedding = forward(&model, &input)?.z;
    Ok(TrainReport {
        regime: Regime::Gae,
        losses,
        epoch_times: times,
        embedding,
        transforms: None,
    })
}

/// `n_s` distinct nodes drawn without replacement, each draw proportional to
/// degree + 1 among the nodes left; returned sorted.
pub fn sample_subgraph_degree_proportional<R: Rng>(g: &Graph, n_s: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = g.n_nodes();
    if n_s == 0 || n_s > n {
        return Err(Error::Parameter(format!("sample size {n_s} outside 1..={n}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let mut picked = partition::weighted_without_replacement(&all, |v| (g.degree(v) + 1) as f64, n_s, rng);
    picked.sort_unstable();
    Ok(picked)
}

pub fn train_fastgae(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n_s = cfg.sample_size_for(g.n_nodes())?;
    let input = EncoderInput::new(g)?;
    let mut model = init_model(g, cfg.seed, 0);
    let mut adam = AdamState::new(&model, cfg.lr);
    let mut rng = stream_rng(cfg.seed, streams::SAMPLE, 0);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut times = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut step = || -> Result<(f64, Gradients)> {
            let cache = forward(&model, &input)?;
            let sample = sample_subgraph_degree_proportional(g, n_s, &mut rng)?;
            let sub = g.induced_subgraph(&sample);
            let (loss, dsub) = recon_loss_and_grad(&cache.z.select_rows(&sample), &sub)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            let mut dz = Matrix::zeros(cache.z.rows(), cache.z.cols());
            for (i, &u) in sample.iter().enumerate() {
                dz.row_mut(u).copy_from_slice(dsub.row(i));
            }
            Ok((loss, backward(&model, &input, &cache, &dz)?))
        };
        let (loss, grads) = step().map_err(|e| e.at_epoch(epoch))?;
        adam.step(&mut model, &grads);
        times.push(start.elapsed().as_secs_f64());
        losses.push(loss);
    }
    let embedding = forward(&model, &input)?.z;
    Ok(TrainReport {
        regime: Regime::FastGae,
        losses,
        epoch_times: times,
        embedding,
        transforms: None,
    })
}

/// Per-patch loss weights `N_j / N`.
pub fn patch_weights(patches: &PatchSet) -> Vec<f64> {
    let n = patches.n_nodes() as f64;
    patches.patches.iter().map(|p| p.len() as f64 / n).collect()
}

/// Splits `g` into `cfg.k` patches with the run's partition seed.
pub fn make_patches(g: &Graph, cfg: &TrainConfig) -> Result<(PatchSet, PatchGraph)> {
    let assignment = partition::cluster_nodes(g, cfg.k, partition_seed(cfg.seed))?;
    partition::build_patches(g, &assignment, cfg.min_overlap)
}

pub fn train_gae_l2g(patches: &PatchSet, patch_graph: &PatchGraph, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let weights = patch_weights(patches);
    let mut losses = vec![0.0; cfg.epochs];
    let mut times = vec![0.0; cfg.epochs];
    let mut embeddings = Vec::with_capacity(patches.k());
    for (j, patch) in patches.patches.iter().enumerate() {
        let input = EncoderInput::new(&patch.graph)?;
        let mut model = init_model(&patch.graph, cfg.seed, j as u64);
        let mut adam = AdamState::new(&model, cfg.lr);
        for epoch in 0..cfg.epochs {
            let start = Instant::now();
            let (loss, grads) =
                loss_and_grad(&model, &input, &patch.graph, None).map_err(|e| e.at_epoch(epoch))?;
            adam.step(&mut model, &grads);
            times[epoch] += start.elapsed().as_secs_f64();
            losses[epoch] += weights[j] * loss;
        }
        embeddings.push(forward(&model, &input)?.z);
    }
    // The one alignment pass is charged to the last epoch.
    let start = Instant::now();
    let transforms = synchronize_with(patches, patch_graph, &embeddings, cfg.sync_policy).map_err(|e| e.at_epoch(cfg.epochs - 1))?;
    let embedding = align_and_average(patches, &embeddings, &transforms)?;
    times[cfg.epochs - 1] += start.elapsed().as_secs_f64();
    Ok(TrainReport {
        regime: Regime::GaeL2g,
        losses,
        epoch_times: times,
        embedding,
        transforms: Some(transforms),
    })
}

pub fn train_l2g2g(patches: &PatchSet, patch_graph: &PatchGraph, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let k = patches.k();
    let first = patches
        .patches
        .first()
        .ok_or_else(|| Error::Contract("no patches".into()))?;
    let inputs = patches
        .patches
        .iter()
        .map(|p| EncoderInput::new(&p.graph))
        .collect::<Result<Vec<_>>>()?;
    let weights = patch_weights(patches);
    let mut model = init_model(&first.graph, cfg.seed, 0);
    let mut adam = AdamState::new(&model, cfg.lr);
    let mut transforms = vec![Transform::identity(EMBEDDING_DIM); k];
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut times = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut step = || -> Result<(f64, Gradients)> {
            let caches = inputs
                .iter()
                .map(|input| forward(&model, input))
                .collect::<Result<Vec<_>>>()?;
            if epoch % cfg.sync_every == 0 {
                let zs: Vec<Matrix> = caches.iter().map(|c| c.z.clone()).collect();
                transforms = synchronize_with(patches, patch_graph, &zs, cfg.sync_policy)?;
            }
            let mut total = 0.0;
            let mut grads = Gradients::zeros_like(&model);
            for (j, patch) in patches.patches.iter().enumerate() {
                let t = &transforms[j];
                let aligned = t.apply(&caches[j].z)?;
                let (loss, dhat) = recon_loss_and_grad(&aligned, &patch.graph)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss);
                }
                let dz = t.pull_back(&dhat)?;
                let g = backward(&model, &inputs[j], &caches[j], &dz)?;
                grads.add_scaled(&g, weights[j]);
                total += weights[j] * loss;
            }
            Ok((total, grads))
        };
        let (loss, grads) = step().map_err(|e| e.at_epoch(epoch))?;
        adam.step(&mut model, &grads);
        times.push(start.elapsed().as_secs_f64());
        losses.push(loss);
    }
    let embeddings = inputs
        .iter()
        .map(|input| Ok(forward(&model, input)?.z))
        .collect::<Result<Vec<_>>>()?;
    let embedding = align_and_average(patches, &embeddings, &transforms)?;
    Ok(TrainReport {
        regime: Regime::L2g2g,
        losses,
        epoch_times: times,
        embedding,
        transforms: Some(transforms),
    })
}

/// Partitions when needed and dispatches to the regime's trainer.
pub fn train(regime: Regime, g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    match regime {
        Regime::Gae => train_gae(g, cfg),
        Regime::FastGae => train_fastgae(g, cfg),
        Regime::GaeL2g | Regime::L2g2g => {
            cfg.validate()?;
            let (patches, patch_graph) = make_patches(g, cfg)?;
            if regime == Regime::GaeL2g {
                train_gae_l2g(&patches, &patch_graph, cfg)
            } else {
                train_l2g2g(&patches, &patch_graph, cfg)
            }
        }
    }
}

/// Edge probability between `u` of patch `i` and `v` of patch `j`, each
/// mapped into the global frame by its patch transform.
pub fn score_cross_patch(zu: &[f64], ti: &Transform, zv: &[f64], tj: &Transform) -> f64 {
    sigmoid(dot(&ti.apply_row(zu), &tj.apply_row(zv)))
}
