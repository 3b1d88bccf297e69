//! Multi-seed benchmark runner, patch-count ablation, SBM dataset presets and
//! the flat `key = value` benchmark config format.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_embedding, sample_non_edges, split_edges, LinkScores, TEST_FRACTION, VAL_FRACTION};
use crate::graph::{generate_sbm, load_graph, Graph, SbmConfig};
use crate::train::{stream_rng, streams, train, Regime, TrainConfig, TrainReport};

/// One of the four synthetic datasets, with both parameter readings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetPreset {
    pub name: &'static str,
    pub n_blocks: usize,
    pub block_size: usize,
    /// Probabilities as printed in the dataset description.
    pub stated: (f64, f64),
    /// Probabilities whose expected edge count matches the statistics table.
    pub table: (f64, f64),
    /// Edge count reported in the statistics table.
    pub reported_edges: u64,
}

pub const PRESETS: [DatasetPreset; 4] = [
    DatasetPreset {
        name: "sbm-small",
        n_blocks: 100,
        block_size: 100,
        stated: (0.02, 1e-4),
        table: (0.2, 1e-4),
        reported_edges: 104_485,
    },
    DatasetPreset {
        name: "sbm-large-sparse",
        n_blocks: 100,
        block_size: 1000,
        stated: (1e-3, 1e-4),
        table: (1e-3, 1e-5),
        reported_edges: 99_231,
    },
    DatasetPreset {
        name: "sbm-large",
        n_blocks: 100,
        block_size: 1000,
        stated: (0.02, 1e-4),
        table: (0.02, 1e-4),
        reported_edges: 1_493_135,
    },
    DatasetPreset {
        name: "sbm-large-dense",
        n_blocks: 100,
        block_size: 1000,
        stated: (0.1, 0.002),
        table: (0.1, 0.002),
        reported_edges: 14_897_099,
    },
];

/// Which probabilities a preset is generated with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reading {
    /// Reproduces the tabulated edge counts (default).
    #[default]
    Table,
    /// The probabilities as printed.
    Stated,
}

impl FromStr for Reading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Reading::Table),
            "stated" => Ok(Reading::Stated),
            _ => Err(Error::Parameter(format!("unknown reading {s:?}"))),
        }
    }
}

impl fmt::Display for Reading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reading::Table => "table",
            Reading::Stated => "stated",
        })
    }
}

impl DatasetPreset {
    pub fn config(&self, reading: Reading, seed: u64) -> SbmConfig {
        let (p_in, p_out) = match reading {
            Reading::Table => self.table,
            Reading::Stated => self.stated,
        };
        SbmConfig {
            n_blocks: self.n_blocks,
            block_size: self.block_size,
            p_in,
            p_out,
            seed,
        }
    }
}

pub fn preset(name: &str) -> Result<&'static DatasetPreset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
        Error::Parameter(format!("unknown dataset {name:?}; presets are {}", names.join(", ")))
    })
}

/// Expected versus tabulated edge count for one preset under one reading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetReportRow {
    pub dataset: String,
    pub reading: Reading,
    pub p_in: f64,
    pub p_out: f64,
    pub expected_edges: f64,
    pub edge_std: f64,
    pub reported_edges: u64,
    /// `reported - expected`.
    pub delta: f64,
    pub delta_sigmas: f64,
}

/// Both readings of every preset; rows where the readings agree appear once.
pub fn dataset_report() -> Vec<DatasetReportRow> {
    let mut rows = Vec::new();
    for p in &PRESETS {
        for reading in [Reading::Stated, Reading::Table] {
            if reading == Reading::Table && p.table == p.stated {
                continue;
            }
            let cfg = p.config(reading, 0);
            let expected = cfg.expected_edges();
            let std = cfg.edge_count_std();
            let delta = p.reported_edges as f64 - expected;
            rows.push(DatasetReportRow {
                dataset: p.name.to_string(),
                reading,
                p_in: cfg.p_in,
                p_out: cfg.p_out,
                expected_edges: expected,
                edge_std: std,
                reported_edges: p.reported_edges,
                delta,
                delta_sigmas: delta / std,
            });
        }
    }
    rows
}

pub fn write_dataset_report(rows: &[DatasetReportRow], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "dataset",
        "reading",
        "p_in",
        "p_out",
        "expected_edges",
        "edge_std",
        "reported_edges",
        "delta",
        "delta_sigmas",
    ])?;
    for r in rows {
        csv.write_record([
            r.dataset.clone(),
            r.reading.to_string(),
            r.p_in.to_string(),
            r.p_out.to_string(),
            format!("{:.1}", r.expected_edges),
            format!("{:.1}", r.edge_std),
            r.reported_edges.to_string(),
            format!("{:.1}", r.delta),
            format!("{:.2}", r.delta_sigmas),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Which pairs are scored after training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Train without 15% of the edges; score the 10% test edges against as
    /// many non-edges.
    #[default]
    HeldOut,
    /// Train on the whole graph; score all edges against as many non-edges.
    ReconstructFull,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "held-out" => Ok(EvalMode::HeldOut),
            "reconstruct-full" => Ok(EvalMode::ReconstructFull),
            _ => Err(Error::Parameter(format!("unknown evaluation mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub dataset: String,
    pub regimes: Vec<Regime>,
    pub seeds: Vec<u64>,
    /// Shared training settings; `seed` is replaced per run.
    pub train: TrainConfig,
    pub mode: EvalMode,
    /// Patch counts swept by the ablation.
    pub ks: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dataset: "sbm-small".into(),
            regimes: Regime::ALL.to_vec(),
            seeds: (0..10).collect(),
            train: TrainConfig::default(),
            mode: EvalMode::HeldOut,
            ks: (2..=10).collect(),
        }
    }
}

/// One (regime, k, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub regime: Regime,
    pub k: usize,
    pub seed: u64,
    /// Percent.
    pub auc: Option<f64>,
    /// Percent.
    pub ap: Option<f64>,
    pub epoch_time_s: Option<f64>,
    pub error: Option<String>,
}

/// Trains and scores one run. The train graph, partition, initialization
/// and sampling all derive from `cfg.seed`.
pub fn run_once(g: &Graph, regime: Regime, cfg: &TrainConfig, mode: EvalMode) -> Result<(LinkScores, TrainReport)> {
    match mode {
        EvalMode::HeldOut => {
            let split = split_edges(g, TEST_FRACTION, VAL_FRACTION, cfg.seed)?;
            let report = train(regime, &split.train, cfg)?;
            let scores = evaluate_embedding(&report.embedding, &split.test_pos, &split.test_neg)?;
            Ok((scores, report))
        }
        EvalMode::ReconstructFull => {
            let mut rng = stream_rng(cfg.seed, streams::SPLIT, 0);
            let negatives = sample_non_edges(g, g.n_edges(), &mut rng)?;
            let report = train(regime, g, cfg)?;
            let scores = evaluate_embedding(&report.embedding, g.edges(), &negatives)?;
            Ok((scores, report))
        }
    }
}

fn record(g: &Graph, dataset: &str, regime: Regime, cfg: &TrainConfig, mode: EvalMode) -> RunRecord {
    let k = if regime.uses_patches() { cfg.k } else { 1 };
    let mut rec = RunRecord {
        dataset: dataset.to_string(),
        regime,
        k,
        seed: cfg.seed,
        auc: None,
        ap: None,
        epoch_time_s: None,
        error: None,
    };
    match run_once(g, regime, cfg, mode) {
        Ok((scores, report)) => {
            info!(
                "{dataset} {regime} k={k} seed={}: auc {:.2} ap {:.2}, {:.4}s/epoch",
                cfg.seed,
                100.0 * scores.auc,
                100.0 * scores.ap,
                report.mean_epoch_time()
            );
            rec.auc = Some(100.0 * scores.auc);
            rec.ap = Some(100.0 * scores.ap);
            rec.epoch_time_s = Some(report.mean_epoch_time());
        }
        Err(e) => {
            warn!("{dataset} {regime} k={k} seed={} failed: {e}", cfg.seed);
            rec.error = Some(e.to_string());
        }
    }
    rec
}

/// Every configured regime for every seed at `cfg.train.k`.
pub fn run_benchmark(g: &Graph, cfg: &BenchConfig) -> Result<Vec<RunRecord>> {
    cfg.train.validate()?;
    let mut out = Vec::new();
    for &regime in &cfg.regimes {
        for &seed in &cfg.seeds {
            let train = TrainConfig { seed, ..cfg.train.clone() };
            out.push(record(g, &cfg.dataset, regime, &train, cfg.mode));
        }
    }
    Ok(out)
}

/// The benchmark repeated for every `k` in `cfg.ks`. Regimes that do not
/// use patches run once, not once per `k`.
pub fn run_ablation(g: &Graph, cfg: &BenchConfig) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    let whole: Vec<Regime> = cfg.regimes.iter().copied().filter(|r| !r.uses_patches()).collect();
    let patched: Vec<Regime> = cfg.regimes.iter().copied().filter(|r| r.uses_patches()).collect();
    if !whole.is_empty() {
        out.extend(run_benchmark(g, &BenchConfig { regimes: whole, ..cfg.clone() })?);
    }
    for &k in &cfg.ks {
        let train = TrainConfig { k, ..cfg.train.clone() };
        out.extend(run_benchmark(
            g,
            &BenchConfig {
                regimes: patched.clone(),
                train,
                ..cfg.clone()
            },
        )?);
    }
    Ok(out)
}

/// Mean and sample standard deviation over the successful seeds of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub regime: Regime,
    pub k: usize,
    pub runs: usize,
    pub failed: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub ap_mean: f64,
    pub ap_std: f64,
    pub epoch_time_mean: f64,
}

impl Aggregate {
    pub fn complete(&self) -> bool {
        self.failed == 0
    }
}

/// `(mean, sample std)`; NaN mean for no values, zero std for one.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Groups runs by (dataset, regime, k) in first-seen order.
pub fn aggregate(runs: &[RunRecord]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, Regime, usize)> = Vec::new();
    for r in runs {
        let key = (r.dataset.clone(), r.regime, r.k);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(dataset, regime, k)| {
            let cell: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.dataset == dataset && r.regime == regime && r.k == k)
                .collect();
            let ok: Vec<&&RunRecord> = cell.iter().filter(|r| r.error.is_none()).collect();
            let pick = |f: fn(&RunRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            let (auc_mean, auc_std) = mean_std(&pick(|r| r.auc));
            let (ap_mean, ap_std) = mean_std(&pick(|r| r.ap));
            let (epoch_time_mean, _) = mean_std(&pick(|r| r.epoch_time_s));
            Aggregate {
                dataset,
                regime,
                k,
                runs: cell.len(),
                failed: cell.len() - ok.len(),
                auc_mean,
                auc_std,
                ap_mean,
                ap_std,
                epoch_time_mean,
            }
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Per-run CSV; failed runs leave the metric columns empty and fill `error`.
pub fn write_runs_csv(runs: &[RunRecord], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["dataset", "regime", "k", "seed", "auc", "ap", "epoch_time_s", "error"])?;
    for r in runs {
        csv.write_record([
            r.dataset.clone(),
            r.regime.to_string(),
            r.k.to_string(),
            r.seed.to_string(),
            opt(r.auc),
            opt(r.ap),
            opt(r.epoch_time_s),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_aggregate_csv(rows: &[Aggregate], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "dataset",
        "regime",
        "k",
        "runs",
        "failed",
        "complete",
        "auc_mean",
        "auc_std",
        "ap_mean",
        "ap_std",
        "epoch_time_s_mean",
    ])?;
    for a in rows {
        csv.write_record([
            a.dataset.clone(),
            a.regime.to_string(),
            a.k.to_string(),
            a.runs.to_string(),
            a.failed.to_string(),
            a.complete().to_string(),
            a.auc_mean.to_string(),
            a.auc_std.to_string(),
            a.ap_mean.to_string(),
            a.ap_std.to_string(),
            a.epoch_time_mean.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Where the benchmark graph comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum GraphSource {
    Sbm(SbmConfig),
    Files { edges: PathBuf, features: PathBuf },
}

impl GraphSource {
    pub fn load(&self) -> Result<Graph> {
        match self {
            GraphSource::Sbm(cfg) => generate_sbm(cfg),
            GraphSource::Files { edges, features } => Ok(load_graph(edges, features)?.0),
        }
    }
}

/// A parsed benchmark config file.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchFile {
    pub source: GraphSource,
    pub bench: BenchConfig,
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Parameter(format!("bad value {s:?} for {key}"))))
        .collect()
}

/// `a..b` (half-open) or a comma list.
fn parse_range_or_list<T>(key: &str, value: &str) -> Result<Vec<T>>
where
    T: FromStr + Copy,
    std::ops::Range<T>: Iterator<Item = T>,
{
    if let Some((a, b)) = value.split_once("..") {
        let parse = |s: &str| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Parameter(format!("bad range {value:?} for {key}")))
        };
        return Ok((parse(a)?..parse(b)?).collect());
    }
    parse_list(key, value)
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parameter(format!("bad value {value:?} for {key}")))
}

impl BenchFile {
    /// Parses `key = value` lines; `#` starts a comment. Relative graph paths
    /// resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<BenchFile> {
        let mut bench = BenchConfig::default();
        let mut reading = Reading::Table;
        let mut graph_seed = 0u64;
        let mut sbm_override: [Option<f64>; 4] = [None; 4];
        let mut edges = None;
        let mut features = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                line: lineno + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let t = &mut bench.train;
            match key {
                "dataset" => bench.dataset = value.to_string(),
                "reading" => reading = parse_one(key, value)?,
                "graph_seed" => graph_seed = parse_one(key, value)?,
                "n_blocks" => sbm_override[0] = Some(parse_one::<usize>(key, value)? as f64),
                "block_size" => sbm_override[1] = Some(parse_one::<usize>(key, value)? as f64),
                "p_in" => sbm_override[2] = Some(parse_one(key, value)?),
                "p_out" => sbm_override[3] = Some(parse_one(key, value)?),
                "edges" => edges = Some(base.join(value)),
                "features" => features = Some(base.join(value)),
                "regimes" => bench.regimes = parse_list(key, value)?,
                "seeds" => bench.seeds = parse_range_or_list(key, value)?,
                "ks" => bench.ks = parse_range_or_list(key, value)?,
                "mode" => bench.mode = parse_one(key, value)?,
                "epochs" => t.epochs = parse_one(key, value)?,
                "lr" => t.lr = parse_one(key, value)?,
                "k" => t.k = parse_one(key, value)?,
                "min_overlap" => t.min_overlap = parse_one(key, value)?,
                "sync_every" => t.sync_every = parse_one(key, value)?,
                "sample_size" => t.sample_size = Some(parse_one(key, value)?),
                "sync_policy" => t.sync_policy = parse_one(key, value)?,
                _ => {
                    return Err(Error::Format {
                        line: lineno + 1,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        bench.train.validate()?;
        let source = match (edges, features) {
            (Some(edges), Some(features)) => GraphSource::Files { edges, features },
            (None, None) => {
                let mut cfg = if sbm_override.iter().all(Option::is_some) {
                    SbmConfig { n_blocks: 0, block_size: 0, p_in: 0.0, p_out: 0.0, seed: graph_seed }
                } else {
                    preset(&bench.dataset)?.config(reading, graph_seed)
                };
                if let Some(v) = sbm_override[0] {
                    cfg.n_blocks = v as usize;
                }
                if let Some(v) = sbm_override[1] {
                    cfg.block_size = v as usize;
                }
                if let Some(v) = sbm_override[2] {
                    cfg.p_in = v;
                }
                if let Some(v) = sbm_override[3] {
                    cfg.p_out = v;
                }
                cfg.validate()?;
                GraphSource::Sbm(cfg)
            }
            _ => {
                return Err(Error::Parameter(
                    "edges and features must be given together".into(),
                ))
            }
        };
        Ok(BenchFile { source, bench })
    }
}
