//! Stochastic block model generator.
//!
//! Pairs are sampled per block pair with geometric skips, so generation
//! costs `O(N + M)` expected time rather than `O(N²)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Largest node count the generator accepts; keeps `N²` comfortably inside `u64`.
pub const MAX_SBM_NODES: usize = 1 << 31;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub n_blocks: usize,
    pub block_size: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

impl SbmConfig {
    pub fn n_nodes(&self) -> usize {
        self.n_blocks * self.block_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.block_size == 0 {
            return Err(Error::Parameter(
                "SBM needs at least one block of at least one node".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return Err(Error::Parameter(format!(
                "probabilities must lie in [0, 1], got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.p_out > self.p_in {
            return Err(Error::Parameter(format!(
                "p_out ({}) must not exceed p_in ({})",
                self.p_out, self.p_in
            )));
        }
        match self.n_blocks.checked_mul(self.block_size) {
            Some(n) if n <= MAX_SBM_NODES => Ok(()),
            _ => Err(Error::Size(format!(
                "{} blocks of {} nodes exceeds the maximum of {MAX_SBM_NODES} nodes",
                self.n_blocks, self.block_size
            ))),
        }
    }

    fn pair_counts(&self) -> (f64, f64) {
        let s = self.block_size as f64;
        let b = self.n_blocks as f64;
        let within = b * s * (s - 1.0) / 2.0;
        let between = b * (b - 1.0) / 2.0 * s * s;
        (within, between)
    }

    /// Closed-form expected number of edges.
    pub fn expected_edges(&self) -> f64 {
        let (within, between) = self.pair_counts();
        within * self.p_in + between * self.p_out
    }

    /// Standard deviation of the edge count (sum of independent Bernoullis).
    pub fn edge_count_std(&self) -> f64 {
        let (within, between) = self.pair_counts();
        (within * self.p_in * (1.0 - self.p_in) + between * self.p_out * (1.0 - self.p_out)).sqrt()
    }
}

/// Calls `f` with each index in `0..total` kept independently with probability `p`.
fn bernoulli_indices<R: Rng>(total: u64, p: f64, rng: &mut R, mut f: impl FnMut(u64)) {
    if total == 0 || p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        (0..total).for_each(f);
        return;
    }
    let log_q = (-p).ln_1p();
    let mut idx: u64 = 0;
    loop {
        let u: f64 = 1.0 - rng.gen::<f64>();
        let skip = (u.ln() / log_q).floor();
        if skip >= (total - idx) as f64 {
            return;
        }
        idx += skip as u64;
        f(idx);
        idx += 1;
        if idx >= total {
            return;
        }
    }
}

/// Calls `f(u, v)`, `u < v`, for every sampled edge in generation order.
fn sample_pairs(cfg: &SbmConfig, mut f: impl FnMut(usize, usize)) {
    let s = cfg.block_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for b in 0..cfg.n_blocks {
        let base = b * s;
        // Upper triangle of the block, row-major: row r holds s - 1 - r pairs.
        let total = (s as u64) * (s as u64 - 1) / 2;
        let (mut row, mut row_start) = (0usize, 0u64);
        bernoulli_indices(total, cfg.p_in, &mut rng, |idx| {
            while idx >= row_start + (s - 1 - row) as u64 {
                row_start += (s - 1 - row) as u64;
                row += 1;
            }
            let col = row + 1 + (idx - row_start) as usize;
            f(base + row, base + col);
        });
    }
    for a in 0..cfg.n_blocks {
        for b in a + 1..cfg.n_blocks {
            let total = (s as u64) * (s as u64);
            bernoulli_indices(total, cfg.p_out, &mut rng, |idx| {
                let i = (idx / s as u64) as usize;
                let j = (idx % s as u64) as usize;
                f(a * s + i, b * s + j);
            });
        }
    }
}

/// Number of edges [`generate_sbm`] would produce, without storing them.
pub fn count_sbm_edges(cfg: &SbmConfig) -> Result<usize> {
    cfg.validate()?;
    let mut m = 0;
    sample_pairs(cfg, |_, _| m += 1);
    Ok(m)
}

/// Samples an SBM graph; features are block one-hot vectors (`F = n_blocks`).
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.n_nodes();
    let s = cfg.block_size;
    let mut edges = Vec::with_capacity(cfg.expected_edges().ceil() as usize + 16);
    sample_pairs(cfg, |u, v| edges.push((u, v)));
    edges.sort_unstable();

    let mut features = Matrix::zeros(n, cfg.n_blocks);
    for v in 0..n {
        features[(v, v / s)] = 1.0;
    }
    Ok(Graph::from_canonical_edges(n, edges, features))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_blocks: usize, block_size: usize, p_in: f64, p_out: f64, seed: u64) -> SbmConfig {
        SbmConfig {
            n_blocks,
            block_size,
            p_in,
            p_out,
            seed,
        }
    }

    #[test]
    fn zero_probabilities_give_empty_graph() {
        let g = generate_sbm(&cfg(5, 7, 0.0, 0.0, 1)).unwrap();
        assert_eq!(g.n_nodes(), 35);
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn certain_within_block_edges_give_two_triangles() {
        let g = generate_sbm(&cfg(2, 3, 1.0, 0.0, 9)).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
        assert_eq!(g.features().row(4), &[0.0, 1.0]);
    }

    #[test]
    fn complete_graph_when_both_probabilities_are_one() {
        let g = generate_sbm(&cfg(3, 4, 1.0, 1.0, 0)).unwrap();
        assert_eq!(g.n_edges(), 12 * 11 / 2);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_sbm(&cfg(10, 30, 0.2, 0.01, 42)).unwrap();
        let b = generate_sbm(&cfg(10, 30, 0.2, 0.01, 42)).unwrap();
        let c = generate_sbm(&cfg(10, 30, 0.2, 0.01, 43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.edges(), c.edges());
    }

    #[test]
    fn edges_respect_block_probabilities() {
        // Within-block only: every edge must stay inside one block.
        let g = generate_sbm(&cfg(8, 25, 0.3, 0.0, 5)).unwrap();
        assert!(g.edges().iter().all(|&(u, v)| u / 25 == v / 25));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(matches!(
            generate_sbm(&cfg(2, 3, 0.1, 0.2, 0)),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            generate_sbm(&cfg(2, 3, 1.5, 0.2, 0)),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            generate_sbm(&cfg(1 << 20, 1 << 12, 0.0, 0.0, 0)),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn expected_edge_count_for_large_config() {
        let c = cfg(100, 1000, 0.02, 1e-4, 0);
        assert!((c.expected_edges() - 1_494_000.0).abs() < 1e-6);
    }

    #[test]
    fn edge_counts_concentrate_over_seeds() {
        for (p_in, p_out) in [(0.2, 1e-3), (0.05, 0.01), (0.5, 0.0)] {
            for seed in 0..10 {
                let c = cfg(20, 40, p_in, p_out, seed);
                let m = generate_sbm(&c).unwrap().n_edges() as f64;
                let z = (m - c.expected_edges()).abs() / c.edge_count_std();
                assert!(z <= 3.0, "p_in={p_in} p_out={p_out} seed={seed}: z={z}");
            }
        }
    }

    #[test]
    fn within_block_pair_frequencies_are_uniform() {
        // Every pair of a 6-node block should appear with frequency ~p.
        let mut counts = vec![vec![0u32; 6]; 6];
        let trials = 4000;
        for seed in 0..trials {
            let g = generate_sbm(&cfg(1, 6, 0.3, 0.0, seed)).unwrap();
            for &(u, v) in g.edges() {
                counts[u][v] += 1;
            }
        }
        let sd = (trials as f64 * 0.3 * 0.7).sqrt();
        for u in 0..6 {
            for v in u + 1..6 {
                let dev = (counts[u][v] as f64 - trials as f64 * 0.3).abs();
                assert!(dev < 4.0 * sd, "pair ({u},{v}) count {}", counts[u][v]);
            }
        }
    }

    #[test]
    fn count_matches_generated_graph() {
        let cfg = SbmConfig { n_blocks: 8, block_size: 40, p_in: 0.3, p_out: 0.01, seed: 12 };
        assert_eq!(count_sbm_edges(&cfg).unwrap(), generate_sbm(&cfg).unwrap().n_edges());
    }
}
