//! Held-out edge splits and the AUC / AP link-prediction metrics.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::decoder_score;
use crate::graph::Graph;
use crate::linalg::Matrix;
use crate::train::{stream_rng, streams};

pub const TEST_FRACTION: f64 = 0.10;
pub const VAL_FRACTION: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct EdgeSplit {
    /// The input graph with test and validation edges removed.
    pub train: Graph,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Removes `⌊test_frac·M⌋` and `⌊val_frac·M⌋` uniformly chosen edges and
/// pairs each set with as many distinct sampled non-edges.
pub fn split_edges(g: &Graph, test_frac: f64, val_frac: f64, seed: u64) -> Result<EdgeSplit> {
    if !(0.0..1.0).contains(&test_frac) || !(0.0..1.0).contains(&val_frac) || test_frac + val_frac >= 1.0 {
        return Err(Error::Parameter(format!(
            "split fractions {test_frac} and {val_frac} are invalid"
        )));
    }
    let m = g.n_edges();
    let n_test = (m as f64 * test_frac).floor() as usize;
    let n_val = (m as f64 * val_frac).floor() as usize;
    if n_test == 0 || n_val == 0 {
        return Err(Error::Parameter(format!(
            "{m} edges are too few for non-empty test and validation splits"
        )));
    }
    let mut rng = stream_rng(seed, streams::SPLIT, 0);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let pick = |range: std::ops::Range<usize>| -> Vec<(usize, usize)> {
        let mut v: Vec<_> = order[range].iter().map(|&i| g.edges()[i]).collect();
        v.sort_unstable();
        v
    };
    let test_pos = pick(0..n_test);
    let val_pos = pick(n_test..n_test + n_val);
    let negatives = sample_non_edges(g, n_test + n_val, &mut rng)?;
    let test_neg = negatives[..n_test].to_vec();
    let val_neg = negatives[n_test..].to_vec();
    let removed: Vec<_> = test_pos.iter().chain(&val_pos).copied().collect();
    Ok(EdgeSplit {
        train: g.remove_edges(&removed),
        test_pos,
        test_neg,
        val_pos,
        val_neg,
        seed,
    })
}

/// `count` distinct node pairs `(u, v)`, `u < v`, that are not edges of `g`,
/// drawn uniformly by rejection.
pub fn sample_non_edges<R: Rng>(g: &Graph, count: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let n = g.n_nodes();
    let pairs = n as u128 * n.saturating_sub(1) as u128 / 2;
    let free = pairs - g.n_edges() as u128;
    if (count as u128) > free {
        return Err(Error::Parameter(format!(
            "cannot draw {count} non-edges: the graph has only {free}"
        )));
    }
    let max_attempts = 100 * count + 1000;
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        if attempts == max_attempts {
            return Err(Error::Parameter(format!(
                "gave up drawing non-edges after {max_attempts} attempts ({} of {count} found)",
                out.len()
            )));
        }
        attempts += 1;
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        let pair = (u.min(v), u.max(v));
        if g.has_edge(pair.0, pair.1) || !seen.insert(pair) {
            continue;
        }
        out.push(pair);
    }
    Ok(out)
}

fn check_labels(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("labels must contain both classes".into()));
    }
    Ok((pos, neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half; computed from midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps midranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let positives = idx[i..=j].iter().filter(|&&t| labels[t]).count() as u128;
        twice_rank_sum += twice_mid * positives;
        i = j + 1;
    }
    let p = pos as u128;
    // Twice the number of (positive > negative) wins, ties counted once.
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / 2.0 / (pos as f64 * neg as f64))
}

/// Mean over positives of the precision at that positive's rank, ranks from
/// a stable sort by descending score.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_labels(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut precision = vec![0.0; scores.len()];
    let mut hits = 0usize;
    for (r, &i) in idx.iter().enumerate() {
        if labels[i] {
            hits += 1;
            precision[i] = hits as f64 / (r + 1) as f64;
        }
    }
    // Summed in input order, independent of the sort.
    let total: f64 = labels
        .iter()
        .zip(&precision)
        .filter(|(&l, _)| l)
        .map(|(_, &p)| p)
        .sum();
    Ok(total / pos as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkScores {
    pub auc: f64,
    pub ap: f64,
}

/// Scores positive and negative pairs with the decoder on embedding `z`.
pub fn evaluate_embedding(z: &Matrix, positives: &[(usize, usize)], negatives: &[(usize, usize)]) -> Result<LinkScores> {
    let mut scores = Vec::with_capacity(positives.len() + negatives.len());
    let mut labels = Vec::with_capacity(scores.capacity());
    for (pairs, label) in [(positives, true), (negatives, false)] {
        for &(u, v) in pairs {
            if u >= z.rows() || v >= z.rows() {
                return Err(Error::Contract(format!(
                    "pair ({u}, {v}) outside an embedding of {} rows",
                    z.rows()
                )));
            }
            scores.push(decoder_score(z.row(u), z.row(v)));
            labels.push(label);
        }
    }
    Ok(LinkScores {
        auc: auc(&scores, &labels)?,
        ap: average_precision(&scores, &labels)?,
    })
}
