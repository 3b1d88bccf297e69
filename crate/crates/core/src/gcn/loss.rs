//! Weighted binary cross-entropy reconstruction loss over all ordered node
//! pairs, with target `A + I` and the standard GAE positive weight.
//!
//! The dense part treats every pair as a negative and walks only the upper
//! triangle (logits are symmetric); positives are then corrected sparsely.
//! For a positive pair the term `w·softplus(-x)` equals `w·(softplus(x) - x)`,
//! so the correction is `(w - 1)·softplus(x) - w·x`.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{dot, Matrix};

/// `(N² - M̃) / M̃` with `M̃ = 2M + N`; a target with no negatives gets weight 1.
pub fn pos_weight(n_nodes: usize, n_edges: usize) -> f64 {
    let n2 = (n_nodes as f64) * (n_nodes as f64);
    let pos = 2.0 * n_edges as f64 + n_nodes as f64;
    let w = (n2 - pos) / pos;
    if w > 0.0 {
        w
    } else {
        1.0
    }
}

use super::fastmath::{fma, softplus_sigmoid as softplus_and_sigmoid};

/// Nodes per inner tile; a tile of logits and coefficients stays in L1.
const TILE: usize = 256;
/// Vector width in doubles; node-major buffers are padded by this much.
const LANES: usize = 8;
/// Rows handled together so each loaded column chunk feeds several FMAs.
const ROWS: usize = 4;

/// Sum with eight interleaved accumulators (vectorizes, fixed order).
#[inline(always)]
fn lane_sum(a: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let chunks = a.chunks_exact(LANES);
    let rest = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            acc[l] += c[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for &x in rest {
        s += x;
    }
    s
}

#[inline(always)]
fn reduce(acc: &[f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

#[inline(always)]
fn chunk(row: &[f64], at: usize) -> &[f64; LANES] {
    row[at..at + LANES].try_into().unwrap()
}

#[inline(always)]
fn chunk_mut(row: &mut [f64], at: usize) -> &mut [f64; LANES] {
    (&mut row[at..at + LANES]).try_into().unwrap()
}

struct Tiles {
    logit: [[f64; TILE]; ROWS],
    coef: [[f64; TILE]; ROWS],
    gu: Vec<f64>,
}

/// Strictly-upper pairs between `R` consecutive rows starting at `u0` and
/// every node from `from` on. Returns the summed softplus; gradient
/// contributions go to `grad` (rows) and `dzt` (columns) when given.
#[allow(clippy::too_many_arguments)]
fn block<const R: usize>(
    u0: usize,
    from: usize,
    z: &Matrix,
    zt: &Matrix,
    n: usize,
    scale: f64,
    mut grads: Option<(&mut Matrix, &mut Matrix)>,
    t: &mut Tiles,
) -> f64 {
    let e = z.cols();
    let zu: [&[f64]; R] = std::array::from_fn(|r| z.row(u0 + r));
    t.gu[..R * e].fill(0.0);
    let mut sum = 0.0;
    let mut start = from;
    while start < n {
        let len = (n - start).min(TILE);
        let padded = len.div_ceil(LANES) * LANES;
        for at in (0..padded).step_by(LANES) {
            let mut acc = [[0.0; LANES]; R];
            for d in 0..e {
                let col = chunk(zt.row(d), start + at);
                for r in 0..R {
                    let a = zu[r][d];
                    for l in 0..LANES {
                        acc[r][l] = fma(a, col[l], acc[r][l]);
                    }
                }
            }
            for r in 0..R {
                *chunk_mut(&mut t.logit[r], at) = acc[r];
            }
        }
        for r in 0..R {
            let (x, c) = (&mut t.logit[r][..padded], &mut t.coef[r][..padded]);
            for (x, c) in x.iter_mut().zip(c.iter_mut()) {
                let (sp, sig) = softplus_and_sigmoid(*x);
                *x = sp;
                *c = scale * sig;
            }
            sum += lane_sum(&x[..len]);
            c[len..].fill(0.0);
        }
        if let Some((_, dzt)) = grads.as_mut() {
            for d in 0..e {
                let row = zt.row(d);
                let mut acc = [[0.0; LANES]; R];
                for at in (0..padded).step_by(LANES) {
                    let col = chunk(row, start + at);
                    for r in 0..R {
                        let c = chunk(&t.coef[r], at);
                        for l in 0..LANES {
                            acc[r][l] = fma(c[l], col[l], acc[r][l]);
                        }
                    }
                }
                for r in 0..R {
                    t.gu[r * e + d] += reduce(&acc[r]);
                }
                let a: [f64; R] = std::array::from_fn(|r| zu[r][d]);
                let out = dzt.row_mut(d);
                for at in (0..padded).step_by(LANES) {
                    let mut v = *chunk(out, start + at);
                    for r in 0..R {
                        let c = chunk(&t.coef[r], at);
                        for l in 0..LANES {
                            v[l] = fma(c[l], a[r], v[l]);
                        }
                    }
                    *chunk_mut(out, start + at) = v;
                }
            }
        }
        start += len;
    }
    if let Some((grad, _)) = grads {
        for r in 0..R {
            for (g, &v) in grad.row_mut(u0 + r).iter_mut().zip(&t.gu[r * e..(r + 1) * e]) {
                *g += v;
            }
        }
    }
    sum
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    softplus_and_sigmoid(x).0
}

pub fn sigmoid(x: f64) -> f64 {
    softplus_and_sigmoid(x).1
}

fn check(z: &Matrix, target: &Graph) -> Result<()> {
    if z.rows() != target.n_nodes() {
        return Err(Error::Contract(format!(
            "embedding has {} rows but the target graph has {} nodes",
            z.rows(),
            target.n_nodes()
        )));
    }
    Ok(())
}

/// Reconstruction loss of embedding `z` against `target`.
pub fn recon_loss(z: &Matrix, target: &Graph) -> Result<f64> {
    check(z, target)?;
    Ok(kernel(z, target, false).0)
}

/// Reconstruction loss and its gradient with respect to `z`.
pub fn recon_loss_and_grad(z: &Matrix, target: &Graph) -> Result<(f64, Matrix)> {
    check(z, target)?;
    let (loss, grad) = kernel(z, target, true);
    Ok((loss, grad.expect("gradient requested")))
}

fn kernel(z: &Matrix, target: &Graph, want_grad: bool) -> (f64, Option<Matrix>) {
    let n = z.rows();
    let e = z.cols();
    if n == 0 {
        return (0.0, want_grad.then(|| Matrix::zeros(0, e)));
    }
    let inv_n2 = 1.0 / ((n as f64) * (n as f64));
    let pw = pos_weight(n, target.n_edges());
    let scale = 2.0 * inv_n2;

    // Node-major copies padded to whole vector chunks; padding columns are
    // zero and get zero coefficients.
    let zt = Matrix::from_fn(e, n + LANES, |d, v| if v < n { z[(v, d)] } else { 0.0 });
    let mut dzt = if want_grad { Matrix::zeros(e, n + LANES) } else { Matrix::zeros(0, 0) };
    let mut grad = if want_grad { Matrix::zeros(n, e) } else { Matrix::zeros(0, 0) };
    let mut tiles = Tiles {
        logit: [[0.0; TILE]; ROWS],
        coef: [[0.0; TILE]; ROWS],
        gu: vec![0.0; ROWS * e],
    };
    let mut diag = 0.0;
    let mut off = 0.0;

    let mut u0 = 0;
    while u0 < n {
        let rows = (n - u0).min(ROWS);
        // Pairs inside the row group, diagonal included.
        for u in u0..u0 + rows {
            for v in u..u0 + rows {
                let (sp, sig) = softplus_and_sigmoid(dot(z.row(u), z.row(v)));
                let c = scale * sig;
                if u == v {
                    diag += sp;
                } else {
                    off += sp;
                }
                if want_grad {
                    for d in 0..e {
                        let (a, b) = (z[(u, d)], z[(v, d)]);
                        grad[(u, d)] += c * b;
                        if u != v {
                            grad[(v, d)] += c * a;
                        }
                    }
                }
            }
        }
        let from = u0 + rows;
        if rows == ROWS {
            let grads = want_grad.then_some((&mut grad, &mut dzt));
            off += block::<ROWS>(u0, from, z, &zt, n, scale, grads, &mut tiles);
        } else {
            for u in u0..from {
                let grads = want_grad.then_some((&mut grad, &mut dzt));
                off += block::<1>(u, from, z, &zt, n, scale, grads, &mut tiles);
            }
        }
        u0 = from;
    }
    // Off-diagonal pairs stand for both orientations.
    let mut total = 2.0 * off + diag;

    // Positive pairs: the diagonal (self-loops) and both orientations of each edge.
    let mut correction = 0.0;
    let mut correct = |u: usize, v: usize, mult: f64, grad: &mut Matrix| {
        let x = dot(z.row(u), z.row(v));
        let (sp, sig) = softplus_and_sigmoid(x);
        correction += mult * ((pw - 1.0) * sp - pw * x);
        if want_grad {
            let c = 2.0 * inv_n2 * ((pw - 1.0) * sig - pw);
            if u == v {
                for d in 0..e {
                    grad[(u, d)] += c * z[(u, d)];
                }
            } else {
                for d in 0..e {
                    let (zu, zv) = (z[(u, d)], z[(v, d)]);
                    grad[(u, d)] += c * zv;
                    grad[(v, d)] += c * zu;
                }
            }
        }
    };
    for u in 0..n {
        correct(u, u, 1.0, &mut grad);
    }
    for &(u, v) in target.edges() {
        correct(u, v, 2.0, &mut grad);
    }
    total += correction;

    let loss = total * inv_n2;
    if !want_grad {
        return (loss, None);
    }
    for u in 0..n {
        for d in 0..e {
            grad[(u, d)] += dzt[(d, u)];
        }
    }
    (loss, Some(grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct double loop over ordered pairs, straight from the definition.
    fn brute_force(z: &Matrix, g: &Graph) -> f64 {
        let n = z.rows();
        let pos = (2 * g.n_edges() + n) as f64;
        let n2 = (n * n) as f64;
        let mut pw = (n2 - pos) / pos;
        if pw == 0.0 {
            pw = 1.0;
        }
        let mut sum = 0.0;
        for u in 0..n {
            for v in 0..n {
                let x: f64 = (0..z.cols()).map(|d| z[(u, d)] * z[(v, d)]).sum();
                let p = 1.0 / (1.0 + (-x).exp());
                let positive = u == v || g.has_edge(u, v);
                sum += if positive { -pw * p.ln() } else { -(1.0 - p).ln() };
            }
        }
        sum / n2
    }

    fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        Graph::without_features(n, edges).unwrap()
    }

    fn random_matrix(r: usize, c: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| scale * (2.0 * rng.gen::<f64>() - 1.0))
    }

    #[test]
    fn zero_embedding_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(9, 0.3, &mut rng);
        let n2 = 81.0;
        let pos = (2 * g.n_edges() + 9) as f64;
        let expect = 2.0 * std::f64::consts::LN_2 * (n2 - pos) / n2;
        let got = recon_loss(&Matrix::zeros(9, 4), &g).unwrap();
        assert!((got - expect).abs() < 1e-14, "{got} vs {expect}");
    }

    #[test]
    fn single_node_uses_degenerate_weight() {
        let g = Graph::without_features(1, []).unwrap();
        let z = Matrix::from_rows(&[vec![0.7, -0.2]]).unwrap();
        let l = 0.49 + 0.04;
        let got = recon_loss(&z, &g).unwrap();
        assert!((got - softplus(-l)).abs() < 1e-15);
        assert_eq!(pos_weight(1, 0), 1.0);
    }

    #[test]
    fn matches_brute_force_on_small_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let n = 1 + trial % 8;
            let g = random_graph(n, 0.4, &mut rng);
            let z = random_matrix(n, 3, 1.5, &mut rng);
            let got = recon_loss(&z, &g).unwrap();
            let expect = brute_force(&z, &g);
            assert!((got - expect).abs() <= 1e-12, "n={n}: {got} vs {expect}");
        }
    }

    #[test]
    fn matches_brute_force_across_tiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [263, 301] {
            let g = random_graph(n, 0.02, &mut rng);
            let z = random_matrix(n, 5, 0.8, &mut rng);
            let (got, grad) = recon_loss_and_grad(&z, &g).unwrap();
            let expect = brute_force(&z, &g);
            assert!((got - expect).abs() <= 1e-12, "n={n}: {got} vs {expect}");
            // Gradient of a sum over pairs, taken directly.
            let pw = pos_weight(n, g.n_edges());
            let n2 = (n * n) as f64;
            for u in [0, 1, n / 2, n - 1] {
                for d in 0..5 {
                    let mut want = 0.0;
                    for v in 0..n {
                        let x = dot(z.row(u), z.row(v));
                        let p = sigmoid(x);
                        let dl = if u == v || g.has_edge(u, v) { -pw * (1.0 - p) } else { p };
                        want += 2.0 * dl * z[(v, d)] / n2;
                    }
                    assert!((want - grad[(u, d)]).abs() < 1e-13, "({u},{d})");
                }
            }
        }
    }

    #[test]
    fn six_node_graph_matches_brute_force() {
        let g = Graph::without_features(6, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (2, 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = random_matrix(6, 4, 1.0, &mut rng);
        let got = recon_loss(&z, &g).unwrap();
        assert!((got - brute_force(&z, &g)).abs() <= 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = random_graph(12, 0.3, &mut rng);
        let z = random_matrix(12, 3, 1.0, &mut rng);
        let (_, grad) = recon_loss_and_grad(&z, &g).unwrap();
        let h = 1e-6;
        for u in 0..12 {
            for d in 0..3 {
                let mut zp = z.clone();
                zp[(u, d)] += h;
                let mut zm = z.clone();
                zm[(u, d)] -= h;
                let fd = (brute_force(&zp, &g) - brute_force(&zm, &g)) / (2.0 * h);
                assert!((fd - grad[(u, d)]).abs() < 1e-8, "({u},{d}): {fd} vs {}", grad[(u, d)]);
            }
        }
    }

    #[test]
    fn stable_for_large_logits() {
        let g = Graph::without_features(2, [(0, 1)]).unwrap();
        let z = Matrix::from_rows(&[vec![40.0], vec![-40.0]]).unwrap();
        let (loss, grad) = recon_loss_and_grad(&z, &g).unwrap();
        assert!(loss.is_finite() && grad.is_finite());
        assert!(loss > 100.0);
    }

    #[test]
    fn row_mismatch_is_contract_violation() {
        let g = Graph::without_features(3, []).unwrap();
        assert!(matches!(
            recon_loss(&Matrix::zeros(2, 1), &g),
            Err(Error::Contract(_))
        ));
    }
}
