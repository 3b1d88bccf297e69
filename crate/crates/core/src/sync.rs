//! Synchronization of patch embeddings into one global frame.
//!
//! Embeddings are row vectors. A patch transform maps a local row `z` to
//! `z·S + T`. Pairwise rotations follow the column convention
//! `z⁽ⁱ⁾ ≈ R_ij z⁽ʲ⁾`, so consistent estimates satisfy `R_ij = S_i S_jᵀ`.

use std::io::{BufRead, Write};

use log::{debug, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::partition::{PatchGraph, PatchSet};

/// Rigid motion of one patch: orthogonal `rotation` and row `translation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rotation: Matrix,
    pub translation: Vec<f64>,
}

impl Transform {
    pub fn identity(dim: usize) -> Self {
        Transform {
            rotation: Matrix::identity(dim),
            translation: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    /// `Z·S + 1Tᵀ`.
    pub fn apply(&self, z: &Matrix) -> Result<Matrix> {
        let mut out = z.matmul(&self.rotation)?;
        out.add_row_vector(&self.translation);
        Ok(out)
    }

    pub fn apply_row(&self, z: &[f64]) -> Vec<f64> {
        let e = self.dim();
        let mut out = self.translation.clone();
        for (d, &a) in z.iter().enumerate() {
            for (o, &s) in out.iter_mut().zip(self.rotation.row(d)) {
                *o += a * s;
            }
        }
        debug_assert_eq!(out.len(), e);
        out
    }

    /// Gradient with respect to `Z` given the gradient with respect to `Z·S + T`.
    pub fn pull_back(&self, grad: &Matrix) -> Result<Matrix> {
        grad.matmul_t(&self.rotation)
    }

    /// `max |SᵀS - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let sts = self.rotation.t_matmul(&self.rotation).expect("square rotation");
        sts.max_abs_diff(&Matrix::identity(self.dim()))
    }
}

/// Writes one block per patch: the `e × e` rotation rows, then the translation.
pub fn write_transforms(transforms: &[Transform], w: &mut impl Write) -> std::io::Result<()> {
    let e = transforms.first().map_or(0, Transform::dim);
    writeln!(w, "{} {}", transforms.len(), e)?;
    for t in transforms {
        for i in 0..e {
            let row: Vec<String> = t.rotation.row(i).iter().map(f64::to_string).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        let row: Vec<String> = t.translation.iter().map(f64::to_string).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_transforms(reader: impl BufRead) -> Result<Vec<Transform>> {
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Format {
                    line: i + 1,
                    msg: format!("cannot parse {t:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((i + 1, vals));
    }
    let Some(((_, header), body)) = rows.split_first() else {
        return Err(Error::Format { line: 1, msg: "empty transform file".into() });
    };
    let &[k, e] = header.as_slice() else {
        return Err(Error::Format { line: 1, msg: "header must be \"k e\"".into() });
    };
    let (k, e) = (k as usize, e as usize);
    if body.len() != k * (e + 1) {
        return Err(Error::Format {
            line: rows.last().map_or(1, |r| r.0),
            msg: format!("expected {} rows, found {}", k * (e + 1), body.len()),
        });
    }
    if let Some((line, r)) = body.iter().find(|(_, r)| r.len() != e) {
        return Err(Error::Format {
            line: *line,
            msg: format!("expected {e} values, found {}", r.len()),
        });
    }
    Ok(body
        .chunks(e + 1)
        .map(|block| Transform {
            rotation: Matrix::from_fn(e, e, |i, j| block[i].1[j]),
            translation: block[e].1.clone(),
        })
        .collect())
}

/// Orthogonal polar factor of a square matrix, with `σ_min / σ_max`.
///
/// Well-conditioned input goes through the Newton iteration
/// `X ← (X + X⁻ᵀ) / 2`, which converges to full precision. Near-singular
/// input, where the factor is not unique anyway, takes `U Vᵀ` from the SVD.
pub fn polar_factor(m: &Matrix) -> (Matrix, f64) {
    let a = m.to_nalgebra();
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if ratio >= NEWTON_MIN_RATIO {
        if let Some(x) = newton_polar(&a) {
            return (Matrix::from_nalgebra(&x), ratio);
        }
    }
    let svd = a.svd(true, true);
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("Vᵀ requested");
    (Matrix::from_nalgebra(&(u * v_t)), ratio)
}

const NEWTON_MIN_RATIO: f64 = 1e-8;
const NEWTON_MAX_ITERATIONS: usize = 100;

fn newton_polar(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut x = a.clone();
    for _ in 0..NEWTON_MAX_ITERATIONS {
        let inv_t = x.clone().try_inverse()?.transpose();
        let next = (&x + inv_t) * 0.5;
        // Quadratic convergence: once a step is this small the error is
        // at rounding level.
        let step = (&next - &x).amax();
        x = next;
        if step <= 1e-10 {
            let inv_t = x.clone().try_inverse()?.transpose();
            return Some((&x + inv_t) * 0.5);
        }
    }
    None
}

const RANK_TOL: f64 = 1e-10;

/// Orthogonal `R` minimizing `Σ_u ‖z_u⁽ⁱ⁾ - R z_u⁽ʲ⁾‖²` over the rows of the
/// two overlap matrices, via the polar factor of `M = Σ_u z_u⁽ⁱ⁾ z_u⁽ʲ⁾ᵀ`.
pub fn pairwise_rotation(zi: &Matrix, zj: &Matrix) -> Result<Matrix> {
    if zi.shape() != zj.shape() {
        return Err(Error::Contract(format!(
            "overlap embeddings have shapes {:?} and {:?}",
            zi.shape(),
            zj.shape()
        )));
    }
    let m = zi.t_matmul(zj)?;
    rotation_from_cross_covariance(&m)
}

/// Polar factor of a cross-covariance matrix, rejecting rank-deficient input.
pub fn rotation_from_cross_covariance(m: &Matrix) -> Result<Matrix> {
    let (r, ratio) = polar_factor(m);
    if !(ratio >= RANK_TOL) {
        return Err(Error::DegenerateOverlap(0, 0, ratio));
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseRotation {
    pub i: usize,
    pub j: usize,
    /// Maps frame `j` into frame `i` (column convention); `R_ji = R_ijᵀ`.
    pub rotation: Matrix,
    pub weight: f64,
}

fn centered(m: &Matrix) -> Matrix {
    let mut mean = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (a, &x) in mean.iter_mut().zip(m.row(i)) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a = -*a / m.rows() as f64);
    let mut out = m.clone();
    out.add_row_vector(&mean);
    out
}

fn overlap_rows(patches: &PatchSet, p: usize, z: &Matrix, overlap: &[usize]) -> Matrix {
    let patch = &patches.patches[p];
    let idx: Vec<usize> = overlap
        .iter()
        .map(|&u| patch.local_index(u).expect("overlap node belongs to the patch"))
        .collect();
    z.select_rows(&idx)
}

/// How synchronization treats ill-posed inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncPolicy {
    /// Rank-deficient overlaps and an unconverged rotation solve are errors.
    #[default]
    Strict,
    /// A rank-deficient overlap still gets its SVD polar factor (a Procrustes
    /// minimizer, just not a unique one), logged at debug level.
    Lenient,
}

impl std::str::FromStr for SyncPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(SyncPolicy::Strict),
            "lenient" => Ok(SyncPolicy::Lenient),
            _ => Err(Error::Parameter(format!("unknown sync policy {s:?}"))),
        }
    }
}

/// Procrustes rotation for every patch-graph edge, estimated on the centered
/// overlap embeddings and weighted by the overlap size.
pub fn estimate_rotations(
    patches: &PatchSet,
    graph: &PatchGraph,
    embeddings: &[Matrix],
) -> Result<Vec<PairwiseRotation>> {
    estimate_rotations_with(patches, graph, embeddings, SyncPolicy::Strict)
}

pub fn estimate_rotations_with(
    patches: &PatchSet,
    graph: &PatchGraph,
    embeddings: &[Matrix],
    policy: SyncPolicy,
) -> Result<Vec<PairwiseRotation>> {
    graph
        .edges
        .iter()
        .map(|e| {
            let zi = centered(&overlap_rows(patches, e.i, &embeddings[e.i], &e.overlap));
            let zj = centered(&overlap_rows(patches, e.j, &embeddings[e.j], &e.overlap));
            let rotation = match policy {
                SyncPolicy::Strict => pairwise_rotation(&zi, &zj).map_err(|err| match err {
                    Error::DegenerateOverlap(_, _, r) => Error::DegenerateOverlap(e.i, e.j, r),
                    other => other,
                })?,
                SyncPolicy::Lenient => {
                    let (r, ratio) = polar_factor(&zi.t_matmul(&zj)?);
                    if !(ratio >= RANK_TOL) {
                        debug!("patches {} and {}: rank-deficient overlap (ratio {ratio:e})", e.i, e.j);
                    }
                    r
                }
            };
            Ok(PairwiseRotation {
                i: e.i,
                j: e.j,
                rotation,
                weight: e.overlap.len() as f64,
            })
        })
        .collect()
}

const EIGEN_MAX_ITERATIONS: usize = 10_000;

/// Global rotations `Ŝ_1..Ŝ_k` from pairwise estimates.
///
/// Solves `S = R̃S` with `R̃_ij = w_ij R_ij / Σ_l w_il` directly: the top `e`
/// eigenvectors `U` of the symmetric `D^{-1/2} W D^{-1/2}` give the stacked
/// `S = D^{-1/2} U`, and each block is projected to its polar factor. Power
/// iteration from identity blocks misses directions orthogonal to `Σ_i Ŝ_iᵀ`
/// (two patches related by a reflection, for one), and projecting every
/// block at every step has spurious twisted fixed points on cyclic patch
/// graphs.
pub fn solve_rotations(k: usize, dim: usize, rotations: &[PairwiseRotation]) -> Result<Vec<Matrix>> {
    let n = k * dim;
    let mut w = DMatrix::<f64>::zeros(n, n);
    let mut wsum = vec![0.0; k];
    for r in rotations {
        if r.i >= k || r.j >= k || r.i == r.j {
            return Err(Error::Contract(format!("bad patch pair ({}, {})", r.i, r.j)));
        }
        let m = r.rotation.to_nalgebra();
        let mut ij = w.view_mut((r.i * dim, r.j * dim), (dim, dim));
        ij += r.weight * &m;
        let mut ji = w.view_mut((r.j * dim, r.i * dim), (dim, dim));
        ji += r.weight * m.transpose();
        wsum[r.i] += r.weight;
        wsum[r.j] += r.weight;
    }
    let scale: Vec<f64> = wsum.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    for a in 0..n {
        for b in 0..n {
            w[(a, b)] *= scale[a / dim] * scale[b / dim];
        }
    }
    let eig = w
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITERATIONS)
        .ok_or(Error::NonConvergence { iterations: EIGEN_MAX_ITERATIONS, residual: f64::NAN })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    if n > dim {
        let (last, next) = (eig.eigenvalues[order[dim - 1]], eig.eigenvalues[order[dim]]);
        if last - next < 1e-12 {
            debug!("rotation eigenproblem has no gap at e ({last:e} vs {next:e})");
        }
    }
    let blocks: Vec<DMatrix<f64>> = (0..k)
        .map(|i| {
            if wsum[i] == 0.0 {
                return DMatrix::identity(dim, dim);
            }
            let block = DMatrix::from_fn(dim, dim, |a, c| eig.eigenvectors[(i * dim + a, order[c])]);
            polar_factor(&Matrix::from_nalgebra(&block)).0.to_nalgebra()
        })
        .collect();
    // Fix the global rotation so the blocks sit as close to identity as
    // possible; patch 0 is the anchor when that is ill-defined.
    let sum = blocks.iter().fold(DMatrix::zeros(dim, dim), |acc, b| acc + b.transpose());
    let (g, ratio) = polar_factor(&Matrix::from_nalgebra(&sum));
    let g = if ratio >= RANK_TOL { g.to_nalgebra() } else { blocks[0].transpose() };
    Ok(blocks.iter().map(|b| Matrix::from_nalgebra(&(b * &g))).collect())
}

/// Incidence matrix of the patch graph (as its edge list) and the
/// right-hand side `C`, one row per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceSystem {
    pub k: usize,
    /// Row `r` of `B` has `+1` at `edges[r].0` and `-1` at `edges[r].1`.
    pub edges: Vec<(usize, usize)>,
    /// `|E_P| × e`.
    pub c: Matrix,
}

impl IncidenceSystem {
    pub fn dense_b(&self) -> Matrix {
        let mut b = Matrix::zeros(self.edges.len(), self.k);
        for (r, &(i, j)) in self.edges.iter().enumerate() {
            b[(r, i)] = 1.0;
            b[(r, j)] = -1.0;
        }
        b
    }

    /// `‖B T - C‖²_F`.
    pub fn residual(&self, t: &Matrix) -> f64 {
        let mut sum = 0.0;
        for (r, &(i, j)) in self.edges.iter().enumerate() {
            for d in 0..self.c.cols() {
                let x = t[(i, d)] - t[(j, d)] - self.c[(r, d)];
                sum += x * x;
            }
        }
        sum
    }
}

/// Builds the translation system from rotated patch embeddings.
///
/// Row `(i, j)` of `C` is the mean over the overlap of `ẑ⁽ʲ⁾ - ẑ⁽ⁱ⁾`, so the
/// solution satisfies `ẑ⁽ⁱ⁾ + T_i ≈ ẑ⁽ʲ⁾ + T_j`.
pub fn translation_system(patches: &PatchSet, graph: &PatchGraph, rotated: &[Matrix]) -> IncidenceSystem {
    let e = rotated.first().map_or(0, Matrix::cols);
    let mut c = Matrix::zeros(graph.edges.len(), e);
    let mut edges = Vec::with_capacity(graph.edges.len());
    for (r, pe) in graph.edges.iter().enumerate() {
        let zi = overlap_rows(patches, pe.i, &rotated[pe.i], &pe.overlap);
        let zj = overlap_rows(patches, pe.j, &rotated[pe.j], &pe.overlap);
        let row = c.row_mut(r);
        for u in 0..zi.rows() {
            for ((acc, &a), &b) in row.iter_mut().zip(zi.row(u)).zip(zj.row(u)) {
                *acc += b - a;
            }
        }
        let inv = 1.0 / pe.overlap.len() as f64;
        row.iter_mut().for_each(|x| *x *= inv);
        edges.push((pe.i, pe.j));
    }
    IncidenceSystem {
        k: graph.k,
        edges,
        c,
    }
}

pub const CG_MAX_ITERATIONS: usize = 200;
pub const CG_TOLERANCE: f64 = 1e-10;

/// Least-norm minimizer of `‖B T - C‖²` (rows of `T` sum to zero), by
/// conjugate gradients on `BᵀB T = BᵀC`.
pub fn solve_translations(sys: &IncidenceSystem) -> Result<Matrix> {
    let k = sys.k;
    let e = sys.c.cols();
    let pairs: Vec<(usize, usize)> = sys.edges.clone();
    if k > 1 && !is_connected(k, &pairs) {
        return Err(Error::Contract("translation system over a disconnected patch graph".into()));
    }
    let laplacian = |x: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for &(i, j) in &pairs {
            let diff = x[i] - x[j];
            out[i] += diff;
            out[j] -= diff;
        }
    };
    let mut t = Matrix::zeros(k, e);
    for d in 0..e {
        let mut b = vec![0.0; k];
        for (r, &(i, j)) in pairs.iter().enumerate() {
            b[i] += sys.c[(r, d)];
            b[j] -= sys.c[(r, d)];
        }
        let b_norm = dot(&b, &b).sqrt();
        if b_norm == 0.0 {
            continue;
        }
        let mut x = vec![0.0; k];
        let mut r = b.clone();
        let mut p = r.clone();
        let mut ap = vec![0.0; k];
        let mut rr = dot(&r, &r);
        let mut converged = false;
        for _ in 0..CG_MAX_ITERATIONS {
            laplacian(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                converged = true;
                break;
            }
            let alpha = rr / pap;
            for i in 0..k {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            if rr_new.sqrt() <= CG_TOLERANCE * b_norm {
                converged = true;
                break;
            }
            let beta = rr_new / rr;
            for i in 0..k {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
        }
        if !converged {
            warn!("translation CG hit {CG_MAX_ITERATIONS} iterations in column {d}");
        }
        let mean = x.iter().sum::<f64>() / k as f64;
        for i in 0..k {
            t[(i, d)] = x[i] - mean;
        }
    }
    Ok(t)
}

fn is_connected(k: usize, pairs: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); k];
    for &(i, j) in pairs {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; k];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Rotates and translates each patch, then averages every node over the
/// patches that contain it.
pub fn align_and_average(patches: &PatchSet, embeddings: &[Matrix], transforms: &[Transform]) -> Result<Matrix> {
    if embeddings.len() != patches.k() || transforms.len() != patches.k() {
        return Err(Error::Contract(format!(
            "{} patches but {} embeddings and {} transforms",
            patches.k(),
            embeddings.len(),
            transforms.len()
        )));
    }
    let e = transforms.first().map_or(0, Transform::dim);
    let mut out = Matrix::zeros(patches.n_nodes(), e);
    for (p, (z, t)) in embeddings.iter().zip(transforms).enumerate() {
        let aligned = t.apply(z)?;
        for (local, &u) in patches.patches[p].nodes.iter().enumerate() {
            for (o, &x) in out.row_mut(u).iter_mut().zip(aligned.row(local)) {
                *o += x;
            }
        }
    }
    for (u, members) in patches.membership.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Contract(format!("node {u} is in no patch")));
        }
        let inv = 1.0 / members.len() as f64;
        out.row_mut(u).iter_mut().for_each(|x| *x *= inv);
    }
    Ok(out)
}

/// Full synchronization: pairwise rotations, global rotations, translations.
pub fn synchronize(patches: &PatchSet, graph: &PatchGraph, embeddings: &[Matrix]) -> Result<Vec<Transform>> {
    synchronize_with(patches, graph, embeddings, SyncPolicy::Strict)
}

pub fn synchronize_with(
    patches: &PatchSet,
    graph: &PatchGraph,
    embeddings: &[Matrix],
    policy: SyncPolicy,
) -> Result<Vec<Transform>> {
    let k = patches.k();
    let dim = embeddings.first().map_or(0, Matrix::cols);
    if embeddings.len() != k {
        return Err(Error::Contract(format!("{k} patches but {} embeddings", embeddings.len())));
    }
    if k == 1 {
        return Ok(vec![Transform::identity(dim)]);
    }
    if !graph.is_connected() {
        return Err(Error::Contract("patch graph is disconnected".into()));
    }
    let pairwise = estimate_rotations_with(patches, graph, embeddings, policy)?;
    let rotations = solve_rotations(k, dim, &pairwise)?;
    let rotated = embeddings
        .iter()
        .zip(&rotations)
        .map(|(z, s)| z.matmul(s))
        .collect::<Result<Vec<_>>>()?;
    let system = translation_system(patches, graph, &rotated);
    let t = solve_translations(&system)?;
    Ok(rotations
        .into_iter()
        .enumerate()
        .map(|(j, rotation)| Transform {
            rotation,
            translation: t.row(j).to_vec(),
        })
        .collect())
}
