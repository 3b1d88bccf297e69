//! Two-layer GCN encoder with an inner-product decoder.
//!
//! `Z = Â · relu(Â · X · W1) · W2`, no biases. Gradients are derived by hand
//! (reverse mode through the four products) and checked against finite
//! differences in the tests.

mod adam;
pub mod fastmath;
mod loss;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

pub use adam::AdamState;
pub use loss::{pos_weight, recon_loss, recon_loss_and_grad, sigmoid, softplus};

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency};
use crate::linalg::{dot, Matrix};
use crate::sync::Transform;

pub const HIDDEN_DIM: usize = 32;
pub const EMBEDDING_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct GcnModel {
    pub w1: Matrix,
    pub w2: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl Gradients {
    pub fn zeros_like(model: &GcnModel) -> Gradients {
        Gradients {
            w1: Matrix::zeros(model.w1.rows(), model.w1.cols()),
            w2: Matrix::zeros(model.w2.rows(), model.w2.cols()),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in [(&mut self.w1, &other.w1), (&mut self.w2, &other.w2)] {
            for (x, &y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += scale * y;
            }
        }
    }
}

impl GcnModel {
    /// Glorot-uniform initialization of both layers.
    pub fn glorot<R: Rng>(n_features: usize, hidden: usize, embed: usize, rng: &mut R) -> Self {
        let mut init = |fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-limit..limit))
        };
        let w1 = init(n_features, hidden);
        let w2 = init(hidden, embed);
        GcnModel { w1, w2 }
    }

    pub fn from_weights(w1: Matrix, w2: Matrix) -> Result<Self> {
        if w1.cols() != w2.rows() {
            return Err(Error::Contract(format!(
                "layer shapes {:?} and {:?} do not chain",
                w1.shape(),
                w2.shape()
            )));
        }
        Ok(GcnModel { w1, w2 })
    }

    pub fn n_features(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.w2.cols()
    }

    /// Writes the checkpoint: header `F H1 e`, then the rows of W1 and W2.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{} {} {}", self.n_features(), self.hidden_dim(), self.embedding_dim())?;
        for m in [&self.w1, &self.w2] {
            for i in 0..m.rows() {
                let row: Vec<String> = m.row(i).iter().map(f64::to_string).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
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
        let Some((_, header)) = rows.first() else {
            return Err(Error::Format { line: 1, msg: "empty checkpoint".into() });
        };
        let dims: Vec<usize> = header.iter().map(|&x| x as usize).collect();
        let &[f, h, e] = dims.as_slice() else {
            return Err(Error::Format { line: 1, msg: "header must be \"F H1 e\"".into() });
        };
        if rows.len() != 1 + f + h {
            return Err(Error::Format {
                line: rows.last().map_or(1, |r| r.0),
                msg: format!("expected {} weight rows, found {}", f + h, rows.len() - 1),
            });
        }
        let take = |range: std::ops::Range<usize>, width: usize| -> Result<Matrix> {
            let n = range.len();
            let mut data = Vec::with_capacity(n * width);
            for (line, r) in &rows[range] {
                if r.len() != width {
                    return Err(Error::Format {
                        line: *line,
                        msg: format!("expected {width} values, found {}", r.len()),
                    });
                }
                data.extend_from_slice(r);
            }
            Matrix::from_vec(n, width, data)
        };
        let w1 = take(1..1 + f, h)?;
        let w2 = take(1 + f..1 + f + h, e)?;
        GcnModel::from_weights(w1, w2)
    }
}

/// A graph prepared for repeated encoding: `Â` and the constant product `ÂX`.
#[derive(Clone, Debug)]
pub struct EncoderInput {
    adj: NormalizedAdjacency,
    ax: Matrix,
}

impl EncoderInput {
    pub fn new(g: &Graph) -> Result<Self> {
        let adj = normalize_adjacency(g);
        let ax = adj.spmm(g.features())?;
        Ok(EncoderInput { adj, ax })
    }

    pub fn from_parts(adj: NormalizedAdjacency, x: &Matrix) -> Result<Self> {
        let ax = adj.spmm(x)?;
        Ok(EncoderInput { adj, ax })
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.n()
    }
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    pre: Matrix,
    prop: Matrix,
    pub z: Matrix,
}

/// Encodes a graph: `Z = Â · relu(Â · X · W1) · W2`.
pub fn gcn_forward(model: &GcnModel, adj: &NormalizedAdjacency, x: &Matrix) -> Result<Matrix> {
    let input = EncoderInput::from_parts(adj.clone(), x)?;
    Ok(forward(model, &input)?.z)
}

pub fn forward(model: &GcnModel, input: &EncoderInput) -> Result<ForwardCache> {
    if input.ax.cols() != model.n_features() {
        return Err(Error::Contract(format!(
            "model expects {} features, input has {}",
            model.n_features(),
            input.ax.cols()
        )));
    }
    let pre = input.ax.matmul(&model.w1)?;
    let mut hidden = pre.clone();
    hidden.map_inplace(|v| v.max(0.0));
    let prop = input.adj.spmm(&hidden)?;
    let z = prop.matmul(&model.w2)?;
    Ok(ForwardCache { pre, prop, z })
}

/// Pulls `dL/dZ` back to the weights.
pub fn backward(
    model: &GcnModel,
    input: &EncoderInput,
    cache: &ForwardCache,
    dz: &Matrix,
) -> Result<Gradients> {
    let w2 = cache.prop.t_matmul(dz)?;
    let dprop = dz.matmul_t(&model.w2)?;
    // Â is symmetric, so Âᵀ·dprop = Â·dprop.
    let mut dhidden = input.adj.spmm(&dprop)?;
    for (g, &p) in dhidden.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    let w1 = input.ax.t_matmul(&dhidden)?;
    Ok(Gradients { w1, w2 })
}

/// Sigmoid of the inner product of two embeddings.
pub fn decoder_score(zu: &[f64], zv: &[f64]) -> f64 {
    debug_assert_eq!(zu.len(), zv.len());
    sigmoid(dot(zu, zv))
}

/// Reconstruction loss of `target` under the encoder and its weight gradients.
///
/// When `transform` is given, the decoder sees `Z·S + T`; the transform is a
/// constant for differentiation.
pub fn loss_and_grad(
    model: &GcnModel,
    input: &EncoderInput,
    target: &Graph,
    transform: Option<&Transform>,
) -> Result<(f64, Gradients)> {
    let cache = forward(model, input)?;
    let (loss, dz) = match transform {
        None => recon_loss_and_grad(&cache.z, target)?,
        Some(t) => {
            let aligned = t.apply(&cache.z)?;
            let (loss, dzhat) = recon_loss_and_grad(&aligned, target)?;
            (loss, t.pull_back(&dzhat)?)
        }
    };
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let grads = backward(model, input, &cache, &dz)?;
    Ok((loss, grads))
}
