//! Undirected attributed graphs in compressed sparse form.

mod io;
mod sbm;

pub use io::{load_graph, load_matrix, save_graph, save_matrix, LoadStats};
pub use sbm::{count_sbm_edges, generate_sbm, SbmConfig, MAX_SBM_NODES};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Simple undirected graph with dense node ids `0..n` and a feature row per node.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted; neighbor lists
/// are sorted as well. Self-loops are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    features: Matrix,
}

impl Graph {
    /// Builds a graph, canonicalizing edge orientation and removing duplicates.
    ///
    /// Self-loops and out-of-range endpoints are rejected.
    pub fn new(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
    ) -> Result<Graph> {
        if features.rows() != n_nodes {
            return Err(Error::Contract(format!(
                "feature matrix has {} rows for {n_nodes} nodes",
                features.rows()
            )));
        }
        let mut list = Vec::new();
        for (u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Contract(format!(
                    "edge ({u}, {v}) out of range for {n_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::Contract(format!("self-loop on node {u}")));
            }
            list.push((u.min(v), u.max(v)));
        }
        list.sort_unstable();
        list.dedup();
        Ok(Graph::from_canonical_edges(n_nodes, list, features))
    }

    /// Graph with an `n × 0` feature matrix.
    pub fn without_features(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Graph> {
        Graph::new(n_nodes, edges, Matrix::zeros(n_nodes, 0))
    }

    // `edges` must already be sorted, deduplicated and oriented `u < v`.
    fn from_canonical_edges(n_nodes: usize, edges: Vec<(usize, usize)>, features: Matrix) -> Graph {
        let mut degree = vec![0usize; n_nodes];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n_nodes].to_vec();
        let mut targets = vec![0usize; 2 * edges.len()];
        // Sorted edges give sorted neighbor lists: the lower neighbors of a node
        // arrive (as (w, u), w < u) before the upper ones, both ascending.
        for &(u, v) in &edges {
            targets[fill[u]] = v;
            fill[u] += 1;
            targets[fill[v]] = u;
            fill[v] += 1;
        }
        Graph {
            n_nodes,
            edges,
            offsets,
            targets,
            features,
        }
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// Canonical edge list, `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }

    #[inline]
    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n_nodes && v < self.n_nodes && self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Subgraph induced by `nodes`; local id `i` corresponds to `nodes[i]`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Graph {
        let mut local = std::collections::HashMap::with_capacity(nodes.len());
        for (i, &u) in nodes.iter().enumerate() {
            local.insert(u, i);
        }
        let mut edges = Vec::new();
        for (i, &u) in nodes.iter().enumerate() {
            for v in self.neighbors(u) {
                if let Some(&j) = local.get(v) {
                    if i < j {
                        edges.push((i, j));
                    }
                }
            }
        }
        edges.sort_unstable();
        Graph::from_canonical_edges(nodes.len(), edges, self.features.select_rows(nodes))
    }

    /// Same node set and features, with the listed edges removed.
    pub fn remove_edges(&self, removed: &[(usize, usize)]) -> Graph {
        let mut drop: Vec<(usize, usize)> =
            removed.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        drop.sort_unstable();
        let kept = self
            .edges
            .iter()
            .copied()
            .filter(|e| drop.binary_search(e).is_err())
            .collect();
        Graph::from_canonical_edges(self.n_nodes, kept, self.features.clone())
    }

    /// Connected components as a per-node label, labels numbered by first node.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let mut label = vec![usize::MAX; self.n_nodes];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..self.n_nodes {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = count;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &v in self.neighbors(u) {
                    if label[v] == usize::MAX {
                        label[v] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        (count, label)
    }
}

/// Symmetrically normalized adjacency with self-loops, `D̃^{-1/2}(A+I)D̃^{-1/2}`,
/// stored row-compressed.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// GCN propagation operator of `g`.
pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    let n = g.n_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt())
        .collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(2 * g.n_edges() + n);
    let mut vals = Vec::with_capacity(2 * g.n_edges() + n);
    offsets.push(0);
    for i in 0..n {
        let nb = g.neighbors(i);
        let split = nb.partition_point(|&j| j < i);
        for &j in nb[..split].iter().chain(std::iter::once(&i)).chain(&nb[split..]) {
            cols.push(j);
            vals.push(inv_sqrt[i] * inv_sqrt[j]);
        }
        offsets.push(cols.len());
    }
    NormalizedAdjacency {
        n,
        offsets,
        cols,
        vals,
    }
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// `Â · x`.
    pub fn spmm(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n {
            return Err(Error::Contract(format!(
                "propagation over {} nodes applied to {} rows",
                self.n,
                x.rows()
            )));
        }
        let mut out = Matrix::zeros(self.n, x.cols());
        for i in 0..self.n {
            let o = out.row_mut(i);
            for (j, a) in self.row(i) {
                for (o, &b) in o.iter_mut().zip(x.row(j)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, a) in self.row(i) {
                m[(i, j)] = a;
            }
        }
        m
    }
}
