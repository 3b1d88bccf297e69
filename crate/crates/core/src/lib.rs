//! Graph autoencoders trained on overlapping patches whose embeddings are
//! synchronized into a common frame during training, plus the full-graph,
//! subsampled and post-hoc-aligned baselines and a benchmark harness.

pub mod bench;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod graph;
pub mod linalg;
pub mod partition;
pub mod sync;
pub mod train;

pub use error::{Error, Result};
pub use graph::{generate_sbm, normalize_adjacency, Graph, NormalizedAdjacency, SbmConfig};
pub use linalg::Matrix;
