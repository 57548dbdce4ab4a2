//! Graph collaborative filtering with variational-embedding pre-training.
//!
//! A variational graph auto-encoder ([`vgae`]) learns layer-0 user/item
//! embeddings from the interaction graph; stacked graph-convolution layers
//! ([`ngcf`]) refine them and a BPR objective ([`trainer`]) fits every
//! parameter. [`eval`] computes recall@K and NDCG@K, and [`io`] covers
//! datasets, checkpoints and run configuration.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases below
//! fix the 64-bit instantiation used by the training pipeline and the CLI.

pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod kernel;
pub mod ngcf;
pub mod scalar;
pub mod trainer;
pub mod vgae;

#[doc(hidden)]
pub mod cli;

pub use error::{Error, Result};
pub use graph::{InteractionMatrix, NormalizedLaplacian};
pub use kernel::{DenseMatrix, SparseMatrix};
pub use scalar::Scalar;

pub type Matrix = kernel::DenseMatrix<f64>;
pub type Sparse = kernel::SparseMatrix<f64>;
pub type Laplacian = graph::NormalizedLaplacian<f64>;
pub type Embeddings = vgae::VariationalEmbeddings<f64>;
pub type State = ngcf::PropagationState<f64>;
pub type Params = trainer::ModelParams<f64>;
pub type Model = trainer::Recommender<f64>;
