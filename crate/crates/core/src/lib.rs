//! Graph convolutional segmentation of building footprints.
//!
//! The crate is organised bottom-up:
//!
//! - [`matrix`]: dense row-major matrices and a CSR sparse operator.
//! - [`graph`]: weighted undirected graphs, pixel-grid construction, degree,
//!   Laplacian and the renormalized adjacency `D̃^{-1/2} (A + I) D̃^{-1/2}`.
//! - [`spectral`]: Jacobi eigendecomposition, graph Fourier transform and exact
//!   spectral filtering. Slow, used as ground truth.
//! - [`chebyshev`]: largest-eigenvalue estimation, the scaled Laplacian and
//!   Chebyshev polynomial filtering.
//! - [`model`]: convolutional encoder + stacked GCN layers + softmax, with
//!   hand-written backpropagation.
//! - [`training`]: NLL loss, plain SGD, deterministic mini-batching and
//!   checkpoints ([`checkpoint`]).
//! - [`dataset`]: PPM/PGM rasters, sliding-window patches, spatial splits.
//! - [`metrics`]: confusion matrix, OA / F1 / IoU.
//! - [`verify`]: the numerical self-check suites behind `gcnseg verify`.
//! - [`cli`]: command implementations shared by the binary and tests.

pub mod checkpoint;
pub mod chebyshev;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod spectral;
pub mod synthetic;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Connectivity, Graph};
pub use matrix::{CsrMatrix, DenseMatrix, FeatureMap, LinearOperator};
