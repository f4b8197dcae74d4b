//! Locality toolkit for 3D point clouds: space-filling-curve serialization,
//! partitioned farthest point sampling, label-constrained approximate k-NN,
//! local-to-global aggregation and consensus losses.
//!
//! Every numeric routine is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix the common `f64` instantiations.

pub mod aggregate;
pub mod bench;
pub mod cloud;
pub mod error;
pub mod format;
pub mod hilbert;
pub mod losses;
pub mod matrix;
pub mod neighbors;
pub mod pipeline;
pub mod provenance;
pub mod sampling;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result, Stage};
pub use scalar::Real;

pub type Cloud = cloud::PointCloud<f64>;
pub type Cloud32 = cloud::PointCloud<f32>;
pub type Labeled = cloud::LabeledCloud<f64>;
pub type Matrix64 = matrix::Matrix<f64>;
pub type Sparse64 = matrix::SparseMatrix<f64>;
pub type Code = hilbert::HilbertCode<f64>;
pub type SuperPoints64 = sampling::SuperPoints<f64>;
pub type Params64 = aggregate::AggParams<f64>;
pub type State64 = aggregate::AggregationState<f64>;
