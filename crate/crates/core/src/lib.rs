//! Frequency aggregation network (FAN) for real-image ×4 super-resolution.
//!
//! Everything needed to build, train and run the network lives in this crate:
//! dense NCHW tensors with their own convolution kernels ([`tensor`]), a
//! reverse-mode tape ([`autodiff`]), the network itself ([`model`]), full
//! reference metrics ([`metrics`]), synthetic degradation and paired-folder
//! ingestion ([`data`]), the optimization loop ([`train`]), tiled and
//! self-ensembled inference ([`infer`]) and directory evaluation ([`eval`]).
//! [`checks`] holds the finite-difference gradient suite.
//!
//! Data-parallel kernels use rayon when the `parallel` feature is enabled
//! (the default). Every parallel loop assigns each output element to exactly
//! one worker, so results are bit-identical with and without the feature and
//! for any thread count.

pub mod autodiff;
pub mod checks;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod par;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
