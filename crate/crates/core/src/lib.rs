//! Multimodal embedding alignment by entropic optimal-transport matching and
//! Gram-determinant volume minimization.
//!
//! The pieces, bottom up:
//!
//! - [`geometry`]: volume of the parallelotope spanned by a group of unit
//!   vectors, with its analytic gradient.
//! - [`transport`]: squared-distance costs, log-domain Sinkhorn, k-tuple weights
//!   and candidate-group strategies.
//! - [`model`]: linear encoders with L2 normalization and a synthetic paired
//!   dataset.
//! - [`objective`]: the weighted volume loss, the volume-contrastive loss, and
//!   the training loop.
//! - [`eval`]: Recall@K retrieval, the component ablation, and the held-out
//!   modality harness.
//! - [`config`] and [`io`]: configuration files and on-disk artifacts.

pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod transport;

pub use config::TrainConfig;
pub use error::{Error, Result};
