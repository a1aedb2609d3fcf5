//! Unsupervised graph anomaly detection on attributed graphs.
//!
//! The model couples a joint low-pass / high-pass graph convolutional
//! encoder with neighbor feature-distribution reconstruction, attention-based
//! center aggregation, and dual attribute/structure decoders; per-node anomaly
//! scores come from the reconstruction errors. The crate also ships spectral
//! and attribute-similarity diagnostics and a synthetic anomaly-injection
//! benchmark harness, all exposed through the `nkgad` CLI.

pub mod autodiff;
pub mod graph;
pub mod eigh;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod neighbor;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod recon;

pub use error::{NkError, Result};
pub use matrix::Matrix;
