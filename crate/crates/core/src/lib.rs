//! Meta-filtered graph multilinear networks.
//!
//! Building blocks, bottom-up:
//!
//! * [`autodiff`]: matrix-valued reverse-mode differentiation with support
//!   for differentiating through gradient steps,
//! * [`nn`]: parameter stores, GIN layers, losses and the differentiable
//!   inner update,
//! * [`graph`] and [`datasets`]: graph containers and benchmark generators,
//! * [`model`]: extractor + attention-weighted classifier (LIN and SAM),
//! * [`submt`]: exact and sampled subgraph multilinear extensions,
//! * [`trainer`]: baseline and bi-level training loops,
//! * [`metrics`]: explanation ROC / precision@k and seed aggregation,
//! * [`experiments`]: configuration files, run directories and reports.

pub mod autodiff;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod submt;
pub mod trainer;

pub use error::{Error, Result};
