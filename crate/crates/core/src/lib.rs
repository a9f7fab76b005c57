//! Desk-scale laboratory for long-tailed class-incremental learning.
//!
//! A compact, fully deterministic stack for studying class-incremental
//! training under long-tailed data: a dense-network engine with exact
//! manual backpropagation, synthetic long-tailed benchmarks with the usual
//! task-ordering protocols, per-class gradient reweighting, an
//! entropy-aware distillation-coefficient schedule, gradient consistency
//! regularization, and full metric / gradient-norm instrumentation.

pub mod data;
pub mod error;
pub mod figure;
pub mod gcr;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod schedule;
pub mod seeds;
pub mod snapshot;
pub mod stats;
pub mod trainer;

pub use error::{Error, NanDiagnostic, Result};
pub use linalg::DenseMatrix;
pub use nn::{Activation, Batch, FlatGradient, Layer, MlpModel};
