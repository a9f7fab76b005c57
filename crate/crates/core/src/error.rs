//! Crate-wide error type.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// State captured when training aborts on a non-finite gradient.
///
/// Training never clamps or skips bad gradients; it stops and hands this
/// back so the run can be inspected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NanDiagnostic {
    pub task: usize,
    pub epoch: usize,
    pub batch: usize,
    pub lambda: f64,
    pub lr: f64,
    pub last_ce_loss: f64,
    pub last_kd_loss: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("undefined state: {0}")]
    UndefinedState(String),

    #[error(
        "non-finite gradient at task {} epoch {} batch {}",
        .0.task, .0.epoch, .0.batch
    )]
    NonFiniteGradient(Box<NanDiagnostic>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
