//! Distillation-coefficient schedules.
//!
//! The coefficient for an epoch is the product of a time factor (how far
//! training has progressed within the task) and an entropy factor (how
//! uniform the accumulated class distribution is). Five variants cover the
//! fixed baseline, the two pure time schedules, and the two entropy-scaled
//! schedules.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which schedule produces the distillation coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// Constant coefficient, the fixed-distillation baseline.
    Fixed(f64),
    /// t/T ramp.
    Linear,
    /// σ(t/T) ramp.
    Sigmoid,
    /// H_norm · t/T.
    EntropyLinear,
    /// H_norm · σ(t/T).
    EntropySigmoid,
}

impl ScheduleKind {
    /// Canonical config-file name for this kind.
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Fixed(_) => "fixed",
            ScheduleKind::Linear => "linear",
            ScheduleKind::Sigmoid => "sigmoid",
            ScheduleKind::EntropyLinear => "entropy_linear",
            ScheduleKind::EntropySigmoid => "entropy_sigmoid",
        }
    }

    /// Parses a config-file name; `fixed_lambda` supplies the constant for
    /// the fixed baseline.
    pub fn parse(name: &str, fixed_lambda: f64) -> Result<Self> {
        match name {
            "fixed" => {
                if !(fixed_lambda.is_finite() && fixed_lambda >= 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "fixed schedule coefficient must be finite and >= 0, got {fixed_lambda}"
                    )));
                }
                Ok(ScheduleKind::Fixed(fixed_lambda))
            }
            "linear" => Ok(ScheduleKind::Linear),
            "sigmoid" => Ok(ScheduleKind::Sigmoid),
            "entropy_linear" => Ok(ScheduleKind::EntropyLinear),
            "entropy_sigmoid" => Ok(ScheduleKind::EntropySigmoid),
            other => Err(Error::InvalidConfig(format!(
                "unknown schedule '{other}' (expected fixed, linear, sigmoid, \
                 entropy_linear, entropy_sigmoid)"
            ))),
        }
    }

    /// True for the kinds whose coefficient scales with normalized entropy.
    pub fn uses_entropy(&self) -> bool {
        matches!(self, ScheduleKind::EntropyLinear | ScheduleKind::EntropySigmoid)
    }
}

/// Inputs the schedule is evaluated on at the start of an epoch.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleInput {
    /// 0-based epoch index within the task.
    pub epoch: usize,
    /// Total epochs per task.
    pub epochs_per_task: usize,
    /// Normalized entropy of the accumulated class distribution, in [0, 1].
    pub h_norm: f64,
}

impl ScheduleInput {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_task == 0 {
            return Err(Error::InvalidConfig("epochs_per_task must be >= 1".into()));
        }
        if self.epoch > self.epochs_per_task {
            return Err(Error::InvalidConfig(format!(
                "epoch {} out of range for {} epochs per task",
                self.epoch, self.epochs_per_task
            )));
        }
        if !(0.0..=1.0).contains(&self.h_norm) {
            return Err(Error::InvalidConfig(format!(
                "h_norm must lie in [0, 1], got {}",
                self.h_norm
            )));
        }
        Ok(())
    }
}

/// Standard logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Time factor σ(t/T); monotone non-decreasing in `t`, σ(0) = 0.5.
pub fn lambda_time_sigmoid(epoch: usize, epochs_per_task: usize) -> f64 {
    assert!(epochs_per_task >= 1, "epochs_per_task must be >= 1");
    assert!(epoch <= epochs_per_task, "epoch must be <= epochs_per_task");
    sigmoid(epoch as f64 / epochs_per_task as f64)
}

/// Time factor t/T.
pub fn lambda_time_linear(epoch: usize, epochs_per_task: usize) -> f64 {
    assert!(epochs_per_task >= 1, "epochs_per_task must be >= 1");
    assert!(epoch <= epochs_per_task, "epoch must be <= epochs_per_task");
    epoch as f64 / epochs_per_task as f64
}

/// Distillation coefficient for the given kind and epoch inputs.
pub fn lambda(kind: ScheduleKind, input: ScheduleInput) -> f64 {
    debug_assert!(input.validate().is_ok());
    let (t, total, h) = (input.epoch, input.epochs_per_task, input.h_norm);
    match kind {
        ScheduleKind::Fixed(l0) => l0,
        ScheduleKind::Linear => lambda_time_linear(t, total),
        ScheduleKind::Sigmoid => lambda_time_sigmoid(t, total),
        ScheduleKind::EntropyLinear => h * lambda_time_linear(t, total),
        ScheduleKind::EntropySigmoid => h * lambda_time_sigmoid(t, total),
    }
}
