//! Class-distribution accumulation and per-class gradient-norm tracking.
//!
//! Two separate memories with different lifetimes: the distribution
//! accumulator spans the whole run and feeds the normalized-entropy factor
//! of the distillation schedule, while the gradient-norm ledger is reset at
//! every task boundary and feeds the per-class reweighting rule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Running per-class sample counts across all observed tasks.
///
/// A class is registered the first time it appears in an update, so the
/// class count tracks everything seen so far. Never reset within a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassDistAccumulator {
    counts: BTreeMap<usize, u64>,
}

impl ClassDistAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a task's per-class sample counts elementwise.
    pub fn update_distribution(&mut self, task_counts: &BTreeMap<usize, u64>) {
        for (&class, &count) in task_counts {
            *self.counts.entry(class).or_insert(0) += count;
        }
    }

    /// Number of classes registered so far.
    pub fn k_total(&self) -> usize {
        self.counts.len()
    }

    pub fn total_samples(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    pub fn contains(&self, class: usize) -> bool {
        self.counts.contains_key(&class)
    }

    /// Normalized entropy of the accumulated distribution:
    /// `−Σ_k p_k ln p_k / ln K_total`, with `0·ln 0 = 0`.
    ///
    /// 1 for a uniform distribution, approaching 0 under extreme imbalance.
    /// A single-class accumulator is vacuously uniform and returns 1.0
    /// (the formula is 0/0 there).
    pub fn normalized_entropy(&self) -> Result<f64> {
        let total = self.total_samples();
        if total == 0 {
            return Err(Error::UndefinedState(
                "normalized entropy of an empty accumulator".into(),
            ));
        }
        let k = self.k_total();
        if k == 1 {
            return Ok(1.0);
        }
        let total = total as f64;
        let mut h = 0.0;
        for &count in self.counts.values() {
            if count > 0 {
                let p = count as f64 / total;
                h -= p * p.ln();
            }
        }
        Ok(h / (k as f64).ln())
    }
}

/// Outcome of a reweighting pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Reweighting {
    /// Per-class loss weights, keyed by class.
    pub weights: BTreeMap<usize, f64>,
    /// True when some class had no accumulated norm yet and every weight
    /// fell back to 1 (first-epoch bootstrap).
    pub bootstrap: bool,
}

/// Cumulative per-class gradient norms within the current task.
///
/// The norm accumulated per sample is the Euclidean norm of that sample's
/// logit gradient. Reset at every task boundary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradNormLedger {
    norms: BTreeMap<usize, f64>,
    task_classes: Vec<usize>,
}

impl GradNormLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Resets the ledger for a new task over the given classes.
    pub fn begin_task(&mut self, classes: &[usize]) {
        self.norms.clear();
        self.task_classes = classes.to_vec();
        for &c in classes {
            self.norms.insert(c, 0.0);
        }
    }

    pub fn task_classes(&self) -> &[usize] {
        &self.task_classes
    }

    pub fn norms(&self) -> &BTreeMap<usize, f64> {
        &self.norms
    }

    /// Adds each sample's logit-gradient norm to its class total.
    pub fn accumulate_grad_norms(&mut self, labels: &[usize], norms: &[f64]) -> Result<()> {
        if labels.len() != norms.len() {
            return Err(Error::DimensionMismatch(format!(
                "labels {} vs norms {}",
                labels.len(),
                norms.len()
            )));
        }
        if norms.iter().any(|n| !n.is_finite() || *n < 0.0) {
            return Err(Error::InvalidInput(
                "gradient norms must be finite and >= 0".into(),
            ));
        }
        for (&label, &norm) in labels.iter().zip(norms) {
            match self.norms.get_mut(&label) {
                Some(g) => *g += norm,
                None => {
                    return Err(Error::InvalidInput(format!(
                        "class {label} is not part of the current task"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Per-class weights `w_c = min_c{G_c} / G_c` over the current task's
    /// classes. The class with the smallest accumulated norm gets exactly 1;
    /// classes with larger norms get proportionally smaller weights.
    ///
    /// If any class still has a zero norm the pass falls back to uniform
    /// weights (bootstrap), which is flagged on the result and logged.
    pub fn reweight(&self) -> Reweighting {
        let mut min = f64::INFINITY;
        for &c in &self.task_classes {
            let g = self.norms.get(&c).copied().unwrap_or(0.0);
            if g <= 0.0 {
                log::debug!("reweight bootstrap: class {c} has no accumulated gradient norm yet");
                return Reweighting {
                    weights: self.task_classes.iter().map(|&c| (c, 1.0)).collect(),
                    bootstrap: true,
                };
            }
            min = min.min(g);
        }
        Reweighting {
            weights: self
                .task_classes
                .iter()
                .map(|&c| (c, min / self.norms[&c]))
                .collect(),
            bootstrap: false,
        }
    }
}
