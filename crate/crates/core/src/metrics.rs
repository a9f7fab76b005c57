//! Evaluation and reporting.
//!
//! Accuracy on the balanced test set is the unweighted mean of per-class
//! accuracies; classes are additionally bucketed into Major / Medium / Minor
//! groups by training-sample count. Gradient-norm traces are summarized at
//! task boundaries to quantify how abruptly training reacts to a switch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{LongTailProfile, SampleSet};
use crate::nn::MlpModel;
use crate::trainer::EpochGradStats;
use crate::{Error, Result};

/// Class-group cuts by training-sample count: strictly above `major_min`
/// is Major, at or below `minor_max` is Minor, in between is Medium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub major_min: usize,
    pub minor_max: usize,
}

impl Default for GroupThresholds {
    fn default() -> Self {
        Self {
            major_min: 100,
            minor_max: 20,
        }
    }
}

impl GroupThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.minor_max >= self.major_min {
            return Err(Error::InvalidConfig(format!(
                "minor_max {} must be < major_min {}",
                self.minor_max, self.major_min
            )));
        }
        Ok(())
    }
}

/// Mean per-class accuracy within each group; absent when a group is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub major: Option<f64>,
    pub medium: Option<f64>,
    pub minor: Option<f64>,
}

/// Per-class and overall accuracy of one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub per_class: BTreeMap<usize, f64>,
    pub overall: f64,
}

/// Identification of the run a report came from. Wall-clock data lives in
/// [`TimingInfo`], not here, so reports stay reproducible byte-for-byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub protocol: String,
    pub scenario: String,
    pub num_tasks: usize,
    pub schedule: String,
    pub lambda_gcr: f64,
    pub reweighting: bool,
}

/// Wall-clock section, excluded from determinism comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TimingInfo {
    pub train_seconds: f64,
}

/// Full result of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Accuracy over all classes on the balanced test set after the final
    /// task (equals the unweighted mean of `per_class_accuracy`).
    pub overall_accuracy: f64,
    pub per_class_accuracy: BTreeMap<usize, f64>,
    pub group_accuracy: GroupAccuracy,
    /// Accuracy over the classes seen so far, evaluated after each task.
    pub incremental_accuracy: Vec<f64>,
    pub average_incremental_accuracy: f64,
    pub grad_trace: Vec<EpochGradStats>,
    pub metadata: RunMetadata,
    pub timing: TimingInfo,
}

impl MetricsReport {
    /// Copy with wall-clock fields zeroed, for byte-level comparisons.
    pub fn without_timing(&self) -> MetricsReport {
        let mut r = self.clone();
        r.timing = TimingInfo::default();
        r
    }
}

/// Argmax evaluation over the seen-class logits.
///
/// `classes_seen[j]` names the class that logit column `j` predicts. Test
/// samples of unseen classes are ignored; every seen class must appear in
/// the test set. Ties resolve to the lowest column index.
pub fn evaluate(model: &MlpModel, test: &SampleSet, classes_seen: &[usize]) -> Result<EvalResult> {
    if classes_seen.is_empty() {
        return Err(Error::InvalidInput("no classes to evaluate".into()));
    }
    if classes_seen.len() != model.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} outputs but {} classes are seen",
            model.output_dim(),
            classes_seen.len()
        )));
    }
    let seen: BTreeMap<usize, usize> = classes_seen
        .iter()
        .enumerate()
        .map(|(col, &class)| (class, col))
        .collect();
    if seen.len() != classes_seen.len() {
        return Err(Error::InvalidInput("duplicate class in classes_seen".into()));
    }

    let subset = test.filter_by_class(|c| seen.contains_key(&c));
    let mut totals: BTreeMap<usize, (usize, usize)> =
        classes_seen.iter().map(|&c| (c, (0usize, 0usize))).collect();

    let (inputs, labels) = subset.as_matrix();
    if !labels.is_empty() {
        let logits = model.forward(&inputs)?;
        for (i, &label) in labels.iter().enumerate() {
            let row = logits.row(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            let predicted = classes_seen[best];
            let entry = totals.get_mut(&label).expect("label is a seen class");
            entry.1 += 1;
            if predicted == label {
                entry.0 += 1;
            }
        }
    }

    let mut per_class = BTreeMap::new();
    for (&class, &(correct, total)) in &totals {
        if total == 0 {
            return Err(Error::InvalidInput(format!(
                "class {class} has no test samples"
            )));
        }
        per_class.insert(class, correct as f64 / total as f64);
    }
    let overall = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(EvalResult { per_class, overall })
}

/// Unweighted mean of per-class accuracy within each threshold group.
pub fn group_accuracy(
    per_class: &BTreeMap<usize, f64>,
    profile: &LongTailProfile,
    thresholds: &GroupThresholds,
) -> Result<GroupAccuracy> {
    thresholds.validate()?;
    let mut groups: [(f64, usize); 3] = [(0.0, 0); 3]; // major, medium, minor
    for (&class, &acc) in per_class {
        let count = *profile.counts.get(class).ok_or_else(|| {
            Error::InvalidInput(format!("class {class} has no profile count"))
        })?;
        let idx = if count > thresholds.major_min {
            0
        } else if count > thresholds.minor_max {
            1
        } else {
            2
        };
        groups[idx].0 += acc;
        groups[idx].1 += 1;
    }
    let mean = |(sum, n): (f64, usize)| if n == 0 { None } else { Some(sum / n as f64) };
    Ok(GroupAccuracy {
        major: mean(groups[0]),
        medium: mean(groups[1]),
        minor: mean(groups[2]),
    })
}

/// Boundary reaction of one gradient-norm stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStability {
    /// Global epoch index of the first epoch after the switch.
    pub boundary: usize,
    /// Within-epoch (max − min) norm range in that first epoch.
    pub range_pre: f64,
    pub range_post: f64,
    /// Change in mean norm relative to the last pre-boundary epoch.
    pub mean_jump_pre: f64,
    pub mean_jump_post: f64,
}

/// Global epoch indices where a new task starts (first task excluded).
pub fn task_boundaries(trace: &[EpochGradStats]) -> Vec<usize> {
    trace
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].task != w[0].task)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Per-boundary stability records for both the raw and the applied
/// gradient-norm streams.
pub fn boundary_stability(
    trace: &[EpochGradStats],
    boundaries: &[usize],
) -> Result<Vec<BoundaryStability>> {
    let mut out = Vec::with_capacity(boundaries.len());
    for &b in boundaries {
        if b == 0 || b >= trace.len() {
            return Err(Error::InvalidInput(format!(
                "boundary {b} outside trace of {} epochs",
                trace.len()
            )));
        }
        let first = &trace[b];
        let last_pre = &trace[b - 1];
        out.push(BoundaryStability {
            boundary: b,
            range_pre: first.max_pre - first.min_pre,
            range_post: first.max_post - first.min_post,
            mean_jump_pre: first.mean_pre - last_pre.mean_pre,
            mean_jump_post: first.mean_post - last_pre.mean_post,
        });
    }
    Ok(out)
}
