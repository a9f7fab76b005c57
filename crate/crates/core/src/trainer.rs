//! The incremental training loop.
//!
//! Per task: snapshot the previous model as a frozen teacher, expand the
//! classifier head, then train with per-class reweighted cross-entropy plus
//! a scheduled distillation term against the teacher, post-process each
//! gradient with the consistency regularizer, and step with step-decayed
//! SGD. Per-mini-batch gradient norms are recorded before and after the
//! regularizer for stability analysis.
//!
//! Everything is deterministic given the run seed: model init, head
//! expansion, and mini-batch shuffling each draw from their own derived
//! seed stream (see [`crate::seeds`]).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LongTailProfile, SampleSet, TaskStream};
use crate::gcr::{EmaCadence, EmaState, GcrConfig};
use crate::linalg::DenseMatrix;
use crate::losses::{ce_loss_and_grad, kd_loss_and_grad};
use crate::metrics::{
    evaluate, group_accuracy, GroupThresholds, MetricsReport, RunMetadata, TimingInfo,
};
use crate::nn::{FlatGradient, MlpModel};
use crate::schedule::{lambda, ScheduleInput, ScheduleKind};
use crate::seeds;
use crate::stats::{ClassDistAccumulator, GradNormLedger};
use crate::{Error, NanDiagnostic, Result};

/// Hyperparameters of one incremental run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Epochs (0-based, within task) at which the learning rate decays.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub schedule: ScheduleKind,
    pub gcr: GcrConfig,
    pub kd_temperature: f64,
    pub seed: u64,
    pub reweighting: bool,
    pub hidden_dims: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_per_task: 30,
            batch_size: 32,
            base_lr: 0.1,
            lr_milestones: vec![15, 23],
            lr_decay: 0.1,
            schedule: ScheduleKind::EntropySigmoid,
            gcr: GcrConfig::default(),
            kd_temperature: 2.0,
            seed: 0,
            reweighting: true,
            hidden_dims: vec![64, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_task == 0 {
            return Err(Error::InvalidConfig("epochs_per_task must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "base_lr must be finite and >= 0, got {}",
                self.base_lr
            )));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_decay must be > 0, got {}",
                self.lr_decay
            )));
        }
        for w in self.lr_milestones.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidConfig(
                    "lr_milestones must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = self.lr_milestones.last() {
            if last >= self.epochs_per_task {
                return Err(Error::InvalidConfig(format!(
                    "lr milestone {last} is not below epochs_per_task {}",
                    self.epochs_per_task
                )));
            }
        }
        if !(self.kd_temperature.is_finite() && self.kd_temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "kd_temperature must be > 0, got {}",
                self.kd_temperature
            )));
        }
        if let ScheduleKind::Fixed(l0) = self.schedule {
            if !(l0.is_finite() && l0 >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "fixed schedule coefficient must be >= 0, got {l0}"
                )));
            }
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("hidden dims must be > 0".into()));
        }
        self.gcr.validate()
    }

    /// Learning rate for a (0-based) epoch under the step-decay schedule.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let decays = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.base_lr * self.lr_decay.powi(decays as i32)
    }
}

/// Frozen copy of the model at a task boundary, supplying soft targets for
/// its `old_class_count` output columns.
#[derive(Debug, Clone)]
pub struct TeacherSnapshot {
    model: MlpModel,
    old_class_count: usize,
}

impl TeacherSnapshot {
    pub fn new(model: &MlpModel) -> Self {
        Self {
            model: model.clone(),
            old_class_count: model.output_dim(),
        }
    }

    pub fn old_class_count(&self) -> usize {
        self.old_class_count
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn logits(&self, inputs: &DenseMatrix) -> Result<DenseMatrix> {
        self.model.forward(inputs)
    }
}

/// Per-mini-batch gradient-norm summary for one epoch, for the raw (`pre`)
/// and regularized (`post`) streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochGradStats {
    pub task: usize,
    pub epoch: usize,
    pub mean_pre: f64,
    pub min_pre: f64,
    pub max_pre: f64,
    pub mean_post: f64,
    pub min_post: f64,
    pub max_post: f64,
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLogRow {
    pub task: usize,
    pub epoch: usize,
    pub lambda: f64,
    pub h_norm: f64,
    pub lr: f64,
    pub ce_loss: f64,
    pub kd_loss: f64,
    pub grad: EpochGradStats,
}

/// One task's training samples in logit-column space.
///
/// `columns` lists this task's logit columns; `labels[i]` is the column of
/// sample `i`. The experiment driver owns the mapping from original class
/// ids to columns (order of first appearance).
#[derive(Debug, Clone)]
pub struct TaskData {
    pub columns: Vec<usize>,
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
}

impl TaskData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn column_counts(&self) -> BTreeMap<usize, u64> {
        let mut counts: BTreeMap<usize, u64> =
            self.columns.iter().map(|&c| (c, 0u64)).collect();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }
}

fn norm_summary(norms: &[f64]) -> (f64, f64, f64) {
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

/// Trains the model on one task.
///
/// Epoch structure: the distillation coefficient is evaluated at epoch
/// start from the accumulated class distribution (which includes this
/// task's counts); reweighting weights are refreshed from the ledger as it
/// stood at the end of the previous epoch; mini-batch order is reshuffled
/// from the task's seed stream. Per batch: weighted cross-entropy and the
/// scheduled distillation term are combined at the logit level, backprop
/// yields one flat gradient, the consistency regularizer post-processes
/// it, and SGD applies it. A non-finite gradient aborts with diagnostics.
pub fn train_task(
    model: &mut MlpModel,
    teacher: Option<&TeacherSnapshot>,
    data: &TaskData,
    task_index: usize,
    config: &TrainConfig,
    acc: &mut ClassDistAccumulator,
    ema: &mut EmaState,
) -> Result<Vec<EpochLogRow>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput(format!("task {task_index} has no samples")));
    }
    if let Some(t) = teacher {
        if t.old_class_count() == 0 {
            return Err(Error::InvalidConfig(
                "teacher snapshot has no output columns".into(),
            ));
        }
    }
    if data.labels.iter().any(|&l| l >= model.output_dim()) {
        return Err(Error::InvalidInput(
            "task labels exceed the model's output width".into(),
        ));
    }
    if data.labels.iter().any(|l| !data.columns.contains(l)) {
        return Err(Error::InvalidInput(
            "task labels must belong to the task's columns".into(),
        ));
    }
    for &c in &data.columns {
        if acc.contains(c) {
            return Err(Error::InvalidInput(format!(
                "class column {c} was already presented in an earlier task"
            )));
        }
    }

    // The entropy factor sees the distribution including this task.
    acc.update_distribution(&data.column_counts());
    let h_norm = acc.normalized_entropy()?;

    if config.gcr.reset_on_task_boundary {
        ema.reset();
    }

    let mut ledger = GradNormLedger::new();
    ledger.begin_task(&data.columns);

    // Teacher logits are constant within the task; computed once, lazily,
    // the first time the distillation coefficient is nonzero.
    let mut teacher_cache: Option<DenseMatrix> = None;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seeds::derive_indexed(
        config.seed,
        seeds::STREAM_SHUFFLE,
        task_index as u64,
    ));

    let epochs = config.epochs_per_task;
    let mut rows = Vec::with_capacity(epochs);
    let mut indices: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..epochs {
        let lam = lambda(
            config.schedule,
            ScheduleInput {
                epoch,
                epochs_per_task: epochs,
                h_norm,
            },
        );
        let lr = config.lr_at_epoch(epoch);

        // Weights lag the ledger by one epoch; the first epoch bootstraps.
        let weights_by_column: Option<BTreeMap<usize, f64>> = if config.reweighting {
            Some(ledger.reweight().weights)
        } else {
            None
        };

        indices.shuffle(&mut shuffle_rng);

        let mut pre_norms = Vec::new();
        let mut post_norms = Vec::new();
        let mut ce_sum = 0.0;
        let mut kd_sum = 0.0;
        let mut epoch_grad_sum: Option<Vec<f64>> = None;
        let mut batches = 0usize;

        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            let (inputs, labels) = {
                let inputs = data.inputs.gather_rows(chunk);
                let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
                (inputs, labels)
            };
            let weights: Vec<f64> = match &weights_by_column {
                Some(map) => labels.iter().map(|l| map[l]).collect(),
                None => vec![1.0; labels.len()],
            };

            let logits = model.forward(&inputs)?;
            let (ce_loss, mut dlogits) = ce_loss_and_grad(&logits, &labels, &weights)?;
            ce_sum += ce_loss;

            // Per-sample logit-gradient norms of the classification term
            // feed the ledger; the distillation term carries no labels.
            let sample_norms: Vec<f64> = (0..labels.len())
                .map(|i| dlogits.row(i).iter().map(|g| g * g).sum::<f64>().sqrt())
                .collect();
            if sample_norms.iter().any(|n| !n.is_finite()) {
                return Err(Error::NonFiniteGradient(Box::new(NanDiagnostic {
                    task: task_index,
                    epoch,
                    batch: batch_idx,
                    lambda: lam,
                    lr,
                    last_ce_loss: ce_loss,
                    last_kd_loss: 0.0,
                })));
            }
            ledger.accumulate_grad_norms(&labels, &sample_norms)?;

            let mut kd_loss = 0.0;
            if let Some(t) = teacher {
                if lam > 0.0 {
                    if teacher_cache.is_none() {
                        teacher_cache = Some(t.logits(&data.inputs)?);
                    }
                    let cache = teacher_cache.as_ref().unwrap();
                    let teacher_logits = cache.gather_rows(chunk);
                    let (kd, dkd) = kd_loss_and_grad(
                        &logits,
                        &teacher_logits,
                        config.kd_temperature,
                        t.old_class_count(),
                    )?;
                    kd_loss = kd;
                    for (dst, src) in dlogits.values_mut().iter_mut().zip(dkd.values()) {
                        *dst += lam * src;
                    }
                }
            }
            kd_sum += kd_loss;

            let grad = model.backward(&inputs, &dlogits)?;
            if !grad.all_finite() {
                return Err(Error::NonFiniteGradient(Box::new(NanDiagnostic {
                    task: task_index,
                    epoch,
                    batch: batch_idx,
                    lambda: lam,
                    lr,
                    last_ce_loss: ce_loss,
                    last_kd_loss: kd_loss,
                })));
            }
            pre_norms.push(grad.l2_norm());

            let applied = if config.gcr.enabled() {
                match config.gcr.cadence {
                    EmaCadence::PerBatch => ema.gcr_step(&grad, &config.gcr)?,
                    EmaCadence::PerEpochMean => {
                        let out = ema.gcr_apply(&grad, config.gcr.lambda_gcr)?;
                        match &mut epoch_grad_sum {
                            None => epoch_grad_sum = Some(grad.values().to_vec()),
                            Some(sum) => {
                                for (s, g) in sum.iter_mut().zip(grad.values()) {
                                    *s += g;
                                }
                            }
                        }
                        out
                    }
                }
            } else {
                grad
            };
            post_norms.push(applied.l2_norm());

            model.sgd_step(&applied, lr)?;
            batches += 1;
        }

        if let Some(mut sum) = epoch_grad_sum {
            for s in sum.iter_mut() {
                *s /= batches as f64;
            }
            ema.ema_update(&FlatGradient::from_vec(sum))?;
        }

        let (mean_pre, min_pre, max_pre) = norm_summary(&pre_norms);
        let (mean_post, min_post, max_post) = norm_summary(&post_norms);
        rows.push(EpochLogRow {
            task: task_index,
            epoch,
            lambda: lam,
            h_norm,
            lr,
            ce_loss: ce_sum / batches as f64,
            kd_loss: kd_sum / batches as f64,
            grad: EpochGradStats {
                task: task_index,
                epoch,
                mean_pre,
                min_pre,
                max_pre,
                mean_post,
                min_post,
                max_post,
            },
        });
    }

    Ok(rows)
}

/// Everything produced by one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: MetricsReport,
    pub epoch_log: Vec<EpochLogRow>,
    pub model: MlpModel,
    /// Original class id carried by each logit column.
    pub class_order: Vec<usize>,
}

/// Runs the full incremental protocol over a task stream.
///
/// Before every task after the first, the current model is frozen as the
/// teacher and the head is expanded for the new classes. After each task
/// the model is evaluated on the balanced test set over the classes seen
/// so far; the final evaluation and the class-group breakdown form the
/// report.
pub fn run_experiment(
    stream: &TaskStream,
    test: &SampleSet,
    profile: &LongTailProfile,
    thresholds: &GroupThresholds,
    config: &TrainConfig,
    config_hash: &str,
) -> Result<ExperimentRun> {
    config.validate()?;
    thresholds.validate()?;
    if stream.tasks.is_empty() {
        return Err(Error::InvalidInput("task stream is empty".into()));
    }
    let input_dim = stream.tasks[0].train.input_dim();
    let started = Instant::now();

    let mut class_order: Vec<usize> = Vec::new();
    let mut column_of: BTreeMap<usize, usize> = BTreeMap::new();

    let first_width = stream.tasks[0].classes.len();
    let mut model = MlpModel::new(
        input_dim,
        &config.hidden_dims,
        first_width,
        seeds::derive(config.seed, seeds::STREAM_MODEL_INIT),
    )?;
    let mut acc = ClassDistAccumulator::new();
    let mut ema = EmaState::from_config(&config.gcr)?;

    let mut epoch_log: Vec<EpochLogRow> = Vec::new();
    let mut incremental_accuracy = Vec::with_capacity(stream.tasks.len());
    let mut final_eval = None;

    for (task_index, task) in stream.tasks.iter().enumerate() {
        for &class in &task.classes {
            let col = class_order.len();
            class_order.push(class);
            column_of.insert(class, col);
        }

        let teacher = if task_index > 0 {
            let snapshot = TeacherSnapshot::new(&model);
            let param_map = model.head_expansion_param_map(class_order.len())?;
            model.expand_head(
                class_order.len(),
                seeds::derive_indexed(config.seed, seeds::STREAM_EXPAND, task_index as u64),
            )?;
            // The moving average follows the canonical layout; new head
            // parameters start with no history.
            ema.remap(&param_map)?;
            Some(snapshot)
        } else {
            None
        };

        let (inputs, class_labels) = task.train.as_matrix();
        let labels: Vec<usize> = class_labels.iter().map(|c| column_of[c]).collect();
        let columns: Vec<usize> = task.classes.iter().map(|c| column_of[c]).collect();
        let data = TaskData {
            columns,
            inputs,
            labels,
        };

        let rows = train_task(
            &mut model,
            teacher.as_ref(),
            &data,
            task_index,
            config,
            &mut acc,
            &mut ema,
        )?;
        epoch_log.extend(rows);

        let eval = evaluate(&model, test, &class_order)?;
        incremental_accuracy.push(eval.overall);
        final_eval = Some(eval);
    }

    let final_eval = final_eval.expect("at least one task ran");
    let groups = group_accuracy(&final_eval.per_class, profile, thresholds)?;
    let average_incremental_accuracy =
        incremental_accuracy.iter().sum::<f64>() / incremental_accuracy.len() as f64;

    let report = MetricsReport {
        overall_accuracy: final_eval.overall,
        per_class_accuracy: final_eval.per_class,
        group_accuracy: groups,
        incremental_accuracy,
        average_incremental_accuracy,
        grad_trace: epoch_log.iter().map(|r| r.grad.clone()).collect(),
        metadata: RunMetadata {
            config_hash: config_hash.to_owned(),
            seed: config.seed,
            protocol: stream.protocol.name().to_owned(),
            scenario: stream.scenario.name().to_owned(),
            num_tasks: stream.requested_tasks,
            schedule: config.schedule.name().to_owned(),
            lambda_gcr: config.gcr.lambda_gcr,
            reweighting: config.reweighting,
        },
        timing: TimingInfo {
            train_seconds: started.elapsed().as_secs_f64(),
        },
    };

    Ok(ExperimentRun {
        report,
        epoch_log,
        model,
        class_order,
    })
}

/// Wall-time cost of the consistency regularizer and the dynamic schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    /// Training wall time, full method over fixed-coefficient baseline.
    pub training_ratio: f64,
    /// Inference wall time on the two final models. The evaluation path
    /// consults no schedule, moving average, or ledger state, so this is
    /// 1.0 up to measurement noise.
    pub inference_ratio: f64,
}

/// Measures training and inference wall time of the full method against a
/// fixed-coefficient, regularizer-off baseline on the same stream and seed.
pub fn measure_overhead(
    stream: &TaskStream,
    test: &SampleSet,
    profile: &LongTailProfile,
    thresholds: &GroupThresholds,
    config: &TrainConfig,
) -> Result<OverheadReport> {
    let mut baseline = config.clone();
    baseline.schedule = ScheduleKind::Fixed(1.0);
    baseline.gcr.lambda_gcr = 0.0;

    let t0 = Instant::now();
    let base_run = run_experiment(stream, test, profile, thresholds, &baseline, "")?;
    let base_train = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let full_run = run_experiment(stream, test, profile, thresholds, config, "")?;
    let full_train = t0.elapsed().as_secs_f64();

    // Alternate the two models and keep the fastest round each, which
    // filters scheduler noise better than averaging.
    let classes: Vec<usize> = base_run.class_order.clone();
    let rounds = 7;
    let reps = 5;
    let mut best_base = f64::INFINITY;
    let mut best_full = f64::INFINITY;
    for _ in 0..rounds {
        let t0 = Instant::now();
        for _ in 0..reps {
            evaluate(&base_run.model, test, &classes)?;
        }
        best_base = best_base.min(t0.elapsed().as_secs_f64());

        let t0 = Instant::now();
        for _ in 0..reps {
            evaluate(&full_run.model, test, &full_run.class_order)?;
        }
        best_full = best_full.min(t0.elapsed().as_secs_f64());
    }

    Ok(OverheadReport {
        training_ratio: full_train / base_train,
        inference_ratio: best_full / best_base,
    })
}

// ─── Trace CSV ─────────────────────────────────────────

const TRACE_HEADER: &str = "task,epoch,lambda,h_norm,lr,ce_loss,kd_loss,\
grad_norm_mean_pre,grad_norm_min_pre,grad_norm_max_pre,\
grad_norm_mean_post,grad_norm_min_post,grad_norm_max_post";

/// Writes the per-epoch training log; `comments` become leading `#` lines.
pub fn write_trace_csv<W: Write>(
    rows: &[EpochLogRow],
    comments: &[String],
    w: &mut W,
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.task,
            r.epoch,
            r.lambda,
            r.h_norm,
            r.lr,
            r.ce_loss,
            r.kd_loss,
            r.grad.mean_pre,
            r.grad.min_pre,
            r.grad.max_pre,
            r.grad.mean_post,
            r.grad.min_post,
            r.grad.max_post
        )?;
    }
    Ok(())
}

/// Reads a trace written by [`write_trace_csv`].
pub fn read_trace_csv<R: BufRead>(r: R) -> Result<Vec<EpochLogRow>> {
    let mut lines = r
        .lines()
        .collect::<std::io::Result<Vec<String>>>()?
        .into_iter()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty trace file".into()))?;
    if header != TRACE_HEADER {
        return Err(Error::Parse(format!("unexpected trace header '{header}'")));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(Error::Parse(format!(
                "trace line {}: expected 13 fields, got {}",
                lineno + 2,
                f.len()
            )));
        }
        let parse_usize = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|e| Error::Parse(format!("trace line {}: {e}", lineno + 2)))
        };
        let parse_f64 = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Parse(format!("trace line {}: {e}", lineno + 2)))
        };
        let task = parse_usize(f[0])?;
        let epoch = parse_usize(f[1])?;
        rows.push(EpochLogRow {
            task,
            epoch,
            lambda: parse_f64(f[2])?,
            h_norm: parse_f64(f[3])?,
            lr: parse_f64(f[4])?,
            ce_loss: parse_f64(f[5])?,
            kd_loss: parse_f64(f[6])?,
            grad: EpochGradStats {
                task,
                epoch,
                mean_pre: parse_f64(f[7])?,
                min_pre: parse_f64(f[8])?,
                max_pre: parse_f64(f[9])?,
                mean_post: parse_f64(f[10])?,
                min_post: parse_f64(f[11])?,
                max_post: parse_f64(f[12])?,
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_profile, generate_dataset, split_tasks, Protocol, Scenario, SyntheticSpec};

    fn toy_setup(
        seed: u64,
    ) -> (
        TaskStream,
        SampleSet,
        LongTailProfile,
        GroupThresholds,
    ) {
        let spec = SyntheticSpec {
            num_classes: 4,
            input_dim: 6,
            cluster_std: 0.3,
            test_per_class: 5,
            seed,
        };
        let profile = build_profile(4, 30, 5.0).unwrap();
        let ds = generate_dataset(&spec, &profile).unwrap();
        let stream = split_tasks(&ds, 2, Protocol::InOrdered, Scenario::FromScratch, seed).unwrap();
        (stream, ds.test, profile, GroupThresholds { major_min: 20, minor_max: 8 })
    }

    fn toy_config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs_per_task: 3,
            batch_size: 8,
            base_lr: 0.05,
            lr_milestones: vec![2],
            lr_decay: 0.1,
            hidden_dims: vec![10],
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn first_task_has_no_distillation_term() {
        let (stream, test, profile, thresholds) = toy_setup(1);
        let config = toy_config(1);
        let run = run_experiment(&stream, &test, &profile, &thresholds, &config, "").unwrap();
        for row in run.epoch_log.iter().filter(|r| r.task == 0) {
            assert_eq!(row.kd_loss, 0.0);
        }
        assert!(run
            .epoch_log
            .iter()
            .filter(|r| r.task == 1)
            .any(|r| r.kd_loss > 0.0));
    }

    #[test]
    fn lambda_is_monotone_within_each_task() {
        let (stream, test, profile, thresholds) = toy_setup(2);
        let config = toy_config(2);
        let run = run_experiment(&stream, &test, &profile, &thresholds, &config, "").unwrap();
        for task in 0..stream.tasks.len() {
            let lams: Vec<f64> = run
                .epoch_log
                .iter()
                .filter(|r| r.task == task)
                .map(|r| r.lambda)
                .collect();
            for w in lams.windows(2) {
                assert!(w[1] >= w[0]);
            }
        }
    }

    #[test]
    fn teacher_logits_are_unchanged_by_student_training() {
        let (stream, test, profile, thresholds) = toy_setup(3);
        let config = toy_config(3);

        // Train the first task by hand to get a teacher, then verify its
        // outputs are identical before and after the student trains.
        let run = run_experiment(&stream, &test, &profile, &thresholds, &config, "").unwrap();
        let teacher = TeacherSnapshot::new(&run.model);
        let (inputs, _) = test.as_matrix();
        let before = teacher.logits(&inputs).unwrap();

        let mut student = run.model.clone();
        let (task_inputs, class_labels) = stream.tasks[0].train.as_matrix();
        let labels: Vec<usize> = class_labels
            .iter()
            .map(|c| run.class_order.iter().position(|x| x == c).unwrap())
            .collect();
        let columns: Vec<usize> = stream.tasks[0]
            .classes
            .iter()
            .map(|c| run.class_order.iter().position(|x| x == c).unwrap())
            .collect();
        let data = TaskData {
            columns,
            inputs: task_inputs,
            labels,
        };
        let mut acc = ClassDistAccumulator::new();
        let mut ema = EmaState::from_config(&config.gcr).unwrap();
        train_task(&mut student, Some(&teacher), &data, 0, &config, &mut acc, &mut ema).unwrap();

        let after = teacher.logits(&inputs).unwrap();
        assert_eq!(before, after);
        assert_ne!(student.params_vec(), run.model.params_vec());
    }

    #[test]
    fn zero_lambda_is_bitwise_independent_of_the_teacher() {
        let (stream, _, _, _) = toy_setup(4);
        let mut config = toy_config(4);
        config.schedule = ScheduleKind::Fixed(0.0);

        let run_once = |teacher_seed: u64| {
            let mut model = MlpModel::new(6, &config.hidden_dims, 2, 77).unwrap();
            model.expand_head(4, 78).unwrap();
            let teacher_model = MlpModel::new(6, &config.hidden_dims, 2, teacher_seed).unwrap();
            let teacher = TeacherSnapshot::new(&teacher_model);
            let (inputs, class_labels) = stream.tasks[1].train.as_matrix();
            let order = stream.class_order();
            let labels: Vec<usize> = class_labels
                .iter()
                .map(|c| order.iter().position(|x| x == c).unwrap())
                .collect();
            let columns: Vec<usize> = stream.tasks[1]
                .classes
                .iter()
                .map(|c| order.iter().position(|x| x == c).unwrap())
                .collect();
            let data = TaskData { columns, inputs, labels };
            let mut acc = ClassDistAccumulator::new();
            let mut ema = EmaState::from_config(&config.gcr).unwrap();
            train_task(&mut model, Some(&teacher), &data, 1, &config, &mut acc, &mut ema)
                .unwrap();
            model.params_vec()
        };

        assert_eq!(run_once(1000), run_once(2000));
    }

    #[test]
    fn repeat_runs_are_identical() {
        let (stream, test, profile, thresholds) = toy_setup(5);
        let config = toy_config(5);
        let a = run_experiment(&stream, &test, &profile, &thresholds, &config, "h").unwrap();
        let b = run_experiment(&stream, &test, &profile, &thresholds, &config, "h").unwrap();
        assert_eq!(a.model.params_vec(), b.model.params_vec());
        assert_eq!(a.report.without_timing(), b.report.without_timing());
        assert_eq!(a.epoch_log, b.epoch_log);
    }

    #[test]
    fn single_task_stream_never_creates_a_teacher() {
        let spec = SyntheticSpec {
            num_classes: 4,
            input_dim: 6,
            cluster_std: 0.3,
            test_per_class: 5,
            seed: 6,
        };
        let profile = build_profile(4, 30, 5.0).unwrap();
        let ds = generate_dataset(&spec, &profile).unwrap();
        let stream = split_tasks(&ds, 1, Protocol::InOrdered, Scenario::FromScratch, 6).unwrap();
        let config = toy_config(6);
        let run = run_experiment(
            &stream,
            &ds.test,
            &profile,
            &GroupThresholds { major_min: 20, minor_max: 8 },
            &config,
            "",
        )
        .unwrap();
        assert!(run.epoch_log.iter().all(|r| r.kd_loss == 0.0));
        assert_eq!(run.report.incremental_accuracy.len(), 1);
    }

    #[test]
    fn cross_task_columns_are_rejected_twice() {
        let (stream, _test, _profile, _thresholds) = toy_setup(7);
        let config = toy_config(7);
        let (inputs, class_labels) = stream.tasks[0].train.as_matrix();
        let order = stream.class_order();
        let labels: Vec<usize> = class_labels
            .iter()
            .map(|c| order.iter().position(|x| x == c).unwrap())
            .collect();
        let columns: Vec<usize> = stream.tasks[0]
            .classes
            .iter()
            .map(|c| order.iter().position(|x| x == c).unwrap())
            .collect();
        let data = TaskData { columns, inputs, labels };
        let mut model = MlpModel::new(6, &config.hidden_dims, 4, 1).unwrap();
        let mut acc = ClassDistAccumulator::new();
        let mut ema = EmaState::from_config(&config.gcr).unwrap();
        train_task(&mut model, None, &data, 0, &config, &mut acc, &mut ema).unwrap();
        let err = train_task(&mut model, None, &data, 1, &config, &mut acc, &mut ema);
        assert!(err.is_err());
    }

    #[test]
    fn exploding_lr_aborts_with_diagnostics() {
        let (stream, test, profile, thresholds) = toy_setup(8);
        let mut config = toy_config(8);
        config.base_lr = 1e250;
        config.lr_milestones = vec![];
        let err = run_experiment(&stream, &test, &profile, &thresholds, &config, "");
        match err {
            Err(Error::NonFiniteGradient(diag)) => {
                assert_eq!(diag.task, 0);
            }
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn trace_csv_roundtrip() {
        let (stream, test, profile, thresholds) = toy_setup(9);
        let config = toy_config(9);
        let run = run_experiment(&stream, &test, &profile, &thresholds, &config, "").unwrap();
        let mut bytes = Vec::new();
        write_trace_csv(&run.epoch_log, &["config_hash=abc".to_owned()], &mut bytes).unwrap();
        let back = read_trace_csv(bytes.as_slice()).unwrap();
        assert_eq!(back, run.epoch_log);
    }

    #[test]
    fn lr_step_decay_schedule() {
        let config = toy_config(0);
        assert_eq!(config.lr_at_epoch(0), 0.05);
        assert_eq!(config.lr_at_epoch(1), 0.05);
        assert!((config.lr_at_epoch(2) - 0.005).abs() < 1e-15);
    }
}
