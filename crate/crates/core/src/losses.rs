//! Classification and distillation losses with exact logit gradients.
//!
//! Both losses return the gradient with respect to the logits so callers can
//! mix them at the logit level and run a single backward pass.

use crate::linalg::DenseMatrix;
use crate::{Error, Result};

/// Row-wise softmax with max-subtraction for overflow safety.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        softmax_into(logits.row(r), out.row_mut(r));
    }
    out
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        let e = (z - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Weighted cross-entropy over a batch of logits.
///
/// `loss = Σ_i w_i · CE(softmax(z_i), y_i) / Σ_i w_i`, so the result is
/// invariant to uniform scaling of the weights. The returned matrix is the
/// exact gradient of that expression with respect to the logits.
pub fn ce_loss_and_grad(
    logits: &DenseMatrix,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, DenseMatrix)> {
    let batch = logits.rows();
    let classes = logits.cols();
    if labels.len() != batch || weights.len() != batch {
        return Err(Error::DimensionMismatch(format!(
            "logits rows {} vs labels {} vs weights {}",
            batch,
            labels.len(),
            weights.len()
        )));
    }
    if batch == 0 {
        return Err(Error::DegenerateBatch("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput(
            "per-sample weights must be finite and >= 0".into(),
        ));
    }
    let weight_sum: f64 = weights.iter().sum();
    if weight_sum <= 0.0 {
        return Err(Error::DegenerateBatch(
            "per-sample weights sum to zero".into(),
        ));
    }

    let mut grad = DenseMatrix::zeros(batch, classes);
    let mut loss = 0.0;
    let mut probs = vec![0.0; classes];
    for b in 0..batch {
        let row = logits.row(b);
        softmax_into(row, &mut probs);
        let w = weights[b] / weight_sum;
        // CE via log-sum-exp keeps -ln p exact for extreme logits.
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        loss += weights[b] * (lse - row[labels[b]]);
        let gr = grad.row_mut(b);
        for (c, g) in gr.iter_mut().enumerate() {
            let indicator = if c == labels[b] { 1.0 } else { 0.0 };
            *g = w * (probs[c] - indicator);
        }
    }
    Ok((loss / weight_sum, grad))
}

/// Temperature-scaled distillation loss against frozen teacher logits,
/// restricted to the first `old_class_count` logit columns.
///
/// `loss = τ² · mean_i KL(softmax(z_teacher_i/τ) ‖ softmax(z_student_i/τ))`
/// with the gradient taken w.r.t. the student logits only; columns at or
/// beyond `old_class_count` get zero gradient. `old_class_count == 0` is
/// defined as (0, zeros).
pub fn kd_loss_and_grad(
    student_logits: &DenseMatrix,
    teacher_logits: &DenseMatrix,
    temperature: f64,
    old_class_count: usize,
) -> Result<(f64, DenseMatrix)> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    if student_logits.rows() != teacher_logits.rows() {
        return Err(Error::DimensionMismatch(format!(
            "student batch {} vs teacher batch {}",
            student_logits.rows(),
            teacher_logits.rows()
        )));
    }
    if old_class_count > student_logits.cols() || old_class_count > teacher_logits.cols() {
        return Err(Error::DimensionMismatch(format!(
            "old_class_count {} exceeds logit widths {} / {}",
            old_class_count,
            student_logits.cols(),
            teacher_logits.cols()
        )));
    }

    let batch = student_logits.rows();
    let mut grad = DenseMatrix::zeros(batch, student_logits.cols());
    if old_class_count == 0 || batch == 0 {
        return Ok((0.0, grad));
    }

    let tau = temperature;
    let mut p = vec![0.0; old_class_count]; // teacher, softened
    let mut q = vec![0.0; old_class_count]; // student, softened
    let mut scaled = vec![0.0; old_class_count];
    let mut loss = 0.0;
    for b in 0..batch {
        for (s, &z) in scaled.iter_mut().zip(&teacher_logits.row(b)[..old_class_count]) {
            *s = z / tau;
        }
        softmax_into(&scaled, &mut p);
        for (s, &z) in scaled.iter_mut().zip(&student_logits.row(b)[..old_class_count]) {
            *s = z / tau;
        }
        softmax_into(&scaled, &mut q);

        let mut kl = 0.0;
        for c in 0..old_class_count {
            if p[c] > 0.0 {
                kl += p[c] * (p[c].ln() - q[c].ln());
            }
        }
        loss += kl;

        // d loss / d z_student = τ/batch · (q − p) on the masked columns.
        let gr = grad.row_mut(b);
        let scale = tau / batch as f64;
        for c in 0..old_class_count {
            gr[c] = scale * (q[c] - p[c]);
        }
    }
    // KL is non-negative; guard the sum against -1e-17 style round-off.
    let loss = (tau * tau * loss / batch as f64).max(0.0);
    Ok((loss, grad))
}
