//! Gradient consistency regularization.
//!
//! Keeps an exponential moving average ḡ of observed gradients and nudges
//! each incoming gradient by its deviation from that average:
//!
//! ```text
//! g' = g + λ·(g − ḡ_prev)        (applied with the pre-update average)
//! ḡ  = β·ḡ_prev + (1 − β)·g      (updated afterwards)
//! ```
//!
//! The first observed gradient initializes ḡ directly, so the first step is
//! always a no-op correction.

use serde::{Deserialize, Serialize};

use crate::nn::FlatGradient;
use crate::{Error, Result};

/// When the moving average absorbs new gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmaCadence {
    /// Update after every mini-batch gradient.
    PerBatch,
    /// Update once per epoch with the epoch's mean gradient.
    PerEpochMean,
}

impl EmaCadence {
    pub fn name(&self) -> &'static str {
        match self {
            EmaCadence::PerBatch => "per_batch",
            EmaCadence::PerEpochMean => "per_epoch_mean",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "per_batch" => Ok(EmaCadence::PerBatch),
            "per_epoch_mean" => Ok(EmaCadence::PerEpochMean),
            other => Err(Error::InvalidConfig(format!(
                "unknown EMA cadence '{other}' (expected per_batch or per_epoch_mean)"
            ))),
        }
    }
}

/// Regularization strength and moving-average behaviour.
///
/// `lambda_gcr == 0` disables the mechanism entirely: gradients pass through
/// untouched and no average is maintained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcrConfig {
    pub lambda_gcr: f64,
    pub beta: f64,
    pub reset_on_task_boundary: bool,
    pub cadence: EmaCadence,
}

impl Default for GcrConfig {
    fn default() -> Self {
        Self {
            lambda_gcr: 0.1,
            beta: 0.9,
            reset_on_task_boundary: false,
            cadence: EmaCadence::PerBatch,
        }
    }
}

impl GcrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gcr.is_finite() && self.lambda_gcr >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_gcr must be finite and >= 0, got {}",
                self.lambda_gcr
            )));
        }
        if !(self.beta.is_finite() && (0.0..1.0).contains(&self.beta)) {
            return Err(Error::InvalidConfig(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn enabled(&self) -> bool {
        self.lambda_gcr > 0.0
    }
}

/// The gradient moving average ḡ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    g_bar: Option<Vec<f64>>,
    beta: f64,
    update_count: u64,
}

impl EmaState {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && (0.0..1.0).contains(&beta)) {
            return Err(Error::InvalidConfig(format!(
                "beta must lie in [0, 1), got {beta}"
            )));
        }
        Ok(Self {
            g_bar: None,
            beta,
            update_count: 0,
        })
    }

    pub fn from_config(config: &GcrConfig) -> Result<Self> {
        config.validate()?;
        Self::new(config.beta)
    }

    pub fn is_initialized(&self) -> bool {
        self.g_bar.is_some()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn g_bar(&self) -> Option<&[f64]> {
        self.g_bar.as_deref()
    }

    /// Forgets the average (used by the task-boundary reset option).
    pub fn reset(&mut self) {
        self.g_bar = None;
    }

    /// Carries the average across a parameter-layout change (head growth).
    /// `old_index_of[i]` locates new position `i` in the previous layout;
    /// positions without a predecessor have no history and start at zero.
    pub fn remap(&mut self, old_index_of: &[Option<usize>]) -> Result<()> {
        if let Some(bar) = &self.g_bar {
            let mut next = vec![0.0; old_index_of.len()];
            for (i, old) in old_index_of.iter().enumerate() {
                if let Some(old) = old {
                    let v = bar.get(*old).ok_or_else(|| {
                        Error::DimensionMismatch(format!(
                            "remap index {old} outside average of length {}",
                            bar.len()
                        ))
                    })?;
                    next[i] = *v;
                }
            }
            self.g_bar = Some(next);
        }
        Ok(())
    }

    fn check_len(&self, g: &FlatGradient) -> Result<()> {
        if let Some(bar) = &self.g_bar {
            if bar.len() != g.len() {
                return Err(Error::DimensionMismatch(format!(
                    "gradient length {} does not match moving average length {}",
                    g.len(),
                    bar.len()
                )));
            }
        }
        Ok(())
    }

    /// `g' = g + λ·(g − ḡ)` using the current (pre-update) average.
    /// An uninitialized state passes the gradient through unchanged.
    pub fn gcr_apply(&self, g: &FlatGradient, lambda_gcr: f64) -> Result<FlatGradient> {
        self.check_len(g)?;
        match &self.g_bar {
            None => Ok(g.clone()),
            Some(bar) => Ok(FlatGradient::from_vec(
                g.values()
                    .iter()
                    .zip(bar)
                    .map(|(gi, bi)| gi + lambda_gcr * (gi - bi))
                    .collect(),
            )),
        }
    }

    /// `ḡ ← β·ḡ + (1−β)·g`; the first update sets `ḡ = g`.
    pub fn ema_update(&mut self, g: &FlatGradient) -> Result<()> {
        self.check_len(g)?;
        match &mut self.g_bar {
            None => self.g_bar = Some(g.values().to_vec()),
            Some(bar) => {
                let beta = self.beta;
                for (bi, gi) in bar.iter_mut().zip(g.values()) {
                    *bi = beta * *bi + (1.0 - beta) * gi;
                }
            }
        }
        self.update_count += 1;
        Ok(())
    }

    /// Applies the correction with the pre-update average, then updates it.
    pub fn gcr_step(&mut self, g: &FlatGradient, config: &GcrConfig) -> Result<FlatGradient> {
        let out = self.gcr_apply(g, config.lambda_gcr)?;
        self.ema_update(g)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grad(values: &[f64]) -> FlatGradient {
        FlatGradient::from_vec(values.to_vec())
    }

    #[test]
    fn apply_hand_case() {
        let mut state = EmaState::new(0.9).unwrap();
        state.ema_update(&grad(&[1.0, 0.0])).unwrap();
        let out = state.gcr_apply(&grad(&[0.0, 1.0]), 0.1).unwrap();
        assert_eq!(out.values(), &[-0.1, 1.1]);
    }

    #[test]
    fn apply_identity_cases() {
        let mut state = EmaState::new(0.9).unwrap();
        state.ema_update(&grad(&[0.3, -0.7])).unwrap();
        // Zero deviation.
        let out = state.gcr_apply(&grad(&[0.3, -0.7]), 0.1).unwrap();
        assert_eq!(out.values(), &[0.3, -0.7]);
        // Zero strength.
        let out = state.gcr_apply(&grad(&[5.0, 2.0]), 0.0).unwrap();
        assert_eq!(out.values(), &[5.0, 2.0]);
    }

    #[test]
    fn ema_update_hand_case() {
        let mut state = EmaState::new(0.9).unwrap();
        state.ema_update(&grad(&[1.0, 0.0])).unwrap();
        state.ema_update(&grad(&[0.0, 1.0])).unwrap();
        let bar = state.g_bar().unwrap();
        assert!((bar[0] - 0.9).abs() < 1e-15);
        assert!((bar[1] - 0.1).abs() < 1e-15);
        assert_eq!(state.update_count(), 2);
    }

    #[test]
    fn constant_stream_is_a_fixed_point() {
        let mut state = EmaState::new(0.9).unwrap();
        let g = grad(&[0.25, -1.5, 3.0]);
        for _ in 0..20 {
            state.ema_update(&g).unwrap();
            for (b, v) in state.g_bar().unwrap().iter().zip(g.values()) {
                assert!((b - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn unrolled_recurrence_matches_closed_form() {
        let beta = 0.9;
        let gs: Vec<FlatGradient> = (0..10)
            .map(|i| grad(&[(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]))
            .collect();
        let mut state = EmaState::new(beta).unwrap();
        for g in &gs {
            state.ema_update(g).unwrap();
        }
        // ḡ_n = β^(n-1)·g_1 + Σ_{i=2..n} β^(n-i)·(1-β)·g_i  (ḡ_1 = g_1).
        let n = gs.len();
        for dim in 0..2 {
            let mut expect = beta.powi(n as i32 - 1) * gs[0].values()[dim];
            for (i, g) in gs.iter().enumerate().skip(1) {
                expect += beta.powi((n - 1 - i) as i32) * (1.0 - beta) * g.values()[dim];
            }
            let got = state.g_bar().unwrap()[dim];
            assert!(
                (got - expect).abs() < 1e-12,
                "dim {dim}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn step_uses_pre_update_average() {
        let config = GcrConfig::default();
        let mut state = EmaState::from_config(&config).unwrap();

        // First-ever call: pass-through and ḡ = g.
        let g1 = grad(&[1.0, 0.0]);
        let out = state.gcr_step(&g1, &config).unwrap();
        assert_eq!(out.values(), g1.values());
        assert_eq!(state.g_bar().unwrap(), g1.values());

        // Second call with the same gradient: still a fixed point.
        let out = state.gcr_step(&g1, &config).unwrap();
        assert_eq!(out.values(), g1.values());

        // A deviating call must be corrected against the OLD average.
        let g2 = grad(&[0.0, 1.0]);
        let expected_apply = state.gcr_apply(&g2, config.lambda_gcr).unwrap();
        let out = state.gcr_step(&g2, &config).unwrap();
        assert_eq!(out.values(), expected_apply.values());
    }

    #[test]
    fn three_step_trace_matches_hand_unroll() {
        let config = GcrConfig::default();
        let mut state = EmaState::from_config(&config).unwrap();
        let gs = [grad(&[1.0]), grad(&[2.0]), grad(&[0.5])];

        let out1 = state.gcr_step(&gs[0], &config).unwrap();
        assert_eq!(out1.values(), &[1.0]); // bootstrap

        // ḡ = 1.0; g' = 2 + 0.1·(2−1) = 2.1
        let out2 = state.gcr_step(&gs[1], &config).unwrap();
        assert!((out2.values()[0] - 2.1).abs() < 1e-15);

        // ḡ = 0.9·1 + 0.1·2 = 1.1; g' = 0.5 + 0.1·(0.5−1.1) = 0.44
        let out3 = state.gcr_step(&gs[2], &config).unwrap();
        assert!((out3.values()[0] - 0.44).abs() < 1e-15);

        // ḡ = 0.9·1.1 + 0.1·0.5 = 1.04
        assert!((state.g_bar().unwrap()[0] - 1.04).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut state = EmaState::new(0.9).unwrap();
        state.ema_update(&grad(&[1.0, 2.0])).unwrap();
        assert!(state.gcr_apply(&grad(&[1.0]), 0.1).is_err());
        assert!(state.ema_update(&grad(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn remap_keeps_history_and_zeroes_new_slots() {
        let mut state = EmaState::new(0.9).unwrap();
        state.ema_update(&grad(&[1.0, 2.0, 3.0])).unwrap();
        state
            .remap(&[Some(0), Some(1), None, Some(2), None])
            .unwrap();
        assert_eq!(state.g_bar().unwrap(), &[1.0, 2.0, 0.0, 3.0, 0.0]);
        // Uninitialized states are untouched.
        let mut fresh = EmaState::new(0.9).unwrap();
        fresh.remap(&[None, None]).unwrap();
        assert!(!fresh.is_initialized());
        // Out-of-range mapping is rejected.
        assert!(state.remap(&[Some(99)]).is_err());
    }

    #[test]
    fn serde_roundtrip() {
        let mut state = EmaState::new(0.9).unwrap();
        state.ema_update(&grad(&[0.5, -0.25])).unwrap();
        let json = serde_json::to_string(&state).unwrap();
        let back: EmaState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, state);
    }

    proptest! {
        #[test]
        fn correction_norm_is_exactly_lambda_scaled(
            bar in proptest::collection::vec(-3.0..3.0f64, 4),
            g in proptest::collection::vec(-3.0..3.0f64, 4),
            lambda in 0.0..2.0f64
        ) {
            let mut state = EmaState::new(0.9).unwrap();
            state.ema_update(&grad(&bar)).unwrap();
            let out = state.gcr_apply(&grad(&g), lambda).unwrap();
            let corr: f64 = out.values().iter().zip(&g)
                .map(|(o, gi)| (o - gi) * (o - gi)).sum::<f64>().sqrt();
            let dev: f64 = g.iter().zip(&bar)
                .map(|(gi, bi)| (gi - bi) * (gi - bi)).sum::<f64>().sqrt();
            prop_assert!((corr - lambda * dev).abs() <= 1e-12 * dev.max(1.0));
        }

        #[test]
        fn apply_is_affine_in_the_gradient(
            bar in proptest::collection::vec(-3.0..3.0f64, 3),
            g in proptest::collection::vec(-3.0..3.0f64, 3),
            h in proptest::collection::vec(-3.0..3.0f64, 3),
            t in 0.0..=1.0f64
        ) {
            // For fixed ḡ the map g ↦ g' has slope (1+λ) along any segment.
            let lambda = 0.1;
            let mut state = EmaState::new(0.9).unwrap();
            state.ema_update(&grad(&bar)).unwrap();
            let blend: Vec<f64> = g.iter().zip(&h).map(|(a, b)| a + t * (b - a)).collect();
            let fg = state.gcr_apply(&grad(&g), lambda).unwrap();
            let fh = state.gcr_apply(&grad(&h), lambda).unwrap();
            let fblend = state.gcr_apply(&grad(&blend), lambda).unwrap();
            for i in 0..3 {
                let interp = fg.values()[i] + t * (fh.values()[i] - fg.values()[i]);
                prop_assert!((fblend.values()[i] - interp).abs() < 1e-12);
            }
        }

        #[test]
        fn ema_stays_in_the_convex_ball(
            center in proptest::collection::vec(-2.0..2.0f64, 3),
            offsets in proptest::collection::vec(-1.0..1.0f64, 30)
        ) {
            // Every update lies within radius r of ḡ₀; convexity keeps ḡ there.
            let r: f64 = 3.0f64.sqrt(); // offsets bounded by 1 per coordinate
            let mut state = EmaState::new(0.9).unwrap();
            state.ema_update(&grad(&center)).unwrap();
            for chunk in offsets.chunks(3) {
                let g: Vec<f64> = center.iter().zip(chunk).map(|(c, o)| c + o).collect();
                state.ema_update(&grad(&g)).unwrap();
                let dist: f64 = state.g_bar().unwrap().iter().zip(&center)
                    .map(|(b, c)| (b - c) * (b - c)).sum::<f64>().sqrt();
                prop_assert!(dist <= r + 1e-9);
            }
        }
    }
}
