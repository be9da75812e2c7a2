//! Weight predictors whose residues the codec transmits.
//!
//! Four modes predict the post-training local weights from the broadcast
//! weights `w0` and a memory of past reconstructions:
//!
//! 1. `w0` itself (plain differential coding of the update),
//! 2. a coordinate-wise affine map `α ∘ w0 + α₀` adapted by gradient descent,
//! 3. `w0` minus the mean of the last `R` reconstructed updates,
//! 4. `w0` minus `c · m̂ / (√v̂ + ε)` built from exponential moment trackers.
//!
//! Every state change is a deterministic function of values both the worker
//! and the server hold, so the two memory copies stay bit-identical.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PredictionMode {
    Identity,
    Linear,
    MovingAverage,
    Moment,
}

impl PredictionMode {
    pub const ALL: [PredictionMode; 4] = [
        PredictionMode::Identity,
        PredictionMode::Linear,
        PredictionMode::MovingAverage,
        PredictionMode::Moment,
    ];

    /// Mode number in `1..=4`.
    pub fn id(self) -> u8 {
        match self {
            PredictionMode::Identity => 1,
            PredictionMode::Linear => 2,
            PredictionMode::MovingAverage => 3,
            PredictionMode::Moment => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(PredictionMode::Identity),
            2 => Some(PredictionMode::Linear),
            3 => Some(PredictionMode::MovingAverage),
            4 => Some(PredictionMode::Moment),
            _ => None,
        }
    }

    /// Modes `1..=n`.
    pub fn first(n: usize) -> Vec<PredictionMode> {
        Self::ALL.iter().copied().take(n).collect()
    }
}

/// Which reconstructed update the memory tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryVariant {
    /// Per worker: `w0 - ŵ_m`; the server keeps one mirror per worker.
    PerWorker,
    /// Shared: `w^(k) - w^(k+1)`; one O(d) memory for all workers.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub modes: Vec<PredictionMode>,
    /// Step size of the linear-predictor coefficient update.
    pub ar_step: f64,
    /// Moving-average order.
    pub ma_order: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub moment_scale: f64,
    pub epsilon: f64,
    pub memory: MemoryVariant,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            modes: PredictionMode::ALL.to_vec(),
            ar_step: 1e-3,
            ma_order: 3,
            beta1: 0.8,
            beta2: 0.99,
            moment_scale: 1e-2,
            epsilon: 1e-8,
            memory: MemoryVariant::PerWorker,
        }
    }
}

impl PredictorConfig {
    pub fn with_modes(modes: Vec<PredictionMode>) -> Self {
        Self {
            modes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::config("modes", "at least one prediction mode must be enabled"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return Err(Error::config("moment_beta1", "must lie in (0, 1)"));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::config("moment_beta2", "must lie in (0, 1)"));
        }
        if self.ma_order == 0 {
            return Err(Error::config("ma_order", "must be at least 1"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if !(self.ar_step >= 0.0 && self.ar_step.is_finite()) {
            return Err(Error::config("ar_step", "must be finite and nonnegative"));
        }
        if !self.moment_scale.is_finite() {
            return Err(Error::config("moment_scale", "must be finite"));
        }
        Ok(())
    }

    /// Enabled modes in ascending id order without duplicates.
    pub fn enabled(&self) -> Vec<PredictionMode> {
        let mut modes = self.modes.clone();
        modes.sort();
        modes.dedup();
        modes
    }
}

/// Predictor state mirrored on both ends of the link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorMemory {
    pub delta_history: VecDeque<ParamVector>,
    pub ar_coeff: ParamVector,
    pub ar_bias: ParamVector,
    pub moment1: ParamVector,
    pub moment2: ParamVector,
    pub round: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub prediction: ParamVector,
    pub mode: PredictionMode,
    /// Squared ℓ₂ prediction error of every evaluated mode.
    pub errors: Vec<(PredictionMode, f64)>,
}

impl PredictionResult {
    pub fn error(&self) -> f64 {
        self.errors
            .iter()
            .find(|(m, _)| *m == self.mode)
            .map(|(_, e)| *e)
            .unwrap_or(f64::NAN)
    }
}

impl PredictorMemory {
    /// Cold-start memory: identity linear predictor, zero moments, no history.
    pub fn new(d: usize) -> Self {
        Self {
            delta_history: VecDeque::new(),
            ar_coeff: ParamVector::filled(d, 1.0),
            ar_bias: ParamVector::zeros(d),
            moment1: ParamVector::zeros(d),
            moment2: ParamVector::zeros(d),
            round: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.ar_coeff.len()
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        fn same(a: &ParamVector, b: &ParamVector) -> bool {
            a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.round == other.round
            && self.delta_history.len() == other.delta_history.len()
            && self
                .delta_history
                .iter()
                .zip(&other.delta_history)
                .all(|(a, b)| same(a, b))
            && same(&self.ar_coeff, &other.ar_coeff)
            && same(&self.ar_bias, &other.ar_bias)
            && same(&self.moment1, &other.moment1)
            && same(&self.moment2, &other.moment2)
    }

    /// Prediction of the post-training weights under `mode`.
    pub fn predict(&self, mode: PredictionMode, w0: &ParamVector, cfg: &PredictorConfig) -> Result<ParamVector> {
        w0.check_len(self.dim())?;
        if self.round == 0 {
            return Ok(w0.clone());
        }
        let w = w0.as_slice();
        let out = match mode {
            PredictionMode::Identity => w0.clone(),
            PredictionMode::Linear => self.linear_prediction(w0),
            PredictionMode::MovingAverage => {
                let r = cfg.ma_order.min(self.delta_history.len());
                if r == 0 {
                    return Ok(w0.clone());
                }
                // most recent deltas sit at the back
                let mut mean = vec![0.0; w.len()];
                for delta in self.delta_history.iter().rev().take(r) {
                    for (acc, v) in mean.iter_mut().zip(delta.iter()) {
                        *acc += v;
                    }
                }
                let inv = 1.0 / r as f64;
                ParamVector::new(w.iter().zip(mean).map(|(wi, s)| wi - s * inv).collect())
            }
            PredictionMode::Moment => {
                let c = cfg.moment_scale;
                ParamVector::new(
                    w.iter()
                        .zip(self.moment1.iter().zip(self.moment2.iter()))
                        .map(|(wi, (m, v))| wi - c * m / (v.sqrt() + cfg.epsilon))
                        .collect(),
                )
            }
        };
        Ok(out)
    }

    fn linear_prediction(&self, w0: &ParamVector) -> ParamVector {
        ParamVector::new(
            w0.iter()
                .zip(self.ar_coeff.iter().zip(self.ar_bias.iter()))
                .map(|(w, (a, b))| a * w + b)
                .collect(),
        )
    }

    /// Evaluates every enabled mode against the true weights and keeps the one
    /// with the smallest squared error; ties go to the lowest mode id.
    pub fn select_mode(&self, w_true: &ParamVector, w0: &ParamVector, cfg: &PredictorConfig) -> Result<PredictionResult> {
        w_true.check_len(self.dim())?;
        let mut best: Option<(PredictionMode, ParamVector, f64)> = None;
        let mut errors = Vec::new();
        for mode in cfg.enabled() {
            let prediction = self.predict(mode, w0, cfg)?;
            let err = prediction.dist_sq(w_true);
            errors.push((mode, err));
            if best.as_ref().is_none_or(|(_, _, e)| err < *e) {
                best = Some((mode, prediction, err));
            }
        }
        let (mode, prediction, _) =
            best.ok_or_else(|| Error::config("modes", "at least one prediction mode must be enabled"))?;
        Ok(PredictionResult {
            prediction,
            mode,
            errors,
        })
    }

    /// One gradient step on `(1/d)‖α∘w0 + α₀ − ŵ‖²` for both the coefficients
    /// and the bias. Returns the MSE before the step.
    pub fn update_ar_coefficients(&mut self, w0: &ParamVector, w_hat: &ParamVector, cfg: &PredictorConfig) -> Result<f64> {
        let d = self.dim();
        w0.check_len(d)?;
        w_hat.check_len(d)?;
        let predicted = self.linear_prediction(w0);
        let mse = predicted.dist_sq(w_hat) / d as f64;
        let scale = 2.0 * cfg.ar_step / d as f64;
        for i in 0..d {
            let err = predicted[i] - w_hat[i];
            self.ar_coeff[i] -= scale * err * w0[i];
            self.ar_bias[i] -= scale * err;
        }
        Ok(mse)
    }

    /// End-of-round update, run identically by encoder and decoder.
    ///
    /// `w_hat` is the reconstructed local model; `global_next` is the next
    /// broadcast model and is required by the [`MemoryVariant::Global`] memory,
    /// which tracks `w0 - global_next` instead of `w0 - w_hat`.
    pub fn update_memory(
        &mut self,
        w0: &ParamVector,
        w_hat: &ParamVector,
        global_next: Option<&ParamVector>,
        cfg: &PredictorConfig,
    ) -> Result<()> {
        self.update_ar_coefficients(w0, w_hat, cfg)?;
        let delta = match cfg.memory {
            MemoryVariant::PerWorker => w0.sub(w_hat),
            MemoryVariant::Global => {
                let next = global_next
                    .ok_or_else(|| Error::contract("global memory update needs the next global model"))?;
                next.check_len(self.dim())?;
                w0.sub(next)
            }
        };
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        for i in 0..delta.len() {
            let u = delta[i];
            self.moment1[i] = b1 * self.moment1[i] + (1.0 - b1) * u;
            self.moment2[i] = b2 * self.moment2[i] + (1.0 - b2) * u * u;
        }
        self.delta_history.push_back(delta);
        while self.delta_history.len() > cfg.ma_order {
            self.delta_history.pop_front();
        }
        self.round += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> ParamVector {
        ParamVector::new(x.to_vec())
    }

    fn random_vec(rng: &mut impl Rng, d: usize, scale: f64) -> ParamVector {
        ParamVector::new((0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect())
    }

    /// Memory after `rounds` synthetic updates.
    fn warmed(rng: &mut impl Rng, d: usize, rounds: usize, cfg: &PredictorConfig) -> PredictorMemory {
        let mut mem = PredictorMemory::new(d);
        for _ in 0..rounds {
            let w0 = random_vec(rng, d, 1.0);
            let w_hat = w0.sub(&random_vec(rng, d, 0.05));
            mem.update_memory(&w0, &w_hat, None, cfg).unwrap();
        }
        mem
    }

    #[test]
    fn identity_mode_returns_w0() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = PredictorConfig::default();
        let mem = warmed(&mut rng, 5, 4, &cfg);
        let w0 = random_vec(&mut rng, 5, 1.0);
        assert_eq!(mem.predict(PredictionMode::Identity, &w0, &cfg).unwrap(), w0);
    }

    #[test]
    fn moment_mode_with_zero_first_moment_returns_w0() {
        let cfg = PredictorConfig::default();
        let mut mem = PredictorMemory::new(3);
        mem.round = 5;
        mem.moment2 = v(&[0.3, 0.0, 1.0]);
        let w0 = v(&[1.0, -2.0, 0.5]);
        assert_eq!(mem.predict(PredictionMode::Moment, &w0, &cfg).unwrap(), w0);
    }

    #[test]
    fn moving_average_single_delta() {
        let cfg = PredictorConfig {
            ma_order: 1,
            ..PredictorConfig::default()
        };
        let mut mem = PredictorMemory::new(2);
        mem.delta_history.push_back(v(&[0.1, -0.2]));
        mem.round = 1;
        let p = mem.predict(PredictionMode::MovingAverage, &v(&[1.0, 1.0]), &cfg).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15 && (p[1] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn moving_average_uses_available_history_only() {
        let cfg = PredictorConfig::default(); // R = 3
        let mut mem = PredictorMemory::new(1);
        mem.delta_history.push_back(v(&[0.2]));
        mem.delta_history.push_back(v(&[0.4]));
        mem.round = 2;
        let p = mem.predict(PredictionMode::MovingAverage, &v(&[1.0]), &cfg).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn cold_start_predicts_w0_in_every_mode() {
        let cfg = PredictorConfig::default();
        let mut mem = PredictorMemory::new(2);
        mem.moment1 = v(&[1.0, 1.0]); // ignored before the first update
        let w0 = v(&[0.3, 0.4]);
        for mode in PredictionMode::ALL {
            assert_eq!(mem.predict(mode, &w0, &cfg).unwrap(), w0);
        }
    }

    #[test]
    fn singleton_mode_set_gives_negative_update_residual() {
        let cfg = PredictorConfig::with_modes(vec![PredictionMode::Identity]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mem = warmed(&mut rng, 6, 3, &cfg);
        let w0 = random_vec(&mut rng, 6, 1.0);
        let w = random_vec(&mut rng, 6, 1.0);
        let res = mem.select_mode(&w, &w0, &cfg).unwrap();
        assert_eq!(res.mode, PredictionMode::Identity);
        assert_eq!(w.sub(&res.prediction), w0.sub(&w).iter().map(|x| -x).collect::<Vec<_>>().into());
    }

    #[test]
    fn exact_moving_average_match_is_selected() {
        let cfg = PredictorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mem = warmed(&mut rng, 8, 5, &cfg);
        let w0 = random_vec(&mut rng, 8, 1.0);
        let target = mem.predict(PredictionMode::MovingAverage, &w0, &cfg).unwrap();
        let res = mem.select_mode(&target, &w0, &cfg).unwrap();
        assert_eq!(res.mode, PredictionMode::MovingAverage);
        assert_eq!(res.error(), 0.0);
    }

    #[test]
    fn ties_go_to_lowest_mode() {
        let cfg = PredictorConfig::default();
        let mem = PredictorMemory::new(3);
        let w0 = v(&[1.0, 2.0, 3.0]);
        let res = mem.select_mode(&v(&[0.0, 0.0, 0.0]), &w0, &cfg).unwrap();
        assert_eq!(res.mode, PredictionMode::Identity);
        assert_eq!(res.errors.len(), 4);
    }

    #[test]
    fn superset_of_modes_never_worse() {
        let all = PredictorConfig::default();
        let one = PredictorConfig::with_modes(vec![PredictionMode::Identity]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut mem = PredictorMemory::new(16);
        for _ in 0..50 {
            let w0 = random_vec(&mut rng, 16, 1.0);
            let w = w0.sub(&random_vec(&mut rng, 16, 0.05));
            let e_all = mem.select_mode(&w, &w0, &all).unwrap().error();
            let e_one = mem.select_mode(&w, &w0, &one).unwrap().error();
            // brute-force minimum over the four modes
            let brute = PredictionMode::ALL
                .iter()
                .map(|&m| mem.predict(m, &w0, &all).unwrap().dist_sq(&w))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(e_all, brute);
            assert!(e_all <= e_one);
            let w_hat = w.sub(&random_vec(&mut rng, 16, 0.01));
            mem.update_memory(&w0, &w_hat, None, &all).unwrap();
        }
    }

    #[test]
    fn ar_update_zero_step_is_noop() {
        let cfg = PredictorConfig {
            ar_step: 0.0,
            ..PredictorConfig::default()
        };
        let mut mem = PredictorMemory::new(3);
        let before = mem.clone();
        mem.update_ar_coefficients(&v(&[1.0, 2.0, 3.0]), &v(&[0.0, 5.0, -1.0]), &cfg)
            .unwrap();
        assert_eq!(mem.ar_coeff, before.ar_coeff);
        assert_eq!(mem.ar_bias, before.ar_bias);
    }

    #[test]
    fn ar_update_hand_example() {
        // d = 1, α = 1, α₀ = 0, w0 = 2, ŵ = 3, a = 0.5:
        // w̃ = 2, ∂MSE/∂α = 2(2 − 3)·2 = −4 → α = 1 + 0.5·4 = 3; ∂MSE/∂α₀ = −2 → α₀ = 1
        let cfg = PredictorConfig {
            ar_step: 0.5,
            ..PredictorConfig::default()
        };
        let mut mem = PredictorMemory::new(1);
        let mse = mem.update_ar_coefficients(&v(&[2.0]), &v(&[3.0]), &cfg).unwrap();
        assert_eq!(mse, 1.0);
        assert_eq!(mem.ar_coeff[0], 3.0);
        assert_eq!(mem.ar_bias[0], 1.0);
    }

    #[test]
    fn ar_update_descends() {
        let cfg = PredictorConfig {
            ar_step: 1e-4,
            ..PredictorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let d = rng.random_range(1..40);
            let mut mem = PredictorMemory::new(d);
            mem.ar_coeff = random_vec(&mut rng, d, 2.0);
            mem.ar_bias = random_vec(&mut rng, d, 1.0);
            let w0 = random_vec(&mut rng, d, 3.0);
            let w_hat = random_vec(&mut rng, d, 3.0);
            let old = mem.update_ar_coefficients(&w0, &w_hat, &cfg).unwrap();
            let new = mem.linear_prediction(&w0).dist_sq(&w_hat) / d as f64;
            assert!(new < old || old == 0.0, "{new} !< {old}");
        }
    }

    #[test]
    fn first_update_sets_scaled_moment() {
        let cfg = PredictorConfig::default();
        let mut mem = PredictorMemory::new(3);
        let w0 = v(&[1.0, 1.0, 1.0]);
        let w_hat = v(&[0.5, 1.25, 1.0]);
        mem.update_memory(&w0, &w_hat, None, &cfg).unwrap();
        let u = w0.sub(&w_hat);
        for i in 0..3 {
            assert_eq!(mem.moment1[i], (1.0 - cfg.beta1) * u[i]);
            assert_eq!(mem.moment2[i], (1.0 - cfg.beta2) * u[i] * u[i]);
        }
        assert_eq!(mem.round, 1);
    }

    #[test]
    fn unchanged_round_pushes_zero_delta() {
        let cfg = PredictorConfig::default();
        let mut mem = PredictorMemory::new(2);
        let w0 = v(&[0.7, -0.1]);
        mem.update_memory(&w0, &w0, None, &cfg).unwrap();
        assert_eq!(mem.delta_history.back().unwrap(), &ParamVector::zeros(2));
    }

    #[test]
    fn history_is_bounded_by_order() {
        let cfg = PredictorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mem = warmed(&mut rng, 4, 10, &cfg);
        assert_eq!(mem.delta_history.len(), cfg.ma_order);
        assert!(mem.moment2.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn global_variant_tracks_broadcast_difference() {
        let cfg = PredictorConfig {
            memory: MemoryVariant::Global,
            ..PredictorConfig::default()
        };
        let mut mem = PredictorMemory::new(2);
        let w0 = v(&[1.0, 2.0]);
        let next = v(&[0.5, 2.5]);
        assert!(mem.update_memory(&w0, &next, None, &cfg).is_err());
        mem.update_memory(&w0, &next, Some(&next), &cfg).unwrap();
        assert_eq!(mem.delta_history[0], v(&[0.5, -0.5]));
    }

    #[test]
    fn mirrored_memories_stay_bit_identical() {
        let cfg = PredictorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut enc = PredictorMemory::new(32);
        let mut dec = PredictorMemory::new(32);
        for _ in 0..10 {
            let w0 = random_vec(&mut rng, 32, 1.0);
            let w_hat = w0.sub(&random_vec(&mut rng, 32, 0.1));
            enc.update_memory(&w0, &w_hat, None, &cfg).unwrap();
            dec.update_memory(&w0.clone(), &w_hat.clone(), None, &cfg).unwrap();
            assert!(enc.bit_eq(&dec));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(PredictorConfig::with_modes(vec![]).validate().is_err());
        let bad = PredictorConfig {
            beta2: 1.0,
            ..PredictorConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PredictorConfig {
            ma_order: 0,
            ..PredictorConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
