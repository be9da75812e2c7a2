//! Executable forms of the convergence conditions and the two coding lemmas.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::ResidualStats;
use crate::error::{Error, Result};
use crate::quantizer::variance_bound;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    /// Smoothness constant `L`.
    pub smoothness: f64,
    pub learning_rate: f64,
    pub local_steps: usize,
    pub workers: usize,
    /// Prediction-error ratio `p`.
    pub prediction_ratio: f64,
    /// Quantization-error ratio `q`.
    pub quantization_ratio: f64,
    /// Stochastic-gradient variance `σ²`.
    pub grad_noise: f64,
    pub f_opt: f64,
    pub f_init: f64,
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("smoothness", self.smoothness),
            ("learning_rate", self.learning_rate),
            ("prediction_ratio", self.prediction_ratio),
            ("quantization_ratio", self.quantization_ratio),
            ("grad_noise", self.grad_noise),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be finite and nonnegative")));
            }
        }
        if self.local_steps == 0 || self.workers == 0 {
            return Err(Error::contract("local_steps and workers must be at least 1"));
        }
        Ok(())
    }

    /// `L²η²τ(τ−1)/2 + Lητ(qp/M + 1)`.
    pub fn lr_constraint_lhs(&self) -> f64 {
        let l = self.smoothness;
        let eta = self.learning_rate;
        let tau = self.local_steps as f64;
        let m = self.workers as f64;
        let qp = self.quantization_ratio * self.prediction_ratio;
        l * l * eta * eta * tau * (tau - 1.0) / 2.0 + l * eta * tau * (qp / m + 1.0)
    }

    pub fn lr_constraint_satisfied(&self) -> bool {
        self.lr_constraint_lhs() <= 1.0
    }

    /// Upper bound on the average squared gradient norm after `rounds` rounds:
    /// `2[f(w⁰) − f*]/(ητK) + Lη((qp+1)/M + Lη(τ−1)/2)σ²`.
    pub fn convergence_bound_rhs(&self, rounds: usize) -> Result<f64> {
        self.validate()?;
        if rounds == 0 {
            return Err(Error::contract("bound needs at least one round"));
        }
        if self.learning_rate == 0.0 {
            return Err(Error::contract("bound is undefined for a zero learning rate"));
        }
        let l = self.smoothness;
        let eta = self.learning_rate;
        let tau = self.local_steps as f64;
        let m = self.workers as f64;
        let qp = self.quantization_ratio * self.prediction_ratio;
        let optimisation = 2.0 * (self.f_init - self.f_opt) / (eta * tau * rounds as f64);
        let noise = l * eta * ((qp + 1.0) / m + l * eta * (tau - 1.0) / 2.0) * self.grad_noise;
        Ok(optimisation + noise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinErrorPoint {
    pub modes: usize,
    pub mean: f64,
    pub std: f64,
}

/// Monte Carlo estimate of `E[min(X_1..X_N)]` for i.i.d. `X_i ~ N(mu, sigma²)`,
/// `N = 1..=n_max`. Each repetition draws `n_max` errors and reports the
/// running minimum, so all `N` share the same draws.
pub fn lemma1_monte_carlo<R: Rng + ?Sized>(
    mu: f64,
    sigma: f64,
    n_max: usize,
    reps: usize,
    rng: &mut R,
) -> Result<Vec<MinErrorPoint>> {
    if reps == 0 || n_max == 0 {
        return Err(Error::contract("need at least one repetition and one mode"));
    }
    let normal = Normal::new(mu, sigma).map_err(|e| Error::contract(format!("normal: {e}")))?;
    let mut sum = vec![0.0; n_max];
    let mut sum_sq = vec![0.0; n_max];
    for _ in 0..reps {
        let mut running = f64::INFINITY;
        for n in 0..n_max {
            running = running.min(normal.sample(rng));
            sum[n] += running;
            sum_sq[n] += running * running;
        }
    }
    let r = reps as f64;
    Ok((0..n_max)
        .map(|n| {
            let mean = sum[n] / r;
            let var = (sum_sq[n] / r - mean * mean).max(0.0);
            MinErrorPoint {
                modes: n + 1,
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

/// Skewness beyond this magnitude marks a round as visibly asymmetric.
pub const SKEW_FLAG: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAssumptions {
    pub round: usize,
    pub mean_skewness: f64,
    pub skew_flagged: bool,
    /// Pooled `Σ‖e‖² / Σ‖Δ‖²` over workers; `None` if no worker moved.
    pub prediction_ratio: Option<f64>,
    /// Pooled `Σ E‖Q(e) − e‖² / Σ‖e‖²` over workers, the expected
    /// quantization-noise ratio given the residues; `None` if all were zero.
    pub quantization_ratio: Option<f64>,
    /// Largest single-worker `‖Q(e) − e‖² / ‖e‖²` (one random draw each).
    pub max_worker_quantization_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub rounds: Vec<RoundAssumptions>,
    pub median_prediction_ratio: Option<f64>,
    /// Largest pooled per-round quantization ratio.
    pub max_quantization_ratio: f64,
    pub quantization_bound: f64,
    pub quantization_within_bound: bool,
    pub flagged_rounds: usize,
}

/// Summarises residue symmetry, prediction-error ratio and quantization-error
/// ratio from the per-worker statistics of every round.
pub fn empirical_assumption_checks(rounds: &[Vec<ResidualStats>], d: usize, s: u32) -> AssumptionReport {
    let quantization_bound = variance_bound(d, s);
    let per_round: Vec<RoundAssumptions> = rounds
        .iter()
        .enumerate()
        .map(|(round, stats)| {
            let n = stats.len().max(1) as f64;
            let mean_skewness = stats.iter().map(|s| s.skewness).sum::<f64>() / n;
            let e_sq: f64 = stats.iter().map(|s| s.residual_sq).sum();
            let delta_sq: f64 = stats.iter().map(|s| s.delta_sq).sum();
            let q_sq: f64 = stats.iter().map(|s| s.expected_quant_error_sq).sum();
            let max_q = stats
                .iter()
                .map(|s| if s.residual_sq > 0.0 { s.quant_error_sq / s.residual_sq } else { 0.0 })
                .fold(0.0, f64::max);
            RoundAssumptions {
                round,
                mean_skewness,
                skew_flagged: mean_skewness.abs() > SKEW_FLAG,
                prediction_ratio: (delta_sq > 0.0).then(|| e_sq / delta_sq),
                quantization_ratio: (e_sq > 0.0).then(|| q_sq / e_sq),
                max_worker_quantization_ratio: max_q,
            }
        })
        .collect();
    let mut ratios: Vec<f64> = per_round.iter().filter_map(|r| r.prediction_ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let median = if ratios.is_empty() {
        None
    } else if ratios.len() % 2 == 1 {
        Some(ratios[ratios.len() / 2])
    } else {
        Some(0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2]))
    };
    let max_q = per_round
        .iter()
        .filter_map(|r| r.quantization_ratio)
        .fold(0.0, f64::max);
    AssumptionReport {
        flagged_rounds: per_round.iter().filter(|r| r.skew_flagged).count(),
        rounds: per_round,
        median_prediction_ratio: median,
        max_quantization_ratio: max_q,
        quantization_bound,
        quantization_within_bound: max_q <= quantization_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base() -> TheoryParams {
        TheoryParams {
            smoothness: 1.0,
            learning_rate: 0.3,
            local_steps: 2,
            workers: 1,
            prediction_ratio: 1.0,
            quantization_ratio: 1.0,
            grad_noise: 1.0,
            f_opt: 0.0,
            f_init: 1.0,
        }
    }

    #[test]
    fn constraint_hand_example() {
        // 0.09·2·1/2 + 0.3·2·(1 + 1) = 0.09 + 1.2 = 1.29
        let tp = base();
        assert!((tp.lr_constraint_lhs() - 1.29).abs() < 1e-12);
        assert!(!tp.lr_constraint_satisfied());
    }

    #[test]
    fn constraint_reduces_to_l_eta_for_single_step_ideal_coding() {
        let tp = TheoryParams {
            local_steps: 1,
            prediction_ratio: 0.0,
            quantization_ratio: 0.0,
            smoothness: 4.0,
            learning_rate: 0.25,
            ..base()
        };
        assert_eq!(tp.lr_constraint_lhs(), 1.0);
        assert!(tp.lr_constraint_satisfied());
        let zero = TheoryParams {
            learning_rate: 0.0,
            ..base()
        };
        assert!(zero.lr_constraint_satisfied());
    }

    #[test]
    fn bound_noise_term_without_prediction_error() {
        let tp = TheoryParams {
            prediction_ratio: 0.0,
            workers: 4,
            local_steps: 5,
            learning_rate: 0.1,
            smoothness: 2.0,
            grad_noise: 3.0,
            ..base()
        };
        let k = 1_000_000_000;
        let expected_noise = 2.0 * 0.1 * (1.0 / 4.0 + 2.0 * 0.1 * 4.0 / 2.0) * 3.0;
        let opt = 2.0 * 1.0 / (0.1 * 5.0 * k as f64);
        assert!((tp.convergence_bound_rhs(k).unwrap() - (opt + expected_noise)).abs() < 1e-12);
    }

    #[test]
    fn bound_vanishes_without_noise() {
        let tp = TheoryParams {
            grad_noise: 0.0,
            ..base()
        };
        assert!(tp.convergence_bound_rhs(10).unwrap() > tp.convergence_bound_rhs(10_000).unwrap());
        assert!(tp.convergence_bound_rhs(usize::MAX).unwrap() < 1e-15);
        assert!(tp.convergence_bound_rhs(0).is_err());
    }

    #[test]
    fn monte_carlo_is_seed_deterministic_and_monotone() {
        let a = lemma1_monte_carlo(400.0, 30.0, 6, 2000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = lemma1_monte_carlo(400.0, 30.0, 6, 2000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[1].mean <= w[0].mean));
    }

    #[test]
    fn identity_prediction_ratio_is_one() {
        let stats = vec![vec![
            ResidualStats {
                residual_sq: 2.5,
                delta_sq: 2.5,
                quant_error_sq: 1.0,
                expected_quant_error_sq: 1.0,
                skewness: 0.1,
            },
            ResidualStats {
                residual_sq: 0.5,
                delta_sq: 0.5,
                quant_error_sq: 0.0,
                expected_quant_error_sq: 0.0,
                skewness: -0.1,
            },
        ]];
        let report = empirical_assumption_checks(&stats, 100, 1);
        assert_eq!(report.rounds[0].prediction_ratio, Some(1.0));
        assert!((report.max_quantization_ratio - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.rounds[0].max_worker_quantization_ratio, 0.4);
        assert!(report.quantization_within_bound);
        assert_eq!(report.flagged_rounds, 0);
    }
}
