//! Self-contained verification suites behind `predcode verify`.
//!
//! Each suite returns a report of named checks; a suite passes when every
//! check passes. Suites are deterministic given the seed.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::codec::{self, CodecConfig, UplinkMessage};
use crate::config::ExperimentConfig;
use crate::entropy::{self, FrequencyTable};
use crate::error::{Error, Result};
use crate::experiment::run_seed;
use crate::param::ParamVector;
use crate::predictor::{PredictionMode, PredictorConfig, PredictorMemory};
use crate::quantizer::{self, QuantizerConfig, QuantizerFamily};
use crate::theory::{self, MinErrorPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Lemma1,
    Lemma2,
    Quantizer,
    CodecRoundtrip,
    Assumptions,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Lemma1,
        Suite::Lemma2,
        Suite::Quantizer,
        Suite::CodecRoundtrip,
        Suite::Assumptions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Lemma2 => "lemma2",
            Suite::Quantizer => "quantizer",
            Suite::CodecRoundtrip => "codec-roundtrip",
            Suite::Assumptions => "assumptions",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            Error::config(
                "suite",
                format!("unknown suite `{s}` (lemma1, lemma2, quantizer, codec-roundtrip or assumptions)"),
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Suite-specific measurements (curves, per-round diagnostics).
    pub details: serde_json::Value,
}

impl VerifyReport {
    fn new(suite: Suite, seed: u64, checks: Vec<Check>, details: serde_json::Value) -> Self {
        Self {
            suite,
            seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
            details,
        }
    }
}

/// `cfg` is only used by the `assumptions` suite, which trains a model.
pub fn run_suite(suite: Suite, seed: u64, cfg: &ExperimentConfig) -> Result<VerifyReport> {
    match suite {
        Suite::Lemma1 => lemma1(seed),
        Suite::Lemma2 => lemma2(seed),
        Suite::Quantizer => quantizer_suite(seed),
        Suite::CodecRoundtrip => codec_roundtrip(seed),
        Suite::Assumptions => assumptions(seed, cfg),
    }
}

pub const LEMMA1_MU: f64 = 400.0;
pub const LEMMA1_SIGMA: f64 = 30.0;
pub const LEMMA1_REPS: usize = 10_000;
pub const LEMMA1_MAX_MODES: usize = 6;

pub fn lemma1_curve(seed: u64) -> Result<Vec<MinErrorPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    theory::lemma1_monte_carlo(LEMMA1_MU, LEMMA1_SIGMA, LEMMA1_MAX_MODES, LEMMA1_REPS, &mut rng)
}

/// Closed form of `E[min(X1, X2)]` for i.i.d. normals.
pub fn min_of_two_mean(mu: f64, sigma: f64) -> f64 {
    mu - sigma / std::f64::consts::PI.sqrt()
}

fn lemma1(seed: u64) -> Result<VerifyReport> {
    let curve = lemma1_curve(seed)?;
    let e1 = curve[0].mean;
    let e2 = curve[1].mean;
    let e2_ref = min_of_two_mean(LEMMA1_MU, LEMMA1_SIGMA);
    let worst_step = curve.windows(2).map(|w| w[0].mean - w[1].mean).fold(f64::INFINITY, f64::min);
    let last = curve[LEMMA1_MAX_MODES - 1].mean;
    let checks = vec![
        Check::new("single_mode_mean", (e1 - LEMMA1_MU).abs() <= 1.0, format!("E[Y1] = {e1:.4}, expected {LEMMA1_MU} ± 1")),
        Check::new("two_mode_mean", (e2 - e2_ref).abs() <= 1.0, format!("E[Y2] = {e2:.4}, expected {e2_ref:.4} ± 1")),
        Check::new(
            "decreasing",
            worst_step > -0.5,
            format!("smallest E[Y_N] - E[Y_N+1] = {worst_step:.4}, must exceed -0.5"),
        ),
        Check::new(
            "overall_drop",
            last < e1 - 10.0,
            format!("E[Y{LEMMA1_MAX_MODES}] = {last:.4} vs E[Y1] - 10 = {:.4}", e1 - 10.0),
        ),
    ];
    Ok(VerifyReport::new(Suite::Lemma1, seed, checks, json!({ "curve": curve })))
}

/// A random symmetric level distribution: `(p0, side)` with `p0 + 2Σside = 1`.
pub fn random_level_distribution<R: Rng + ?Sized>(rng: &mut R) -> (f64, Vec<f64>) {
    let side_len = rng.random_range(1..=16);
    let p0: f64 = rng.random_range(1e-6..1.0);
    let raw: Vec<f64> = (0..side_len).map(|_| rng.random::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    let side = raw.iter().map(|r| r / sum * (1.0 - p0) / 2.0).collect();
    (p0, side)
}

fn lemma2(seed: u64) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (p0, side) = random_level_distribution(&mut rng);
        let gap = entropy::lemma2_length_gap(p0, &side)?;
        worst = worst.max((gap - p0).abs());
    }
    let checks = vec![Check::new(
        "gap_equals_p0",
        worst < 1e-12,
        format!("max |gap - p0| over 1000 distributions = {worst:e}"),
    )];
    Ok(VerifyReport::new(Suite::Lemma2, seed, checks, json!({ "max_abs_error": worst })))
}

fn gaussian_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ParamVector {
    ParamVector::new((0..d).map(|_| StandardNormal.sample(rng)).collect())
}

/// Largest per-coordinate deviation of the empirical mean of `draws`
/// stochastic quantizations from the input, in units of the exact standard
/// error of that mean.
pub fn stochastic_bias_z<R: Rng + ?Sized>(e: &ParamVector, s: u32, draws: usize, rng: &mut R) -> Result<f64> {
    let cfg = QuantizerConfig {
        levels: s,
        family: QuantizerFamily::Stochastic,
        ..QuantizerConfig::default()
    };
    let mut sum = vec![0.0; e.len()];
    for _ in 0..draws {
        let q = quantizer::quant_stochastic(e, &cfg, rng)?;
        for (acc, v) in sum.iter_mut().zip(quantizer::dequantize(&q).iter()) {
            *acc += v;
        }
    }
    let unit = cfg.scale * e.norm2() / s as f64;
    let mut worst = 0.0f64;
    for (i, &x) in e.iter().enumerate() {
        let mean = sum[i] / draws as f64;
        // Rounding between adjacent levels is Bernoulli in the fractional part.
        let frac = (x.abs() / unit).fract();
        let se = unit * (frac * (1.0 - frac) / draws as f64).sqrt();
        let dev = (mean - x).abs();
        let z = if se > 0.0 {
            dev / se
        } else if dev <= 1e-12 * unit {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRatio {
    /// Largest per-vector mean of `‖Q(e) − e‖² / ‖e‖²` over repeated draws.
    pub measured: f64,
    /// Largest per-vector exact expected ratio.
    pub expected: f64,
    /// Largest ratio seen in a single draw.
    pub single_draw: f64,
}

/// Quantization-noise ratio over `vectors` random Gaussian inputs, each
/// quantized `draws` times. The variance bound concerns the expectation, so
/// the measured value is the per-vector average over draws.
pub fn quantization_noise_ratio<R: Rng + ?Sized>(
    d: usize,
    s: u32,
    vectors: usize,
    draws: usize,
    rng: &mut R,
) -> Result<NoiseRatio> {
    let cfg = QuantizerConfig {
        levels: s,
        family: QuantizerFamily::Stochastic,
        ..QuantizerConfig::default()
    };
    let mut out = NoiseRatio {
        measured: 0.0,
        expected: 0.0,
        single_draw: 0.0,
    };
    for _ in 0..vectors {
        let e = gaussian_vector(d, rng);
        let energy = e.norm_sq();
        let mut total = 0.0;
        for _ in 0..draws {
            let q = quantizer::quant_stochastic(&e, &cfg, rng)?;
            let r = quantizer::dequantize(&q).dist_sq(&e) / energy;
            out.single_draw = out.single_draw.max(r);
            total += r;
        }
        out.measured = out.measured.max(total / draws as f64);
        out.expected = out.expected.max(quantizer::stochastic_noise_energy(&e, &cfg) / energy);
    }
    Ok(out)
}

/// Dimension of the vectors used for the per-coordinate bias check. Each
/// coordinate of an unbiased quantizer still exceeds 3 standard errors with
/// probability 0.27%, so a long vector would fail by chance (about 16% of
/// the time at d = 64); eight coordinates keep that near 2%.
pub const BIAS_DIM: usize = 8;
pub const BIAS_DRAWS: usize = 100_000;
/// Repeated quantizations per vector when estimating the noise ratio.
pub const NOISE_DRAWS: usize = 200;

fn quantizer_suite(seed: u64) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut details = Vec::new();
    for s in [1u32, 3] {
        let e = gaussian_vector(BIAS_DIM, &mut rng);
        let z = stochastic_bias_z(&e, s, BIAS_DRAWS, &mut rng)?;
        checks.push(Check::new(
            &format!("unbiased_d{BIAS_DIM}_s{s}"),
            z <= 3.0,
            format!("largest per-coordinate deviation = {z:.3} standard errors over {BIAS_DRAWS} draws"),
        ));
    }
    for d in [64usize, 1024] {
        for s in [1u32, 3] {
            let ratio = quantization_noise_ratio(d, s, 100, NOISE_DRAWS, &mut rng)?;
            let bound = quantizer::variance_bound(d, s);
            checks.push(Check::new(
                &format!("variance_bound_d{d}_s{s}"),
                ratio.measured <= bound,
                format!(
                    "max mean q over {NOISE_DRAWS} draws = {:.4} (exact {:.4}), bound min(d/s², √d/s) = {bound:.4}",
                    ratio.measured, ratio.expected
                ),
            ));
            details.push(json!({ "d": d, "s": s, "ratio": ratio, "bound": bound }));
        }
    }
    Ok(VerifyReport::new(Suite::Quantizer, seed, checks, json!({ "variance": details })))
}

/// Random frequency table and a sequence drawn from its support.
pub fn random_coding_case<R: Rng + ?Sized>(rng: &mut R) -> (FrequencyTable, Vec<u32>) {
    let alphabet = rng.random_range(1..=64usize);
    let weights: Vec<u32> = (0..alphabet)
        .map(|_| if rng.random_bool(0.2) { 0 } else { rng.random_range(1..=1000) })
        .collect();
    let support: Vec<u32> = (0..alphabet as u32).filter(|&i| weights[i as usize] > 0).collect();
    let support = if support.is_empty() { vec![0] } else { support };
    let len = rng.random_range(0..=400);
    let symbols: Vec<u32> = (0..len).map(|_| support[rng.random_range(0..support.len())]).collect();
    let table = if symbols.is_empty() {
        FrequencyTable::from_counts(vec![1; alphabet]).expect("positive counts")
    } else {
        FrequencyTable::from_symbols(&symbols, alphabet).expect("symbols within alphabet")
    };
    (table, symbols)
}

/// Number of exact arithmetic-coding round trips out of `cases`.
pub fn coding_round_trips<R: Rng + ?Sized>(cases: usize, rng: &mut R) -> Result<usize> {
    let mut exact = 0;
    for _ in 0..cases {
        let (table, symbols) = random_coding_case(rng);
        let bits = entropy::arithmetic_encode(&symbols, &table)?;
        let table = FrequencyTable::from_bytes(&table.to_bytes()?, table.alphabet())?;
        if entropy::arithmetic_decode(&bits, &table, symbols.len())? == symbols {
            exact += 1;
        }
    }
    Ok(exact)
}

/// Drives worker-side encode and server-side decode over a synthetic weight
/// trajectory, returning the first round whose reconstruction or memory
/// differed, if any.
pub fn reconstruction_identity<R: Rng + ?Sized>(d: usize, rounds: usize, rng: &mut R) -> Result<Option<usize>> {
    let cfg = CodecConfig {
        predictor: PredictorConfig::with_modes(PredictionMode::ALL.to_vec()),
        quantizer: QuantizerConfig {
            levels: 2,
            ..QuantizerConfig::default()
        },
        entropy_coding: true,
    };
    let mut worker = PredictorMemory::new(d);
    let mut server = PredictorMemory::new(d);
    let mut w0 = gaussian_vector(d, rng);
    let drift = gaussian_vector(d, rng);
    for k in 0..rounds {
        let noise = gaussian_vector(d, rng);
        let local = ParamVector::new(
            w0.iter()
                .zip(drift.iter().zip(noise.iter()))
                .map(|(w, (a, b))| w - 0.01 * a + 0.002 * b)
                .collect(),
        );
        let enc = codec::encode(&local, &w0, &mut worker, &cfg, rng)?;
        let msg = UplinkMessage::from_bytes(&enc.message.to_bytes()?)?;
        let w_hat = codec::decode(&msg, &w0, &mut server, &cfg)?;
        let same = w_hat.iter().zip(enc.w_hat.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same || !worker.bit_eq(&server) {
            return Ok(Some(k));
        }
        w0 = w_hat;
    }
    Ok(None)
}

fn codec_roundtrip(seed: u64) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = 10_000;
    let exact = coding_round_trips(cases, &mut rng)?;
    let mismatch = reconstruction_identity(2000, 20, &mut rng)?;
    let checks = vec![
        Check::new("arithmetic_round_trips", exact == cases, format!("{exact}/{cases} exact")),
        Check::new(
            "weight_reconstruction",
            mismatch.is_none(),
            match mismatch {
                None => "20 rounds bit-identical on both sides".to_string(),
                Some(k) => format!("encoder and decoder diverged at round {k}"),
            },
        ),
    ];
    Ok(VerifyReport::new(Suite::CodecRoundtrip, seed, checks, json!({ "cases": cases })))
}

fn assumptions(seed: u64, cfg: &ExperimentConfig) -> Result<VerifyReport> {
    let baseline = ExperimentConfig {
        modes: Some(vec![1]),
        ..cfg.clone()
    };
    let selected = ExperimentConfig {
        modes: Some(vec![1, 2, 3, 4]),
        ..cfg.clone()
    };
    let levels = cfg.levels;
    let report_for = |c: &ExperimentConfig| -> Result<theory::AssumptionReport> {
        let run = run_seed(c, seed)?;
        let stats: Vec<_> = run.rounds.iter().map(|r| r.residual_stats.clone()).collect();
        Ok(theory::empirical_assumption_checks(&stats, run.dim, levels))
    };
    let single = report_for(&baseline)?;
    let multi = report_for(&selected)?;
    let all_one = single
        .rounds
        .iter()
        .all(|r| r.prediction_ratio.is_none_or(|p| p == 1.0));
    let median = multi.median_prediction_ratio;
    let mut checks = vec![
        Check::new(
            "identity_ratio_is_one",
            all_one,
            "prediction-error ratio with mode 1 only must equal 1 every round".to_string(),
        ),
        Check::new(
            "selected_median_ratio",
            median.is_none_or(|m| m <= 1.0),
            format!("median prediction-error ratio with 4 modes = {median:?}"),
        ),
    ];
    if cfg.quantizer.as_deref().unwrap_or("stochastic") == "stochastic" {
        checks.push(Check::new(
            "quantization_bound",
            multi.quantization_within_bound,
            format!(
                "max pooled per-round quantization-error ratio {:.4} vs bound {:.4}",
                multi.max_quantization_ratio, multi.quantization_bound
            ),
        ));
    }
    Ok(VerifyReport::new(
        Suite::Assumptions,
        seed,
        checks,
        json!({ "mode1": single, "all_modes": multi }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_ids_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!(matches!("lemma3".parse::<Suite>(), Err(Error::Config { .. })));
    }

    #[test]
    fn exact_noise_energy_matches_hand_value() {
        // norm 5, s = 1: fractions 0.6 and 0.8 → 25·(0.24 + 0.16) = 10
        let e = ParamVector::new(vec![3.0, -4.0]);
        let cfg = QuantizerConfig::default();
        assert!((quantizer::stochastic_noise_energy(&e, &cfg) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn min_of_two_closed_form() {
        assert!((min_of_two_mean(400.0, 30.0) - 383.074312).abs() < 1e-6);
    }

    #[test]
    fn random_distributions_are_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (p0, side) = random_level_distribution(&mut rng);
            assert!((p0 + 2.0 * side.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
