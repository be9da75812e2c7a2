//! Norm/direction scalar quantization of prediction residues.
//!
//! A residue `e` is sent as its norm `‖e‖_p` plus one signed level per
//! coordinate in `[-s, s]`; the reconstruction is `(κ/s)·‖e‖_p·level`. Levels
//! are folded onto `[0, 2s]` by sign interleaving before entropy coding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::empirical_entropy;
use crate::error::{Error, Result};
use crate::param::ParamVector;

/// Largest `s` whose frequency table (two bytes per symbol over the
/// interleaved alphabet `2s+1`) fits the 16-bit table length of a message.
pub const MAX_LEVELS: u32 = (u16::MAX as u32 / 2 - 1) / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    LInf,
}

impl NormKind {
    pub fn of(self, e: &ParamVector) -> f64 {
        match self {
            NormKind::L2 => e.norm2(),
            NormKind::LInf => e.norm_inf(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizerFamily {
    /// Deterministic mid-tread rounding.
    Uniform,
    /// Unbiased randomized rounding between adjacent levels.
    Stochastic,
    /// Per-residue choice between the two by rate–distortion cost.
    RdSelect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub levels: u32,
    pub scale: f64,
    pub norm: NormKind,
    pub family: QuantizerFamily,
    pub lambda: f64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            levels: 1,
            scale: 1.0,
            norm: NormKind::L2,
            family: QuantizerFamily::Stochastic,
            lambda: 0.0,
        }
    }
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > MAX_LEVELS {
            return Err(Error::config("levels", format!("must lie in 1..={MAX_LEVELS}")));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::config("kappa", "must be positive and finite"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Number of interleaved symbols, `2s + 1`.
    pub fn alphabet(&self) -> usize {
        2 * self.levels as usize + 1
    }
}

/// Quantized residue: the norm plus interleaved levels `h_i ∈ [0, 2s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedResidual {
    pub norm: f64,
    pub levels: Vec<u32>,
    pub s: u32,
    pub scale: f64,
    pub norm_kind: NormKind,
}

impl QuantizedResidual {
    fn zero(d: usize, cfg: &QuantizerConfig) -> Self {
        Self {
            norm: 0.0,
            levels: vec![0; d],
            s: cfg.levels,
            scale: cfg.scale,
            norm_kind: cfg.norm,
        }
    }
}

/// Folds a signed level onto the nonnegative integers: `0, -1, 1, -2, 2, ...`
/// go to `0, 2, 1, 4, 3, ...`.
pub fn interleave_sign(level: i64, s: u32) -> Result<u32> {
    if level.unsigned_abs() > s as u64 {
        return Err(Error::contract(format!("level {level} outside [-{s}, {s}]")));
    }
    Ok(if level <= 0 { (-2 * level) as u32 } else { (2 * level - 1) as u32 })
}

pub fn deinterleave_sign(h: u32) -> i64 {
    let h = h as i64;
    if h % 2 == 0 {
        -h / 2
    } else {
        (h + 1) / 2
    }
}

fn signed_level(e: f64, magnitude: u32) -> i64 {
    if e > 0.0 {
        magnitude as i64
    } else {
        -(magnitude as i64)
    }
}

fn prepare(e: &ParamVector, cfg: &QuantizerConfig) -> Result<Option<f64>> {
    cfg.validate()?;
    if !e.is_finite() {
        return Err(Error::contract("residue contains non-finite entries"));
    }
    let norm = cfg.norm.of(e);
    Ok((norm > 0.0).then_some(norm))
}

/// Deterministic mid-tread quantizer: `⌊s|e_i|/(κ‖e‖) + 1/2⌋`, clamped to `s`.
pub fn quant_uniform(e: &ParamVector, cfg: &QuantizerConfig) -> Result<QuantizedResidual> {
    let Some(norm) = prepare(e, cfg)? else {
        return Ok(QuantizedResidual::zero(e.len(), cfg));
    };
    let s = cfg.levels;
    let step = s as f64 / (cfg.scale * norm);
    let levels = e
        .iter()
        .map(|&x| {
            let mag = ((x.abs() * step + 0.5).floor() as u64).min(s as u64) as u32;
            interleave_sign(signed_level(x, mag), s)
        })
        .collect::<Result<_>>()?;
    Ok(QuantizedResidual {
        norm,
        levels,
        s,
        scale: cfg.scale,
        norm_kind: cfg.norm,
    })
}

/// Randomized rounding: with `x = s|e_i|/(κ‖e‖)` and `ℓ = ⌊x⌋`, emit `ℓ + 1`
/// with probability `x − ℓ`. Unbiased whenever `κ‖e‖ ≥ max|e_i|`; otherwise
/// levels are clamped to `s`.
pub fn quant_stochastic<R: Rng + ?Sized>(e: &ParamVector, cfg: &QuantizerConfig, rng: &mut R) -> Result<QuantizedResidual> {
    let Some(norm) = prepare(e, cfg)? else {
        return Ok(QuantizedResidual::zero(e.len(), cfg));
    };
    let s = cfg.levels;
    let step = s as f64 / (cfg.scale * norm);
    let levels = e
        .iter()
        .map(|&x| {
            let scaled = x.abs() * step;
            let floor = scaled.floor();
            let up = rng.random::<f64>() < scaled - floor;
            let mag = ((floor as u64) + up as u64).min(s as u64) as u32;
            interleave_sign(signed_level(x, mag), s)
        })
        .collect::<Result<_>>()?;
    Ok(QuantizedResidual {
        norm,
        levels,
        s,
        scale: cfg.scale,
        norm_kind: cfg.norm,
    })
}

/// Exact `E‖Q(e) − e‖²` of the stochastic quantizer given `e`: each
/// coordinate rounds between adjacent levels with a Bernoulli choice, and
/// coordinates beyond the top level are clamped deterministically.
pub fn stochastic_noise_energy(e: &ParamVector, cfg: &QuantizerConfig) -> f64 {
    let norm = cfg.norm.of(e);
    if norm == 0.0 {
        return 0.0;
    }
    let s = cfg.levels as f64;
    let unit = cfg.scale * norm / s;
    e.iter()
        .map(|&x| {
            let r = x.abs() / unit;
            if r >= s {
                (x.abs() - s * unit).powi(2)
            } else {
                let f = r.fract();
                unit * unit * f * (1.0 - f)
            }
        })
        .sum()
}

/// Reconstruction shared by both quantizer families.
pub fn dequantize(q: &QuantizedResidual) -> ParamVector {
    let unit = q.scale * q.norm / q.s as f64;
    ParamVector::new(
        q.levels
            .iter()
            .map(|&h| {
                let level = deinterleave_sign(h);
                if level == 0 {
                    0.0
                } else {
                    unit * level as f64
                }
            })
            .collect(),
    )
}

/// Distortion and rate of a quantized residual: `D = ‖ê − e‖²` and `R = d·Ĥ(h)` bits.
pub fn rd_cost(e: &ParamVector, q: &QuantizedResidual) -> Result<(f64, f64)> {
    let distortion = dequantize(q).dist_sq(e);
    let rate = if q.levels.is_empty() {
        0.0
    } else {
        q.levels.len() as f64 * empirical_entropy(&q.levels)?
    };
    Ok((distortion, rate))
}

/// Runs both quantizers and keeps the one with the lower `D + λR`; ties keep
/// the uniform quantizer.
pub fn select_quantizer<R: Rng + ?Sized>(
    e: &ParamVector,
    cfg: &QuantizerConfig,
    rng: &mut R,
) -> Result<(QuantizedResidual, QuantizerFamily)> {
    let uniform = quant_uniform(e, cfg)?;
    let stochastic = quant_stochastic(e, cfg, rng)?;
    let (du, ru) = rd_cost(e, &uniform)?;
    let (ds, rs) = rd_cost(e, &stochastic)?;
    if ds + cfg.lambda * rs < du + cfg.lambda * ru {
        Ok((stochastic, QuantizerFamily::Stochastic))
    } else {
        Ok((uniform, QuantizerFamily::Uniform))
    }
}

/// Quantizes with the configured family and reports which one produced the levels.
pub fn quantize<R: Rng + ?Sized>(
    e: &ParamVector,
    cfg: &QuantizerConfig,
    rng: &mut R,
) -> Result<(QuantizedResidual, QuantizerFamily)> {
    match cfg.family {
        QuantizerFamily::Uniform => Ok((quant_uniform(e, cfg)?, QuantizerFamily::Uniform)),
        QuantizerFamily::Stochastic => Ok((quant_stochastic(e, cfg, rng)?, QuantizerFamily::Stochastic)),
        QuantizerFamily::RdSelect => select_quantizer(e, cfg, rng),
    }
}

/// `min(d/s², √d/s)`: the worst-case ratio of stochastic quantization noise
/// energy to input energy.
pub fn variance_bound(d: usize, s: u32) -> f64 {
    let d = d as f64;
    let s = s as f64;
    (d / (s * s)).min(d.sqrt() / s)
}
