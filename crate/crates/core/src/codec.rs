//! Uplink encoder/decoder: predict, quantize the residue, entropy-code it.
//!
//! Container layout (big-endian):
//!
//! ```text
//! u8   mode id (1..=4)
//! f32  residue norm
//! u16  table length T in bytes (0 when entropy coding is off)
//! [T]  frequency table, (2s+1) u16 counts
//! u32  payload length in bits
//! [..] payload bytes, MSB-first, zero padded
//! ```
//!
//! For cost accounting the mode counts as 2 bits and the length fields are
//! implied by the shared configuration, see [`UplinkMessage::size_bits`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::{self, arithmetic_decode, arithmetic_encode, Bitstream, FrequencyTable};
use crate::error::{DecodeStage, Error, Result};
use crate::param::ParamVector;
use crate::predictor::{MemoryVariant, PredictionMode, PredictorConfig, PredictorMemory};
use crate::quantizer::{self, dequantize, quantize, QuantizedResidual, QuantizerConfig, QuantizerFamily};

pub const MODE_BITS: u64 = 2;
pub const NORM_BITS: u64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub predictor: PredictorConfig,
    pub quantizer: QuantizerConfig,
    pub entropy_coding: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            predictor: PredictorConfig::default(),
            quantizer: QuantizerConfig::default(),
            entropy_coding: true,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        self.predictor.validate()?;
        self.quantizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UplinkMessage {
    pub mode: PredictionMode,
    pub norm: f32,
    /// Serialized frequency table; empty when entropy coding is off.
    pub table: Vec<u8>,
    pub payload: Bitstream,
}

impl UplinkMessage {
    /// Accounted size: 2 mode bits, the 32-bit norm, the table and the payload.
    pub fn size_bits(&self) -> u64 {
        MODE_BITS + NORM_BITS + 8 * self.table.len() as u64 + self.payload.bit_len as u64
    }

    pub fn payload_bits(&self) -> u64 {
        self.payload.bit_len as u64
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let table_len = u16::try_from(self.table.len())
            .map_err(|_| Error::contract("frequency table longer than 65535 bytes"))?;
        let bit_len = u32::try_from(self.payload.bit_len)
            .map_err(|_| Error::contract("payload longer than u32::MAX bits"))?;
        let payload_bytes = self.payload.bit_len.div_ceil(8);
        let mut out = Vec::with_capacity(1 + 4 + 2 + self.table.len() + 4 + payload_bytes);
        out.push(self.mode.id());
        out.extend_from_slice(&self.norm.to_be_bytes());
        out.extend_from_slice(&table_len.to_be_bytes());
        out.extend_from_slice(&self.table);
        out.extend_from_slice(&bit_len.to_be_bytes());
        out.extend_from_slice(&self.payload.bytes[..payload_bytes]);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let mode_id = cursor.take(1)?[0];
        let mode = PredictionMode::from_id(mode_id)
            .ok_or_else(|| Error::decode(DecodeStage::Mode, format!("unknown mode id {mode_id}")))?;
        let norm = f32::from_be_bytes(cursor.take(4)?.try_into().expect("4 bytes"));
        let table_len = u16::from_be_bytes(cursor.take(2)?.try_into().expect("2 bytes")) as usize;
        let table = cursor.take(table_len)?.to_vec();
        let bit_len = u32::from_be_bytes(cursor.take(4)?.try_into().expect("4 bytes")) as usize;
        let payload = cursor.take(bit_len.div_ceil(8))?.to_vec();
        if cursor.pos != bytes.len() {
            return Err(Error::decode(
                DecodeStage::Container,
                format!("{} trailing bytes", bytes.len() - cursor.pos),
            ));
        }
        Ok(Self {
            mode,
            norm,
            table,
            payload: Bitstream::new(payload, bit_len)?,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::decode(
                DecodeStage::Container,
                format!("need {n} bytes at offset {}, only {} remain", self.pos, self.bytes.len() - self.pos),
            )
        })?;
        self.pos = end;
        Ok(slice)
    }
}

/// Per-message measurements used by the assumption diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// `‖e‖²` of the selected mode's residue.
    pub residual_sq: f64,
    /// `‖Δ‖²` with `Δ = w0 − w_local`.
    pub delta_sq: f64,
    /// `‖Q(e) − e‖²` of the transmitted quantization.
    pub quant_error_sq: f64,
    /// `E‖Q(e) − e‖²` over the quantizer's randomness given `e`; equal to
    /// `quant_error_sq` for the deterministic quantizer.
    pub expected_quant_error_sq: f64,
    /// Sample skewness of the residue's coordinates.
    pub skewness: f64,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub message: UplinkMessage,
    /// The reconstruction the decoder will compute.
    pub w_hat: ParamVector,
    pub mode: PredictionMode,
    pub family: QuantizerFamily,
    pub stats: ResidualStats,
}

fn reconstruct(prediction: &ParamVector, q: &QuantizedResidual) -> ParamVector {
    prediction.add(&dequantize(q))
}

fn skewness(e: &ParamVector) -> f64 {
    let mean = e.mean();
    let n = e.len() as f64;
    let (m2, m3) = e.iter().fold((0.0, 0.0), |(a, b), &x| {
        let c = x - mean;
        (a + c * c, b + c * c * c)
    });
    let (m2, m3) = (m2 / n, m3 / n);
    if m2 > 0.0 {
        m3 / m2.powf(1.5)
    } else {
        0.0
    }
}

/// Worker side. With a per-worker memory, `mem` is advanced with the
/// reconstruction before returning; a global memory is left for the caller
/// to update once the next broadcast model is known.
pub fn encode<R: Rng + ?Sized>(
    w_local: &ParamVector,
    w0: &ParamVector,
    mem: &mut PredictorMemory,
    cfg: &CodecConfig,
    rng: &mut R,
) -> Result<Encoded> {
    w0.check_len(mem.dim())?;
    let selection = mem.select_mode(w_local, w0, &cfg.predictor)?;
    let residual = w_local.sub(&selection.prediction);
    let (mut q, family) = quantize(&residual, &cfg.quantizer, rng)?;

    let norm = q.norm as f32;
    if !norm.is_finite() {
        return Err(Error::contract(format!("residue norm {} does not fit in f32", q.norm)));
    }
    // the decoder only sees the f32 norm
    q.norm = norm as f64;

    let alphabet = cfg.quantizer.alphabet();
    let (table, payload) = if cfg.entropy_coding {
        let table = FrequencyTable::from_symbols(&q.levels, alphabet)?;
        let payload = arithmetic_encode(&q.levels, &table)?;
        (table.to_bytes()?, payload)
    } else {
        (Vec::new(), entropy::encode_fixed(&q.levels, alphabet)?)
    };

    let w_hat = reconstruct(&selection.prediction, &q);
    let quant_error_sq = dequantize(&q).dist_sq(&residual);
    let stats = ResidualStats {
        residual_sq: residual.norm_sq(),
        delta_sq: w0.dist_sq(w_local),
        quant_error_sq,
        expected_quant_error_sq: match family {
            QuantizerFamily::Stochastic => quantizer::stochastic_noise_energy(&residual, &cfg.quantizer),
            _ => quant_error_sq,
        },
        skewness: skewness(&residual),
    };
    if cfg.predictor.memory == MemoryVariant::PerWorker {
        mem.update_memory(w0, &w_hat, None, &cfg.predictor)?;
    }
    Ok(Encoded {
        message: UplinkMessage {
            mode: selection.mode,
            norm,
            table,
            payload,
        },
        w_hat,
        mode: selection.mode,
        family,
        stats,
    })
}

/// Server side; mirrors [`encode`]'s memory handling.
pub fn decode(msg: &UplinkMessage, w0: &ParamVector, mem: &mut PredictorMemory, cfg: &CodecConfig) -> Result<ParamVector> {
    let d = mem.dim();
    w0.check_len(d)?;
    if !cfg.predictor.enabled().contains(&msg.mode) {
        return Err(Error::decode(
            DecodeStage::Mode,
            format!("mode {} is not enabled", msg.mode.id()),
        ));
    }
    if !(msg.norm.is_finite() && msg.norm >= 0.0) {
        return Err(Error::decode(DecodeStage::Container, format!("invalid norm {}", msg.norm)));
    }
    let alphabet = cfg.quantizer.alphabet();
    let levels = if cfg.entropy_coding {
        let table = FrequencyTable::from_bytes(&msg.table, alphabet)?;
        arithmetic_decode(&msg.payload, &table, d)?
    } else {
        if !msg.table.is_empty() {
            return Err(Error::decode(DecodeStage::Table, "unexpected table with entropy coding off"));
        }
        entropy::decode_fixed(&msg.payload, alphabet, d)?
    };
    if let Some(&bad) = levels.iter().find(|&&h| h as usize >= alphabet) {
        return Err(Error::decode(DecodeStage::Payload, format!("level {bad} outside alphabet")));
    }
    let q = QuantizedResidual {
        norm: msg.norm as f64,
        levels,
        s: cfg.quantizer.levels,
        scale: cfg.quantizer.scale,
        norm_kind: cfg.quantizer.norm,
    };
    let prediction = mem.predict(msg.mode, w0, &cfg.predictor)?;
    let w_hat = reconstruct(&prediction, &q);
    if cfg.predictor.memory == MemoryVariant::PerWorker {
        mem.update_memory(w0, &w_hat, None, &cfg.predictor)?;
    }
    Ok(w_hat)
}

/// Bits of an uncompressed 32-bit float upload.
pub fn raw_bits(d: usize) -> u64 {
    32 * d as u64
}
