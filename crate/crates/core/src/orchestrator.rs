//! Federated rounds: broadcast, local training, encode, decode, aggregate.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelConfig, WorkerPlacement};
use crate::codec::{self, CodecConfig, ResidualStats, UplinkMessage};
use crate::error::{Error, Result};
use crate::learner::{run_local_iterations, Dataset, LocalOptimizerConfig, MiniBatch, ModelSpec};
use crate::param::ParamVector;
use crate::predictor::{MemoryVariant, PredictionMode, PredictorConfig, PredictorMemory};
use crate::quantizer::{QuantizerConfig, QuantizerFamily};

/// Named reference configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Plain federated averaging with 32-bit uploads.
    FedavgUncompressed,
    /// Identity prediction, stochastic quantization, fixed-length levels.
    FedpaqEquivalent,
    /// All four prediction modes, quantization and arithmetic coding.
    Proposed,
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg-uncompressed" => Ok(Baseline::FedavgUncompressed),
            "fedpaq-equivalent" => Ok(Baseline::FedpaqEquivalent),
            "proposed" => Ok(Baseline::Proposed),
            other => Err(Error::config(
                "baseline",
                format!("unknown id `{other}` (expected fedavg-uncompressed, fedpaq-equivalent or proposed)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Compression {
    Uncompressed,
    Codec(CodecConfig),
}

pub fn make_baseline(baseline: Baseline) -> Compression {
    match baseline {
        Baseline::FedavgUncompressed => Compression::Uncompressed,
        Baseline::FedpaqEquivalent => Compression::Codec(CodecConfig {
            predictor: PredictorConfig::with_modes(vec![PredictionMode::Identity]),
            quantizer: QuantizerConfig {
                family: QuantizerFamily::Stochastic,
                ..QuantizerConfig::default()
            },
            entropy_coding: false,
        }),
        Baseline::Proposed => Compression::Codec(CodecConfig {
            predictor: PredictorConfig::default(),
            quantizer: QuantizerConfig {
                family: QuantizerFamily::Stochastic,
                ..QuantizerConfig::default()
            },
            entropy_coding: true,
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlConfig {
    pub model: ModelSpec,
    pub optimizer: LocalOptimizerConfig,
    pub compression: Compression,
    pub channel: ChannelConfig,
    pub radius_m: f64,
    /// Train and encode workers on the rayon pool. Results are identical
    /// to sequential execution.
    pub parallel: bool,
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.channel.validate()?;
        if let Compression::Codec(c) = &self.compression {
            c.validate()?;
        }
        if !(self.radius_m > 0.0 && self.radius_m.is_finite()) {
            return Err(Error::config("radius_m", "must be positive"));
        }
        Ok(())
    }

    fn codec(&self) -> Option<&CodecConfig> {
        match &self.compression {
            Compression::Codec(c) => Some(c),
            Compression::Uncompressed => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global: ParamVector,
    /// One mirror per worker, or a single shared memory for the global variant.
    pub memories: Vec<PredictorMemory>,
    pub round: usize,
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    pub data: Dataset,
    pub memory: PredictorMemory,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    /// `‖∇f(w)‖²` of the new global model on the pooled training data.
    pub grad_norm_sq: f64,
    pub bits: Vec<u64>,
    pub payload_bits: Vec<u64>,
    pub tx_seconds: Vec<f64>,
    pub comm_time: f64,
    /// Selection counts for modes 1..=4.
    pub mode_counts: [usize; 4],
    /// Uniform, stochastic.
    pub quantizer_counts: [usize; 2],
    /// `32·d·M / Σ bits`.
    pub compression_ratio: f64,
    /// Same ratio counting payload bits only.
    pub payload_ratio: f64,
    pub residual_stats: Vec<ResidualStats>,
}

impl RoundMetrics {
    pub fn total_bits(&self) -> u64 {
        self.bits.iter().sum()
    }

    /// Smallest prediction-error energy per worker is not stored; this is the
    /// pooled residue energy of the round.
    pub fn residual_energy(&self) -> f64 {
        self.residual_stats.iter().map(|s| s.residual_sq).sum()
    }
}

struct Upload {
    bytes: Option<Vec<u8>>,
    w_hat: ParamVector,
    bits: u64,
    payload_bits: u64,
    mode: Option<PredictionMode>,
    family: Option<QuantizerFamily>,
    stats: Option<ResidualStats>,
}

/// Independent ChaCha stream derived from the master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const WORKER_STREAM_BASE: u64 = 1000;
pub const PLACEMENT_STREAM: u64 = 3;

#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: FlConfig,
    server: ServerState,
    workers: Vec<WorkerState>,
    train: Dataset,
    test: Dataset,
    placement: WorkerPlacement,
}

impl Simulation {
    pub fn new(cfg: FlConfig, shards: Vec<Dataset>, test: Dataset, w_init: ParamVector, seed: u64) -> Result<Self> {
        cfg.validate()?;
        w_init.check_len(cfg.model.num_params())?;
        if shards.is_empty() {
            return Err(Error::contract("need at least one worker shard"));
        }
        let d = w_init.len();
        let mut rows = Vec::new();
        for shard in &shards {
            for i in 0..shard.len() {
                rows.extend_from_slice(shard.row(i));
            }
        }
        let labels: Vec<usize> = shards.iter().flat_map(|s| s.labels().iter().copied()).collect();
        let train = Dataset::new(rows, labels, shards[0].features(), shards[0].classes())?;

        let server_memories = match cfg.codec().map(|c| c.predictor.memory) {
            Some(MemoryVariant::PerWorker) => vec![PredictorMemory::new(d); shards.len()],
            Some(MemoryVariant::Global) => vec![PredictorMemory::new(d)],
            None => Vec::new(),
        };
        let mut placement_rng = stream_rng(seed, PLACEMENT_STREAM);
        let placement = channel::place_workers_uniform(shards.len(), cfg.radius_m, &mut placement_rng)?;
        let workers = shards
            .into_iter()
            .enumerate()
            .map(|(id, data)| WorkerState {
                id,
                data,
                memory: PredictorMemory::new(d),
                rng: stream_rng(seed, WORKER_STREAM_BASE + id as u64),
            })
            .collect();
        Ok(Self {
            cfg,
            server: ServerState {
                global: w_init,
                memories: server_memories,
                round: 0,
            },
            workers,
            train,
            test,
            placement,
        })
    }

    pub fn config(&self) -> &FlConfig {
        &self.cfg
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    pub fn placement(&self) -> &WorkerPlacement {
        &self.placement
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn dim(&self) -> usize {
        self.server.global.len()
    }

    /// Test loss and accuracy of the current global model.
    pub fn evaluate_test(&self) -> Result<(f64, f64)> {
        self.cfg.model.evaluate(&self.server.global, &self.test)
    }

    /// Whether every worker memory equals its server mirror bit for bit.
    pub fn memories_in_sync(&self) -> bool {
        match self.cfg.codec().map(|c| c.predictor.memory) {
            None => true,
            Some(MemoryVariant::PerWorker) => self
                .workers
                .iter()
                .zip(&self.server.memories)
                .all(|(w, m)| w.memory.bit_eq(m)),
            Some(MemoryVariant::Global) => self.workers.iter().all(|w| w.memory.bit_eq(&self.server.memories[0])),
        }
    }

    fn train_and_encode(cfg: &FlConfig, w0: &ParamVector, worker: &mut WorkerState) -> Result<Upload> {
        let local = run_local_iterations(&cfg.model, w0, &cfg.optimizer, &worker.data, &mut worker.rng).map_err(
            |e| match e {
                Error::Diverged { iteration, .. } => Error::Diverged {
                    iteration,
                    worker: Some(worker.id),
                },
                other => other,
            },
        )?;
        match cfg.codec() {
            None => Ok(Upload {
                bytes: None,
                bits: codec::raw_bits(local.len()),
                payload_bits: codec::raw_bits(local.len()),
                w_hat: local,
                mode: None,
                family: None,
                stats: None,
            }),
            Some(codec_cfg) => {
                let enc = codec::encode(&local, w0, &mut worker.memory, codec_cfg, &mut worker.rng)?;
                Ok(Upload {
                    bytes: Some(enc.message.to_bytes()?),
                    bits: enc.message.size_bits(),
                    payload_bits: enc.message.payload_bits(),
                    w_hat: enc.w_hat,
                    mode: Some(enc.mode),
                    family: Some(enc.family),
                    stats: Some(enc.stats),
                })
            }
        }
    }

    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let w_k = self.server.global.clone();
        let cfg = &self.cfg;
        let uploads: Vec<Upload> = if cfg.parallel {
            self.workers
                .par_iter_mut()
                .map(|w| Self::train_and_encode(cfg, &w_k, w))
                .collect::<Result<_>>()?
        } else {
            self.workers
                .iter_mut()
                .map(|w| Self::train_and_encode(cfg, &w_k, w))
                .collect::<Result<_>>()?
        };

        let mut reconstructions = Vec::with_capacity(uploads.len());
        for (m, upload) in uploads.iter().enumerate() {
            let w_hat = match (cfg.codec(), &upload.bytes) {
                (Some(codec_cfg), Some(bytes)) => {
                    let msg = UplinkMessage::from_bytes(bytes)?;
                    let mirror = match codec_cfg.predictor.memory {
                        MemoryVariant::PerWorker => &mut self.server.memories[m],
                        MemoryVariant::Global => &mut self.server.memories[0],
                    };
                    let w_hat = codec::decode(&msg, &w_k, mirror, codec_cfg)?;
                    if w_hat != upload.w_hat {
                        return Err(Error::contract(format!(
                            "worker {m}: server reconstruction diverged from the encoder's"
                        )));
                    }
                    w_hat
                }
                _ => upload.w_hat.clone(),
            };
            reconstructions.push(w_hat);
        }
        let refs: Vec<&ParamVector> = reconstructions.iter().collect();
        let w_next = ParamVector::average(&refs)?;

        if let Some(codec_cfg) = cfg.codec() {
            if codec_cfg.predictor.memory == MemoryVariant::Global {
                let p = &codec_cfg.predictor;
                self.server.memories[0].update_memory(&w_k, &w_next, Some(&w_next), p)?;
                for w in &mut self.workers {
                    w.memory.update_memory(&w_k, &w_next, Some(&w_next), p)?;
                }
            }
        }
        self.server.global = w_next;
        let round = self.server.round;
        self.server.round += 1;

        let model = &self.cfg.model;
        let (train_loss, train_accuracy) = model.evaluate(&self.server.global, &self.train)?;
        let (test_loss, test_accuracy) = model.evaluate(&self.server.global, &self.test)?;
        let all: Vec<usize> = (0..self.train.len()).collect();
        let grad_norm_sq = model
            .backward_grad(&self.server.global, &MiniBatch::new(&self.train, &all))?
            .norm_sq();

        let bits: Vec<u64> = uploads.iter().map(|u| u.bits).collect();
        let payload_bits: Vec<u64> = uploads.iter().map(|u| u.payload_bits).collect();
        let tx_seconds: Vec<f64> = bits
            .iter()
            .zip(&self.placement.distances)
            .map(|(&b, &dist)| channel::transmission_time(b, dist, &self.cfg.channel))
            .collect();
        let comm_time = channel::round_comm_time(&bits, &self.placement.distances, &self.cfg.channel)?;
        let mut mode_counts = [0; 4];
        let mut quantizer_counts = [0; 2];
        for u in &uploads {
            if let Some(mode) = u.mode {
                mode_counts[mode.id() as usize - 1] += 1;
            }
            match u.family {
                Some(QuantizerFamily::Uniform) => quantizer_counts[0] += 1,
                Some(QuantizerFamily::Stochastic) => quantizer_counts[1] += 1,
                _ => {}
            }
        }
        let raw = codec::raw_bits(self.dim()) as f64 * uploads.len() as f64;
        let total: u64 = bits.iter().sum();
        let total_payload: u64 = payload_bits.iter().sum();
        Ok(RoundMetrics {
            round,
            train_loss,
            train_accuracy,
            test_loss,
            test_accuracy,
            grad_norm_sq,
            compression_ratio: raw / total as f64,
            payload_ratio: if total_payload > 0 { raw / total_payload as f64 } else { f64::INFINITY },
            bits,
            payload_bits,
            tx_seconds,
            comm_time,
            mode_counts,
            quantizer_counts,
            residual_stats: uploads.into_iter().filter_map(|u| u.stats).collect(),
        })
    }

    pub fn run_training(&mut self, rounds: usize) -> Result<Vec<RoundMetrics>> {
        (0..rounds).map(|_| self.run_round()).collect()
    }
}
