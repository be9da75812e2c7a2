//! Flat key-value experiment configuration (TOML).
//!
//! Every field has a default, so an empty file is a valid desk-scale run.
//! Codec fields left unset (`modes`, `quantizer`, `entropy_coding`) are taken
//! from the named `baseline`; setting them overrides the baseline.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ChannelConfig, GainModel};
use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::learner::{Activation, LocalOptimizerConfig, ModelSpec, OptimizerKind};
use crate::orchestrator::{make_baseline, Baseline, Compression, FlConfig};
use crate::predictor::{MemoryVariant, PredictionMode, PredictorConfig};
use crate::quantizer::{NormKind, QuantizerFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `blobs` (synthetic Gaussian clusters) or `csv` (`label,x1,..,xp` rows).
    pub dataset: String,
    pub dataset_path: Option<String>,
    /// Total samples before the train/test split (blobs only).
    pub samples: usize,
    pub test_fraction: f64,
    pub features: usize,
    pub classes: usize,
    /// Standard deviation of blob centres; noise is unit variance.
    pub separation: f64,

    /// `mlp` or `logreg`.
    pub model: String,
    pub hidden: usize,
    /// `tanh` or `relu`.
    pub activation: String,

    pub workers: usize,
    pub rounds: usize,
    pub local_steps: usize,
    pub learning_rate: f64,
    /// `adam` or `sgd`.
    pub optimizer: String,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub dirichlet_alpha: f64,

    /// `proposed`, `fedpaq-equivalent` or `fedavg-uncompressed`.
    pub baseline: String,
    /// Enabled prediction modes, ids in 1..=4.
    pub modes: Option<Vec<u8>>,
    /// `uniform`, `stochastic` or `rd-select`.
    pub quantizer: Option<String>,
    pub entropy_coding: Option<bool>,
    /// Quantization levels `s`.
    pub levels: u32,
    pub kappa: f64,
    /// `2` or `inf`.
    pub norm: String,
    pub lambda: f64,
    /// `per-worker` or `global`.
    pub memory: String,
    pub ar_step: f64,
    pub ma_order: usize,
    pub moment_beta1: f64,
    pub moment_beta2: f64,
    pub moment_scale: f64,

    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub noise_dbm_per_hz: f64,
    pub antenna_gain: f64,
    pub carrier_hz: f64,
    pub path_loss_exponent: f64,
    /// `amplitude` (gain squared in the SNR) or `power` (gain used as is).
    pub gain_model: String,
    pub radius_m: f64,

    pub seed: u64,
    /// Number of consecutive seeds starting at `seed`.
    pub seeds: usize,
    pub parallel: bool,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let opt = LocalOptimizerConfig::default();
        let pred = PredictorConfig::default();
        let ch = ChannelConfig::default();
        Self {
            dataset: "blobs".into(),
            dataset_path: None,
            samples: 5000,
            test_fraction: 0.2,
            features: 16,
            classes: 10,
            separation: 0.6,
            model: "mlp".into(),
            hidden: 32,
            activation: "tanh".into(),
            workers: 8,
            rounds: 50,
            local_steps: opt.local_steps,
            learning_rate: opt.learning_rate,
            optimizer: "adam".into(),
            batch_size: opt.batch_size,
            adam_beta1: opt.beta1,
            adam_beta2: opt.beta2,
            adam_epsilon: opt.epsilon,
            dirichlet_alpha: 0.5,
            baseline: "proposed".into(),
            modes: None,
            quantizer: None,
            entropy_coding: None,
            levels: 1,
            kappa: 1.0,
            norm: "2".into(),
            lambda: 0.0,
            memory: "per-worker".into(),
            ar_step: pred.ar_step,
            ma_order: pred.ma_order,
            moment_beta1: pred.beta1,
            moment_beta2: pred.beta2,
            moment_scale: pred.moment_scale,
            bandwidth_hz: ch.bandwidth_hz,
            tx_power_w: ch.tx_power_w,
            noise_dbm_per_hz: ch.noise_dbm_per_hz,
            antenna_gain: ch.antenna_gain,
            carrier_hz: ch.carrier_hz,
            path_loss_exponent: ch.path_loss_exponent,
            gain_model: "amplitude".into(),
            radius_m: 500.0,
            seed: 1,
            seeds: 1,
            parallel: true,
            output_dir: "out".into(),
        }
    }
}

fn bad(field: &'static str, reason: impl Into<String>) -> Error {
    Error::config(field, reason)
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {v}")))
    }
}

fn at_least_one(field: &'static str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(bad(field, "must be at least 1"))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config fields are all TOML-representable")
    }

    /// Short SHA-256 digest of the configuration, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir.clear();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }

    /// Checks every field and the cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        match self.dataset.as_str() {
            "blobs" => {
                at_least_one("samples", self.samples)?;
                at_least_one("features", self.features)?;
                if self.classes < 2 {
                    return Err(bad("classes", "need at least 2 classes"));
                }
                positive("separation", self.separation)?;
            }
            "csv" => {
                if self.dataset_path.as_deref().is_none_or(str::is_empty) {
                    return Err(bad("dataset_path", "required when dataset = \"csv\""));
                }
            }
            other => return Err(bad("dataset", format!("unknown dataset `{other}` (blobs or csv)"))),
        }
        self.model_spec(self.features, self.classes)?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(bad("test_fraction", "must lie strictly between 0 and 1"));
        }
        match self.model.as_str() {
            "mlp" => at_least_one("hidden", self.hidden)?,
            "logreg" => {}
            other => return Err(bad("model", format!("unknown model `{other}` (mlp or logreg)"))),
        }
        self.activation()?;
        at_least_one("workers", self.workers)?;
        at_least_one("seeds", self.seeds)?;
        positive("dirichlet_alpha", self.dirichlet_alpha)?;
        positive("radius_m", self.radius_m)?;
        self.optimizer_config()?.validate()?;
        self.channel_config()?.validate()?;
        if let Compression::Codec(c) = self.compression()? {
            c.validate()?;
        }
        Ok(())
    }

    fn activation(&self) -> Result<Activation> {
        match self.activation.as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(bad("activation", format!("unknown activation `{other}` (tanh or relu)"))),
        }
    }

    pub fn model_spec(&self, inputs: usize, classes: usize) -> Result<ModelSpec> {
        Ok(match self.model.as_str() {
            "logreg" => ModelSpec::LogisticRegression { inputs, classes },
            "mlp" => ModelSpec::Mlp {
                inputs,
                hidden: self.hidden,
                classes,
                activation: self.activation()?,
            },
            other => return Err(bad("model", format!("unknown model `{other}` (mlp or logreg)"))),
        })
    }

    pub fn optimizer_config(&self) -> Result<LocalOptimizerConfig> {
        let kind = match self.optimizer.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => return Err(bad("optimizer", format!("unknown optimizer `{other}` (adam or sgd)"))),
        };
        Ok(LocalOptimizerConfig {
            kind,
            learning_rate: self.learning_rate,
            local_steps: self.local_steps,
            batch_size: self.batch_size,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        })
    }

    pub fn channel_config(&self) -> Result<ChannelConfig> {
        let gain_model = match self.gain_model.as_str() {
            "amplitude" => GainModel::Amplitude,
            "power" => GainModel::Power,
            other => return Err(bad("gain_model", format!("unknown gain model `{other}` (amplitude or power)"))),
        };
        Ok(ChannelConfig {
            bandwidth_hz: self.bandwidth_hz,
            tx_power_w: self.tx_power_w,
            noise_dbm_per_hz: self.noise_dbm_per_hz,
            antenna_gain: self.antenna_gain,
            carrier_hz: self.carrier_hz,
            path_loss_exponent: self.path_loss_exponent,
            gain_model,
        })
    }

    /// Baseline codec with this file's overrides and hyperparameters applied.
    pub fn compression(&self) -> Result<Compression> {
        let baseline: Baseline = self.baseline.parse()?;
        let mut codec: CodecConfig = match make_baseline(baseline) {
            Compression::Uncompressed => return Ok(Compression::Uncompressed),
            Compression::Codec(c) => c,
        };
        if let Some(ids) = &self.modes {
            let modes = ids
                .iter()
                .map(|&id| {
                    PredictionMode::from_id(id).ok_or_else(|| bad("modes", format!("mode id {id} is not in 1..=4")))
                })
                .collect::<Result<Vec<_>>>()?;
            codec.predictor.modes = modes;
        }
        if let Some(q) = &self.quantizer {
            codec.quantizer.family = match q.as_str() {
                "uniform" => QuantizerFamily::Uniform,
                "stochastic" => QuantizerFamily::Stochastic,
                "rd-select" => QuantizerFamily::RdSelect,
                other => {
                    return Err(bad(
                        "quantizer",
                        format!("unknown quantizer `{other}` (uniform, stochastic or rd-select)"),
                    ))
                }
            };
        }
        if let Some(e) = self.entropy_coding {
            codec.entropy_coding = e;
        }
        codec.quantizer.levels = self.levels;
        codec.quantizer.scale = self.kappa;
        codec.quantizer.lambda = self.lambda;
        codec.quantizer.norm = match self.norm.as_str() {
            "2" => NormKind::L2,
            "inf" => NormKind::LInf,
            other => return Err(bad("norm", format!("unknown norm `{other}` (2 or inf)"))),
        };
        let p = &mut codec.predictor;
        p.memory = match self.memory.as_str() {
            "per-worker" => MemoryVariant::PerWorker,
            "global" => MemoryVariant::Global,
            other => return Err(bad("memory", format!("unknown memory variant `{other}` (per-worker or global)"))),
        };
        p.ar_step = self.ar_step;
        p.ma_order = self.ma_order;
        p.beta1 = self.moment_beta1;
        p.beta2 = self.moment_beta2;
        p.moment_scale = self.moment_scale;
        Ok(Compression::Codec(codec))
    }

    pub fn fl_config(&self, inputs: usize, classes: usize) -> Result<FlConfig> {
        Ok(FlConfig {
            model: self.model_spec(inputs, classes)?,
            optimizer: self.optimizer_config()?,
            compression: self.compression()?,
            channel: self.channel_config()?,
            radius_m: self.radius_m,
            parallel: self.parallel,
        })
    }
}
