//! Experiment runners: simulation setup from a config, multi-seed training,
//! parameter sweeps and the CSV/JSON records written by the CLI.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::learner::{dirichlet_partition, Dataset};
use crate::orchestrator::{stream_rng, RoundMetrics, Simulation};

const DATA_STREAM: u64 = 0;
const PARTITION_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;

/// Loads or generates the dataset, shuffles it and splits off the test tail.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = stream_rng(seed, DATA_STREAM);
    let full = match cfg.dataset.as_str() {
        "csv" => {
            let path = cfg.dataset_path.as_deref().unwrap_or_default();
            Dataset::load_csv(path, None)?
        }
        _ => Dataset::gaussian_blobs(cfg.samples, cfg.features, cfg.classes, cfg.separation, &mut rng)?,
    };
    let mut order: Vec<usize> = (0..full.len()).collect();
    order.shuffle(&mut rng);
    let shuffled = full.subset(&order);
    let n_test = ((full.len() as f64) * cfg.test_fraction).round() as usize;
    if n_test == 0 || n_test >= full.len() {
        return Err(Error::config(
            "test_fraction",
            format!("leaves an empty split of {} samples", full.len()),
        ));
    }
    shuffled.split_tail(n_test)
}

/// Builds the simulation for one seed: data, partition, initial weights and
/// worker placement all derive from independent streams of `seed`.
pub fn build_simulation(cfg: &ExperimentConfig, seed: u64) -> Result<Simulation> {
    cfg.validate()?;
    let (train, test) = load_dataset(cfg, seed)?;
    let fl = cfg.fl_config(train.features(), train.classes())?;
    let shards = dirichlet_partition(&train, cfg.workers, cfg.dirichlet_alpha, &mut stream_rng(seed, PARTITION_STREAM))?;
    let w_init = fl.model.init_params(&mut stream_rng(seed, INIT_STREAM));
    Simulation::new(fl, shards, test, w_init, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub dim: usize,
    pub workers: usize,
    pub initial_test_loss: f64,
    pub initial_test_accuracy: f64,
    pub rounds: Vec<RoundMetrics>,
}

impl RunResult {
    pub fn total_bits(&self) -> u64 {
        self.rounds.iter().map(RoundMetrics::total_bits).sum()
    }

    fn raw_total(&self) -> f64 {
        32.0 * self.dim as f64 * self.workers as f64 * self.rounds.len() as f64
    }

    /// Uncompressed bits over transmitted bits, whole run.
    pub fn compression_ratio(&self) -> f64 {
        self.raw_total() / self.total_bits() as f64
    }

    pub fn payload_ratio(&self) -> f64 {
        let payload: u64 = self.rounds.iter().flat_map(|r| r.payload_bits.iter()).sum();
        self.raw_total() / payload as f64
    }

    pub fn comm_time(&self) -> f64 {
        self.rounds.iter().map(|r| r.comm_time).sum()
    }

    pub fn final_test_loss(&self) -> f64 {
        self.rounds.last().map_or(self.initial_test_loss, |r| r.test_loss)
    }

    pub fn final_test_accuracy(&self) -> f64 {
        self.rounds.last().map_or(self.initial_test_accuracy, |r| r.test_accuracy)
    }

    /// Test loss of the latest model whose cumulative uplink fits in `budget`
    /// bits; the initial loss if even the first round exceeds it.
    pub fn loss_at_budget(&self, budget: u64) -> f64 {
        let mut spent = 0u64;
        let mut loss = self.initial_test_loss;
        for r in &self.rounds {
            spent += r.total_bits();
            if spent > budget {
                break;
            }
            loss = r.test_loss;
        }
        loss
    }

    /// Fraction of all worker uploads that selected each mode.
    pub fn mode_frequencies(&self) -> [f64; 4] {
        let mut counts = [0usize; 4];
        for r in &self.rounds {
            for (c, n) in counts.iter_mut().zip(r.mode_counts) {
                *c += n;
            }
        }
        let total: usize = counts.iter().sum();
        counts.map(|c| if total > 0 { c as f64 / total as f64 } else { 0.0 })
    }
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    let mut sim = build_simulation(cfg, seed)?;
    let (initial_test_loss, initial_test_accuracy) = sim.evaluate_test()?;
    let rounds = sim.run_training(cfg.rounds)?;
    Ok(RunResult {
        seed,
        dim: sim.dim(),
        workers: cfg.workers,
        initial_test_loss,
        initial_test_accuracy,
        rounds,
    })
}

pub fn run_seeds(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.seed_list().into_iter().map(|s| run_seed(cfg, s)).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Sample standard deviation; zero for a single value.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub dim: usize,
    pub final_test_accuracy_mean: f64,
    pub final_test_accuracy_std: f64,
    pub final_test_loss_mean: f64,
    pub final_test_loss_std: f64,
    pub compression_ratio_mean: f64,
    pub payload_ratio_mean: f64,
    pub comm_time_mean_s: f64,
    pub total_bits_mean: f64,
    pub mode_frequencies: [f64; 4],
}

pub fn summarize(cfg: &ExperimentConfig, runs: &[RunResult]) -> TrainSummary {
    let col = |f: &dyn Fn(&RunResult) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    let acc = col(&|r| r.final_test_accuracy());
    let loss = col(&|r| r.final_test_loss());
    let freqs: Vec<[f64; 4]> = runs.iter().map(RunResult::mode_frequencies).collect();
    let mut mode_frequencies = [0.0; 4];
    for (i, f) in mode_frequencies.iter_mut().enumerate() {
        *f = mean(&freqs.iter().map(|x| x[i]).collect::<Vec<_>>());
    }
    TrainSummary {
        config_hash: cfg.hash(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        rounds: cfg.rounds,
        dim: runs.first().map_or(0, |r| r.dim),
        final_test_accuracy_mean: mean(&acc),
        final_test_accuracy_std: std_dev(&acc),
        final_test_loss_mean: mean(&loss),
        final_test_loss_std: std_dev(&loss),
        compression_ratio_mean: mean(&col(&|r| r.compression_ratio())),
        payload_ratio_mean: mean(&col(&|r| r.payload_ratio())),
        comm_time_mean_s: mean(&col(&RunResult::comm_time)),
        total_bits_mean: mean(&col(&|r| r.total_bits() as f64)),
        mode_frequencies,
    }
}

/// Column order of the per-round CSV.
pub const ROUND_COLUMNS: &[&str] = &[
    "config_hash",
    "seed",
    "round",
    "train_loss",
    "train_accuracy",
    "test_loss",
    "test_accuracy",
    "grad_norm_sq",
    "total_bits",
    "max_worker_bits",
    "comm_time_s",
    "cumulative_bits",
    "cumulative_comm_time_s",
    "compression_ratio",
    "payload_ratio",
    "mode1",
    "mode2",
    "mode3",
    "mode4",
    "quant_uniform",
    "quant_stochastic",
];

pub fn write_rounds_csv<W: Write>(mut out: W, config_hash: &str, runs: &[RunResult]) -> Result<()> {
    writeln!(out, "{}", ROUND_COLUMNS.join(","))?;
    for run in runs {
        let (mut bits, mut time) = (0u64, 0.0);
        for r in &run.rounds {
            bits += r.total_bits();
            time += r.comm_time;
            writeln!(
                out,
                "{config_hash},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                run.seed,
                r.round,
                r.train_loss,
                r.train_accuracy,
                r.test_loss,
                r.test_accuracy,
                r.grad_norm_sq,
                r.total_bits(),
                r.bits.iter().max().copied().unwrap_or(0),
                r.comm_time,
                bits,
                time,
                r.compression_ratio,
                r.payload_ratio,
                r.mode_counts[0],
                r.mode_counts[1],
                r.mode_counts[2],
                r.mode_counts[3],
                r.quantizer_counts[0],
                r.quantizer_counts[1],
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Number of enabled prediction modes `N` (modes `1..=N`).
    Modes,
    Tau,
    S,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modes" => Ok(SweepAxis::Modes),
            "tau" => Ok(SweepAxis::Tau),
            "s" => Ok(SweepAxis::S),
            other => Err(Error::config("axis", format!("unknown axis `{other}` (modes, tau or s)"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Modes => "modes",
            SweepAxis::Tau => "tau",
            SweepAxis::S => "s",
        }
    }

    /// The config with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: u32) -> Result<ExperimentConfig> {
        let mut out = cfg.clone();
        match self {
            SweepAxis::Modes => {
                if !(1..=4).contains(&value) {
                    return Err(Error::config("values", format!("mode count {value} is not in 1..=4")));
                }
                out.modes = Some((1..=value as u8).collect());
            }
            SweepAxis::Tau => out.local_steps = value as usize,
            SweepAxis::S => out.levels = value,
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: u32,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub final_test_loss: f64,
    pub final_test_accuracy: f64,
    pub compression_ratio: f64,
    pub payload_ratio: f64,
    pub comm_time_s: f64,
    pub mode_frequencies: [f64; 4],
}

/// Runs every value on the same seed list, so differences between rows are
/// paired comparisons.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[u32]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("values", "at least one sweep value is required"));
    }
    values
        .iter()
        .map(|&value| {
            let point = axis.apply(cfg, value)?;
            let runs = run_seeds(&point)?;
            let s = summarize(&point, &runs);
            Ok(SweepRow {
                axis,
                value,
                config_hash: s.config_hash,
                seeds: s.seeds,
                final_test_loss: s.final_test_loss_mean,
                final_test_accuracy: s.final_test_accuracy_mean,
                compression_ratio: s.compression_ratio_mean,
                payload_ratio: s.payload_ratio_mean,
                comm_time_s: s.comm_time_mean_s,
                mode_frequencies: s.mode_frequencies,
            })
        })
        .collect()
}

pub const SWEEP_COLUMNS: &[&str] = &[
    "config_hash",
    "seed",
    "axis",
    "value",
    "final_test_loss",
    "final_test_accuracy",
    "compression_ratio",
    "payload_ratio",
    "comm_time_s",
    "mode1_freq",
    "mode2_freq",
    "mode3_freq",
    "mode4_freq",
];

/// One row per sweep value. `seed` is the first seed of the paired list and
/// `config_hash` identifies the per-value configuration.
pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "{}", SWEEP_COLUMNS.join(","))?;
    for r in rows {
        let f = r.mode_frequencies;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.config_hash,
            r.seeds.first().copied().unwrap_or_default(),
            r.axis.name(),
            r.value,
            r.final_test_loss,
            r.final_test_accuracy,
            r.compression_ratio,
            r.payload_ratio,
            r.comm_time_s,
            f[0],
            f[1],
            f[2],
            f[3],
        )?;
    }
    Ok(())
}
