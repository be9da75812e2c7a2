//! `predcode` command line: train, sweep and verify.
//!
//! Exit codes: 0 success, 1 configuration error, 2 failed verification,
//! 3 diverged training.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use predcode::experiment::{self, SweepAxis};
use predcode::verify::{self, Suite};
use predcode::{Error, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "predcode", version, about = "Predictive-coding compression for federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train with the given configuration and write per-round metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configuration's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configuration's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one verification suite.
    Verify {
        /// lemma1, lemma2, quantizer, codec-roundtrip or assumptions.
        #[arg(long)]
        suite: String,
        /// Training configuration for the assumptions suite.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once per value of one axis, on paired seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// modes, tau or s.
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `1,2,3,4`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Config { .. } | Error::Parse { .. } | Error::Io(_) | Error::InfeasiblePartition { .. } => EXIT_CONFIG,
        Error::Contract(_) | Error::Decode { .. } | Error::DimensionMismatch { .. } => EXIT_VERIFY,
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> predcode::Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config {
                field: "config".into(),
                reason: format!("cannot read {}: {io}", p.display()),
            },
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o.display().to_string();
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> predcode::Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes the effective configuration next to the outputs, headed by its hash.
fn write_config(dir: &Path, cfg: &ExperimentConfig) -> predcode::Result<()> {
    let mut f = create(dir, "config.toml")?;
    writeln!(f, "# config_hash = {}\n# seed = {}\n", cfg.hash(), cfg.seed)?;
    f.write_all(cfg.to_toml_string().as_bytes())?;
    f.flush()?;
    Ok(())
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> predcode::Result<()> {
    let mut f = create(dir, name)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Io(e.into()))?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> predcode::Result<()> {
    let dir = PathBuf::from(&cfg.output_dir);
    let runs = experiment::run_seeds(cfg)?;
    let summary = experiment::summarize(cfg, &runs);
    let mut csv = create(&dir, "rounds.csv")?;
    experiment::write_rounds_csv(&mut csv, &summary.config_hash, &runs)?;
    csv.flush()?;
    write_json(&dir, "summary.json", &summary)?;
    write_config(&dir, cfg)?;
    println!(
        "config {} seeds {:?}: final test accuracy {:.4} ± {:.4}, loss {:.4}",
        summary.config_hash,
        summary.seeds,
        summary.final_test_accuracy_mean,
        summary.final_test_accuracy_std,
        summary.final_test_loss_mean
    );
    println!(
        "compression ratio {:.2} (payload only {:.2}), cumulative uplink time {:.6e} s",
        summary.compression_ratio_mean, summary.payload_ratio_mean, summary.comm_time_mean_s
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, axis: &str, values: &[u32]) -> predcode::Result<()> {
    let axis: SweepAxis = axis.parse()?;
    let dir = PathBuf::from(&cfg.output_dir);
    let rows = experiment::run_sweep(cfg, axis, values)?;
    let name = format!("sweep_{}", axis.name());
    let mut csv = create(&dir, &format!("{name}.csv"))?;
    experiment::write_sweep_csv(&mut csv, &rows)?;
    csv.flush()?;
    write_json(
        &dir,
        &format!("{name}.json"),
        &serde_json::json!({ "config_hash": cfg.hash(), "seed": cfg.seed, "rows": rows }),
    )?;
    write_config(&dir, cfg)?;
    for r in &rows {
        println!(
            "{}={}: loss {:.4} accuracy {:.4} ratio {:.2} uplink {:.6e} s, mode-1 frequency {:.3}",
            axis.name(),
            r.value,
            r.final_test_loss,
            r.final_test_accuracy,
            r.compression_ratio,
            r.comm_time_s,
            r.mode_frequencies[0]
        );
    }
    Ok(())
}

/// Returns whether every check passed.
fn verify_suite(cfg: &ExperimentConfig, suite: &str) -> predcode::Result<bool> {
    let suite: Suite = suite.parse()?;
    let dir = PathBuf::from(&cfg.output_dir);
    let report = verify::run_suite(suite, cfg.seed, cfg)?;
    let hash = cfg.hash();
    write_json(
        &dir,
        &format!("verify_{}.json", suite.name()),
        &serde_json::json!({ "config_hash": hash, "seed": cfg.seed, "report": report }),
    )?;
    if suite == Suite::Lemma1 {
        let curve = verify::lemma1_curve(cfg.seed)?;
        let mut csv = create(&dir, "lemma1_curve.csv")?;
        writeln!(csv, "config_hash,seed,N,mean,stddev")?;
        for p in curve {
            writeln!(csv, "{hash},{},{},{},{}", cfg.seed, p.modes, p.mean, p.std)?;
        }
        csv.flush()?;
    }
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("suite {}: {}", suite.name(), if report.passed { "PASS" } else { "FAIL" });
    Ok(report.passed)
}

fn run(cli: Cli) -> predcode::Result<bool> {
    match cli.command {
        Command::Train { config, seed, out } => {
            train(&load_config(Some(&config), seed, out.as_deref())?)?;
            Ok(true)
        }
        Command::Sweep {
            config,
            axis,
            values,
            seed,
            out,
        } => {
            sweep(&load_config(Some(&config), seed, out.as_deref())?, &axis, &values)?;
            Ok(true)
        }
        Command::Verify {
            suite,
            config,
            seed,
            out,
        } => verify_suite(&load_config(config.as_deref(), seed, out.as_deref())?, &suite),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
