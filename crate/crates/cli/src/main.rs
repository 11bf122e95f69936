//! `faithkit`: runs faithfulness experiments from a TOML config.

mod config;
mod pipelines;
mod store;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;
use store::{Provenance, Store};

#[derive(Parser)]
#[command(name = "faithkit", version, about = "Faithfulness experiments for importance-measure explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// ROAR validation on the synthetic tabular generator.
    SyntheticValidate(Common),
    /// Masked fine-tuning, MaSF p-values and recursive faithfulness curves.
    FmmRun(Common),
    /// Remove-and-retrain curves, one-shot and recursive.
    RoarRun(Common),
    /// Calibrate MaSF on a saved model.
    MasfCalibrate(Common),
    /// Score masked data with a MaSF calibration.
    MasfScore(Common),
    /// Self-consistency evaluation against a chat backend.
    SelfcheckRun(Common),
    /// Collect the pipeline reports of an output directory into report.md.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the config.
    #[arg(short, long)]
    workers: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig { base_dir: PathBuf::from("."), ..toml::from_str("")? },
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    let common = match &cli.command {
        Command::SyntheticValidate(c)
        | Command::FmmRun(c)
        | Command::RoarRun(c)
        | Command::MasfCalibrate(c)
        | Command::MasfScore(c)
        | Command::SelfcheckRun(c)
        | Command::Report(c) => c,
    };
    let cfg = common.config()?;
    let workers = cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().context("cannot start worker pool")?;
    let provenance = Provenance { config_sha256: cfg.hash(), seed: cfg.seed };
    log::info!("config {} seed {} workers {workers}", provenance.config_sha256, provenance.seed);
    let store = Store::open(&cfg.out_dir(), provenance)?;
    use pipelines::*;
    match cli.command {
        Command::SyntheticValidate(_) => synthetic::run(&cfg, &store),
        Command::FmmRun(_) => fmm::run(&cfg, &store),
        Command::RoarRun(_) => roar::run(&cfg, &store),
        Command::MasfCalibrate(_) => masf::calibrate(&cfg, &store),
        Command::MasfScore(_) => masf::score(&cfg, &store),
        Command::SelfcheckRun(_) => selfcheck::run(&cfg, &store, workers),
        Command::Report(_) => report::run(&cfg, &store),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
