//! Command-line driver for the simulate / learn / localize / evaluate /
//! report pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use toponym::config::ExperimentConfig;
use toponym::pipeline::{self, SpeechArm};
use toponym::segment::Method;

type CliResult<T> = Result<T, toponym::Error>;

#[derive(Parser)]
#[command(
    name = "toponym",
    about = "Place-name lexicon acquisition and speech-assisted localization, fully simulated and seeded"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment configuration JSON; defaults to the built-in room setup.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Single seed to run.
    #[arg(long)]
    seed: Option<u64>,

    /// Comma-separated list of seeds to run.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Segmentation method: A (lattice), B (1-best), or C (per-syllable).
    #[arg(long)]
    method: Option<Method>,

    /// Output directory root; per-seed artifacts go to `<out>/s<seed>/`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn config(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::room(),
        };
        if let Some(method) = self.method {
            cfg.method = method;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.display().to_string();
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scenario: trajectory log plus lattice corpus.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Learn the model from simulated artifacts.
    Learn {
        #[command(flatten)]
        common: CommonArgs,
        /// Also resample the trajectory inside the Gibbs loop.
        #[arg(long)]
        sample_x: bool,
    },
    /// Compare plain and speech-weighted localization on the same run.
    Localize {
        #[command(flatten)]
        common: CommonArgs,
        /// Which arms to run: on, off, or both.
        #[arg(long, default_value = "both")]
        speech_arm: SpeechArm,
    },
    /// Compute metrics for finished runs.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Aggregate metrics across run directories.
    Report {
        /// Run directories (each containing metrics.json).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where to write report.json and report.csv.
        #[arg(long, default_value = "out/report")]
        out: PathBuf,
    },
}

fn for_each_seed(
    cfg: &ExperimentConfig,
    stage: &str,
    f: impl Fn(&ExperimentConfig, u64) -> CliResult<pipeline::RunPaths>,
) -> CliResult<()> {
    for &seed in &cfg.seeds {
        let paths = f(cfg, seed)?;
        println!("{stage}: seed {seed} -> {}", paths.dir.display());
    }
    Ok(())
}

fn run() -> CliResult<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common } => {
            let cfg = common.config()?;
            for_each_seed(&cfg, "simulate", pipeline::cmd_simulate)
        }
        Command::Learn { common, sample_x } => {
            let mut cfg = common.config()?;
            if sample_x {
                cfg.model.sample_x = true;
            }
            for_each_seed(&cfg, "learn", pipeline::cmd_learn)
        }
        Command::Localize { common, speech_arm } => {
            let cfg = common.config()?;
            for_each_seed(&cfg, "localize", |cfg, seed| {
                pipeline::cmd_localize(cfg, seed, speech_arm)
            })
        }
        Command::Evaluate { common } => {
            let cfg = common.config()?;
            for_each_seed(&cfg, "evaluate", pipeline::cmd_evaluate)
        }
        Command::Report { runs, out } => {
            let report = pipeline::cmd_report(&runs, &out)?;
            println!("report: {} rows -> {}", report.rows.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
