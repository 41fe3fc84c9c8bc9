use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use softsim::harness::run::{self, RunOptions, RunReport};
use softsim::harness::{exit_code, preset, ExperimentConfig, SCENARIOS};
use softsim::{Error, Result};

#[derive(Parser)]
#[command(
    name = "softsim",
    version,
    about = "Soft-body simulation and calibration experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a forward simulation and record the tracked points.
    Simulate(Common),
    /// Measure numerical damping over a grid of step sizes and gains.
    DampingSweep(Common),
    /// Fit material, damping or actuation parameters to a reference.
    Calibrate(Common),
    /// Simulate a muscle design and export its fibers and actuation.
    MuscleDemo {
        #[command(flatten)]
        common: Common,
        /// Override the actuation level of the first fiber.
        #[arg(long)]
        level: Option<f64>,
    },
    /// Build the mesh and report its size.
    MeshInfo(Common),
    /// List the built-in scenarios, or print one as a config file.
    Scenarios {
        /// Print this scenario's config as TOML.
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario id.
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory; defaults to the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized initial guesses.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for independent runs; 0 picks the core count.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Use the full-scale mesh resolution.
    #[arg(long)]
    full_scale: bool,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, RunOptions)> {
        let config = match (&self.config, &self.scenario) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(id)) => preset(id)?,
            (None, None) => return Err(Error::Config("pass --config or --scenario".into())),
        };
        let options = RunOptions {
            out: self.out.clone().unwrap_or_else(|| PathBuf::from(&config.output)),
            seed: self.seed,
            full_scale: self.full_scale,
        };
        Ok((config, options))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallel)
            .build()
            .map_err(|e| Error::Config(format!("--parallel: {e}")))
    }
}

fn execute(command: &Command) -> Result<RunReport> {
    type Runner = fn(&ExperimentConfig, &RunOptions) -> Result<RunReport>;
    let (common, runner): (&Common, Runner) = match command {
        Command::Simulate(c) => (c, run::simulate),
        Command::DampingSweep(c) => (c, run::damping_sweep),
        Command::Calibrate(c) => (c, run::calibrate),
        Command::MeshInfo(c) => (c, run::mesh_info),
        Command::MuscleDemo { common, level } => {
            let (config, options) = common.load()?;
            return common.pool()?.install(|| run::muscle_demo(&config, &options, *level));
        }
        Command::Scenarios { .. } => unreachable!("handled before dispatch"),
    };
    let (config, options) = common.load()?;
    common.pool()?.install(|| runner(&config, &options))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Scenarios { show } = &cli.command {
        let Some(id) = show else {
            for s in SCENARIOS {
                println!("{:<18} {:<14} {}", s.id, s.command.name(), s.description);
            }
            return ExitCode::SUCCESS;
        };
        return match preset(id).and_then(|c| c.to_toml()) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e) as u8)
            }
        };
    }
    match execute(&cli.command) {
        Ok(report) => {
            print!("{}", report.summary);
            for f in &report.files {
                eprintln!("wrote {}", f.display());
            }
            if report.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &report.failures {
                    eprintln!("check failed: {f}");
                }
                ExitCode::from(4)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
