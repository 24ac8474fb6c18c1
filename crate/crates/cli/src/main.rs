//! `tvde`: run learned-CV metadynamics experiments from a TOML config.

mod config;
mod manifest;
mod report;
mod stages;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use stages::{Ctx, Stage, Status};

#[derive(Parser, Debug)]
#[command(name = "tvde", version, about = "Learned collective variables and metadynamics on model systems")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for metadynamics walkers.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Recompute even when the cached result is up to date.
    #[arg(long, global = true)]
    force: bool,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Unbiased Langevin trajectory of the source system.
    Simulate,
    /// Coordinates to features.
    Featurize,
    /// Standardization and (optional) tICA projection.
    Tica,
    /// Train the VDE encoder and assemble the CV pipeline.
    TrainVde,
    /// Compile the CV to a closed-form expression and print it.
    ExportCv,
    /// Well-tempered metadynamics along the learned CV.
    Metad,
    /// Reweight the metadynamics samples into a free-energy profile.
    Reweight,
    /// Run the CV on source and target systems and compare them.
    Transfer,
    /// Render SVG plots and tables.
    Report,
    /// Every stage in dependency order, reusing cached results.
    RunAll,
}

/// Failure with its exit status: 1 for bad input, 2 for numerical trouble.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<tvde_core::Error>().is_some_and(tvde_core::Error::is_numerical));
    if numerical {
        2
    } else {
        1
    }
}

fn context(cli: &Cli) -> Result<Ctx> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let out = match (&cli.out, &cfg.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => base.join("out"),
    };
    if cli.jobs == Some(0) {
        anyhow::bail!("--jobs must be >= 1");
    }
    Ok(Ctx { cfg, out, force: cli.force, jobs: cli.jobs })
}

fn report_status(stage: Stage, status: Status) {
    let word = match status {
        Status::Cached => "cached",
        Status::Ran => "done",
    };
    eprintln!("{stage}: {word}");
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = context(cli)?;
    let single = match cli.command {
        Command::Simulate => Stage::Simulate,
        Command::Featurize => Stage::Featurize,
        Command::Tica => Stage::Tica,
        Command::TrainVde => Stage::TrainVde,
        Command::ExportCv => Stage::ExportCv,
        Command::Metad => Stage::Metad,
        Command::Reweight => Stage::Reweight,
        Command::Transfer => Stage::Transfer,
        Command::Report => Stage::Report,
        Command::RunAll => {
            for stage in Stage::ALL {
                if stage == Stage::Transfer && ctx.cfg.transfer.is_none() {
                    continue;
                }
                report_status(stage, stages::run(&ctx, stage)?);
            }
            eprintln!("outputs in {}", ctx.out.display());
            return Ok(());
        }
    };
    report_status(single, stages::run(&ctx, single)?);
    if single == Stage::ExportCv {
        let text = std::fs::read_to_string(ctx.out.join("cv.txt"))?;
        let mut stdout = std::io::stdout().lock();
        match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
            _ => {}
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
