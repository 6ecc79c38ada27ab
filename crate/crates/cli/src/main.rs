use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flexti2v_cli::{load_config, run, table, Failure, Preset, RunConfig, WORKER_ENV};

#[derive(Parser)]
#[command(
    name = "flexti2v",
    version,
    about = "Training-free text-image-to-video conditioning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a video and write frames, latents, metrics and a report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// animation, rewind, interpolate or outpaint
        #[arg(long)]
        preset: Option<Preset>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the swap schedule for every (m, n, t) as CSV.
    InspectSchedule {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: Option<Preset>,
    },
}

fn prepare(config: &Path, preset: Option<Preset>) -> Result<RunConfig, Failure> {
    let mut cfg = load_config(config)?;
    if let Some(p) = preset {
        cfg.apply_preset(p)?;
    }
    if let Ok(endpoint) = std::env::var(WORKER_ENV) {
        if !endpoint.is_empty() {
            cfg.override_endpoint(&endpoint)?;
        }
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            preset,
            out,
            seed,
        } => {
            let mut cfg = prepare(&config, preset)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            if let Some(s) = seed {
                cfg.engine.seed = s;
            }
            let report = run(&cfg)?;
            let total = report
                .total_ms
                .map(|t| format!(", {t:.1} ms"))
                .unwrap_or_default();
            println!(
                "wrote {} files to {} ({} estimator calls{total})",
                report.manifest.len() + 1,
                cfg.output_dir.display(),
                report.estimator_calls
            );
        }
        Command::InspectSchedule { config, preset } => {
            let cfg = prepare(&config, preset)?;
            print!("{}", table::schedule_table(&cfg.engine, &cfg.positions()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
