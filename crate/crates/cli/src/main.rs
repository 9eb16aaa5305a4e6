use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use llpl_core::experiment::{
    cmd_compare, cmd_demo_gen, cmd_noise_replay, cmd_run, cmd_train_il, CompareConfig,
    ExperimentConfig,
};
use llpl_core::Error;

/// Lifelong policy learning experiments for path-tracking control.
#[derive(Parser)]
#[command(name = "llpl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic demonstration log, samples and normalizer.
    DemoGen(Common),
    /// Train the base policy by imitation from the demonstration samples.
    TrainIl(Common),
    /// Run the configured method over the scenario schedule.
    Run(Common),
    /// Join run summaries into one comparison table.
    Compare(Common),
    /// Run LLPL on noise-corrupted logs next to frozen IL and clean LLPL.
    NoiseReplay(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUN: u8 = 3;
const EXIT_MISSING: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownScenario(_) | Error::BadWaypoints(_) => EXIT_CONFIG,
        Error::MissingArtifact(_) => EXIT_MISSING,
        _ => EXIT_RUN,
    }
}

fn experiment(args: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<u8, Error> {
    match command {
        Command::DemoGen(args) => {
            let cfg = experiment(&args)?;
            let out = cmd_demo_gen(&cfg)?;
            println!("{} log rows, {} samples in {}", out.log_rows, out.samples, cfg.output_dir.display());
        }
        Command::TrainIl(args) => {
            let cfg = experiment(&args)?;
            let losses = cmd_train_il(&cfg)?;
            println!(
                "imitation loss {:.3e} -> {:.3e}; policy in {}",
                losses[0],
                losses.last().copied().unwrap_or(f64::NAN),
                cfg.output_dir.display()
            );
        }
        Command::Run(args) => {
            let cfg = experiment(&args)?;
            let out = cmd_run(&cfg)?;
            for r in &out.summary {
                println!(
                    "{} epoch {}: rmse_e_lat {:.4} m, max {:.3} m, mem {}{}",
                    r.method,
                    r.epoch,
                    r.rmse_e_lat,
                    r.max_abs_e_lat,
                    r.mem_size,
                    if r.failed { ", left the path" } else { "" }
                );
            }
            if out.any_failed() {
                log::error!("at least one epoch left the path");
                return Ok(EXIT_RUN);
            }
        }
        Command::Compare(args) => {
            let mut cfg = CompareConfig::load(&args.config)?;
            if let Some(out) = args.out {
                cfg.output_dir = out;
            }
            if args.seed.is_some() {
                log::warn!("--seed has no effect on compare");
            }
            let table = cmd_compare(&cfg)?;
            println!("{} rows in {}", table.len(), display(&cfg.output_dir));
        }
        Command::NoiseReplay(args) => {
            let cfg = experiment(&args)?;
            let out = cmd_noise_replay(&cfg)?;
            let r = &out.report;
            println!(
                "final rmse_e_lat: clean llpl {:.4}, noisy llpl {:.4}, noisy il {:.4} ({:+.1}% vs clean, {:.1}% below il)",
                r.clean_llpl_final, r.noisy_llpl_final, r.noisy_il_final, r.degradation_pct, r.llpl_vs_il_pct
            );
            if [&out.clean, &out.noisy_llpl, &out.noisy_il].iter().any(|o| o.any_failed()) {
                return Ok(EXIT_RUN);
            }
        }
    }
    Ok(0)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LLPL_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
