use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scud::experiment::{self, ExperimentConfig};
use scud::io::write_atomic;
use scud::{Result, ScudError};

#[derive(Parser)]
#[command(name = "scud", version, about = "Schedule-conditioned discrete diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant checks.
    Verify,
    /// Train a denoiser; writes checkpoint.bin and loss.csv.
    Train,
    /// Estimate the loss; writes elbo.csv and elbo_report.txt.
    Elbo,
    /// Draw samples; writes samples.txt.
    Sample,
    /// Fit the rate schedule; writes schedule.csv.
    Schedule,
    /// Compare forward and backward rates; writes diagnose.csv.
    Diagnose,
    /// Sample a toy dataset; writes data.txt.
    GenData,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| ScudError::InvalidArgument("this command needs --config".into()))?;
    let cfg = ExperimentConfig::load(path).map_err(|e| match e {
        ScudError::Parse { line, message } => {
            ScudError::InvalidArgument(format!("{}:{line}: {message}", path.display()))
        }
        other => other,
    })?;
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: &Cli) -> Result<bool> {
    let out = &cli.out;
    match cli.command {
        Command::Verify => {
            let report = scud::verify::run_verify()?;
            println!("{report}");
            if cli.config.is_some() || out.exists() {
                write_atomic(&out.join("verify.txt"), format!("{report}\n").as_bytes())?;
            }
            return Ok(report.all_passed());
        }
        Command::Train => {
            let losses = experiment::run_train(&load(cli)?, out)?;
            match losses.last() {
                Some(l) => println!("trained {} steps, final loss {l:.6} nats/dim", losses.len()),
                None => println!("trained 0 steps"),
            }
        }
        Command::Elbo => {
            let est = experiment::run_elbo(&load(cli)?, out)?;
            println!(
                "loss {:.6} nats/dim ({:.6} bits/dim), std error {:.6}, {} samples",
                est.total,
                est.bits_per_dimension(),
                est.std_error,
                est.samples
            );
        }
        Command::Sample => {
            let samples = experiment::run_sample(&load(cli)?, out)?;
            println!("wrote {} samples", samples.len());
        }
        Command::Schedule => {
            let s = experiment::run_schedule(&load(cli)?, out)?;
            println!("cumulative rate at t = 1: {:.6}", s.horizon());
        }
        Command::Diagnose => {
            let bins = experiment::run_diagnose(&load(cli)?, out)?;
            let worst = bins.iter().map(|b| b.difference().abs()).fold(0.0, f64::max);
            println!("{} bins, largest |backward - forward| = {worst:.6}", bins.len());
        }
        Command::GenData => {
            let data = experiment::run_gen_data(&load(cli)?, out)?;
            println!("wrote {} sequences", data.sequences.len());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
