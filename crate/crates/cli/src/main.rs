use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod commands;
mod run;

use commands::{AblateArgs, DemoArgs, GradcheckArgs, SweepArgs};
use run::TrainArgs;

/// Particle posterior inference and latent variable regression experiments.
#[derive(Parser)]
#[command(name = "kprox", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Particle approximation of a bimodal 1-D posterior from two starts.
    DemoPosterior(DemoArgs),
    /// Train on a dataset and evaluate the selected model on its test split.
    Train(TrainArgs),
    /// One training run per value of a hyperparameter.
    Sweep(SweepArgs),
    /// Full model against the VAE and KL-encoder variants.
    Ablate(AblateArgs),
    /// Compare every analytic gradient with finite differences.
    Gradcheck(GradcheckArgs),
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("KPROX_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().with_context(|| format!("KPROX_THREADS=`{raw}` is not a count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::DemoPosterior(a) => commands::demo_posterior(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
