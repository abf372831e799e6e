use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod render;

use config::Settings;

#[derive(Parser)]
#[command(
    name = "inclusive",
    version,
    about = "Learn fair tokens, generate and evaluate inclusive images"
)]
struct Cli {
    /// Root seed; every stage derives its own seed from it
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Joint text/image encoder
    #[arg(long, global = true, default_value = "toy")]
    encoder: String,

    /// Diffusion backend (overrides the job file)
    #[arg(long, global = true)]
    backend: Option<String>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train fair tokens on a reference dataset
    Train(commands::train::Args),
    /// Generate images from a job file
    Generate(commands::generate::Args),
    /// Compute KL and FID for a run
    Evaluate(commands::evaluate::Args),
    /// Fit Gaussian feature statistics for FID
    FitStats(commands::evaluate::FitStatsArgs),
    /// Time training as the number of attributes grows
    Benchmark(commands::benchmark::Args),
    /// Filter a dataset manifest into an ablation variant
    MakeVariant(commands::variant::Args),
    /// Compare runs side by side
    Report(commands::report::Args),
    /// Write a synthetic latent-image dataset
    SynthDataset(commands::synth::Args),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use inclusive_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Schema(_)
                | E::Validation(_)
                | E::Precondition(_)
                | E::Config(_)
                | E::SequenceLength { .. }
                | E::Ingestion { .. } => 2,
                E::BackendUnavailable(_) => 3,
                E::Numeric(_) => 4,
                E::Backend(_) | E::Io(_) => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = Settings::load(
        cli.config.as_deref(),
        cli.seed,
        &cli.encoder,
        cli.backend,
        cli.out,
    )
    .and_then(|settings| match cli.command {
        Command::Train(a) => commands::train::run(&settings, a),
        Command::Generate(a) => commands::generate::run(&settings, a),
        Command::Evaluate(a) => commands::evaluate::run(&settings, a),
        Command::FitStats(a) => commands::evaluate::fit_stats(&settings, a),
        Command::Benchmark(a) => commands::benchmark::run(&settings, a),
        Command::MakeVariant(a) => commands::variant::run(&settings, a),
        Command::Report(a) => commands::report::run(&settings, a),
        Command::SynthDataset(a) => commands::synth::run(&settings, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
