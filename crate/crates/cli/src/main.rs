//! `lunggan`: train 3D lung-CT GANs and run the evaluation suite.

mod commands;
mod data;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lunggan_core::Error;

use commands::{compare, fid, observer, phantom, sample, structure, train};

#[derive(Parser)]
#[command(name = "lunggan", version, about = "3D lung-CT GAN training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat `key = value` config file (`[section]` headers allowed).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for all randomness of the command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Refuse any nondeterministic execution path.
    #[arg(long)]
    pub deterministic: bool,
    /// Override any setting: `--set training.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator/discriminator pair.
    Train(train::TrainArgs),
    /// Generate patches from a checkpoint as a PNG grid.
    Sample(sample::SampleArgs),
    /// 2D central-slice Fréchet distance.
    Fid(fid::FidArgs),
    /// 3D Fréchet distance over whole patches.
    Fid3d(fid::FidArgs),
    /// Interpolate between two latents (slerp in z, lerp in w).
    Interpolate(sample::InterpolateArgs),
    /// Branch-count ROC of real versus generated patches.
    SkeletonRoc(structure::RocArgs),
    /// 2D embedding of the latent space labelled with branch counts.
    UmapExport(structure::EmbedArgs),
    /// Blinded real/fake stimuli for a reader study.
    ObserverExport(observer::ObserverArgs),
    /// Welch test over per-run FID minima of two methods.
    CompareRuns(compare::CompareArgs),
    /// Write a synthetic phantom dataset.
    Phantom(phantom::PhantomArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Validation(_) => 3,
        _ => 4,
    }
}

fn report(e: &Error) {
    let (kind, key) = match e {
        Error::Config { key, .. } => ("config", Some(key.as_str())),
        Error::Validation(_) => ("validation", None),
        Error::Io { .. } => ("io", None),
        Error::Format { .. } => ("format", None),
        Error::Diverged(_) => ("diverged", None),
        _ => ("runtime", None),
    };
    eprintln!("lunggan: error: {e}");
    eprintln!(
        "{}",
        serde_json::json!({ "error": { "kind": kind, "key": key, "message": e.to_string() } })
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Sample(a) => sample::run_sample(a),
        Command::Fid(a) => fid::run(a, false),
        Command::Fid3d(a) => fid::run(a, true),
        Command::Interpolate(a) => sample::run_interpolate(a),
        Command::SkeletonRoc(a) => structure::run_roc(a),
        Command::UmapExport(a) => structure::run_embed(a),
        Command::ObserverExport(a) => observer::run(a),
        Command::CompareRuns(a) => compare::run(a),
        Command::Phantom(a) => phantom::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
