use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use jga_cli::{Overrides, PipelineConfig, Stage, StepsTarget};

#[derive(Debug, Parser)]
#[command(
    name = "jga",
    version,
    about = "Single-view human reconstruction through a latent diffusion bridge"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration JSON; replaces the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration (desk-sphere, desk).
    #[arg(long, global = true, default_value = "desk-sphere")]
    preset: String,
    /// Seed shared by synthesis, training and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact root; each stage writes into `<out>/<stage>/`.
    #[arg(long, global = true, default_value = "jga-out")]
    out: PathBuf,
    /// Iterations of the invoked training stage, or sampler steps for
    /// `sample` and `run-all`.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Fraction of sampler steps that re-noise before stepping.
    #[arg(long, global = true)]
    churn_ratio: Option<f64>,
    /// Multiplier on the learned score during sampling.
    #[arg(long, global = true)]
    guidance: Option<f64>,
    /// Voxel grid side.
    #[arg(long, global = true)]
    resolution: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate synthetic scenes, views, depth maps and proxy meshes.
    Synth,
    /// Voxelize ground-truth Gaussians.
    Voxelize,
    /// Train the sparse autoencoder.
    TrainVae,
    /// Train the depth and SMPL unification networks and predict their Gaussians.
    TrainUnify,
    /// Encode ground truth, depth and SMPL Gaussians into latent grids.
    Encode,
    /// Train the latent bridge denoiser.
    TrainBridge,
    /// Sample latents from the depth latents.
    Sample,
    /// Decode sampled latents into Gaussians.
    Decode,
    /// Render decoded Gaussians at the held-out views.
    Render,
    /// Compute image and geometry metrics.
    Eval,
    /// Run every stage in order.
    RunAll,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Synth => Stage::Synth,
            Command::Voxelize => Stage::Voxelize,
            Command::TrainVae => Stage::TrainVae,
            Command::TrainUnify => Stage::TrainUnify,
            Command::Encode => Stage::Encode,
            Command::TrainBridge => Stage::TrainBridge,
            Command::Sample => Stage::Sample,
            Command::Decode => Stage::Decode,
            Command::Render => Stage::Render,
            Command::Eval => Stage::Eval,
            Command::RunAll => return None,
        })
    }

    fn steps_target(self) -> StepsTarget {
        match self {
            Command::TrainVae => StepsTarget::Vae,
            Command::TrainUnify => StepsTarget::Unify,
            Command::TrainBridge => StepsTarget::Bridge,
            Command::Sample | Command::RunAll => StepsTarget::Sampler,
            _ => StepsTarget::None,
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("JGA_THREADS") {
        let n: usize = n
            .parse()
            .with_context(|| format!("JGA_THREADS must be a positive integer, got `{n}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::preset(&cli.preset)?,
    };
    let overrides = Overrides {
        seed: cli.seed,
        steps: cli.steps,
        churn_ratio: cli.churn_ratio,
        guidance: cli.guidance,
        resolution: cli.resolution,
    };
    cfg.apply(&overrides, cli.command.steps_target());
    match cli.command.stage() {
        Some(stage) => jga_cli::run_stage(stage, &cli.out, &cfg),
        None => {
            let report = jga_cli::run_all(&cli.out, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}
