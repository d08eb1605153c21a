use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparsepose_cli::{run, CliError, Command, Mode, Overrides, PipelineConfig, Workspace};
use sparsepose_models::guidance::GuidanceStrategy;
use sparsepose_models::imputer::UncertaintyKind;

#[derive(Parser)]
#[command(name = "sparsepose", version, about = "Full-body motion from a head tracker and intermittent hand detections")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Generate the synthetic train/val/test splits.
    GenData,
    /// Train the masked-autoencoder imputation ensemble.
    TrainMae,
    /// Train the motion tokenizer.
    TrainVqvae,
    /// Train the guided and the head-only denoisers.
    TrainDiffusion,
    /// Impute dense hand trajectories for the inference split.
    Impute,
    /// Generate full-body motion in one input mode.
    Generate,
    /// Run every regime and write the comparison report.
    Evaluate,
    /// Plot imputed hand trajectories with uncertainty bands.
    Plot,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::GenData => Command::GenData,
            Sub::TrainMae => Command::TrainMae,
            Sub::TrainVqvae => Command::TrainVqvae,
            Sub::TrainDiffusion => Command::TrainDiffusion,
            Sub::Impute => Command::Impute,
            Sub::Generate => Command::Generate,
            Sub::Evaluate => Command::Evaluate,
            Sub::Plot => Command::Plot,
        }
    }
}

#[derive(Args)]
struct Shared {
    /// TOML config, or a manifest-*.json from an earlier run to replay it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory holding data, checkpoints, outputs and manifests.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// none, sample, dropout or dist-embed.
    #[arg(long, global = true)]
    strategy: Option<GuidanceStrategy>,
    /// aleatoric, epistemic or total.
    #[arg(long, global = true)]
    uncertainty: Option<UncertaintyKind>,
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// Inference diffusion steps; must divide the training steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Zero the high-uncertainty elements instead of the low ones under dropout guidance.
    #[arg(long, global = true)]
    invert_dropout: bool,
    /// Sequence index for `plot`.
    #[arg(long, global = true)]
    sequence: Option<usize>,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let s = cli.shared;
    let mut cfg = match &s.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    Overrides {
        seed: s.seed,
        mode: s.mode,
        strategy: s.strategy,
        uncertainty: s.uncertainty,
        n_samples: s.n_samples,
        stride: s.stride,
        steps: s.steps,
        invert_dropout: s.invert_dropout,
        sequence: s.sequence,
    }
    .apply(&mut cfg);
    let cmd = Command::from(cli.command);
    let ws = Workspace::new(&s.out);
    let manifest = run(cmd, &cfg, &ws)?;
    println!("{} done; manifest {}", cmd.name(), ws.manifest(cmd.name()).display());
    if let Some(total) = manifest.timings.get("total") {
        println!("{total:.1} s");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
