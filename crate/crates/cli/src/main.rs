mod commands;
mod config;
mod eval;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cardiogen::anatomy::PhantomProfile;
use cardiogen::{Error, Result};
use clap::{Args, Parser, Subcommand};

use commands::{EvalArgs, PhantomArgs};
use config::RunConfig;

/// Phantom generation, shape VAE and SPADE GAN training, synthetic corpus
/// generation, segmentation training and Dice evaluation.
#[derive(Parser)]
#[command(name = "cardiogen", version)]
struct Cli {
    /// Threads for tensor kernels. 0 runs on one thread, the bit-reproducible path.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural phantom dataset with `train` and `test` splits.
    Phantoms {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        test_n: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        profile: Option<PhantomProfile>,
    },
    /// Train the shape VAE on the label maps of a dataset.
    TrainVae {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the SPADE GAN on (image, label map) pairs.
    TrainGan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train a segmenter from scratch.
    TrainSeg {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Paired geometric augmentation on or off.
        #[arg(long)]
        augment: Option<bool>,
    },
    /// Continue training a segmenter on another dataset at a reduced rate.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Segmenter checkpoint, or the output directory of `train-seg`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample shapes from the VAE and render them with the GAN.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        gan: PathBuf,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score segmenters on test sets and tabulate mean Dice.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `name=path` pairs; a path of `truth` scores the labels themselves.
        #[arg(long, value_delimiter = ',', value_parser = named_path, required = true)]
        checkpoints: Vec<(String, PathBuf)>,
        /// `name=path` pairs of dataset directories.
        #[arg(long, value_delimiter = ',', value_parser = named_path, required = true)]
        testsets: Vec<(String, PathBuf)>,
        /// TOML grid of regimes, test sets, fine-tune variants and cells.
        /// Without it every checkpoint is a row scored on every test set.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Split of each test set to score.
        #[arg(long)]
        split: Option<String>,
    },
}

fn named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected name=path, got `{s}`")),
    }
}

fn config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.seed = seed.unwrap_or(cfg.seed);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantoms {
            common,
            n,
            test_n,
            size,
            profile,
        } => {
            let cfg = config(common.config.as_deref(), common.seed)?;
            commands::phantoms(cfg, PhantomArgs { n, test_n, size, profile }, &common.out)
        }
        Command::TrainVae { common, data, epochs } => {
            commands::train_vae_cmd(config(common.config.as_deref(), common.seed)?, &data, &common.out, epochs)
        }
        Command::TrainGan { common, data, epochs } => {
            commands::train_gan_cmd(config(common.config.as_deref(), common.seed)?, &data, &common.out, epochs)
        }
        Command::TrainSeg {
            common,
            data,
            epochs,
            augment,
        } => {
            let cfg = config(common.config.as_deref(), common.seed)?;
            commands::train_seg_cmd(cfg, &data, &common.out, epochs, augment)
        }
        Command::Finetune {
            common,
            data,
            checkpoint,
            epochs,
        } => {
            let cfg = config(common.config.as_deref(), common.seed)?;
            commands::finetune_cmd(cfg, &data, &checkpoint, &common.out, epochs)
        }
        Command::Synth { common, vae, gan, n } => {
            commands::synth_cmd(config(common.config.as_deref(), common.seed)?, &vae, &gan, n, &common.out)
        }
        Command::Eval {
            config: cfg_path,
            out,
            checkpoints,
            testsets,
            grid,
            split,
        } => {
            let cfg = config(cfg_path.as_deref(), None)?;
            let args = EvalArgs {
                checkpoints: &checkpoints,
                testsets: &testsets,
                grid: grid.as_deref(),
                split,
            };
            commands::eval_cmd(cfg, args, &out).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // Read by the tensor kernels on first use, so it must be set before any work.
    std::env::set_var("RAYON_NUM_THREADS", cli.workers.max(1).to_string());
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        2
    } else {
        3
    }
}
