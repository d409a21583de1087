//! `bmlkit` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data
//! error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::DetectArgs;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "bmlkit", version, about = "Inpainting-based bright-lesion detection on 2D slices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset with ground truth.
    Phantom {
        #[command(flatten)]
        common: Common,
    },
    /// Train the inpainter on the healthy split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Override the configured step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run detection on a single slice or a manifest split.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Input slice (requires --bone).
        #[arg(long)]
        image: Option<PathBuf>,
        /// Bone mask for --image.
        #[arg(long)]
        bone: Option<PathBuf>,
        /// Manifest split to process (default: test) when --image is absent.
        #[arg(long)]
        split: Option<String>,
        /// Use the training-free harmonic inpainter.
        #[arg(long)]
        classical: bool,
        /// Dump every pipeline stage as 16-bit images.
        #[arg(long)]
        trace: bool,
        /// Write RGB overlays with mask contours.
        #[arg(long)]
        overlay: bool,
    },
    /// Evaluate the pipeline over the test split, optionally sweeping
    /// resolutions.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Use the training-free harmonic inpainter.
        #[arg(long)]
        classical: bool,
        /// Comma-separated resolutions, e.g. 128,192,256,320,448.
        #[arg(long, value_delimiter = ',')]
        resolutions: Option<Vec<usize>>,
    },
    /// Re-render the tables from an existing evaluation report.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run() -> Result<(), (u8, anyhow::Error)> {
    let cli = Cli::try_parse().map_err(|e| {
        let is_help = matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
        );
        let _ = e.print();
        if is_help {
            (0u8, anyhow::anyhow!(""))
        } else {
            (1u8, anyhow::anyhow!(""))
        }
    })?;

    let config_err = |e: anyhow::Error| (1u8, e);
    let runtime_err = |e: anyhow::Error| (2u8, e);

    match cli.command {
        Command::Phantom { common } => {
            let cfg = load_config(&common).map_err(config_err)?;
            commands::cmd_phantom(&cfg).map_err(runtime_err)
        }
        Command::Train { common, steps } => {
            let mut cfg = load_config(&common).map_err(config_err)?;
            if let Some(steps) = steps {
                cfg.train.config.steps = steps;
            }
            commands::cmd_train(&cfg).map_err(runtime_err)
        }
        Command::Detect {
            common,
            image,
            bone,
            split,
            classical,
            trace,
            overlay,
        } => {
            let cfg = load_config(&common).map_err(config_err)?;
            let args = DetectArgs {
                image,
                bone,
                split,
                classical,
                trace,
                overlay,
            };
            commands::cmd_detect(&cfg, &args).map_err(runtime_err)
        }
        Command::Eval {
            common,
            classical,
            resolutions,
        } => {
            let cfg = load_config(&common).map_err(config_err)?;
            commands::cmd_eval(&cfg, classical, resolutions).map_err(runtime_err)
        }
        Command::Report { common } => {
            let cfg = load_config(&common).map_err(config_err)?;
            commands::cmd_report(&cfg).map_err(runtime_err)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg:#}");
            }
            ExitCode::from(code)
        }
    }
}
