//! Command-line wrapper over the armflow pipeline. All substance lives in
//! the library (`armflow::pipeline`); this binary only parses flags, resolves
//! the run configuration, dispatches, and maps errors to exit codes:
//!
//! * 0 — success
//! * 2 — usage error (unknown flag/subcommand, malformed value)
//! * 3 — a required artifact (dataset, checkpoint, metrics file) is missing
//! * 1 — any other failure

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use armflow::config::RunConfig;
use armflow::pipeline;
use armflow::{Error, Result};

#[derive(Parser)]
#[command(
    name = "armflow",
    version,
    about = "Forward/inverse perception models for a simulated planar arm"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Values are applied on top of the
/// defaults (or the `--config` file when given), so the precedence is
/// defaults < file < named flags < `--set` overrides.
#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output root directory
    #[arg(long)]
    out: Option<String>,

    /// Run name under the output root
    #[arg(long)]
    run: Option<String>,

    /// Master random seed
    #[arg(long)]
    seed: Option<u64>,

    /// Image edge length in pixels
    #[arg(long)]
    image_size: Option<usize>,

    /// Reference neighbours blended by the flow model
    #[arg(long)]
    k: Option<usize>,

    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,

    /// Any configuration key, as KEY=VALUE (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.set("out", v)?;
        }
        if let Some(v) = &self.run {
            cfg.set("run", v)?;
        }
        if let Some(v) = self.seed {
            cfg.set("seed", &v.to_string())?;
        }
        if let Some(v) = self.image_size {
            cfg.set("image_size", &v.to_string())?;
        }
        if let Some(v) = self.k {
            cfg.set("k", &v.to_string())?;
        }
        if let Some(v) = self.epochs {
            cfg.set("epochs", &v.to_string())?;
        }
        for kv in &self.set {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects KEY=VALUE, got '{kv}'"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render train / reference / test datasets
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the flow-warping forward model
    TrainForward {
        #[command(flatten)]
        common: Common,
    },
    /// Train the direct decoder baseline
    TrainDeconv {
        #[command(flatten)]
        common: Common,
    },
    /// Train the image-to-state inverse model
    TrainInverse {
        #[command(flatten)]
        common: Common,
    },
    /// Predict the first test trajectory and write PPM frames
    Predict {
        #[command(flatten)]
        common: Common,
        /// Forward model to use: knnflow, deconv, or nn
        #[arg(long, default_value = "knnflow")]
        model: String,
    },
    /// Score a forward model on the test split and append a metrics row
    Eval {
        #[command(flatten)]
        common: Common,
        /// Forward model to score: knnflow, deconv, or nn
        #[arg(long, default_value = "knnflow")]
        model: String,
    },
    /// Track the first test trajectory with the filter
    TrackEkf {
        #[command(flatten)]
        common: Common,
        /// Initial per-joint prior offset from truth, in degrees
        #[arg(long = "offset-deg")]
        offset_deg: Option<f64>,
    },
    /// Track the first test trajectory with per-frame inverse predictions
    TrackInverse {
        #[command(flatten)]
        common: Common,
    },
    /// Flow-symmetry occlusion analysis on the first test trajectory
    Occlusion {
        #[command(flatten)]
        common: Common,
        /// Round-trip residual threshold in pixels
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Print the run's accumulated metrics as a table
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenData { common } => pipeline::cmd_gen_data(&common.resolve()?),
        Command::TrainForward { common } => pipeline::cmd_train_forward(&common.resolve()?),
        Command::TrainDeconv { common } => pipeline::cmd_train_deconv(&common.resolve()?),
        Command::TrainInverse { common } => pipeline::cmd_train_inverse(&common.resolve()?),
        Command::Predict { common, model } => pipeline::cmd_predict(&common.resolve()?, &model),
        Command::Eval { common, model } => pipeline::cmd_eval(&common.resolve()?, &model),
        Command::TrackEkf { common, offset_deg } => {
            let mut cfg = common.resolve()?;
            if let Some(deg) = offset_deg {
                cfg.set("prior_offset_deg", &deg.to_string())?;
                cfg.validate()?;
            }
            pipeline::cmd_track_ekf(&cfg)
        }
        Command::TrackInverse { common } => pipeline::cmd_track_inverse(&common.resolve()?),
        Command::Occlusion { common, epsilon } => {
            let mut cfg = common.resolve()?;
            if let Some(eps) = epsilon {
                cfg.set("epsilon_px", &eps.to_string())?;
                cfg.validate()?;
            }
            pipeline::cmd_occlusion(&cfg)
        }
        Command::Report { common } => pipeline::cmd_report(&common.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err @ Error::MissingArtifact(_)) => {
            eprintln!("error: {err}");
            ExitCode::from(3)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
