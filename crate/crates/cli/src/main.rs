//! `hierhar` command-line driver.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hierhar::data::Level;
use hierhar::train::ClassWeightsMode;

use commands::{Output, SynthFlags};
use config::{RunConfig, TrainOverrides};
use error::CliResult;

#[derive(Parser)]
#[command(
    name = "hierhar",
    version,
    about = "Hierarchical activity recognition from a head-worn IMU"
)]
struct Cli {
    /// Root under which run directories are created.
    #[arg(long, global = true, env = "HIERHAR_OUT", default_value = "runs")]
    out: PathBuf,

    /// Write into this directory instead of a content-addressed one.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ConfigArg {
    /// Run config TOML; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Default)]
struct TrainArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long = "epochs")]
    max_epochs: Option<usize>,
    /// Learning-rate decay factor.
    #[arg(long = "gamma")]
    lr_gamma: Option<f64>,
    /// Epochs between learning-rate decays.
    #[arg(long = "step")]
    lr_step_epochs: Option<usize>,
    #[arg(long, value_parser = parse_weights)]
    class_weights: Option<ClassWeightsMode>,
}

fn parse_weights(s: &str) -> Result<ClassWeightsMode, String> {
    match s {
        "inverse_frequency" => Ok(ClassWeightsMode::InverseFrequency),
        "uniform" => Ok(ClassWeightsMode::Uniform),
        _ => Err("expected inverse_frequency or uniform".into()),
    }
}

fn parse_level(s: &str) -> Result<Level, String> {
    match s {
        "high" => Ok(Level::High),
        "low" => Ok(Level::Low),
        _ => Err("expected high or low".into()),
    }
}

impl TrainArgs {
    fn overrides(&self) -> TrainOverrides {
        TrainOverrides {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            lr_gamma: self.lr_gamma,
            lr_step_epochs: self.lr_step_epochs,
            seed: self.seed,
            class_weights_mode: self.class_weights,
        }
    }
}

#[derive(Args, Default)]
struct ExperimentArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Model spec TOML.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Stride between high-level windows in seconds.
    #[arg(long)]
    hl_stride: Option<f64>,
    #[command(flatten)]
    train: TrainArgs,
}

impl ExperimentArgs {
    fn run_config(&self) -> RunConfig {
        RunConfig {
            manifest: self.manifest.clone(),
            model: self.model.clone(),
            samples_per_class: self.samples_per_class,
            test_fraction: self.test_fraction,
            hl_stride_s: self.hl_stride,
            train: self.train.overrides(),
            ..RunConfig::default()
        }
    }
}

#[derive(Args)]
struct CheckpointArgs {
    /// Trained model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train encoder and head jointly on a high-level dataset.
    Train {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Score a checkpoint on a high-level dataset.
    Eval {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        ck: CheckpointArgs,
        /// Split plan JSON; only its test participants are scored.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        hl_stride: Option<f64>,
    },
    /// Cross-validate a linear probe on a frozen encoder.
    Probe {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        ck: CheckpointArgs,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Write low-level embeddings from a frozen encoder.
    Embed {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        ck: CheckpointArgs,
    },
    /// Project low-level embeddings to two dimensions.
    Pca {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        ck: CheckpointArgs,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Count parameters and FLOPs of a spec.
    Count { spec: PathBuf },
    /// Check an encoder spec against the deployment parameter budget.
    Budget { spec: PathBuf },
    /// Train once per value of one axis.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArg,
        #[command(flatten)]
        exp: ExperimentArgs,
        /// samples_per_class, rate_hz or hl_window_s.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values; "all" lifts the sample cap.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
        #[arg(long)]
        parallel: bool,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        cfg: ConfigArg,
        /// high or low.
        #[arg(long, value_parser = parse_level)]
        level: Option<Level>,
        /// Rate recorded in the manifest.
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        participants: Option<usize>,
        /// Seconds per recording.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Sample rate of the generated streams.
        #[arg(long)]
        native_rate: Option<f64>,
    },
    /// Plan a participant-disjoint split, and optionally folds.
    Split {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn resolve(name: &str, file: &ConfigArg, flags: RunConfig) -> CliResult<RunConfig> {
    let base = match &file.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.merge(flags);
    cfg.command = Some(name.to_string());
    Ok(cfg)
}

fn dispatch(cli: Cli) -> CliResult<bool> {
    let out = Output {
        root: cli.out,
        dir: cli.run_dir,
    };
    match cli.command {
        Command::Train { cfg, exp } => {
            commands::train(resolve("train", &cfg, exp.run_config())?, &out)?
        }
        Command::Eval {
            cfg,
            ck,
            split,
            hl_stride,
        } => {
            let flags = RunConfig {
                checkpoint: ck.checkpoint,
                manifest: ck.manifest,
                split,
                hl_stride_s: hl_stride,
                ..RunConfig::default()
            };
            commands::eval(resolve("eval", &cfg, flags)?, &out)?
        }
        Command::Probe {
            cfg,
            ck,
            folds,
            samples_per_class,
            train,
        } => {
            let flags = RunConfig {
                checkpoint: ck.checkpoint,
                manifest: ck.manifest,
                folds,
                samples_per_class,
                train: train.overrides(),
                ..RunConfig::default()
            };
            commands::probe(resolve("probe", &cfg, flags)?, &out)?
        }
        Command::Embed { cfg, ck } => {
            let flags = RunConfig {
                checkpoint: ck.checkpoint,
                manifest: ck.manifest,
                ..RunConfig::default()
            };
            commands::embed(resolve("embed", &cfg, flags)?, &out)?
        }
        Command::Pca {
            cfg,
            ck,
            per_class,
            seed,
        } => {
            let flags = RunConfig {
                checkpoint: ck.checkpoint,
                manifest: ck.manifest,
                per_class,
                train: TrainOverrides {
                    seed,
                    ..TrainOverrides::default()
                },
                ..RunConfig::default()
            };
            commands::pca(resolve("pca", &cfg, flags)?, &out)?
        }
        Command::Count { spec } => commands::count(&spec, &out)?,
        Command::Budget { spec } => return commands::budget(&spec),
        Command::Sweep {
            cfg,
            exp,
            axis,
            values,
            parallel,
        } => {
            let flags = RunConfig {
                axis,
                values,
                parallel: parallel.then_some(true),
                ..exp.run_config()
            };
            commands::sweep(resolve("sweep", &cfg, flags)?, &out)?
        }
        Command::Synth {
            cfg,
            level,
            rate,
            participants,
            duration,
            seed,
            native_rate,
        } => {
            let flags = RunConfig {
                level,
                rate_hz: rate,
                ..RunConfig::default()
            };
            let mut c = resolve("synth", &cfg, flags)?;
            SynthFlags {
                participants,
                duration_s: duration,
                seed,
                native_rate_hz: native_rate,
            }
            .apply(&mut c);
            commands::synth(c, &out)?
        }
        Command::Split {
            cfg,
            manifest,
            test_fraction,
            folds,
            seed,
        } => {
            let flags = RunConfig {
                manifest,
                test_fraction,
                folds,
                train: TrainOverrides {
                    seed,
                    ..TrainOverrides::default()
                },
                ..RunConfig::default()
            };
            commands::split(resolve("split", &cfg, flags)?, &out)?
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}
