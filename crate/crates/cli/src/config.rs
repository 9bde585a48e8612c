use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hierhar::data::synth::SynthSpec;
use hierhar::data::Level;
use hierhar::train::{ClassWeightsMode, TrainConfig};

use crate::error::{CliError, CliResult};

/// Optional overrides of the training hyperparameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_step_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_weights_mode: Option<ClassWeightsMode>,
}

impl TrainOverrides {
    /// Fields set in `other` win.
    pub fn merge(&mut self, other: &TrainOverrides) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            learning_rate,
            batch_size,
            max_epochs,
            lr_gamma,
            lr_step_epochs,
            seed,
            class_weights_mode
        );
    }

    pub fn resolve(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            lr_gamma: self.lr_gamma.unwrap_or(d.lr_gamma),
            lr_step_epochs: self.lr_step_epochs.unwrap_or(d.lr_step_epochs),
            seed: self.seed.unwrap_or(d.seed),
            class_weights_mode: self.class_weights_mode.unwrap_or(d.class_weights_mode),
        }
    }

    pub fn of(c: &TrainConfig) -> Self {
        TrainOverrides {
            learning_rate: Some(c.learning_rate),
            batch_size: Some(c.batch_size),
            max_epochs: Some(c.max_epochs),
            lr_gamma: Some(c.lr_gamma),
            lr_step_epochs: Some(c.lr_step_epochs),
            seed: Some(c.seed),
            class_weights_mode: Some(c.class_weights_mode),
        }
    }
}

/// Every setting a subcommand may read. Loaded from TOML, overridden by
/// flags, and written back fully resolved into each run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Model spec TOML.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Split plan JSON restricting evaluation to its test participants.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hl_stride_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallel: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    /// Rate recorded in a generated manifest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub train: TrainOverrides,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

fn is_default(t: &TrainOverrides) -> bool {
    *t == TrainOverrides::default()
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            message: e.message().to_string(),
        })
    }

    /// Fields set in `flags` win over `self`.
    pub fn merge(mut self, flags: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f; } )* };
        }
        take!(
            command,
            manifest,
            model,
            checkpoint,
            split,
            samples_per_class,
            test_fraction,
            hl_stride_s,
            folds,
            per_class,
            axis,
            values,
            parallel,
            level,
            rate_hz,
            synth
        );
        self.train.merge(&flags.train);
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Content hash of the resolved settings, for naming run directories.
    pub fn digest(&self) -> String {
        let h = Sha256::digest(self.to_toml().as_bytes());
        h.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn require<'a, T>(field: &'a Option<T>, name: &str) -> CliResult<&'a T> {
        field
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("--{} is required", name.replace('_', "-"))))
    }
}

/// Absolute form of a path so snapshots replay from any directory.
pub fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Creates the directory a run writes into: `dir` if given, otherwise
/// `<root>/<command>-<digest>`.
pub fn run_dir(root: &Path, dir: Option<&Path>, cfg: &RunConfig) -> CliResult<PathBuf> {
    let d = match dir {
        Some(d) => d.to_path_buf(),
        None => root.join(format!(
            "{}-{}",
            cfg.command.as_deref().unwrap_or("run"),
            cfg.digest()
        )),
    };
    std::fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
    std::fs::write(d.join("config.toml"), cfg.to_toml()).map_err(|e| CliError::io(&d, e))?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "manifest = \"m.json\"\nlearning_rat = 0.1\n").unwrap();
        let err = RunConfig::load(&p).unwrap_err();
        assert!(err.to_string().contains("learning_rat"), "{err}");
        std::fs::write(&p, "[train]\nepochs = 3\n").unwrap();
        assert!(RunConfig::load(&p).is_err());
    }

    #[test]
    fn flags_override_file_and_round_trip() {
        let file = RunConfig {
            manifest: Some("a.json".into()),
            samples_per_class: Some(10),
            train: TrainOverrides {
                learning_rate: Some(0.3),
                max_epochs: Some(4),
                ..TrainOverrides::default()
            },
            ..RunConfig::default()
        };
        let flags = RunConfig {
            samples_per_class: Some(20),
            train: TrainOverrides {
                max_epochs: Some(7),
                ..TrainOverrides::default()
            },
            ..RunConfig::default()
        };
        let m = file.merge(flags);
        assert_eq!(m.samples_per_class, Some(20));
        assert_eq!(m.manifest, Some("a.json".into()));
        let t = m.train.resolve();
        assert_eq!((t.learning_rate, t.max_epochs), (0.3, 7));
        let back: RunConfig = toml::from_str(&m.to_toml()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.digest(), m.digest());
    }
}
