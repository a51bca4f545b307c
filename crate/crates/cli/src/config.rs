//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use readmit_core::codes::MappingPaths;
use readmit_core::episodes::{DEFAULT_GAP_DAYS, DEFAULT_WINDOW_DAYS};
use readmit_core::pipeline::TrainOptions;
use readmit_core::synth::{GeneratorConfig, DEMOGRAPHICS_FILE, MEDICAL_FILE, PHARMACY_FILE};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DATA_DIR: &str = "data";
pub const EPISODES_DIR: &str = "episodes";
pub const FEATURES_DIR: &str = "features";
pub const MODELS_DIR: &str = "models";
pub const REPORT_DIR: &str = "report";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub medical: Option<PathBuf>,
    pub pharmacy: Option<PathBuf>,
    pub demographics: Option<PathBuf>,
}

impl InputPaths {
    pub fn is_unset(&self) -> bool {
        self.medical.is_none() && self.pharmacy.is_none() && self.demographics.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSettings {
    pub gap_days: i64,
    pub window_days: i64,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        EpisodeSettings {
            gap_days: DEFAULT_GAP_DAYS,
            window_days: DEFAULT_WINDOW_DAYS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub train_fraction: f64,
    /// Keep all admissions of a member on one side.
    pub user_level: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            train_fraction: 0.8,
            user_level: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output root, relative to the working directory; not part of the
    /// config hash.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub seed: u64,
    pub threshold: f64,
    pub svm_threshold: f64,
    /// Abort on the first malformed input row instead of skipping it.
    pub strict: bool,
    /// Worker threads; results do not depend on it.
    #[serde(skip_serializing)]
    pub jobs: Option<usize>,
    pub inputs: InputPaths,
    pub mappings: MappingPaths,
    pub episodes: EpisodeSettings,
    pub split: SplitSettings,
    pub train: TrainOptions,
    pub generator: GeneratorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("readmit-out"),
            seed: 0,
            threshold: 0.5,
            svm_threshold: 0.0,
            strict: false,
            jobs: None,
            inputs: InputPaths::default(),
            mappings: MappingPaths::default(),
            episodes: EpisodeSettings::default(),
            split: SplitSettings::default(),
            train: TrainOptions::default(),
            generator: GeneratorConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub strict: bool,
    pub threshold: Option<f64>,
    pub out: Option<PathBuf>,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
        let mut config = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let mut c: RunConfig = toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {}", p.display(), e.message())))?;
                let base = p.parent().unwrap_or(Path::new("."));
                rebase(base, &mut c.inputs.medical);
                rebase(base, &mut c.inputs.pharmacy);
                rebase(base, &mut c.inputs.demographics);
                rebase(base, &mut c.mappings.comorbidity);
                rebase(base, &mut c.mappings.ccs);
                c
            }
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if overrides.jobs.is_some() {
            config.jobs = overrides.jobs;
        }
        config.strict |= overrides.strict;
        if let Some(t) = overrides.threshold {
            config.threshold = t;
        }
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }
        // one seed drives every random stage
        config.train.seed = config.seed;
        config.generator.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !self.threshold.is_finite() {
            return Err(CliError::Usage(format!(
                "threshold {} is not finite",
                self.threshold
            )));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(CliError::Usage(format!(
                "split.train_fraction {} must lie strictly between 0 and 1",
                self.split.train_fraction
            )));
        }
        if self.train.folds < 2 {
            return Err(CliError::Usage(format!(
                "train.folds {} is below 2",
                self.train.folds
            )));
        }
        if self.episodes.gap_days < 0 || self.episodes.window_days < 0 {
            return Err(CliError::Usage(
                "episode gap and window must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Empty parameter lists are a usage error rather than a fitting failure.
    pub fn validate_grids(&self) -> Result<(), CliError> {
        if self.train.forest_grid.configs().is_empty() {
            return Err(CliError::Usage("random forest grid is empty".into()));
        }
        if self.train.svm_grid.c.is_empty() {
            return Err(CliError::Usage("SVM grid is empty".into()));
        }
        Ok(())
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    pub fn medical_path(&self) -> PathBuf {
        self.inputs
            .medical
            .clone()
            .unwrap_or_else(|| self.out.join(DATA_DIR).join(MEDICAL_FILE))
    }

    pub fn pharmacy_path(&self) -> PathBuf {
        self.inputs
            .pharmacy
            .clone()
            .unwrap_or_else(|| self.out.join(DATA_DIR).join(PHARMACY_FILE))
    }

    pub fn demographics_path(&self) -> PathBuf {
        self.inputs
            .demographics
            .clone()
            .unwrap_or_else(|| self.out.join(DATA_DIR).join(DEMOGRAPHICS_FILE))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the serialized config, output root excluded.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: RunConfig = toml::from_str(
            "seed = 3\n[train.forest_grid]\nntree = [10]\n[generator]\nn_users = 50\nstart_date = \"2016-01-01\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.forest_grid.ntree, vec![10]);
        assert_eq!(c.train.forest_grid.mtry, vec![20, 30, 40, 50]);
        assert_eq!(c.generator.n_users, 50);
        assert_eq!(c.train.folds, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3\n").is_err());
    }

    #[test]
    fn hash_ignores_output_root() {
        let a = RunConfig::default();
        let b = RunConfig {
            out: "elsewhere".into(),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn empty_grid_is_a_usage_error() {
        let mut c = RunConfig::default();
        c.train.forest_grid.mtry.clear();
        assert!(matches!(c.validate_grids(), Err(CliError::Usage(_))));
    }
}
