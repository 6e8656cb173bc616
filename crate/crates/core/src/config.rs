//! Experiment configuration files.
//!
//! ```json
//! {
//!   "dataset": {"name": "toy", "train": "train.txt", "dev": "dev.txt",
//!               "test": "test.txt", "scheme": "BIO"},
//!   "gazetteer": {"name": "toy-gaz", "lexicon": "lexicon.txt",
//!                 "embeddings": "vectors.txt"},
//!   "mode": "baseline+gaz-dense",
//!   "train": {"epochs": 10, "l2_lambda": 1.0},
//!   "seed": 42,
//!   "output_dir": "out"
//! }
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{load_dataset, CorpusError, Dataset, Scheme};
use crate::features::{FeatureError, FeatureMode};
use crate::gazetteer::{load_gazetteer, Gazetteer, GazetteerError, DEFAULT_RANDOM_DIM};
use crate::pipeline::PipelineConfig;
use crate::tagger::TrainConfig;

/// Environment variable that overrides the config seed.
pub const SEED_ENV: &str = "GAZLAB_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{field}: {path} does not exist")]
    MissingPath { field: &'static str, path: PathBuf },
    #[error(transparent)]
    Mode(#[from] FeatureError),
    #[error("{SEED_ENV}={0:?} is not an unsigned integer")]
    SeedEnv(String),
    #[error("train.epochs must be positive")]
    Epochs,
    #[error("train.l2_lambda must be finite and non-negative")]
    Lambda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GazetteerConfig {
    pub name: String,
    pub lexicon: PathBuf,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Dimension of the random init when there are no embeddings.
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_dim() -> usize {
    DEFAULT_RANDOM_DIM
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub gazetteer: GazetteerConfig,
    pub mode: String,
    #[serde(default)]
    pub train: TrainConfig,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads, resolves paths, applies the seed override and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::SeedEnv(v.clone()))?;
            log::info!(
                "{SEED_ENV} overrides config seed {} with {seed}",
                config.seed
            );
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.dataset.train);
        join(&mut self.dataset.dev);
        join(&mut self.dataset.test);
        join(&mut self.gazetteer.lexicon);
        if let Some(e) = &mut self.gazetteer.embeddings {
            join(e);
        }
        join(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut paths = vec![
            ("dataset.train", &self.dataset.train),
            ("dataset.dev", &self.dataset.dev),
            ("dataset.test", &self.dataset.test),
            ("gazetteer.lexicon", &self.gazetteer.lexicon),
        ];
        if let Some(e) = &self.gazetteer.embeddings {
            paths.push(("gazetteer.embeddings", e));
        }
        for (field, path) in paths {
            if !path.exists() {
                return Err(ConfigError::MissingPath {
                    field,
                    path: path.clone(),
                });
            }
        }
        self.feature_mode()?;
        if self.train.epochs == 0 {
            return Err(ConfigError::Epochs);
        }
        if !(self.train.l2_lambda.is_finite() && self.train.l2_lambda >= 0.0) {
            return Err(ConfigError::Lambda);
        }
        Ok(())
    }

    pub fn feature_mode(&self) -> Result<FeatureMode, FeatureError> {
        self.mode.parse()
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, FeatureError> {
        Ok(PipelineConfig::new(
            self.feature_mode()?,
            self.seed,
            self.train.clone(),
        ))
    }

    pub fn load_dataset(&self) -> Result<Dataset, CorpusError> {
        let d = &self.dataset;
        load_dataset(&d.name, &d.train, &d.dev, &d.test, d.scheme)
    }

    pub fn load_gazetteer(&self) -> Result<Gazetteer, GazetteerError> {
        let g = &self.gazetteer;
        load_gazetteer(&g.name, &g.lexicon, g.embeddings.as_deref(), g.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dataset": {"name": "d", "train": "a", "dev": "b", "test": "c", "scheme": "BIO"},
        "gazetteer": {"name": "g", "lexicon": "l"},
        "mode": "baseline",
        "seed": 1
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::parse(MINIMAL, Path::new("x.json")).unwrap();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.gazetteer.dim, DEFAULT_RANDOM_DIM);
        assert_eq!(c.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn seed_is_mandatory() {
        let text = MINIMAL.replace(",\n        \"seed\": 1", "");
        assert!(matches!(
            ExperimentConfig::parse(&text, Path::new("x.json")),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("\"seed\": 1", "\"seed\": 1, \"sede\": 2");
        assert!(ExperimentConfig::parse(&text, Path::new("x.json")).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut c = ExperimentConfig::parse(MINIMAL, Path::new("x.json")).unwrap();
        c.resolve(Path::new("/exp"));
        assert_eq!(c.dataset.train, PathBuf::from("/exp/a"));
        assert_eq!(c.output_dir, PathBuf::from("/exp/out"));
    }

    #[test]
    fn validation_reports_missing_paths_and_bad_modes() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a", "b", "c", "l"] {
            fs::write(dir.path().join(f), "x O\n").unwrap();
        }
        let mut c = ExperimentConfig::parse(MINIMAL, Path::new("x.json")).unwrap();
        c.resolve(dir.path());
        c.validate().unwrap();

        let mut bad = c.clone();
        bad.mode = "baseline+gaz".into();
        assert!(matches!(bad.validate(), Err(ConfigError::Mode(_))));

        let mut missing = c.clone();
        missing.gazetteer.lexicon = dir.path().join("nope");
        assert!(matches!(
            missing.validate(),
            Err(ConfigError::MissingPath {
                field: "gazetteer.lexicon",
                ..
            })
        ));
    }
}
