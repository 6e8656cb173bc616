//! One train-and-evaluate run: featurize, train, score the test split.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::evaluation::{evaluate, EvalReport};
use crate::features::{FeatureError, FeatureMode, Featurizer};
use crate::gazetteer::Gazetteer;
use crate::seed;
use crate::tagger::{self, CrfModel, TaggerError, TrainConfig, TrainLog};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: FeatureMode,
    /// Drives the shuffle, the dense-projection init and the random lexeme
    /// vectors. Overrides `train.seed`.
    pub seed: u64,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn new(mode: FeatureMode, seed: u64, train: TrainConfig) -> Self {
        PipelineConfig { mode, seed, train }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

/// Hash of everything that determines a run's numbers.
pub fn run_fingerprint(
    dataset: &Dataset,
    gazetteer: &Gazetteer,
    config: &PipelineConfig,
) -> String {
    let train = serde_json::to_string(&config.train_config()).expect("config serializes");
    let templates = config
        .mode
        .templates()
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(",");
    seed::fingerprint(&[
        dataset.name.as_str(),
        gazetteer.name(),
        &gazetteer.fingerprint(),
        &config.seed.to_string(),
        config.mode.as_str(),
        &templates,
        &train,
    ])
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub featurizer: Featurizer,
    pub model: CrfModel,
    pub log: TrainLog,
    pub test: EvalReport,
    pub fingerprint: String,
}

pub fn build_featurizer(
    dataset: &Dataset,
    gazetteer: Arc<Gazetteer>,
    config: &PipelineConfig,
) -> Result<Featurizer, FeatureError> {
    Featurizer::new(gazetteer, config.mode, &dataset.train, config.seed)
}

pub fn run(
    dataset: &Dataset,
    gazetteer: Arc<Gazetteer>,
    config: &PipelineConfig,
) -> Result<PipelineRun, PipelineError> {
    let fingerprint = run_fingerprint(dataset, &gazetteer, config);
    let featurizer = build_featurizer(dataset, gazetteer, config)?;
    let (model, log) = tagger::train(&dataset.train, &featurizer, &config.train_config())?;
    let test = evaluate(&model, &dataset.test, &featurizer, None)?;
    Ok(PipelineRun {
        featurizer,
        model,
        log,
        test,
        fingerprint,
    })
}
