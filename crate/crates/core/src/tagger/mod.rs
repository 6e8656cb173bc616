//! Linear-chain CRF over character features.
//!
//! Parameters live in one flat vector laid out as
//! `[feature weights F×K | transitions K×K | dense projection D×K]`, where
//! `K` is the label count, `F` the feature vocabulary and `D` the width of
//! the dense gazetteer channel (0 when disabled). Row-major throughout:
//! the weight of feature `f` for label `k` sits at `f * K + k`.

mod inference;
mod io;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Tag;
use crate::features::{FeatureMode, Featurizer, SentenceFeatures};

pub use inference::{log_sum_exp, Lattice};
pub use io::{from_bytes, load_model, save_model, to_bytes, MODEL_HEADER};
pub use train::{measure_train_time, train, train_encoded, EpochStat, TrainConfig, TrainLog};

#[derive(Debug, thiserror::Error)]
pub enum TaggerError {
    #[error("non-finite value in sentence {sentence}")]
    NonFinite { sentence: usize },
    #[error("training diverged in epoch {epoch} (sentence {sentence})")]
    Diverged { epoch: usize, sentence: usize },
    #[error("empty training split")]
    EmptyTrainingSet,
    #[error("sentence has {features} feature rows but {labels} gold labels")]
    Misaligned { features: usize, labels: usize },
    #[error("label {0} is not in the model's label set")]
    UnknownLabel(String),
    #[error("model expects {expected} dense inputs per token, got {found}")]
    DenseMismatch { expected: usize, found: usize },
    #[error("unsupported model file header {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("failed to access model file: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
}

/// Snapshot of how a model was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: FeatureMode,
    pub templates: Vec<String>,
    pub gazetteer: String,
    pub gazetteer_fingerprint: String,
    pub seed: u64,
    pub train: TrainConfig,
}

/// A sentence mapped onto a model's feature vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// Known feature indices per token; unknown features are dropped.
    pub features: Vec<Vec<u32>>,
    /// `T × D` row-major, empty when the model has no dense channel.
    pub dense: Vec<f64>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    labels: Vec<Tag>,
    label_index: HashMap<Tag, usize>,
    features: Vec<String>,
    feature_index: HashMap<String, u32>,
    dense_dim: usize,
    params: Vec<f64>,
    config: ModelConfig,
}

impl CrfModel {
    /// Zero-weight model over the given labels and features.
    pub fn new(
        labels: Vec<Tag>,
        features: Vec<String>,
        dense_dim: usize,
        config: ModelConfig,
    ) -> Self {
        let k = labels.len();
        let params = vec![0.0; features.len() * k + k * k + dense_dim * k];
        let label_index = labels
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        let feature_index = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i as u32))
            .collect();
        CrfModel {
            labels,
            label_index,
            features,
            feature_index,
            dense_dim,
            params,
            config,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn dense_dim(&self) -> usize {
        self.dense_dim
    }

    pub fn labels(&self) -> &[Tag] {
        &self.labels
    }

    pub fn label_id(&self, tag: &Tag) -> Option<usize> {
        self.label_index.get(tag).copied()
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn count_parameters(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn transition_offset(&self) -> usize {
        self.features.len() * self.labels.len()
    }

    pub(crate) fn dense_offset(&self) -> usize {
        self.transition_offset() + self.labels.len() * self.labels.len()
    }

    pub fn feature_weight(&self, feature: &str, label: usize) -> Option<f64> {
        self.feature_index
            .get(feature)
            .map(|&f| self.params[f as usize * self.labels.len() + label])
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.params[self.transition_offset() + from * self.labels.len() + to]
    }

    pub fn encode(&self, feats: &SentenceFeatures) -> Result<Encoded, TaggerError> {
        let features = feats
            .discrete
            .iter()
            .map(|tok| {
                tok.iter()
                    .filter_map(|f| self.feature_index.get(f).copied())
                    .collect()
            })
            .collect();
        let dense = match (&feats.dense, self.dense_dim) {
            (_, 0) => Vec::new(),
            (Some(rows), d) => {
                let mut flat = Vec::with_capacity(rows.len() * d);
                for r in rows {
                    if r.len() != d {
                        return Err(TaggerError::DenseMismatch {
                            expected: d,
                            found: r.len(),
                        });
                    }
                    flat.extend_from_slice(r);
                }
                flat
            }
            (None, d) => {
                return Err(TaggerError::DenseMismatch {
                    expected: d,
                    found: 0,
                })
            }
        };
        Ok(Encoded { features, dense })
    }

    pub fn encode_labels(&self, tags: &[Tag]) -> Result<Vec<usize>, TaggerError> {
        tags.iter()
            .map(|t| {
                self.label_id(t)
                    .ok_or_else(|| TaggerError::UnknownLabel(t.to_string()))
            })
            .collect()
    }

    pub fn lattice(&self, enc: &Encoded) -> Lattice {
        Lattice::build(self, &self.params, 1.0, enc)
    }

    /// Log-likelihood of `gold` and the gradient of
    /// `log p(gold | x) - l2/2 * ||w||²`, laid out like [`Self::params`].
    pub fn score_and_gradient(
        &self,
        enc: &Encoded,
        gold: &[usize],
        l2: f64,
    ) -> Result<(f64, Vec<f64>), TaggerError> {
        let mut grad: Vec<f64> = self.params.iter().map(|w| -l2 * w).collect();
        let lattice = self.lattice(enc);
        let ll = lattice.gradient(self, enc, gold, |i, g| grad[i] += g)?;
        Ok((ll, grad))
    }

    /// Viterbi labels and the score of that path.
    pub fn decode_ids(&self, enc: &Encoded) -> (Vec<usize>, f64) {
        self.lattice(enc).viterbi()
    }

    pub fn decode(&self, enc: &Encoded) -> Vec<Tag> {
        let (ids, _) = self.decode_ids(enc);
        ids.into_iter().map(|i| self.labels[i].clone()).collect()
    }

    /// Featurizes, encodes and decodes in one go.
    pub fn tag(
        &self,
        featurizer: &Featurizer,
        chars: &[char],
        mask: Option<&crate::matcher::LexemeMask>,
    ) -> Result<Vec<Tag>, TaggerError> {
        let feats = featurizer.featurize(chars, mask)?;
        Ok(self.decode(&self.encode(&feats)?))
    }

    /// Differences between this model's build snapshot and `featurizer`.
    pub fn compatibility_warnings(&self, featurizer: &Featurizer) -> Vec<String> {
        let mut out = Vec::new();
        if self.config.gazetteer != featurizer.gazetteer().name() {
            out.push(format!(
                "model was trained with gazetteer {:?} but analysis uses {:?}",
                self.config.gazetteer,
                featurizer.gazetteer().name()
            ));
        } else if self.config.gazetteer_fingerprint != featurizer.gazetteer_fingerprint() {
            out.push(format!(
                "gazetteer {:?} content differs from the one the model was trained with",
                self.config.gazetteer
            ));
        }
        if self.config.mode != featurizer.mode() {
            out.push(format!(
                "model feature mode {} differs from featurizer mode {}",
                self.config.mode,
                featurizer.mode()
            ));
        }
        out
    }

    pub(crate) fn from_parts(
        labels: Vec<Tag>,
        features: Vec<String>,
        dense_dim: usize,
        params: Vec<f64>,
        config: ModelConfig,
    ) -> Result<Self, TaggerError> {
        let mut m = CrfModel::new(labels, features, dense_dim, config);
        if params.len() != m.params.len() {
            return Err(TaggerError::Corrupt(format!(
                "expected {} parameters, found {}",
                m.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|w| !w.is_finite()) {
            return Err(TaggerError::Corrupt("non-finite weight".into()));
        }
        m.params = params;
        Ok(m)
    }
}

/// BIOES label set for the entity types present in `tags`, with `O` first.
pub fn label_set<'a>(tags: impl IntoIterator<Item = &'a Tag>) -> Vec<Tag> {
    let mut types: Vec<&str> = tags.into_iter().filter_map(Tag::etype).collect();
    types.sort_unstable();
    types.dedup();
    let mut labels = vec![Tag::O];
    for t in types {
        let t = t.to_string();
        labels.extend([
            Tag::B(t.clone()),
            Tag::I(t.clone()),
            Tag::E(t.clone()),
            Tag::S(t),
        ]);
    }
    labels
}
