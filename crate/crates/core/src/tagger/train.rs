//! Averaged SGD with lazy L2 shrinkage.
//!
//! Weights are stored as `w = scale * v` so that the per-step shrink
//! `w /= 1 + η·λ/N` is O(1). The step itself is the implicit (proximal) form
//! `w ← (w + η·g) / (1 + η·λ/N)`, which stays stable for any λ. The running
//! average of the iterates is kept in closed form:
//! `Σ_t w_t = S·v − U`, with `S` the cumulative scale and `U` updated
//! sparsely alongside `v`.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{label_set, CrfModel, Encoded, Lattice, ModelConfig, TaggerError};
use crate::corpus::{Sentence, Tag};
use crate::features::{Featurizer, SentenceFeatures};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total L2 strength over the training set (`λ/2 · ||w||²`).
    pub l2_lambda: f64,
    pub epochs: usize,
    /// Initial step size η₀.
    pub eta0: f64,
    /// Decay horizon T₀ in updates; `None` means `10 · |train|`.
    pub t0: Option<f64>,
    /// Half-width of the uniform init of the dense projection.
    pub dense_init: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2_lambda: 1.0,
            epochs: 10,
            eta0: 0.1,
            t0: None,
            dense_init: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    /// Sum of per-sentence log-likelihoods seen during the epoch's updates.
    pub log_likelihood: f64,
    pub final_eta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStat>,
    pub num_sentences: usize,
    pub num_features: usize,
    pub num_labels: usize,
    pub num_parameters: usize,
    /// Whether the per-epoch log-likelihood never decreased.
    pub non_decreasing: bool,
}

struct Averager {
    v: Vec<f64>,
    u: Vec<f64>,
    scale: f64,
    cum_scale: f64,
    steps: u64,
}

impl Averager {
    fn new(init: Vec<f64>) -> Self {
        let n = init.len();
        Averager {
            v: init,
            u: vec![0.0; n],
            scale: 1.0,
            cum_scale: 0.0,
            steps: 0,
        }
    }

    fn add(&mut self, i: usize, delta_w: f64) {
        let dv = delta_w / self.scale;
        self.v[i] += dv;
        self.u[i] += self.cum_scale * dv;
    }

    fn end_step(&mut self, shrink: f64) {
        self.scale /= shrink;
        self.cum_scale += self.scale;
        self.steps += 1;
        if self.scale < 1e-9 {
            self.rescale();
        }
    }

    /// Folds `scale` into `v` while preserving the running sum.
    fn rescale(&mut self) {
        for (v, u) in self.v.iter_mut().zip(&mut self.u) {
            let partial = self.cum_scale * *v - *u;
            *v *= self.scale;
            *u = -partial;
        }
        self.scale = 1.0;
        self.cum_scale = 0.0;
    }

    fn averaged(&self) -> Vec<f64> {
        if self.steps == 0 {
            return self.v.iter().map(|v| v * self.scale).collect();
        }
        let n = self.steps as f64;
        self.v
            .iter()
            .zip(&self.u)
            .map(|(v, u)| (self.cum_scale * v - u) / n)
            .collect()
    }
}

/// Trains on pre-encoded sentences. `model` supplies the label set, feature
/// vocabulary and initial weights.
pub fn train_encoded(
    mut model: CrfModel,
    data: &[(Encoded, Vec<usize>)],
    config: &TrainConfig,
) -> Result<(CrfModel, TrainLog), TaggerError> {
    if data.is_empty() {
        return Err(TaggerError::EmptyTrainingSet);
    }
    let n = data.len();
    let t0 = config.t0.unwrap_or(10.0 * n as f64);
    let per_example_l2 = config.l2_lambda / n as f64;
    let mut avg = Averager::new(model.params.clone());
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(config.seed, "shuffle");
    let mut log = TrainLog {
        num_sentences: n,
        num_features: model.num_features(),
        num_labels: model.num_labels(),
        num_parameters: model.count_parameters(),
        non_decreasing: true,
        ..Default::default()
    };
    let mut pending: Vec<(usize, f64)> = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut ll_sum = 0.0;
        let mut eta = config.eta0;
        for &i in &order {
            eta = config.eta0 / (1.0 + avg.steps as f64 / t0);
            let (enc, gold) = &data[i];
            let lattice = Lattice::build(&model, &avg.v, avg.scale, enc);
            pending.clear();
            let ll = lattice
                .gradient(&model, enc, gold, |idx, g| pending.push((idx, g)))
                .map_err(|_| TaggerError::Diverged { epoch, sentence: i })?;
            for &(idx, g) in &pending {
                avg.add(idx, eta * g);
            }
            avg.end_step(1.0 + eta * per_example_l2);
            ll_sum += ll;
        }
        if !ll_sum.is_finite() || avg.v.iter().any(|w| !w.is_finite()) {
            return Err(TaggerError::Diverged { epoch, sentence: n });
        }
        if let Some(prev) = log.epochs.last() {
            if ll_sum < prev.log_likelihood {
                log.non_decreasing = false;
            }
        }
        log::debug!("epoch {epoch}: log-likelihood {ll_sum:.4}, eta {eta:.5}");
        log.epochs.push(EpochStat {
            epoch,
            log_likelihood: ll_sum,
            final_eta: eta,
        });
    }
    model.params = avg.averaged();
    Ok((model, log))
}

/// Builds the label set and feature vocabulary from `train`, initializes the
/// model (zeros, plus a seeded uniform dense projection) and trains it.
pub fn train(
    train: &[Sentence],
    featurizer: &Featurizer,
    config: &TrainConfig,
) -> Result<(CrfModel, TrainLog), TaggerError> {
    if train.is_empty() {
        return Err(TaggerError::EmptyTrainingSet);
    }
    let feats: Vec<SentenceFeatures> = train
        .iter()
        .map(|s| featurizer.featurize(&s.chars, None))
        .collect::<Result<_, _>>()?;
    let tags: Vec<&[Tag]> = train.iter().map(|s| s.tags.as_slice()).collect();
    let meta = ModelConfig {
        mode: featurizer.mode(),
        templates: featurizer.template_names(),
        gazetteer: featurizer.gazetteer().name().to_string(),
        gazetteer_fingerprint: featurizer.gazetteer_fingerprint().to_string(),
        seed: config.seed,
        train: config.clone(),
    };
    train_features(&feats, &tags, featurizer.dense_dim(), meta, config)
}

/// Training from raw feature strings, for callers with their own featurizer.
pub(crate) fn train_features(
    feats: &[SentenceFeatures],
    tags: &[&[Tag]],
    dense_dim: usize,
    meta: ModelConfig,
    config: &TrainConfig,
) -> Result<(CrfModel, TrainLog), TaggerError> {
    let labels = label_set(tags.iter().flat_map(|t| t.iter()));
    let mut vocab: HashMap<&str, u32> = HashMap::new();
    let mut features: Vec<String> = Vec::new();
    for f in feats.iter().flat_map(|s| s.discrete.iter().flatten()) {
        if !vocab.contains_key(f.as_str()) {
            vocab.insert(f, features.len() as u32);
            features.push(f.clone());
        }
    }
    let mut model = CrfModel::new(labels, features, dense_dim, meta);
    if dense_dim > 0 {
        let mut rng = seed::rng(config.seed, "dense-init");
        let off = model.dense_offset();
        let a = config.dense_init;
        for w in &mut model.params[off..] {
            *w = if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
        }
    }
    let data = feats
        .iter()
        .zip(tags)
        .map(|(f, t)| {
            if f.len() != t.len() {
                return Err(TaggerError::Misaligned {
                    features: f.len(),
                    labels: t.len(),
                });
            }
            Ok((model.encode(f)?, model.encode_labels(t)?))
        })
        .collect::<Result<Vec<_>, TaggerError>>()?;
    train_encoded(model, &data, config)
}

/// Wall-clock time of one training run.
pub fn measure_train_time(
    train_split: &[Sentence],
    featurizer: &Featurizer,
    config: &TrainConfig,
) -> Result<(CrfModel, Duration), TaggerError> {
    let start = Instant::now();
    let (model, _) = train(train_split, featurizer, config)?;
    Ok((model, start.elapsed()))
}
