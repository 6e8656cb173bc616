#![allow(dead_code)]

use std::path::PathBuf;

use gazlab::corpus::Tag;
use gazlab::features::FeatureMode;
use gazlab::tagger::{CrfModel, Encoded, ModelConfig, TrainConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn toy() -> PathBuf {
    fixtures().join("toy")
}

/// Every (surface, start, end) where a lexeme equals `text[start..end]`,
/// sorted by (start, end, lexeme index).
pub fn brute_force_matches(lexemes: &[String], text: &[char]) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    for start in 0..text.len() {
        for end in start + 1..=text.len() {
            let sub: String = text[start..end].iter().collect();
            for lex in lexemes {
                if *lex == sub {
                    out.push((lex.clone(), start, end));
                }
            }
        }
    }
    out
}

pub fn random_text(rng: &mut ChaCha8Rng, alphabet: &[char], max_len: usize) -> Vec<char> {
    let len = rng.gen_range(1..=max_len);
    (0..len)
        .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
        .collect()
}

/// Up to `max_count` distinct lexemes of length 1..=`max_len`.
pub fn random_lexicon(
    rng: &mut ChaCha8Rng,
    alphabet: &[char],
    max_count: usize,
    max_len: usize,
) -> Vec<String> {
    let n = rng.gen_range(1..=max_count);
    let mut out: Vec<String> = Vec::new();
    for _ in 0..n {
        let len = rng.gen_range(1..=max_len);
        let s: String = (0..len)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
            .collect();
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

pub fn meta() -> ModelConfig {
    ModelConfig {
        mode: FeatureMode::Baseline,
        templates: vec![],
        gazetteer: "none".into(),
        gazetteer_fingerprint: "0".into(),
        seed: 0,
        train: TrainConfig::default(),
    }
}

const LABELS: [&str; 5] = ["O", "B-X", "I-X", "E-X", "S-X"];

/// A model with `k` labels, `f` features, `d` dense inputs and weights
/// uniform in [-scale, scale], plus a random sentence of length `t`.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    t: usize,
    k: usize,
    f: usize,
    d: usize,
    scale: f64,
) -> (CrfModel, Encoded) {
    let labels: Vec<Tag> = LABELS[..k].iter().map(|l| l.parse().unwrap()).collect();
    let features: Vec<String> = (0..f).map(|i| format!("f{i}")).collect();
    let mut model = CrfModel::new(labels, features, d, meta());
    for w in model.params_mut() {
        *w = rng.gen_range(-scale..=scale);
    }
    let enc = Encoded {
        features: (0..t)
            .map(|_| {
                let mut fs: Vec<u32> = (0..f as u32).filter(|_| rng.gen_bool(0.4)).collect();
                fs.sort_unstable();
                fs
            })
            .collect(),
        dense: (0..t * d).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
    };
    (model, enc)
}

/// All label sequences of length `t` over `k` labels, in lexicographic order.
pub fn all_paths(t: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

/// Score of a path computed straight from the parameter layout, without
/// going through the lattice.
pub fn direct_score(model: &CrfModel, enc: &Encoded, path: &[usize]) -> f64 {
    let k = model.num_labels();
    let p = model.params();
    let trans = model.num_features() * k;
    let dense = trans + k * k;
    let d = model.dense_dim();
    let mut s = 0.0;
    for (t, &y) in path.iter().enumerate() {
        for &f in &enc.features[t] {
            s += p[f as usize * k + y];
        }
        for j in 0..d {
            s += enc.dense[t * d + j] * p[dense + j * k + y];
        }
        if t > 0 {
            s += p[trans + path[t - 1] * k + y];
        }
    }
    s
}

pub fn brute_log_partition(model: &CrfModel, enc: &Encoded) -> f64 {
    let scores: Vec<f64> = all_paths(enc.len(), model.num_labels())
        .iter()
        .map(|p| direct_score(model, enc, p))
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Highest direct score over all paths.
pub fn brute_best_score(model: &CrfModel, enc: &Encoded) -> f64 {
    all_paths(enc.len(), model.num_labels())
        .iter()
        .map(|p| direct_score(model, enc, p))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// ||a − b|| / max(||a||, ||b||), 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let denom = norm(a).max(norm(b));
    if denom == 0.0 {
        0.0
    } else {
        norm(&diff) / denom
    }
}

/// Central differences of `ll − l2/2·||w||²` at the model's weights.
pub fn finite_difference_gradient(
    model: &CrfModel,
    enc: &Encoded,
    gold: &[usize],
    l2: f64,
    h: f64,
) -> Vec<f64> {
    let objective = |m: &CrfModel| {
        let lattice = m.lattice(enc);
        let w2: f64 = m.params().iter().map(|w| w * w).sum();
        lattice.log_prob(gold) - 0.5 * l2 * w2
    };
    (0..model.count_parameters())
        .map(|i| {
            let mut plus = model.clone();
            plus.params_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[i] -= h;
            (objective(&plus) - objective(&minus)) / (2.0 * h)
        })
        .collect()
}
