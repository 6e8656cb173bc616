//! Synthetic corpora with a known gazetteer.
//!
//! Entity surfaces are random strings over the same alphabet as the filler
//! text, so character identity alone does not reveal them. A fraction of the
//! entity lexemes occurs as entities in training; the rest only shows up in
//! dev/test. The gazetteer also carries plain word lexemes that occur in the
//! filler and are never entities. Its vectors are structured: entity lexemes
//! share a direction per type, word lexemes another one.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, EntitySpan, LoadWarnings, Scheme, Sentence};
use crate::gazetteer::Gazetteer;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub name: String,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Total gazetteer size, entity plus word lexemes.
    pub gazetteer_size: usize,
    pub word_lexemes: usize,
    /// Share of entity lexemes that occur as entities in training.
    pub train_coverage: f64,
    /// Probability that a dev/test mention uses a training-visible lexeme.
    pub seen_mention_rate: f64,
    pub types: Vec<String>,
    pub alphabet: usize,
    pub min_entity_len: usize,
    pub max_entity_len: usize,
    /// Probability that an entity is preceded by one of its type's cue chars.
    pub cue_rate: f64,
    /// Probability of a word lexeme in each filler run.
    pub word_rate: f64,
    pub dim: usize,
    /// Noise added to each structured vector component.
    pub vector_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synthetic".into(),
            train: 2000,
            dev: 200,
            test: 400,
            gazetteer_size: 200,
            word_lexemes: 40,
            train_coverage: 0.6,
            seen_mention_rate: 0.75,
            types: vec!["PER".into(), "LOC".into(), "ORG".into()],
            alphabet: 80,
            min_entity_len: 3,
            max_entity_len: 4,
            cue_rate: 0.4,
            word_rate: 0.3,
            dim: 16,
            vector_noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dataset: Dataset,
    /// Pre-trained gazetteer with structured vectors.
    pub gazetteer: Gazetteer,
    /// `(surface, type)` of every entity lexeme.
    pub entities: Vec<(String, String)>,
    /// Entity lexemes used in training.
    pub train_visible: BTreeSet<String>,
    pub words: Vec<String>,
}

fn alphabet_char(i: usize) -> char {
    char::from_u32(0x4E00 + 7 * i as u32).expect("CJK block")
}

fn cue_char(i: usize) -> char {
    char::from_u32(0x9000 + 11 * i as u32).expect("CJK block")
}

struct Generator<'a> {
    config: &'a SynthConfig,
    rng: ChaCha8Rng,
    successors: Vec<Vec<usize>>,
    cues: Vec<Vec<char>>,
}

impl Generator<'_> {
    fn random_string(&mut self, len: usize) -> String {
        (0..len)
            .map(|_| alphabet_char(self.rng.gen_range(0..self.config.alphabet)))
            .collect()
    }

    fn filler(&mut self, out: &mut Vec<char>, len: usize) {
        let mut state = self.rng.gen_range(0..self.config.alphabet);
        for _ in 0..len {
            state = if self.rng.gen_bool(0.85) {
                *self.successors[state]
                    .choose(&mut self.rng)
                    .expect("non-empty")
            } else {
                self.rng.gen_range(0..self.config.alphabet)
            };
            out.push(alphabet_char(state));
        }
    }

    fn sentence(
        &mut self,
        seen: &[usize],
        unseen: &[usize],
        seen_rate: f64,
        entities: &[(String, String)],
        words: &[String],
    ) -> Sentence {
        let mut chars = Vec::new();
        let mut spans = Vec::new();
        let mentions = match self.rng.gen_range(0..10) {
            0 => 0,
            1..=5 => 1,
            _ => 2,
        };
        let filler_run = |g: &mut Self, chars: &mut Vec<char>| {
            let n = g.rng.gen_range(2..=6);
            g.filler(chars, n);
            if !words.is_empty() && g.rng.gen_bool(g.config.word_rate) {
                chars.extend(words.choose(&mut g.rng).expect("non-empty").chars());
                let n = g.rng.gen_range(1..=3);
                g.filler(chars, n);
            }
        };
        filler_run(self, &mut chars);
        for _ in 0..mentions {
            let pool = if unseen.is_empty() || self.rng.gen_bool(seen_rate) {
                seen
            } else {
                unseen
            };
            let (surface, etype) = &entities[*pool.choose(&mut self.rng).expect("non-empty")];
            let t = self
                .config
                .types
                .iter()
                .position(|x| x == etype)
                .expect("known type");
            if self.rng.gen_bool(self.config.cue_rate) {
                chars.push(*self.cues[t].choose(&mut self.rng).expect("non-empty"));
            }
            let start = chars.len();
            chars.extend(surface.chars());
            spans.push(EntitySpan {
                start,
                end: chars.len(),
                etype: etype.clone(),
                surface: surface.clone(),
            });
            filler_run(self, &mut chars);
        }
        Sentence::from_spans(chars, &spans).expect("generated sentence is valid")
    }
}

pub fn generate(config: &SynthConfig) -> SynthCorpus {
    let mut rng = seed::rng(config.seed, "synth");
    let successors = (0..config.alphabet)
        .map(|_| (0..4).map(|_| rng.gen_range(0..config.alphabet)).collect())
        .collect();
    let cues = (0..config.types.len())
        .map(|t| vec![cue_char(2 * t), cue_char(2 * t + 1)])
        .collect();
    let mut g = Generator {
        config,
        rng,
        successors,
        cues,
    };

    let num_entities = config.gazetteer_size.saturating_sub(config.word_lexemes);
    let mut taken = BTreeSet::new();
    let mut fresh = |g: &mut Generator, lo: usize, hi: usize| loop {
        let len = g.rng.gen_range(lo..=hi);
        let s = g.random_string(len);
        if taken.insert(s.clone()) {
            return s;
        }
    };
    let entities: Vec<(String, String)> = (0..num_entities)
        .map(|i| {
            let s = fresh(&mut g, config.min_entity_len, config.max_entity_len);
            (s, config.types[i % config.types.len()].clone())
        })
        .collect();
    let words: Vec<String> = (0..config.word_lexemes)
        .map(|_| fresh(&mut g, 2, 3))
        .collect();

    let mut order: Vec<usize> = (0..num_entities).collect();
    order.shuffle(&mut g.rng);
    let cut = (config.train_coverage * num_entities as f64).round() as usize;
    let (seen, unseen) = order.split_at(cut.min(num_entities));
    let (seen, unseen) = (seen.to_vec(), unseen.to_vec());

    let train = (0..config.train)
        .map(|_| g.sentence(&seen, &[], 1.0, &entities, &words))
        .collect();
    let dev = (0..config.dev)
        .map(|_| g.sentence(&seen, &unseen, config.seen_mention_rate, &entities, &words))
        .collect();
    let test = (0..config.test)
        .map(|_| g.sentence(&seen, &unseen, config.seen_mention_rate, &entities, &words))
        .collect();

    let gazetteer = structured_gazetteer(config, &entities, &words, &mut g.rng);
    let train_visible = seen.iter().map(|&i| entities[i].0.clone()).collect();
    SynthCorpus {
        dataset: Dataset {
            name: config.name.clone(),
            scheme: Scheme::Bioes,
            train,
            dev,
            test,
            warnings: LoadWarnings::default(),
        },
        gazetteer,
        entities,
        train_visible,
        words,
    }
}

/// Entity lexemes get `dir(type) + noise`, words `dir(word) + noise`, with
/// orthogonal unit directions on the first coordinates.
fn structured_gazetteer(
    config: &SynthConfig,
    entities: &[(String, String)],
    words: &[String],
    rng: &mut ChaCha8Rng,
) -> Gazetteer {
    let dim = config.dim.max(config.types.len() + 1);
    let mut noisy = |axis: usize| -> Vec<f32> {
        (0..dim)
            .map(|j| {
                let base = if j == axis { 1.0 } else { 0.0 };
                (base + rng.gen_range(-config.vector_noise..=config.vector_noise)) as f32
            })
            .collect()
    };
    let mut entries = Vec::with_capacity(entities.len() + words.len());
    for (surface, etype) in entities {
        let t = config
            .types
            .iter()
            .position(|x| x == etype)
            .expect("known type");
        entries.push((surface.clone(), Some(noisy(t))));
    }
    for w in words {
        entries.push((w.clone(), Some(noisy(config.types.len()))));
    }
    Gazetteer::with_vectors(&config.name, entries, dim).expect("synthetic gazetteer is valid")
}

impl SynthCorpus {
    /// Writes `train.txt`, `dev.txt`, `test.txt` (BIOES), `lexicon.txt` and
    /// `vectors.txt` (word2vec text) into `dir`.
    pub fn write_files(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, split) in [
            ("train.txt", &self.dataset.train),
            ("dev.txt", &self.dataset.dev),
            ("test.txt", &self.dataset.test),
        ] {
            fs::write(
                dir.join(name),
                crate::corpus::write_conll(split, Scheme::Bioes),
            )?;
        }
        let g = &self.gazetteer;
        let mut lexicon = String::new();
        let mut vectors = format!("{} {}\n", g.len(), g.dim());
        for (id, lex) in g.lexemes().iter().enumerate() {
            lexicon.push_str(lex);
            lexicon.push('\n');
            if let Some(v) = g.pretrained_vector(id as u32) {
                vectors.push_str(lex);
                for x in v {
                    vectors.push_str(&format!(" {x}"));
                }
                vectors.push('\n');
            }
        }
        fs::write(dir.join("lexicon.txt"), lexicon)?;
        fs::write(dir.join("vectors.txt"), vectors)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train: 50,
            dev: 10,
            test: 20,
            seed: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn sizes_follow_config() {
        let c = generate(&small());
        assert_eq!(c.dataset.train.len(), 50);
        assert_eq!(c.dataset.dev.len(), 10);
        assert_eq!(c.dataset.test.len(), 20);
        assert_eq!(c.gazetteer.len(), 200);
        assert_eq!(c.entities.len(), 160);
        assert_eq!(c.train_visible.len(), 96);
        assert!(c.gazetteer.pretrained());
    }

    #[test]
    fn training_entities_are_train_visible() {
        let c = generate(&small());
        for s in &c.dataset.train {
            for span in s.spans() {
                assert!(c.train_visible.contains(&span.surface));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.dataset.train, b.dataset.train);
        assert_eq!(a.dataset.test, b.dataset.test);
        assert_eq!(a.gazetteer.fingerprint(), b.gazetteer.fingerprint());
    }
}
