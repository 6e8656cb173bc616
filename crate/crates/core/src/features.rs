//! Per-token features built from lexeme matches.
//!
//! Matches are grouped into BMES sets per character (which lexemes Begin,
//! are in the Middle of, End, or are a Single-character match at that
//! position). Those sets feed two channels: discrete indicator features for
//! the CRF, and a pooled dense vector `concat(B̄, M̄, Ē, S̄)` built from the
//! lexeme embeddings.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::gazetteer::Gazetteer;
use crate::matcher::{LexemeMask, LexemeMatcher, MatchSpan, MatcherError};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("match [{start}, {end}) is out of range for a sentence of length {len}")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("unknown feature template {0:?}")]
    UnknownTemplate(String),
    #[error("unknown feature mode {0:?} (expected baseline, baseline+gaz-discrete or baseline+gaz-dense)")]
    UnknownMode(String),
    #[error("no embedding for lexeme id {0}")]
    MissingEmbedding(u32),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
}

/// Boundary padding symbol for character templates.
pub const PAD: char = '⊥';

/// Lexeme vocabulary size for the `gaz.*.top` templates.
pub const TOP_VOCAB_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    B,
    M,
    E,
    S,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::B, Role::M, Role::E, Role::S];

    fn letter(self) -> char {
        match self {
            Role::B => 'B',
            Role::M => 'M',
            Role::E => 'E',
            Role::S => 'S',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    /// c₋₁
    CharPrev,
    /// c₀
    Char,
    /// c₊₁
    CharNext,
    /// c₋₁c₀
    BigramPrev,
    /// c₀c₊₁
    BigramNext,
    /// Set non-empty.
    GazPresent(Role),
    /// Most frequent (in training) lexeme of the set.
    GazTop(Role),
}

impl Template {
    pub const CHAR: [Template; 5] = [
        Template::CharPrev,
        Template::Char,
        Template::CharNext,
        Template::BigramPrev,
        Template::BigramNext,
    ];

    pub fn is_gazetteer(self) -> bool {
        matches!(self, Template::GazPresent(_) | Template::GazTop(_))
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Template::CharPrev => f.write_str("c-1"),
            Template::Char => f.write_str("c0"),
            Template::CharNext => f.write_str("c1"),
            Template::BigramPrev => f.write_str("c-1c0"),
            Template::BigramNext => f.write_str("c0c1"),
            Template::GazPresent(r) => write!(f, "gaz.{}.present", r.letter()),
            Template::GazTop(r) => write!(f, "gaz.{}.top", r.letter()),
        }
    }
}

impl FromStr for Template {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = match s {
            "c-1" => Template::CharPrev,
            "c0" => Template::Char,
            "c1" => Template::CharNext,
            "c-1c0" => Template::BigramPrev,
            "c0c1" => Template::BigramNext,
            _ => {
                let rest = s
                    .strip_prefix("gaz.")
                    .ok_or_else(|| FeatureError::UnknownTemplate(s.to_string()))?;
                let (role, kind) = rest
                    .split_once('.')
                    .ok_or_else(|| FeatureError::UnknownTemplate(s.to_string()))?;
                let role = match role {
                    "B" => Role::B,
                    "M" => Role::M,
                    "E" => Role::E,
                    "S" => Role::S,
                    _ => return Err(FeatureError::UnknownTemplate(s.to_string())),
                };
                match kind {
                    "present" => Template::GazPresent(role),
                    "top" => Template::GazTop(role),
                    _ => return Err(FeatureError::UnknownTemplate(s.to_string())),
                }
            }
        };
        Ok(t)
    }
}

pub fn parse_templates<S: AsRef<str>>(names: &[S]) -> Result<Vec<Template>, FeatureError> {
    names.iter().map(|n| n.as_ref().parse()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureMode {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "baseline+gaz-discrete")]
    GazDiscrete,
    #[serde(rename = "baseline+gaz-dense")]
    GazDense,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 3] = [
        FeatureMode::Baseline,
        FeatureMode::GazDiscrete,
        FeatureMode::GazDense,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Baseline => "baseline",
            FeatureMode::GazDiscrete => "baseline+gaz-discrete",
            FeatureMode::GazDense => "baseline+gaz-dense",
        }
    }

    pub fn templates(self) -> Vec<Template> {
        let mut t = Template::CHAR.to_vec();
        if self == FeatureMode::GazDiscrete {
            t.extend(Role::ALL.map(Template::GazPresent));
            t.extend(Role::ALL.map(Template::GazTop));
        }
        t
    }

    pub fn uses_gazetteer(self) -> bool {
        self != FeatureMode::Baseline
    }

    pub fn dense(self) -> bool {
        self == FeatureMode::GazDense
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMode {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| FeatureError::UnknownMode(s.to_string()))
    }
}

/// Lexeme ids per role at one token. Ids are sorted; a lexeme appears once
/// per occurrence that puts it in that role, so repeats are possible in `m`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSets {
    pub b: Vec<u32>,
    pub m: Vec<u32>,
    pub e: Vec<u32>,
    pub s: Vec<u32>,
}

impl TokenSets {
    pub fn get(&self, role: Role) -> &[u32] {
        match role {
            Role::B => &self.b,
            Role::M => &self.m,
            Role::E => &self.e,
            Role::S => &self.s,
        }
    }

    pub fn membership(&self) -> usize {
        self.b.len() + self.m.len() + self.e.len() + self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membership() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BmesSets {
    pub tokens: Vec<TokenSets>,
}

impl BmesSets {
    pub fn membership(&self) -> usize {
        self.tokens.iter().map(TokenSets::membership).sum()
    }
}

pub fn bmes_sets(len: usize, matches: &[MatchSpan]) -> Result<BmesSets, FeatureError> {
    let mut tokens = vec![TokenSets::default(); len];
    for m in matches {
        if m.start >= m.end || m.end > len {
            return Err(FeatureError::SpanOutOfRange {
                start: m.start,
                end: m.end,
                len,
            });
        }
        let id = m.lexeme_id;
        if m.end - m.start == 1 {
            tokens[m.start].s.push(id);
        } else {
            tokens[m.start].b.push(id);
            for t in &mut tokens[m.start + 1..m.end - 1] {
                t.m.push(id);
            }
            tokens[m.end - 1].e.push(id);
        }
    }
    for t in &mut tokens {
        t.b.sort_unstable();
        t.m.sort_unstable();
        t.e.sort_unstable();
        t.s.sort_unstable();
    }
    Ok(BmesSets { tokens })
}

/// Match counts per lexeme over the training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u64>,
    top_vocab: HashSet<u32>,
}

impl FrequencyTable {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let mut seen: Vec<u32> = (0..counts.len() as u32)
            .filter(|&i| counts[i as usize] > 0)
            .collect();
        seen.sort_by_key(|&i| (std::cmp::Reverse(counts[i as usize]), i));
        seen.truncate(TOP_VOCAB_CAP);
        FrequencyTable {
            counts,
            top_vocab: seen.into_iter().collect(),
        }
    }

    pub fn get(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn in_top_vocab(&self, id: u32) -> bool {
        self.top_vocab.contains(&id)
    }

    /// Most frequent member of `ids`, lowest id on ties.
    pub fn most_frequent(&self, ids: &[u32]) -> Option<u32> {
        ids.iter()
            .copied()
            .min_by_key(|&id| (std::cmp::Reverse(self.get(id)), id))
    }
}

/// Counts matched occurrences per lexeme. Pass the training split only.
pub fn lexeme_frequency(matcher: &LexemeMatcher, train: &[Sentence]) -> FrequencyTable {
    let mut counts = vec![0u64; matcher.num_lexemes()];
    for s in train {
        for m in matcher.match_all(&s.chars, None) {
            counts[m.lexeme_id as usize] += 1;
        }
    }
    FrequencyTable::from_counts(counts)
}

/// Source of lexeme vectors for pooling.
pub trait LexemeVectors {
    fn dim(&self) -> usize;
    fn vector(&self, id: u32) -> Option<Vec<f64>>;
}

/// Gazetteer vectors, falling back to the seeded random init.
#[derive(Debug, Clone, Copy)]
pub struct GazetteerVectors<'a> {
    pub gazetteer: &'a Gazetteer,
    pub seed: u64,
}

impl LexemeVectors for GazetteerVectors<'_> {
    fn dim(&self) -> usize {
        self.gazetteer.dim()
    }

    fn vector(&self, id: u32) -> Option<Vec<f64>> {
        ((id as usize) < self.gazetteer.len()).then(|| self.gazetteer.vector(id, self.seed))
    }
}

/// Frequency-weighted mean per role with weights `freq + 1`, over the
/// distinct lexemes of each set. Empty sets pool to zeros. Each token gets
/// `concat(B̄, M̄, Ē, S̄)`.
pub fn pool_embeddings<V: LexemeVectors + ?Sized>(
    sets: &BmesSets,
    freq: &FrequencyTable,
    vectors: &V,
) -> Result<Vec<Vec<f64>>, FeatureError> {
    let dim = vectors.dim();
    let mut out = Vec::with_capacity(sets.tokens.len());
    for tok in &sets.tokens {
        let mut v = vec![0.0; 4 * dim];
        for (slot, role) in Role::ALL.into_iter().enumerate() {
            let mut ids = tok.get(role).to_vec();
            ids.sort_unstable();
            ids.dedup();
            if ids.is_empty() {
                continue;
            }
            let acc = &mut v[slot * dim..(slot + 1) * dim];
            let mut total = 0.0;
            for id in ids {
                let w = (freq.get(id) + 1) as f64;
                let e = vectors
                    .vector(id)
                    .ok_or(FeatureError::MissingEmbedding(id))?;
                for (a, x) in acc.iter_mut().zip(&e) {
                    *a += w * x;
                }
                total += w;
            }
            for a in acc {
                *a /= total;
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// Lexeme-side context for the `gaz.*` templates.
#[derive(Debug, Clone, Copy)]
pub struct GazContext<'a> {
    pub sets: &'a BmesSets,
    pub freq: &'a FrequencyTable,
    pub matcher: &'a LexemeMatcher,
}

/// Feature id strings per token. Without a gazetteer context the `gaz.*`
/// templates emit nothing.
pub fn discrete_features(
    chars: &[char],
    gaz: Option<GazContext<'_>>,
    templates: &[Template],
) -> Vec<Vec<String>> {
    let at = |i: isize| -> char {
        if i < 0 || i as usize >= chars.len() {
            PAD
        } else {
            chars[i as usize]
        }
    };
    (0..chars.len())
        .map(|i| {
            let p = i as isize;
            let mut feats = Vec::with_capacity(templates.len());
            for &t in templates {
                match t {
                    Template::CharPrev => feats.push(format!("c-1={}", at(p - 1))),
                    Template::Char => feats.push(format!("c0={}", at(p))),
                    Template::CharNext => feats.push(format!("c1={}", at(p + 1))),
                    Template::BigramPrev => feats.push(format!("c-1c0={}{}", at(p - 1), at(p))),
                    Template::BigramNext => feats.push(format!("c0c1={}{}", at(p), at(p + 1))),
                    Template::GazPresent(role) => {
                        if let Some(g) = gaz {
                            if !g.sets.tokens[i].get(role).is_empty() {
                                feats.push(format!("gaz.{}=1", role.letter()));
                            }
                        }
                    }
                    Template::GazTop(role) => {
                        if let Some(g) = gaz {
                            if let Some(id) = g.freq.most_frequent(g.sets.tokens[i].get(role)) {
                                if g.freq.in_top_vocab(id) {
                                    feats.push(format!(
                                        "gaz.{}.top={}",
                                        role.letter(),
                                        g.matcher.lexeme(id)
                                    ));
                                }
                            }
                        }
                    }
                }
            }
            feats
        })
        .collect()
}

/// Features of one sentence, aligned with its characters.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceFeatures {
    pub discrete: Vec<Vec<String>>,
    /// `4 * dim` values per token in dense mode.
    pub dense: Option<Vec<Vec<f64>>>,
}

impl SentenceFeatures {
    pub fn len(&self) -> usize {
        self.discrete.len()
    }

    pub fn is_empty(&self) -> bool {
        self.discrete.is_empty()
    }
}

/// Everything needed to featurize sentences for one (gazetteer, mode) pair.
/// Frequencies are frozen from the training split at construction.
#[derive(Debug, Clone)]
pub struct Featurizer {
    mode: FeatureMode,
    templates: Vec<Template>,
    gazetteer: Arc<Gazetteer>,
    gazetteer_fingerprint: String,
    matcher: LexemeMatcher,
    freq: FrequencyTable,
    seed: u64,
}

impl Featurizer {
    pub fn new(
        gazetteer: Arc<Gazetteer>,
        mode: FeatureMode,
        train: &[Sentence],
        seed: u64,
    ) -> Result<Self, FeatureError> {
        let matcher = LexemeMatcher::new(&gazetteer)?;
        let freq = lexeme_frequency(&matcher, train);
        Ok(Featurizer {
            mode,
            templates: mode.templates(),
            gazetteer_fingerprint: gazetteer.fingerprint(),
            gazetteer,
            matcher,
            freq,
            seed,
        })
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn template_names(&self) -> Vec<String> {
        self.templates.iter().map(Template::to_string).collect()
    }

    pub fn gazetteer(&self) -> &Gazetteer {
        &self.gazetteer
    }

    pub fn gazetteer_fingerprint(&self) -> &str {
        &self.gazetteer_fingerprint
    }

    pub fn matcher(&self) -> &LexemeMatcher {
        &self.matcher
    }

    pub fn frequencies(&self) -> &FrequencyTable {
        &self.freq
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Width of the dense channel (0 unless in dense mode).
    pub fn dense_dim(&self) -> usize {
        if self.mode.dense() {
            4 * self.gazetteer.dim()
        } else {
            0
        }
    }

    pub fn mask<I, S>(&self, lexemes: I) -> LexemeMask
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.matcher.mask(lexemes)
    }

    pub fn featurize(
        &self,
        chars: &[char],
        mask: Option<&LexemeMask>,
    ) -> Result<SentenceFeatures, FeatureError> {
        if !self.mode.uses_gazetteer() {
            return Ok(SentenceFeatures {
                discrete: discrete_features(chars, None, &self.templates),
                dense: None,
            });
        }
        let matches = self.matcher.match_all(chars, mask);
        self.featurize_matches(chars, &matches)
    }

    /// Featurizes with an explicit match list.
    pub fn featurize_matches(
        &self,
        chars: &[char],
        matches: &[MatchSpan],
    ) -> Result<SentenceFeatures, FeatureError> {
        let sets = bmes_sets(chars.len(), matches)?;
        let ctx = GazContext {
            sets: &sets,
            freq: &self.freq,
            matcher: &self.matcher,
        };
        let discrete = discrete_features(chars, Some(ctx), &self.templates);
        let dense = if self.mode.dense() {
            let vectors = GazetteerVectors {
                gazetteer: &self.gazetteer,
                seed: self.seed,
            };
            Some(pool_embeddings(&sets, &self.freq, &vectors)?)
        } else {
            None
        };
        Ok(SentenceFeatures { discrete, dense })
    }
}
