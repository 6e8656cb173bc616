//! Gazetteers: ordered lexeme lists with optional pre-trained vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum GazetteerError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("empty lexicon")]
    Empty,
    #[error("invalid lexeme {0:?}: lexemes must be non-empty and contain no whitespace")]
    InvalidLexeme(String),
    #[error("embedding header declares {declared} vectors but the file has {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("fraction {0} is outside (0, 1]")]
    FractionOutOfRange(f64),
    #[error("empty subsample: round({fraction} * {num}) = 0")]
    EmptySubsample { fraction: f64, num: usize },
    #[error("vector for {lexeme:?} has {found} values, expected {dim}")]
    Arity {
        lexeme: String,
        found: usize,
        dim: usize,
    },
}

/// Dimension used for un-pretrained gazetteers unless configured otherwise.
pub const DEFAULT_RANDOM_DIM: usize = 50;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazetteerWarnings {
    pub duplicates: usize,
    pub uncovered: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gazetteer {
    name: String,
    lexemes: Vec<String>,
    index: HashMap<String, u32>,
    dim: usize,
    pretrained: bool,
    /// Row of each lexeme in `vectors`, if it has a pre-trained vector.
    rows: Vec<Option<u32>>,
    vectors: Vec<f32>,
    warnings: GazetteerWarnings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazetteerStats {
    pub name: String,
    pub num: usize,
    pub dim: usize,
    pub pretrained: bool,
    pub coverage_ratio: f64,
}

fn valid_lexeme(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl Gazetteer {
    /// Builds an un-pretrained gazetteer. Duplicates are dropped (first wins).
    pub fn from_lexemes<I, S>(name: &str, lexemes: I, dim: usize) -> Result<Self, GazetteerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut g = Gazetteer {
            name: name.to_string(),
            lexemes: Vec::new(),
            index: HashMap::new(),
            dim,
            pretrained: false,
            rows: Vec::new(),
            vectors: Vec::new(),
            warnings: GazetteerWarnings::default(),
        };
        for lex in lexemes {
            let lex = lex.into();
            if !valid_lexeme(&lex) {
                return Err(GazetteerError::InvalidLexeme(lex));
            }
            g.push(lex);
        }
        if g.lexemes.is_empty() {
            return Err(GazetteerError::Empty);
        }
        Ok(g)
    }

    /// Builds a pretrained gazetteer from `(lexeme, vector)` pairs; `None`
    /// marks a lexeme with no pre-trained vector.
    pub fn with_vectors<I>(name: &str, entries: I, dim: usize) -> Result<Self, GazetteerError>
    where
        I: IntoIterator<Item = (String, Option<Vec<f32>>)>,
    {
        let entries: Vec<_> = entries.into_iter().collect();
        let mut g = Gazetteer::from_lexemes(name, entries.iter().map(|(l, _)| l.clone()), dim)?;
        g.pretrained = true;
        for (lex, vec) in entries {
            if let Some(v) = vec {
                if v.len() != dim {
                    return Err(GazetteerError::Arity {
                        lexeme: lex,
                        found: v.len(),
                        dim,
                    });
                }
                if let Some(&id) = g.index.get(&lex) {
                    g.set_vector(id, &v);
                }
            }
        }
        g.warnings.uncovered = g.rows.iter().filter(|r| r.is_none()).count();
        Ok(g)
    }

    fn push(&mut self, lex: String) {
        if self.index.contains_key(&lex) {
            self.warnings.duplicates += 1;
            return;
        }
        self.index.insert(lex.clone(), self.lexemes.len() as u32);
        self.lexemes.push(lex);
        self.rows.push(None);
    }

    fn set_vector(&mut self, id: u32, v: &[f32]) {
        if self.rows[id as usize].is_none() {
            self.rows[id as usize] = Some((self.vectors.len() / self.dim.max(1)) as u32);
            self.vectors.extend_from_slice(v);
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.lexemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lexemes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pretrained(&self) -> bool {
        self.pretrained
    }

    pub fn lexemes(&self) -> &[String] {
        &self.lexemes
    }

    pub fn lexeme(&self, id: u32) -> &str {
        &self.lexemes[id as usize]
    }

    pub fn id(&self, lexeme: &str) -> Option<u32> {
        self.index.get(lexeme).copied()
    }

    pub fn warnings(&self) -> &GazetteerWarnings {
        &self.warnings
    }

    pub fn covered(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }

    pub fn pretrained_vector(&self, id: u32) -> Option<&[f32]> {
        self.rows[id as usize].map(|r| {
            let start = r as usize * self.dim;
            &self.vectors[start..start + self.dim]
        })
    }

    /// Vector for `id`: the pre-trained one if present, otherwise a seeded
    /// uniform draw in `[-0.5/dim, 0.5/dim]` that depends only on `seed` and
    /// the lexeme string.
    pub fn vector(&self, id: u32, seed: u64) -> Vec<f64> {
        if let Some(v) = self.pretrained_vector(id) {
            return v.iter().map(|&x| f64::from(x)).collect();
        }
        random_init(self.lexeme(id), self.dim, seed)
    }

    pub fn stats(&self) -> GazetteerStats {
        let num = self.len();
        GazetteerStats {
            name: self.name.clone(),
            num,
            dim: self.dim,
            pretrained: self.pretrained,
            coverage_ratio: if num == 0 {
                0.0
            } else {
                self.covered() as f64 / num as f64
            },
        }
    }

    /// Content hash over name, lexemes and vectors.
    pub fn fingerprint(&self) -> String {
        let mut h = seed::Fnv::default();
        h.write_field(&self.name);
        h.write(&(self.dim as u64).to_le_bytes());
        h.write(&[u8::from(self.pretrained)]);
        for (lex, row) in self.lexemes.iter().zip(&self.rows) {
            h.write_field(lex);
            h.write(&[u8::from(row.is_some())]);
        }
        for v in &self.vectors {
            h.write(&v.to_bits().to_le_bytes());
        }
        format!("{:016x}", h.finish())
    }

    /// Keeps `round(fraction * len)` lexemes drawn uniformly without
    /// replacement. Retained lexemes keep their relative order and vectors.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Gazetteer, GazetteerError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(GazetteerError::FractionOutOfRange(fraction));
        }
        let num = self.len();
        let keep = (fraction * num as f64).round() as usize;
        if keep == 0 {
            return Err(GazetteerError::EmptySubsample { fraction, num });
        }
        let mut rng = seed::rng(seed, "subsample");
        let mut picked = rand::seq::index::sample(&mut rng, num, keep).into_vec();
        picked.sort_unstable();

        let mut out = Gazetteer {
            name: if keep == num {
                self.name.clone()
            } else {
                format!("{}@{fraction}", self.name)
            },
            lexemes: Vec::with_capacity(keep),
            index: HashMap::with_capacity(keep),
            dim: self.dim,
            pretrained: self.pretrained,
            rows: Vec::with_capacity(keep),
            vectors: Vec::new(),
            warnings: GazetteerWarnings::default(),
        };
        for id in picked {
            out.push(self.lexemes[id].clone());
            if let Some(v) = self.pretrained_vector(id as u32) {
                let new_id = out.lexemes.len() as u32 - 1;
                out.set_vector(new_id, v);
            }
        }
        out.warnings.uncovered = if out.pretrained {
            out.rows.iter().filter(|r| r.is_none()).count()
        } else {
            0
        };
        Ok(out)
    }

    /// Same lexemes with every pre-trained vector dropped. `dim` is kept so
    /// the random init produces vectors of the same shape.
    pub fn strip_embeddings(&self) -> Gazetteer {
        Gazetteer {
            name: self.name.clone(),
            lexemes: self.lexemes.clone(),
            index: self.index.clone(),
            dim: self.dim,
            pretrained: false,
            rows: vec![None; self.lexemes.len()],
            vectors: Vec::new(),
            warnings: GazetteerWarnings {
                duplicates: self.warnings.duplicates,
                uncovered: 0,
            },
        }
    }

    /// Renames the gazetteer (the name is part of the fingerprint).
    pub fn renamed(mut self, name: &str) -> Gazetteer {
        self.name = name.to_string();
        self
    }
}

pub fn random_init(lexeme: &str, dim: usize, seed: u64) -> Vec<f64> {
    let bound = 0.5 / dim.max(1) as f64;
    let mut rng = seed::rng(seed ^ seed::fnv1a(lexeme.as_bytes()), "lexeme-init");
    (0..dim).map(|_| rng.gen_range(-bound..=bound)).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GazetteerError + '_ {
    move |source| GazetteerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a lexicon (one lexeme per line) and, optionally, word2vec text
/// vectors. Tokens in the vector file that are not in the lexicon are
/// ignored. Without vectors, `random_dim` is recorded as the dimension.
pub fn load_gazetteer(
    name: &str,
    lexicon_path: &Path,
    embedding_path: Option<&Path>,
    random_dim: usize,
) -> Result<Gazetteer, GazetteerError> {
    let file = File::open(lexicon_path).map_err(io_err(lexicon_path))?;
    let mut lexemes = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(lexicon_path))?;
        let lex = line.trim();
        if lex.is_empty() {
            continue;
        }
        if !valid_lexeme(lex) {
            return Err(GazetteerError::Parse {
                path: lexicon_path.to_path_buf(),
                line: idx + 1,
                message: format!("lexeme {lex:?} contains whitespace"),
            });
        }
        lexemes.push(lex.to_string());
    }
    let mut g = Gazetteer::from_lexemes(name, lexemes, random_dim)?;
    if let Some(path) = embedding_path {
        read_word2vec(&mut g, path)?;
    }
    if g.warnings.duplicates > 0 {
        log::warn!(
            "{}: dropped {} duplicate lexemes",
            lexicon_path.display(),
            g.warnings.duplicates
        );
    }
    Ok(g)
}

fn read_word2vec(g: &mut Gazetteer, path: &Path) -> Result<(), GazetteerError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, message: String| GazetteerError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let (declared, dim) = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(parse_err(1, "missing header line".into()));
        };
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = match fields.as_slice() {
            [count, dim] => count.parse::<usize>().ok().zip(dim.parse::<usize>().ok()),
            _ => None,
        };
        match parsed {
            Some((count, dim)) if dim > 0 => break (count, dim),
            _ => {
                return Err(parse_err(
                    idx + 1,
                    format!("expected header \"count dim\", got {line:?}"),
                ))
            }
        }
    };

    g.dim = dim;
    g.pretrained = true;
    let mut found = 0;
    let mut buf = Vec::with_capacity(dim);
    for (idx, line) in lines {
        let line = line.map_err(io_err(path))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        found += 1;
        buf.clear();
        for f in fields {
            let v: f32 = f
                .parse()
                .map_err(|_| parse_err(idx + 1, format!("bad number {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(idx + 1, format!("non-finite value {f:?}")));
            }
            buf.push(v);
        }
        if buf.len() != dim {
            return Err(parse_err(
                idx + 1,
                format!("{token:?} has {} values, header says {dim}", buf.len()),
            ));
        }
        if let Some(id) = g.id(token) {
            g.set_vector(id, &buf);
        }
    }
    if found != declared {
        return Err(GazetteerError::CountMismatch { declared, found });
    }
    g.warnings.uncovered = g.rows.iter().filter(|r| r.is_none()).count();
    Ok(())
}
