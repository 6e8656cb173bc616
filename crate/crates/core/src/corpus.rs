//! Character-level tagged corpora.
//!
//! Files are two-column CoNLL: one character per line, a run of horizontal
//! whitespace, then the tag. Blank lines separate sentences. Both BIO and
//! BIOES inputs are accepted; everything is held internally as BIOES.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty split: {0}")]
    EmptySplit(&'static str),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unknown tag scheme {0:?} (expected BIO or BIOES)")]
    UnknownScheme(String),
    #[error("invalid tag {0:?}")]
    InvalidTag(String),
    #[error("sentence has {chars} characters but {tags} tags")]
    LengthMismatch { chars: usize, tags: usize },
    #[error("empty sentence")]
    EmptySentence,
}

/// Tag scheme of an input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "BIO")]
    Bio,
    #[serde(rename = "BIOES")]
    Bioes,
}

impl Scheme {
    fn allows(self, prefix: char) -> bool {
        match self {
            Scheme::Bio => matches!(prefix, 'B' | 'I'),
            Scheme::Bioes => matches!(prefix, 'B' | 'I' | 'E' | 'S'),
        }
    }
}

impl FromStr for Scheme {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BIO" | "IOB2" => Ok(Scheme::Bio),
            "BIOES" | "IOBES" => Ok(Scheme::Bioes),
            _ => Err(CorpusError::UnknownScheme(s.to_string())),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Bio => "BIO",
            Scheme::Bioes => "BIOES",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    O,
    B(String),
    I(String),
    E(String),
    S(String),
}

impl Tag {
    pub fn etype(&self) -> Option<&str> {
        match self {
            Tag::O => None,
            Tag::B(t) | Tag::I(t) | Tag::E(t) | Tag::S(t) => Some(t),
        }
    }

    fn prefix(&self) -> char {
        match self {
            Tag::O => 'O',
            Tag::B(_) => 'B',
            Tag::I(_) => 'I',
            Tag::E(_) => 'E',
            Tag::S(_) => 'S',
        }
    }

    /// Parses a tag, checking the prefix against `scheme`. `M-` is read as
    /// `I-` under BIOES (the BMES convention of some corpora).
    pub fn parse(s: &str, scheme: Scheme) -> Result<Tag, CorpusError> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let (prefix, etype) = s
            .split_once('-')
            .ok_or_else(|| CorpusError::InvalidTag(s.to_string()))?;
        let mut chars = prefix.chars();
        let (Some(mut p), None) = (chars.next(), chars.next()) else {
            return Err(CorpusError::InvalidTag(s.to_string()));
        };
        if etype.is_empty() || etype.chars().any(char::is_whitespace) {
            return Err(CorpusError::InvalidTag(s.to_string()));
        }
        if p == 'M' && scheme == Scheme::Bioes {
            p = 'I';
        }
        if !scheme.allows(p) {
            return Err(CorpusError::InvalidTag(s.to_string()));
        }
        let etype = etype.to_string();
        Ok(match p {
            'B' => Tag::B(etype),
            'I' => Tag::I(etype),
            'E' => Tag::E(etype),
            _ => Tag::S(etype),
        })
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.etype() {
            None => f.write_str("O"),
            Some(t) => write!(f, "{}-{}", self.prefix(), t),
        }
    }
}

impl FromStr for Tag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tag::parse(s, Scheme::Bioes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: String,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub chars: Vec<char>,
    pub tags: Vec<Tag>,
}

impl Sentence {
    pub fn new(chars: Vec<char>, tags: Vec<Tag>) -> Result<Self, CorpusError> {
        if chars.len() != tags.len() {
            return Err(CorpusError::LengthMismatch {
                chars: chars.len(),
                tags: tags.len(),
            });
        }
        if chars.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        Ok(Sentence { chars, tags })
    }

    /// Builds a BIOES sentence from a span list.
    pub fn from_spans(chars: Vec<char>, spans: &[EntitySpan]) -> Result<Self, CorpusError> {
        let tags = tags_from_spans(chars.len(), spans, Scheme::Bioes);
        Sentence::new(chars, tags)
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn spans(&self) -> Vec<EntitySpan> {
        extract_spans(self)
    }
}

/// Decodes spans from a tag sequence. Accepts BIO and BIOES, and is lenient
/// about malformed sequences: an `I-X`/`E-X` with no open `X` span starts a
/// new one, and an open span is closed by anything that cannot continue it.
pub fn decode_spans(chars: &[char], tags: &[Tag]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let close = |open: &mut Option<(usize, &str)>, end: usize, spans: &mut Vec<EntitySpan>| {
        if let Some((start, etype)) = open.take() {
            spans.push(EntitySpan {
                start,
                end,
                etype: etype.to_string(),
                surface: chars[start..end].iter().collect(),
            });
        }
    };
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::O => close(&mut open, i, &mut spans),
            Tag::B(t) => {
                close(&mut open, i, &mut spans);
                open = Some((i, t));
            }
            Tag::S(t) => {
                close(&mut open, i, &mut spans);
                open = Some((i, t));
                close(&mut open, i + 1, &mut spans);
            }
            Tag::I(t) | Tag::E(t) => {
                if !matches!(open, Some((_, cur)) if cur == t) {
                    close(&mut open, i, &mut spans);
                    open = Some((i, t));
                }
                if matches!(tag, Tag::E(_)) {
                    close(&mut open, i + 1, &mut spans);
                }
            }
        }
    }
    close(&mut open, tags.len(), &mut spans);
    spans
}

pub fn extract_spans(sentence: &Sentence) -> Vec<EntitySpan> {
    decode_spans(&sentence.chars, &sentence.tags)
}

/// Renders non-overlapping spans as a tag sequence of length `len`.
pub fn tags_from_spans(len: usize, spans: &[EntitySpan], scheme: Scheme) -> Vec<Tag> {
    let mut tags = vec![Tag::O; len];
    for span in spans {
        let t = || span.etype.clone();
        match (scheme, span.end - span.start) {
            (Scheme::Bioes, 1) => tags[span.start] = Tag::S(t()),
            (Scheme::Bioes, _) => {
                tags[span.start] = Tag::B(t());
                for tag in &mut tags[span.start + 1..span.end - 1] {
                    *tag = Tag::I(t());
                }
                tags[span.end - 1] = Tag::E(t());
            }
            (Scheme::Bio, _) => {
                tags[span.start] = Tag::B(t());
                for tag in &mut tags[span.start + 1..span.end] {
                    *tag = Tag::I(t());
                }
            }
        }
    }
    tags
}

/// Rewrites a tag sequence into the canonical form of `scheme`, repairing
/// malformed transitions. Returns the tags and the number of positions that
/// were not already canonical.
pub fn normalize_tags(chars: &[char], tags: &[Tag], scheme: Scheme) -> (Vec<Tag>, usize) {
    let spans = decode_spans(chars, tags);
    let fixed = tags_from_spans(tags.len(), &spans, scheme);
    let changed = fixed.iter().zip(tags).filter(|(a, b)| a != b).count();
    (fixed, changed)
}

pub fn convert_tag_scheme(sentence: &Sentence, target: Scheme) -> Sentence {
    let spans = extract_spans(sentence);
    Sentence {
        chars: sentence.chars.clone(),
        tags: tags_from_spans(sentence.len(), &spans, target),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadWarnings {
    /// Tag positions rewritten by the dangling-`I` repair, per split.
    pub repaired_tags: BTreeMap<String, usize>,
    pub repaired_sentences: usize,
}

impl LoadWarnings {
    pub fn total_repairs(&self) -> usize {
        self.repaired_tags.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    /// Scheme of the source files. Sentences are always BIOES.
    pub scheme: Scheme,
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub warnings: LoadWarnings,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sentence] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn all_sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub total: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    #[serde(flatten)]
    pub counts: SplitCounts,
}

pub fn dataset_stats(dataset: &Dataset) -> SplitCounts {
    let (train, dev, test) = (dataset.train.len(), dataset.dev.len(), dataset.test.len());
    SplitCounts {
        total: train + dev + test,
        train,
        dev,
        test,
    }
}

/// Parses CoNLL text. Returns BIOES sentences and the repair count.
pub fn parse_conll(
    text: &str,
    scheme: Scheme,
    path: &Path,
) -> Result<(Vec<Sentence>, usize, usize), CorpusError> {
    let mut sentences = Vec::new();
    let mut repairs = 0;
    let mut repaired_sentences = 0;
    let mut chars = Vec::new();
    let mut tags = Vec::new();
    let err = |line: usize, message: String| CorpusError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut flush = |chars: &mut Vec<char>, tags: &mut Vec<Tag>| {
        if chars.is_empty() {
            return;
        }
        let source = std::mem::take(tags);
        // Repairs are counted in the source scheme so that a clean BIO file
        // reports zero even though every tag is rewritten to BIOES.
        let (_, changed) = normalize_tags(chars, &source, scheme);
        let spans = decode_spans(chars, &source);
        let fixed = tags_from_spans(source.len(), &spans, Scheme::Bioes);
        if changed > 0 {
            repairs += changed;
            repaired_sentences += 1;
        }
        sentences.push(Sentence {
            chars: std::mem::take(chars),
            tags: fixed,
        });
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end();
        if line.trim_start().is_empty() {
            flush(&mut chars, &mut tags);
            continue;
        }
        let mut cols = line.split([' ', '\t']).filter(|c| !c.is_empty());
        let (Some(token), Some(tag), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(err(lineno, format!("expected two columns, got {raw:?}")));
        };
        let mut it = token.chars();
        let (Some(ch), None) = (it.next(), it.next()) else {
            return Err(err(
                lineno,
                format!("token {token:?} is not a single character"),
            ));
        };
        let tag = Tag::parse(tag, scheme)
            .map_err(|_| err(lineno, format!("tag {tag:?} is not valid under {scheme}")))?;
        chars.push(ch);
        tags.push(tag);
    }
    flush(&mut chars, &mut tags);
    Ok((sentences, repairs, repaired_sentences))
}

fn load_split(
    path: &Path,
    scheme: Scheme,
    split: Split,
    warnings: &mut LoadWarnings,
) -> Result<Vec<Sentence>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (sentences, repairs, repaired_sentences) = parse_conll(&text, scheme, path)?;
    if sentences.is_empty() {
        return Err(CorpusError::EmptySplit(split.name()));
    }
    if repairs > 0 {
        log::warn!(
            "{}: repaired {repairs} malformed tags in {repaired_sentences} sentences",
            path.display()
        );
    }
    warnings
        .repaired_tags
        .insert(split.name().to_string(), repairs);
    warnings.repaired_sentences += repaired_sentences;
    Ok(sentences)
}

pub fn load_dataset(
    name: &str,
    train_path: &Path,
    dev_path: &Path,
    test_path: &Path,
    scheme: Scheme,
) -> Result<Dataset, CorpusError> {
    let mut warnings = LoadWarnings::default();
    let train = load_split(train_path, scheme, Split::Train, &mut warnings)?;
    let dev = load_split(dev_path, scheme, Split::Dev, &mut warnings)?;
    let test = load_split(test_path, scheme, Split::Test, &mut warnings)?;
    Ok(Dataset {
        name: name.to_string(),
        scheme,
        train,
        dev,
        test,
        warnings,
    })
}

/// Writes sentences as two-column CoNLL in `scheme`.
pub fn write_conll(sentences: &[Sentence], scheme: Scheme) -> String {
    let mut out = String::new();
    for s in sentences {
        let s = convert_tag_scheme(s, scheme);
        for (c, t) in s.chars.iter().zip(&s.tags) {
            out.push(*c);
            out.push(' ');
            out.push_str(&t.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<Tag> {
        s.split_whitespace()
            .map(|t| Tag::parse(t, Scheme::Bioes).unwrap())
            .collect()
    }

    fn chars(n: usize) -> Vec<char> {
        "abcdefghijklmnop".chars().take(n).collect()
    }

    fn triples(spans: &[EntitySpan]) -> Vec<(usize, usize, &str)> {
        spans
            .iter()
            .map(|s| (s.start, s.end, s.etype.as_str()))
            .collect()
    }

    #[test]
    fn extract_single_entity() {
        let s = Sentence::new(chars(3), tags("B-PER I-PER O")).unwrap();
        assert_eq!(triples(&extract_spans(&s)), vec![(0, 2, "PER")]);
        assert_eq!(extract_spans(&s)[0].surface, "ab");
    }

    #[test]
    fn extract_no_entities() {
        let s = Sentence::new(chars(3), tags("O O O")).unwrap();
        assert!(extract_spans(&s).is_empty());
    }

    #[test]
    fn extract_adjacent_entities() {
        let s = Sentence::new(chars(3), tags("B-PER B-LOC I-LOC")).unwrap();
        assert_eq!(
            triples(&extract_spans(&s)),
            vec![(0, 1, "PER"), (1, 3, "LOC")]
        );
    }

    #[test]
    fn bio_to_bioes() {
        let s = Sentence::new(chars(2), tags("B-PER I-PER")).unwrap();
        assert_eq!(
            convert_tag_scheme(&s, Scheme::Bioes).tags,
            tags("B-PER E-PER")
        );
        let s = Sentence::new(chars(1), tags("B-PER")).unwrap();
        assert_eq!(convert_tag_scheme(&s, Scheme::Bioes).tags, tags("S-PER"));
    }

    #[test]
    fn dangling_inside_is_promoted() {
        let (fixed, n) = normalize_tags(&chars(3), &tags("O I-LOC I-LOC"), Scheme::Bio);
        assert_eq!(fixed, tags("O B-LOC I-LOC"));
        assert_eq!(n, 1);
        let (fixed, n) = normalize_tags(&chars(2), &tags("B-PER I-LOC"), Scheme::Bio);
        assert_eq!(fixed, tags("B-PER B-LOC"));
        assert_eq!(n, 1);
    }

    #[test]
    fn parse_minimal_file() {
        let (sents, repairs, _) =
            parse_conll("南 B-LOC\n京 I-LOC\n\n", Scheme::Bio, Path::new("x")).unwrap();
        assert_eq!(sents.len(), 1);
        assert_eq!(repairs, 0);
        assert_eq!(sents[0].tags, tags("B-LOC E-LOC"));
        assert_eq!(triples(&sents[0].spans()), vec![(0, 2, "LOC")]);
    }

    #[test]
    fn parse_mixed_separators_and_trailing_space() {
        let text = "a\tB-X  \nb   I-X\n\n\nc O\n";
        let (sents, _, _) = parse_conll(text, Scheme::Bio, Path::new("x")).unwrap();
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[1].chars, vec!['c']);
    }

    #[test]
    fn parse_rejects_foreign_prefix_with_line_number() {
        let err = parse_conll("a B-X\nb E-X\n", Scheme::Bio, Path::new("f.txt")).unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bmes_alias_under_bioes() {
        let (sents, repairs, _) =
            parse_conll("a B-X\nb M-X\nc E-X\n", Scheme::Bioes, Path::new("x")).unwrap();
        assert_eq!(repairs, 0);
        assert_eq!(sents[0].tags, tags("B-X I-X E-X"));
    }

    #[test]
    fn bioes_repairs_are_counted() {
        // B followed by O becomes S.
        let (sents, repairs, n) =
            parse_conll("a B-X\nb O\n", Scheme::Bioes, Path::new("x")).unwrap();
        assert_eq!(sents[0].tags, tags("S-X O"));
        assert_eq!((repairs, n), (1, 1));
    }

    #[test]
    fn tag_display_round_trip() {
        for t in ["O", "B-PER", "I-LOC", "E-ORG.NAM", "S-X"] {
            assert_eq!(t.parse::<Tag>().unwrap().to_string(), t);
        }
        assert!("B-".parse::<Tag>().is_err());
        assert!("BB-X".parse::<Tag>().is_err());
        assert!("Q".parse::<Tag>().is_err());
    }

    #[test]
    fn unknown_scheme() {
        assert!(matches!(
            "BILOU".parse::<Scheme>(),
            Err(CorpusError::UnknownScheme(_))
        ));
    }

    #[test]
    fn sentence_invariants() {
        assert!(matches!(
            Sentence::new(vec!['a'], vec![]),
            Err(CorpusError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Sentence::new(vec![], vec![]),
            Err(CorpusError::EmptySentence)
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_spans() -> impl Strategy<Value = (usize, Vec<EntitySpan>)> {
            // Random segmentation of 1..30 chars into entity / gap pieces.
            prop::collection::vec((1usize..5, any::<bool>(), 0usize..3), 1..10).prop_map(|pieces| {
                let mut pos = 0;
                let mut spans = Vec::new();
                for (len, is_entity, ty) in pieces {
                    if is_entity {
                        spans.push(EntitySpan {
                            start: pos,
                            end: pos + len,
                            etype: ["PER", "LOC", "ORG"][ty].to_string(),
                            surface: String::new(),
                        });
                    }
                    pos += len;
                }
                (pos, spans)
            })
        }

        proptest! {
            #[test]
            fn spans_tags_round_trip((len, spans) in arb_spans(), bio in any::<bool>()) {
                let scheme = if bio { Scheme::Bio } else { Scheme::Bioes };
                let chars: Vec<char> = (0..len).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
                let spans: Vec<EntitySpan> = spans
                    .into_iter()
                    .map(|s| EntitySpan { surface: chars[s.start..s.end].iter().collect(), ..s })
                    .collect();
                let tags = tags_from_spans(len, &spans, scheme);
                prop_assert_eq!(decode_spans(&chars, &tags), spans);
            }

            #[test]
            fn conversion_preserves_spans((len, spans) in arb_spans()) {
                let chars: Vec<char> = (0..len).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
                let bio = Sentence { chars: chars.clone(), tags: tags_from_spans(len, &spans, Scheme::Bio) };
                let bioes = convert_tag_scheme(&bio, Scheme::Bioes);
                prop_assert_eq!(extract_spans(&bioes), extract_spans(&bio));
                prop_assert_eq!(convert_tag_scheme(&bioes, Scheme::Bio), bio);
            }
        }
    }
}
