//! Lexeme-set analysis and ablations.
//!
//! `A` and `B` are the lexemes matched in the training and test splits. The
//! test-side lexemes are split two ways: shared with training (`I = A ∩ B`)
//! versus unseen (`S = B \ A`), and entity surfaces (`E`, any gold span
//! surface in the whole dataset) versus the rest (`N`). Masking a set removes
//! its matches from test-time featurization of an already trained model.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Sentence};
use crate::evaluation::evaluate;
use crate::features::Featurizer;
use crate::gazetteer::{Gazetteer, GazetteerError};
use crate::matcher::LexemeMatcher;
use crate::pipeline::{self, PipelineConfig, PipelineError};
use crate::seed;
use crate::tagger::{CrfModel, TaggerError};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("lexeme sets were computed with matcher {sets} but the featurizer uses {featurizer}")]
    FingerprintMismatch { sets: String, featurizer: String },
    #[error("gazetteer {0:?} has no pre-trained embeddings to ablate")]
    NotPretrained(String),
    #[error("fractions must be in (0, 1] and sorted ascending, got {0:?}")]
    BadFractions(Vec<f64>),
    #[error("unknown report format {0:?} (expected json or csv)")]
    UnknownFormat(String),
    #[error("unknown lexeme set {0:?} (expected I, S, E or N)")]
    UnknownSet(String),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("failed to write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to write CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MaskedSet {
    I,
    S,
    E,
    N,
}

impl MaskedSet {
    pub const ALL: [MaskedSet; 4] = [MaskedSet::I, MaskedSet::S, MaskedSet::E, MaskedSet::N];
}

impl fmt::Display for MaskedSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskedSet::I => "I",
            MaskedSet::S => "S",
            MaskedSet::E => "E",
            MaskedSet::N => "N",
        })
    }
}

impl FromStr for MaskedSet {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MaskedSet::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| AnalysisError::UnknownSet(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexemeSets {
    pub a: BTreeSet<String>,
    pub b: BTreeSet<String>,
    pub i: BTreeSet<String>,
    pub s: BTreeSet<String>,
    pub e: BTreeSet<String>,
    pub n: BTreeSet<String>,
    /// Fingerprint of the matcher the sets were computed with.
    pub matcher: String,
}

/// Set sizes in the I, S, E, N column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCounts {
    #[serde(rename = "I")]
    pub i: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "E")]
    pub e: usize,
    #[serde(rename = "N")]
    pub n: usize,
}

impl LexemeSets {
    pub fn get(&self, which: MaskedSet) -> &BTreeSet<String> {
        match which {
            MaskedSet::I => &self.i,
            MaskedSet::S => &self.s,
            MaskedSet::E => &self.e,
            MaskedSet::N => &self.n,
        }
    }

    pub fn counts(&self) -> SetCounts {
        SetCounts {
            i: self.i.len(),
            s: self.s.len(),
            e: self.e.len(),
            n: self.n.len(),
        }
    }

    /// Names of the partition identities that fail (empty when all hold).
    pub fn identity_violations(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        let union = |x: &BTreeSet<String>, y: &BTreeSet<String>| -> BTreeSet<String> {
            x.union(y).cloned().collect()
        };
        if union(&self.i, &self.s) != self.b {
            bad.push("I ∪ S == B");
        }
        if !self.i.is_disjoint(&self.s) {
            bad.push("I ∩ S == ∅");
        }
        if union(&self.e, &self.n) != self.b {
            bad.push("E ∪ N == B");
        }
        if !self.e.is_disjoint(&self.n) {
            bad.push("E ∩ N == ∅");
        }
        if !self.i.is_subset(&self.a) {
            bad.push("I ⊆ A");
        }
        let ab = union(&self.a, &self.b);
        let s2: BTreeSet<String> = ab.difference(&self.a).cloned().collect();
        if s2 != self.s {
            bad.push("S == (A ∪ B) \\ A");
        }
        bad
    }
}

fn matched(matcher: &LexemeMatcher, split: &[Sentence]) -> BTreeSet<String> {
    split
        .iter()
        .flat_map(|s| matcher.match_all(&s.chars, None))
        .map(|m| m.surface)
        .collect()
}

/// `A`/`B` come from train/test only; the entity-surface universe for `E`
/// spans train, dev and test. Entity type is ignored.
pub fn compute_sets(matcher: &LexemeMatcher, dataset: &Dataset) -> LexemeSets {
    let a = matched(matcher, &dataset.train);
    let b = matched(matcher, &dataset.test);
    let surfaces: BTreeSet<String> = dataset
        .all_sentences()
        .flat_map(|s| s.spans())
        .map(|sp| sp.surface)
        .collect();
    let i = b.intersection(&a).cloned().collect();
    let s = b.difference(&a).cloned().collect();
    let (e, n): (BTreeSet<String>, BTreeSet<String>) =
        b.iter().cloned().partition(|l| surfaces.contains(l));
    LexemeSets {
        a,
        b,
        i,
        s,
        e,
        n,
        matcher: matcher.fingerprint(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub masked_set: MaskedSet,
    pub size: usize,
    pub masked_f1: f64,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEffectReport {
    pub dataset: String,
    pub gazetteer: String,
    pub model: String,
    pub fingerprint: String,
    pub base_f1: f64,
    pub sizes: SetCounts,
    /// In I, S, E, N order.
    pub rows: Vec<EffectRow>,
}

impl CausalEffectReport {
    pub fn effect(&self, which: MaskedSet) -> f64 {
        self.row(which).effect
    }

    pub fn row(&self, which: MaskedSet) -> &EffectRow {
        self.rows
            .iter()
            .find(|r| r.masked_set == which)
            .expect("report has a row per set")
    }
}

/// F1 on `split` with the given lexemes masked, and the drop from `base_f1`.
pub fn masked_f1<I, S>(
    model: &CrfModel,
    split: &[Sentence],
    featurizer: &Featurizer,
    lexemes: I,
) -> Result<f64, TaggerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mask = featurizer.mask(lexemes);
    Ok(evaluate(model, split, featurizer, Some(&mask))?.f1())
}

/// Masks each of I, S, E, N in turn against one trained model.
pub fn causal_effects(
    model: &CrfModel,
    test: &[Sentence],
    featurizer: &Featurizer,
    sets: &LexemeSets,
    dataset_name: &str,
) -> Result<CausalEffectReport, AnalysisError> {
    let current = featurizer.matcher().fingerprint();
    if current != sets.matcher {
        return Err(AnalysisError::FingerprintMismatch {
            sets: sets.matcher.clone(),
            featurizer: current,
        });
    }
    for w in model.compatibility_warnings(featurizer) {
        log::warn!("{w}");
    }
    let base_f1 = evaluate(model, test, featurizer, None)?.f1();
    let mut rows = Vec::with_capacity(4);
    for which in MaskedSet::ALL {
        let set = sets.get(which);
        let m = masked_f1(model, test, featurizer, set)?;
        rows.push(EffectRow {
            masked_set: which,
            size: set.len(),
            masked_f1: m,
            effect: base_f1 - m,
        });
    }
    let config = model.config();
    Ok(CausalEffectReport {
        dataset: dataset_name.to_string(),
        gazetteer: featurizer.gazetteer().name().to_string(),
        model: featurizer.mode().to_string(),
        fingerprint: seed::fingerprint(&[
            featurizer.gazetteer().name(),
            featurizer.gazetteer_fingerprint(),
            &config.seed.to_string(),
            &config.templates.join(","),
        ]),
        base_f1,
        sizes: sets.counts(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    /// Fraction for size ablations; "pretrained"/"stripped" for embeddings.
    pub point: String,
    pub num_lexemes: usize,
    pub f1: f64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: String,
    pub dataset: String,
    pub gazetteer: String,
    pub model: String,
    pub seed: u64,
    pub points: Vec<AblationPoint>,
    /// Points that could not be run, with the reason.
    pub skipped: Vec<(String, String)>,
    /// Stripped minus pretrained F1, for the embedding axis.
    pub delta: Option<f64>,
}

impl AblationReport {
    fn new(axis: &str, dataset: &Dataset, gazetteer: &Gazetteer, config: &PipelineConfig) -> Self {
        AblationReport {
            axis: axis.to_string(),
            dataset: dataset.name.clone(),
            gazetteer: gazetteer.name().to_string(),
            model: config.mode.to_string(),
            seed: config.seed,
            points: Vec::new(),
            skipped: Vec::new(),
            delta: None,
        }
    }
}

fn run_point(
    dataset: &Dataset,
    gazetteer: Gazetteer,
    config: &PipelineConfig,
    point: String,
) -> Result<AblationPoint, AnalysisError> {
    let num_lexemes = gazetteer.len();
    let run = pipeline::run(dataset, Arc::new(gazetteer), config)?;
    Ok(AblationPoint {
        point,
        num_lexemes,
        f1: run.test.f1(),
        fingerprint: run.fingerprint,
    })
}

/// Seed used to subsample at `fraction` under the run seed `seed`.
pub fn subsample_seed(seed: u64, fraction: f64) -> u64 {
    seed::derive(seed, &format!("subsample:{fraction}"))
}

/// Retrains and evaluates once per fraction. Fractions too small to keep
/// any lexeme are skipped and listed in the report.
pub fn size_ablation(
    dataset: &Dataset,
    gazetteer: &Gazetteer,
    fractions: &[f64],
    config: &PipelineConfig,
) -> Result<AblationReport, AnalysisError> {
    let ok = !fractions.is_empty()
        && fractions.iter().all(|&f| f > 0.0 && f <= 1.0)
        && fractions.windows(2).all(|w| w[0] < w[1]);
    if !ok {
        return Err(AnalysisError::BadFractions(fractions.to_vec()));
    }
    let mut report = AblationReport::new("size", dataset, gazetteer, config);
    for &f in fractions {
        match gazetteer.subsample(f, subsample_seed(config.seed, f)) {
            Ok(g) => report
                .points
                .push(run_point(dataset, g, config, f.to_string())?),
            Err(e @ GazetteerError::EmptySubsample { .. }) => {
                log::warn!("skipping fraction {f}: {e}");
                report.skipped.push((f.to_string(), e.to_string()));
            }
            Err(e) => unreachable!("fractions were validated: {e}"),
        }
    }
    Ok(report)
}

/// Two otherwise identical runs: with the pre-trained vectors and with them
/// replaced by the seeded random init.
pub fn embedding_ablation(
    dataset: &Dataset,
    gazetteer: &Gazetteer,
    config: &PipelineConfig,
) -> Result<AblationReport, AnalysisError> {
    if !gazetteer.pretrained() {
        return Err(AnalysisError::NotPretrained(gazetteer.name().to_string()));
    }
    let mut report = AblationReport::new("embeddings", dataset, gazetteer, config);
    let with = run_point(dataset, gazetteer.clone(), config, "pretrained".into())?;
    let without = run_point(
        dataset,
        gazetteer.strip_embeddings(),
        config,
        "stripped".into(),
    )?;
    report.delta = Some(without.f1 - with.f1);
    report.points = vec![with, without];
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(AnalysisError::UnknownFormat(s.to_string())),
        }
    }
}

/// Something `emit_report` can write.
pub trait Report: Serialize {
    fn csv_header(&self) -> &'static [&'static str];
    fn csv_rows(&self) -> Vec<Vec<String>>;
}

impl Report for CausalEffectReport {
    fn csv_header(&self) -> &'static [&'static str] {
        &[
            "dataset",
            "gazetteer",
            "model",
            "masked_set",
            "base_f1",
            "masked_f1",
            "effect",
        ]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    self.dataset.clone(),
                    self.gazetteer.clone(),
                    self.model.clone(),
                    r.masked_set.to_string(),
                    self.base_f1.to_string(),
                    r.masked_f1.to_string(),
                    r.effect.to_string(),
                ]
            })
            .collect()
    }
}

impl Report for AblationReport {
    fn csv_header(&self) -> &'static [&'static str] {
        &[
            "dataset",
            "gazetteer",
            "model",
            "axis",
            "point",
            "num_lexemes",
            "f1",
            "fingerprint",
        ]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.points
            .iter()
            .map(|p| {
                vec![
                    self.dataset.clone(),
                    self.gazetteer.clone(),
                    self.model.clone(),
                    self.axis.clone(),
                    p.point.clone(),
                    p.num_lexemes.to_string(),
                    p.f1.to_string(),
                    p.fingerprint.clone(),
                ]
            })
            .collect()
    }
}

/// Table-7 layout: one row of I, S, E, N counts.
impl Report for LexemeSets {
    fn csv_header(&self) -> &'static [&'static str] {
        &["I", "S", "E", "N"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        let c = self.counts();
        vec![[c.i, c.s, c.e, c.n].iter().map(|n| n.to_string()).collect()]
    }
}

pub fn render_report<R: Report>(report: &R, format: ReportFormat) -> Result<String, AnalysisError> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(report.csv_header())?;
            for row in report.csv_rows() {
                w.write_record(&row)?;
            }
            let bytes = w.into_inner().map_err(|e| e.into_error())?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
    }
}

pub fn emit_report<R: Report>(
    report: &R,
    path: &Path,
    format: ReportFormat,
) -> Result<(), AnalysisError> {
    fs::write(path, render_report(report, format)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Scheme, Tag};

    fn sentence(text: &str, tags: &str) -> Sentence {
        Sentence::new(
            text.chars().collect(),
            tags.split_whitespace()
                .map(|t| t.parse::<Tag>().unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn dataset() -> Dataset {
        Dataset {
            name: "toy".into(),
            scheme: Scheme::Bioes,
            train: vec![
                sentence("abxcd", "O O O B-PER E-PER"),
                sentence("bcx", "O O O"),
            ],
            dev: vec![sentence("xx", "O O")],
            test: vec![sentence("bcd", "O O O")],
            warnings: Default::default(),
        }
    }

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn sets_follow_definitions() {
        let m = LexemeMatcher::from_lexemes(&["ab", "bc", "cd"]).unwrap();
        let s = compute_sets(&m, &dataset());
        assert_eq!(s.a, set(&["ab", "bc", "cd"]));
        assert_eq!(s.b, set(&["bc", "cd"]));
        assert_eq!(s.i, set(&["bc", "cd"]));
        assert!(s.s.is_empty());
        assert_eq!(s.e, set(&["cd"]));
        assert_eq!(s.n, set(&["bc"]));
        assert!(s.identity_violations().is_empty());
    }

    #[test]
    fn unseen_test_lexemes_land_in_s() {
        let mut d = dataset();
        d.train = vec![sentence("abx", "O O O")];
        let m = LexemeMatcher::from_lexemes(&["ab", "bc", "cd"]).unwrap();
        let s = compute_sets(&m, &d);
        assert_eq!(s.i, set(&[]));
        assert_eq!(s.s, set(&["bc", "cd"]));
        assert!(s.identity_violations().is_empty());
    }

    #[test]
    fn violations_are_detected() {
        let m = LexemeMatcher::from_lexemes(&["ab", "bc", "cd"]).unwrap();
        let mut s = compute_sets(&m, &dataset());
        s.n.insert("cd".into());
        assert_eq!(s.identity_violations(), vec!["E ∩ N == ∅"]);
    }

    #[test]
    fn csv_layouts() {
        let m = LexemeMatcher::from_lexemes(&["ab", "bc", "cd"]).unwrap();
        let s = compute_sets(&m, &dataset());
        assert_eq!(
            render_report(&s, ReportFormat::Csv).unwrap(),
            "I,S,E,N\n2,0,1,1\n"
        );
        let report = CausalEffectReport {
            dataset: "d".into(),
            gazetteer: "g".into(),
            model: "baseline".into(),
            fingerprint: "0".into(),
            base_f1: 0.5,
            sizes: s.counts(),
            rows: MaskedSet::ALL
                .iter()
                .map(|&w| EffectRow {
                    masked_set: w,
                    size: 0,
                    masked_f1: 0.25,
                    effect: 0.25,
                })
                .collect(),
        };
        let csv = render_report(&report, ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(
            lines[0],
            "dataset,gazetteer,model,masked_set,base_f1,masked_f1,effect"
        );
        assert_eq!(lines[1], "d,g,baseline,I,0.5,0.25,0.25");
        let json = render_report(&report, ReportFormat::Json).unwrap();
        let back: CausalEffectReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn masked_set_names_round_trip() {
        for m in MaskedSet::ALL {
            assert_eq!(m.to_string().parse::<MaskedSet>().unwrap(), m);
        }
        assert!("X".parse::<MaskedSet>().is_err());
    }

    #[test]
    fn bad_fractions_are_rejected() {
        let g = Gazetteer::from_lexemes("g", ["ab"], 2).unwrap();
        let config = PipelineConfig::new(
            crate::features::FeatureMode::Baseline,
            1,
            Default::default(),
        );
        for f in [vec![], vec![0.0], vec![0.5, 0.2], vec![1.5]] {
            assert!(matches!(
                size_ablation(&dataset(), &g, &f, &config),
                Err(AnalysisError::BadFractions(_))
            ));
        }
    }
}
