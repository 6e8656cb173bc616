//! Exact-match span scoring.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{decode_spans, EntitySpan, Sentence};
use crate::features::Featurizer;
use crate::matcher::LexemeMask;
use crate::tagger::{CrfModel, TaggerError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Scores {
    /// Zero denominators give 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Scores {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub micro: Scores,
    pub per_type: BTreeMap<String, Scores>,
    pub sentences: usize,
}

impl EvalReport {
    pub fn f1(&self) -> f64 {
        self.micro.f1
    }

    /// Fixed-width table, one row per type then the micro row.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}\n",
            "type", "precision", "recall", "f1", "tp", "fp", "fn"
        );
        let rows = self
            .per_type
            .iter()
            .map(|(t, s)| (t.as_str(), s))
            .chain(std::iter::once(("micro", &self.micro)));
        for (name, s) in rows {
            out.push_str(&format!(
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>7}\n",
                name, s.precision, s.recall, s.f1, s.tp, s.fp, s.fn_
            ));
        }
        out
    }
}

#[derive(Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

/// Scores predicted spans against gold spans, sentence by sentence.
pub fn score_spans<G, P>(pairs: impl IntoIterator<Item = (G, P)>) -> EvalReport
where
    G: AsRef<[EntitySpan]>,
    P: AsRef<[EntitySpan]>,
{
    let mut by_type: BTreeMap<String, Counts> = BTreeMap::new();
    let mut sentences = 0;
    for (gold, pred) in pairs {
        sentences += 1;
        // Multiset of gold (start, end, type); each gold span absorbs at most
        // one prediction.
        let mut open: HashMap<(usize, usize, &str), usize> = HashMap::new();
        for g in gold.as_ref() {
            *open.entry((g.start, g.end, g.etype.as_str())).or_default() += 1;
            by_type.entry(g.etype.clone()).or_default().fn_ += 1;
        }
        for p in pred.as_ref() {
            let c = by_type.entry(p.etype.clone()).or_default();
            match open.get_mut(&(p.start, p.end, p.etype.as_str())) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    c.tp += 1;
                    c.fn_ -= 1;
                }
                _ => c.fp += 1,
            }
        }
    }
    let per_type: BTreeMap<String, Scores> = by_type
        .iter()
        .map(|(t, c)| (t.clone(), Scores::from_counts(c.tp, c.fp, c.fn_)))
        .collect();
    let (tp, fp, fn_) = by_type
        .values()
        .fold((0, 0, 0), |(a, b, c), k| (a + k.tp, b + k.fp, c + k.fn_));
    EvalReport {
        micro: Scores::from_counts(tp, fp, fn_),
        per_type,
        sentences,
    }
}

/// Predicted spans of one sentence. Decoded tags go through the lenient span
/// decoder, which applies the same repair as corpus loading.
pub fn predict_spans(
    model: &CrfModel,
    featurizer: &Featurizer,
    sentence: &Sentence,
    mask: Option<&LexemeMask>,
) -> Result<Vec<EntitySpan>, TaggerError> {
    let tags = model.tag(featurizer, &sentence.chars, mask)?;
    Ok(decode_spans(&sentence.chars, &tags))
}

/// Decodes `split` and scores it. The mask, if any, applies to matching
/// during this evaluation only.
pub fn evaluate(
    model: &CrfModel,
    split: &[Sentence],
    featurizer: &Featurizer,
    mask: Option<&LexemeMask>,
) -> Result<EvalReport, TaggerError> {
    let pairs = split
        .iter()
        .map(|s| Ok((s.spans(), predict_spans(model, featurizer, s, mask)?)))
        .collect::<Result<Vec<_>, TaggerError>>()?;
    Ok(score_spans(pairs))
}
