mod common;

use std::collections::BTreeMap;
use std::fs;
use std::sync::Arc;

use common::{fixtures, toy};
use gazlab::analysis::{self, compute_sets, AnalysisError, MaskedSet};
use gazlab::config::ExperimentConfig;
use gazlab::corpus::{load_dataset, CorpusError, Dataset, Scheme};
use gazlab::evaluation::{evaluate, score_spans};
use gazlab::features::{
    bmes_sets, lexeme_frequency, pool_embeddings, BmesSets, FeatureMode, Featurizer,
    FrequencyTable, GazetteerVectors, TokenSets,
};
use gazlab::gazetteer::{load_gazetteer, Gazetteer};
use gazlab::matcher::LexemeMatcher;
use gazlab::pipeline::{self, PipelineConfig};
use gazlab::tagger::TrainConfig;
use proptest::prelude::*;

fn toy_config() -> ExperimentConfig {
    std::env::remove_var("GAZLAB_SEED");
    ExperimentConfig::load(&toy().join("config.json")).unwrap()
}

fn toy_dataset() -> Dataset {
    toy_config().load_dataset().unwrap()
}

fn toy_gazetteer() -> Gazetteer {
    toy_config().load_gazetteer().unwrap()
}

fn pc(mode: FeatureMode, epochs: usize) -> PipelineConfig {
    PipelineConfig::new(
        mode,
        7,
        TrainConfig {
            epochs,
            ..TrainConfig::default()
        },
    )
}

#[test]
fn fixture_dataset_matches_manifest() {
    let d = toy_dataset();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(toy().join("manifest.json")).unwrap()).unwrap();
    let spans = |s: &[gazlab::corpus::Sentence]| s.iter().map(|x| x.spans().len()).sum::<usize>();
    assert_eq!(d.train.len(), 3);
    assert_eq!(d.dev.len(), 1);
    assert_eq!(d.test.len(), 1);
    assert_eq!(
        spans(&d.train) as u64,
        manifest["spans"]["train"].as_u64().unwrap()
    );
    assert_eq!(
        spans(&d.dev) as u64,
        manifest["spans"]["dev"].as_u64().unwrap()
    );
    assert_eq!(
        spans(&d.test) as u64,
        manifest["spans"]["test"].as_u64().unwrap()
    );
    assert_eq!(
        d.warnings.total_repairs() as u64,
        manifest["repaired_tags"].as_u64().unwrap()
    );
    // The dangling I-PER on the dev sentence is repaired into a PER span.
    assert_eq!(d.dev[0].spans()[0].surface, "李四");
}

#[test]
fn empty_test_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "\n\n").unwrap();
    let err = load_dataset(
        "t",
        &toy().join("train.txt"),
        &toy().join("dev.txt"),
        &empty,
        Scheme::Bio,
    )
    .unwrap_err();
    assert!(matches!(err, CorpusError::EmptySplit("test")));
    assert_eq!(err.to_string(), "empty split: test");
}

#[test]
fn four_lexeme_fixture_gazetteer() {
    let g = load_gazetteer("four", &fixtures().join("lexicon4.txt"), None, 50).unwrap();
    let s = g.stats();
    assert_eq!((s.num, s.dim, s.pretrained), (4, 50, false));
}

#[test]
fn lexeme_frequency_on_fixture() {
    let d = toy_dataset();
    let g = toy_gazetteer();
    let m = LexemeMatcher::new(&g).unwrap();
    let freq = lexeme_frequency(&m, &d.train);
    // Hand count over the three training sentences.
    let expected = [
        ("南京", 2),
        ("南京市", 1),
        ("市长", 1),
        ("长江", 2),
        ("长江大桥", 1),
        ("李四", 0),
    ];
    for (lex, n) in expected {
        assert_eq!(freq.get(g.id(lex).unwrap()), n, "{lex}");
    }
    // Masking only touches test-time matching.
    let f = Featurizer::new(Arc::new(g.clone()), FeatureMode::GazDense, &d.train, 1).unwrap();
    let mask = f.mask(["南京"]);
    f.featurize(&d.test[0].chars, Some(&mask)).unwrap();
    assert_eq!(f.frequencies(), &freq);
}

#[test]
fn baseline_features_ignore_the_gazetteer() {
    let d = toy_dataset();
    let a = Featurizer::new(
        Arc::new(toy_gazetteer()),
        FeatureMode::Baseline,
        &d.train,
        1,
    )
    .unwrap();
    let other = load_gazetteer("four", &fixtures().join("lexicon4.txt"), None, 50).unwrap();
    let b = Featurizer::new(Arc::new(other), FeatureMode::Baseline, &d.train, 1).unwrap();
    for s in d.all_sentences() {
        let fa = a.featurize(&s.chars, None).unwrap();
        assert_eq!(fa, b.featurize(&s.chars, None).unwrap());
        assert!(fa.discrete.iter().flatten().all(|f| !f.starts_with("gaz.")));
        assert!(fa.dense.is_none());
    }
}

#[test]
fn bmes_example_from_abc() {
    let m = LexemeMatcher::from_lexemes(&["abc", "bc"]).unwrap();
    let chars: Vec<char> = "abc".chars().collect();
    let sets = bmes_sets(3, &m.match_all(&chars, None)).unwrap();
    let (abc, bc) = (0, 1);
    assert_eq!(
        sets.tokens[0],
        TokenSets {
            b: vec![abc],
            ..Default::default()
        }
    );
    assert_eq!(
        sets.tokens[1],
        TokenSets {
            b: vec![bc],
            m: vec![abc],
            ..Default::default()
        }
    );
    assert_eq!(
        sets.tokens[2],
        TokenSets {
            e: vec![abc, bc],
            ..Default::default()
        }
    );
}

proptest! {
    #[test]
    fn bmes_membership_is_conserved(
        lexicon in prop::collection::btree_set("[a-d]{1,4}", 1..12),
        text in "[a-d]{1,24}",
    ) {
        let lexicon: Vec<String> = lexicon.into_iter().collect();
        let m = LexemeMatcher::from_lexemes(&lexicon).unwrap();
        let chars: Vec<char> = text.chars().collect();
        let matches = m.match_all(&chars, None);
        let sets = bmes_sets(chars.len(), &matches).unwrap();
        let expected: usize = matches.iter().map(|s| s.end - s.start).sum();
        prop_assert_eq!(sets.membership(), expected);
    }

    #[test]
    fn pooling_ignores_member_order(
        ids in prop::collection::vec(0u32..6, 0..10),
        counts in prop::collection::vec(0u64..5, 6),
        seed in any::<u64>(),
    ) {
        let g = Gazetteer::from_lexemes("g", ["a", "b", "c", "d", "e", "f"], 3).unwrap();
        let v = GazetteerVectors { gazetteer: &g, seed };
        let freq = FrequencyTable::from_counts(counts);
        let tok = |ids: Vec<u32>| BmesSets {
            tokens: vec![TokenSets { b: ids.clone(), m: ids.clone(), e: vec![], s: ids }],
        };
        let mut rev = ids.clone();
        rev.reverse();
        let a = pool_embeddings(&tok(ids), &freq, &v).unwrap();
        let b = pool_embeddings(&tok(rev), &freq, &v).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn fixture_set_identities_hold() {
    let d = toy_dataset();
    let toy_g = toy_gazetteer();
    let gazetteers = vec![
        toy_g.clone(),
        load_gazetteer("four", &fixtures().join("lexicon4.txt"), None, 50).unwrap(),
        toy_g.subsample(0.5, 3).unwrap(),
    ];
    for g in &gazetteers {
        let sets = compute_sets(&LexemeMatcher::new(g).unwrap(), &d);
        assert!(sets.identity_violations().is_empty(), "{}", g.name());
    }
    let c = compute_sets(&LexemeMatcher::new(&toy_g).unwrap(), &d).counts();
    assert_eq!((c.i, c.s, c.e, c.n), (3, 1, 3, 1));
}

#[test]
fn empty_mask_is_neutral_and_model_is_untouched() {
    let d = toy_dataset();
    let run = pipeline::run(
        &d,
        Arc::new(toy_gazetteer()),
        &pc(FeatureMode::GazDense, 10),
    )
    .unwrap();
    let before = run.model.clone();
    let none: [&str; 0] = [];
    let masked = analysis::masked_f1(&run.model, &d.test, &run.featurizer, none).unwrap();
    assert_eq!(masked.to_bits(), run.test.f1().to_bits());
    let empty = run.featurizer.mask(none);
    let r = evaluate(&run.model, &d.test, &run.featurizer, Some(&empty)).unwrap();
    assert_eq!(r, run.test);

    let sets = compute_sets(run.featurizer.matcher(), &d);
    let report =
        analysis::causal_effects(&run.model, &d.test, &run.featurizer, &sets, "toy").unwrap();
    assert_eq!(run.model, before);
    assert_eq!(report.base_f1.to_bits(), run.test.f1().to_bits());
    assert_eq!(report.sizes, sets.counts());
    let order: Vec<MaskedSet> = report.rows.iter().map(|r| r.masked_set).collect();
    assert_eq!(order, MaskedSet::ALL);
}

#[test]
fn masking_all_of_b_equals_gazetteer_blind_test_features() {
    let d = toy_dataset();
    let run = pipeline::run(
        &d,
        Arc::new(toy_gazetteer()),
        &pc(FeatureMode::GazDense, 10),
    )
    .unwrap();
    let sets = compute_sets(run.featurizer.matcher(), &d);
    let masked = analysis::masked_f1(&run.model, &d.test, &run.featurizer, &sets.b).unwrap();
    // Oracle: featurize the test split with no matches at all.
    let pairs = d.test.iter().map(|s| {
        let feats = run.featurizer.featurize_matches(&s.chars, &[]).unwrap();
        let tags = run.model.decode(&run.model.encode(&feats).unwrap());
        (s.spans(), gazlab::corpus::decode_spans(&s.chars, &tags))
    });
    assert_eq!(masked.to_bits(), score_spans(pairs).f1().to_bits());
}

#[test]
fn mismatched_sets_are_rejected() {
    let d = toy_dataset();
    let run = pipeline::run(
        &d,
        Arc::new(toy_gazetteer()),
        &pc(FeatureMode::GazDiscrete, 2),
    )
    .unwrap();
    let other = load_gazetteer("four", &fixtures().join("lexicon4.txt"), None, 50).unwrap();
    let sets = compute_sets(&LexemeMatcher::new(&other).unwrap(), &d);
    assert!(matches!(
        analysis::causal_effects(&run.model, &d.test, &run.featurizer, &sets, "toy"),
        Err(AnalysisError::FingerprintMismatch { .. })
    ));
}

#[test]
fn size_ablation_identity_and_determinism() {
    let d = toy_dataset();
    let g = toy_gazetteer();
    let config = pc(FeatureMode::GazDense, 5);
    let full = pipeline::run(&d, Arc::new(g.clone()), &config).unwrap();
    let one = analysis::size_ablation(&d, &g, &[1.0], &config).unwrap();
    assert_eq!(one.points.len(), 1);
    assert_eq!(one.points[0].f1.to_bits(), full.test.f1().to_bits());
    assert_eq!(one.points[0].fingerprint, full.fingerprint);

    let fractions = [0.2, 0.4, 0.6, 0.8, 1.0];
    let a = analysis::size_ablation(&d, &g, &fractions, &config).unwrap();
    let b = analysis::size_ablation(&d, &g, &fractions, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.points.len(), 5);
    let sizes: Vec<usize> = a.points.iter().map(|p| p.num_lexemes).collect();
    assert_eq!(sizes, [1, 2, 4, 5, 6]);
    let csv = analysis::render_report(&a, analysis::ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let json = analysis::render_report(&a, analysis::ReportFormat::Json).unwrap();
    let back: analysis::AblationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a);
}

#[test]
fn tiny_fractions_are_skipped() {
    let d = toy_dataset();
    let g = toy_gazetteer();
    let r =
        analysis::size_ablation(&d, &g, &[0.05, 1.0], &pc(FeatureMode::GazDiscrete, 2)).unwrap();
    assert_eq!(r.points.len(), 1);
    assert_eq!(r.skipped.len(), 1);
    assert_eq!(r.skipped[0].0, "0.05");
}

#[test]
fn embedding_ablation_is_deterministic_and_needs_vectors() {
    let d = toy_dataset();
    let g = toy_gazetteer();
    let config = pc(FeatureMode::GazDense, 5);
    let a = analysis::embedding_ablation(&d, &g, &config).unwrap();
    let b = analysis::embedding_ablation(&d, &g, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.delta, Some(a.points[1].f1 - a.points[0].f1));
    assert!(matches!(
        analysis::embedding_ablation(&d, &g.strip_embeddings(), &config),
        Err(AnalysisError::NotPretrained(_))
    ));
}

#[test]
fn dense_parameter_count_grows_with_dim() {
    let d = toy_dataset();
    let lexemes = toy_gazetteer().lexemes().to_vec();
    let count = |dim: usize| {
        let g = Gazetteer::from_lexemes("g", lexemes.clone(), dim).unwrap();
        let r = pipeline::run(&d, Arc::new(g), &pc(FeatureMode::GazDense, 1)).unwrap();
        r.model.count_parameters()
    };
    assert!(count(300) > count(50));
}

#[test]
fn per_type_reports_cover_gold_types() {
    let d = toy_dataset();
    let run = pipeline::run(
        &d,
        Arc::new(toy_gazetteer()),
        &pc(FeatureMode::GazDense, 30),
    )
    .unwrap();
    let types: BTreeMap<_, _> = run
        .test
        .per_type
        .iter()
        .map(|(k, v)| (k.clone(), v.tp + v.fn_))
        .collect();
    assert_eq!(types.get("PER"), Some(&1));
    assert_eq!(types.get("LOC"), Some(&1));
    assert_eq!(run.test.micro.tp + run.test.micro.fn_, 2);
}
