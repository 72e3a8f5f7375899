//! Hand-computed fixtures for the metric, relevancy, generation and
//! evaluation layers.

mod common;

use std::sync::Arc;

use common::*;
use nlidiv_core::corpus::{DatasetBundle, DatasetItem, DatasetKind, ResponseSet, ResponseSource};
use nlidiv_core::eval::{bootstrap_ci, correlate_metric, spearman_rho, BootstrapConfig, Target};
use nlidiv_core::generation::{
    beam_mode_run, least_contributing_index, percent_increase, run_corpus, run_threshold_generation, ThresholdSpec,
};
use nlidiv_core::metrics::{cosine, embedding_diversity, Metric, MetricEvaluator, SetMetric};
use nlidiv_core::nli::{
    token_overlap_f1, CachedNli, Embedder, MockEmbedder, MockNli, MockPoolSampler, MockScorer, NliCache, NliLabel,
    PairScorer, ResponseSampler,
};
use nlidiv_core::relevancy::{bleu_multi_ref, modified_precisions, set_relevancy, Phase};
use nlidiv_core::{Error, Execution};

const EPS: f64 = 1e-12;

#[test]
fn mock_embedder_cosine_follows_hash_rule() {
    // token -> slot for dim 16, from sha256("embed" 0x1f token)[..8] mod 16
    let slots = [
        ("the", 15),
        ("cat", 15),
        ("sat", 3),
        ("on", 6),
        ("mat", 9),
        ("dog", 2),
        ("a", 11),
        ("log", 8),
    ];
    let e = MockEmbedder::new(16);
    for (tok, slot) in slots {
        assert_eq!(e.token_index(tok), slot, "{tok}");
    }
    let mut a = [0.0f64; 16];
    for t in ["the", "cat", "sat", "on", "the", "mat"] {
        a[slots.iter().find(|s| s.0 == t).unwrap().1] += 1.0;
    }
    let mut b = [0.0f64; 16];
    for t in ["the", "dog", "sat", "on", "a", "log"] {
        b[slots.iter().find(|s| s.0 == t).unwrap().1] += 1.0;
    }
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let expected = dot / (norm(&a) * norm(&b));
    assert!((expected - 5.0 / 72f64.sqrt()).abs() < EPS);

    let v = e
        .embed(&strings(&["The cat sat on the mat", "the dog sat on a log"]))
        .unwrap();
    assert!((cosine(&v[0], &v[1]) - expected).abs() < EPS);
    let div = embedding_diversity(&strings(&["The cat sat on the mat", "the dog sat on a log"]), &e).unwrap();
    assert!((div + expected).abs() < EPS);
}

#[test]
fn overlap_proxy_fixture() {
    // overlap {the, cat} = 2; precision 2/3, recall 2/4
    let (p, r): (f64, f64) = (2.0 / 3.0, 2.0 / 4.0);
    let f1 = 2.0 * p * r / (p + r);
    assert!((f1 - 4.0 / 7.0).abs() < EPS);
    assert!((token_overlap_f1("the cat sat", "The cat ran away") - f1).abs() < EPS);
    let scorer = MockScorer::new();
    let best = scorer
        .bertscore("the cat sat", &strings(&["nothing here", "The cat ran away"]))
        .unwrap();
    assert!((best - f1).abs() < EPS);
}

#[test]
fn bleu_fixture() {
    let refs = strings(&["a b c d f", "a b x y z"]);
    // clipped matches per order: {a,b,c,d}/5, {ab,bc,cd}/4, {abc,bcd}/3, {abcd}/2
    let precisions = [4.0 / 5.0, 3.0 / 4.0, 2.0 / 3.0, 1.0 / 2.0];
    let got = modified_precisions("a b c d e", &refs).unwrap();
    for (g, p) in got.iter().zip(precisions) {
        assert!((g.unwrap() - p).abs() < EPS);
    }
    // both references have the candidate's length, so no brevity penalty
    let expected = (precisions.iter().map(|p: &f64| p.ln()).sum::<f64>() / 4.0).exp();
    assert!((expected - 0.2f64.powf(0.25)).abs() < EPS);
    let b = bleu_multi_ref("a b c d e", &refs).unwrap();
    assert!((b.value - expected).abs() < EPS, "{}", b.value);
}

#[test]
fn set_relevancy_fixture_and_delta() {
    let refs = strings(&["a b c d f", "a b x y z", "q", "r", "s"]);
    let bleu_e = 0.2f64.powf(0.25);
    let start = set_relevancy(
        "c",
        Phase::Starting,
        &strings(&["a b c d e", "a b c d f"]),
        &refs,
        &MockScorer::new(),
    )
    .unwrap();
    assert!((start.bleu - (bleu_e + 1.0) / 2.0).abs() < EPS);
    // F1 of "a b c d e" vs "a b c d f" is 4/5, the second response is exact
    assert!((start.bertscore - (0.8 + 1.0) / 2.0).abs() < EPS);

    // swap the exact response for a disjoint one
    let end = set_relevancy(
        "c",
        Phase::Ending,
        &strings(&["a b c d e", "m n o p"]),
        &refs,
        &MockScorer::new(),
    )
    .unwrap();
    let disjoint = bleu_multi_ref("m n o p", &refs).unwrap().value;
    assert!((end.bleu - (bleu_e + disjoint) / 2.0).abs() < EPS);
    assert!((end.bertscore - 0.4).abs() < EPS);
    assert!(((end.bertscore - start.bertscore) - (-0.5)).abs() < EPS);
}

fn exhaustive_argmax(names: &[String], eval: &dyn SetMetric) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..names.len() {
        let subset: Vec<String> = names
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != i)
            .map(|(_, s)| s.clone())
            .collect();
        let v = eval.score(&subset).unwrap().value;
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[test]
fn least_contributing_unique_max_fixture() {
    // r2 entails every other response in both directions: dropping it
    // removes 6 entailments, dropping anything else removes at most 2
    let mut mock = MockNli::new("mock");
    for other in ["r0", "r1", "r3"] {
        mock = mock.with_symmetric("r2", other, NliLabel::Entailment, 0.9);
    }
    let eval = MetricEvaluator::nli(Metric::BaselineNli, Arc::new(mock)).unwrap();
    let names = strings(&["r0", "r1", "r2", "r3"]);
    let subset_scores: Vec<f64> = eval.leave_one_out(&names).unwrap().iter().map(|s| s.value).collect();
    assert_eq!(subset_scores, vec![-4.0, -4.0, 0.0, -4.0]);
    assert_eq!(exhaustive_argmax(&names, &eval), 2);
    assert_eq!(least_contributing_index(&names, &eval).unwrap(), 2);
}

#[test]
fn nine_contradictions_lifted_to_twelve() {
    let eval = MetricEvaluator::nli(Metric::BaselineNli, Arc::new(nine_to_twelve_table())).unwrap();
    let initial = strings(&["r0", "r1", "r2", "r3", "r4"]);
    let start = eval.score(&initial).unwrap();
    assert_eq!(start.counts.unwrap().contradiction, 9);
    assert_eq!(start.value, 9.0);

    let mut pool = initial.clone();
    pool.push("r*".into());
    let mut sampler = MockPoolSampler::in_order(pool);
    let spec = ThresholdSpec::nli_default();
    let t = run_threshold_generation(&conversation("c"), &mut sampler, &spec, &eval).unwrap();
    // r4 takes part in no contradiction, so it is evicted
    assert_eq!(t.steps.len(), 1);
    assert_eq!(t.steps[0].removed, "r4");
    assert_eq!(t.steps[0].removed_index, 4);
    assert_eq!(t.final_set, strings(&["r0", "r1", "r2", "r3", "r*"]));
    assert_eq!(t.num_sampled, 6);
    assert!(t.threshold_met);
    assert_eq!(t.overlap, 4);
    // 9 original pairs + r*->r0, r*->r1, r*->r2
    assert_eq!(t.ending_score, 12.0);
    assert_eq!(t.best_seen_score, 12.0);
}

#[test]
fn budget_exhaustion_with_neutral_table() {
    let eval = MetricEvaluator::nli(Metric::BaselineNli, Arc::new(MockNli::new("mock"))).unwrap();
    let pool: Vec<String> = (0..25).map(|i| format!("u{i}")).collect();
    let mut sampler = MockPoolSampler::in_order(pool);
    let t = run_threshold_generation(&conversation("c"), &mut sampler, &ThresholdSpec::nli_default(), &eval).unwrap();
    assert_eq!(t.num_sampled, 20);
    assert_eq!(t.steps.len(), 15);
    assert!(!t.threshold_met);
    assert!(!t.truncated);
    // every subset ties, index 0 is evicted each time: after 15 steps the
    // set is u15..u19
    assert_eq!(t.final_set, strings(&["u15", "u16", "u17", "u18", "u19"]));
    assert_eq!(t.overlap, 0);
    assert_eq!(t.ending_score, 0.0);
}

#[test]
fn incremental_nli_calls_per_resample() {
    let mock = MockNli::new("mock");
    let calls = mock.calls();
    let backend = CachedNli::new(mock, Arc::new(NliCache::in_memory()));
    let eval = MetricEvaluator::nli(Metric::BaselineNli, Arc::new(backend)).unwrap();
    let pool: Vec<String> = (0..8).map(|i| format!("u{i}")).collect();
    let mut sampler = MockPoolSampler::in_order(pool);
    let spec = ThresholdSpec {
        max_samples: 8,
        ..ThresholdSpec::nli_default()
    };
    let t = run_threshold_generation(&conversation("c"), &mut sampler, &spec, &eval).unwrap();
    assert_eq!(t.steps.len(), 3);
    // 20 for the initial set, then 2(n-1) = 8 per resample
    assert_eq!(calls.get(), 20 + 3 * 8);
}

#[test]
fn beam_single_swap() {
    let eval = MetricEvaluator::nli(Metric::BaselineNli, Arc::new(nine_to_twelve_table())).unwrap();
    let mut ranked = strings(&["r0", "r1", "r2", "r3", "r4", "r*"]);
    ranked.extend((7..=25).map(|i| format!("beam{i}")));
    assert_eq!(ranked.len(), 25);
    let t = beam_mode_run(&conversation("c"), ranked, &ThresholdSpec::nli_default(), &eval).unwrap();
    assert_eq!(t.initial_set, strings(&["r0", "r1", "r2", "r3", "r4"]));
    assert_eq!(t.num_sampled, 6);
    assert_eq!(t.steps[0].replacement, "r*");
    assert!(t.threshold_met);
}

#[test]
fn beam_top_five_already_satisfy() {
    let mut mock = MockNli::new("mock");
    let top: Vec<String> = (1..=5).map(|i| format!("b{i}")).collect();
    for a in &top {
        for b in &top {
            if a != b {
                mock = mock.with(a, b, NliLabel::Contradiction, 0.8);
            }
        }
    }
    let eval = MetricEvaluator::nli(Metric::BaselineNli, Arc::new(mock)).unwrap();
    let ranked: Vec<String> = (1..=25).map(|i| format!("b{i}")).collect();
    let t = beam_mode_run(&conversation("c"), ranked, &ThresholdSpec::nli_default(), &eval).unwrap();
    assert_eq!(t.final_set, top);
    assert_eq!(t.num_sampled, 5);
}

#[test]
fn beam_never_satisfied_stops_at_budget() {
    let eval = MetricEvaluator::nli(Metric::BaselineNli, Arc::new(MockNli::new("mock"))).unwrap();
    let ranked: Vec<String> = (1..=25).map(|i| format!("b{i}")).collect();
    let t = beam_mode_run(&conversation("c"), ranked, &ThresholdSpec::nli_default(), &eval).unwrap();
    assert_eq!(t.num_sampled, 20);
    assert!(!t.threshold_met);
}

fn three_conversation_fixture() -> (DatasetBundle, MockNli) {
    // "sat": all 20 pairs contradict; "lift": the 9 -> 12 table; "flat": all neutral
    let mut mock = nine_to_twelve_table();
    let sat: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
    for a in &sat {
        for b in &sat {
            if a != b {
                mock = mock.with(a, b, NliLabel::Contradiction, 0.7);
            }
        }
    }
    let items = ["sat", "lift", "flat"]
        .iter()
        .map(|id| DatasetItem {
            conversation: conversation(id),
            response_sets: vec![],
        })
        .collect();
    (
        DatasetBundle {
            name: "fixture".into(),
            kind: DatasetKind::GenerationContext,
            items,
        },
        mock,
    )
}

fn fixture_pool(id: &str) -> Vec<String> {
    match id {
        "sat" => (0..5).map(|i| format!("s{i}")).collect(),
        "lift" => strings(&["r0", "r1", "r2", "r3", "r4", "r*"]),
        _ => (0..25).map(|i| format!("f{i}")).collect(),
    }
}

#[test]
fn corpus_summary_equals_hand_averages() {
    let (dataset, mock) = three_conversation_fixture();
    let eval = MetricEvaluator::nli(Metric::BaselineNli, Arc::new(mock)).unwrap();
    let factory =
        |c: &nlidiv_core::corpus::Conversation, _seed: u64| -> nlidiv_core::Result<Box<dyn ResponseSampler>> {
            Ok(Box::new(MockPoolSampler::in_order(fixture_pool(&c.id))))
        };
    let spec = ThresholdSpec {
        trials: 2,
        ..ThresholdSpec::nli_default()
    };
    let run = run_corpus(&dataset, &factory, &spec, &eval, 7, Execution::Parallel).unwrap();
    assert_eq!(run.traces.len(), 6);
    assert!(run.failures.is_empty());
    let s = &run.summary;
    // per trace (start, end, sampled, overlap):
    //   sat (20, 20, 5, 5), lift (9, 12, 6, 4), flat (0, 0, 20, 0)
    assert!((s.mean_starting - 29.0 / 3.0).abs() < EPS);
    assert!((s.mean_ending - 32.0 / 3.0).abs() < EPS);
    assert!((s.mean_num_sampled - 31.0 / 3.0).abs() < EPS);
    assert!((s.mean_overlap - 3.0).abs() < EPS);
    assert!((s.threshold_met_rate - 2.0 / 3.0).abs() < EPS);
    assert!((s.percent_increase.unwrap() - 300.0 / 29.0).abs() < 1e-9);
    assert_eq!(percent_increase(29.0 / 3.0, 32.0 / 3.0), s.percent_increase);
}

#[test]
fn corpus_isolates_failures() {
    let (dataset, mock) = three_conversation_fixture();
    let eval = MetricEvaluator::nli(Metric::BaselineNli, Arc::new(mock)).unwrap();
    let factory =
        |c: &nlidiv_core::corpus::Conversation, _seed: u64| -> nlidiv_core::Result<Box<dyn ResponseSampler>> {
            if c.id == "flat" {
                return Err(Error::Backend {
                    endpoint: "http://sidecar".into(),
                    attempts: 3,
                    retryable: true,
                    message: "down".into(),
                });
            }
            Ok(Box::new(MockPoolSampler::in_order(fixture_pool(&c.id))))
        };
    let spec = ThresholdSpec {
        trials: 1,
        ..ThresholdSpec::nli_default()
    };
    let run = run_corpus(&dataset, &factory, &spec, &eval, 7, Execution::Sequential).unwrap();
    assert_eq!(run.traces.len(), 2);
    assert_eq!(run.failures.len(), 1);
    assert_eq!(run.failures[0].conversation_id, "flat");
    assert_eq!(run.summary.failed, 1);
    assert!((run.summary.mean_starting - 29.0 / 2.0).abs() < EPS);
}

#[test]
fn corpus_is_deterministic_across_modes_and_runs() {
    let (dataset, mock) = three_conversation_fixture();
    let eval = MetricEvaluator::nli(Metric::BaselineNli, Arc::new(mock)).unwrap();
    let factory = |c: &nlidiv_core::corpus::Conversation, seed: u64| -> nlidiv_core::Result<Box<dyn ResponseSampler>> {
        Ok(Box::new(MockPoolSampler::new(fixture_pool(&c.id), seed)))
    };
    let spec = ThresholdSpec {
        trials: 3,
        ..ThresholdSpec::nli_default()
    };
    let a = run_corpus(&dataset, &factory, &spec, &eval, 11, Execution::Parallel).unwrap();
    let b = run_corpus(&dataset, &factory, &spec, &eval, 11, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    let seeds: std::collections::BTreeSet<u64> = a.traces.iter().map(|t| t.seed).collect();
    assert_eq!(seeds.len(), 9);
}

#[test]
fn spearman_six_item_fixture() {
    let x = [0.1, 0.4, 0.4, 0.9, 0.2, 0.7];
    let y = [1.0, 2.0, 3.0, 5.0, 1.0, 4.0];
    // ranks x: 1, 3.5, 3.5, 6, 2, 5; ranks y: 1.5, 3, 4, 6, 1.5, 5
    let rho = spearman_rho(&x, &y).unwrap();
    assert!((rho - 33.0 / 34.0).abs() < EPS, "{rho}");
    assert!((brute_spearman(&x, &y) - 33.0 / 34.0).abs() < EPS);
}

#[test]
fn correlate_metric_over_dataset() {
    // distinct-1 of each set against a hand-assigned parameter
    let sets = [
        (vec!["a a", "a a"], 0.0),
        (vec!["a b", "a a"], 1.0),
        (vec!["a b", "c d"], 1.0),
        (vec!["x", "x"], 0.0),
    ];
    let items = sets
        .iter()
        .enumerate()
        .map(|(i, (rs, p))| DatasetItem {
            conversation: conversation(&format!("c{i}")),
            response_sets: vec![ResponseSet {
                diversity_parameter: Some(*p),
                ..ResponseSet::new(format!("c{i}"), ResponseSource::Human, strings(rs))
            }],
        })
        .collect();
    let dataset = DatasetBundle {
        name: "tiny".into(),
        kind: DatasetKind::DiversityEval,
        items,
    };
    let eval = MetricEvaluator::distinct(vec![1]);
    let (report, scored) = correlate_metric(&dataset, &eval, Target::DiversityParameter, Execution::Parallel).unwrap();
    // distinct-1: 1/4, 2/4, 4/4, 1/2
    assert_eq!(scored.scores, vec![0.25, 0.5, 1.0, 0.5]);
    assert!((report.rho - brute_spearman(&scored.scores, &scored.targets)).abs() < EPS);
    assert_eq!(report.n_items, 4);

    // nothing carries a human rating
    assert!(matches!(
        correlate_metric(&dataset, &eval, Target::HumanRating, Execution::Parallel),
        Err(Error::UndefinedCorrelation(_))
    ));
}

#[test]
fn bootstrap_is_seed_deterministic() {
    let xs: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64).collect();
    let ys: Vec<f64> = (0..60).map(|i| ((i * 17) % 7) as f64 + (i % 3) as f64).collect();
    let cfg = BootstrapConfig {
        seed: 42,
        ..Default::default()
    };
    let a = bootstrap_ci(&xs, &ys, &cfg, Execution::Parallel).unwrap();
    let b = bootstrap_ci(&xs, &ys, &cfg, Execution::Sequential).unwrap();
    assert_eq!((a.low, a.high), (b.low, b.high));
    assert_eq!(a.rhos, b.rhos);
    assert!(a.low <= a.high);
    let c = bootstrap_ci(&xs, &ys, &BootstrapConfig { seed: 43, ..cfg }, Execution::Parallel).unwrap();
    assert_ne!(a.rhos, c.rhos);
}
