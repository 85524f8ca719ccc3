use std::collections::BTreeSet;
use std::sync::OnceLock;

use serde_json::json;

use super::*;
use crate::corpus::{generate_corpus, CorpusConfig, TEST_FILE, TRAIN_FILE, USERS_FILE};
use crate::plan::{apply_patch, rag_plan, train_plan, OperatorNode, PlanPatch};
use crate::relation::Column;

fn data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| Dataset::from_bundle(&generate_corpus(&CorpusConfig::default()).unwrap()))
}

fn rag_run() -> &'static RunResult {
    static RUN: OnceLock<RunResult> = OnceLock::new();
    RUN.get_or_init(|| execute(&rag_plan(), data(), LatencyConfig::default()).unwrap())
}

/// Train posts whose author lives in US or CAN, counted straight from the
/// source tables.
fn filtered_train_rows() -> usize {
    let users = data().table(USERS_FILE, "user_id").unwrap();
    let countries = users.str_column("country").unwrap();
    let kept: BTreeSet<&String> = users
        .str_column("user_id")
        .unwrap()
        .iter()
        .zip(countries)
        .filter(|(_, c)| *c == "US" || *c == "CAN")
        .map(|(u, _)| u)
        .collect();
    let posts = data().table(TRAIN_FILE, "post_id").unwrap();
    posts.str_column("user_id").unwrap().iter().filter(|u| kept.contains(u)).count()
}

#[test]
fn cold_rag_run_invocation_counts() {
    let run = rag_run();
    let n_test = data().table(TEST_FILE, "post_id").unwrap().len();
    assert_eq!(run.invocations.count(CallKind::Embed), filtered_train_rows() + n_test);
    assert_eq!(run.invocations.count(CallKind::LlmInfer), n_test);
    assert_eq!(run.invocations.count(CallKind::Translate), 0);
    assert_eq!(run.invocations.count(CallKind::MlpTrain), 0);
}

#[test]
fn warm_rerun_is_free_and_identical() {
    let prior = rag_run();
    let warm = execute_with(
        &rag_plan(),
        data(),
        &ExecOptions {
            sources: &[prior],
            ..ExecOptions::default()
        },
    )
    .unwrap();
    assert!(warm.invocations.is_empty());
    assert!(warm.same_results(prior));
    assert!(warm.stats.values().all(|s| s.cache_hit));
}

#[test]
fn baseline_accuracy_is_strictly_between_zero_and_one() {
    let acc = rag_run().accuracy();
    assert!(acc > 0.0 && acc < 1.0, "{acc}");
    let score = rag_run().score().unwrap();
    assert_eq!(score.accuracy().to_bits(), acc.to_bits());
}

#[test]
fn invocation_log_is_sorted_and_latency_adds_up() {
    let log = &rag_run().invocations;
    let keys: Vec<_> = log.records().iter().map(|r| (&r.node, &r.row)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let lat = LatencyConfig::default();
    let expected: u64 = CallKind::ALL.iter().map(|&k| lat.delay_ms(k) * log.count(k) as u64).sum();
    assert_eq!(log.total_latency_ms(), expected);
}

#[test]
fn filter_keeps_only_listed_countries() {
    let rel = rag_run().relation("filter_countries").unwrap();
    assert!(rel.str_column("country").unwrap().iter().all(|c| c == "US" || c == "CAN"));
    assert!(!rel.is_empty());
}

#[test]
fn rag_lineage_holds_self_and_k_neighbours() {
    let run = rag_run();
    let lineage = run.lineage("rag_chain").unwrap();
    let store = run.store("vector_store").unwrap();
    let k = 5.min(store.len());
    for (row, per_input) in &lineage.rows {
        assert_eq!(per_input[0], vec![row.clone()]);
        assert_eq!(per_input[1].len(), k);
        assert!(per_input[1].iter().all(|r| store.position(r).is_some()));
    }
}

#[test]
fn rag_prediction_is_majority_of_retrieved_labels() {
    let run = rag_run();
    let store = run.store("vector_store").unwrap();
    let out = run.relation("rag_chain").unwrap();
    let preds = out.column("prediction").unwrap().as_int().unwrap();
    let lineage = run.lineage("rag_chain").unwrap();
    for (i, id) in out.row_ids().iter().enumerate() {
        let labels: Vec<u8> = lineage
            .from_input(id, 1)
            .iter()
            .map(|r| store.label(store.position(r).unwrap()))
            .collect();
        let ones = labels.iter().filter(|&&l| l == 1).count();
        let expected = if 2 * ones == labels.len() { labels[0] } else { u8::from(2 * ones > labels.len()) };
        assert_eq!(preds[i], i64::from(expected), "{id}");
    }
}

/// Re-executing a row-preserving or join operator on only the lineage rows
/// of an output row reproduces that row.
#[test]
fn lineage_rows_reproduce_outputs() {
    let run = rag_run();
    let plan = &run.plan;
    for id in ["filter_countries", "join_posts", "weak_label", "binarize"] {
        let node = plan.node(id).unwrap();
        let out = run.relation(id).unwrap();
        let lineage = run.lineage(id).unwrap();
        for (i, row) in out.row_ids().iter().enumerate().step_by(37) {
            let inputs: Vec<Arc<Artifact>> = node
                .inputs
                .iter()
                .enumerate()
                .map(|(p, input)| {
                    let rel = run.relation(input).unwrap();
                    let idx: Vec<usize> = lineage
                        .from_input(row, p)
                        .iter()
                        .map(|r| rel.position(r).unwrap())
                        .collect();
                    Arc::new(Artifact::Relation(rel.take(&idx)))
                })
                .collect();
            let mut calls = ops::Calls::new(id, LatencyConfig::default(), None);
            let (artifact, _, _) = ops::evaluate(node, &inputs, &[], data(), &mut calls).unwrap();
            let small = artifact.as_relation().unwrap();
            let j = small.position(row).unwrap();
            assert!(small.row_eq(j, out, i), "{id} {row}");
        }
    }
}

#[test]
fn train_pipeline_trains_once() {
    let run = execute(&train_plan(), data(), LatencyConfig::default()).unwrap();
    assert_eq!(run.invocations.count(CallKind::MlpTrain), 1);
    assert_eq!(run.invocations.count(CallKind::LlmInfer), 0);
    let acc = run.accuracy();
    assert!(acc > 0.0 && acc < 1.0, "{acc}");
}

fn translated_plan() -> PipelinePlan {
    let node = OperatorNode::new(
        "translate",
        OperatorKind::Translate,
        json!({"text_column": "post_text", "languages": ["xx"]}),
        &[],
    );
    apply_patch(&rag_plan(), &PlanPatch::insert(node, "test_posts")).unwrap()
}

#[test]
fn translate_touches_only_listed_languages() {
    let run = execute(&translated_plan(), data(), LatencyConfig::default()).unwrap();
    let before = run.relation("test_posts").unwrap();
    let after = run.relation("translate").unwrap();
    let lang = before.str_column("language").unwrap();
    let (t0, t1) = (before.str_column("post_text").unwrap(), after.str_column("post_text").unwrap());
    let mut foreign = 0;
    for i in 0..before.len() {
        if lang[i] == "en" {
            assert_eq!(t0[i], t1[i]);
        } else {
            foreign += 1;
            assert_eq!(t1[i], data().lexicon().translate(&t0[i]));
            assert!(!data().lexicon().needs_spellcheck(&t1[i]));
        }
    }
    assert_eq!(run.invocations.count(CallKind::Translate), foreign);
}

#[test]
fn reuse_run_equals_cold_run_of_patched_plan() {
    let plan = translated_plan();
    let cold = execute(&plan, data(), LatencyConfig::default()).unwrap();
    let reused = execute_with(
        &plan,
        data(),
        &ExecOptions {
            sources: &[rag_run()],
            ..ExecOptions::default()
        },
    )
    .unwrap();
    assert!(reused.same_results(&cold));
    let foreign = cold.invocations.count(CallKind::Translate);
    assert_eq!(reused.invocations.count(CallKind::Translate), foreign);
    assert_eq!(reused.invocations.count(CallKind::Embed), foreign);
    assert_eq!(reused.invocations.count(CallKind::LlmInfer), foreign);
}

#[test]
fn join_without_matches_is_empty() {
    let plan = PipelinePlan::parse(
        &json!({
            "nodes": [
                {"id": "users", "kind": "csv_source", "params": {"path": "users.csv", "id_column": "user_id"}, "inputs": []},
                {"id": "none", "kind": "filter_in", "params": {"column": "country", "values": ["FR"]}, "inputs": ["users"]},
                {"id": "posts", "kind": "csv_source", "params": {"path": "test_posts.csv", "id_column": "post_id"}, "inputs": []},
                {"id": "joined", "kind": "join", "params": {"on": "user_id"}, "inputs": ["none", "posts"]},
                {"id": "bin", "kind": "label_binarize", "params": {"column": "signs_of_anhedonia", "positive_value": 1, "output_column": "y"}, "inputs": ["joined"]},
                {"id": "acc", "kind": "score_accuracy", "params": {"pred_column": "y", "true_column": "signs_of_anhedonia"}, "inputs": ["bin"]}
            ],
            "outputs": ["acc"]
        })
        .to_string(),
    )
    .unwrap();
    let run = execute(&plan, data(), LatencyConfig::default()).unwrap();
    assert!(run.relation("joined").unwrap().is_empty());
    assert_eq!(run.score().unwrap(), Score { correct: 0, total: 0 });
}

#[test]
fn predictions_equal_truth_give_accuracy_one() {
    let plan = PipelinePlan::parse(
        &json!({
            "nodes": [
                {"id": "posts", "kind": "csv_source", "params": {"path": "test_posts.csv", "id_column": "post_id"}, "inputs": []},
                {"id": "bin", "kind": "label_binarize", "params": {"column": "signs_of_anhedonia", "positive_value": 1, "output_column": "y"}, "inputs": ["posts"]},
                {"id": "acc", "kind": "score_accuracy", "params": {"pred_column": "y", "true_column": "signs_of_anhedonia"}, "inputs": ["bin"]}
            ],
            "outputs": ["acc"]
        })
        .to_string(),
    )
    .unwrap();
    let run = execute(&plan, data(), LatencyConfig::default()).unwrap();
    assert_eq!(run.accuracy(), 1.0);
}

#[test]
fn weak_label_overrides_take_precedence() {
    let run = rag_run();
    let rel = run.relation("weak_label").unwrap();
    let target = rel.row_ids()[0].clone();
    let current = rel.column("weak_label").unwrap().label(0).unwrap();
    let mut overrides = serde_json::Map::new();
    overrides.insert(target.to_string(), json!(1 - current));
    let plan = apply_patch(
        &rag_plan(),
        &PlanPatch::update("weak_label", "label_overrides", serde_json::Value::Object(overrides)),
    )
    .unwrap();
    let flipped = execute_with(
        &plan,
        data(),
        &ExecOptions {
            sources: &[run],
            ..ExecOptions::default()
        },
    )
    .unwrap();
    let rel2 = flipped.relation("weak_label").unwrap();
    let labels = rel2.column("weak_label").unwrap();
    assert_eq!(labels.label(0).unwrap(), 1 - current);
    for i in 1..rel2.len() {
        assert_eq!(labels.label(i), rel.column("weak_label").unwrap().label(i));
    }
    assert_eq!(flipped.invocations.count(CallKind::Embed), 0);
    let cold = execute(&plan, data(), LatencyConfig::default()).unwrap();
    assert!(flipped.same_results(&cold));
}

#[test]
fn empty_text_embeds_to_zero_vector() {
    let rel = Relation::new(
        vec!["t:1".into(), "t:2".into()],
        vec![("post_text".into(), Column::Str(vec![String::new(), "lost interest".into()]))],
    )
    .unwrap();
    let node = OperatorNode::new(
        "e",
        OperatorKind::Embed,
        json!({"text_column": "post_text", "dim": 16, "output_column": "v"}),
        &["src"],
    );
    let mut calls = ops::Calls::new("e", LatencyConfig::default(), None);
    let inputs = [Arc::new(Artifact::Relation(rel))];
    let (out, _, _) = ops::evaluate(&node, &inputs, &[], data(), &mut calls).unwrap();
    let v = out.as_relation().unwrap().vector_column("v").unwrap().to_vec();
    assert!(v[0].iter().all(|x| *x == 0.0));
    assert!((crate::text::dot(&v[1], &v[1]) - 1.0).abs() < 1e-9);
    assert_eq!(calls.finish().count(CallKind::Embed), 2);
}

#[test]
fn replay_cache_serves_identical_answers() {
    let replay = Mutex::new(ReplayCache::default());
    let opts = ExecOptions {
        replay: Some(&replay),
        ..ExecOptions::default()
    };
    let first = execute_with(&rag_plan(), data(), &opts).unwrap();
    assert!(!replay.lock().is_empty());
    let second = execute_with(&rag_plan(), data(), &opts).unwrap();
    assert!(second.same_results(&first));
    assert!(first.same_results(rag_run()));
    assert_eq!(second.invocations, first.invocations);
}

#[test]
fn sleeping_latency_takes_wall_time() {
    let plan = PipelinePlan::parse(
        &json!({
            "nodes": [
                {"id": "posts", "kind": "csv_source", "params": {"path": "test_posts.csv", "id_column": "post_id"}, "inputs": []},
                {"id": "fix", "kind": "translate", "params": {"text_column": "post_text", "languages": ["xx"]}, "inputs": ["posts"]},
                {"id": "bin", "kind": "label_binarize", "params": {"column": "signs_of_anhedonia", "positive_value": 1, "output_column": "y"}, "inputs": ["fix"]},
                {"id": "acc", "kind": "score_accuracy", "params": {"pred_column": "y", "true_column": "signs_of_anhedonia"}, "inputs": ["bin"]}
            ],
            "outputs": ["acc"]
        })
        .to_string(),
    )
    .unwrap();
    let latency = LatencyConfig {
        translate_per_row: 1,
        sleep: true,
        ..LatencyConfig::default()
    };
    let start = std::time::Instant::now();
    let run = execute(&plan, data(), latency).unwrap();
    let calls = run.invocations.count(CallKind::Translate) as u128;
    assert!(calls > 0);
    assert!(start.elapsed().as_millis() >= calls);
}
