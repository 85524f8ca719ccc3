mod common;

use std::sync::Arc;

use serde_json::json;

use common::default_data;
use shadowpipe::bench::regex_edit;
use shadowpipe::engine::{execute, LatencyConfig};
use shadowpipe::ivm::FallbackReason;
use shadowpipe::session::{Session, SessionError, ShadowState};
use shadowpipe::shadow::{PipelineKind, ShadowConfig, ShadowKind};
use shadowpipe::suggest::Status;

fn open(kind: PipelineKind) -> Session {
    Session::open(
        "t",
        kind.plan(),
        Arc::new(default_data().clone()),
        ShadowConfig::default(),
        LatencyConfig::default(),
    )
    .unwrap()
}

fn id_of(s: &Session, kind: ShadowKind) -> String {
    s.suggestions().iter().find(|x| x.source == kind).unwrap().id.clone()
}

#[test]
fn analysis_yields_one_ready_suggestion_per_shadow() {
    let mut s = open(PipelineKind::Rag);
    s.analyze(&ShadowKind::ALL);
    assert_eq!(s.suggestions().len(), 3);
    assert!(s.suggestions().iter().all(|x| x.status == Status::Ready));
    assert!(s.shadow_states().values().all(|st| *st == ShadowState::Done));
    assert!(!s.analyzing());
    let impacts: Vec<f64> = s.suggestions().iter().map(|x| x.impact().unwrap()).collect();
    assert!(impacts.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn applying_turns_the_rest_pending_then_stale() {
    let mut s = open(PipelineKind::Rag);
    s.analyze(&ShadowKind::ALL);
    let translate = id_of(&s, ShadowKind::Slices);
    let relabel = id_of(&s, ShadowKind::LabelErrors);
    let before = s.accuracy();

    let applied = s.apply(&translate).unwrap();
    assert!(applied.installed);
    assert!(applied.invocations.is_empty(), "prepared run reused: {:?}", applied.invocations);
    assert!(s.accuracy() > before);
    assert_eq!(s.suggestion(&translate).unwrap().status, Status::Applied);
    let other = s.suggestion(&relabel).unwrap();
    assert_eq!(other.status, Status::Pending);
    assert!(other.accuracy_after.is_none());

    assert!(matches!(s.apply(&relabel), Err(SessionError::Stale(_))));
    assert!(matches!(s.apply(&translate), Err(SessionError::NotReady { .. })));
    assert_eq!(s.history().len(), 2);
    assert_eq!(s.history()[1].event, format!("apply {translate}"));
}

#[test]
fn reanalysis_after_apply_keeps_applied_and_dismissed() {
    let mut s = open(PipelineKind::Train);
    s.analyze(&ShadowKind::ALL);
    let dropped = id_of(&s, ShadowKind::DataErrors);
    let taken = id_of(&s, ShadowKind::Slices);
    s.dismiss(&dropped).unwrap();
    assert!(matches!(s.apply(&dropped), Err(SessionError::NotReady { .. })));

    s.apply(&taken).unwrap();
    assert!(matches!(s.dismiss(&taken), Err(SessionError::NotReady { .. })));
    s.analyze(&ShadowKind::ALL);
    assert_eq!(s.suggestion(&taken).unwrap().status, Status::Applied);
    if let Ok(d) = s.suggestion(&dropped) {
        assert_eq!(d.status, Status::Dismissed);
    }
    let ready: Vec<_> = s.suggestions().iter().filter(|x| x.status == Status::Ready).collect();
    assert!(!ready.is_empty());
    let cold = execute(s.plan(), default_data(), LatencyConfig::default()).unwrap();
    assert!(s.run().same_results(&cold));
}

#[test]
fn unknown_suggestions_are_reported() {
    let mut s = open(PipelineKind::Rag);
    assert!(matches!(s.apply("nope"), Err(SessionError::UnknownSuggestion(_))));
    assert!(matches!(s.dismiss("nope"), Err(SessionError::UnknownSuggestion(_))));
    assert!(s.explanations("nope").is_err());
}

#[test]
fn explanations_are_capped_and_resolvable() {
    let mut s = open(PipelineKind::Rag);
    s.analyze(&ShadowKind::ALL);
    for x in s.suggestions() {
        let tuples = s.explanations(&x.id).unwrap();
        assert!(!tuples.is_empty() && tuples.len() <= 10, "{}: {}", x.id, tuples.len());
        for t in tuples {
            assert!(!t.lineage.is_empty());
            assert_eq!(t.lineage[0].rows, vec![t.row_id.clone()]);
            for step in &t.lineage {
                // the vector store is not a relation and has no row ids
                let Ok(rel) = s.run().relation(&step.node) else {
                    continue;
                };
                for row in &step.rows {
                    assert!(rel.position(row).is_some(), "{} lacks {row:?}", step.node);
                }
            }
        }
    }
}

#[test]
fn equivalent_regex_edit_recomputes_nothing() {
    let mut s = open(PipelineKind::Rag);
    let mut plan = s.plan().clone();
    let node = plan.nodes.iter_mut().find(|n| n.id == "weak_label").unwrap();
    // a reordered pattern list labels the same rows
    node.params["positive_patterns"].as_array_mut().unwrap().reverse();
    let report = s.update_plan(plan).unwrap();
    assert!(report.policy.enabled);
    assert!(report.invocations.is_empty(), "{:?}", report.invocations);
    assert_eq!(report.accuracy_before, report.accuracy_after);
}

#[test]
fn regex_edit_is_maintained_and_matches_cold() {
    let mut s = open(PipelineKind::Rag);
    s.analyze(&ShadowKind::ALL);
    let plan = regex_edit(s.plan()).unwrap();
    let report = s.update_plan(plan.clone()).unwrap();
    assert!(report.policy.enabled);
    assert!(s.suggestions().iter().all(|x| x.status == Status::Pending));
    assert!(s.last_maintenance().is_some());
    let cold = execute(&plan, default_data(), LatencyConfig::default()).unwrap();
    assert!(s.run().same_results(&cold));
    s.analyze(&ShadowKind::ALL);
    assert!(s.suggestions().iter().any(|x| x.status == Status::Ready));
}

#[test]
fn two_node_edit_falls_back() {
    let mut s = open(PipelineKind::Rag);
    let mut plan = regex_edit(s.plan()).unwrap();
    let node = plan.nodes.iter_mut().find(|n| n.id == "rag_chain").unwrap();
    node.params.insert("k".into(), json!(7));
    let report = s.update_plan(plan.clone()).unwrap();
    assert!(!report.policy.enabled);
    assert_eq!(report.policy.fallback_reason, Some(FallbackReason::MultiOperatorChange));
    let cold = execute(&plan, default_data(), LatencyConfig::default()).unwrap();
    assert!(s.run().same_results(&cold));
}

#[test]
fn stale_background_reports_are_dropped() {
    let mut s = open(PipelineKind::Rag);
    let job = s.snapshot(&[ShadowKind::Slices]);
    assert!(s.analyzing());
    let reports = job.run();
    s.update_plan(regex_edit(s.plan()).unwrap()).unwrap();
    assert!(!s.complete(reports));
    assert!(s.suggestions().is_empty());
}

#[test]
fn invalid_plans_are_rejected() {
    let mut s = open(PipelineKind::Train);
    let mut plan = s.plan().clone();
    plan.outputs = vec!["missing".into()];
    assert!(matches!(s.update_plan(plan), Err(SessionError::Plan(_))));
    assert_eq!(s.history().len(), 1);
}
