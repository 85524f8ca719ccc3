//! Ranked, explained, applicable suggestions built from shadow findings.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::RunResult;
use crate::plan::{canonical_json, Fingerprint, PlanPatch};
use crate::relation::RowId;
use crate::shadow::{row_fields, Proposal, ShadowKind, TestFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Ready,
    Applied,
    Dismissed,
}

/// Contributing rows of one node for an explained row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageStep {
    pub node: String,
    pub rows: Vec<RowId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationTuple {
    pub row_id: RowId,
    pub fields: BTreeMap<String, String>,
    /// From the explained node upstream to the sources.
    pub lineage: Vec<LineageStep>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub id: String,
    pub source: ShadowKind,
    pub title: String,
    pub patch: PlanPatch,
    pub accuracy_before: f64,
    /// Absent while the shadow pipeline is (re-)running.
    pub accuracy_after: Option<f64>,
    pub proxy: bool,
    pub explanation: Vec<ExplanationTuple>,
    pub status: Status,
    /// Plan fingerprint of the run the suggestion was computed against.
    pub base_fingerprint: String,
    /// Plan fingerprint after application.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub applied_fingerprint: Option<String>,
}

impl Suggestion {
    pub fn from_proposal(source: ShadowKind, proposal: &Proposal, base: &RunResult) -> Suggestion {
        let patch_text = canonical_json(&serde_json::to_value(&proposal.patch).expect("patches serialize"));
        let digest = Fingerprint::of_bytes(format!("{source}\n{patch_text}").as_bytes());
        Suggestion {
            id: format!("{source}-{digest}"),
            source,
            title: proposal.title.clone(),
            patch: proposal.patch.clone(),
            accuracy_before: proposal.accuracy_before,
            accuracy_after: Some(proposal.accuracy_after),
            proxy: proposal.proxy,
            explanation: proposal.explanation.clone(),
            status: Status::Ready,
            base_fingerprint: base.plan_fingerprint().to_string(),
            applied_fingerprint: None,
        }
    }

    /// Expected accuracy change, or `None` while pending.
    pub fn impact(&self) -> Option<f64> {
        self.accuracy_after.map(|a| a - self.accuracy_before)
    }
}

/// Descending impact; pending suggestions last; a proxy estimate after an
/// exact impact of equal size; then by source name and id.
pub fn suggestion_order(a: &Suggestion, b: &Suggestion) -> Ordering {
    let impact = |s: &Suggestion| s.impact().unwrap_or(f64::NEG_INFINITY);
    impact(b)
        .total_cmp(&impact(a))
        .then(a.proxy.cmp(&b.proxy))
        .then_with(|| a.source.as_str().cmp(b.source.as_str()))
        .then_with(|| a.id.cmp(&b.id))
}

pub fn rank_suggestions(mut list: Vec<Suggestion>) -> Vec<Suggestion> {
    list.sort_by(suggestion_order);
    list
}

/// Upstream lineage of `row` at `node`: one step per node that contributed,
/// in reverse topological order.
pub fn lineage_chain(run: &RunResult, node: &str, row: &RowId) -> Vec<LineageStep> {
    let Ok(order) = run.plan.topo_order() else {
        return Vec::new();
    };
    let mut pending: BTreeMap<String, BTreeSet<RowId>> = BTreeMap::new();
    pending.entry(node.to_string()).or_default().insert(row.clone());
    let mut steps = Vec::new();
    for id in order.iter().rev() {
        let Some(rows) = pending.remove(id) else {
            continue;
        };
        let Some(plan_node) = run.plan.node(id) else {
            continue;
        };
        if let Some(lineage) = run.lineage(id) {
            for r in &rows {
                for (i, input) in plan_node.inputs.iter().enumerate() {
                    let from = lineage.from_input(r, i);
                    if !from.is_empty() {
                        pending.entry(input.clone()).or_default().extend(from.iter().cloned());
                    }
                }
            }
        }
        steps.push(LineageStep {
            node: id.clone(),
            rows: rows.into_iter().collect(),
        });
    }
    steps
}

/// Up to `cap` explanation rows: rows whose prediction changed first (by
/// row id), then a stratified pass over the remaining affected rows:
/// round-robin over countries, and within a country round-robin over
/// (language, length bucket) strata, each stratum in row id order.
pub fn select_explanation_tuples(
    affected: &[RowId],
    flipped: &BTreeSet<RowId>,
    frame: &TestFrame,
    run: &RunResult,
    node: &str,
    cap: usize,
    note: impl Fn(&RowId) -> String,
) -> Vec<ExplanationTuple> {
    let affected: BTreeSet<&RowId> = affected.iter().filter(|id| frame.position(id).is_some()).collect();
    let mut chosen: Vec<&RowId> = affected.iter().copied().filter(|id| flipped.contains(*id)).take(cap).collect();

    type Strata<'r> = BTreeMap<(String, String), Vec<&'r RowId>>;
    let mut by_country: BTreeMap<String, Strata<'_>> = BTreeMap::new();
    for id in affected.iter().copied().filter(|id| !flipped.contains(*id)) {
        let i = frame.position(id).expect("filtered above");
        let f = |name| frame.feature(name, i).unwrap_or("").to_string();
        by_country
            .entry(f("country"))
            .or_default()
            .entry((f("language"), f("length_bucket")))
            .or_default()
            .push(id);
    }
    let queues: Vec<Vec<&RowId>> = by_country.into_values().map(interleave).collect();
    let mut round = 0;
    while chosen.len() < cap && queues.iter().any(|q| round < q.len()) {
        for q in &queues {
            if chosen.len() == cap {
                break;
            }
            if let Some(id) = q.get(round) {
                chosen.push(id);
            }
        }
        round += 1;
    }

    chosen
        .into_iter()
        .map(|id| {
            let i = frame.position(id).expect("filtered above");
            ExplanationTuple {
                row_id: id.clone(),
                fields: row_fields(frame, i),
                lineage: lineage_chain(run, node, id),
                note: note(id),
            }
        })
        .collect()
}

/// Round-robin merge of the strata of one country.
fn interleave(strata: BTreeMap<(String, String), Vec<&RowId>>) -> Vec<&RowId> {
    let lists: Vec<Vec<&RowId>> = strata.into_values().collect();
    let longest = lists.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .flat_map(|r| lists.iter().filter_map(move |l| l.get(r).copied()))
        .collect()
}
