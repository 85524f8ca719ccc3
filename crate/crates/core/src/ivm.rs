//! Best-effort incremental maintenance of a run across plan edits.
//!
//! A single parameter-only edit is maintained by re-executing the new plan
//! with the prior run as reuse source: unchanged nodes are fingerprint hits
//! and expensive nodes copy every row whose inputs are unchanged. Anything
//! else falls back to a cold execution. Deltas are computed afterwards by
//! value comparison against the prior intermediates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::engine::{
    data_fingerprints, execute, execute_with, Artifact, CallKind, EngineError, ExecOptions, LatencyConfig, RunResult,
};
use crate::plan::{diff_plans, OperatorKind, PipelinePlan, PlanDiff};
use crate::relation::{vec_bits_eq, RowId};

#[derive(Debug, Error)]
pub enum IvmError {
    #[error("prior run does not correspond to the old plan on this data")]
    PriorMismatch,
    #[error("plan has no rag_classify node")]
    NoRagNode,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    MultiOperatorChange,
    StructuralChange,
    SourceSchemaChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenancePolicy {
    pub enabled: bool,
    pub fallback_reason: Option<FallbackReason>,
}

impl MaintenancePolicy {
    fn enabled() -> Self {
        MaintenancePolicy {
            enabled: true,
            fallback_reason: None,
        }
    }

    fn fallback(reason: FallbackReason) -> Self {
        MaintenancePolicy {
            enabled: false,
            fallback_reason: Some(reason),
        }
    }
}

/// Which policy applies to going from `old` to `new`.
pub fn maintenance_policy(old: &PipelinePlan, new: &PipelinePlan, diff: &PlanDiff) -> MaintenancePolicy {
    if diff.is_empty() {
        return MaintenancePolicy::enabled();
    }
    if diff.is_structural() {
        return MaintenancePolicy::fallback(FallbackReason::StructuralChange);
    }
    if diff.changed.len() > 1 {
        return MaintenancePolicy::fallback(FallbackReason::MultiOperatorChange);
    }
    if !diff.single_operator_change {
        return MaintenancePolicy::fallback(FallbackReason::StructuralChange);
    }
    let id = diff.changed.first().expect("one changed node");
    let is_source = |p: &PipelinePlan| p.node(id).is_some_and(|n| n.kind == OperatorKind::CsvSource);
    if is_source(old) || is_source(new) {
        return MaintenancePolicy::fallback(FallbackReason::SourceSchemaChange);
    }
    MaintenancePolicy::enabled()
}

/// Output rows of one node that differ from the prior run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaSet {
    pub changed: BTreeSet<RowId>,
    pub inserted: BTreeSet<RowId>,
    pub deleted: BTreeSet<RowId>,
    /// A row-less artifact (model or score) differs.
    pub replaced: bool,
}

impl DeltaSet {
    pub fn is_empty(&self) -> bool {
        self.changed.is_empty() && self.inserted.is_empty() && self.deleted.is_empty() && !self.replaced
    }

    pub fn touched(&self) -> BTreeSet<RowId> {
        self.changed
            .iter()
            .chain(&self.inserted)
            .chain(&self.deleted)
            .cloned()
            .collect()
    }
}

/// Row-wise comparison of two artifacts of the same node.
pub fn delta_between(prior: &Artifact, current: &Artifact) -> DeltaSet {
    let mut delta = DeltaSet::default();
    match (prior, current) {
        (Artifact::Relation(a), Artifact::Relation(b)) => {
            for (j, id) in b.row_ids().iter().enumerate() {
                match a.position(id) {
                    None => {
                        delta.inserted.insert(id.clone());
                    }
                    Some(i) if !a.row_eq(i, b, j) => {
                        delta.changed.insert(id.clone());
                    }
                    Some(_) => {}
                }
            }
            delta.deleted = a.row_ids().iter().filter(|id| b.position(id).is_none()).cloned().collect();
        }
        (Artifact::Store(a), Artifact::Store(b)) => {
            for (j, id) in b.ids().iter().enumerate() {
                match a.position(id) {
                    None => {
                        delta.inserted.insert(id.clone());
                    }
                    Some(i) if !vec_bits_eq(a.vector(i), b.vector(j)) || !b.same_metadata(a, id) => {
                        delta.changed.insert(id.clone());
                    }
                    Some(_) => {}
                }
            }
            delta.deleted = a.ids().iter().filter(|id| b.position(id).is_none()).cloned().collect();
        }
        (a, b) => delta.replaced = a != b,
    }
    delta
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeReport {
    pub changed: usize,
    pub inserted: usize,
    pub deleted: usize,
    pub replaced: bool,
    pub cache_hit: bool,
    pub reused_rows: usize,
    pub invocations: BTreeMap<CallKind, usize>,
}

/// Maintenance record for the bench harness and the API.
#[derive(Debug, Clone, Serialize)]
pub struct MaintenanceReport {
    pub policy: MaintenancePolicy,
    pub diff: PlanDiff,
    pub nodes: BTreeMap<String, NodeReport>,
    pub invocations: BTreeMap<CallKind, usize>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
}

#[derive(Debug, Clone)]
pub struct Maintained {
    pub run: RunResult,
    pub policy: MaintenancePolicy,
    pub deltas: BTreeMap<String, DeltaSet>,
    pub report: MaintenanceReport,
}

pub fn incremental_update(
    prior: &RunResult,
    old: &PipelinePlan,
    new: &PipelinePlan,
    data: &Dataset,
    latency: LatencyConfig,
) -> Result<Maintained, IvmError> {
    incremental_update_with(prior, old, new, data, latency, &[])
}

/// As [`incremental_update`], additionally reusing rows from `extra` runs
/// (e.g. earlier shadow variants) when maintenance is enabled.
pub fn incremental_update_with(
    prior: &RunResult,
    old: &PipelinePlan,
    new: &PipelinePlan,
    data: &Dataset,
    latency: LatencyConfig,
    extra: &[&RunResult],
) -> Result<Maintained, IvmError> {
    if prior.plan != *old || prior.fingerprints != data_fingerprints(old, data) {
        return Err(IvmError::PriorMismatch);
    }
    let diff = diff_plans(old, new);
    let policy = maintenance_policy(old, new, &diff);
    let run = if policy.enabled {
        let mut sources = vec![prior];
        sources.extend_from_slice(extra);
        execute_with(
            new,
            data,
            &ExecOptions {
                latency,
                sources: &sources,
                replay: None,
            },
        )?
    } else {
        execute(new, data, latency)?
    };
    let deltas = node_deltas(prior, &run);
    let per_node = run.invocations.per_node();
    let nodes = new
        .nodes
        .iter()
        .map(|n| {
            let d = deltas.get(&n.id).cloned().unwrap_or_default();
            let s = run.stats.get(&n.id).cloned().unwrap_or_default();
            let report = NodeReport {
                changed: d.changed.len(),
                inserted: d.inserted.len(),
                deleted: d.deleted.len(),
                replaced: d.replaced,
                cache_hit: s.cache_hit,
                reused_rows: s.reused_rows,
                invocations: per_node.get(&n.id).cloned().unwrap_or_default(),
            };
            (n.id.clone(), report)
        })
        .collect();
    let report = MaintenanceReport {
        policy,
        diff,
        nodes,
        invocations: run.invocations.counts(),
        accuracy_before: prior.accuracy(),
        accuracy_after: run.accuracy(),
    };
    Ok(Maintained {
        run,
        policy,
        deltas,
        report,
    })
}

/// Deltas of every node of `run` against the node with the same id in
/// `prior`; nodes new to the plan count as fully inserted.
pub fn node_deltas(prior: &RunResult, run: &RunResult) -> BTreeMap<String, DeltaSet> {
    run.fingerprints
        .iter()
        .filter_map(|(id, fp)| {
            let current = run.outputs.get(fp)?;
            let delta = match prior.output(id) {
                Some(_) if prior.fingerprints.get(id) == Some(fp) => DeltaSet::default(),
                Some(p) => delta_between(&p.artifact, &current.artifact),
                None => inserted(&current.artifact),
            };
            Some((id.clone(), delta))
        })
        .collect()
}

fn inserted(artifact: &Artifact) -> DeltaSet {
    let ids = match artifact {
        Artifact::Relation(r) => r.row_ids(),
        Artifact::Store(s) => s.ids(),
        _ => {
            return DeltaSet {
                replaced: true,
                ..DeltaSet::default()
            }
        }
    };
    DeltaSet {
        inserted: ids.iter().cloned().collect(),
        ..DeltaSet::default()
    }
}

/// Test rows whose retrieved neighbours in `prior` include a changed train
/// row.
pub fn affected_test_rows(prior: &RunResult, changed_train: &BTreeSet<RowId>) -> Result<BTreeSet<RowId>, IvmError> {
    let node = prior
        .plan
        .nodes_of_kind(OperatorKind::RagClassify)
        .next()
        .ok_or(IvmError::NoRagNode)?;
    let lineage = prior
        .lineage(&node.id)
        .ok_or_else(|| EngineError::MissingNode(node.id.clone()))?;
    Ok(lineage
        .rows
        .iter()
        .filter(|(_, per_input)| per_input.get(1).is_some_and(|r| r.iter().any(|id| changed_train.contains(id))))
        .map(|(id, _)| id.clone())
        .collect())
}
