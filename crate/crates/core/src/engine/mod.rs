//! Plan execution with row-level lineage, fingerprint caching and row-level
//! reuse of prior results.
//!
//! A node whose data-bound fingerprint appears in one of the reuse sources is
//! taken over wholesale. Otherwise the node is evaluated, but nodes that call
//! simulated external services first look for a *counterpart* (a node with
//! the same id, kind and params in a reuse source) and copy every output row
//! whose inputs are provably unchanged. Reuse is exact: a run with sources is
//! bit-identical to a cold run of the same plan on the same data.

mod invocation;
mod lineage;
mod mlp;
mod ops;
mod store;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{CorpusError, Dataset};
use crate::plan::{fingerprint_with_sources, Fingerprint, OperatorKind, PipelinePlan, PlanError};
use crate::relation::{Relation, RelationError, RowId};

pub use invocation::{CallKind, Invocation, InvocationLog, LatencyConfig, ReplayCache};
pub use lineage::LineageMap;
pub use mlp::MlpModel;
pub use store::{majority_vote, VectorStore};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("node `{node}`: column `{column}` holds a non-binary label at row `{row}`")]
    NotBinary { node: String, column: String, row: RowId },
    #[error("node `{node}`: vector of length {actual}, expected {expected}")]
    Dimension {
        node: String,
        expected: usize,
        actual: usize,
    },
    #[error("node `{0}`: vector store is empty")]
    EmptyStore(String),
    #[error("node `{node}`: input {position} is not a {expected}")]
    WrongArtifact {
        node: String,
        position: usize,
        expected: &'static str,
    },
    #[error("node `{0}` not found in run")]
    MissingNode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Score {
    pub correct: usize,
    pub total: usize,
}

impl Score {
    /// `correct / total`, or 0 for an empty test set.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Relation(Relation),
    Store(VectorStore),
    Model(MlpModel),
    Score(Score),
}

impl Artifact {
    pub fn as_relation(&self) -> Option<&Relation> {
        match self {
            Artifact::Relation(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_store(&self) -> Option<&VectorStore> {
        match self {
            Artifact::Store(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_model(&self) -> Option<&MlpModel> {
        match self {
            Artifact::Model(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_score(&self) -> Option<Score> {
        match self {
            Artifact::Score(s) => Some(*s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeOutput {
    pub artifact: Arc<Artifact>,
    pub lineage: Arc<LineageMap>,
}

/// How a node's output came about in one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeStats {
    /// Taken over from a reuse source by fingerprint.
    pub cache_hit: bool,
    /// Rows copied from a counterpart.
    pub reused_rows: usize,
    /// Rows that needed an external call.
    pub computed_rows: usize,
}

/// Snapshot of one execution.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub plan: PipelinePlan,
    /// Data-bound fingerprint of every node.
    pub fingerprints: BTreeMap<String, Fingerprint>,
    pub outputs: BTreeMap<Fingerprint, NodeOutput>,
    pub invocations: InvocationLog,
    pub metrics: BTreeMap<String, f64>,
    pub stats: BTreeMap<String, NodeStats>,
}

impl RunResult {
    pub fn output(&self, node: &str) -> Option<&NodeOutput> {
        self.fingerprints.get(node).and_then(|fp| self.outputs.get(fp))
    }

    pub fn artifact(&self, node: &str) -> Result<&Artifact, EngineError> {
        self.output(node)
            .map(|o| &*o.artifact)
            .ok_or_else(|| EngineError::MissingNode(node.to_string()))
    }

    pub fn relation(&self, node: &str) -> Result<&Relation, EngineError> {
        self.artifact(node)?.as_relation().ok_or_else(|| EngineError::WrongArtifact {
            node: node.to_string(),
            position: 0,
            expected: "relation",
        })
    }

    pub fn store(&self, node: &str) -> Result<&VectorStore, EngineError> {
        self.artifact(node)?.as_store().ok_or_else(|| EngineError::WrongArtifact {
            node: node.to_string(),
            position: 0,
            expected: "vector store",
        })
    }

    pub fn lineage(&self, node: &str) -> Option<&LineageMap> {
        self.output(node).map(|o| &*o.lineage)
    }

    pub fn score(&self) -> Option<Score> {
        let node = self.plan.accuracy_node()?;
        self.artifact(&node.id).ok()?.as_score()
    }

    pub fn accuracy(&self) -> f64 {
        self.metrics.get("accuracy").copied().unwrap_or(0.0)
    }

    /// Digest of the whole plan bound to its data.
    pub fn plan_fingerprint(&self) -> Fingerprint {
        plan_digest(&self.fingerprints)
    }

    /// True iff both runs hold bit-identical artifacts and lineage for every
    /// node and identical metrics.
    pub fn same_results(&self, other: &RunResult) -> bool {
        self.fingerprints.len() == other.fingerprints.len()
            && self.metrics_bits() == other.metrics_bits()
            && self.fingerprints.keys().all(|id| match (self.output(id), other.output(id)) {
                (Some(a), Some(b)) => a.artifact == b.artifact && a.lineage == b.lineage,
                _ => false,
            })
    }

    fn metrics_bits(&self) -> Vec<(&String, u64)> {
        self.metrics.iter().map(|(k, v)| (k, v.to_bits())).collect()
    }
}

pub fn plan_digest(fingerprints: &BTreeMap<String, Fingerprint>) -> Fingerprint {
    let text: String = fingerprints.iter().map(|(id, fp)| format!("{id}={fp}\n")).collect();
    Fingerprint::of_bytes(text.as_bytes())
}

/// Node fingerprints with the content digest of each source file mixed in.
pub fn data_fingerprints(plan: &PipelinePlan, data: &Dataset) -> BTreeMap<String, Fingerprint> {
    fingerprint_with_sources(plan, |n| {
        if n.kind != OperatorKind::CsvSource {
            return None;
        }
        n.params.get("path").and_then(|p| p.as_str()).and_then(|p| data.digest(p))
    })
}

#[derive(Clone, Copy, Default)]
pub struct ExecOptions<'a> {
    pub latency: LatencyConfig,
    /// Prior runs to reuse from, most relevant first.
    pub sources: &'a [&'a RunResult],
    pub replay: Option<&'a Mutex<ReplayCache>>,
}

/// Cold execution.
pub fn execute(plan: &PipelinePlan, data: &Dataset, latency: LatencyConfig) -> Result<RunResult, EngineError> {
    execute_with(
        plan,
        data,
        &ExecOptions {
            latency,
            ..ExecOptions::default()
        },
    )
}

/// Executes `plan` in topological order, reusing from `opts.sources`.
pub fn execute_with(plan: &PipelinePlan, data: &Dataset, opts: &ExecOptions<'_>) -> Result<RunResult, EngineError> {
    plan.validate()?;
    let fingerprints = data_fingerprints(plan, data);
    let mut outputs: BTreeMap<Fingerprint, NodeOutput> = BTreeMap::new();
    let mut invocations = InvocationLog::default();
    let mut stats = BTreeMap::new();
    for id in plan.topo_order()? {
        let node = plan.node(&id).expect("topo order lists plan nodes");
        let fp = fingerprints[&id];
        if outputs.contains_key(&fp) {
            stats.insert(id, NodeStats::default());
            continue;
        }
        if let Some(hit) = opts.sources.iter().find_map(|r| r.outputs.get(&fp)) {
            outputs.insert(fp, hit.clone());
            stats.insert(
                id,
                NodeStats {
                    cache_hit: true,
                    ..NodeStats::default()
                },
            );
            continue;
        }
        let inputs: Vec<Arc<Artifact>> = node
            .inputs
            .iter()
            .map(|i| outputs[&fingerprints[i]].artifact.clone())
            .collect();
        let counterparts = ops::counterparts(node, opts.sources);
        let mut calls = ops::Calls::new(&id, opts.latency, opts.replay);
        let (artifact, lineage, node_stats) = ops::evaluate(node, &inputs, &counterparts, data, &mut calls)?;
        let log = calls.finish();
        if opts.latency.sleep && log.total_latency_ms() > 0 {
            std::thread::sleep(Duration::from_millis(log.total_latency_ms()));
        }
        invocations.extend(log);
        outputs.insert(
            fp,
            NodeOutput {
                artifact: Arc::new(artifact),
                lineage: Arc::new(lineage),
            },
        );
        stats.insert(id, node_stats);
    }
    invocations.sort();
    let mut run = RunResult {
        plan: plan.clone(),
        fingerprints,
        outputs,
        invocations,
        metrics: BTreeMap::new(),
        stats,
    };
    if let Some(score) = run.score() {
        run.metrics.insert("accuracy".into(), score.accuracy());
    }
    Ok(run)
}

#[cfg(test)]
mod tests;
