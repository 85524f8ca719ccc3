use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::relation::RowId;

/// Kinds of simulated external calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Embed,
    LlmInfer,
    Translate,
    Spellcheck,
    MlpTrain,
}

impl CallKind {
    pub const ALL: [CallKind; 5] = [
        CallKind::Embed,
        CallKind::LlmInfer,
        CallKind::Translate,
        CallKind::Spellcheck,
        CallKind::MlpTrain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CallKind::Embed => "embed",
            CallKind::LlmInfer => "llm_infer",
            CallKind::Translate => "translate",
            CallKind::Spellcheck => "spellcheck",
            CallKind::MlpTrain => "mlp_train",
        }
    }
}

/// Artificial per-call delays in milliseconds. With `sleep` unset the delays
/// are only recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyConfig {
    pub embed_per_row: u64,
    pub llm_per_row: u64,
    pub translate_per_row: u64,
    pub spellcheck_per_row: u64,
    pub mlp_train_flat: u64,
    pub sleep: bool,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            embed_per_row: 2,
            llm_per_row: 30,
            translate_per_row: 20,
            spellcheck_per_row: 10,
            mlp_train_flat: 500,
            sleep: false,
        }
    }
}

impl LatencyConfig {
    pub fn sleeping() -> Self {
        LatencyConfig {
            sleep: true,
            ..LatencyConfig::default()
        }
    }

    pub fn delay_ms(&self, kind: CallKind) -> u64 {
        match kind {
            CallKind::Embed => self.embed_per_row,
            CallKind::LlmInfer => self.llm_per_row,
            CallKind::Translate => self.translate_per_row,
            CallKind::Spellcheck => self.spellcheck_per_row,
            CallKind::MlpTrain => self.mlp_train_flat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub node: String,
    pub kind: CallKind,
    /// `None` for batch calls such as model training.
    pub row: Option<RowId>,
    pub latency_ms: u64,
}

/// Append-only record of the external calls made by one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationLog {
    records: Vec<Invocation>,
}

impl InvocationLog {
    pub fn push(&mut self, record: Invocation) {
        self.records.push(record);
    }

    pub fn extend(&mut self, other: InvocationLog) {
        self.records.extend(other.records);
    }

    /// Sorts by node id, then row id; the canonical post-run order.
    pub fn sort(&mut self) {
        self.records
            .sort_by(|a, b| (&a.node, &a.row, a.kind).cmp(&(&b.node, &b.row, b.kind)));
    }

    pub fn records(&self) -> &[Invocation] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, kind: CallKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    pub fn total_latency_ms(&self) -> u64 {
        self.records.iter().map(|r| r.latency_ms).sum()
    }

    /// Row ids of the calls of `kind`.
    pub fn rows(&self, kind: CallKind) -> BTreeSet<RowId> {
        self.records
            .iter()
            .filter(|r| r.kind == kind)
            .filter_map(|r| r.row.clone())
            .collect()
    }

    /// Call counts per node and kind.
    pub fn per_node(&self) -> BTreeMap<String, BTreeMap<CallKind, usize>> {
        let mut out: BTreeMap<String, BTreeMap<CallKind, usize>> = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.node.clone()).or_default().entry(r.kind).or_default() += 1;
        }
        out
    }

    pub fn counts(&self) -> BTreeMap<CallKind, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.kind).or_default() += 1;
        }
        out
    }
}

/// Persisted answers of the simulated services, keyed by call kind and a
/// hash of the canonical call input. Lets "API" results survive across
/// processes; hits are still logged as invocations since the replayed call
/// keeps its artificial latency.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayCache {
    entries: BTreeMap<String, Json>,
}

impl ReplayCache {
    pub fn key(kind: CallKind, input: &str) -> String {
        format!("{}:{:016x}", kind.as_str(), crate::text::fnv1a(input.as_bytes()))
    }

    pub fn get(&self, key: &str) -> Option<&Json> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: String, value: Json) {
        self.entries.insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> std::io::Result<ReplayCache> {
        if !path.exists() {
            return Ok(ReplayCache::default());
        }
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string(self).map_err(std::io::Error::other)?;
        fs::write(path, text)
    }
}
