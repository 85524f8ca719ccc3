//! Shadow pipelines: hidden variants of the user's pipeline that detect one
//! class of issue, localize it, evaluate a candidate fix on the affected
//! rows only and quantify its impact.

pub mod data_errors;
pub mod label_errors;
pub mod slices;

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::corpus::{CorpusError, Dataset, USERS_FILE};
use crate::engine::{execute, execute_with, EngineError, ExecOptions, InvocationLog, LatencyConfig, RunResult};
use crate::ivm::IvmError;
use crate::plan::{Operator, OperatorKind, OperatorNode, PipelinePlan, PlanError, PlanPatch};
use crate::relation::{RelationError, RowId};
use crate::suggest::ExplanationTuple;

pub use data_errors::CorruptionSpec;
pub use label_errors::{LabelErrorConfig, LabelMode};
pub use slices::SliceConfig;

#[derive(Debug, Error)]
pub enum ShadowError {
    #[error("unsupported pipeline shape: {0}")]
    Shape(String),
    #[error("invalid shadow config: {0}")]
    Config(String),
    #[error("no categorical features to slice on")]
    NoFeatures,
    #[error("no test points to value train rows against")]
    NoTestPoints,
    #[error("brute-force Shapley supports at most 8 train rows, got {0}")]
    TooManyRows(usize),
    #[error("label-error mode `{mode}` needs a {needs} pipeline")]
    ModeMismatch { mode: &'static str, needs: &'static str },
    #[error("row `{0}` has no word that can carry a typo")]
    Uncorruptible(RowId),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Ivm(#[from] IvmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowKind {
    Slices,
    LabelErrors,
    DataErrors,
}

impl ShadowKind {
    pub const ALL: [ShadowKind; 3] = [ShadowKind::Slices, ShadowKind::LabelErrors, ShadowKind::DataErrors];

    pub fn as_str(self) -> &'static str {
        match self {
            ShadowKind::Slices => "slices",
            ShadowKind::LabelErrors => "label_errors",
            ShadowKind::DataErrors => "data_errors",
        }
    }
}

impl fmt::Display for ShadowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShadowKind {
    type Err = String;

    /// Accepts both `label_errors` and `label-errors` spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "slices" => Ok(ShadowKind::Slices),
            "label_errors" => Ok(ShadowKind::LabelErrors),
            "data_errors" => Ok(ShadowKind::DataErrors),
            other => Err(format!("unknown shadow pipeline `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Rag,
    Train,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 2] = [PipelineKind::Rag, PipelineKind::Train];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineKind::Rag => "rag",
            PipelineKind::Train => "train",
        }
    }

    /// The bundled plan of this kind.
    pub fn plan(self) -> PipelinePlan {
        match self {
            PipelineKind::Rag => crate::plan::rag_plan(),
            PipelineKind::Train => crate::plan::train_plan(),
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rag" => Ok(PipelineKind::Rag),
            "train" => Ok(PipelineKind::Train),
            other => Err(format!("unknown pipeline `{other}`")),
        }
    }
}

/// The roles the shadow pipelines need, located in a user plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anatomy {
    pub kind: PipelineKind,
    pub accuracy: String,
    /// Input of the accuracy node: one row per scored test post.
    pub scored: String,
    pub pred_column: String,
    pub true_column: String,
    /// rag_classify or mlp_predict.
    pub predict: String,
    pub test_embed: String,
    /// Node feeding the test-side embed; fix operators are spliced after it.
    pub test_upstream: String,
    pub test_source: String,
    pub test_source_path: String,
    pub test_text_column: String,
    pub test_vector_column: String,
    /// vector_store_build or mlp_train.
    pub train_node: String,
    /// Relation the train node consumes.
    pub train_input: String,
    pub train_vector_column: String,
    pub label_column: String,
    /// Weak-labeling node producing `label_column`, if any.
    pub label_node: Option<String>,
}

fn shape(msg: impl Into<String>) -> ShadowError {
    ShadowError::Shape(msg.into())
}

impl Anatomy {
    pub fn of(plan: &PipelinePlan) -> Result<Anatomy, ShadowError> {
        let node = |id: &str| plan.node(id).ok_or_else(|| shape(format!("missing node `{id}`")));
        let first_input = |n: &OperatorNode| {
            n.inputs
                .first()
                .cloned()
                .ok_or_else(|| shape(format!("node `{}` has no input", n.id)))
        };
        let acc = plan.accuracy_node().ok_or_else(|| shape("no score_accuracy node"))?;
        let Operator::ScoreAccuracy { pred_column, true_column } = acc.operator()? else {
            unreachable!("accuracy_node returns a score_accuracy node")
        };
        let scored = first_input(acc)?;
        let mut cur = node(&scored)?;
        while !matches!(cur.kind, OperatorKind::RagClassify | OperatorKind::MlpPredict) {
            cur = node(&first_input(cur)?)?;
        }
        let predict = cur;
        let test_embed = node(&first_input(predict)?)?;
        let Operator::Embed {
            text_column,
            output_column,
            ..
        } = test_embed.operator()?
        else {
            return Err(shape(format!("`{}` does not consume an embed node", predict.id)));
        };
        let test_upstream = first_input(test_embed)?;
        let mut src = node(&test_upstream)?;
        while src.kind != OperatorKind::CsvSource {
            src = node(&first_input(src)?)?;
        }
        let Operator::CsvSource { path, .. } = src.operator()? else {
            unreachable!("loop stops at a csv_source")
        };
        let train = node(predict.inputs.get(1).ok_or_else(|| shape("predictor lacks a train input"))?)?;
        let (kind, train_vector_column, label_column) = match train.operator()? {
            Operator::VectorStoreBuild {
                vector_column,
                metadata_columns,
            } => {
                let label = metadata_columns
                    .first()
                    .cloned()
                    .ok_or_else(|| shape("vector store has no label metadata"))?;
                (PipelineKind::Rag, vector_column, label)
            }
            Operator::MlpTrain(p) => (PipelineKind::Train, p.vector_column, p.label_column),
            _ => return Err(shape(format!("`{}` is neither a vector store nor a model", train.id))),
        };
        let train_input = first_input(train)?;
        let label_node = find_upstream(plan, &train_input, |n| {
            matches!(n.operator(), Ok(Operator::WeakLabelRegex(p)) if p.output_column == label_column)
        });
        Ok(Anatomy {
            kind,
            accuracy: acc.id.clone(),
            scored,
            pred_column,
            true_column,
            predict: predict.id.clone(),
            test_embed: test_embed.id.clone(),
            test_upstream,
            test_source: src.id.clone(),
            test_source_path: path,
            test_text_column: text_column,
            test_vector_column: output_column,
            train_node: train.id.clone(),
            train_input,
            train_vector_column,
            label_column,
            label_node,
        })
    }
}

/// First node at or above `start` (depth-first over inputs) accepted by `pred`.
fn find_upstream(plan: &PipelinePlan, start: &str, pred: impl Fn(&OperatorNode) -> bool) -> Option<String> {
    let mut stack = vec![start.to_string()];
    let mut seen = BTreeSet::new();
    while let Some(id) = stack.pop() {
        if !seen.insert(id.clone()) {
            continue;
        }
        let n = plan.node(&id)?;
        if pred(n) {
            return Some(id);
        }
        stack.extend(n.inputs.iter().rev().cloned());
    }
    None
}

/// Slicing features of the scored test rows.
pub const SLICE_FEATURES: [&str; 3] = ["country", "language", "length_bucket"];

/// Per-row view of the scored test set.
#[derive(Debug, Clone)]
pub struct TestFrame {
    pub ids: Vec<RowId>,
    pub pred: Vec<String>,
    pub truth: Vec<String>,
    /// Categorical features, in [`SLICE_FEATURES`] order where present.
    pub features: Vec<(String, Vec<String>)>,
    pub text: Vec<String>,
    index: HashMap<RowId, usize>,
}

impl TestFrame {
    pub fn build(run: &RunResult, anatomy: &Anatomy, data: &Dataset) -> Result<TestFrame, ShadowError> {
        let rel = run.relation(&anatomy.scored)?;
        let pred = rel.column(&anatomy.pred_column)?;
        let truth = rel.column(&anatomy.true_column)?;
        let mut features = Vec::new();
        for name in SLICE_FEATURES {
            if rel.has_column(name) {
                features.push((name.to_string(), (0..rel.len()).map(|i| rel.column(name).unwrap().render(i)).collect()));
            } else if name == "country" && rel.has_column("user_id") && data.digest(USERS_FILE).is_some() {
                let users = data.table(USERS_FILE, "user_id")?;
                let by_user: HashMap<&str, &str> = users
                    .str_column("user_id")?
                    .iter()
                    .zip(users.str_column("country")?)
                    .map(|(u, c)| (u.as_str(), c.as_str()))
                    .collect();
                let uid = rel.column("user_id")?;
                let countries = (0..rel.len())
                    .map(|i| by_user.get(uid.render(i).as_str()).map_or("unknown", |c| c).to_string())
                    .collect();
                features.push((name.to_string(), countries));
            }
        }
        Ok(TestFrame {
            ids: rel.row_ids().to_vec(),
            pred: (0..rel.len()).map(|i| pred.render(i)).collect(),
            truth: (0..rel.len()).map(|i| truth.render(i)).collect(),
            features,
            text: rel.str_column(&anatomy.test_text_column)?.to_vec(),
            index: rel.row_ids().iter().cloned().zip(0..).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, id: &RowId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn errors(&self) -> Vec<bool> {
        self.pred.iter().zip(&self.truth).map(|(p, t)| p != t).collect()
    }

    pub fn feature(&self, name: &str, i: usize) -> Option<&str> {
        self.features
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v[i].as_str())
    }

    pub fn accuracy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let ok = self.pred.iter().zip(&self.truth).filter(|(p, t)| p == t).count();
        ok as f64 / self.len() as f64
    }
}

/// Row ids whose prediction differs between two frames over the same rows.
pub fn changed_predictions(before: &TestFrame, after: &TestFrame) -> BTreeSet<RowId> {
    after
        .ids
        .iter()
        .enumerate()
        .filter(|(j, id)| before.position(id).is_none_or(|i| before.pred[i] != after.pred[*j]))
        .map(|(_, id)| id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadowConfig {
    pub slices: SliceConfig,
    pub label_errors: LabelErrorConfig,
    pub data_errors: CorruptionSpec,
    pub explanation_cap: usize,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig {
            slices: SliceConfig::default(),
            label_errors: LabelErrorConfig::default(),
            data_errors: CorruptionSpec::default(),
            explanation_cap: 10,
        }
    }
}

/// Everything a shadow pipeline reads.
#[derive(Clone, Copy)]
pub struct ShadowContext<'a> {
    pub data: &'a Dataset,
    /// The user pipeline's current run.
    pub base: &'a RunResult,
    pub config: &'a ShadowConfig,
    pub latency: LatencyConfig,
    /// Reuse the base run's intermediates. Without it the shadow runs from
    /// scratch, re-executing the base pipeline for detection.
    pub reuse: bool,
    /// Also build the run that installs the fix on the user's own data when
    /// it differs from the evaluation run.
    pub prepare: bool,
    /// Earlier runs of the same shadow, reused row by row.
    pub extra_sources: &'a [&'a RunResult],
}

impl<'a> ShadowContext<'a> {
    pub fn new(data: &'a Dataset, base: &'a RunResult, config: &'a ShadowConfig, latency: LatencyConfig) -> Self {
        ShadowContext {
            data,
            base,
            config,
            latency,
            reuse: true,
            prepare: true,
            extra_sources: &[],
        }
    }

    /// The base run to detect issues on, recomputed cold when reuse is off.
    fn detection_base(&self, log: &mut InvocationLog) -> Result<Cow<'a, RunResult>, ShadowError> {
        if self.reuse {
            return Ok(Cow::Borrowed(self.base));
        }
        let run = execute(&self.base.plan, self.data, self.latency)?;
        log.extend(run.invocations.clone());
        Ok(Cow::Owned(run))
    }

    /// Runs a variant plan, reusing from `sources`, the base run and earlier
    /// shadow runs (in that order), or cold when reuse is off.
    fn run_variant(
        &self,
        plan: &PipelinePlan,
        data: &Dataset,
        sources: &[&RunResult],
        log: &mut InvocationLog,
    ) -> Result<RunResult, ShadowError> {
        let run = if self.reuse {
            let mut all: Vec<&RunResult> = sources.to_vec();
            all.push(self.base);
            all.extend_from_slice(self.extra_sources);
            execute_with(
                plan,
                data,
                &ExecOptions {
                    latency: self.latency,
                    sources: &all,
                    replay: None,
                },
            )?
        } else {
            execute(plan, data, self.latency)?
        };
        log.extend(run.invocations.clone());
        Ok(run)
    }
}

/// A fix evaluated by a shadow pipeline.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub title: String,
    pub patch: PlanPatch,
    /// The user plan with the patch applied.
    pub plan: PipelinePlan,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub proxy: bool,
    pub explanation: Vec<ExplanationTuple>,
    /// Run of `plan` on the user's data, ready to install on apply.
    pub run: Option<RunResult>,
}

impl Proposal {
    pub fn impact(&self) -> f64 {
        self.accuracy_after - self.accuracy_before
    }
}

#[derive(Debug, Clone)]
pub struct ShadowOutcome {
    pub kind: ShadowKind,
    pub finding: Json,
    pub proposal: Option<Proposal>,
    /// Variant runs, kept for reuse when the shadow is re-run later.
    pub runs: Vec<RunResult>,
    pub invocations: InvocationLog,
}

pub fn run_shadow(kind: ShadowKind, ctx: &ShadowContext<'_>) -> Result<ShadowOutcome, ShadowError> {
    let anatomy = Anatomy::of(&ctx.base.plan)?;
    match kind {
        ShadowKind::Slices => slices::run(ctx, &anatomy),
        ShadowKind::LabelErrors => label_errors::run(ctx, &anatomy),
        ShadowKind::DataErrors => data_errors::run(ctx, &anatomy),
    }
}

/// `base` unless the plan already has a node with that id, then `base_2`,
/// `base_3`, ...
fn unique_id(plan: &PipelinePlan, base: &str) -> String {
    if plan.node(base).is_none() {
        return base.to_string();
    }
    (2..)
        .map(|i| format!("{base}_{i}"))
        .find(|id| plan.node(id).is_none())
        .expect("unbounded")
}

/// Keeps a proposal only when its impact is not negative; otherwise records
/// the rejected impact in the finding.
fn guard(proposal: Proposal, finding: &mut Json) -> Option<Proposal> {
    if proposal.impact() >= 0.0 {
        return Some(proposal);
    }
    if let Json::Object(m) = finding {
        m.insert(
            "rejected_fix".into(),
            serde_json::json!({
                "title": proposal.title,
                "accuracy_before": proposal.accuracy_before,
                "accuracy_after": proposal.accuracy_after,
            }),
        );
    }
    None
}

/// Feature values of a test row, for explanation tuples.
pub(crate) fn row_fields(frame: &TestFrame, i: usize) -> BTreeMap<String, String> {
    let mut fields = BTreeMap::new();
    fields.insert("post_text".to_string(), frame.text[i].clone());
    for name in ["country", "language"] {
        if let Some(v) = frame.feature(name, i) {
            fields.insert(name.to_string(), v.to_string());
        }
    }
    fields
}
