//! Declarative pipeline plans.
//!
//! A plan is a JSON document listing typed operator nodes and the ids of the
//! nodes whose outputs are pipeline results:
//!
//! ```json
//! {"nodes":[{"id":"users","kind":"csv_source","params":{"path":"users.csv","id_column":"user_id"},"inputs":[]}],
//!  "outputs":["accuracy"]}
//! ```
//!
//! Parsing validates the DAG, the parameter set of every kind and, where the
//! source schemas are known, that every referenced column exists at the point
//! it is used.

mod diff;
mod fingerprint;
mod patch;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use thiserror::Error;

pub use diff::{diff_plans, PlanDiff};
pub use fingerprint::{canonical_json, fingerprint, fingerprint_with_sources, Fingerprint};
pub use patch::{apply_patch, Insertion, PlanPatch};

use crate::corpus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("node `{node}`: unknown kind `{kind}`")]
    UnknownKind { node: String, kind: String },
    #[error("node `{node}`: missing param `{param}`")]
    MissingParam { node: String, param: String },
    #[error("node `{node}`: unexpected param `{param}`")]
    UnexpectedParam { node: String, param: String },
    #[error("node `{node}`: param `{param}` must be {expected}")]
    BadParam {
        node: String,
        param: String,
        expected: &'static str,
    },
    #[error("node `{node}`: invalid regex `{pattern}`: {message}")]
    InvalidRegex {
        node: String,
        pattern: String,
        message: String,
    },
    #[error("node `{node}`: unknown input id `{input}`")]
    UnknownInput { node: String, input: String },
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("node `{node}`: expected {expected} inputs, got {actual}")]
    Arity {
        node: String,
        expected: usize,
        actual: usize,
    },
    #[error("node `{node}`: input {position} must be a {expected}")]
    InputShape {
        node: String,
        position: usize,
        expected: &'static str,
    },
    #[error("cycle detected among nodes {}", .0.join(", "))]
    Cycle(Vec<String>),
    #[error("node `{node}`: unknown column `{column}`")]
    UnknownColumn { node: String, column: String },
    #[error("unknown output id `{0}`")]
    UnknownOutput(String),
    #[error("outputs must include a score_accuracy node")]
    NoAccuracyOutput,
    #[error("plan is not a single connected graph")]
    Disconnected,
    #[error("plan has no nodes")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    CsvSource,
    FilterIn,
    Join,
    WeakLabelRegex,
    Embed,
    VectorStoreBuild,
    RagClassify,
    MlpTrain,
    MlpPredict,
    LabelBinarize,
    ScoreAccuracy,
    Translate,
    Spellcheck,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 13] = [
        OperatorKind::CsvSource,
        OperatorKind::FilterIn,
        OperatorKind::Join,
        OperatorKind::WeakLabelRegex,
        OperatorKind::Embed,
        OperatorKind::VectorStoreBuild,
        OperatorKind::RagClassify,
        OperatorKind::MlpTrain,
        OperatorKind::MlpPredict,
        OperatorKind::LabelBinarize,
        OperatorKind::ScoreAccuracy,
        OperatorKind::Translate,
        OperatorKind::Spellcheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorKind::CsvSource => "csv_source",
            OperatorKind::FilterIn => "filter_in",
            OperatorKind::Join => "join",
            OperatorKind::WeakLabelRegex => "weak_label_regex",
            OperatorKind::Embed => "embed",
            OperatorKind::VectorStoreBuild => "vector_store_build",
            OperatorKind::RagClassify => "rag_classify",
            OperatorKind::MlpTrain => "mlp_train",
            OperatorKind::MlpPredict => "mlp_predict",
            OperatorKind::LabelBinarize => "label_binarize",
            OperatorKind::ScoreAccuracy => "score_accuracy",
            OperatorKind::Translate => "translate",
            OperatorKind::Spellcheck => "spellcheck",
        }
    }

    pub fn required_params(self) -> &'static [&'static str] {
        match self {
            OperatorKind::CsvSource => &["path", "id_column"],
            OperatorKind::FilterIn => &["column", "values"],
            OperatorKind::Join => &["on"],
            OperatorKind::WeakLabelRegex => &[
                "text_column",
                "positive_patterns",
                "negative_override_patterns",
                "output_column",
            ],
            OperatorKind::Embed => &["text_column", "dim", "output_column"],
            OperatorKind::VectorStoreBuild => &["vector_column", "metadata_columns"],
            OperatorKind::RagClassify => &["k", "text_column", "vector_column", "output_column"],
            OperatorKind::MlpTrain => &[
                "vector_column",
                "label_column",
                "hidden_units",
                "epochs",
                "learning_rate",
                "seed",
            ],
            OperatorKind::MlpPredict => &["model_input", "output_column"],
            OperatorKind::LabelBinarize => &["column", "positive_value", "output_column"],
            OperatorKind::ScoreAccuracy => &["pred_column", "true_column"],
            OperatorKind::Translate => &["text_column", "languages"],
            OperatorKind::Spellcheck => &["text_column"],
        }
    }

    pub fn optional_params(self) -> &'static [&'static str] {
        match self {
            // row_id -> label overrides, the machine-applicable form of label fixes
            OperatorKind::WeakLabelRegex => &["label_overrides"],
            _ => &[],
        }
    }

    pub fn arity(self) -> usize {
        match self {
            OperatorKind::CsvSource => 0,
            OperatorKind::Join | OperatorKind::RagClassify | OperatorKind::MlpPredict => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperatorKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        OperatorKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorNode {
    pub id: String,
    pub kind: OperatorKind,
    #[serde(default)]
    pub params: Map<String, Json>,
    #[serde(default)]
    pub inputs: Vec<String>,
}

impl OperatorNode {
    pub fn new(id: &str, kind: OperatorKind, params: Json, inputs: &[&str]) -> Self {
        OperatorNode {
            id: id.to_string(),
            kind,
            params: match params {
                Json::Object(m) => m,
                _ => Map::new(),
            },
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Typed view of the parameters. Only fails on plans that bypassed
    /// validation.
    pub fn operator(&self) -> Result<Operator, PlanError> {
        Operator::from_node(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub nodes: Vec<OperatorNode>,
    pub outputs: Vec<String>,
}

#[derive(Deserialize)]
struct RawPlan {
    nodes: Vec<RawNode>,
    #[serde(default)]
    outputs: Vec<String>,
}

#[derive(Deserialize)]
struct RawNode {
    id: String,
    kind: String,
    #[serde(default)]
    params: Map<String, Json>,
    #[serde(default)]
    inputs: Vec<String>,
}

impl PipelinePlan {
    /// Parses and validates a plan document.
    pub fn parse(text: &str) -> Result<PipelinePlan, PlanError> {
        let raw: RawPlan = serde_json::from_str(text).map_err(|e| PlanError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let mut nodes = Vec::with_capacity(raw.nodes.len());
        for n in raw.nodes {
            let kind = n.kind.parse().map_err(|_| PlanError::UnknownKind {
                node: n.id.clone(),
                kind: n.kind.clone(),
            })?;
            nodes.push(OperatorNode {
                id: n.id,
                kind,
                params: n.params,
                inputs: n.inputs,
            });
        }
        let plan = PipelinePlan {
            nodes,
            outputs: raw.outputs,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Canonical pretty JSON: node order preserved, param keys sorted.
    pub fn to_json(&self) -> String {
        let mut doc = Map::new();
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let mut m = Map::new();
                m.insert("id".into(), Json::String(n.id.clone()));
                m.insert("kind".into(), Json::String(n.kind.as_str().into()));
                let params: BTreeMap<_, _> = n.params.iter().collect();
                m.insert("params".into(), serde_json::to_value(params).unwrap_or_default());
                m.insert("inputs".into(), serde_json::to_value(&n.inputs).unwrap_or_default());
                Json::Object(m)
            })
            .collect();
        doc.insert("nodes".into(), Json::Array(nodes));
        doc.insert("outputs".into(), serde_json::to_value(&self.outputs).unwrap_or_default());
        serde_json::to_string_pretty(&Json::Object(doc)).expect("plan serializes")
    }

    pub fn node(&self, id: &str) -> Option<&OperatorNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn nodes_of_kind(&self, kind: OperatorKind) -> impl Iterator<Item = &OperatorNode> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    /// Nodes that list `id` among their inputs.
    pub fn consumers(&self, id: &str) -> Vec<&OperatorNode> {
        self.nodes
            .iter()
            .filter(|n| n.inputs.iter().any(|i| i == id))
            .collect()
    }

    /// Node ids in a deterministic topological order (Kahn's algorithm, ready
    /// nodes taken in ascending id order).
    pub fn topo_order(&self) -> Result<Vec<String>, PlanError> {
        let mut indegree: BTreeMap<&str, usize> = BTreeMap::new();
        let mut consumers: HashMap<&str, Vec<&str>> = HashMap::new();
        for n in &self.nodes {
            indegree.entry(&n.id).or_insert(0);
            for i in &n.inputs {
                *indegree.entry(&n.id).or_insert(0) += 1;
                consumers.entry(i.as_str()).or_default().push(&n.id);
            }
        }
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_first() {
            order.push(id.to_string());
            for c in consumers.get(id).into_iter().flatten() {
                let d = indegree.get_mut(c).expect("consumer registered");
                *d -= 1;
                if *d == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != indegree.len() {
            let done: BTreeSet<&str> = order.iter().map(String::as_str).collect();
            let stuck = indegree
                .keys()
                .filter(|id| !done.contains(*id))
                .map(|s| s.to_string())
                .collect();
            return Err(PlanError::Cycle(stuck));
        }
        Ok(order)
    }

    /// The score_accuracy node designated as an output.
    pub fn accuracy_node(&self) -> Option<&OperatorNode> {
        self.outputs
            .iter()
            .filter_map(|o| self.node(o))
            .find(|n| n.kind == OperatorKind::ScoreAccuracy)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.nodes.is_empty() {
            return Err(PlanError::Empty);
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(PlanError::DuplicateId(n.id.clone()));
            }
        }
        for n in &self.nodes {
            for p in n.kind.required_params() {
                if !n.params.contains_key(*p) {
                    return Err(PlanError::MissingParam {
                        node: n.id.clone(),
                        param: p.to_string(),
                    });
                }
            }
            for p in n.params.keys() {
                if !n.kind.required_params().contains(&p.as_str())
                    && !n.kind.optional_params().contains(&p.as_str())
                {
                    return Err(PlanError::UnexpectedParam {
                        node: n.id.clone(),
                        param: p.clone(),
                    });
                }
            }
            Operator::from_node(n)?;
            for i in &n.inputs {
                if !ids.contains(i.as_str()) {
                    return Err(PlanError::UnknownInput {
                        node: n.id.clone(),
                        input: i.clone(),
                    });
                }
            }
            if n.inputs.len() != n.kind.arity() {
                return Err(PlanError::Arity {
                    node: n.id.clone(),
                    expected: n.kind.arity(),
                    actual: n.inputs.len(),
                });
            }
        }
        let order = self.topo_order()?;
        self.check_connected()?;
        for o in &self.outputs {
            if !ids.contains(o.as_str()) {
                return Err(PlanError::UnknownOutput(o.clone()));
            }
        }
        if self.accuracy_node().is_none() {
            return Err(PlanError::NoAccuracyOutput);
        }
        self.propagate_schemas(&order)?;
        Ok(())
    }

    fn check_connected(&self) -> Result<(), PlanError> {
        let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
        for n in &self.nodes {
            for i in &n.inputs {
                adj.entry(&n.id).or_default().push(i);
                adj.entry(i).or_default().push(&n.id);
            }
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.nodes[0].id.as_str()];
        while let Some(id) = stack.pop() {
            if seen.insert(id) {
                stack.extend(adj.get(id).into_iter().flatten());
            }
        }
        if seen.len() == self.nodes.len() {
            Ok(())
        } else {
            Err(PlanError::Disconnected)
        }
    }

    fn propagate_schemas(&self, order: &[String]) -> Result<(), PlanError> {
        let mut shapes: HashMap<&str, Shape> = HashMap::new();
        for id in order {
            let node = self.node(id).expect("topo order lists plan nodes");
            let op = Operator::from_node(node)?;
            let inputs: Vec<&Shape> = node.inputs.iter().map(|i| &shapes[i.as_str()]).collect();
            let shape = op.output_shape(&node.id, &inputs)?;
            shapes.insert(&node.id, shape);
        }
        Ok(())
    }
}

/// Column-level shape used during validation. `None` columns means the
/// source schema is unknown and checks are skipped downstream.
#[derive(Debug, Clone)]
enum Shape {
    Relation(Option<BTreeSet<String>>),
    Store,
    Model { vector_column: String },
    Score,
}

fn require_relation<'a>(
    node: &str,
    inputs: &[&'a Shape],
    position: usize,
) -> Result<&'a Option<BTreeSet<String>>, PlanError> {
    match inputs[position] {
        Shape::Relation(cols) => Ok(cols),
        _ => Err(PlanError::InputShape {
            node: node.to_string(),
            position,
            expected: "relation",
        }),
    }
}

fn require_columns(node: &str, cols: &Option<BTreeSet<String>>, needed: &[&str]) -> Result<(), PlanError> {
    if let Some(cols) = cols {
        for c in needed {
            if !cols.contains(*c) {
                return Err(PlanError::UnknownColumn {
                    node: node.to_string(),
                    column: c.to_string(),
                });
            }
        }
    }
    Ok(())
}

fn with_column(cols: &Option<BTreeSet<String>>, name: &str) -> Shape {
    Shape::Relation(cols.as_ref().map(|c| {
        let mut c = c.clone();
        c.insert(name.to_string());
        c
    }))
}

/// Typed operator parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    CsvSource {
        path: String,
        id_column: String,
    },
    FilterIn {
        column: String,
        values: Vec<String>,
    },
    Join {
        on: String,
    },
    WeakLabelRegex(WeakLabelParams),
    Embed {
        text_column: String,
        dim: usize,
        output_column: String,
    },
    VectorStoreBuild {
        vector_column: String,
        metadata_columns: Vec<String>,
    },
    RagClassify {
        k: usize,
        text_column: String,
        vector_column: String,
        output_column: String,
    },
    MlpTrain(MlpParams),
    MlpPredict {
        model_input: String,
        output_column: String,
    },
    LabelBinarize {
        column: String,
        positive_value: String,
        output_column: String,
    },
    ScoreAccuracy {
        pred_column: String,
        true_column: String,
    },
    Translate {
        text_column: String,
        languages: Vec<String>,
    },
    Spellcheck {
        text_column: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakLabelParams {
    pub text_column: String,
    pub positive_patterns: Vec<String>,
    pub negative_override_patterns: Vec<String>,
    pub output_column: String,
    pub label_overrides: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub vector_column: String,
    pub label_column: String,
    pub hidden_units: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

struct ParamReader<'a> {
    node: &'a OperatorNode,
}

impl<'a> ParamReader<'a> {
    fn bad(&self, param: &str, expected: &'static str) -> PlanError {
        PlanError::BadParam {
            node: self.node.id.clone(),
            param: param.to_string(),
            expected,
        }
    }

    fn get(&self, param: &str) -> Result<&'a Json, PlanError> {
        self.node.params.get(param).ok_or_else(|| PlanError::MissingParam {
            node: self.node.id.clone(),
            param: param.to_string(),
        })
    }

    fn string(&self, param: &str) -> Result<String, PlanError> {
        self.get(param)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| self.bad(param, "a string"))
    }

    /// Strings or numbers, rendered as strings.
    fn scalar(&self, param: &str) -> Result<String, PlanError> {
        scalar_string(self.get(param)?).ok_or_else(|| self.bad(param, "a string or number"))
    }

    fn scalars(&self, param: &str) -> Result<Vec<String>, PlanError> {
        self.get(param)?
            .as_array()
            .and_then(|a| a.iter().map(scalar_string).collect())
            .ok_or_else(|| self.bad(param, "an array of strings"))
    }

    fn strings(&self, param: &str) -> Result<Vec<String>, PlanError> {
        self.get(param)?
            .as_array()
            .and_then(|a| a.iter().map(|v| v.as_str().map(str::to_string)).collect())
            .ok_or_else(|| self.bad(param, "an array of strings"))
    }

    fn count(&self, param: &str) -> Result<usize, PlanError> {
        let v = self.get(param)?;
        let n = v
            .as_u64()
            .or_else(|| v.as_f64().filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as u64))
            .ok_or_else(|| self.bad(param, "a non-negative integer"))?;
        Ok(n as usize)
    }

    fn positive(&self, param: &str) -> Result<usize, PlanError> {
        match self.count(param)? {
            0 => Err(self.bad(param, "a positive integer")),
            n => Ok(n),
        }
    }

    fn number(&self, param: &str) -> Result<f64, PlanError> {
        self.get(param)?.as_f64().ok_or_else(|| self.bad(param, "a number"))
    }

    fn overrides(&self, param: &str) -> Result<BTreeMap<String, u8>, PlanError> {
        match self.node.params.get(param) {
            None => Ok(BTreeMap::new()),
            Some(Json::Object(m)) => m
                .iter()
                .map(|(k, v)| match v.as_u64() {
                    Some(l @ (0 | 1)) => Ok((k.clone(), l as u8)),
                    _ => Err(self.bad(param, "a map of row ids to 0/1 labels")),
                })
                .collect(),
            Some(_) => Err(self.bad(param, "a map of row ids to 0/1 labels")),
        }
    }
}

fn scalar_string(v: &Json) -> Option<String> {
    match v {
        Json::String(s) => Some(s.clone()),
        Json::Number(n) => Some(n.to_string()),
        Json::Bool(b) => Some(u8::from(*b).to_string()),
        _ => None,
    }
}

impl Operator {
    pub fn from_node(node: &OperatorNode) -> Result<Operator, PlanError> {
        let p = ParamReader { node };
        let op = match node.kind {
            OperatorKind::CsvSource => Operator::CsvSource {
                path: p.string("path")?,
                id_column: p.string("id_column")?,
            },
            OperatorKind::FilterIn => Operator::FilterIn {
                column: p.string("column")?,
                values: p.scalars("values")?,
            },
            OperatorKind::Join => Operator::Join { on: p.string("on")? },
            OperatorKind::WeakLabelRegex => {
                let params = WeakLabelParams {
                    text_column: p.string("text_column")?,
                    positive_patterns: p.strings("positive_patterns")?,
                    negative_override_patterns: p.strings("negative_override_patterns")?,
                    output_column: p.string("output_column")?,
                    label_overrides: p.overrides("label_overrides")?,
                };
                for pat in params.positive_patterns.iter().chain(&params.negative_override_patterns) {
                    regex::Regex::new(pat).map_err(|e| PlanError::InvalidRegex {
                        node: node.id.clone(),
                        pattern: pat.clone(),
                        message: e.to_string(),
                    })?;
                }
                Operator::WeakLabelRegex(params)
            }
            OperatorKind::Embed => Operator::Embed {
                text_column: p.string("text_column")?,
                dim: p.positive("dim")?,
                output_column: p.string("output_column")?,
            },
            OperatorKind::VectorStoreBuild => Operator::VectorStoreBuild {
                vector_column: p.string("vector_column")?,
                metadata_columns: p.strings("metadata_columns")?,
            },
            OperatorKind::RagClassify => Operator::RagClassify {
                k: p.positive("k")?,
                text_column: p.string("text_column")?,
                vector_column: p.string("vector_column")?,
                output_column: p.string("output_column")?,
            },
            OperatorKind::MlpTrain => Operator::MlpTrain(MlpParams {
                vector_column: p.string("vector_column")?,
                label_column: p.string("label_column")?,
                hidden_units: p.positive("hidden_units")?,
                epochs: p.count("epochs")?,
                learning_rate: p.number("learning_rate")?,
                seed: p.count("seed")? as u64,
            }),
            OperatorKind::MlpPredict => Operator::MlpPredict {
                model_input: p.string("model_input")?,
                output_column: p.string("output_column")?,
            },
            OperatorKind::LabelBinarize => Operator::LabelBinarize {
                column: p.string("column")?,
                positive_value: p.scalar("positive_value")?,
                output_column: p.string("output_column")?,
            },
            OperatorKind::ScoreAccuracy => Operator::ScoreAccuracy {
                pred_column: p.string("pred_column")?,
                true_column: p.string("true_column")?,
            },
            OperatorKind::Translate => Operator::Translate {
                text_column: p.string("text_column")?,
                languages: p.strings("languages")?,
            },
            OperatorKind::Spellcheck => Operator::Spellcheck {
                text_column: p.string("text_column")?,
            },
        };
        if let Operator::MlpPredict { model_input, .. } = &op {
            if node.inputs.get(1) != Some(model_input) {
                return Err(p.bad("model_input", "the id of the node's second input"));
            }
        }
        Ok(op)
    }

    fn output_shape(&self, node: &str, inputs: &[&Shape]) -> Result<Shape, PlanError> {
        Ok(match self {
            Operator::CsvSource { path, id_column } => {
                let cols = corpus::known_schema(path).map(|c| c.iter().map(|s| s.to_string()).collect());
                require_columns(node, &cols, &[id_column])?;
                Shape::Relation(cols)
            }
            Operator::FilterIn { column, .. } => {
                let cols = require_relation(node, inputs, 0)?;
                require_columns(node, cols, &[column])?;
                Shape::Relation(cols.clone())
            }
            Operator::Join { on } => {
                let left = require_relation(node, inputs, 0)?;
                let right = require_relation(node, inputs, 1)?;
                require_columns(node, left, &[on])?;
                require_columns(node, right, &[on])?;
                Shape::Relation(match (left, right) {
                    (Some(l), Some(r)) => Some(join_columns(l, r, on)),
                    _ => None,
                })
            }
            Operator::WeakLabelRegex(p) => {
                let cols = require_relation(node, inputs, 0)?;
                require_columns(node, cols, &[&p.text_column])?;
                with_column(cols, &p.output_column)
            }
            Operator::Embed {
                text_column,
                output_column,
                ..
            } => {
                let cols = require_relation(node, inputs, 0)?;
                require_columns(node, cols, &[text_column])?;
                with_column(cols, output_column)
            }
            Operator::VectorStoreBuild {
                vector_column,
                metadata_columns,
            } => {
                let cols = require_relation(node, inputs, 0)?;
                require_columns(node, cols, &[vector_column])?;
                let meta: Vec<&str> = metadata_columns.iter().map(String::as_str).collect();
                require_columns(node, cols, &meta)?;
                if metadata_columns.is_empty() {
                    return Err(PlanError::BadParam {
                        node: node.to_string(),
                        param: "metadata_columns".into(),
                        expected: "a non-empty array (first column is the label)",
                    });
                }
                Shape::Store
            }
            Operator::RagClassify {
                text_column,
                vector_column,
                output_column,
                ..
            } => {
                let cols = require_relation(node, inputs, 0)?;
                require_columns(node, cols, &[text_column, vector_column])?;
                if !matches!(inputs[1], Shape::Store) {
                    return Err(PlanError::InputShape {
                        node: node.to_string(),
                        position: 1,
                        expected: "vector store",
                    });
                }
                with_column(cols, output_column)
            }
            Operator::MlpTrain(p) => {
                let cols = require_relation(node, inputs, 0)?;
                require_columns(node, cols, &[&p.vector_column, &p.label_column])?;
                Shape::Model {
                    vector_column: p.vector_column.clone(),
                }
            }
            Operator::MlpPredict { output_column, .. } => {
                let cols = require_relation(node, inputs, 0)?;
                let Shape::Model { vector_column } = inputs[1] else {
                    return Err(PlanError::InputShape {
                        node: node.to_string(),
                        position: 1,
                        expected: "model",
                    });
                };
                require_columns(node, cols, &[vector_column])?;
                with_column(cols, output_column)
            }
            Operator::LabelBinarize {
                column, output_column, ..
            } => {
                let cols = require_relation(node, inputs, 0)?;
                require_columns(node, cols, &[column])?;
                with_column(cols, output_column)
            }
            Operator::ScoreAccuracy {
                pred_column,
                true_column,
            } => {
                let cols = require_relation(node, inputs, 0)?;
                require_columns(node, cols, &[pred_column, true_column])?;
                Shape::Score
            }
            Operator::Translate { text_column, .. } => {
                let cols = require_relation(node, inputs, 0)?;
                require_columns(node, cols, &[text_column, "language"])?;
                Shape::Relation(cols.clone())
            }
            Operator::Spellcheck { text_column } => {
                let cols = require_relation(node, inputs, 0)?;
                require_columns(node, cols, &[text_column])?;
                Shape::Relation(cols.clone())
            }
        })
    }
}

/// Output column names of an inner join: left columns, then right columns
/// except the key, suffixed `_right` on collision.
pub(crate) fn join_columns(left: &BTreeSet<String>, right: &BTreeSet<String>, on: &str) -> BTreeSet<String> {
    let mut out = left.clone();
    for c in right {
        if c == on {
            continue;
        }
        if left.contains(c) {
            out.insert(format!("{c}_right"));
        } else {
            out.insert(c.clone());
        }
    }
    out
}

/// The bundled reference pipeline that retrieves weakly labeled neighbours
/// and lets a (simulated) LLM vote.
pub const RAG_PLAN: &str = include_str!("../../plans/rag.plan.json");
/// The bundled reference pipeline that trains a small neural network on the
/// embeddings instead.
pub const TRAIN_PLAN: &str = include_str!("../../plans/train.plan.json");

pub fn rag_plan() -> PipelinePlan {
    PipelinePlan::parse(RAG_PLAN).expect("bundled rag plan is valid")
}

pub fn train_plan() -> PipelinePlan {
    PipelinePlan::parse(TRAIN_PLAN).expect("bundled train plan is valid")
}
