use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::corpus::Dataset;
use crate::plan::{Operator, OperatorNode, WeakLabelParams};
use crate::relation::{Column, Relation, RowId};
use crate::text::{embed_text, WeakLabeler};

use super::{
    majority_vote, Artifact, CallKind, EngineError, Invocation, InvocationLog, LatencyConfig, LineageMap, MlpModel,
    NodeStats, ReplayCache, RunResult, Score, VectorStore,
};

/// A node with the same id, kind and params in a prior run, with that run's
/// inputs to it.
pub(super) struct Counterpart<'a> {
    output: &'a Artifact,
    lineage: &'a LineageMap,
    inputs: Vec<&'a Artifact>,
}

impl Counterpart<'_> {
    fn input_relation(&self, i: usize) -> Option<&Relation> {
        self.inputs.get(i).and_then(|a| a.as_relation())
    }

    fn output_relation(&self) -> Option<&Relation> {
        self.output.as_relation()
    }
}

pub(super) fn counterparts<'a>(node: &OperatorNode, sources: &[&'a RunResult]) -> Vec<Counterpart<'a>> {
    sources
        .iter()
        .filter_map(|run| {
            let prior = run.plan.node(&node.id)?;
            if prior.kind != node.kind || prior.params != node.params || prior.inputs.len() != node.inputs.len() {
                return None;
            }
            let out = run.output(&node.id)?;
            let inputs = prior
                .inputs
                .iter()
                .map(|i| run.output(i).map(|o| &*o.artifact))
                .collect::<Option<Vec<_>>>()?;
            Some(Counterpart {
                output: &out.artifact,
                lineage: &out.lineage,
                inputs,
            })
        })
        .collect()
}

/// Simulated external calls of one node.
pub(super) struct Calls<'a> {
    node: &'a str,
    latency: LatencyConfig,
    replay: Option<&'a Mutex<ReplayCache>>,
    log: InvocationLog,
}

impl<'a> Calls<'a> {
    pub(super) fn new(node: &'a str, latency: LatencyConfig, replay: Option<&'a Mutex<ReplayCache>>) -> Self {
        Calls {
            node,
            latency,
            replay,
            log: InvocationLog::default(),
        }
    }

    pub(super) fn finish(self) -> InvocationLog {
        self.log
    }

    /// Logs one call and answers it from the replay cache when possible.
    fn call<T: Serialize + DeserializeOwned>(
        &mut self,
        kind: CallKind,
        row: Option<&RowId>,
        input: &str,
        compute: impl FnOnce() -> T,
    ) -> T {
        self.log.push(Invocation {
            node: self.node.to_string(),
            kind,
            row: row.cloned(),
            latency_ms: self.latency.delay_ms(kind),
        });
        let Some(replay) = self.replay else {
            return compute();
        };
        let key = ReplayCache::key(kind, input);
        if let Some(v) = replay.lock().get(&key).and_then(|v| serde_json::from_value(v.clone()).ok()) {
            return v;
        }
        let v = compute();
        if let Ok(json) = serde_json::to_value(&v) {
            replay.lock().insert(key, json);
        }
        v
    }
}

fn relation<'a>(node: &OperatorNode, inputs: &'a [Arc<Artifact>], position: usize) -> Result<&'a Relation, EngineError> {
    inputs[position].as_relation().ok_or_else(|| EngineError::WrongArtifact {
        node: node.id.clone(),
        position,
        expected: "relation",
    })
}

type Evaluated = (Artifact, LineageMap, NodeStats);

pub(super) fn evaluate(
    node: &OperatorNode,
    inputs: &[Arc<Artifact>],
    cps: &[Counterpart<'_>],
    data: &Dataset,
    calls: &mut Calls<'_>,
) -> Result<Evaluated, EngineError> {
    let plain = |artifact: Artifact, lineage: LineageMap| Ok((artifact, lineage, NodeStats::default()));
    match Operator::from_node(node)? {
        Operator::CsvSource { path, id_column } => {
            let rel = data.table(&path, &id_column)?;
            let mut lineage = LineageMap::new(&[]);
            for id in rel.row_ids() {
                lineage.insert(id.clone(), Vec::new());
            }
            plain(Artifact::Relation(rel), lineage)
        }
        Operator::FilterIn { column, values } => {
            let rel = relation(node, inputs, 0)?;
            let col = rel.column(&column)?;
            let keep: BTreeSet<&str> = values.iter().map(String::as_str).collect();
            let idx: Vec<usize> = (0..rel.len()).filter(|&i| keep.contains(col.render(i).as_str())).collect();
            let out = rel.take(&idx);
            let lineage = LineageMap::identity(&node.inputs[0], out.row_ids());
            plain(Artifact::Relation(out), lineage)
        }
        Operator::Join { on } => {
            let (out, lineage) = join(node, relation(node, inputs, 0)?, relation(node, inputs, 1)?, &on)?;
            plain(Artifact::Relation(out), lineage)
        }
        Operator::WeakLabelRegex(p) => {
            let rel = relation(node, inputs, 0)?;
            let labels = weak_labels(rel, &p)?;
            let out = rel.with_column(&p.output_column, Column::Int(labels))?;
            let lineage = LineageMap::identity(&node.inputs[0], out.row_ids());
            plain(Artifact::Relation(out), lineage)
        }
        Operator::Embed {
            text_column,
            dim,
            output_column,
        } => embed(node, relation(node, inputs, 0)?, cps, calls, &text_column, dim, &output_column),
        Operator::VectorStoreBuild {
            vector_column,
            metadata_columns,
        } => {
            let rel = relation(node, inputs, 0)?;
            let store = VectorStore::build(&node.id, rel, &vector_column, &metadata_columns)?;
            let lineage = LineageMap::identity(&node.inputs[0], store.ids());
            plain(Artifact::Store(store), lineage)
        }
        Operator::RagClassify {
            k,
            text_column,
            vector_column,
            output_column,
        } => {
            let store = inputs[1].as_store().ok_or_else(|| EngineError::WrongArtifact {
                node: node.id.clone(),
                position: 1,
                expected: "vector store",
            })?;
            let spec = RagSpec {
                k,
                text_column: &text_column,
                vector_column: &vector_column,
                output_column: &output_column,
            };
            rag_classify(node, relation(node, inputs, 0)?, store, cps, calls, &spec)
        }
        Operator::MlpTrain(p) => {
            let rel = relation(node, inputs, 0)?;
            let vectors = rel.vector_column(&p.vector_column)?;
            let labels = binary_labels(node, rel, &p.label_column)?;
            let label_col = rel.column(&p.label_column)?;
            let reused = cps.iter().find_map(|cp| {
                let cin = cp.input_relation(0)?;
                let same = cin.row_ids() == rel.row_ids()
                    && cin.column(&p.vector_column).ok()? == rel.column(&p.vector_column).ok()?
                    && cin.column(&p.label_column).ok()? == label_col;
                same.then(|| cp.output.as_model().cloned()).flatten()
            });
            let mut stats = NodeStats::default();
            let model = match reused {
                Some(m) => {
                    stats.reused_rows = rel.len();
                    m
                }
                None => {
                    stats.computed_rows = rel.len();
                    let dim = vectors.first().map_or(0, |v| v.len());
                    let xs: Vec<&[f64]> = vectors.iter().map(|v| &v[..]).collect();
                    calls.log.push(Invocation {
                        node: calls.node.to_string(),
                        kind: CallKind::MlpTrain,
                        row: None,
                        latency_ms: calls.latency.delay_ms(CallKind::MlpTrain),
                    });
                    MlpModel::train(&xs, &labels, dim, &p)
                }
            };
            Ok((Artifact::Model(model), LineageMap::new(&node.inputs), stats))
        }
        Operator::MlpPredict { output_column, .. } => {
            let rel = relation(node, inputs, 0)?;
            let model = inputs[1].as_model().ok_or_else(|| EngineError::WrongArtifact {
                node: node.id.clone(),
                position: 1,
                expected: "model",
            })?;
            let vectors = rel.vector_column(&model.vector_column)?;
            let preds = vectors.iter().map(|v| i64::from(model.predict(v))).collect();
            let out = rel.with_column(&output_column, Column::Int(preds))?;
            let mut lineage = LineageMap::new(&node.inputs);
            for id in out.row_ids() {
                lineage.insert(id.clone(), vec![vec![id.clone()], Vec::new()]);
            }
            plain(Artifact::Relation(out), lineage)
        }
        Operator::LabelBinarize {
            column,
            positive_value,
            output_column,
        } => {
            let rel = relation(node, inputs, 0)?;
            let col = rel.column(&column)?;
            let bits = (0..rel.len())
                .map(|i| i64::from(col.render(i) == positive_value))
                .collect();
            let out = rel.with_column(&output_column, Column::Int(bits))?;
            let lineage = LineageMap::identity(&node.inputs[0], out.row_ids());
            plain(Artifact::Relation(out), lineage)
        }
        Operator::ScoreAccuracy {
            pred_column,
            true_column,
        } => {
            let rel = relation(node, inputs, 0)?;
            let score = score_accuracy(rel, cps, &pred_column, &true_column)?;
            plain(Artifact::Score(score), LineageMap::new(&node.inputs))
        }
        Operator::Translate { text_column, languages } => {
            let rel = relation(node, inputs, 0)?;
            let lang = rel.str_column("language")?;
            let wanted: BTreeSet<&str> = languages.iter().map(String::as_str).collect();
            let lexicon = data.lexicon();
            rewrite_text(
                node,
                rel,
                cps,
                calls,
                &text_column,
                CallKind::Translate,
                |i, _| wanted.contains(lang[i].as_str()),
                |t| lexicon.translate(t),
            )
        }
        Operator::Spellcheck { text_column } => {
            let rel = relation(node, inputs, 0)?;
            let lexicon = data.lexicon();
            rewrite_text(
                node,
                rel,
                cps,
                calls,
                &text_column,
                CallKind::Spellcheck,
                |_, t| lexicon.needs_spellcheck(t),
                |t| lexicon.spellcheck(t),
            )
        }
    }
}

fn join(node: &OperatorNode, left: &Relation, right: &Relation, on: &str) -> Result<(Relation, LineageMap), EngineError> {
    let lkey = left.column(on)?;
    let rkey = right.column(on)?;
    let mut by_key: HashMap<String, Vec<usize>> = HashMap::new();
    for j in 0..right.len() {
        by_key.entry(rkey.render(j)).or_default().push(j);
    }
    let mut li = Vec::new();
    let mut ri = Vec::new();
    for i in 0..left.len() {
        if let Some(js) = by_key.get(&lkey.render(i)) {
            for &j in js {
                li.push(i);
                ri.push(j);
            }
        }
    }
    let left_names: BTreeSet<&str> = left.column_names().collect();
    let mut columns: Vec<(String, Column)> = left.columns().iter().map(|(n, c)| (n.clone(), c.gather(&li))).collect();
    for (name, col) in right.columns() {
        if name == on {
            continue;
        }
        let name = if left_names.contains(name.as_str()) {
            format!("{name}_right")
        } else {
            name.clone()
        };
        columns.push((name, col.gather(&ri)));
    }
    let mut lineage = LineageMap::new(&node.inputs);
    let mut ids = Vec::with_capacity(li.len());
    for (&i, &j) in li.iter().zip(&ri) {
        let (l, r) = (&left.row_ids()[i], &right.row_ids()[j]);
        let id = RowId::joined(l, r);
        lineage.insert(id.clone(), vec![vec![l.clone()], vec![r.clone()]]);
        ids.push(id);
    }
    Ok((Relation::new(ids, columns)?, lineage))
}

/// Regex labels, with explicit per-row overrides taking precedence. An
/// override key matches the full row id or any of its source components.
pub(crate) fn weak_labels(rel: &Relation, p: &WeakLabelParams) -> Result<Vec<i64>, EngineError> {
    let labeler = WeakLabeler::new(&p.positive_patterns, &p.negative_override_patterns).map_err(|e| {
        crate::plan::PlanError::InvalidRegex {
            node: p.output_column.clone(),
            pattern: String::new(),
            message: e.to_string(),
        }
    })?;
    let text = rel.str_column(&p.text_column)?;
    Ok(rel
        .row_ids()
        .iter()
        .zip(text)
        .map(|(id, t)| {
            let over = p
                .label_overrides
                .get(id.as_str())
                .or_else(|| id.components().find_map(|c| p.label_overrides.get(c)));
            i64::from(over.copied().unwrap_or_else(|| labeler.label(t)))
        })
        .collect())
}

fn binary_labels(node: &OperatorNode, rel: &Relation, column: &str) -> Result<Vec<u8>, EngineError> {
    let col = rel.column(column)?;
    (0..rel.len())
        .map(|i| {
            col.label(i).ok_or_else(|| EngineError::NotBinary {
                node: node.id.clone(),
                column: column.to_string(),
                row: rel.row_ids()[i].clone(),
            })
        })
        .collect()
}

/// Row `id` of the counterpart's output column, if the counterpart saw the
/// same input for that row.
fn reuse_row<'a>(
    cps: &'a [Counterpart<'_>],
    id: &RowId,
    same_input: impl Fn(&Relation, usize) -> bool,
    output_column: &str,
) -> Option<(&'a Column, usize)> {
    cps.iter().find_map(|cp| {
        let cin = cp.input_relation(0)?;
        let j = cin.position(id)?;
        if !same_input(cin, j) {
            return None;
        }
        let out = cp.output_relation()?;
        Some((out.column(output_column).ok()?, out.position(id)?))
    })
}

fn embed(
    node: &OperatorNode,
    rel: &Relation,
    cps: &[Counterpart<'_>],
    calls: &mut Calls<'_>,
    text_column: &str,
    dim: usize,
    output_column: &str,
) -> Result<Evaluated, EngineError> {
    let text = rel.str_column(text_column)?;
    let mut stats = NodeStats::default();
    let mut vectors = Vec::with_capacity(rel.len());
    for (i, id) in rel.row_ids().iter().enumerate() {
        let same = |cin: &Relation, j: usize| cin.str_column(text_column).is_ok_and(|t| t[j] == text[i]);
        match reuse_row(cps, id, same, output_column).and_then(|(c, k)| c.as_vector().map(|v| v[k].clone())) {
            Some(v) => {
                stats.reused_rows += 1;
                vectors.push(v);
            }
            None => {
                stats.computed_rows += 1;
                let input = format!("{dim}\u{0}{}", text[i]);
                let bits: Vec<u64> = calls.call(CallKind::Embed, Some(id), &input, || {
                    embed_text(&text[i], dim).into_iter().map(f64::to_bits).collect()
                });
                vectors.push(bits.into_iter().map(f64::from_bits).collect());
            }
        }
    }
    let out = rel.with_column(output_column, Column::Vector(vectors))?;
    let lineage = LineageMap::identity(&node.inputs[0], out.row_ids());
    Ok((Artifact::Relation(out), lineage, stats))
}

struct RagSpec<'s> {
    k: usize,
    text_column: &'s str,
    vector_column: &'s str,
    output_column: &'s str,
}

fn rag_classify(
    node: &OperatorNode,
    rel: &Relation,
    store: &VectorStore,
    cps: &[Counterpart<'_>],
    calls: &mut Calls<'_>,
    spec: &RagSpec<'_>,
) -> Result<Evaluated, EngineError> {
    if store.is_empty() && !rel.is_empty() {
        return Err(EngineError::EmptyStore(node.id.clone()));
    }
    let text = rel.str_column(spec.text_column)?;
    let vectors = rel.vector_column(spec.vector_column)?;
    if let Some(v) = vectors.iter().find(|v| v.len() != store.dim()) {
        return Err(EngineError::Dimension {
            node: node.id.clone(),
            expected: store.dim(),
            actual: v.len(),
        });
    }
    // a counterpart is usable only if retrieval would rank the same entries:
    // any vector insert, delete or change invalidates all of its rows
    let usable: Vec<(&Counterpart<'_>, &VectorStore)> = cps
        .iter()
        .filter_map(|cp| {
            let prior_store = cp.inputs.get(1)?.as_store()?;
            prior_store.same_vectors(store).then_some((cp, prior_store))
        })
        .collect();
    let vector_col = rel.column(spec.vector_column)?;
    let mut lineage = LineageMap::new(&node.inputs);
    let mut stats = NodeStats::default();
    let mut preds = Vec::with_capacity(rel.len());
    for (i, id) in rel.row_ids().iter().enumerate() {
        let reused = usable.iter().find_map(|(cp, prior_store)| {
            let cin = cp.input_relation(0)?;
            let j = cin.position(id)?;
            let same_row = cin.str_column(spec.text_column).ok()?[j] == text[i]
                && vector_col.cell_eq(i, cin.column(spec.vector_column).ok()?, j);
            if !same_row {
                return None;
            }
            let retrieved = cp.lineage.from_input(id, 1);
            if !retrieved.iter().all(|r| store.same_metadata(prior_store, r)) {
                return None;
            }
            let out = cp.output_relation()?;
            let k = out.position(id)?;
            let pred = out.column(spec.output_column).ok()?.as_int()?[k];
            Some((pred, retrieved.to_vec()))
        });
        let (pred, retrieved) = match reused {
            Some(hit) => {
                stats.reused_rows += 1;
                hit
            }
            None => {
                stats.computed_rows += 1;
                let nearest = store.nearest(&vectors[i], spec.k);
                let labels: Vec<u8> = nearest.iter().map(|&e| store.label(e)).collect();
                let prompt = format!(
                    "{}\u{0}{}",
                    text[i],
                    labels.iter().map(u8::to_string).collect::<String>()
                );
                let pred: u8 = calls.call(CallKind::LlmInfer, Some(id), &prompt, || majority_vote(&labels));
                (i64::from(pred), nearest.iter().map(|&e| store.ids()[e].clone()).collect())
            }
        };
        preds.push(pred);
        lineage.insert(id.clone(), vec![vec![id.clone()], retrieved]);
    }
    let out = rel.with_column(spec.output_column, Column::Int(preds))?;
    Ok((Artifact::Relation(out), lineage, stats))
}

/// Accuracy counts; with a counterpart over the same rows, only rows whose
/// prediction or truth changed are re-scored.
fn score_accuracy(rel: &Relation, cps: &[Counterpart<'_>], pred_column: &str, true_column: &str) -> Result<Score, EngineError> {
    let pred = rel.column(pred_column)?;
    let truth = rel.column(true_column)?;
    let ok = |p: &Column, t: &Column, i: usize| p.render(i) == t.render(i);
    let incremental = cps.iter().find_map(|cp| {
        let prior = cp.output.as_score()?;
        let cin = cp.input_relation(0)?;
        if cin.row_ids() != rel.row_ids() {
            return None;
        }
        let (pp, pt) = (cin.column(pred_column).ok()?, cin.column(true_column).ok()?);
        let mut correct = prior.correct as i64;
        for i in 0..rel.len() {
            if !pred.cell_eq(i, pp, i) || !truth.cell_eq(i, pt, i) {
                correct += i64::from(ok(pred, truth, i)) - i64::from(ok(pp, pt, i));
            }
        }
        Some(Score {
            correct: correct as usize,
            total: rel.len(),
        })
    });
    Ok(incremental.unwrap_or_else(|| Score {
        correct: (0..rel.len()).filter(|&i| ok(pred, truth, i)).count(),
        total: rel.len(),
    }))
}

/// Shared body of translate and spellcheck: rows accepted by `needs` are
/// rewritten by the service (one call each) unless a counterpart already
/// rewrote the same input; other rows pass through untouched.
#[allow(clippy::too_many_arguments)]
fn rewrite_text(
    node: &OperatorNode,
    rel: &Relation,
    cps: &[Counterpart<'_>],
    calls: &mut Calls<'_>,
    text_column: &str,
    kind: CallKind,
    needs: impl Fn(usize, &str) -> bool,
    service: impl Fn(&str) -> String,
) -> Result<Evaluated, EngineError> {
    let text = rel.str_column(text_column)?;
    let lang = rel.str_column("language").ok();
    let mut stats = NodeStats::default();
    let mut out_text = Vec::with_capacity(rel.len());
    for (i, id) in rel.row_ids().iter().enumerate() {
        if !needs(i, &text[i]) {
            out_text.push(text[i].clone());
            continue;
        }
        let same = |cin: &Relation, j: usize| {
            cin.str_column(text_column).is_ok_and(|t| t[j] == text[i])
                && match lang {
                    Some(l) => cin.str_column("language").is_ok_and(|cl| cl[j] == l[i]),
                    None => true,
                }
        };
        match reuse_row(cps, id, same, text_column).and_then(|(c, k)| c.as_str().map(|s| s[k].clone())) {
            Some(t) => {
                stats.reused_rows += 1;
                out_text.push(t);
            }
            None => {
                stats.computed_rows += 1;
                let t: String = calls.call(kind, Some(id), &text[i], || service(&text[i]));
                out_text.push(t);
            }
        }
    }
    let out = rel.with_column(text_column, Column::Str(out_text))?;
    let lineage = LineageMap::identity(&node.inputs[0], out.row_ids());
    Ok((Artifact::Relation(out), lineage, stats))
}
