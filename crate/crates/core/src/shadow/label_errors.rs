//! Label-error detection with exact KNN-Shapley values, and evaluation of
//! flipping the most harmful weak labels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};

use crate::engine::{majority_vote, InvocationLog, RunResult};
use crate::ivm::affected_test_rows;
use crate::plan::{apply_patch, PlanPatch};
use crate::relation::RowId;
use crate::suggest::select_explanation_tuples;
use crate::text::dot;

use super::{
    changed_predictions, guard, Anatomy, PipelineKind, Proposal, ShadowContext, ShadowError, ShadowKind, ShadowOutcome,
    TestFrame,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Update store metadata and re-infer only test rows that retrieved a
    /// flipped row.
    RagIncremental,
    /// Retrain the model on the flipped labels.
    TrainRetrain,
    /// Estimate the impact with a KNN majority classifier on the cached
    /// embeddings.
    TrainProxy,
}

impl LabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::RagIncremental => "rag_incremental",
            LabelMode::TrainRetrain => "train_retrain",
            LabelMode::TrainProxy => "train_proxy",
        }
    }

    pub fn default_for(kind: PipelineKind) -> LabelMode {
        match kind {
            PipelineKind::Rag => LabelMode::RagIncremental,
            PipelineKind::Train => LabelMode::TrainRetrain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelErrorConfig {
    /// Neighbourhood size of the valuation and the proxy classifier.
    pub k: usize,
    pub flip_count: usize,
    /// Defaults to the mode matching the pipeline kind.
    pub mode: Option<LabelMode>,
}

impl Default for LabelErrorConfig {
    fn default() -> Self {
        LabelErrorConfig {
            k: 5,
            flip_count: 40,
            mode: None,
        }
    }
}

/// A row with its vector and binary label.
#[derive(Debug, Clone, Copy)]
pub struct LabeledPoint<'a> {
    pub id: &'a RowId,
    pub vector: &'a [f64],
    pub label: u8,
}

/// Mean Shapley value per train row, aligned with the train slice passed in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapleyScores {
    pub values: Vec<(RowId, f64)>,
    pub k: usize,
    pub n_test: usize,
}

/// Train indices by descending similarity to `query`, ties by row id.
fn neighbour_order(train: &[LabeledPoint<'_>], query: &[f64]) -> Vec<usize> {
    let sims: Vec<f64> = train.iter().map(|p| dot(p.vector, query)).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then_with(|| train[a].id.cmp(train[b].id)));
    order
}

/// Exact Shapley values of every train row for one test point under the
/// KNN utility, index-aligned with `train`.
pub fn knn_shapley_single(train: &[LabeledPoint<'_>], test: &LabeledPoint<'_>, k: usize) -> Vec<f64> {
    let n = train.len();
    let mut values = vec![0.0; n];
    if n == 0 {
        return values;
    }
    let order = neighbour_order(train, test.vector);
    let hit = |rank: usize| f64::from(u8::from(train[order[rank]].label == test.label));
    let kf = k as f64;
    let mut s = hit(n - 1) * k.min(n) as f64 / (kf * n as f64);
    values[order[n - 1]] = s;
    for rank in (0..n - 1).rev() {
        let i = rank + 1;
        s += (hit(rank) - hit(rank + 1)) / kf * k.min(i) as f64 / i as f64;
        values[order[rank]] = s;
    }
    values
}

/// Mean over test points (in ascending row id order) of the per-point
/// values.
pub fn knn_shapley(train: &[LabeledPoint<'_>], test: &[LabeledPoint<'_>], k: usize) -> Result<ShapleyScores, ShadowError> {
    if k == 0 {
        return Err(ShadowError::Config("label_errors.k must be at least 1".into()));
    }
    if test.is_empty() {
        return Err(ShadowError::NoTestPoints);
    }
    let mut tests: Vec<&LabeledPoint<'_>> = test.iter().collect();
    tests.sort_by(|a, b| a.id.cmp(b.id));
    let mut sum = vec![0.0; train.len()];
    for t in tests {
        for (acc, v) in sum.iter_mut().zip(knn_shapley_single(train, t, k)) {
            *acc += v;
        }
    }
    let n_test = test.len() as f64;
    Ok(ShapleyScores {
        values: train.iter().zip(sum).map(|(p, s)| (p.id.clone(), s / n_test)).collect(),
        k,
        n_test: test.len(),
    })
}

/// Shapley values by averaging marginal contributions over all orderings of
/// at most 8 train rows.
pub fn brute_force_shapley(train: &[LabeledPoint<'_>], test: &LabeledPoint<'_>, k: usize) -> Result<Vec<f64>, ShadowError> {
    let n = train.len();
    if n > 8 {
        return Err(ShadowError::TooManyRows(n));
    }
    if k == 0 {
        return Err(ShadowError::Config("k must be at least 1".into()));
    }
    let order = neighbour_order(train, test.vector);
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let utility = |members: &[usize]| {
        let mut by_rank: Vec<usize> = members.to_vec();
        by_rank.sort_by_key(|&i| rank[i]);
        let hits = by_rank
            .iter()
            .take(k)
            .filter(|&&i| train[i].label == test.label)
            .count();
        hits as f64 / k as f64
    };
    let mut totals = vec![0.0; n];
    let mut perm: Vec<usize> = (0..n).collect();
    let mut count = 0u64;
    permute(&mut perm, 0, &mut |p| {
        count += 1;
        let mut prev = 0.0;
        for j in 0..p.len() {
            let v = utility(&p[..=j]);
            totals[p[j]] += v - prev;
            prev = v;
        }
    });
    Ok(totals.into_iter().map(|t| t / count.max(1) as f64).collect())
}

fn permute(items: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start + 1 >= items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlipSet {
    pub rows: Vec<RowId>,
    pub rule: String,
}

/// The `m` most negative values below zero, ties by row id.
pub fn select_flips(scores: &ShapleyScores, m: usize) -> FlipSet {
    let mut negative: Vec<&(RowId, f64)> = scores.values.iter().filter(|(_, v)| *v < 0.0).collect();
    negative.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    FlipSet {
        rows: negative.into_iter().take(m).map(|(id, _)| id.clone()).collect(),
        rule: format!("top-{m} most negative"),
    }
}

/// Predictions of a k-nearest-neighbour majority vote (ties to the nearest).
pub fn knn_proxy_predictions(train: &[LabeledPoint<'_>], test: &[LabeledPoint<'_>], k: usize) -> Vec<u8> {
    test.iter()
        .map(|t| {
            let labels: Vec<u8> = neighbour_order(train, t.vector)
                .into_iter()
                .take(k)
                .map(|i| train[i].label)
                .collect();
            majority_vote(&labels)
        })
        .collect()
}

fn proxy_accuracy(preds: &[u8], test: &[LabeledPoint<'_>]) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let ok = preds.iter().zip(test).filter(|(p, t)| **p == t.label).count();
    ok as f64 / test.len() as f64
}

struct Points {
    train_ids: Vec<RowId>,
    train_vectors: Vec<std::sync::Arc<[f64]>>,
    train_labels: Vec<u8>,
    test_ids: Vec<RowId>,
    test_vectors: Vec<std::sync::Arc<[f64]>>,
    test_labels: Vec<u8>,
}

impl Points {
    fn collect(run: &RunResult, anatomy: &Anatomy) -> Result<Points, ShadowError> {
        let (train_ids, train_vectors, train_labels) = match anatomy.kind {
            PipelineKind::Rag => {
                let store = run.store(&anatomy.train_node)?;
                (store.ids().to_vec(), store.vectors().to_vec(), store.labels())
            }
            PipelineKind::Train => {
                let rel = run.relation(&anatomy.train_input)?;
                let col = rel.column(&anatomy.label_column)?;
                let labels = (0..rel.len())
                    .map(|i| {
                        col.label(i)
                            .ok_or_else(|| ShadowError::Shape(format!("label column `{}` is not binary", anatomy.label_column)))
                    })
                    .collect::<Result<_, _>>()?;
                (rel.row_ids().to_vec(), rel.vector_column(&anatomy.train_vector_column)?.to_vec(), labels)
            }
        };
        let scored = run.relation(&anatomy.scored)?;
        let truth = scored.column(&anatomy.true_column)?;
        let embedded = run.relation(&anatomy.test_embed)?;
        let vectors = embedded.vector_column(&anatomy.test_vector_column)?;
        let mut test_vectors = Vec::with_capacity(scored.len());
        let mut test_labels = Vec::with_capacity(scored.len());
        for (i, id) in scored.row_ids().iter().enumerate() {
            let j = embedded
                .position(id)
                .ok_or_else(|| ShadowError::Shape(format!("scored row `{id}` has no test embedding")))?;
            test_vectors.push(vectors[j].clone());
            test_labels.push(
                truth
                    .label(i)
                    .ok_or_else(|| ShadowError::Shape(format!("truth column `{}` is not binary", anatomy.true_column)))?,
            );
        }
        Ok(Points {
            train_ids,
            train_vectors,
            train_labels,
            test_ids: scored.row_ids().to_vec(),
            test_vectors,
            test_labels,
        })
    }

    fn train(&self, labels: &[u8]) -> Vec<LabeledPoint<'_>> {
        (0..self.train_ids.len())
            .map(|i| LabeledPoint {
                id: &self.train_ids[i],
                vector: &self.train_vectors[i],
                label: labels[i],
            })
            .collect()
    }

    fn test(&self) -> Vec<LabeledPoint<'_>> {
        (0..self.test_ids.len())
            .map(|i| LabeledPoint {
                id: &self.test_ids[i],
                vector: &self.test_vectors[i],
                label: self.test_labels[i],
            })
            .collect()
    }
}

pub(super) fn run(ctx: &ShadowContext<'_>, anatomy: &Anatomy) -> Result<ShadowOutcome, ShadowError> {
    let cfg = &ctx.config.label_errors;
    let mode = cfg.mode.unwrap_or(LabelMode::default_for(anatomy.kind));
    match (mode, anatomy.kind) {
        (LabelMode::RagIncremental, PipelineKind::Train) => {
            return Err(ShadowError::ModeMismatch {
                mode: mode.as_str(),
                needs: "rag",
            })
        }
        (LabelMode::TrainRetrain | LabelMode::TrainProxy, PipelineKind::Rag) => {
            return Err(ShadowError::ModeMismatch {
                mode: mode.as_str(),
                needs: "train",
            })
        }
        _ => {}
    }
    let mut log = InvocationLog::default();
    let base = ctx.detection_base(&mut log)?;
    let points = Points::collect(&base, anatomy)?;
    let train = points.train(&points.train_labels);
    let test = points.test();
    let scores = knn_shapley(&train, &test, cfg.k)?;
    let flips = select_flips(&scores, cfg.flip_count);
    let negative = scores.values.iter().filter(|(_, v)| *v < 0.0).count();
    let mut finding = json!({
        "k": cfg.k,
        "mode": mode.as_str(),
        "n_train": train.len(),
        "n_test": test.len(),
        "negative_values": negative,
        "flips": flips,
        "flip_values": flips.rows.iter().map(|id| {
            let v = scores.values.iter().find(|(r, _)| r == id).map_or(0.0, |(_, v)| *v);
            json!({"row_id": id, "value": v})
        }).collect::<Vec<_>>(),
    });
    let mut outcome = ShadowOutcome {
        kind: ShadowKind::LabelErrors,
        finding: Json::Null,
        proposal: None,
        runs: Vec::new(),
        invocations: InvocationLog::default(),
    };
    let Some(label_node) = anatomy.label_node.as_ref().filter(|_| !flips.rows.is_empty()) else {
        finding["no_fix"] = json!(if flips.rows.is_empty() {
            "no train row has a negative value"
        } else {
            "labels do not come from a weak-labeling node"
        });
        outcome.finding = finding;
        outcome.invocations = log;
        return Ok(outcome);
    };

    let index: BTreeMap<&RowId, usize> = points.train_ids.iter().zip(0..).collect();
    let mut flipped_labels = points.train_labels.clone();
    let mut overrides: Map<String, Json> = base
        .plan
        .node(label_node)
        .and_then(|n| n.params.get("label_overrides"))
        .and_then(Json::as_object)
        .cloned()
        .unwrap_or_default();
    for id in &flips.rows {
        let i = index[id];
        flipped_labels[i] = 1 - flipped_labels[i];
        overrides.insert(id.to_string(), json!(flipped_labels[i]));
    }
    let flip_set: BTreeSet<RowId> = flips.rows.iter().cloned().collect();
    let patch = PlanPatch::update(label_node, "label_overrides", Json::Object(overrides));
    let plan = apply_patch(&base.plan, &patch)?;
    let title = format!("Flip {} likely mislabeled weak labels", flips.rows.len());
    let frame = TestFrame::build(&base, anatomy, ctx.data)?;
    let cap = ctx.config.explanation_cap;

    let proposal = if mode == LabelMode::TrainProxy {
        let before = knn_proxy_predictions(&train, &test, cfg.k);
        let after = knn_proxy_predictions(&points.train(&flipped_labels), &test, cfg.k);
        let (acc_b, acc_a) = (proxy_accuracy(&before, &test), proxy_accuracy(&after, &test));
        finding["proxy"] = json!({"accuracy_before": acc_b, "accuracy_after": acc_a});
        let changed: BTreeSet<RowId> = points
            .test_ids
            .iter()
            .zip(before.iter().zip(&after))
            .filter(|(_, (b, a))| b != a)
            .map(|(id, _)| id.clone())
            .collect();
        let explanation = select_explanation_tuples(&points.test_ids, &changed, &frame, &base, &anatomy.scored, cap, |id| {
            if changed.contains(id) {
                "proxy prediction changes after flips".to_string()
            } else {
                "scored by the proxy".to_string()
            }
        });
        let accuracy_before = base.accuracy();
        Proposal {
            title,
            patch,
            plan,
            accuracy_before,
            accuracy_after: (accuracy_before + (acc_a - acc_b)).clamp(0.0, 1.0),
            proxy: true,
            explanation,
            run: None,
        }
    } else {
        let run = ctx.run_variant(&plan, ctx.data, &[], &mut log)?;
        let fixed = TestFrame::build(&run, anatomy, ctx.data)?;
        let changed = changed_predictions(&frame, &fixed);
        let affected: Vec<RowId> = match anatomy.kind {
            PipelineKind::Rag => {
                let rows = affected_test_rows(&base, &flip_set)?;
                finding["affected_test_rows"] = json!(rows.len());
                rows.into_iter().collect()
            }
            PipelineKind::Train => points.test_ids.clone(),
        };
        finding["fix_evaluation"] = json!({
            "prediction_changes": changed.len(),
            "invocations": run.invocations.counts(),
        });
        let explanation = select_explanation_tuples(&affected, &changed, &fixed, &run, &anatomy.scored, cap, |id| {
            let before = frame.position(id).map_or("?", |i| frame.pred[i].as_str());
            let after = fixed.position(id).map_or("?", |i| fixed.pred[i].as_str());
            if before == after {
                "relied on a flipped train row, prediction unchanged".to_string()
            } else {
                format!("prediction flips {before}\u{2192}{after} after label flips")
            }
        });
        let proposal = Proposal {
            title,
            patch,
            plan,
            accuracy_before: base.accuracy(),
            accuracy_after: run.accuracy(),
            proxy: false,
            explanation,
            run: ctx.prepare.then(|| run.clone()),
        };
        outcome.runs.push(run);
        proposal
    };
    outcome.proposal = guard(proposal, &mut finding);
    outcome.finding = finding;
    outcome.invocations = log;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts<'a>(ids: &'a [RowId], vecs: &'a [Vec<f64>], labels: &[u8]) -> Vec<LabeledPoint<'a>> {
        ids.iter()
            .zip(vecs)
            .zip(labels)
            .map(|((id, v), &label)| LabeledPoint { id, vector: v, label })
            .collect()
    }

    #[test]
    fn single_correct_row_has_value_one_for_k1() {
        let ids = [RowId::from("a")];
        let v = [vec![1.0, 0.0]];
        let train = pts(&ids, &v, &[1]);
        let tid = RowId::from("t");
        let t = LabeledPoint {
            id: &tid,
            vector: &[1.0, 0.0],
            label: 1,
        };
        assert_eq!(knn_shapley_single(&train, &t, 1), vec![1.0]);
        assert_eq!(brute_force_shapley(&train, &t, 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn three_rows_k1_match_permutations() {
        let ids = [RowId::from("a"), RowId::from("b"), RowId::from("c")];
        let v = [vec![1.0, 0.0], vec![0.8, 0.6], vec![0.0, 1.0]];
        let tid = RowId::from("t");
        let t = LabeledPoint {
            id: &tid,
            vector: &[0.6, 0.8],
            label: 1,
        };
        for labels in [[1, 0, 1], [0, 0, 1], [1, 1, 1], [0, 1, 0]] {
            let train = pts(&ids, &v, &labels);
            let fast = knn_shapley_single(&train, &t, 1);
            let slow = brute_force_shapley(&train, &t, 1).unwrap();
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{fast:?} {slow:?}");
            }
        }
    }

    #[test]
    fn brute_force_rejects_nine_rows() {
        let ids: Vec<RowId> = (0..9).map(|i| RowId::from(format!("r{i}"))).collect();
        let v: Vec<Vec<f64>> = (0..9).map(|_| vec![1.0]).collect();
        let train = pts(&ids, &v, &[1; 9]);
        let tid = RowId::from("t");
        let t = LabeledPoint {
            id: &tid,
            vector: &[1.0],
            label: 1,
        };
        assert!(matches!(brute_force_shapley(&train, &t, 1), Err(ShadowError::TooManyRows(9))));
    }

    #[test]
    fn flips_take_most_negative_first() {
        let scores = ShapleyScores {
            values: vec![
                ("a".into(), 0.3),
                ("b".into(), -0.2),
                ("c".into(), -0.5),
                ("d".into(), -0.2),
            ],
            k: 1,
            n_test: 1,
        };
        let ids = |f: FlipSet| f.rows.iter().map(|r| r.to_string()).collect::<Vec<_>>();
        assert_eq!(ids(select_flips(&scores, 2)), ["c", "b"]);
        assert_eq!(ids(select_flips(&scores, 10)), ["c", "b", "d"]);
        let positive = ShapleyScores {
            values: vec![("a".into(), 0.1)],
            k: 1,
            n_test: 1,
        };
        assert!(select_flips(&positive, 3).rows.is_empty());
    }

    #[test]
    fn no_test_points_is_an_error() {
        assert!(matches!(knn_shapley(&[], &[], 1), Err(ShadowError::NoTestPoints)));
    }
}
