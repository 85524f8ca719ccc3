//! Slice finding over categorical test features and the translation fix for
//! foreign-language slices.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::engine::InvocationLog;
use crate::plan::{apply_patch, Operator, OperatorKind, OperatorNode, PlanPatch};
use crate::relation::RowId;
use crate::suggest::select_explanation_tuples;

use super::{changed_predictions, guard, unique_id, Anatomy, Proposal, ShadowContext, ShadowError, ShadowKind, ShadowOutcome, TestFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceConfig {
    pub alpha: f64,
    pub min_support: usize,
    pub max_level: usize,
    pub top_k: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            alpha: 0.95,
            min_support: 10,
            max_level: 3,
            top_k: 3,
        }
    }
}

impl SliceConfig {
    fn validate(&self) -> Result<(), ShadowError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ShadowError::Config(format!("slices.alpha must be in (0, 1], got {}", self.alpha)));
        }
        if self.max_level == 0 || self.top_k == 0 {
            return Err(ShadowError::Config("slices.max_level and slices.top_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub predicates: BTreeMap<String, String>,
    pub support: usize,
    pub errors: usize,
    pub avg_error: f64,
    pub score: f64,
}

impl Slice {
    pub fn contains(&self, frame: &TestFrame, i: usize) -> bool {
        self.predicates.iter().all(|(f, v)| frame.feature(f, i) == Some(v.as_str()))
    }

    fn predicate_list(&self) -> Vec<(&str, &str)> {
        self.predicates.iter().map(|(f, v)| (f.as_str(), v.as_str())).collect()
    }
}

/// Ranking order: higher score, then fewer predicates, then lexicographic
/// predicates.
pub fn slice_order(a: &Slice, b: &Slice) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.predicates.len().cmp(&b.predicates.len()))
        .then_with(|| a.predicate_list().cmp(&b.predicate_list()))
}

/// `alpha (e_S / e - 1) - (1 - alpha) (n / |S| - 1)`.
pub fn slice_score(alpha: f64, slice_errors: f64, slice_size: f64, avg_error: f64, n: f64) -> f64 {
    alpha * ((slice_errors / slice_size) / avg_error - 1.0) - (1.0 - alpha) * (n / slice_size - 1.0)
}

type Bits = Vec<u64>;

fn bits_of(mask: impl Iterator<Item = bool>, n: usize) -> Bits {
    let mut bits = vec![0u64; n.div_ceil(64)];
    for (i, set) in mask.enumerate() {
        if set {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    bits
}

fn and(a: &Bits, b: &Bits) -> Bits {
    a.iter().zip(b).map(|(x, y)| x & y).collect()
}

fn count(a: &Bits) -> usize {
    a.iter().map(|w| w.count_ones() as usize).sum()
}

fn count_and(a: &Bits, b: &Bits) -> usize {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as usize).sum()
}

struct Basic {
    feature: usize,
    value: String,
    bits: Bits,
}

struct Candidate {
    preds: Vec<usize>,
    bits: Bits,
}

/// Level-wise lattice search with upper-bound pruning. Returns at most
/// `top_k` slices of support at least `min_support` and positive score.
pub fn slice_find(features: &[(String, Vec<String>)], errors: &[bool], config: &SliceConfig) -> Result<Vec<Slice>, ShadowError> {
    config.validate()?;
    if features.is_empty() {
        return Err(ShadowError::NoFeatures);
    }
    let n = errors.len();
    let total_errors = errors.iter().filter(|e| **e).count();
    if n == 0 || total_errors == 0 {
        return Ok(Vec::new());
    }
    let avg = total_errors as f64 / n as f64;
    let min_support = config.min_support.max(1);
    let score = |e: usize, s: usize| slice_score(config.alpha, e as f64, s as f64, avg, n as f64);
    // best score any sub-slice of size >= min_support could reach; the score
    // is monotone in the size on either side of size == errors
    let upper_bound = |e: usize, s: usize| {
        [min_support, e.clamp(min_support, s), s]
            .into_iter()
            .filter(|&size| size >= min_support && size <= s)
            .map(|size| score(e.min(size), size))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let error_bits = bits_of(errors.iter().copied(), n);

    let mut basics = Vec::new();
    for (f, (_, column)) in features.iter().enumerate() {
        let values: BTreeSet<&String> = column.iter().collect();
        for v in values {
            basics.push(Basic {
                feature: f,
                value: v.clone(),
                bits: bits_of(column.iter().map(|c| c == v), n),
            });
        }
    }

    let to_slice = |c: &Candidate, support: usize, errs: usize| Slice {
        predicates: c
            .preds
            .iter()
            .map(|&b| (features[basics[b].feature].0.clone(), basics[b].value.clone()))
            .collect(),
        support,
        errors: errs,
        avg_error: errs as f64 / support as f64,
        score: score(errs, support),
    };

    let mut top: Vec<Slice> = Vec::new();
    let mut level: Vec<Candidate> = (0..basics.len())
        .map(|b| Candidate {
            preds: vec![b],
            bits: basics[b].bits.clone(),
        })
        .collect();
    for depth in 1..=config.max_level {
        let mut survivors = Vec::new();
        for cand in level {
            let support = count(&cand.bits);
            if support < min_support {
                continue;
            }
            let errs = count_and(&cand.bits, &error_bits);
            let slice = to_slice(&cand, support, errs);
            if slice.score > 0.0 {
                top.push(slice);
            }
            survivors.push((cand, support, errs));
        }
        top.sort_by(slice_order);
        top.truncate(config.top_k);
        if depth == config.max_level {
            break;
        }
        let floor = if top.len() == config.top_k {
            top.last().map_or(f64::NEG_INFINITY, |s| s.score)
        } else {
            f64::NEG_INFINITY
        };
        let mut next = Vec::new();
        for (cand, support, errs) in survivors {
            let ub = upper_bound(errs, support);
            if ub <= 0.0 || ub < floor {
                continue;
            }
            let last = basics[*cand.preds.last().expect("non-empty")].feature;
            for (b, basic) in basics.iter().enumerate().filter(|(_, x)| x.feature > last) {
                let mut preds = cand.preds.clone();
                preds.push(b);
                next.push(Candidate {
                    preds,
                    bits: and(&cand.bits, &basic.bits),
                });
            }
        }
        if next.is_empty() {
            break;
        }
        level = next;
    }
    Ok(top)
}

pub(super) fn run(ctx: &ShadowContext<'_>, anatomy: &Anatomy) -> Result<ShadowOutcome, ShadowError> {
    let mut log = InvocationLog::default();
    let base = ctx.detection_base(&mut log)?;
    let frame = TestFrame::build(&base, anatomy, ctx.data)?;
    let errors = frame.errors();
    let slices = slice_find(&frame.features, &errors, &ctx.config.slices)?;
    let mut finding = json!({
        "n_test": frame.len(),
        "avg_error": if frame.is_empty() { 0.0 } else { errors.iter().filter(|e| **e).count() as f64 / frame.len() as f64 },
        "slices": slices,
    });
    let mut outcome = ShadowOutcome {
        kind: ShadowKind::Slices,
        finding: finding.clone(),
        proposal: None,
        runs: Vec::new(),
        invocations: InvocationLog::default(),
    };
    let note = |reason: &str, finding: &mut serde_json::Value| {
        finding["no_fix"] = json!(reason);
    };

    let foreign = &ctx.data.lexicon().language;
    let Some(top) = slices.first() else {
        note("no slice with elevated error", &mut finding);
        outcome.finding = finding;
        outcome.invocations = log;
        return Ok(outcome);
    };
    let language = match top.predicates.get("language") {
        Some(l) if l == foreign => l.clone(),
        _ => {
            note("top slice is not a translatable language slice", &mut finding);
            outcome.finding = finding;
            outcome.invocations = log;
            return Ok(outcome);
        }
    };
    let already = base.plan.nodes_of_kind(OperatorKind::Translate).any(|n| {
        matches!(n.operator(), Ok(Operator::Translate { languages, .. }) if languages.contains(&language))
    });
    if already {
        note("plan already translates this language", &mut finding);
        outcome.finding = finding;
        outcome.invocations = log;
        return Ok(outcome);
    }

    let node = OperatorNode::new(
        &unique_id(&base.plan, &format!("translate_{language}")),
        OperatorKind::Translate,
        json!({"text_column": anatomy.test_text_column, "languages": [language]}),
        &[],
    );
    let patch = PlanPatch::insert(node, &anatomy.test_upstream);
    let plan = apply_patch(&base.plan, &patch)?;
    let run = ctx.run_variant(&plan, ctx.data, &[], &mut log)?;
    let fixed = TestFrame::build(&run, anatomy, ctx.data)?;
    let flipped = changed_predictions(&frame, &fixed);
    let affected: Vec<RowId> = (0..frame.len())
        .filter(|&i| top.contains(&frame, i))
        .map(|i| frame.ids[i].clone())
        .collect();
    let explanation = select_explanation_tuples(
        &affected,
        &flipped,
        &fixed,
        &run,
        &anatomy.scored,
        ctx.config.explanation_cap,
        |id| {
            let before = frame.position(id).map_or("?", |i| frame.pred[i].as_str());
            let after = fixed.position(id).map_or("?", |i| fixed.pred[i].as_str());
            if before == after {
                format!("in slice, prediction stays {after} after translation")
            } else {
                format!("prediction flips {before}\u{2192}{after} after translation")
            }
        },
    );
    let proposal = Proposal {
        title: format!("Translate `{language}` posts before embedding ({} rows in slice)", top.support),
        patch,
        plan,
        accuracy_before: base.accuracy(),
        accuracy_after: run.accuracy(),
        proxy: false,
        explanation,
        run: ctx.prepare.then(|| run.clone()),
    };
    finding["fix_evaluation"] = json!({
        "rows_in_slice": affected.len(),
        "prediction_changes": flipped.len(),
        "invocations": run.invocations.counts(),
    });
    outcome.proposal = guard(proposal, &mut finding);
    outcome.finding = finding;
    outcome.runs.push(run);
    outcome.invocations = log;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(cols: &[(&str, &[&str])]) -> Vec<(String, Vec<String>)> {
        cols.iter()
            .map(|(n, v)| (n.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn whole_dataset_scores_zero() {
        assert_eq!(slice_score(0.95, 20.0, 100.0, 0.2, 100.0), 0.0);
    }

    #[test]
    fn no_errors_gives_no_slices() {
        let f = feats(&[("a", &["x", "y"])]);
        assert!(slice_find(&f, &[false, false], &SliceConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn no_features_is_an_error() {
        assert!(matches!(
            slice_find(&[], &[true], &SliceConfig::default()),
            Err(ShadowError::NoFeatures)
        ));
    }

    #[test]
    fn error_concentrated_value_ranks_first() {
        let a: Vec<&str> = (0..40).map(|i| if i < 10 { "bad" } else { "ok" }).collect();
        let b: Vec<&str> = (0..40).map(|i| if i % 2 == 0 { "p" } else { "q" }).collect();
        let errors: Vec<bool> = (0..40).map(|i| i < 10 || i == 20).collect();
        let f = feats(&[("a", &a), ("b", &b)]);
        let cfg = SliceConfig {
            min_support: 3,
            ..SliceConfig::default()
        };
        let top = slice_find(&f, &errors, &cfg).unwrap();
        assert_eq!(top[0].predicates, BTreeMap::from([("a".to_string(), "bad".to_string())]));
        assert_eq!(top[0].support, 10);
        assert_eq!(top[0].errors, 10);
        assert!(top.windows(2).all(|w| slice_order(&w[0], &w[1]) != Ordering::Greater));
    }

    #[test]
    fn rejects_bad_alpha() {
        let f = feats(&[("a", &["x"])]);
        let cfg = SliceConfig {
            alpha: 0.0,
            ..SliceConfig::default()
        };
        assert!(matches!(slice_find(&f, &[true], &cfg), Err(ShadowError::Config(_))));
    }
}
