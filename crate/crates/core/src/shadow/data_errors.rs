//! Typo robustness: corrupt a seeded share of test posts, measure the
//! accuracy drop on those rows only, and evaluate a spell-check fix.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::Dataset;
use crate::engine::{CallKind, InvocationLog, RunResult};
use crate::plan::{apply_patch, OperatorKind, OperatorNode, PlanPatch};
use crate::relation::{Column, Relation, RowId};
use crate::suggest::select_explanation_tuples;
use crate::text::{apply_typo, TypoOp};

use super::{
    changed_predictions, guard, unique_id, Anatomy, Proposal, ShadowContext, ShadowError, ShadowKind, ShadowOutcome,
    TestFrame,
};

/// Shortest word a typo may be placed in.
pub const MIN_WORD_LEN: usize = 4;
const MAX_ATTEMPTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpWeights {
    pub swap_adjacent: f64,
    pub delete_char: f64,
    pub substitute_char: f64,
}

impl Default for OpWeights {
    fn default() -> Self {
        OpWeights {
            swap_adjacent: 0.4,
            delete_char: 0.3,
            substitute_char: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub fraction: f64,
    pub seed: u64,
    pub ops: OpWeights,
    pub per_word_probability: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            fraction: 0.10,
            seed: 42,
            ops: OpWeights::default(),
            per_word_probability: 0.3,
        }
    }
}

impl CorruptionSpec {
    fn validate(&self) -> Result<(), ShadowError> {
        let bad = |m: &str| Err(ShadowError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.fraction) {
            return bad("data_errors.fraction must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.per_word_probability) {
            return bad("data_errors.per_word_probability must be in [0, 1]");
        }
        let w = [self.ops.swap_adjacent, self.ops.delete_char, self.ops.substitute_char];
        if w.iter().any(|x| *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("data_errors.ops weights must be non-negative and sum to 1");
        }
        Ok(())
    }

    fn pick_op<R: Rng>(&self, rng: &mut R) -> TypoOp {
        let x: f64 = rng.gen();
        if x < self.ops.swap_adjacent {
            TypoOp::SwapAdjacent
        } else if x < self.ops.swap_adjacent + self.ops.delete_char {
            TypoOp::DeleteChar
        } else {
            TypoOp::SubstituteChar
        }
    }
}

/// Number of rows `spec` corrupts out of `n`.
pub fn corrupted_count(spec: &CorruptionSpec, n: usize) -> usize {
    ((spec.fraction * n as f64).round() as usize).min(n)
}

/// One corruption attempt: every eligible word independently receives a
/// typo with the per-word probability.
fn corrupt_once<R: Rng>(words: &[&str], spec: &CorruptionSpec, rng: &mut R) -> Vec<String> {
    words
        .iter()
        .map(|w| {
            if w.chars().count() >= MIN_WORD_LEN && rng.gen_bool(spec.per_word_probability) {
                let op = spec.pick_op(rng);
                apply_typo(w, op, rng).unwrap_or_else(|| w.to_string())
            } else {
                w.to_string()
            }
        })
        .collect()
}

/// Forced single typo in the longest eligible word, for rows where random
/// attempts keep missing.
fn corrupt_forced<R: Rng>(words: &[&str], vocabulary: &BTreeSet<String>, rng: &mut R) -> Option<Vec<String>> {
    let (i, w) = words
        .iter()
        .enumerate()
        .filter(|(_, w)| w.chars().count() >= MIN_WORD_LEN)
        .max_by_key(|(i, w)| (w.chars().count(), std::cmp::Reverse(*i)))?;
    for _ in 0..MAX_ATTEMPTS {
        let typo = apply_typo(w, TypoOp::SubstituteChar, rng)?;
        if !vocabulary.contains(&typo) {
            let mut out: Vec<String> = words.iter().map(|w| w.to_string()).collect();
            out[i] = typo;
            return Some(out);
        }
    }
    None
}

/// Corrupts `round(fraction * n)` rows chosen uniformly without replacement.
/// Each selected row gets at least one changed word outside `vocabulary`;
/// all other rows are returned untouched.
pub fn corrupt_typos(
    rel: &Relation,
    text_column: &str,
    spec: &CorruptionSpec,
    vocabulary: &BTreeSet<String>,
) -> Result<(Relation, BTreeSet<RowId>), ShadowError> {
    spec.validate()?;
    let text = rel.str_column(text_column)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen = sample(&mut rng, rel.len(), corrupted_count(spec, rel.len())).into_vec();
    chosen.sort_unstable();
    let mut out = text.to_vec();
    let mut corrupted = BTreeSet::new();
    for i in chosen {
        let words: Vec<&str> = text[i].split(' ').collect();
        let observable = |cand: &[String]| {
            cand.iter()
                .zip(&words)
                .any(|(c, w)| c != w && !vocabulary.contains(c))
        };
        let attempt = (0..MAX_ATTEMPTS)
            .map(|_| corrupt_once(&words, spec, &mut rng))
            .find(|c| observable(c))
            .or_else(|| corrupt_forced(&words, vocabulary, &mut rng))
            .ok_or_else(|| ShadowError::Uncorruptible(rel.row_ids()[i].clone()))?;
        out[i] = attempt.join(" ");
        corrupted.insert(rel.row_ids()[i].clone());
    }
    Ok((rel.with_column(text_column, Column::Str(out))?, corrupted))
}

/// Accuracy on clean and corrupted test data, and what the corrupted run
/// cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub corrupted_rows: BTreeSet<RowId>,
    pub accuracy_clean: f64,
    pub accuracy_corrupted: f64,
    pub accuracy_fixed: Option<f64>,
    pub detection_invocations: std::collections::BTreeMap<CallKind, usize>,
    pub fix_invocations: std::collections::BTreeMap<CallKind, usize>,
}

/// The dataset with the test source replaced by its corrupted version.
pub fn corrupted_dataset(
    data: &Dataset,
    base: &RunResult,
    anatomy: &Anatomy,
    spec: &CorruptionSpec,
) -> Result<(Dataset, BTreeSet<RowId>), ShadowError> {
    let source = base.relation(&anatomy.test_source)?;
    let (corrupted, rows) = corrupt_typos(source, &anatomy.test_text_column, spec, data.lexicon().vocabulary())?;
    Ok((data.with_table(&anatomy.test_source_path, &corrupted), rows))
}

pub(super) fn run(ctx: &ShadowContext<'_>, anatomy: &Anatomy) -> Result<ShadowOutcome, ShadowError> {
    let mut log = InvocationLog::default();
    let base = ctx.detection_base(&mut log)?;
    let spec = &ctx.config.data_errors;
    let (dirty, rows) = corrupted_dataset(ctx.data, &base, anatomy, spec)?;
    let detect = ctx.run_variant(&base.plan, &dirty, &[], &mut log)?;
    let mut report = RobustnessReport {
        corrupted_rows: rows.clone(),
        accuracy_clean: base.accuracy(),
        accuracy_corrupted: detect.accuracy(),
        accuracy_fixed: None,
        detection_invocations: detect.invocations.counts(),
        fix_invocations: Default::default(),
    };
    let mut outcome = ShadowOutcome {
        kind: ShadowKind::DataErrors,
        finding: serde_json::Value::Null,
        proposal: None,
        runs: Vec::new(),
        invocations: InvocationLog::default(),
    };
    let already = base.plan.nodes_of_kind(OperatorKind::Spellcheck).next().is_some();
    if already {
        let mut finding = json!({"spec": spec, "report": report});
        finding["no_fix"] = json!("plan already spell-checks");
        outcome.finding = finding;
        outcome.runs.push(detect);
        outcome.invocations = log;
        return Ok(outcome);
    }

    let node = OperatorNode::new(
        &unique_id(&base.plan, "spellcheck"),
        OperatorKind::Spellcheck,
        json!({"text_column": anatomy.test_text_column}),
        &[],
    );
    let patch = PlanPatch::insert(node, &anatomy.test_upstream);
    let plan = apply_patch(&base.plan, &patch)?;
    let fixed_run = ctx.run_variant(&plan, &dirty, &[&detect], &mut log)?;
    report.accuracy_fixed = Some(fixed_run.accuracy());
    report.fix_invocations = fixed_run.invocations.counts();

    let corrupted_frame = TestFrame::build(&detect, anatomy, &dirty)?;
    let fixed_frame = TestFrame::build(&fixed_run, anatomy, &dirty)?;
    let flipped = changed_predictions(&corrupted_frame, &fixed_frame);
    let affected: Vec<RowId> = rows.iter().cloned().collect();
    let explanation = select_explanation_tuples(
        &affected,
        &flipped,
        &fixed_frame,
        &fixed_run,
        &anatomy.scored,
        ctx.config.explanation_cap,
        |id| {
            let before = corrupted_frame.position(id).map_or("?", |i| corrupted_frame.pred[i].as_str());
            let after = fixed_frame.position(id).map_or("?", |i| fixed_frame.pred[i].as_str());
            if before == after {
                format!("typo'd post, prediction stays {after} after spell-check")
            } else {
                format!("prediction flips {before}\u{2192}{after} after spell-check")
            }
        },
    );
    // installing the fix means running the patched plan on the clean data
    let install = if ctx.prepare {
        Some(ctx.run_variant(&plan, ctx.data, &[&fixed_run], &mut log)?)
    } else {
        None
    };
    let proposal = Proposal {
        title: format!("Spell-check test posts before embedding ({} typo'd rows evaluated)", rows.len()),
        patch,
        plan,
        accuracy_before: report.accuracy_corrupted,
        accuracy_after: fixed_run.accuracy(),
        proxy: false,
        explanation,
        run: install,
    };
    let mut finding = json!({"spec": spec, "report": report, "prediction_changes": flipped.len()});
    outcome.proposal = guard(proposal, &mut finding);
    outcome.finding = finding;
    outcome.runs.push(detect);
    outcome.runs.push(fixed_run);
    outcome.invocations = log;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(texts: &[&str]) -> Relation {
        Relation::new(
            (0..texts.len()).map(|i| RowId::from(format!("t:{i}"))).collect(),
            vec![("text".into(), Column::Str(texts.iter().map(|s| s.to_string()).collect()))],
        )
        .unwrap()
    }

    fn vocab(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn exact_count_and_untouched_rows() {
        let texts: Vec<String> = (0..50).map(|i| format!("feeling rather tired today number{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let r = rel(&refs);
        let v = vocab(&["feeling", "rather", "tired", "today"]);
        let (out, rows) = corrupt_typos(&r, "text", &CorruptionSpec::default(), &v).unwrap();
        assert_eq!(rows.len(), 5);
        let a = r.str_column("text").unwrap();
        let b = out.str_column("text").unwrap();
        for (i, id) in r.row_ids().iter().enumerate() {
            assert_eq!(rows.contains(id), a[i] != b[i], "{id}");
        }
    }

    #[test]
    fn zero_fraction_is_identity() {
        let r = rel(&["some words here", "more words there"]);
        let spec = CorruptionSpec {
            fraction: 0.0,
            ..CorruptionSpec::default()
        };
        let (out, rows) = corrupt_typos(&r, "text", &spec, &BTreeSet::new()).unwrap();
        assert!(rows.is_empty());
        assert_eq!(out, r);
    }

    #[test]
    fn short_words_only_cannot_be_corrupted() {
        let r = rel(&["a an the"]);
        let spec = CorruptionSpec {
            fraction: 1.0,
            ..CorruptionSpec::default()
        };
        assert!(matches!(
            corrupt_typos(&r, "text", &spec, &BTreeSet::new()),
            Err(ShadowError::Uncorruptible(_))
        ));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let r = rel(&["words"]);
        let spec = CorruptionSpec {
            ops: OpWeights {
                swap_adjacent: 0.5,
                delete_char: 0.5,
                substitute_char: 0.5,
            },
            ..CorruptionSpec::default()
        };
        assert!(matches!(corrupt_typos(&r, "text", &spec, &BTreeSet::new()), Err(ShadowError::Config(_))));
    }
}
