use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::PipelinePlan;

/// Node-level difference between two plan versions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDiff {
    /// Nodes present in both plans whose kind or params differ.
    pub changed: BTreeSet<String>,
    pub added: BTreeSet<String>,
    pub removed: BTreeSet<String>,
    /// Nodes present in both plans whose input list differs.
    pub rewired: BTreeSet<String>,
    pub outputs_changed: bool,
    pub single_operator_change: bool,
}

impl PlanDiff {
    pub fn is_empty(&self) -> bool {
        self.changed.is_empty()
            && self.added.is_empty()
            && self.removed.is_empty()
            && self.rewired.is_empty()
            && !self.outputs_changed
    }

    pub fn is_structural(&self) -> bool {
        !self.added.is_empty() || !self.removed.is_empty() || !self.rewired.is_empty() || self.outputs_changed
    }
}

pub fn diff_plans(old: &PipelinePlan, new: &PipelinePlan) -> PlanDiff {
    let mut diff = PlanDiff::default();
    let mut kind_changed = false;
    for n in &new.nodes {
        match old.node(&n.id) {
            None => {
                diff.added.insert(n.id.clone());
            }
            Some(o) => {
                if o.kind != n.kind || o.params != n.params {
                    diff.changed.insert(n.id.clone());
                    kind_changed |= o.kind != n.kind;
                }
                if o.inputs != n.inputs {
                    diff.rewired.insert(n.id.clone());
                }
            }
        }
    }
    for o in &old.nodes {
        if new.node(&o.id).is_none() {
            diff.removed.insert(o.id.clone());
        }
    }
    let old_out: BTreeSet<&String> = old.outputs.iter().collect();
    let new_out: BTreeSet<&String> = new.outputs.iter().collect();
    diff.outputs_changed = old_out != new_out;
    diff.single_operator_change = diff.changed.len() == 1 && !kind_changed && !diff.is_structural();
    diff
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{rag_plan, OperatorKind};
    use serde_json::json;

    fn edit(plan: &mut PipelinePlan, id: &str, key: &str, value: serde_json::Value) {
        plan.nodes
            .iter_mut()
            .find(|n| n.id == id)
            .unwrap()
            .params
            .insert(key.into(), value);
    }

    #[test]
    fn identical_plans_give_empty_diff() {
        let d = diff_plans(&rag_plan(), &rag_plan());
        assert!(d.is_empty());
        assert!(!d.single_operator_change);
    }

    #[test]
    fn regex_edit_is_a_single_operator_change() {
        let old = rag_plan();
        let mut new = old.clone();
        edit(&mut new, "weak_label", "positive_patterns", json!(["lost (interest|motivation)"]));
        let d = diff_plans(&old, &new);
        assert_eq!(d.changed, BTreeSet::from(["weak_label".to_string()]));
        assert!(d.single_operator_change);
    }

    #[test]
    fn two_edits_are_not_single() {
        let old = rag_plan();
        let mut new = old.clone();
        edit(&mut new, "weak_label", "positive_patterns", json!(["lost (interest|motivation)"]));
        edit(&mut new, "rag_chain", "k", json!(3));
        let d = diff_plans(&old, &new);
        assert_eq!(d.changed.len(), 2);
        assert!(!d.single_operator_change);
    }

    #[test]
    fn kind_change_is_not_single() {
        let old = rag_plan();
        let mut new = old.clone();
        let n = new.nodes.iter_mut().find(|n| n.id == "embed_test").unwrap();
        n.kind = OperatorKind::Spellcheck;
        let d = diff_plans(&old, &new);
        assert!(!d.single_operator_change);
    }
}
