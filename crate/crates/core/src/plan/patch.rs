use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use super::{OperatorNode, PipelinePlan, PlanError};

/// A machine-applicable plan edit: parameter updates on one node and/or the
/// insertion of a new operator directly after an upstream node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanPatch {
    pub target_node: String,
    #[serde(default)]
    pub param_updates: Map<String, Json>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insert_after: Option<Insertion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub node: OperatorNode,
    pub upstream: String,
}

impl PlanPatch {
    pub fn update(target: &str, key: &str, value: Json) -> PlanPatch {
        let mut param_updates = Map::new();
        param_updates.insert(key.to_string(), value);
        PlanPatch {
            target_node: target.to_string(),
            param_updates,
            insert_after: None,
        }
    }

    /// Splices `node` between `upstream` and all of upstream's consumers.
    pub fn insert(node: OperatorNode, upstream: &str) -> PlanPatch {
        PlanPatch {
            target_node: upstream.to_string(),
            param_updates: Map::new(),
            insert_after: Some(Insertion {
                node,
                upstream: upstream.to_string(),
            }),
        }
    }
}

/// Applies `patch` to a copy of `plan` and validates the result.
pub fn apply_patch(plan: &PipelinePlan, patch: &PlanPatch) -> Result<PipelinePlan, PlanError> {
    let mut out = plan.clone();
    let target = out
        .nodes
        .iter_mut()
        .find(|n| n.id == patch.target_node)
        .ok_or_else(|| PlanError::UnknownInput {
            node: "<patch>".into(),
            input: patch.target_node.clone(),
        })?;
    for (k, v) in &patch.param_updates {
        target.params.insert(k.clone(), v.clone());
    }
    if let Some(ins) = &patch.insert_after {
        if out.node(&ins.node.id).is_some() {
            return Err(PlanError::DuplicateId(ins.node.id.clone()));
        }
        let pos = out
            .nodes
            .iter()
            .position(|n| n.id == ins.upstream)
            .ok_or_else(|| PlanError::UnknownInput {
                node: ins.node.id.clone(),
                input: ins.upstream.clone(),
            })?;
        for n in &mut out.nodes {
            for i in &mut n.inputs {
                if *i == ins.upstream {
                    *i = ins.node.id.clone();
                }
            }
        }
        let mut node = ins.node.clone();
        node.inputs = vec![ins.upstream.clone()];
        out.nodes.insert(pos + 1, node);
    }
    out.validate()?;
    Ok(out)
}
