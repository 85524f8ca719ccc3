use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use super::{OperatorNode, PipelinePlan};

/// Stable 64-bit operator fingerprint: the first eight bytes of a SHA-256
/// over the node's kind, canonical params and upstream fingerprints.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub u64);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16)
            .map(Fingerprint)
            .map_err(serde::de::Error::custom)
    }
}

impl Fingerprint {
    pub fn of_bytes(bytes: &[u8]) -> Fingerprint {
        let digest = Sha256::digest(bytes);
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        Fingerprint(u64::from_be_bytes(head))
    }
}

/// Canonical JSON text: object keys sorted, integral floats written as
/// integers, no whitespace.
pub fn canonical_json(value: &Json) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Json, out: &mut String) {
    match value {
        Json::Null | Json::Bool(_) | Json::String(_) => out.push_str(&value.to_string()),
        Json::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => out.push_str(&i.to_string()),
            (_, Some(u), _) => out.push_str(&u.to_string()),
            (_, _, Some(f)) if f.fract() == 0.0 && f.abs() < 9.0e15 => {
                out.push_str(&(f as i64).to_string())
            }
            _ => out.push_str(&n.to_string()),
        },
        Json::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Json::Object(map) => {
            let sorted: BTreeMap<&String, &Json> = map.iter().collect();
            out.push('{');
            for (i, (k, v)) in sorted.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Json::String(k.clone()).to_string());
                out.push(':');
                write_canonical(v, out);
            }
            out.push('}');
        }
    }
}

fn node_fingerprint(node: &OperatorNode, upstream: &[Fingerprint], source_digest: Option<u64>) -> Fingerprint {
    let mut text = String::new();
    text.push_str(node.kind.as_str());
    text.push('\n');
    text.push_str(&canonical_json(&Json::Object(node.params.clone())));
    for fp in upstream {
        text.push('\n');
        text.push_str(&fp.to_string());
    }
    if let Some(d) = source_digest {
        text.push_str(&format!("\ndata:{d:016x}"));
    }
    Fingerprint::of_bytes(text.as_bytes())
}

/// Fingerprints of every node. Independent of node list order and param key
/// order; a node's fingerprint changes iff its kind, params or any upstream
/// fingerprint change.
pub fn fingerprint(plan: &PipelinePlan) -> BTreeMap<String, Fingerprint> {
    fingerprint_with_sources(plan, |_| None)
}

/// Like [`fingerprint`], but mixes a content digest into source nodes so that
/// cache keys also change when the data behind a source changes.
pub fn fingerprint_with_sources(
    plan: &PipelinePlan,
    source_digest: impl Fn(&OperatorNode) -> Option<u64>,
) -> BTreeMap<String, Fingerprint> {
    let order = plan.topo_order().expect("fingerprinting a validated plan");
    let mut out = BTreeMap::new();
    for id in order {
        let node = plan.node(&id).expect("topo order lists plan nodes");
        let upstream: Vec<Fingerprint> = node.inputs.iter().map(|i| out[i]).collect();
        let fp = node_fingerprint(node, &upstream, source_digest(node));
        out.insert(id, fp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{rag_plan, OperatorKind};
    use serde_json::json;

    #[test]
    fn canonical_form_sorts_keys_and_normalizes_numbers() {
        let a = json!({"b": 1.0, "a": [2, {"y": 1, "x": 0.5}]});
        assert_eq!(canonical_json(&a), r#"{"a":[2,{"x":0.5,"y":1}],"b":1}"#);
    }

    #[test]
    fn reordered_keys_and_nodes_give_identical_fingerprints() {
        let plan = rag_plan();
        let mut shuffled = plan.clone();
        shuffled.nodes.reverse();
        for n in &mut shuffled.nodes {
            let mut entries: Vec<_> = std::mem::take(&mut n.params).into_iter().collect();
            entries.reverse();
            n.params = entries.into_iter().collect();
        }
        assert_eq!(fingerprint(&plan), fingerprint(&shuffled));
    }

    #[test]
    fn regex_edit_changes_exactly_the_downstream_closure() {
        let plan = rag_plan();
        let mut edited = plan.clone();
        let wl = edited
            .nodes
            .iter_mut()
            .find(|n| n.kind == OperatorKind::WeakLabelRegex)
            .unwrap();
        wl.params.insert(
            "positive_patterns".into(),
            json!(["(0|no|zero) (motivation)", "lost (interest|motivation|drive)"]),
        );
        let before = fingerprint(&plan);
        let after = fingerprint(&edited);
        let changed: Vec<&str> = before
            .keys()
            .filter(|k| before[*k] != after[*k])
            .map(String::as_str)
            .collect();
        // independent oracle: transitive consumers of weak_label
        let mut expected = vec!["weak_label".to_string()];
        let mut i = 0;
        while i < expected.len() {
            for c in plan.consumers(&expected[i].clone()) {
                if !expected.contains(&c.id) {
                    expected.push(c.id.clone());
                }
            }
            i += 1;
        }
        let mut expected: Vec<&str> = expected.iter().map(String::as_str).collect();
        expected.sort_unstable();
        assert_eq!(changed, expected);
        assert_eq!(
            expected,
            ["accuracy", "binarize", "embed_train", "rag_chain", "vector_store", "weak_label"]
        );
    }

    #[test]
    fn source_path_change_propagates_downstream() {
        let plan = rag_plan();
        let mut edited = plan.clone();
        edited
            .nodes
            .iter_mut()
            .find(|n| n.id == "test_posts")
            .unwrap()
            .params
            .insert("path".into(), json!("other.csv"));
        let before = fingerprint(&plan);
        let after = fingerprint(&edited);
        for id in ["test_posts", "embed_test", "rag_chain", "binarize", "accuracy"] {
            assert_ne!(before[id], after[id], "{id}");
        }
        for id in ["users", "train_posts", "vector_store"] {
            assert_eq!(before[id], after[id], "{id}");
        }
    }

    #[test]
    fn source_digest_only_affects_its_downstream() {
        let plan = rag_plan();
        let plain = fingerprint(&plan);
        let with = fingerprint_with_sources(&plan, |n| (n.id == "test_posts").then_some(42));
        assert_ne!(plain["embed_test"], with["embed_test"]);
        assert_eq!(plain["embed_train"], with["embed_train"]);
    }

    #[test]
    fn serde_uses_hex() {
        let fp = Fingerprint(0xdead_beef);
        let s = serde_json::to_string(&fp).unwrap();
        assert_eq!(s, "\"00000000deadbeef\"");
        assert_eq!(serde_json::from_str::<Fingerprint>(&s).unwrap(), fp);
    }
}
