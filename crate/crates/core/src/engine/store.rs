use std::collections::HashMap;
use std::sync::Arc;

use crate::relation::{vec_bits_eq, Column, Relation, RowId};
use crate::text::dot;

use super::EngineError;

/// Train-side vector index: one entry per row id, ordered by row id, with
/// metadata columns kept separately from the vectors. The first metadata
/// column is the label the simulated LLM votes with.
#[derive(Debug, Clone)]
pub struct VectorStore {
    ids: Vec<RowId>,
    vectors: Vec<Arc<[f64]>>,
    metadata: Vec<(String, Column)>,
    dim: usize,
    index: HashMap<RowId, usize>,
}

impl PartialEq for VectorStore {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
            && self.dim == other.dim
            && self.metadata == other.metadata
            && self.vectors.iter().zip(&other.vectors).all(|(a, b)| vec_bits_eq(a, b))
    }
}

impl VectorStore {
    pub fn build(node: &str, rel: &Relation, vector_column: &str, metadata_columns: &[String]) -> Result<Self, EngineError> {
        let vectors = rel.vector_column(vector_column)?;
        let mut order: Vec<usize> = (0..rel.len()).collect();
        order.sort_by(|&a, &b| rel.row_ids()[a].cmp(&rel.row_ids()[b]));
        let dim = vectors.first().map_or(0, |v| v.len());
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(EngineError::Dimension {
                node: node.to_string(),
                expected: dim,
                actual: bad.len(),
            });
        }
        let mut metadata = Vec::with_capacity(metadata_columns.len());
        for name in metadata_columns {
            metadata.push((name.clone(), rel.column(name)?.gather(&order)));
        }
        if let Some((name, labels)) = metadata.first() {
            for (i, &row) in order.iter().enumerate() {
                if labels.label(i).is_none() {
                    return Err(EngineError::NotBinary {
                        node: node.to_string(),
                        column: name.clone(),
                        row: rel.row_ids()[row].clone(),
                    });
                }
            }
        }
        let ids: Vec<RowId> = order.iter().map(|&i| rel.row_ids()[i].clone()).collect();
        let index = ids.iter().cloned().zip(0..).collect();
        Ok(VectorStore {
            vectors: order.iter().map(|&i| vectors[i].clone()).collect(),
            ids,
            metadata,
            dim,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[RowId] {
        &self.ids
    }

    pub fn position(&self, id: &RowId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn vectors(&self) -> &[Arc<[f64]>] {
        &self.vectors
    }

    pub fn metadata(&self) -> &[(String, Column)] {
        &self.metadata
    }

    pub fn label(&self, i: usize) -> u8 {
        self.metadata[0].1.label(i).expect("labels validated at build")
    }

    pub fn labels(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    /// True iff both stores hold the same ids with bit-identical vectors,
    /// regardless of metadata.
    pub fn same_vectors(&self, other: &VectorStore) -> bool {
        self.ids == other.ids && self.vectors.iter().zip(&other.vectors).all(|(a, b)| vec_bits_eq(a, b))
    }

    /// True iff the entry `id` has the same metadata in both stores.
    pub fn same_metadata(&self, other: &VectorStore, id: &RowId) -> bool {
        match (self.position(id), other.position(id)) {
            (Some(i), Some(j)) => self
                .metadata
                .iter()
                .zip(&other.metadata)
                .all(|((na, a), (nb, b))| na == nb && a.cell_eq(i, b, j)),
            _ => false,
        }
    }

    /// Positions of the `min(k, len)` entries most similar to `query`,
    /// nearest first; equal similarities go to the smaller row id.
    pub fn nearest(&self, query: &[f64], k: usize) -> Vec<usize> {
        let k = k.min(self.len());
        let mut top: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, v) in self.vectors.iter().enumerate() {
            let s = dot(query, v);
            if top.len() == k && top.last().is_some_and(|&(ls, _)| s <= ls) {
                continue;
            }
            // entries arrive in ascending id order, so an equal similarity
            // always sorts after the ones already kept
            let pos = top.partition_point(|&(ts, _)| ts >= s);
            top.insert(pos, (s, i));
            top.truncate(k);
        }
        top.into_iter().map(|(_, i)| i).collect()
    }
}

/// Retrieval-majority vote of the simulated LLM over labels given nearest
/// first; a tie goes to the nearest label.
pub fn majority_vote(labels: &[u8]) -> u8 {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let zeros = labels.len() - ones;
    match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => labels.first().copied().unwrap_or(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, [f64; 2], i64)]) -> VectorStore {
        let rel = Relation::new(
            entries.iter().map(|e| RowId::from(e.0)).collect(),
            vec![
                (
                    "v".into(),
                    Column::Vector(entries.iter().map(|e| Arc::from(&e.1[..])).collect()),
                ),
                ("label".into(), Column::Int(entries.iter().map(|e| e.2).collect())),
            ],
        )
        .unwrap();
        VectorStore::build("s", &rel, "v", &["label".to_string()]).unwrap()
    }

    #[test]
    fn majority_examples() {
        assert_eq!(majority_vote(&[1, 1, 1, 0, 0]), 1);
        assert_eq!(majority_vote(&[0, 1]), 0);
        assert_eq!(majority_vote(&[1, 0]), 1);
        assert_eq!(majority_vote(&[0]), 0);
    }

    #[test]
    fn entries_are_sorted_by_row_id() {
        let s = store(&[("b", [1.0, 0.0], 1), ("a", [0.0, 1.0], 0)]);
        assert_eq!(s.ids(), &[RowId::from("a"), RowId::from("b")]);
        assert_eq!(s.labels(), vec![0, 1]);
    }

    #[test]
    fn nearest_breaks_ties_by_row_id() {
        let s = store(&[("c", [1.0, 0.0], 1), ("a", [1.0, 0.0], 0), ("b", [0.0, 1.0], 1)]);
        let got: Vec<&str> = s.nearest(&[1.0, 0.0], 2).iter().map(|&i| s.ids()[i].as_str()).collect();
        assert_eq!(got, ["a", "c"]);
    }

    #[test]
    fn nearest_clamps_k() {
        let s = store(&[("a", [1.0, 0.0], 1)]);
        assert_eq!(s.nearest(&[0.0, 1.0], 5), vec![0]);
    }

    #[test]
    fn nearest_matches_full_sort() {
        let entries: Vec<(String, [f64; 2], i64)> = (0..40)
            .map(|i| {
                let a = (i as f64 * 0.37).sin();
                (format!("r{i:02}"), [a, (1.0 - a * a).sqrt()], i % 2)
            })
            .collect();
        let refs: Vec<(&str, [f64; 2], i64)> = entries.iter().map(|e| (e.0.as_str(), e.1, e.2)).collect();
        let s = store(&refs);
        let q = [0.6, 0.8];
        let mut all: Vec<usize> = (0..s.len()).collect();
        all.sort_by(|&a, &b| dot(&q, s.vector(b)).total_cmp(&dot(&q, s.vector(a))).then(a.cmp(&b)));
        for k in [1, 3, 7, 40] {
            assert_eq!(s.nearest(&q, k), all[..k].to_vec());
        }
    }

    #[test]
    fn non_binary_labels_are_rejected() {
        let rel = Relation::new(
            vec!["a".into()],
            vec![
                ("v".into(), Column::Vector(vec![Arc::from(&[1.0][..])])),
                ("label".into(), Column::Int(vec![7])),
            ],
        )
        .unwrap();
        assert!(VectorStore::build("s", &rel, "v", &["label".to_string()]).is_err());
    }
}
