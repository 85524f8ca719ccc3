use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::relation::RowId;

/// Row-level lineage of one operator output: for every output row, the
/// contributing row ids of each input, in input order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageMap {
    pub inputs: Vec<String>,
    pub rows: BTreeMap<RowId, Vec<Vec<RowId>>>,
}

impl LineageMap {
    pub fn new(inputs: &[String]) -> LineageMap {
        LineageMap {
            inputs: inputs.to_vec(),
            rows: BTreeMap::new(),
        }
    }

    /// 1:1 lineage of a row-preserving operator.
    pub fn identity(input: &str, ids: &[RowId]) -> LineageMap {
        LineageMap {
            inputs: vec![input.to_string()],
            rows: ids.iter().map(|id| (id.clone(), vec![vec![id.clone()]])).collect(),
        }
    }

    pub fn insert(&mut self, row: RowId, per_input: Vec<Vec<RowId>>) {
        self.rows.insert(row, per_input);
    }

    pub fn get(&self, row: &RowId) -> Option<&[Vec<RowId>]> {
        self.rows.get(row).map(Vec::as_slice)
    }

    /// Contributing rows of input `input` for output `row`.
    pub fn from_input(&self, row: &RowId, input: usize) -> &[RowId] {
        self.rows
            .get(row)
            .and_then(|v| v.get(input))
            .map_or(&[], Vec::as_slice)
    }
}
