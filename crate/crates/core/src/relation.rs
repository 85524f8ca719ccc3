//! Immutable columnar tables with stable row identifiers.
//!
//! Every intermediate produced by the engine is a [`Relation`]. Rows are
//! addressed by [`RowId`], which survives filtering, joining and re-execution,
//! so lineage and row-level reuse can key on it.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("column `{column}` has type {actual}, expected {expected}")]
    WrongType {
        column: String,
        expected: &'static str,
        actual: &'static str,
    },
    #[error("column `{column}` has {len} values, relation has {rows} rows")]
    LengthMismatch {
        column: String,
        len: usize,
        rows: usize,
    },
    #[error("duplicate row id `{0}`")]
    DuplicateRowId(RowId),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Stable identifier of a row: `table:key` for source rows, `left+right`
/// for join outputs.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowId(Arc<str>);

impl RowId {
    pub fn source(table: &str, key: &str) -> Self {
        RowId(format!("{table}:{key}").into())
    }

    pub fn joined(left: &RowId, right: &RowId) -> Self {
        RowId(format!("{}+{}", left.0, right.0).into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The source rows this id was derived from (itself for source rows).
    pub fn components(&self) -> impl Iterator<Item = &str> {
        self.0.split('+')
    }
}

impl From<&str> for RowId {
    fn from(s: &str) -> Self {
        RowId(s.into())
    }
}

impl From<String> for RowId {
    fn from(s: String) -> Self {
        RowId(s.into())
    }
}

impl fmt::Debug for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Int(i64),
    Float(f64),
    Bit(bool),
    Vector(Arc<[f64]>),
}

impl Value {
    /// Rendering used by `filter_in` / `label_binarize` comparisons and CSV output.
    pub fn render(&self) -> String {
        match self {
            Value::Str(s) => s.clone(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => f.to_string(),
            Value::Bit(b) => u8::from(*b).to_string(),
            Value::Vector(v) => v
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Column {
    Str(Vec<String>),
    Int(Vec<i64>),
    Float(Vec<f64>),
    Bit(Vec<bool>),
    Vector(Vec<Arc<[f64]>>),
}

impl PartialEq for Column {
    /// Bitwise equality for floats, so that `-0.0 != 0.0` and cached results
    /// are compared exactly.
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Column::Str(a), Column::Str(b)) => a == b,
            (Column::Int(a), Column::Int(b)) => a == b,
            (Column::Bit(a), Column::Bit(b)) => a == b,
            (Column::Float(a), Column::Float(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Column::Vector(a), Column::Vector(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| vec_bits_eq(x, y))
            }
            _ => false,
        }
    }
}

pub(crate) fn vec_bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Str(v) => v.len(),
            Column::Int(v) => v.len(),
            Column::Float(v) => v.len(),
            Column::Bit(v) => v.len(),
            Column::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Column::Str(_) => "string",
            Column::Int(_) => "int",
            Column::Float(_) => "float",
            Column::Bit(_) => "bit",
            Column::Vector(_) => "vector",
        }
    }

    pub fn get(&self, i: usize) -> Value {
        match self {
            Column::Str(v) => Value::Str(v[i].clone()),
            Column::Int(v) => Value::Int(v[i]),
            Column::Float(v) => Value::Float(v[i]),
            Column::Bit(v) => Value::Bit(v[i]),
            Column::Vector(v) => Value::Vector(v[i].clone()),
        }
    }

    pub fn render(&self, i: usize) -> String {
        match self {
            Column::Str(v) => v[i].clone(),
            _ => self.get(i).render(),
        }
    }

    /// Exact (bitwise for floats) comparison of two cells.
    pub fn cell_eq(&self, i: usize, other: &Column, j: usize) -> bool {
        match (self, other) {
            (Column::Str(a), Column::Str(b)) => a[i] == b[j],
            (Column::Int(a), Column::Int(b)) => a[i] == b[j],
            (Column::Bit(a), Column::Bit(b)) => a[i] == b[j],
            (Column::Float(a), Column::Float(b)) => a[i].to_bits() == b[j].to_bits(),
            (Column::Vector(a), Column::Vector(b)) => vec_bits_eq(&a[i], &b[j]),
            _ => false,
        }
    }

    pub fn gather(&self, idx: &[usize]) -> Column {
        match self {
            Column::Str(v) => Column::Str(idx.iter().map(|&i| v[i].clone()).collect()),
            Column::Int(v) => Column::Int(idx.iter().map(|&i| v[i]).collect()),
            Column::Float(v) => Column::Float(idx.iter().map(|&i| v[i]).collect()),
            Column::Bit(v) => Column::Bit(idx.iter().map(|&i| v[i]).collect()),
            Column::Vector(v) => Column::Vector(idx.iter().map(|&i| v[i].clone()).collect()),
        }
    }

    pub fn as_str(&self) -> Option<&[String]> {
        match self {
            Column::Str(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<&[i64]> {
        match self {
            Column::Int(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[Arc<[f64]>]> {
        match self {
            Column::Vector(v) => Some(v),
            _ => None,
        }
    }

    /// Interprets the cell as a binary label (ints, bits, and "0"/"1" strings).
    pub fn label(&self, i: usize) -> Option<u8> {
        match self {
            Column::Int(v) if v[i] == 0 || v[i] == 1 => Some(v[i] as u8),
            Column::Bit(v) => Some(u8::from(v[i])),
            Column::Str(v) => match v[i].as_str() {
                "0" => Some(0),
                "1" => Some(1),
                _ => None,
            },
            _ => None,
        }
    }
}

/// An immutable table: named typed columns plus one [`RowId`] per row.
#[derive(Debug, Clone)]
pub struct Relation {
    row_ids: Vec<RowId>,
    columns: Vec<(String, Column)>,
    index: HashMap<RowId, usize>,
}

impl PartialEq for Relation {
    fn eq(&self, other: &Self) -> bool {
        self.row_ids == other.row_ids && self.columns == other.columns
    }
}

impl Relation {
    pub fn new(row_ids: Vec<RowId>, columns: Vec<(String, Column)>) -> Result<Self, RelationError> {
        let rows = row_ids.len();
        for (name, col) in &columns {
            if col.len() != rows {
                return Err(RelationError::LengthMismatch {
                    column: name.clone(),
                    len: col.len(),
                    rows,
                });
            }
        }
        let mut index = HashMap::with_capacity(rows);
        for (i, id) in row_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(RelationError::DuplicateRowId(id.clone()));
            }
        }
        Ok(Relation {
            row_ids,
            columns,
            index,
        })
    }

    pub fn empty_like(&self) -> Relation {
        self.take(&[])
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn row_ids(&self) -> &[RowId] {
        &self.row_ids
    }

    pub fn position(&self, id: &RowId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn columns(&self) -> &[(String, Column)] {
        &self.columns
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|(n, _)| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column, RelationError> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| RelationError::MissingColumn(name.to_string()))
    }

    pub fn str_column(&self, name: &str) -> Result<&[String], RelationError> {
        let col = self.column(name)?;
        col.as_str().ok_or(RelationError::WrongType {
            column: name.to_string(),
            expected: "string",
            actual: col.type_name(),
        })
    }

    pub fn vector_column(&self, name: &str) -> Result<&[Arc<[f64]>], RelationError> {
        let col = self.column(name)?;
        col.as_vector().ok_or(RelationError::WrongType {
            column: name.to_string(),
            expected: "vector",
            actual: col.type_name(),
        })
    }

    /// Rows at `idx`, in that order.
    pub fn take(&self, idx: &[usize]) -> Relation {
        let row_ids: Vec<RowId> = idx.iter().map(|&i| self.row_ids[i].clone()).collect();
        let columns = self
            .columns
            .iter()
            .map(|(n, c)| (n.clone(), c.gather(idx)))
            .collect();
        let index = row_ids.iter().cloned().zip(0..).collect();
        Relation {
            row_ids,
            columns,
            index,
        }
    }

    /// Returns a copy with `name` set to `col`, replacing an existing column
    /// of that name in place or appending otherwise.
    pub fn with_column(&self, name: &str, col: Column) -> Result<Relation, RelationError> {
        if col.len() != self.len() {
            return Err(RelationError::LengthMismatch {
                column: name.to_string(),
                len: col.len(),
                rows: self.len(),
            });
        }
        let mut out = self.clone();
        match out.columns.iter_mut().find(|(n, _)| n == name) {
            Some((_, c)) => *c = col,
            None => out.columns.push((name.to_string(), col)),
        }
        Ok(out)
    }

    /// Full row equality between `self[i]` and `other[j]` over `self`'s columns.
    pub fn row_eq(&self, i: usize, other: &Relation, j: usize) -> bool {
        self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|((na, a), (nb, b))| na == nb && a.cell_eq(i, b, j))
    }

    /// Reads a CSV file with a header row. Columns whose every value parses as
    /// an integer become `Int`, everything else `Str`. Row ids are
    /// `table:<value of id_column>`.
    pub fn read_csv<R: Read>(reader: R, table: &str, id_column: &str) -> Result<Relation, RelationError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for rec in rdr.records() {
            let rec = rec?;
            for (i, field) in rec.iter().enumerate().take(headers.len()) {
                raw[i].push(field.to_string());
            }
        }
        let id_pos = headers
            .iter()
            .position(|h| h == id_column)
            .ok_or_else(|| RelationError::MissingColumn(id_column.to_string()))?;
        let row_ids = raw[id_pos].iter().map(|k| RowId::source(table, k)).collect();
        let columns = headers
            .into_iter()
            .zip(raw)
            .map(|(name, values)| {
                let ints: Option<Vec<i64>> = if values.is_empty() {
                    None
                } else {
                    values.iter().map(|v| v.parse::<i64>().ok()).collect()
                };
                let col = match ints {
                    Some(v) if name != id_column => Column::Int(v),
                    _ => Column::Str(values),
                };
                (name, col)
            })
            .collect();
        Relation::new(row_ids, columns)
    }

    /// Writes the relation as RFC-4180 CSV with a header row. Row ids are not
    /// written; they are recovered from the id column on read.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), RelationError> {
        let mut wtr = csv::WriterBuilder::new().from_writer(writer);
        wtr.write_record(self.column_names())?;
        for i in 0..self.len() {
            wtr.write_record(self.columns.iter().map(|(_, c)| c.render(i)))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Relation {
        Relation::new(
            vec!["t:a".into(), "t:b".into(), "t:c".into()],
            vec![
                ("id".into(), Column::Str(vec!["a".into(), "b".into(), "c".into()])),
                ("n".into(), Column::Int(vec![1, 2, 3])),
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicate_row_ids() {
        let err = Relation::new(vec!["x".into(), "x".into()], vec![]).unwrap_err();
        assert!(matches!(err, RelationError::DuplicateRowId(_)));
    }

    #[test]
    fn rejects_ragged_columns() {
        let err = Relation::new(vec!["x".into()], vec![("a".into(), Column::Int(vec![]))]).unwrap_err();
        assert!(matches!(err, RelationError::LengthMismatch { .. }));
    }

    #[test]
    fn take_keeps_row_ids_and_reindexes() {
        let r = sample().take(&[2, 0]);
        assert_eq!(r.row_ids(), &[RowId::from("t:c"), RowId::from("t:a")]);
        assert_eq!(r.position(&"t:a".into()), Some(1));
        assert_eq!(r.column("n").unwrap().as_int().unwrap(), &[3, 1]);
    }

    #[test]
    fn csv_round_trip() {
        let r = sample();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let back = Relation::read_csv(buf.as_slice(), "t", "id").unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_quotes_embedded_commas() {
        let r = Relation::new(
            vec!["t:1".into()],
            vec![
                ("id".into(), Column::Str(vec!["1".into()])),
                ("text".into(), Column::Str(vec!["a, \"b\"".into()])),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "id,text\n1,\"a, \"\"b\"\"\"\n");
        assert_eq!(Relation::read_csv(buf.as_slice(), "t", "id").unwrap(), r);
    }

    #[test]
    fn float_equality_is_bitwise() {
        let a = Column::Float(vec![0.0]);
        let b = Column::Float(vec![-0.0]);
        assert_ne!(a, b);
    }

    #[test]
    fn join_ids_expose_components() {
        let id = RowId::joined(&"users:u1".into(), &"posts:p1".into());
        assert_eq!(id.components().collect::<Vec<_>>(), vec!["users:u1", "posts:p1"]);
    }
}
