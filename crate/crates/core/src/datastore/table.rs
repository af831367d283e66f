use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::udfscript::{Dtype, Value};

/// Typed column storage; `None` is NULL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dtype", content = "values", rename_all = "lowercase")]
pub enum ColumnData {
    Int(Vec<Option<i64>>),
    Float(Vec<Option<f64>>),
    String(Vec<Option<Arc<str>>>),
    Bool(Vec<Option<bool>>),
}

impl ColumnData {
    pub fn empty(dtype: Dtype) -> Self {
        match dtype {
            Dtype::Int => ColumnData::Int(Vec::new()),
            Dtype::Float => ColumnData::Float(Vec::new()),
            Dtype::String => ColumnData::String(Vec::new()),
            Dtype::Bool => ColumnData::Bool(Vec::new()),
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            ColumnData::Int(_) => Dtype::Int,
            ColumnData::Float(_) => Dtype::Float,
            ColumnData::String(_) => Dtype::String,
            ColumnData::Bool(_) => Dtype::Bool,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Int(v) => v.len(),
            ColumnData::Float(v) => v.len(),
            ColumnData::String(v) => v.len(),
            ColumnData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Value {
        match self {
            ColumnData::Int(v) => v[i].map_or(Value::Null, Value::Int),
            ColumnData::Float(v) => v[i].map_or(Value::Null, Value::Float),
            ColumnData::String(v) => v[i].clone().map_or(Value::Null, Value::Str),
            ColumnData::Bool(v) => v[i].map_or(Value::Null, Value::Bool),
        }
    }

    pub fn is_null(&self, i: usize) -> bool {
        match self {
            ColumnData::Int(v) => v[i].is_none(),
            ColumnData::Float(v) => v[i].is_none(),
            ColumnData::String(v) => v[i].is_none(),
            ColumnData::Bool(v) => v[i].is_none(),
        }
    }

    /// Appends a value, which must be NULL or of this column's dtype (ints are
    /// accepted by float columns).
    pub fn push(&mut self, v: Value) -> Result<(), Value> {
        match (self, v) {
            (ColumnData::Int(c), Value::Null) => c.push(None),
            (ColumnData::Float(c), Value::Null) => c.push(None),
            (ColumnData::String(c), Value::Null) => c.push(None),
            (ColumnData::Bool(c), Value::Null) => c.push(None),
            (ColumnData::Int(c), Value::Int(x)) => c.push(Some(x)),
            (ColumnData::Float(c), Value::Float(x)) => c.push(Some(x)),
            (ColumnData::Float(c), Value::Int(x)) => c.push(Some(x as f64)),
            (ColumnData::String(c), Value::Str(x)) => c.push(Some(x)),
            (ColumnData::Bool(c), Value::Bool(x)) => c.push(Some(x)),
            (_, other) => return Err(other),
        }
        Ok(())
    }

    pub fn from_values(dtype: Dtype, values: impl IntoIterator<Item = Value>) -> Result<Self, Value> {
        let mut c = ColumnData::empty(dtype);
        for v in values {
            c.push(v)?;
        }
        Ok(c)
    }

    pub fn take(&self, idx: &[usize]) -> ColumnData {
        match self {
            ColumnData::Int(v) => ColumnData::Int(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Float(v) => ColumnData::Float(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::String(v) => ColumnData::String(idx.iter().map(|&i| v[i].clone()).collect()),
            ColumnData::Bool(v) => ColumnData::Bool(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = Value> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn new(name: impl Into<String>, data: ColumnData) -> Self {
        Column { name: name.into(), data }
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }
}

/// Column-oriented table. All columns have `row_count` entries and unique names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub row_count: usize,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Table, DataError> {
        let name = name.into();
        let row_count = columns.first().map_or(0, |c| c.data.len());
        for (i, c) in columns.iter().enumerate() {
            if c.data.len() != row_count {
                return Err(DataError::Schema(format!(
                    "table `{name}`: column `{}` has {} rows, expected {row_count}",
                    c.name,
                    c.data.len()
                )));
            }
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(DataError::Schema(format!("table `{name}`: duplicate column `{}`", c.name)));
            }
        }
        Ok(Table { name, columns, row_count })
    }

    /// A table with the given header and no rows.
    pub fn empty(name: impl Into<String>, header: &[(String, Dtype)]) -> Table {
        let columns = header.iter().map(|(n, dt)| Column::new(n.clone(), ColumnData::empty(*dt))).collect();
        Table { name: name.into(), columns, row_count: 0 }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column, DataError> {
        self.column_index(name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| DataError::UnknownColumn(format!("{}.{name}", self.name)))
    }

    pub fn column_mut(&mut self, name: &str) -> Result<&mut Column, DataError> {
        match self.column_index(name) {
            Some(i) => Ok(&mut self.columns[i]),
            None => Err(DataError::UnknownColumn(format!("{}.{name}", self.name))),
        }
    }

    pub fn schema(&self) -> Vec<(String, Dtype)> {
        self.columns.iter().map(|c| (c.name.clone(), c.dtype())).collect()
    }

    /// Values of the given columns at row `i`.
    pub fn row_values(&self, i: usize, cols: &[usize], out: &mut Vec<Value>) {
        out.clear();
        out.extend(cols.iter().map(|&c| self.columns[c].data.get(i)));
    }

    pub fn take(&self, idx: &[usize]) -> Table {
        Table {
            name: self.name.clone(),
            columns: self.columns.iter().map(|c| Column::new(c.name.clone(), c.data.take(idx))).collect(),
            row_count: idx.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        let a = Column::new("a", ColumnData::Int(vec![Some(1), None]));
        let b = Column::new("b", ColumnData::Float(vec![Some(1.0)]));
        assert!(Table::new("t", vec![a.clone(), b]).is_err());
        assert!(Table::new("t", vec![a.clone(), a.clone()]).is_err());
        let t = Table::new("t", vec![a]).unwrap();
        assert_eq!(t.row_count, 2);
        assert_eq!(t.columns[0].data.get(1), Value::Null);
        assert!(matches!(t.column("zz"), Err(DataError::UnknownColumn(_))));
    }

    #[test]
    fn push_and_take() {
        let mut c = ColumnData::empty(Dtype::Float);
        c.push(Value::Int(2)).unwrap();
        c.push(Value::Null).unwrap();
        c.push(Value::Float(0.5)).unwrap();
        assert!(c.push(Value::str("x")).is_err());
        assert_eq!(c.take(&[2, 0]), ColumnData::Float(vec![Some(0.5), Some(2.0)]));
    }
}
