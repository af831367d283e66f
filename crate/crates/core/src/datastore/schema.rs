use std::path::Path;

use serde::{Deserialize, Serialize};

use super::csv::{load_table, save_table};
use super::table::Table;
use super::DataError;
use crate::udfscript::Dtype;

/// How a column's values were drawn. String columns map drawn integers onto a
/// vocabulary of words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    /// Primary key `0..rows`.
    Serial,
    /// Foreign key drawn uniformly from the referenced table's keys.
    Reference { table: String },
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
    /// Ranks `1..=n` with probability proportional to `rank^-exponent`.
    Zipf { n: u64, exponent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub dtype: Dtype,
    pub distribution: Distribution,
    pub null_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub rows: usize,
    pub primary_key: String,
    pub columns: Vec<ColumnSpec>,
}

/// `table.column` references `ref_table.ref_column` (the primary key).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub table: String,
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub name: String,
    pub tables: Vec<TableSpec>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl SchemaSpec {
    pub fn table(&self, name: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Foreign keys touching `table` in either direction.
    pub fn edges_of<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a ForeignKey> + 'a {
        self.foreign_keys.iter().filter(move |fk| fk.table == table || fk.ref_table == table)
    }

    /// Checks that every foreign key references an existing primary key column.
    pub fn validate(&self) -> Result<(), DataError> {
        for fk in &self.foreign_keys {
            let child = self.table(&fk.table).ok_or_else(|| DataError::UnknownTable(fk.table.clone()))?;
            if !child.columns.iter().any(|c| c.name == fk.column) {
                return Err(DataError::UnknownColumn(format!("{}.{}", fk.table, fk.column)));
            }
            let parent = self.table(&fk.ref_table).ok_or_else(|| DataError::UnknownTable(fk.ref_table.clone()))?;
            if parent.primary_key != fk.ref_column {
                return Err(DataError::Schema(format!(
                    "foreign key {}.{} must reference the primary key of `{}`",
                    fk.table, fk.column, fk.ref_table
                )));
            }
        }
        Ok(())
    }
}

/// A schema plus its materialized tables, in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub schema: SchemaSpec,
    pub tables: Vec<Table>,
}

impl Database {
    pub fn table(&self, name: &str) -> Result<&Table, DataError> {
        self.tables.iter().find(|t| t.name == name).ok_or_else(|| DataError::UnknownTable(name.to_string()))
    }

    pub fn table_mut(&mut self, name: &str) -> Result<&mut Table, DataError> {
        self.tables.iter_mut().find(|t| t.name == name).ok_or_else(|| DataError::UnknownTable(name.to_string()))
    }

    /// Writes `schema.json` and one `<table>.csv` per table into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        let schema_path = dir.join("schema.json");
        let doc = serde_json::to_string_pretty(&self.schema).expect("schema serializes");
        std::fs::write(&schema_path, doc).map_err(|e| DataError::io(&schema_path, e))?;
        for t in &self.tables {
            save_table(t, &dir.join(format!("{}.csv", t.name)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Database, DataError> {
        let schema_path = dir.join("schema.json");
        let text = std::fs::read_to_string(&schema_path).map_err(|e| DataError::io(&schema_path, e))?;
        let schema: SchemaSpec =
            serde_json::from_str(&text).map_err(|e| DataError::Schema(format!("{}: {e}", schema_path.display())))?;
        schema.validate()?;
        let mut tables = Vec::with_capacity(schema.tables.len());
        for spec in &schema.tables {
            let t = load_table(&dir.join(format!("{}.csv", spec.name)))?;
            for c in &spec.columns {
                let col = t.column(&c.name)?;
                if col.dtype() != c.dtype {
                    return Err(DataError::Schema(format!(
                        "{}.{} is {} in the CSV but {} in the schema",
                        spec.name,
                        c.name,
                        col.dtype(),
                        c.dtype
                    )));
                }
            }
            tables.push(t);
        }
        Ok(Database { schema, tables })
    }
}
