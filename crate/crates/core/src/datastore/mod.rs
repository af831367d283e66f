//! In-memory column-oriented tables, CSV persistence, statistics and
//! reproducible row sampling.

mod csv;
mod schema;
mod stats;
mod table;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use csv::{load_table, parse_table, render_table, save_table};
pub use schema::{ColumnSpec, Database, Distribution, ForeignKey, SchemaSpec, TableSpec};
pub use stats::{build_stats, column_stats, Bucket, ColumnConstraint, ColumnStats, TableStats, DEFAULT_BUCKETS, TOP_K};
pub use table::{Column, ColumnData, Table};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), source }
    }
}

/// Uniform sample without replacement, materialized as a table. Row indices
/// are ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSample {
    pub indices: Vec<usize>,
    pub rows: Table,
}

impl RowSample {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn sample_rows(table: &Table, n: usize, seed: u64) -> RowSample {
    let indices: Vec<usize> = if n >= table.row_count {
        (0..table.row_count).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, table.row_count, n).into_vec();
        idx.sort_unstable();
        idx
    };
    RowSample { rows: table.take(&indices), indices }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: i64) -> Table {
        Table::new("t", vec![Column::new("x", ColumnData::Int((0..n).map(Some).collect()))]).unwrap()
    }

    #[test]
    fn sample_sizes() {
        let t = table(100);
        assert!(sample_rows(&t, 0, 1).is_empty());
        let all = sample_rows(&t, 500, 1);
        assert_eq!(all.indices, (0..100).collect::<Vec<_>>());
        assert_eq!(all.rows, t);
        let s = sample_rows(&t, 10, 1);
        assert_eq!(s.len(), 10);
        assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sample_is_seeded() {
        let t = table(1000);
        assert_eq!(sample_rows(&t, 50, 9), sample_rows(&t, 50, 9));
        assert_ne!(sample_rows(&t, 50, 9).indices, sample_rows(&t, 50, 10).indices);
    }
}
