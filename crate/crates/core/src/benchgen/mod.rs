//! Synthetic benchmark generation: databases, UDFs, data preparation and
//! SPJA queries invoking the UDFs.

mod database;
mod prepare;
mod query;
mod udf;
mod workload;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use database::{gen_database, gen_schema, materialize};
pub use prepare::{prepare_data, LOOP_BOUND_RANGE};
pub use query::{calibrate_threshold, gen_query, GeneratedQuery};
pub use udf::{count_ops, gen_udf, structure_of, GeneratedUdf, UdfMeta};
pub use workload::{
    advisor_query, eval_query, gen_workload, label_workload, read_jsonl, write_jsonl, Annotations, DbContext,
    QueryMeta, Workload, WorkloadRecord,
};

use crate::cardest::CardError;
use crate::datastore::DataError;
use crate::harness::HarnessError;
use crate::plangraph::PlanError;
use crate::udfscript::UdfError;

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub lo: usize,
    pub hi: usize,
}

impl IntRange {
    pub const fn new(lo: usize, hi: usize) -> Self {
        IntRange { lo, hi }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.gen_range(self.lo..=self.hi.max(self.lo))
    }

    pub fn contains(&self, v: usize) -> bool {
        (self.lo..=self.hi).contains(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub tables: IntRange,
    pub rows: IntRange,
    /// Data columns per table, keys excluded.
    pub columns: IntRange,
    pub joins: IntRange,
    pub filters: IntRange,
    pub branches: IntRange,
    pub loops: IntRange,
    pub ops: IntRange,
    /// Probability that a UDF contains loops when `loops.lo` is 0.
    pub loop_incidence: f64,
    /// Log-uniform range of UDF filter selectivities.
    pub selectivity: (f64, f64),
    pub projection_share: f64,
    /// Share of branch conditions comparing an unmodified parameter.
    pub raw_predicate_share: f64,
    pub agg_probability: f64,
    /// Joins are dropped while the estimated join result exceeds this.
    pub max_join_rows: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            tables: IntRange::new(3, 6),
            rows: IntRange::new(500, 3000),
            columns: IntRange::new(3, 6),
            joins: IntRange::new(1, 5),
            filters: IntRange::new(0, 21),
            branches: IntRange::new(0, 3),
            loops: IntRange::new(0, 3),
            ops: IntRange::new(10, 150),
            loop_incidence: 0.07,
            selectivity: (1e-4, 1.0),
            projection_share: 0.22,
            raw_predicate_share: 0.8,
            agg_probability: 0.3,
            max_join_rows: 100_000.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidConfig(m.to_string()));
        for (name, r) in [
            ("tables", self.tables),
            ("rows", self.rows),
            ("columns", self.columns),
            ("joins", self.joins),
            ("filters", self.filters),
            ("branches", self.branches),
            ("loops", self.loops),
            ("ops", self.ops),
        ] {
            if r.lo > r.hi {
                return bad(&format!("{name}: lo {} exceeds hi {}", r.lo, r.hi));
            }
        }
        if self.tables.lo == 0 || self.rows.lo == 0 || self.columns.lo == 0 {
            return bad("tables, rows and columns need a positive lower bound");
        }
        if self.ops.lo == 0 {
            return bad("ops needs a positive lower bound");
        }
        let (lo, hi) = self.selectivity;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("selectivity must satisfy 0 < lo <= hi <= 1");
        }
        for (name, p) in [
            ("loop_incidence", self.loop_incidence),
            ("projection_share", self.projection_share),
            ("raw_predicate_share", self.raw_predicate_share),
            ("agg_probability", self.agg_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.max_join_rows <= 0.0 {
            return bad("max_join_rows must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("UDF hazards on table `{table}` cannot be satisfied: {reason}")]
    UnsatisfiableHazard { table: String, reason: String },
    #[error("query {0} has no runtime label")]
    Unlabeled(String),
    #[error(transparent)]
    Udf(#[from] UdfError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Card(#[from] CardError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

#[cfg(test)]
mod tests;
