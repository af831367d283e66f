//! Plan execution, runtime labels and evaluation metrics.

mod cost;
mod exec;
pub mod pipeline;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::{synthetic_cost, udf_cost, CostWeights};
pub use exec::{execute, udf_passes, udf_values, ExecConfig, ExecutionResult, LabelMode, OperatorCards};

use crate::advisor::{cost_distribution, decide, AdvisorError, CostDistribution, Placement, SelectivityGrid, Strategy};
use crate::cardest::CardError;
use crate::cfg::UdfGraph;
use crate::datastore::{DataError, TableStats};
use crate::model::{flat_featurize, forward, FlatModel, Model, ModelError};
use crate::plangraph::{assemble_joint, featurize, PlanError, PlanTree};
use crate::udfscript::{RuntimeFault, UdfError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("runtime {0} is not positive")]
    NonPositiveRuntime(f64),
    #[error("empty workload")]
    EmptyWorkload,
    #[error("query {0} lacks a runtime label for both UDF placements")]
    MissingVariantLabel(String),
    #[error("the plan binds a UDF but none was supplied")]
    MissingUdf,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("UDF fault in operator {operator}, row {row}: {fault}")]
    Fault { operator: String, row: usize, fault: RuntimeFault },
    #[error("cardinality conservation violated: {0}")]
    Conservation(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Udf(#[from] UdfError),
    #[error(transparent)]
    Card(#[from] CardError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Advisor(#[from] AdvisorError),
}

/// max(pred / actual, actual / pred).
pub fn qerror(pred: f64, actual: f64) -> Result<f64, HarnessError> {
    for v in [pred, actual] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(HarnessError::NonPositiveRuntime(v));
        }
    }
    Ok((pred / actual).max(actual / pred))
}

/// Linear interpolation between closest ranks; `sorted` must be ascending.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let x = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (x - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QStats {
    pub count: usize,
    pub median: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl QStats {
    pub fn new(mut q: Vec<f64>) -> QStats {
        q.sort_by(f64::total_cmp);
        QStats {
            count: q.len(),
            median: percentile(&q, 0.5),
            p95: percentile(&q, 0.95),
            p99: percentile(&q, 0.99),
            max: q.last().copied().unwrap_or(f64::NAN),
        }
    }
}

/// Bucket name of a query: its UDF filter placement, or `projection`.
pub fn placement_class(p: Option<Placement>) -> &'static str {
    match p {
        Some(Placement::PullUp) => "pull_up",
        Some(Placement::Intermediate) => "intermediate",
        Some(Placement::PushDown) => "push_down",
        None => "projection",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall: QStats,
    /// Non-empty placement buckets; their counts sum to the overall count.
    pub by_placement: BTreeMap<String, QStats>,
    pub q_errors: Vec<f64>,
}

/// A labeled query in model-ready form. `udf` is annotated for the card mode
/// of the model that will consume it.
#[derive(Debug, Clone)]
pub struct EvalQuery {
    pub query_id: String,
    pub plan: PlanTree,
    pub udf: Option<UdfGraph>,
    pub catalog: Arc<Vec<TableStats>>,
    pub label: f64,
    pub placement: Option<Placement>,
}

/// Anything that predicts a runtime in seconds for a plan.
pub trait CostModel: Sync {
    fn predict(&self, plan: &PlanTree, udf: Option<&UdfGraph>, catalog: &[TableStats]) -> Result<f64, HarnessError>;
}

impl CostModel for Model {
    fn predict(&self, plan: &PlanTree, udf: Option<&UdfGraph>, catalog: &[TableStats]) -> Result<f64, HarnessError> {
        let joint = assemble_joint(plan, udf, catalog)?;
        Ok(forward(self, &featurize(&joint, &self.encoder))?.runtime_seconds)
    }
}

impl CostModel for FlatModel {
    fn predict(&self, plan: &PlanTree, udf: Option<&UdfGraph>, catalog: &[TableStats]) -> Result<f64, HarnessError> {
        let joint = assemble_joint(plan, udf, catalog)?;
        Ok(self.forward(&flat_featurize(&joint, &self.encoder))?.runtime_seconds)
    }
}

/// Q-error percentiles overall and per UDF placement.
pub fn evaluate(model: &dyn CostModel, queries: &[EvalQuery]) -> Result<Metrics, HarnessError> {
    if queries.is_empty() {
        return Err(HarnessError::EmptyWorkload);
    }
    let mut q_errors = Vec::with_capacity(queries.len());
    let mut buckets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for q in queries {
        let pred = model.predict(&q.plan, q.udf.as_ref(), &q.catalog)?;
        let e = qerror(pred, q.label)?;
        q_errors.push(e);
        buckets.entry(placement_class(q.placement).to_string()).or_default().push(e);
    }
    Ok(Metrics {
        overall: QStats::new(q_errors.clone()),
        by_placement: buckets.into_iter().map(|(k, v)| (k, QStats::new(v))).collect(),
        q_errors,
    })
}

/// Measured runtimes of both placements of a query's UDF filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantLabels {
    pub pull_up: f64,
    pub push_down: f64,
}

impl VariantLabels {
    pub fn best(&self) -> Placement {
        if self.pull_up < self.push_down {
            Placement::PullUp
        } else {
            Placement::PushDown
        }
    }

    pub fn runtime(&self, p: Placement) -> f64 {
        match p {
            Placement::PullUp => self.pull_up,
            _ => self.push_down,
        }
    }
}

/// A UDF-filter query for the advisor. `udf` carries hit ratios at any
/// positive row count; `plan` carries estimated cardinalities.
#[derive(Debug, Clone)]
pub struct AdvisorQuery {
    pub query_id: String,
    pub plan: PlanTree,
    pub udf: UdfGraph,
    pub catalog: Arc<Vec<TableStats>>,
    pub labels: Option<VariantLabels>,
}

/// Chooses a placement for one query.
pub trait Decider {
    fn name(&self) -> String;
    fn decide(&self, q: &AdvisorQuery) -> Result<Placement, HarnessError>;
}

/// The advisor: cost distributions from a trained model, one strategy.
pub struct ModelDecider<'a> {
    pub model: &'a Model,
    pub strategy: Strategy,
    pub grid: SelectivityGrid,
}

impl Decider for ModelDecider<'_> {
    fn name(&self) -> String {
        self.strategy.name().to_string()
    }

    fn decide(&self, q: &AdvisorQuery) -> Result<Placement, HarnessError> {
        let pull = crate::advisor::build_variant(&q.plan, Placement::PullUp)?;
        let push = crate::advisor::build_variant(&q.plan, Placement::PushDown)?;
        let d_pull = cost_distribution(self.model, &pull, &q.udf, &self.grid, &q.catalog)?;
        let d_push = cost_distribution(self.model, &push, &q.udf, &self.grid, &q.catalog)?;
        Ok(decide(&d_pull, &d_push, self.strategy)?.choice)
    }
}

/// Feeds the true runtimes through the decision rules as flat distributions.
pub struct OracleDecider {
    pub strategy: Strategy,
    pub grid: SelectivityGrid,
}

impl Decider for OracleDecider {
    fn name(&self) -> String {
        format!("oracle-{}", self.strategy.name())
    }

    fn decide(&self, q: &AdvisorQuery) -> Result<Placement, HarnessError> {
        let l = q.labels.ok_or_else(|| HarnessError::MissingVariantLabel(q.query_id.clone()))?;
        let flat = |c: f64| CostDistribution { points: self.grid.values().iter().map(|&s| (s, c)).collect() };
        Ok(decide(&flat(l.pull_up), &flat(l.push_down), self.strategy)?.choice)
    }
}

pub struct FixedDecider(pub Placement);

impl Decider for FixedDecider {
    fn name(&self) -> String {
        format!("always-{}", placement_class(Some(self.0)))
    }

    fn decide(&self, _: &AdvisorQuery) -> Result<Placement, HarnessError> {
        Ok(self.0)
    }
}

/// Speedups are relative to always pushing the UDF filter down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisorMetrics {
    pub decider: String,
    pub queries: usize,
    pub pull_up_decisions: usize,
    pub total_runtime_hours: f64,
    pub total_speedup: f64,
    pub median_speedup: f64,
    pub optimal_total_speedup: f64,
    pub optimal_decisions: usize,
    /// Share of pull-up decisions that were slower than pushing down.
    pub false_positive_rate: f64,
    /// Summed regression time of false positives over the total chosen runtime.
    pub fp_impact: f64,
    /// Decision time over the total chosen runtime.
    pub overhead_fraction: f64,
}

pub fn evaluate_advisor(queries: &[AdvisorQuery], decider: &dyn Decider) -> Result<AdvisorMetrics, HarnessError> {
    if queries.is_empty() {
        return Err(HarnessError::EmptyWorkload);
    }
    let mut chosen_total = 0.0;
    let mut base_total = 0.0;
    let mut optimal_total = 0.0;
    let mut speedups = Vec::with_capacity(queries.len());
    let (mut pulls, mut fps, mut optimal) = (0usize, 0usize, 0usize);
    let mut regression = 0.0;
    let mut overhead = 0.0;
    for q in queries {
        let l = q.labels.ok_or_else(|| HarnessError::MissingVariantLabel(q.query_id.clone()))?;
        for v in [l.pull_up, l.push_down] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HarnessError::NonPositiveRuntime(v));
            }
        }
        let start = Instant::now();
        let choice = decider.decide(q)?;
        overhead += start.elapsed().as_secs_f64();
        let t = l.runtime(choice);
        chosen_total += t;
        base_total += l.push_down;
        optimal_total += l.pull_up.min(l.push_down);
        speedups.push(l.push_down / t);
        optimal += usize::from(t == l.pull_up.min(l.push_down));
        if choice == Placement::PullUp {
            pulls += 1;
            if l.pull_up > l.push_down {
                fps += 1;
                regression += l.pull_up - l.push_down;
            }
        }
    }
    speedups.sort_by(f64::total_cmp);
    Ok(AdvisorMetrics {
        decider: decider.name(),
        queries: queries.len(),
        pull_up_decisions: pulls,
        total_runtime_hours: chosen_total / 3600.0,
        total_speedup: base_total / chosen_total,
        median_speedup: percentile(&speedups, 0.5),
        optimal_total_speedup: base_total / optimal_total,
        optimal_decisions: optimal,
        false_positive_rate: if pulls == 0 { 0.0 } else { fps as f64 / pulls as f64 },
        fp_impact: regression / chosen_total,
        overhead_fraction: overhead / chosen_total,
    })
}

#[cfg(test)]
mod tests;
