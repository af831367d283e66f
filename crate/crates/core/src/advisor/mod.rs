//! Pull-up versus push-down of a UDF filter: plan variants, cost
//! distributions over an assumed-selectivity grid and the decision rules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cardest::rescale_input_rows;
use crate::cfg::UdfGraph;
use crate::datastore::TableStats;
use crate::model::{forward, Model, ModelError, Prediction};
use crate::plangraph::{assemble_joint, featurize, Cards, PlanError, PlanNode, PlanOp, PlanPath, PlanTree};

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("plan has no UDF filter")]
    NoUdfFilter,
    #[error("cost distributions are over different grids")]
    GridMismatch,
    #[error("invalid selectivity grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    PullUp,
    Intermediate,
    PushDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "UBC")]
    Ubc,
    #[serde(rename = "AUC")]
    Auc,
    Conservative,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Ubc, Strategy::Auc, Strategy::Conservative];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ubc => "UBC",
            Strategy::Auc => "AUC",
            Strategy::Conservative => "Conservative",
        }
    }
}

/// Strictly increasing selectivities in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityGrid {
    values: Vec<f64>,
}

impl Default for SelectivityGrid {
    fn default() -> Self {
        SelectivityGrid { values: vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.0] }
    }
}

impl SelectivityGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, AdvisorError> {
        if values.is_empty() {
            return Err(AdvisorError::InvalidGrid("empty".into()));
        }
        if values.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(AdvisorError::InvalidGrid("values must lie in (0, 1]".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AdvisorError::InvalidGrid("values must be strictly increasing".into()));
        }
        Ok(SelectivityGrid { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Predicted runtime (seconds) at each grid selectivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostDistribution {
    pub points: Vec<(f64, f64)>,
}

impl CostDistribution {
    /// Cost at the largest selectivity (1.0 on the default grid).
    pub fn upper_bound(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    /// Trapezoidal area; a single point counts as its cost.
    pub fn area(&self) -> f64 {
        match self.points.as_slice() {
            [] => 0.0,
            [p] => p.1,
            pts => pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum(),
        }
    }

    pub fn scaled(&self, c: f64) -> CostDistribution {
        CostDistribution { points: self.points.iter().map(|&(s, v)| (s, v * c)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub choice: Placement,
    pub strategy: Strategy,
    pub pull_up: CostDistribution,
    pub push_down: CostDistribution,
}

/// Pull-up wins only when strictly cheaper under the strategy's rule.
pub fn decide(d_pull: &CostDistribution, d_push: &CostDistribution, strategy: Strategy) -> Result<Decision, AdvisorError> {
    if d_pull.points.len() != d_push.points.len()
        || d_pull.points.iter().zip(&d_push.points).any(|(a, b)| a.0 != b.0)
    {
        return Err(AdvisorError::GridMismatch);
    }
    let pull = match strategy {
        Strategy::Ubc => d_pull.upper_bound() < d_push.upper_bound(),
        Strategy::Auc => d_pull.area() < d_push.area(),
        Strategy::Conservative => {
            !d_pull.points.is_empty() && d_pull.points.iter().zip(&d_push.points).all(|(a, b)| a.1 < b.1)
        }
    };
    Ok(Decision {
        choice: if pull { Placement::PullUp } else { Placement::PushDown },
        strategy,
        pull_up: d_pull.clone(),
        push_down: d_push.clone(),
    })
}

fn udf_filter_path(plan: &PlanTree) -> Result<PlanPath, AdvisorError> {
    match plan.udf_path() {
        Some(p) if plan.node(&p).is_udf_filter() => Ok(p),
        _ => Err(AdvisorError::NoUdfFilter),
    }
}

fn find_scan(n: &PlanNode, table: &str, path: &mut PlanPath) -> bool {
    if n.op == PlanOp::Scan && n.table.as_deref() == Some(table) {
        return true;
    }
    for (i, c) in n.children.iter().enumerate() {
        path.push(i);
        if find_scan(c, table, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// Path of the operator the UDF filter sits directly on top of for `placement`.
fn target_child(plan: &PlanTree, table: &str, placement: Placement) -> PlanPath {
    match placement {
        Placement::PushDown => {
            let mut p = Vec::new();
            find_scan(&plan.root, table, &mut p);
            p
        }
        Placement::PullUp => {
            let mut p = vec![0];
            if plan.node(&p).op == PlanOp::Agg {
                p.push(0);
            }
            p
        }
        Placement::Intermediate => {
            // Directly above the lowest join containing the source scan.
            let mut scan = Vec::new();
            find_scan(&plan.root, table, &mut scan);
            let mut p = scan.clone();
            while !p.is_empty() {
                p.pop();
                if plan.node(&p).op == PlanOp::Join {
                    return p;
                }
            }
            scan
        }
    }
}

fn clear_actuals_along(root: &mut PlanNode, path: &[usize]) {
    let mut n = root;
    n.cards.act_in = None;
    n.cards.act_out = None;
    for &i in path {
        n = &mut n.children[i];
        n.cards.act_in = None;
        n.cards.act_out = None;
    }
}

/// Moves the UDF filter to `placement` without touching the join order. The
/// moved filter passes estimated rows through; actual cardinalities that the
/// move invalidates are cleared.
pub fn build_variant(plan: &PlanTree, placement: Placement) -> Result<PlanTree, AdvisorError> {
    let fpath = udf_filter_path(plan)?;
    let filter = plan.node(&fpath);
    let table = filter.udf_binding.as_ref().unwrap().table.clone();

    let mut stripped = plan.clone();
    let mut template = {
        let slot = stripped.node_mut(&fpath);
        let child = slot.children.pop().unwrap();
        std::mem::replace(slot, child)
    };
    let target = target_child(&stripped, &table, placement);

    clear_actuals_along(&mut stripped.root, &fpath[..fpath.len() - 1]);
    let slot = stripped.node_mut(&target);
    let child = std::mem::replace(slot, PlanNode::new(PlanOp::Scan, Vec::new()));
    let rows = child.cards.est_out;
    template.cards = Cards { est_in: rows, est_out: rows, act_in: None, act_out: None };
    template.children = vec![child];
    *slot = template;
    clear_actuals_along(&mut stripped.root, &target[..target.len() - 1]);
    if target == fpath && stripped.node(&target).children == plan.node(&fpath).children {
        return Ok(plan.clone());
    }
    Ok(stripped)
}

/// Assumes the UDF filter keeps a fraction `s` of its input: the filter's
/// output and every cardinality strictly above it are multiplied by `s` once.
pub fn reannotate(plan: &PlanTree, s: f64) -> Result<PlanTree, AdvisorError> {
    let fpath = udf_filter_path(plan)?;
    let mut out = plan.clone();
    if s == 1.0 {
        return Ok(out);
    }
    fn scale(c: &mut Cards, s: f64, input: bool) {
        for x in [&mut c.est_out, &mut c.act_out].into_iter().flatten() {
            *x *= s;
        }
        if input {
            for x in [&mut c.est_in, &mut c.act_in].into_iter().flatten() {
                *x *= s;
            }
        }
    }
    for depth in 0..fpath.len() {
        scale(&mut out.node_mut(&fpath[..depth]).cards, s, true);
    }
    scale(&mut out.node_mut(&fpath).cards, s, false);
    Ok(out)
}

/// Predicted runtime of `plan` at every grid selectivity. `udf` carries hit
/// ratios annotated at any positive input row count; it is rescaled to the
/// UDF filter's input cardinality in the model's card mode.
pub fn cost_distribution(
    model: &Model,
    plan: &PlanTree,
    udf: &UdfGraph,
    grid: &SelectivityGrid,
    catalog: &[TableStats],
) -> Result<CostDistribution, AdvisorError> {
    let fpath = udf_filter_path(plan)?;
    let rows = plan.node(&fpath).cards.get(model.encoder.card_mode).0.unwrap_or(0.0);
    let udf = rescale_input_rows(udf, rows);
    let mut points = Vec::with_capacity(grid.values().len());
    for &s in grid.values() {
        let p = reannotate(plan, s)?;
        let joint = assemble_joint(&p, Some(&udf), catalog)?;
        let Prediction { runtime_seconds, .. } = forward(model, &featurize(&joint, &model.encoder))?;
        points.push((s, runtime_seconds));
    }
    Ok(CostDistribution { points })
}

/// Both variants' distributions and the decision of every strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    pub pull_up: CostDistribution,
    pub push_down: CostDistribution,
    pub decisions: Vec<(Strategy, Placement)>,
}

pub fn advise(
    model: &Model,
    plan: &PlanTree,
    udf: &UdfGraph,
    grid: &SelectivityGrid,
    catalog: &[TableStats],
) -> Result<Advice, AdvisorError> {
    let pull = cost_distribution(model, &build_variant(plan, Placement::PullUp)?, udf, grid, catalog)?;
    let push = cost_distribution(model, &build_variant(plan, Placement::PushDown)?, udf, grid, catalog)?;
    let decisions = Strategy::ALL
        .iter()
        .map(|&s| decide(&pull, &push, s).map(|d| (s, d.choice)))
        .collect::<Result<_, _>>()?;
    Ok(Advice { pull_up: pull, push_down: push, decisions })
}

#[cfg(test)]
mod tests;
