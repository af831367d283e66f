use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GenConfig, GenError, GeneratedUdf};
use crate::advisor::{build_variant, Placement};
use crate::cardest::ColumnPredicate;
use crate::datastore::{Database, Distribution, TableStats};
use crate::harness::{execute, udf_values, ExecConfig, ExecutionResult, LabelMode};
use crate::plangraph::{
    estimate_cards, AggFunc, Aggregate, PlanNode, PlanOp, PlanTree, Predicate, UdfBinding,
};
use crate::udfscript::{CmpOp, Dtype, UdfAst, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuery {
    /// Estimated and actual cardinalities filled in.
    pub plan: PlanTree,
    pub sql: String,
    /// `None` for projection UDFs.
    pub placement: Option<Placement>,
    pub target_selectivity: Option<f64>,
    pub realized_selectivity: Option<f64>,
    /// One synthetic-mode execution of `plan`.
    pub execution: ExecutionResult,
}

struct JoinStep {
    table: String,
    left: String,
    right: String,
}

/// Walks foreign keys outwards from `start`, one new table per join.
fn join_walk(db: &Database, start: &str, n: usize, rng: &mut ChaCha8Rng) -> Vec<JoinStep> {
    let mut have = vec![start.to_string()];
    let mut steps = Vec::new();
    while steps.len() < n {
        let options: Vec<JoinStep> = db
            .schema
            .foreign_keys
            .iter()
            .filter_map(|fk| {
                let (child_in, parent_in) = (have.contains(&fk.table), have.contains(&fk.ref_table));
                let child = format!("{}.{}", fk.table, fk.column);
                let parent = format!("{}.{}", fk.ref_table, fk.ref_column);
                match (child_in, parent_in) {
                    (true, false) => Some(JoinStep { table: fk.ref_table.clone(), left: child, right: parent }),
                    (false, true) => Some(JoinStep { table: fk.table.clone(), left: parent, right: child }),
                    _ => None,
                }
            })
            .collect();
        let Some(step) = (!options.is_empty()).then(|| {
            let i = rng.gen_range(0..options.len());
            options.into_iter().nth(i).unwrap()
        }) else {
            break;
        };
        have.push(step.table.clone());
        steps.push(step);
    }
    steps
}

fn is_data_column(db: &Database, table: &str, column: &str) -> bool {
    db.schema
        .table(table)
        .and_then(|t| t.columns.iter().find(|c| c.name == column))
        .is_some_and(|c| !matches!(c.distribution, Distribution::Serial | Distribution::Reference { .. }))
}

/// A column predicate keeping most rows: a literal at a high (or low)
/// quantile of the column's non-null values.
fn column_filter(db: &Database, table: &str, rng: &mut ChaCha8Rng) -> Option<ColumnPredicate> {
    let t = db.table(table).ok()?;
    let candidates: Vec<_> = t.columns.iter().filter(|c| is_data_column(db, table, &c.name)).collect();
    let col = candidates.choose(rng)?;
    let mut values: Vec<Value> = col.data.values().filter(|v| !v.is_null()).collect();
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let name = format!("{table}.{}", col.name);
    let q = rng.gen_range(0.7..0.995);
    let at = |p: f64| values[((p * (values.len() - 1) as f64).round() as usize).min(values.len() - 1)].clone();
    Some(match col.dtype() {
        Dtype::String | Dtype::Bool => {
            let v = values.choose(rng).unwrap().clone();
            ColumnPredicate::new(name, CmpOp::Ne, v)
        }
        _ if rng.gen_bool(0.5) => ColumnPredicate::new(name, CmpOp::Le, at(q)),
        _ => ColumnPredicate::new(name, CmpOp::Ge, at(1.0 - q)),
    })
}

/// Filter counts concentrate on small values within the configured range.
fn sample_filters(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> usize {
    let span = (cfg.filters.hi - cfg.filters.lo + 1) as f64;
    cfg.filters.lo + ((rng.gen::<f64>().powi(3) * span) as usize).min(cfg.filters.hi - cfg.filters.lo)
}

fn scan_with_filters(table: &str, terms: Vec<ColumnPredicate>) -> PlanNode {
    let scan = PlanNode::scan(table);
    if terms.is_empty() {
        scan
    } else {
        PlanNode::filter(scan, terms)
    }
}

fn aggregate_for(db: &Database, tables: &[String], rng: &mut ChaCha8Rng) -> Aggregate {
    let mut numeric = Vec::new();
    let mut groupable = Vec::new();
    for t in tables {
        let Some(spec) = db.schema.table(t) else { continue };
        for c in &spec.columns {
            if !is_data_column(db, t, &c.name) {
                continue;
            }
            let name = format!("{t}.{}", c.name);
            if c.dtype.is_numeric() {
                numeric.push(name.clone());
            }
            let low_card = matches!(c.distribution, Distribution::Zipf { n, .. } if n <= 50)
                || c.dtype == Dtype::Bool
                || matches!(c.distribution, Distribution::Uniform { lo, hi } if c.dtype == Dtype::String && hi - lo <= 40.0);
            if low_card {
                groupable.push(name);
            }
        }
    }
    let func = *[AggFunc::Count, AggFunc::Sum, AggFunc::Avg, AggFunc::Min, AggFunc::Max].choose(rng).unwrap();
    let (func, column) = match (func, numeric.choose(rng)) {
        (AggFunc::Count, _) | (_, None) => (AggFunc::Count, None),
        (f, Some(c)) => (f, Some(c.clone())),
    };
    let group_by = match groupable.choose(rng) {
        Some(g) if rng.gen_bool(0.3) => vec![g.clone()],
        _ => Vec::new(),
    };
    Aggregate { func, column, group_by }
}

/// Threshold keeping a fraction `s` of `values` under `cmp` (`>=` or `<`);
/// at least one row and, with ties, possibly more than `s` rows are kept.
pub fn calibrate_threshold(values: &[Value], s: f64, cmp: CmpOp) -> Value {
    let mut v: Vec<f64> = values.iter().filter_map(|x| x.as_f64()).filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return Value::Float(0.0);
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let k = ((s * n as f64).round() as usize).clamp(1, n);
    Value::Float(match cmp {
        // First value above the k-th smallest, so ties never drop rows.
        CmpOp::Lt => v[k..].iter().copied().find(|x| *x > v[k - 1]).unwrap_or(v[n - 1] + 1.0),
        _ => v[n - k],
    })
}

fn sql_literal(v: &Value) -> String {
    match v {
        Value::Str(s) => format!("'{}'", s.replace('\'', "''")),
        v => v.to_string(),
    }
}

fn render_sql(plan: &PlanTree, udf_name: &str) -> String {
    let mut from = String::new();
    let mut wheres = Vec::new();
    let mut select = "*".to_string();
    let mut group = String::new();
    fn walk(n: &PlanNode, from: &mut String, wheres: &mut Vec<String>, udf_name: &str) {
        match n.op {
            PlanOp::Scan => {
                if from.is_empty() {
                    from.push_str(n.table.as_deref().unwrap());
                }
            }
            PlanOp::Join => {
                walk(&n.children[0], from, wheres, udf_name);
                let Some(Predicate::Equi { left, right }) = &n.predicate else { return };
                let right_table = n.children[1].tables().first().map(|t| t.to_string()).unwrap_or_default();
                from.push_str(&format!(" JOIN {right_table} ON {left} = {right}"));
                walk(&n.children[1], &mut String::from("-"), wheres, udf_name);
            }
            _ => {
                for c in &n.children {
                    walk(c, from, wheres, udf_name);
                }
                match &n.predicate {
                    Some(Predicate::Conjunction { terms }) => {
                        wheres.extend(terms.iter().map(|t| format!("{} {} {}", t.column, t.cmp.symbol(), sql_literal(&t.value))));
                    }
                    Some(Predicate::Udf { cmp, threshold }) => {
                        let args = n.udf_binding.as_ref().unwrap().args.join(", ");
                        wheres.push(format!("{udf_name}({args}) {} {threshold}", cmp.symbol()));
                    }
                    _ => {}
                }
            }
        }
    }
    walk(&plan.root, &mut from, &mut wheres, udf_name);
    if let Some(b) = &plan.root.udf_binding {
        select = format!("{udf_name}({})", b.args.join(", "));
    }
    plan.root.visit(&mut |n| {
        if let Some(a) = &n.aggregate {
            let arg = a.column.clone().unwrap_or_else(|| "*".into());
            let mut cols = a.group_by.clone();
            cols.push(format!("{}({arg})", a.func.name().to_uppercase()));
            select = cols.join(", ");
            if !a.group_by.is_empty() {
                group = format!(" GROUP BY {}", a.group_by.join(", "));
            }
        }
    });
    let mut sql = format!("SELECT {select} FROM {from}");
    if !wheres.is_empty() {
        sql.push_str(&format!(" WHERE {}", wheres.join(" AND ")));
    }
    sql.push_str(&group);
    sql
}

/// Generates an SPJA query around `udf`: a foreign-key join walk from the
/// UDF's table, simple column filters, an optional aggregate, and the UDF as a
/// projection or as a filter whose threshold is calibrated on the values the
/// UDF produces at its placement. `db` must already be prepared for the UDF.
pub fn gen_query(
    cfg: &GenConfig,
    db: &Database,
    stats: &[TableStats],
    udf: &GeneratedUdf,
    ast: &UdfAst,
    seed: u64,
) -> Result<GeneratedQuery, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_joins = cfg.joins.sample(&mut rng);
    let mut steps = join_walk(db, &udf.table, n_joins, &mut rng);
    let mut tables = vec![udf.table.clone()];
    tables.extend(steps.iter().map(|s| s.table.clone()));

    let mut terms: Vec<Vec<ColumnPredicate>> = vec![Vec::new(); tables.len()];
    for _ in 0..sample_filters(cfg, &mut rng) {
        let i = rng.gen_range(0..tables.len());
        if let Some(p) = column_filter(db, &tables[i], &mut rng) {
            terms[i].push(p);
        }
    }
    let projection = rng.gen_bool(cfg.projection_share);
    let agg = (!projection && rng.gen_bool(cfg.agg_probability)).then(|| aggregate_for(db, &tables, &mut rng));
    let binding = UdfBinding {
        table: udf.table.clone(),
        args: udf.source.params.iter().map(|p| format!("{}.{}", udf.table, p.name)).collect(),
    };
    let cmp = if rng.gen_bool(0.5) { CmpOp::Ge } else { CmpOp::Lt };
    let (lo, hi) = cfg.selectivity;
    let target = rng.gen_range(lo.ln()..=hi.ln()).exp().min(1.0);
    let placement = *[Placement::PushDown, Placement::Intermediate, Placement::PullUp].choose(&mut rng).unwrap();

    // Drop trailing joins while the estimated result is too large.
    let build = |steps: &[JoinStep], terms: &[Vec<ColumnPredicate>]| {
        let mut body = scan_with_filters(&udf.table, terms[0].clone());
        for (i, s) in steps.iter().enumerate() {
            body = PlanNode::join(body, scan_with_filters(&s.table, terms[i + 1].clone()), &s.left, &s.right);
        }
        body
    };
    let mut body = build(&steps, &terms);
    loop {
        let mut probe = PlanTree::new(PlanNode::new(PlanOp::Output, vec![body.clone()]));
        estimate_cards(&mut probe, stats)?;
        if steps.is_empty() || probe.root.cards.est_out.unwrap_or(0.0) <= cfg.max_join_rows {
            break;
        }
        steps.pop();
        terms.truncate(steps.len() + 1);
        tables.truncate(steps.len() + 1);
        body = build(&steps, &terms);
    }

    let wrap_agg = |n: PlanNode| match &agg {
        Some(a) => {
            let mut agg_node = PlanNode::new(PlanOp::Agg, vec![n]);
            agg_node.aggregate = Some(a.clone());
            agg_node
        }
        None => n,
    };
    let (mut plan, placement) = if projection {
        let mut out = PlanNode::new(PlanOp::Output, vec![wrap_agg(body)]);
        out.udf_binding = Some(binding);
        (PlanTree::new(out), None)
    } else {
        let f = PlanNode::udf_filter(body, binding, cmp, Value::Float(0.0));
        let base = PlanTree::new(PlanNode::new(PlanOp::Output, vec![wrap_agg(f)]));
        let moved = build_variant(&base, placement).map_err(|e| GenError::InvalidConfig(e.to_string()))?;
        (moved, Some(placement))
    };

    let (mut target_sel, mut realized) = (None, None);
    if placement.is_some() {
        let values = udf_values(&plan, db, ast)?;
        let threshold = calibrate_threshold(&values, target, cmp);
        if !values.is_empty() {
            let kept = values.iter().filter(|v| crate::harness::udf_passes(cmp, v, &threshold)).count();
            realized = Some(kept as f64 / values.len() as f64);
        }
        target_sel = Some(target);
        let path = plan.udf_path().unwrap();
        plan.node_mut(&path).predicate = Some(Predicate::Udf { cmp, threshold });
    }
    estimate_cards(&mut plan, stats)?;
    let execution = execute(&plan, db, Some(ast), &ExecConfig::with_mode(LabelMode::Synthetic))?;
    execution.annotate(&mut plan);
    let sql = render_sql(&plan, &udf.source.name);
    Ok(GeneratedQuery { plan, sql, placement, target_selectivity: target_sel, realized_selectivity: realized, execution })
}
