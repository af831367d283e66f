use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::prepare::{conform, verify};
use super::{gen_query, gen_udf, GenConfig, GenError, GeneratedUdf};
use crate::advisor::{build_variant, Placement};
use crate::cardest::{annotate_from_trace, annotate_hit_ratios, SAMPLE_SIZE};
use crate::cfg::{build_udf_graph, UdfGraph};
use crate::datastore::{build_stats, sample_rows, Database, RowSample, TableStats, DEFAULT_BUCKETS};
use crate::harness::{execute, AdvisorQuery, EvalQuery, ExecConfig, LabelMode, VariantLabels};
use crate::plangraph::{CardMode, PlanTree};
use crate::udfscript::{parse_udf, TraceCounters, UdfAst, UdfSource};

/// What the executor observed about the UDF in the query's own plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub udf_rows: u64,
    pub trace: Option<TraceCounters>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMeta {
    pub branches: usize,
    pub loops: usize,
    pub ops: usize,
    pub target_selectivity: Option<f64>,
    pub realized_selectivity: Option<f64>,
    /// `None` for projection UDFs.
    pub placement: Option<Placement>,
}

/// One workload query, serialized as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadRecord {
    pub query_id: String,
    pub db_ref: String,
    pub plan: PlanTree,
    pub udf_source: UdfSource,
    pub udf_table: String,
    pub annotations: Annotations,
    pub label: Option<f64>,
    pub label_mode: Option<LabelMode>,
    pub variants: Option<VariantLabels>,
    pub meta: QueryMeta,
    pub sql: String,
}

/// Generated queries with the database conformed to all of their UDFs.
#[derive(Debug, Clone)]
pub struct Workload {
    pub db: Database,
    pub records: Vec<WorkloadRecord>,
    /// UDFs replaced because the prepared data could not make them fault-free.
    pub regenerated: usize,
}

/// Regeneration rounds before a workload is declared unsatisfiable.
const MAX_ROUNDS: usize = 50;

fn udf_seed(seed: u64, i: usize, round: usize) -> u64 {
    seed.wrapping_mul(0x100_0000_01b3) ^ ((i as u64) << 20 | round as u64)
}

/// Generates `n` queries with one UDF each over `db`. UDFs are generated
/// first; the data is conformed to all of them together and every UDF whose
/// hazards remain unsatisfied is regenerated until the whole set verifies.
pub fn gen_workload(cfg: &GenConfig, db: &Database, n: usize, seed: u64, db_ref: &str) -> Result<Workload, GenError> {
    cfg.validate()?;
    let mut udfs: Vec<GeneratedUdf> = (0..n).map(|i| gen_udf(cfg, &db.schema, udf_seed(seed, i, 0))).collect();
    let mut verified: HashMap<usize, crate::datastore::Table> = HashMap::new();
    let mut round = 0;
    let mut regenerated = 0;
    let (prepared, asts) = loop {
        let (out, asts, conflicts) = conform(db, &udfs)?;
        let mut failed = conflicts;
        for (i, (u, ast)) in udfs.iter().zip(&asts).enumerate() {
            if failed.contains(&i) {
                continue;
            }
            let table = out.table(&u.table)?;
            if verified.get(&i).is_some_and(|t| t == table) {
                continue;
            }
            match verify(&out, u, ast) {
                Ok(()) => {
                    verified.insert(i, table.clone());
                }
                Err(GenError::UnsatisfiableHazard { .. }) => failed.push(i),
                Err(e) => return Err(e),
            }
        }
        if failed.is_empty() {
            break (out, asts);
        }
        round += 1;
        if round > MAX_ROUNDS {
            let u = &udfs[failed[0]];
            return Err(GenError::UnsatisfiableHazard {
                table: u.table.clone(),
                reason: format!("{} UDFs still fault after {MAX_ROUNDS} regeneration rounds", failed.len()),
            });
        }
        regenerated += failed.len();
        for i in failed {
            udfs[i] = gen_udf(cfg, &db.schema, udf_seed(seed, i, round));
            verified.remove(&i);
        }
    };

    let stats: Vec<TableStats> = prepared.tables.iter().map(|t| build_stats(t, DEFAULT_BUCKETS)).collect();
    let mut records = Vec::with_capacity(n);
    for (i, (u, ast)) in udfs.iter().zip(&asts).enumerate() {
        let q = gen_query(cfg, &prepared, &stats, u, ast, seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))?;
        records.push(WorkloadRecord {
            query_id: format!("{db_ref}-q{i:05}"),
            db_ref: db_ref.to_string(),
            plan: q.plan,
            udf_source: u.source.clone(),
            udf_table: u.table.clone(),
            annotations: Annotations { udf_rows: q.execution.udf_rows, trace: q.execution.udf_trace.clone() },
            label: None,
            label_mode: None,
            variants: None,
            meta: QueryMeta {
                branches: u.meta.branches,
                loops: u.meta.loops,
                ops: u.meta.ops,
                target_selectivity: q.target_selectivity,
                realized_selectivity: q.realized_selectivity,
                placement: q.placement,
            },
            sql: q.sql,
        });
    }
    Ok(Workload { db: prepared, records, regenerated })
}

fn parse_record_udf(db: &Database, r: &WorkloadRecord) -> Result<UdfAst, GenError> {
    Ok(parse_udf(&r.udf_source, &db.table(&r.udf_table)?.schema())?)
}

/// Executes every record in `mode` and stores its runtime label and fresh
/// actual cardinalities. With `variants`, UDF-filter queries are also run with
/// the filter pulled up and pushed down.
pub fn label_workload(records: &mut [WorkloadRecord], db: &Database, mode: LabelMode, variants: bool) -> Result<(), GenError> {
    let cfg = ExecConfig::with_mode(mode);
    for r in records.iter_mut() {
        let ast = parse_record_udf(db, r)?;
        let res = execute(&r.plan, db, Some(&ast), &cfg)?;
        res.annotate(&mut r.plan);
        r.annotations = Annotations { udf_rows: res.udf_rows, trace: res.udf_trace.clone() };
        r.label = Some(res.runtime_seconds);
        r.label_mode = Some(mode);
        if variants && r.meta.placement.is_some() {
            let run = |p: Placement| -> Result<f64, GenError> {
                let plan = build_variant(&r.plan, p).map_err(|e| GenError::InvalidConfig(e.to_string()))?;
                Ok(execute(&plan, db, Some(&ast), &cfg)?.runtime_seconds)
            };
            r.variants = Some(VariantLabels { pull_up: run(Placement::PullUp)?, push_down: run(Placement::PushDown)? });
        }
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), GenError> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|source| GenError::Json { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, GenError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| GenError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

/// A prepared database with the statistics and samples the estimators use.
#[derive(Debug, Clone)]
pub struct DbContext {
    pub db: Database,
    pub stats: Arc<Vec<TableStats>>,
    pub samples: HashMap<String, RowSample>,
}

impl DbContext {
    pub fn new(db: Database) -> Self {
        let stats = Arc::new(db.tables.iter().map(|t| build_stats(t, DEFAULT_BUCKETS)).collect());
        let samples = db.tables.iter().map(|t| (t.name.clone(), sample_rows(t, SAMPLE_SIZE, 0x5eed))).collect();
        DbContext { db, stats, samples }
    }

    fn table_stats(&self, table: &str) -> Result<&TableStats, GenError> {
        self.stats
            .iter()
            .find(|s| s.table == table)
            .ok_or_else(|| GenError::InvalidConfig(format!("no statistics for table `{table}`")))
    }

    /// The record's UDF graph with hit ratios estimated from statistics and
    /// the row sample, at `rows` invocations.
    pub fn estimated_graph(&self, r: &WorkloadRecord, rows: f64) -> Result<UdfGraph, GenError> {
        let ast = parse_record_udf(&self.db, r)?;
        let sample = &self.samples[&r.udf_table];
        Ok(annotate_hit_ratios(&build_udf_graph(&ast), self.table_stats(&r.udf_table)?, sample, rows)?)
    }

    /// The record's UDF graph annotated exactly from its execution trace.
    pub fn actual_graph(&self, r: &WorkloadRecord) -> Result<UdfGraph, GenError> {
        let ast = parse_record_udf(&self.db, r)?;
        let graph = build_udf_graph(&ast);
        Ok(match &r.annotations.trace {
            Some(t) => annotate_from_trace(&graph, t, r.annotations.udf_rows as f64),
            None => annotate_from_trace(&graph, &TraceCounters::for_ast(&ast), 0.0),
        })
    }
}

fn udf_est_rows(plan: &PlanTree) -> f64 {
    plan.udf_path().and_then(|p| plan.node(&p).cards.est_in).unwrap_or(1.0).max(1.0)
}

/// Model input for a labeled record, with the UDF graph annotated for `mode`.
pub fn eval_query(r: &WorkloadRecord, ctx: &DbContext, mode: CardMode) -> Result<EvalQuery, GenError> {
    let label = r.label.ok_or_else(|| GenError::Unlabeled(r.query_id.clone()))?;
    let udf = match mode {
        CardMode::Actual => ctx.actual_graph(r)?,
        CardMode::Estimated => ctx.estimated_graph(r, udf_est_rows(&r.plan))?,
    };
    Ok(EvalQuery {
        query_id: r.query_id.clone(),
        plan: r.plan.clone(),
        udf: Some(udf),
        catalog: ctx.stats.clone(),
        label,
        placement: r.meta.placement,
    })
}

/// Advisor input for a UDF-filter record; `None` for projections. The graph
/// carries estimated hit ratios, as at optimization time.
pub fn advisor_query(r: &WorkloadRecord, ctx: &DbContext) -> Result<Option<AdvisorQuery>, GenError> {
    if r.meta.placement.is_none() {
        return Ok(None);
    }
    Ok(Some(AdvisorQuery {
        query_id: r.query_id.clone(),
        plan: r.plan.clone(),
        udf: ctx.estimated_graph(r, udf_est_rows(&r.plan))?,
        catalog: ctx.stats.clone(),
        labels: r.variants,
    }))
}
