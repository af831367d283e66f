use std::collections::BTreeMap;

use super::{GenError, GeneratedUdf};
use crate::datastore::{ColumnData, Database, Distribution};
use crate::udfscript::{analyze_hazards, ColumnHazard, Interpreter, UdfAst};

/// Hazard flags merged over every UDF reading a column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Needs {
    null: bool,
    loop_bound: bool,
    non_negative: bool,
    positive: bool,
    divisor: bool,
}

impl Needs {
    fn merge(&mut self, h: &ColumnHazard) {
        self.null |= h.null_sensitive;
        self.loop_bound |= h.loop_bound;
        self.non_negative |= h.requires_non_negative;
        self.positive |= h.requires_positive;
        self.divisor |= h.divisor;
    }
}

/// Trip counts of column-bounded loops are kept in this range.
pub const LOOP_BOUND_RANGE: (i64, i64) = (1, 10);

fn fix_int(v: &mut [Option<i64>], n: Needs) {
    if n.null {
        v.iter_mut().filter(|x| x.is_none()).for_each(|x| *x = Some(0));
    }
    let min = |v: &[Option<i64>]| v.iter().flatten().copied().min();
    if n.loop_bound {
        v.iter_mut().flatten().for_each(|x| *x = (*x).clamp(LOOP_BOUND_RANGE.0, LOOP_BOUND_RANGE.1));
    }
    if n.non_negative {
        if let Some(m) = min(v).filter(|m| *m < 0) {
            v.iter_mut().flatten().for_each(|x| *x -= m);
        }
    }
    if n.positive {
        if let Some(m) = min(v).filter(|m| *m <= 0) {
            v.iter_mut().flatten().for_each(|x| *x += 1 - m);
        }
    }
    if n.divisor {
        let smallest = v.iter().flatten().copied().filter(|x| *x > 0).min().unwrap_or(1);
        v.iter_mut().flatten().filter(|x| **x == 0).for_each(|x| *x = smallest);
    }
}

fn fix_float(v: &mut [Option<f64>], n: Needs) {
    if n.null {
        v.iter_mut().filter(|x| x.is_none()).for_each(|x| *x = Some(0.0));
    }
    let min = |v: &[Option<f64>]| v.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if n.loop_bound {
        v.iter_mut().flatten().for_each(|x| *x = x.clamp(LOOP_BOUND_RANGE.0 as f64, LOOP_BOUND_RANGE.1 as f64));
    }
    if n.non_negative {
        let m = min(v);
        if m < 0.0 {
            v.iter_mut().flatten().for_each(|x| *x -= m);
        }
    }
    if n.positive {
        let m = min(v);
        if m <= 0.0 {
            v.iter_mut().flatten().for_each(|x| *x += 1.0 - m);
        }
    }
    if n.divisor {
        let smallest = v.iter().flatten().copied().filter(|x| *x > 0.0).fold(f64::INFINITY, f64::min);
        let smallest = if smallest.is_finite() { smallest } else { 1.0 };
        v.iter_mut().flatten().filter(|x| **x == 0.0).for_each(|x| *x = smallest);
    }
}

fn fix_column(data: &mut ColumnData, n: Needs) {
    match data {
        ColumnData::Int(v) => fix_int(v, n),
        ColumnData::Float(v) => fix_float(v, n),
        ColumnData::String(v) if n.null => v.iter_mut().filter(|x| x.is_none()).for_each(|x| *x = Some("".into())),
        ColumnData::Bool(v) if n.null => v.iter_mut().filter(|x| x.is_none()).for_each(|x| *x = Some(false)),
        _ => {}
    }
}

pub(crate) fn parse_for(db: &Database, udf: &GeneratedUdf) -> Result<UdfAst, GenError> {
    let table = db.table(&udf.table)?;
    Ok(crate::udfscript::parse_udf(&udf.source, &table.schema())?)
}

/// Interprets `ast` on every row of its table.
pub(crate) fn verify(db: &Database, udf: &GeneratedUdf, ast: &UdfAst) -> Result<(), GenError> {
    let table = db.table(&udf.table)?;
    let cols = crate::cardest::bind_columns(ast, table).map_err(|e| GenError::UnsatisfiableHazard {
        table: udf.table.clone(),
        reason: e.to_string(),
    })?;
    let mut interp = Interpreter::new();
    let mut row = Vec::with_capacity(cols.len());
    for i in 0..table.row_count {
        table.row_values(i, &cols, &mut row);
        if let Err(fault) = interp.run(ast, &row, &mut ()) {
            return Err(GenError::UnsatisfiableHazard { table: udf.table.clone(), reason: format!("row {i}: {fault}") });
        }
    }
    Ok(())
}

/// Applies the merged fixes. Returns the conformed data, the parsed UDFs and
/// the indices of UDFs whose hazards would require rewriting a key column
/// (those columns are left untouched).
pub(crate) fn conform(db: &Database, udfs: &[GeneratedUdf]) -> Result<(Database, Vec<UdfAst>, Vec<usize>), GenError> {
    let mut needs: BTreeMap<(String, String), (Needs, Vec<usize>)> = BTreeMap::new();
    let mut asts = Vec::with_capacity(udfs.len());
    for (i, u) in udfs.iter().enumerate() {
        let ast = parse_for(db, u)?;
        for h in &analyze_hazards(&ast).columns {
            let e = needs.entry((u.table.clone(), h.column.clone())).or_default();
            e.0.merge(h);
            e.1.push(i);
        }
        asts.push(ast);
    }

    let mut out = db.clone();
    let mut conflicts = Vec::new();
    for ((table, column), (n, readers)) in &needs {
        let spec = out.schema.table(table).and_then(|t| t.columns.iter().find(|c| &c.name == column));
        let is_key = spec.is_some_and(|c| matches!(c.distribution, Distribution::Serial | Distribution::Reference { .. }));
        let data = &mut out.table_mut(table)?.column_mut(column)?.data;
        if is_key {
            let mut fixed = data.clone();
            fix_column(&mut fixed, *n);
            if fixed != *data {
                conflicts.extend(readers.iter().copied());
            }
            continue;
        }
        fix_column(data, *n);
    }
    conflicts.sort_unstable();
    conflicts.dedup();
    Ok((out, asts, conflicts))
}

/// Conforms the data to every UDF of a workload. Hazards are merged per column
/// and fixed in a fixed order: NULL substitution, loop-bound clamping,
/// non-negative shift, positive shift, zero-divisor replacement. Key columns
/// are never rewritten. Every UDF is then interpreted on every row of its
/// table; any remaining fault makes the set unsatisfiable.
pub fn prepare_data(db: &Database, udfs: &[GeneratedUdf]) -> Result<Database, GenError> {
    let (out, asts, conflicts) = conform(db, udfs)?;
    if let Some(&i) = conflicts.first() {
        return Err(GenError::UnsatisfiableHazard {
            table: udfs[i].table.clone(),
            reason: "a hazard would require rewriting a key column".into(),
        });
    }
    for (u, ast) in udfs.iter().zip(&asts) {
        verify(&out, u, ast)?;
    }
    Ok(out)
}
