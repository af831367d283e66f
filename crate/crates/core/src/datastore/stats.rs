//! Column statistics (equi-depth histograms, top-k, distinct counts) and
//! single-column selectivity estimation from them.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::table::{ColumnData, Table};
use crate::udfscript::{CmpOp, Dtype, Value};

pub const DEFAULT_BUCKETS: usize = 64;
pub const TOP_K: usize = 10;

/// Closed value range `[lo, hi]` holding `count` non-null values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: Value,
    pub hi: Value,
    pub count: u64,
    pub distinct: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub dtype: Dtype,
    pub row_count: u64,
    pub null_count: u64,
    pub null_fraction: f64,
    pub distinct_count: u64,
    pub min: Option<Value>,
    pub max: Option<Value>,
    /// Mean of non-null values for int, float and bool columns.
    pub mean: Option<f64>,
    pub buckets: Vec<Bucket>,
    /// Most common values, most frequent first, with exact counts.
    pub top_k: Vec<(Value, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableStats {
    pub table: String,
    pub row_count: u64,
    pub columns: Vec<ColumnStats>,
}

impl TableStats {
    pub fn column(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.name == name)
    }
}

pub fn build_stats(table: &Table, buckets: usize) -> TableStats {
    TableStats {
        table: table.name.clone(),
        row_count: table.row_count as u64,
        columns: table.columns.iter().map(|c| column_stats(&c.name, &c.data, buckets)).collect(),
    }
}

fn sorted_non_null(data: &ColumnData) -> Vec<Value> {
    let mut v: Vec<Value> = data.values().filter(|v| !v.is_null()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn column_stats(name: &str, data: &ColumnData, buckets: usize) -> ColumnStats {
    let row_count = data.len() as u64;
    let sorted = sorted_non_null(data);
    let n = sorted.len();

    let mut runs: Vec<(Value, u64)> = Vec::new();
    for v in &sorted {
        match runs.last_mut() {
            Some((last, c)) if last.total_cmp(v) == Ordering::Equal => *c += 1,
            _ => runs.push((v.clone(), 1)),
        }
    }
    let distinct_count = runs.len() as u64;

    let b = if distinct_count <= 1 { n.min(1) } else { buckets.max(1).min(n) };
    let mut hist = Vec::with_capacity(b);
    for k in 0..b {
        let (start, end) = (k * n / b, (k + 1) * n / b);
        let chunk = &sorted[start..end];
        let distinct = 1 + chunk.windows(2).filter(|w| w[0].total_cmp(&w[1]) != Ordering::Equal).count() as u64;
        hist.push(Bucket {
            lo: chunk[0].clone(),
            hi: chunk[chunk.len() - 1].clone(),
            count: chunk.len() as u64,
            distinct,
        });
    }

    let mut top = runs.clone();
    top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.total_cmp(&b.0)));
    top.truncate(TOP_K);

    let mean = match data.dtype() {
        Dtype::String => None,
        _ if n == 0 => None,
        _ => Some(sorted.iter().map(|v| v.as_f64().unwrap()).sum::<f64>() / n as f64),
    };
    ColumnStats {
        name: name.to_string(),
        dtype: data.dtype(),
        row_count,
        null_count: row_count - n as u64,
        null_fraction: if row_count == 0 { 0.0 } else { (row_count - n as u64) as f64 / row_count as f64 },
        distinct_count,
        min: sorted.first().cloned(),
        max: sorted.last().cloned(),
        mean,
        buckets: hist,
        top_k: top,
    }
}

/// Conjunction of comparisons against literals on a single column, reduced to
/// bounds plus equality and inequality sets. Integer and bool columns use
/// inclusive integer bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnConstraint {
    dtype: Dtype,
    lo: Option<(Value, bool)>,
    hi: Option<(Value, bool)>,
    eq: Option<Value>,
    ne: Vec<Value>,
    empty: bool,
}

fn int_like(dtype: Dtype) -> bool {
    matches!(dtype, Dtype::Int | Dtype::Bool)
}

/// Integer view used for int and bool columns.
fn as_int_value(v: &Value) -> Option<f64> {
    match v {
        Value::Bool(b) => Some(*b as i64 as f64),
        other => other.as_f64(),
    }
}

/// Sort key compatible with the column's value order.
fn key(v: &Value) -> f64 {
    match v {
        Value::Str(s) => {
            let mut k = 0.0;
            let mut scale = 1.0 / 256.0;
            for b in s.bytes().take(7) {
                k += b as f64 * scale;
                scale /= 256.0;
            }
            k
        }
        other => as_int_value(other).unwrap_or(f64::NAN),
    }
}

fn cmp_values(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Str(x), Value::Str(y)) => x.cmp(y),
        _ => key(a).total_cmp(&key(b)),
    }
}

impl ColumnConstraint {
    pub fn new(dtype: Dtype) -> Self {
        ColumnConstraint { dtype, lo: None, hi: None, eq: None, ne: Vec::new(), empty: false }
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    fn tighten_lo(&mut self, v: Value, inclusive: bool) {
        let replace = match &self.lo {
            None => true,
            Some((cur, cur_inc)) => match cmp_values(&v, cur) {
                Ordering::Greater => true,
                Ordering::Equal => *cur_inc && !inclusive,
                Ordering::Less => false,
            },
        };
        if replace {
            self.lo = Some((v, inclusive));
        }
    }

    fn tighten_hi(&mut self, v: Value, inclusive: bool) {
        let replace = match &self.hi {
            None => true,
            Some((cur, cur_inc)) => match cmp_values(&v, cur) {
                Ordering::Less => true,
                Ordering::Equal => *cur_inc && !inclusive,
                Ordering::Greater => false,
            },
        };
        if replace {
            self.hi = Some((v, inclusive));
        }
    }

    /// Adds `column <cmp> literal`.
    pub fn add(&mut self, cmp: CmpOp, lit: &Value) {
        if lit.is_null() {
            self.empty = true;
            return;
        }
        if matches!(lit, Value::Str(_)) != (self.dtype == Dtype::String) {
            self.empty = true;
            return;
        }
        if int_like(self.dtype) {
            let v = as_int_value(lit).unwrap();
            let int = |x: f64| Value::Int(x as i64);
            match cmp {
                CmpOp::Lt => self.tighten_hi(int(v.ceil() - 1.0), true),
                CmpOp::Le => self.tighten_hi(int(v.floor()), true),
                CmpOp::Gt => self.tighten_lo(int(v.floor() + 1.0), true),
                CmpOp::Ge => self.tighten_lo(int(v.ceil()), true),
                CmpOp::Eq if v.fract() != 0.0 => self.empty = true,
                CmpOp::Eq => self.set_eq(int(v)),
                CmpOp::Ne if v.fract() != 0.0 => {}
                CmpOp::Ne => self.ne.push(int(v)),
            }
        } else {
            let v = match lit {
                Value::Int(i) => Value::Float(*i as f64),
                other => other.clone(),
            };
            match cmp {
                CmpOp::Lt => self.tighten_hi(v, false),
                CmpOp::Le => self.tighten_hi(v, true),
                CmpOp::Gt => self.tighten_lo(v, false),
                CmpOp::Ge => self.tighten_lo(v, true),
                CmpOp::Eq => self.set_eq(v),
                CmpOp::Ne => self.ne.push(v),
            }
        }
    }

    fn set_eq(&mut self, v: Value) {
        match &self.eq {
            Some(cur) if cmp_values(cur, &v) != Ordering::Equal => self.empty = true,
            _ => self.eq = Some(v),
        }
    }

    fn admits(&self, v: &Value) -> bool {
        let lo_ok = self.lo.as_ref().is_none_or(|(b, inc)| match cmp_values(v, b) {
            Ordering::Greater => true,
            Ordering::Equal => *inc,
            Ordering::Less => false,
        });
        let hi_ok = self.hi.as_ref().is_none_or(|(b, inc)| match cmp_values(v, b) {
            Ordering::Less => true,
            Ordering::Equal => *inc,
            Ordering::Greater => false,
        });
        lo_ok && hi_ok && !self.ne.iter().any(|n| cmp_values(n, v) == Ordering::Equal)
    }
}

impl ColumnStats {
    fn non_null(&self) -> u64 {
        self.row_count - self.null_count
    }

    /// Estimated fraction of all rows (NULLs never match) equal to `v`.
    pub fn eq_fraction(&self, v: &Value) -> f64 {
        if self.row_count == 0 {
            return 0.0;
        }
        if let Some((_, c)) = self.top_k.iter().find(|(t, _)| cmp_values(t, v) == Ordering::Equal) {
            return *c as f64 / self.row_count as f64;
        }
        let (Some(min), Some(max)) = (&self.min, &self.max) else { return 0.0 };
        if cmp_values(v, min) == Ordering::Less || cmp_values(v, max) == Ordering::Greater {
            return 0.0;
        }
        let top_total: u64 = self.top_k.iter().map(|(_, c)| c).sum();
        let rest_distinct = self.distinct_count.saturating_sub(self.top_k.len() as u64);
        if rest_distinct == 0 {
            return 0.0;
        }
        (self.non_null() - top_total) as f64 / rest_distinct as f64 / self.row_count as f64
    }

    /// Fraction of a bucket's values satisfying the constraint's bounds,
    /// assuming values spread uniformly over the bucket's range.
    fn bucket_overlap(&self, b: &Bucket, c: &ColumnConstraint) -> f64 {
        let (blo, bhi) = (key(&b.lo), key(&b.hi));
        if cmp_values(&b.lo, &b.hi) == Ordering::Equal {
            let lo_ok = c.lo.as_ref().is_none_or(|(v, inc)| {
                let o = cmp_values(&b.lo, v);
                o == Ordering::Greater || (*inc && o == Ordering::Equal)
            });
            let hi_ok = c.hi.as_ref().is_none_or(|(v, inc)| {
                let o = cmp_values(&b.lo, v);
                o == Ordering::Less || (*inc && o == Ordering::Equal)
            });
            return (lo_ok && hi_ok) as u8 as f64;
        }
        if int_like(self.dtype) {
            let a = c.lo.as_ref().map_or(f64::NEG_INFINITY, |(v, _)| key(v));
            let z = c.hi.as_ref().map_or(f64::INFINITY, |(v, _)| key(v));
            let overlap = (z.min(bhi) - a.max(blo) + 1.0).max(0.0);
            return (overlap / (bhi - blo + 1.0)).min(1.0);
        }
        if c.lo.as_ref().is_some_and(|(v, _)| cmp_values(v, &b.hi) == Ordering::Greater)
            || c.hi.as_ref().is_some_and(|(v, _)| cmp_values(v, &b.lo) == Ordering::Less)
        {
            return 0.0;
        }
        let a = c.lo.as_ref().map_or(blo, |(v, _)| key(v).max(blo));
        let z = c.hi.as_ref().map_or(bhi, |(v, _)| key(v).min(bhi));
        if bhi > blo {
            ((z - a) / (bhi - blo)).clamp(0.0, 1.0)
        } else {
            // Distinct strings sharing their leading bytes.
            0.5
        }
    }

    /// Estimated fraction of all rows satisfying the constraint.
    pub fn selectivity(&self, c: &ColumnConstraint) -> f64 {
        if c.empty || self.row_count == 0 {
            return 0.0;
        }
        if let Some(v) = &c.eq {
            return if c.admits(v) { self.eq_fraction(v) } else { 0.0 };
        }
        if self.top_k.len() as u64 == self.distinct_count {
            // The frequency list is complete.
            let hits: u64 = self.top_k.iter().filter(|(v, _)| c.admits(v)).map(|(_, n)| n).sum();
            return hits as f64 / self.row_count as f64;
        }
        let in_range: f64 = self.buckets.iter().map(|b| b.count as f64 * self.bucket_overlap(b, c)).sum();
        let mut frac = in_range / self.row_count as f64;
        let range_only = ColumnConstraint { ne: Vec::new(), ..c.clone() };
        let mut seen: Vec<&Value> = Vec::new();
        for v in &c.ne {
            if range_only.admits(v) && !seen.iter().any(|s| cmp_values(s, v) == Ordering::Equal) {
                frac -= self.eq_fraction(v);
                seen.push(v);
            }
        }
        frac.clamp(0.0, 1.0)
    }

    /// Fraction of rows satisfying a single comparison with a literal.
    pub fn cmp_fraction(&self, cmp: CmpOp, lit: &Value) -> f64 {
        let mut c = ColumnConstraint::new(self.dtype);
        c.add(cmp, lit);
        self.selectivity(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::table::Column;

    fn int_table(values: Vec<Option<i64>>) -> Table {
        Table::new("t", vec![Column::new("x", ColumnData::Int(values))]).unwrap()
    }

    #[test]
    fn uniform_sequence_four_buckets() {
        let t = int_table((1..=100).map(Some).collect());
        let s = &build_stats(&t, 4).columns[0];
        assert_eq!(s.buckets.len(), 4);
        let his: Vec<_> = s.buckets.iter().map(|b| b.hi.clone()).collect();
        assert_eq!(his, [Value::Int(25), Value::Int(50), Value::Int(75), Value::Int(100)]);
        assert!(s.buckets.iter().all(|b| b.count == 25));
        assert_eq!(s.distinct_count, 100);
        assert_eq!(s.mean, Some(50.5));
    }

    #[test]
    fn bucket_sizes_are_floor_or_ceil() {
        let t = int_table((0..1003).map(|i| Some(i % 97)).collect());
        let s = &build_stats(&t, 64).columns[0];
        let total: u64 = s.buckets.iter().map(|b| b.count).sum();
        assert_eq!(total, 1003);
        assert!(s.buckets.iter().all(|b| b.count == 15 || b.count == 16));
    }

    #[test]
    fn degenerate_columns() {
        let t = int_table(vec![None; 5]);
        let s = &build_stats(&t, 64).columns[0];
        assert_eq!(s.null_fraction, 1.0);
        assert_eq!(s.distinct_count, 0);
        assert!(s.buckets.is_empty());

        let t = int_table(vec![Some(7); 5]);
        let s = &build_stats(&t, 64).columns[0];
        assert_eq!(s.distinct_count, 1);
        assert_eq!(s.buckets.len(), 1);
    }

    #[test]
    fn range_and_equality_estimates() {
        let t = int_table((0..1000).map(|i| Some(i % 10)).collect());
        let s = &build_stats(&t, 64).columns[0];
        assert!((s.cmp_fraction(CmpOp::Lt, &Value::Int(5)) - 0.5).abs() < 1e-9);
        assert!((s.cmp_fraction(CmpOp::Eq, &Value::Int(3)) - 0.1).abs() < 1e-9);
        assert!((s.cmp_fraction(CmpOp::Ne, &Value::Int(3)) - 0.9).abs() < 1e-9);
        assert!((s.cmp_fraction(CmpOp::Ge, &Value::Float(2.5)) - 0.7).abs() < 1e-9);
        assert_eq!(s.cmp_fraction(CmpOp::Eq, &Value::Float(2.5)), 0.0);
        assert_eq!(s.cmp_fraction(CmpOp::Gt, &Value::Int(100)), 0.0);
    }

    #[test]
    fn constraints_intersect() {
        let t = int_table((0..1000).map(Some).collect());
        let s = &build_stats(&t, 64).columns[0];
        let mut c = ColumnConstraint::new(Dtype::Int);
        c.add(CmpOp::Ge, &Value::Int(100));
        c.add(CmpOp::Lt, &Value::Int(300));
        c.add(CmpOp::Lt, &Value::Int(400));
        assert!((s.selectivity(&c) - 0.2).abs() < 0.01);
        c.add(CmpOp::Eq, &Value::Int(500));
        assert_eq!(s.selectivity(&c), 0.0);
        let mut c = ColumnConstraint::new(Dtype::Int);
        c.add(CmpOp::Eq, &Value::Int(4));
        c.add(CmpOp::Eq, &Value::Int(5));
        assert!(c.is_empty());
    }

    #[test]
    fn float_and_string_columns() {
        let t = Table::new(
            "t",
            vec![
                Column::new("f", ColumnData::Float((0..1000).map(|i| Some(i as f64 / 1000.0)).collect())),
                Column::new(
                    "s",
                    ColumnData::String((0..1000).map(|i| Some(format!("k{:03}", i).into())).collect()),
                ),
            ],
        )
        .unwrap();
        let st = build_stats(&t, 64);
        let f = st.column("f").unwrap();
        assert!((f.cmp_fraction(CmpOp::Lt, &Value::Float(0.25)) - 0.25).abs() < 0.01);
        let s = st.column("s").unwrap();
        assert!((s.cmp_fraction(CmpOp::Lt, &Value::str("k500")) - 0.5).abs() < 0.02);
        assert!((s.cmp_fraction(CmpOp::Eq, &Value::str("k123")) - 0.001).abs() < 1e-6);
    }

    #[test]
    fn nulls_never_match() {
        let t = int_table((0..100).map(|i| if i % 2 == 0 { None } else { Some(1) }).collect());
        let s = &build_stats(&t, 64).columns[0];
        assert_eq!(s.null_fraction, 0.5);
        assert!((s.cmp_fraction(CmpOp::Eq, &Value::Int(1)) - 0.5).abs() < 1e-12);
    }
}
