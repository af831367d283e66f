use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, Zipf};

use super::GenConfig;
use crate::datastore::{Column, ColumnData, ColumnSpec, Database, Distribution, ForeignKey, SchemaSpec, Table, TableSpec};
use crate::udfscript::{Dtype, Value};

const TABLE_WORDS: [&str; 20] = [
    "orders", "customer", "product", "region", "supplier", "invoice", "shipment", "account", "store", "employee",
    "ledger", "station", "sensor", "vendor", "campaign", "review", "course", "flight", "patient", "device",
];

/// String columns map a drawn integer `k` onto the word `w{k}`.
pub(crate) fn word(k: i64) -> String {
    format!("w{k}")
}

/// One draw from a column distribution, ignoring nulls. Key distributions
/// draw from `0..keys`.
pub(crate) fn draw_value(dist: &Distribution, dtype: Dtype, keys: usize, rng: &mut impl Rng) -> Value {
    let x = match dist {
        Distribution::Serial | Distribution::Reference { .. } => {
            if keys == 0 {
                return Value::Null;
            }
            rng.gen_range(0..keys) as f64
        }
        Distribution::Uniform { lo, hi } => match dtype {
            Dtype::Float => rng.gen_range(*lo..=*hi),
            Dtype::Bool => return Value::Bool(rng.gen_bool(0.5)),
            _ => rng.gen_range(lo.round() as i64..=hi.round() as i64) as f64,
        },
        Distribution::Normal { mean, std } => Normal::new(*mean, *std).expect("valid normal").sample(rng),
        Distribution::Zipf { n, exponent } => Zipf::new(*n, *exponent).expect("valid zipf").sample(rng),
    };
    match dtype {
        Dtype::Int => Value::Int(x.round() as i64),
        Dtype::Float => Value::Float((x * 1000.0).round() / 1000.0),
        Dtype::String => Value::str(word(x.round() as i64)),
        Dtype::Bool => Value::Bool(x >= 0.5),
    }
}

fn data_column(table: &str, k: usize, rng: &mut ChaCha8Rng) -> ColumnSpec {
    let dtype = *[Dtype::Int, Dtype::Int, Dtype::Float, Dtype::Float, Dtype::Float, Dtype::String, Dtype::String, Dtype::Bool]
        .choose(rng)
        .unwrap();
    let zipf = |rng: &mut ChaCha8Rng| Distribution::Zipf {
        n: rng.gen_range(5..=500),
        exponent: (rng.gen_range(1.05..2.0f64) * 100.0).round() / 100.0,
    };
    let distribution = match dtype {
        Dtype::Bool => Distribution::Uniform { lo: 0.0, hi: 1.0 },
        Dtype::String => {
            if rng.gen_bool(0.5) {
                zipf(rng)
            } else {
                Distribution::Uniform { lo: 0.0, hi: rng.gen_range(3..=40) as f64 }
            }
        }
        _ => match rng.gen_range(0..10) {
            0..=4 => {
                let lo = rng.gen_range(-100..=100) as f64;
                Distribution::Uniform { lo, hi: lo + 10f64.powf(rng.gen_range(1.0..4.0)).round() }
            }
            5..=7 => Distribution::Normal {
                mean: rng.gen_range(-50..=500) as f64,
                std: rng.gen_range(1..=200) as f64,
            },
            _ => zipf(rng),
        },
    };
    let null_fraction = if rng.gen_bool(0.3) { (rng.gen_range(0.01..0.1f64) * 1000.0).round() / 1000.0 } else { 0.0 };
    ColumnSpec { name: format!("{table}_c{k}"), dtype, distribution, null_fraction }
}

/// Draws a schema: tables named after words, a serial primary key per table,
/// data columns of mixed types and a foreign-key tree (plus occasional
/// second parents) pointing from later tables to earlier ones.
pub fn gen_schema(cfg: &GenConfig, seed: u64) -> SchemaSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tables = cfg.tables.sample(&mut rng).clamp(1, TABLE_WORDS.len());
    let mut names: Vec<&str> = TABLE_WORDS.to_vec();
    names.shuffle(&mut rng);
    names.truncate(n_tables);

    let mut tables = Vec::with_capacity(n_tables);
    let mut foreign_keys = Vec::new();
    for (i, &name) in names.iter().enumerate() {
        let rows = cfg.rows.sample(&mut rng);
        let primary_key = format!("{name}_id");
        let mut columns = vec![ColumnSpec {
            name: primary_key.clone(),
            dtype: Dtype::Int,
            distribution: Distribution::Serial,
            null_fraction: 0.0,
        }];
        if i > 0 {
            let mut parents = vec![rng.gen_range(0..i)];
            if i > 1 && rng.gen_bool(0.3) {
                let p = rng.gen_range(0..i);
                if p != parents[0] {
                    parents.push(p);
                }
            }
            for p in parents {
                let parent = names[p];
                let column = format!("{name}_{parent}_id");
                columns.push(ColumnSpec {
                    name: column.clone(),
                    dtype: Dtype::Int,
                    distribution: Distribution::Reference { table: parent.to_string() },
                    null_fraction: 0.0,
                });
                foreign_keys.push(ForeignKey {
                    table: name.to_string(),
                    column,
                    ref_table: parent.to_string(),
                    ref_column: format!("{parent}_id"),
                });
            }
        }
        for k in 0..cfg.columns.sample(&mut rng) {
            columns.push(data_column(name, k, &mut rng));
        }
        tables.push(TableSpec { name: name.to_string(), rows, primary_key, columns });
    }
    SchemaSpec { name: format!("db{seed:x}"), tables, foreign_keys }
}

/// Materializes `schema`; each column draws from its own seeded stream.
pub fn materialize(schema: &SchemaSpec, seed: u64) -> Database {
    let mut tables = Vec::with_capacity(schema.tables.len());
    for (ti, spec) in schema.tables.iter().enumerate() {
        let mut columns = Vec::with_capacity(spec.columns.len());
        for (ci, c) in spec.columns.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((ti as u64) << 32 | ci as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let keys = match &c.distribution {
                Distribution::Reference { table } => schema.table(table).map_or(0, |t| t.rows),
                _ => spec.rows,
            };
            let data = match (&c.distribution, c.dtype) {
                (Distribution::Serial, _) => ColumnData::Int((0..spec.rows as i64).map(Some).collect()),
                (_, Dtype::String) => {
                    // Shared words keep string columns cheap to clone.
                    let mut interned: std::collections::HashMap<Arc<str>, Arc<str>> = Default::default();
                    ColumnData::String(
                        (0..spec.rows)
                            .map(|_| {
                                let v = draw_value(&c.distribution, c.dtype, keys, &mut rng);
                                let null = rng.gen_bool(c.null_fraction);
                                match v {
                                    Value::Str(s) if !null => Some(interned.entry(s.clone()).or_insert(s).clone()),
                                    _ => None,
                                }
                            })
                            .collect(),
                    )
                }
                _ => {
                    let mut data = ColumnData::empty(c.dtype);
                    for _ in 0..spec.rows {
                        let v = draw_value(&c.distribution, c.dtype, keys, &mut rng);
                        let v = if rng.gen_bool(c.null_fraction) { Value::Null } else { v };
                        data.push(v).expect("drawn value matches the column type");
                    }
                    data
                }
            };
            columns.push(Column::new(c.name.clone(), data));
        }
        tables.push(Table::new(spec.name.clone(), columns).expect("generated columns have equal length"));
    }
    Database { schema: schema.clone(), tables }
}

/// A reproducible synthetic database.
pub fn gen_database(cfg: &GenConfig, seed: u64) -> Database {
    materialize(&gen_schema(cfg, seed), seed.wrapping_add(1))
}
