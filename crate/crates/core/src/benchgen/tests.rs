use proptest::prelude::*;

use super::*;
use crate::advisor::Placement;
use crate::datastore::{Distribution, DEFAULT_BUCKETS};
use crate::harness::{execute, ExecConfig, LabelMode};
use crate::plangraph::{PlanOp, Predicate};
use crate::udfscript::{parse_udf, CmpOp, Value};

fn small_cfg() -> GenConfig {
    GenConfig { tables: IntRange::new(3, 4), rows: IntRange::new(200, 600), ..GenConfig::default() }
}

fn small_workload(n: usize, seed: u64) -> Workload {
    let cfg = small_cfg();
    let db = gen_database(&cfg, seed);
    gen_workload(&cfg, &db, n, seed, "db").unwrap()
}

#[test]
fn config_validation() {
    assert!(GenConfig::default().validate().is_ok());
    let bad = GenConfig { ops: IntRange::new(20, 10), ..GenConfig::default() };
    assert!(matches!(bad.validate(), Err(GenError::InvalidConfig(_))));
    let bad = GenConfig { selectivity: (0.0, 1.0), ..GenConfig::default() };
    assert!(bad.validate().is_err());
    let bad = GenConfig { projection_share: 1.5, ..GenConfig::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn schema_is_valid_and_connected() {
    for seed in 0..10 {
        let s = gen_schema(&GenConfig::default(), seed);
        s.validate().unwrap();
        assert!((3..=6).contains(&s.tables.len()));
        // Every table after the first references an earlier one.
        for t in &s.tables[1..] {
            assert!(s.foreign_keys.iter().any(|fk| fk.table == t.name));
        }
    }
}

#[test]
fn database_is_deterministic() {
    let cfg = small_cfg();
    assert_eq!(gen_database(&cfg, 3).tables, gen_database(&cfg, 3).tables);
    assert_ne!(gen_database(&cfg, 3).tables, gen_database(&cfg, 4).tables);
}

#[test]
fn foreign_keys_reference_existing_rows() {
    let db = gen_database(&small_cfg(), 11);
    for fk in &db.schema.foreign_keys {
        let parent_rows = db.table(&fk.ref_table).unwrap().row_count as i64;
        let col = db.table(&fk.table).unwrap().column(&fk.column).unwrap();
        for v in col.data.values() {
            let Value::Int(k) = v else { panic!("key {v:?}") };
            assert!((0..parent_rows).contains(&k));
        }
    }
}

#[test]
fn udf_structure_matches_request() {
    let cfg = GenConfig { branches: IntRange::new(2, 2), loops: IntRange::new(1, 1), ops: IntRange::new(20, 60), ..small_cfg() };
    let schema = gen_schema(&cfg, 5);
    for seed in 0..20 {
        let u = gen_udf(&cfg, &schema, seed);
        assert_eq!((u.meta.branches, u.meta.loops), (2, 1), "{}", u.source.text());
        assert!(cfg.ops.contains(u.meta.ops), "ops {}", u.meta.ops);
        let table = schema.table(&u.table).unwrap();
        let cols: Vec<_> = table.columns.iter().map(|c| (c.name.clone(), c.dtype)).collect();
        let ast = parse_udf(&u.source, &cols).unwrap();
        assert_eq!(structure_of(&ast), u.meta);
    }
}

#[test]
fn default_loop_incidence_is_rare() {
    let cfg = GenConfig::default();
    let schema = gen_schema(&cfg, 1);
    let with_loops = (0..300).filter(|&s| gen_udf(&cfg, &schema, s).meta.loops > 0).count();
    assert!((5..=45).contains(&with_loops), "{with_loops} of 300");
}

#[test]
fn prepared_data_keeps_every_udf_fault_free() {
    let w = small_workload(12, 21);
    let cfg = ExecConfig::with_mode(LabelMode::Synthetic);
    for r in &w.records {
        let t = w.db.table(&r.udf_table).unwrap();
        let ast = parse_udf(&r.udf_source, &t.schema()).unwrap();
        crate::benchgen::prepare::verify(
            &w.db,
            &GeneratedUdf { source: r.udf_source.clone(), table: r.udf_table.clone(), meta: structure_of(&ast) },
            &ast,
        )
        .unwrap();
        execute(&r.plan, &w.db, Some(&ast), &cfg).unwrap();
    }
}

#[test]
fn key_columns_are_never_rewritten() {
    let cfg = small_cfg();
    let db = gen_database(&cfg, 8);
    let w = gen_workload(&cfg, &db, 15, 8, "db").unwrap();
    for spec in &db.schema.tables {
        for c in &spec.columns {
            if matches!(c.distribution, Distribution::Serial | Distribution::Reference { .. }) {
                assert_eq!(
                    db.table(&spec.name).unwrap().column(&c.name).unwrap(),
                    w.db.table(&spec.name).unwrap().column(&c.name).unwrap()
                );
            }
        }
    }
}

#[test]
fn prepare_fixes_a_divisor_column() {
    let cfg = small_cfg();
    let db = gen_database(&cfg, 2);
    let t = &db.schema.tables[0];
    let col = t.columns.iter().find(|c| c.dtype == crate::udfscript::Dtype::Float && c.distribution != Distribution::Serial);
    let Some(col) = col else { return };
    let source = crate::udfscript::UdfSource::from_text(&format!(
        "def udf({}):\n    return math.log({}) + 1.0 / {}\n",
        col.name, col.name, col.name
    ))
    .unwrap();
    let udf = GeneratedUdf { source, table: t.name.clone(), meta: UdfMeta { branches: 0, loops: 0, ops: 3 } };
    let fixed = prepare_data(&db, std::slice::from_ref(&udf)).unwrap();
    for v in fixed.table(&t.name).unwrap().column(&col.name).unwrap().data.values() {
        assert!(v.as_f64().unwrap() > 0.0);
    }
}

#[test]
fn threshold_calibration_hits_the_target() {
    let values: Vec<Value> = (0..1000).map(|i| Value::Float(i as f64)).collect();
    for s in [0.001, 0.1, 0.5, 0.9, 1.0] {
        for cmp in [CmpOp::Ge, CmpOp::Lt] {
            let t = calibrate_threshold(&values, s, cmp);
            let kept = values.iter().filter(|v| crate::harness::udf_passes(cmp, v, &t)).count();
            assert_eq!(kept, ((s * 1000.0).round() as usize).max(1), "s={s} cmp={cmp}");
        }
    }
}

#[test]
fn queries_are_well_formed() {
    let w = small_workload(30, 4);
    let mut projections = 0;
    for r in &w.records {
        r.plan.validate().unwrap();
        assert_eq!(r.plan.root.op, PlanOp::Output);
        let path = r.plan.udf_path().unwrap();
        let node = r.plan.node(&path);
        match r.meta.placement {
            None => {
                projections += 1;
                assert_eq!(node.op, PlanOp::Output);
            }
            Some(p) => {
                assert!(matches!(node.predicate, Some(Predicate::Udf { .. })));
                if p == Placement::PushDown {
                    assert_eq!(node.children[0].tables(), vec![r.udf_table.as_str()]);
                }
                let (t, s) = (r.meta.target_selectivity.unwrap(), r.meta.realized_selectivity.unwrap());
                assert!(t > 0.0 && t <= 1.0 && s > 0.0 && s <= 1.0);
            }
        }
        r.plan.root.visit(&mut |n| {
            assert!(n.cards.est_out.is_some() && n.cards.act_out.is_some());
        });
        assert!(r.sql.starts_with("SELECT "));
    }
    assert!(projections < 30);
}

#[test]
fn workload_is_deterministic() {
    let a = small_workload(6, 9);
    let b = small_workload(6, 9);
    assert_eq!(a.records, b.records);
}

#[test]
fn labels_and_variants() {
    let mut w = small_workload(10, 13);
    label_workload(&mut w.records, &w.db, LabelMode::Synthetic, true).unwrap();
    for r in &w.records {
        assert!(r.label.unwrap() > 0.0);
        assert_eq!(r.label_mode, Some(LabelMode::Synthetic));
        assert_eq!(r.variants.is_some(), r.meta.placement.is_some());
        match (r.meta.placement, r.variants) {
            (Some(Placement::PullUp), Some(v)) => assert!((v.pull_up - r.label.unwrap()).abs() < 1e-12),
            (Some(Placement::PushDown), Some(v)) => assert!((v.push_down - r.label.unwrap()).abs() < 1e-12),
            _ => {}
        }
    }
}

#[test]
fn jsonl_round_trip() {
    let mut w = small_workload(5, 17);
    label_workload(&mut w.records, &w.db, LabelMode::Synthetic, true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.jsonl");
    write_jsonl(&path, &w.records).unwrap();
    let back: Vec<WorkloadRecord> = read_jsonl(&path).unwrap();
    assert_eq!(back, w.records);
    std::fs::write(&path, "{\"query_id\": 1}\n").unwrap();
    assert!(matches!(read_jsonl::<WorkloadRecord>(&path), Err(GenError::Json { line: 1, .. })));
}

#[test]
fn eval_and_advisor_conversions() {
    let mut w = small_workload(10, 23);
    label_workload(&mut w.records, &w.db, LabelMode::Synthetic, true).unwrap();
    let ctx = DbContext::new(w.db.clone());
    assert_eq!(ctx.stats.len(), w.db.tables.len());
    assert!(ctx.stats.iter().all(|s| s.columns.iter().all(|c| c.buckets.len() <= DEFAULT_BUCKETS)));
    for r in &w.records {
        for mode in [crate::plangraph::CardMode::Actual, crate::plangraph::CardMode::Estimated] {
            let q = eval_query(r, &ctx, mode).unwrap();
            let g = q.udf.unwrap();
            assert!(g.nodes[g.inv].in_rows >= 0.0);
        }
        let a = advisor_query(r, &ctx).unwrap();
        assert_eq!(a.is_some(), r.meta.placement.is_some());
    }
    let mut unlabeled = w.records[0].clone();
    unlabeled.label = None;
    assert!(matches!(eval_query(&unlabeled, &ctx, crate::plangraph::CardMode::Actual), Err(GenError::Unlabeled(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_udfs_parse_and_respect_ranges(seed in 0u64..10_000, lo in 5usize..40, span in 0usize..80) {
        let cfg = GenConfig { ops: IntRange::new(lo, lo + span), ..GenConfig::default() };
        let schema = gen_schema(&cfg, seed);
        let u = gen_udf(&cfg, &schema, seed);
        let t = schema.table(&u.table).unwrap();
        let cols: Vec<_> = t.columns.iter().map(|c| (c.name.clone(), c.dtype)).collect();
        let ast = parse_udf(&u.source, &cols).unwrap();
        prop_assert_eq!(structure_of(&ast), u.meta);
        prop_assert!(cfg.branches.contains(u.meta.branches));
        prop_assert!(cfg.loops.contains(u.meta.loops));
    }

    #[test]
    fn calibration_keeps_target_rows_up_to_ties(n in 1usize..300, s in 0.0001f64..=1.0, ge in any::<bool>(), seed in 0u64..1000) {
        let values: Vec<Value> = (0..n).map(|i| Value::Float(((i as u64 * 7919 + seed) % 97) as f64)).collect();
        let cmp = if ge { CmpOp::Ge } else { CmpOp::Lt };
        let t = calibrate_threshold(&values, s, cmp);
        let kept = values.iter().filter(|v| crate::harness::udf_passes(cmp, v, &t)).count();
        // Ties can only add rows.
        let k = ((s * n as f64).round() as usize).clamp(1, n);
        prop_assert!(kept >= k);
        let mut sorted: Vec<f64> = values.iter().map(|v| v.as_f64().unwrap()).collect();
        sorted.sort_by(f64::total_cmp);
        let tied = sorted.iter().filter(|x| **x == sorted[if ge { n - k } else { k - 1 }]).count();
        prop_assert!(kept < k + tied);
    }
}
