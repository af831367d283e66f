//! Shared fixtures for the benchmarks in `benches/`.

use udfcost::benchgen::{GenConfig, IntRange};
use udfcost::harness::pipeline::{build_corpus, train_graph_model, Corpus};
use udfcost::harness::{EvalQuery, LabelMode};
use udfcost::model::{Model, ModelConfig, TrainConfig};
use udfcost::plangraph::CardMode;
use udfcost::udfscript::{parse_udf, UdfAst, Value};

pub struct Fixture {
    pub corpus: Corpus,
    pub queries: Vec<EvalQuery>,
    pub model: Model,
}

/// A labeled corpus of `n` queries and a briefly trained model over it.
pub fn fixture(n: usize) -> Fixture {
    let cfg = GenConfig { tables: IntRange::new(3, 4), rows: IntRange::new(500, 1500), ..GenConfig::default() };
    let corpus = build_corpus(&cfg, 7, n, LabelMode::Synthetic, false).expect("corpus");
    let queries = corpus.eval_set(CardMode::Actual).expect("eval set");
    let tc = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let model = train_graph_model(&queries, CardMode::Actual, &ModelConfig { hidden: 32 }, &tc).expect("model");
    Fixture { corpus, queries, model }
}

impl Fixture {
    pub fn udf_ast(&self, i: usize) -> UdfAst {
        let r = &self.corpus.records[i];
        let t = self.corpus.ctx.db.table(&r.udf_table).expect("udf table");
        parse_udf(&r.udf_source, &t.schema()).expect("udf parses")
    }

    /// Argument rows of query `i`'s UDF, one per table row.
    pub fn udf_rows(&self, i: usize) -> Vec<Vec<Value>> {
        let r = &self.corpus.records[i];
        let t = self.corpus.ctx.db.table(&r.udf_table).expect("udf table");
        let ast = self.udf_ast(i);
        let cols: Vec<usize> = ast.params.iter().map(|p| t.column_index(&p.name).expect("param column")).collect();
        (0..t.row_count)
            .map(|row| {
                let mut v = Vec::new();
                t.row_values(row, &cols, &mut v);
                v
            })
            .collect()
    }
}
