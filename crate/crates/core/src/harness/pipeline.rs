//! Corpus generation, model training and held-out evaluation shared by the
//! CLI and the acceptance suite.

use thiserror::Error;

use super::{evaluate, evaluate_advisor, AdvisorMetrics, AdvisorQuery, EvalQuery, HarnessError, LabelMode, Metrics};
use crate::advisor::{SelectivityGrid, Strategy};
use crate::benchgen::{
    advisor_query, eval_query, gen_database, gen_workload, label_workload, DbContext, GenConfig, GenError, WorkloadRecord,
};
use crate::model::{flat_featurize, flat_train, init_flat_model, init_model, train, FlatModel, Model, ModelConfig, ModelError, TrainConfig};
use crate::plangraph::{assemble_joint, featurize, CardMode, EncoderSpec, JointGraph, PlanError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// One generated database with its labeled workload.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub name: String,
    pub ctx: DbContext,
    pub records: Vec<WorkloadRecord>,
}

impl Corpus {
    pub fn eval_set(&self, mode: CardMode) -> Result<Vec<EvalQuery>, PipelineError> {
        Ok(self.records.iter().map(|r| eval_query(r, &self.ctx, mode)).collect::<Result<_, _>>()?)
    }

    /// UDF-filter queries only.
    pub fn advisor_set(&self) -> Result<Vec<AdvisorQuery>, PipelineError> {
        let mut out = Vec::new();
        for r in &self.records {
            if let Some(q) = advisor_query(r, &self.ctx)? {
                out.push(q);
            }
        }
        Ok(out)
    }
}

/// Generates a database from `seed`, a workload of `n` queries over it and
/// labels every query in `mode`.
pub fn build_corpus(cfg: &GenConfig, seed: u64, n: usize, mode: LabelMode, variants: bool) -> Result<Corpus, PipelineError> {
    let name = format!("db{seed}");
    let db = gen_database(cfg, seed);
    let mut w = gen_workload(cfg, &db, n, seed.wrapping_add(0x51), &name)?;
    label_workload(&mut w.records, &w.db, mode, variants)?;
    Ok(Corpus { name, ctx: DbContext::new(w.db), records: w.records })
}

pub fn joint_graphs(queries: &[EvalQuery]) -> Result<Vec<JointGraph>, PipelineError> {
    Ok(queries.iter().map(|q| assemble_joint(&q.plan, q.udf.as_ref(), &q.catalog)).collect::<Result<_, _>>()?)
}

pub fn fit_encoder(joints: &[JointGraph], mode: CardMode) -> EncoderSpec {
    let mut enc = EncoderSpec::new(mode);
    enc.fit(joints.iter());
    enc
}

pub fn train_graph_model(
    queries: &[EvalQuery],
    mode: CardMode,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Model, PipelineError> {
    let joints = joint_graphs(queries)?;
    let enc = fit_encoder(&joints, mode);
    let data: Vec<_> = joints.iter().zip(queries).map(|(j, q)| (featurize(j, &enc), q.label)).collect();
    let model = init_model(model_cfg, enc, train_cfg.seed)?;
    Ok(train(&model, &data, train_cfg)?.0)
}

pub fn train_flat_model(
    queries: &[EvalQuery],
    mode: CardMode,
    hidden: usize,
    train_cfg: &TrainConfig,
) -> Result<FlatModel, PipelineError> {
    let joints = joint_graphs(queries)?;
    let enc = fit_encoder(&joints, mode);
    let data: Vec<_> = joints.iter().zip(queries).map(|(j, q)| (flat_featurize(j, &enc), q.label)).collect();
    let model = init_flat_model(hidden, enc, train_cfg.seed)?;
    Ok(flat_train(&model, &data, train_cfg)?.0)
}

/// Queries of every corpus except `held_out`.
pub fn training_queries(corpora: &[Corpus], held_out: usize, mode: CardMode) -> Result<Vec<EvalQuery>, PipelineError> {
    let mut out = Vec::new();
    for (i, c) in corpora.iter().enumerate() {
        if i != held_out {
            out.extend(c.eval_set(mode)?);
        }
    }
    Ok(out)
}

/// Trains on every corpus but `held_out` and evaluates on `held_out`.
pub fn leave_one_out(
    corpora: &[Corpus],
    held_out: usize,
    mode: CardMode,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Model, Metrics), PipelineError> {
    let model = train_graph_model(&training_queries(corpora, held_out, mode)?, mode, model_cfg, train_cfg)?;
    let metrics = evaluate(&model, &corpora[held_out].eval_set(mode)?)?;
    Ok((model, metrics))
}

/// Advisor metrics for every strategy on `corpus`.
pub fn advise_all(model: &Model, corpus: &Corpus, grid: &SelectivityGrid) -> Result<Vec<AdvisorMetrics>, PipelineError> {
    let queries = corpus.advisor_set()?;
    let mut out = Vec::new();
    for strategy in Strategy::ALL {
        let decider = super::ModelDecider { model, strategy, grid: grid.clone() };
        out.push(evaluate_advisor(&queries, &decider)?);
    }
    Ok(out)
}
