use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{relu_in_place, Adam, Dense};
use super::{check_dataset, split_validation, EpochStats, ModelError, Prediction, TargetNorm, TrainConfig, TrainHistory};
use crate::cfg::NodeKind;
use crate::plangraph::{EncoderSpec, JointFeatures, JointGraph, JointKind, NormStats};

pub const FLAT_VERSION: u32 = 1;

/// Slot names of the flat vector for the vocabularies of `enc`.
pub fn flat_slot_names(enc: &EncoderSpec) -> Vec<String> {
    let mut names: Vec<String> = ["invocations", "loops", "branches", "comps"].map(String::from).to_vec();
    names.extend(enc.vocab.ops.0.iter().map(|o| format!("op:{o}")));
    names.extend(enc.vocab.libs.0.iter().map(|l| format!("lib:{l}")));
    names.extend(["udf_rows", "scans", "filters", "joins", "aggs", "scan_rows", "plan_rows"].map(String::from));
    names
}

/// Index of a named slot in the flat vector.
pub fn flat_slot(enc: &EncoderSpec, name: &str) -> Option<usize> {
    flat_slot_names(enc).iter().position(|n| n == name)
}

/// Aggregate counts of a joint graph: UDF structure (static counts of loops,
/// branches and each operation or library call), UDF input rows and plan
/// operator counts and cardinalities. Raw values, unnormalized.
pub fn flat_featurize(joint: &JointGraph, enc: &EncoderSpec) -> Vec<f64> {
    let v = &enc.vocab;
    let n_ops = v.ops.len();
    let mut out = vec![0.0; 4 + n_ops + v.libs.len() + 7];
    let tail = 4 + n_ops + v.libs.len();
    for n in joint.udf_nodes() {
        match n.kind {
            NodeKind::Inv => {
                out[0] += 1.0;
                out[tail] += n.in_rows;
            }
            NodeKind::Loop => out[1] += 1.0,
            NodeKind::Branch => out[2] += 1.0,
            NodeKind::Comp => out[3] += 1.0,
            _ => {}
        }
        for op in n.ops() {
            out[4 + v.ops.index(op.name())] += 1.0;
        }
        if let Some(lib) = n.lib() {
            out[4 + n_ops + v.libs.index(lib.qualified())] += 1.0;
        }
    }
    for n in &joint.nodes {
        match (n.kind, &n.features) {
            (JointKind::Scan, _) => out[tail + 1] += 1.0,
            (JointKind::Filter, _) => out[tail + 2] += 1.0,
            (JointKind::Join, _) => out[tail + 3] += 1.0,
            (JointKind::Agg, _) => out[tail + 4] += 1.0,
            (JointKind::Table, JointFeatures::Table { rows, .. }) => out[tail + 5] += rows,
            _ => {}
        }
    }
    if let JointFeatures::Operator { cards, .. } = &joint.nodes[joint.root].features {
        out[tail + 6] = cards.get(enc.card_mode).0.unwrap_or(0.0);
    }
    out
}

/// Flat-vector baseline: an MLP on the normalized count vector emits a
/// per-tuple UDF cost `u` and a plan cost `p` (both log scale); the runtime
/// is `exp(u) * (1 + udf_rows) + exp(p)` relative to the target mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatModel {
    pub version: u32,
    pub hidden: usize,
    pub seed: u64,
    pub encoder: EncoderSpec,
    pub norm: NormStats,
    /// Training-set mean of ln(1 + udf_rows).
    pub rows_offset: f64,
    pub target: TargetNorm,
    l1: Dense,
    l2: Dense,
    params: Vec<f64>,
}

struct FlatTape {
    x: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    u: f64,
    p: f64,
    rows: f64,
    out: f64,
}

pub fn init_flat_model(hidden: usize, enc: EncoderSpec, seed: u64) -> Result<FlatModel, ModelError> {
    if hidden == 0 {
        return Err(ModelError::Config("hidden dimension must be positive".into()));
    }
    let d = flat_slot_names(&enc).len();
    let mut len = 0;
    let l1 = Dense::alloc(&mut len, hidden, d);
    let l2 = Dense::alloc(&mut len, 2, hidden);
    let mut params = vec![0.0; len];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    l1.init(&mut params, &mut rng);
    l2.init(&mut params, &mut rng);
    Ok(FlatModel {
        version: FLAT_VERSION,
        hidden,
        seed,
        encoder: enc,
        norm: NormStats { mean: vec![0.0; d], std: vec![1.0; d] },
        rows_offset: 0.0,
        target: TargetNorm::default(),
        l1,
        l2,
        params,
    })
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl FlatModel {
    fn udf_rows_slot(&self) -> usize {
        4 + self.encoder.vocab.ops.len() + self.encoder.vocab.libs.len()
    }

    fn check(&self, raw: &[f64]) -> Result<(), ModelError> {
        if raw.len() != self.norm.mean.len() {
            return Err(ModelError::EncoderMismatch(format!(
                "flat vector has {} slots, model expects {}",
                raw.len(),
                self.norm.mean.len()
            )));
        }
        Ok(())
    }

    fn tape(&self, params: &[f64], raw: &[f64]) -> FlatTape {
        let x: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(i, v)| (v.max(0.0).ln_1p() - self.norm.mean[i]) / self.norm.std[i])
            .collect();
        let mut z1 = vec![0.0; self.hidden];
        self.l1.forward(params, &x, &mut z1);
        let mut a1 = z1.clone();
        relu_in_place(&mut a1);
        let mut o = [0.0; 2];
        self.l2.forward(params, &a1, &mut o);
        let rows = raw[self.udf_rows_slot()].max(0.0).ln_1p() - self.rows_offset;
        let out = log_sum_exp(o[0] + rows, o[1]);
        FlatTape { x, z1, a1, u: o[0], p: o[1], rows, out }
    }

    /// Squared error on the standardized target; adds the gradient to `grad`.
    fn accumulate(&self, params: &[f64], raw: &[f64], target: f64, grad: &mut [f64]) -> f64 {
        let t = self.tape(params, raw);
        let err = t.out / self.target.std - target;
        let dout = 2.0 * err / self.target.std;
        let wu = 1.0 / (1.0 + (t.p - t.u - t.rows).exp());
        let dz2 = [dout * wu, dout * (1.0 - wu)];
        let mut da1 = vec![0.0; self.hidden];
        self.l2.backward(params, grad, &t.a1, &dz2, Some(&mut da1));
        let dz1: Vec<f64> = da1.iter().zip(&t.z1).map(|(d, z)| if *z > 0.0 { *d } else { 0.0 }).collect();
        self.l1.backward(params, grad, &t.x, &dz1, None);
        err * err
    }

    pub fn forward(&self, raw: &[f64]) -> Result<Prediction, ModelError> {
        self.check(raw)?;
        Ok(Prediction::from_log(self.target.mean + self.tape(&self.params, raw).out))
    }

    /// Analytic gradient of the loss for one sample.
    pub fn loss_and_gradient(&self, raw: &[f64], label_seconds: f64) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.params.len()];
        let target = (label_seconds.ln() - self.target.mean) / self.target.std;
        let l = self.accumulate(&self.params, raw, target, &mut g);
        (l, g)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("flat model serializes")
    }

    pub fn from_json(doc: &serde_json::Value) -> Result<FlatModel, ModelError> {
        let version = doc.get("version").and_then(|v| v.as_u64());
        if version != Some(FLAT_VERSION as u64) {
            return Err(ModelError::Checkpoint(format!("flat model version {version:?}, expected {FLAT_VERSION}")));
        }
        let m: FlatModel = serde_json::from_value(doc.clone()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if m.params.len() != m.l1.size() + m.l2.size() || m.norm.mean.len() != m.l1.cols {
            return Err(ModelError::Checkpoint("flat model shapes are inconsistent".into()));
        }
        Ok(m)
    }
}

pub fn flat_forward(model: &FlatModel, raw: &[f64]) -> Result<Prediction, ModelError> {
    model.forward(raw)
}

/// Trains the baseline with the same loss, optimizer and early stopping as
/// the graph model. Input normalization is fitted on the training split.
pub fn flat_train(
    model: &FlatModel,
    dataset: &[(Vec<f64>, f64)],
    cfg: &TrainConfig,
) -> Result<(FlatModel, TrainHistory), ModelError> {
    cfg.validate()?;
    check_dataset(dataset)?;
    for (raw, _) in dataset {
        model.check(raw)?;
    }
    let (train_idx, val_idx) = split_validation(dataset.len(), cfg.val_fraction, cfg.seed);
    let mut m = model.clone();
    m.target = TargetNorm::fit(train_idx.iter().map(|&i| dataset[i].1.ln()));
    let d = m.norm.mean.len();
    for slot in 0..d {
        let ys: Vec<f64> = train_idx.iter().map(|&i| dataset[i].0[slot].max(0.0).ln_1p()).collect();
        let t = TargetNorm::fit(ys.into_iter());
        m.norm.mean[slot] = t.mean;
        m.norm.std[slot] = t.std;
    }
    let rows_slot = m.udf_rows_slot();
    m.rows_offset = m.norm.mean[rows_slot];

    let norm_target = |m: &FlatModel, y: f64| (y.ln() - m.target.mean) / m.target.std;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(m.params.len(), cfg.lr);
    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, m.params.clone());
    let mut since_best = 0;
    let mut order = train_idx.clone();
    let scale = m.target.std * m.target.std;
    let val_loss = |m: &FlatModel| -> f64 {
        let s: f64 = val_idx
            .iter()
            .map(|&i| {
                let e = m.tape(&m.params, &dataset[i].0).out / m.target.std - norm_target(m, dataset[i].1);
                e * e
            })
            .sum();
        s / val_idx.len() as f64 * scale
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad = vec![0.0; m.params.len()];
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += m.accumulate(&m.params, &dataset[i].0, norm_target(&m, dataset[i].1), &mut grad);
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFiniteLoss { epoch, batch: b, loss: batch_loss });
            }
            let k = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= k);
            opt.step(&mut m.params, &grad);
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / order.len() as f64 * scale;
        let val = (!val_idx.is_empty()).then(|| val_loss(&m));
        history.epochs.push(EpochStats { epoch, train_loss, val_loss: val });
        let monitored = val.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, m.params.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    m.params = best.1;
    Ok((m, history))
}
