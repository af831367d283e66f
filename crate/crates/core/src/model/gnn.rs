use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nn::{relu_in_place, Adam, Dense};
use super::{check_dataset, split_validation, EpochStats, ModelError, Prediction, TargetNorm, TrainConfig, TrainHistory};
use crate::plangraph::{EncoderSpec, FeaturizedGraph, JointKind};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    /// Indexed by `JointKind::index`.
    encoders: Vec<Dense>,
    /// `[encoding; mean predecessor state] -> state`.
    update: Dense,
    head1: Dense,
    head2: Dense,
    len: usize,
}

impl Layout {
    fn new(hidden: usize, enc: &EncoderSpec) -> Layout {
        let mut len = 0;
        let encoders = JointKind::ALL.iter().map(|&k| Dense::alloc(&mut len, hidden, enc.width(k))).collect();
        let update = Dense::alloc(&mut len, hidden, 2 * hidden);
        let head1 = Dense::alloc(&mut len, hidden, hidden);
        let head2 = Dense::alloc(&mut len, 1, hidden);
        Layout { encoders, update, head1, head2, len }
    }

    fn named(&self) -> Vec<(String, Dense)> {
        let mut out: Vec<(String, Dense)> = JointKind::ALL
            .iter()
            .map(|k| (format!("encoder.{}", serde_json::to_value(k).unwrap().as_str().unwrap()), self.encoders[k.index()]))
            .collect();
        out.push(("update".into(), self.update));
        out.push(("head.0".into(), self.head1));
        out.push(("head.1".into(), self.head2));
        out
    }
}

/// Graph model: per-type node encoders, one topological message-passing
/// sweep with a shared update, and a two-layer head on the root state.
/// The head predicts standardized ln(runtime); `target` undoes the scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub encoder: EncoderSpec,
    pub target: TargetNorm,
    layout: Layout,
    params: Vec<f64>,
}

pub fn init_model(config: &ModelConfig, enc: EncoderSpec, seed: u64) -> Result<Model, ModelError> {
    if config.hidden == 0 {
        return Err(ModelError::Config("hidden dimension must be positive".into()));
    }
    let layout = Layout::new(config.hidden, &enc);
    let mut params = vec![0.0; layout.len];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, d) in layout.named() {
        d.init(&mut params, &mut rng);
    }
    Ok(Model { config: config.clone(), seed, encoder: enc, target: TargetNorm::default(), layout, params })
}

/// Intermediate values of one forward pass, node-major with stride `hidden`.
struct Tape {
    z_enc: Vec<f64>,
    /// Mean of predecessor states (zero for leaves).
    agg: Vec<f64>,
    z_upd: Vec<f64>,
    state: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    y: f64,
}

impl Model {
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn check_graph(&self, fg: &FeaturizedGraph) -> Result<(), ModelError> {
        if fg.root >= fg.len() || fg.preds.len() != fg.len() || fg.features.len() != fg.len() {
            return Err(ModelError::EncoderMismatch("malformed featurized graph".into()));
        }
        for (i, (k, x)) in fg.kinds.iter().zip(&fg.features).enumerate() {
            let want = self.encoder.width(*k);
            if x.len() != want {
                return Err(ModelError::EncoderMismatch(format!(
                    "node {i} ({k:?}) has {} features, encoder expects {want}",
                    x.len()
                )));
            }
        }
        Ok(())
    }

    fn tape(&self, params: &[f64], fg: &FeaturizedGraph, order: &[usize]) -> Tape {
        let h = self.config.hidden;
        let n = fg.len();
        let l = &self.layout;
        let mut t = Tape {
            z_enc: vec![0.0; n * h],
            agg: vec![0.0; n * h],
            z_upd: vec![0.0; n * h],
            state: vec![0.0; n * h],
            z1: vec![0.0; h],
            a1: vec![0.0; h],
            y: 0.0,
        };
        let mut cat = vec![0.0; 2 * h];
        for &v in order {
            let r = v * h..(v + 1) * h;
            l.encoders[fg.kinds[v].index()].forward(params, &fg.features[v], &mut t.z_enc[r.clone()]);
            cat[..h].copy_from_slice(&t.z_enc[r.clone()]);
            relu_in_place(&mut cat[..h]);
            let preds = &fg.preds[v];
            let m = &mut cat[h..];
            m.fill(0.0);
            for &u in preds {
                for (a, s) in m.iter_mut().zip(&t.state[u * h..(u + 1) * h]) {
                    *a += s;
                }
            }
            if !preds.is_empty() {
                let k = preds.len() as f64;
                m.iter_mut().for_each(|a| *a /= k);
            }
            t.agg[r.clone()].copy_from_slice(m);
            l.update.forward(params, &cat, &mut t.z_upd[r.clone()]);
            t.state[r.clone()].copy_from_slice(&t.z_upd[r.clone()]);
            relu_in_place(&mut t.state[r]);
        }
        let root = &t.state[fg.root * h..(fg.root + 1) * h];
        l.head1.forward(params, root, &mut t.z1);
        t.a1.copy_from_slice(&t.z1);
        relu_in_place(&mut t.a1);
        let mut y = [0.0];
        l.head2.forward(params, &t.a1, &mut y);
        t.y = y[0];
        t
    }

    /// Adds d(loss)/d(params) to `grad` given `dy` = d(loss)/d(head output).
    fn backward(&self, params: &[f64], fg: &FeaturizedGraph, order: &[usize], t: &Tape, dy: f64, grad: &mut [f64]) {
        let h = self.config.hidden;
        let l = &self.layout;
        let mut d_state = vec![0.0; fg.len() * h];
        let mut da1 = vec![0.0; h];
        l.head2.backward(params, grad, &t.a1, &[dy], Some(&mut da1));
        let dz1: Vec<f64> = da1.iter().zip(&t.z1).map(|(d, z)| if *z > 0.0 { *d } else { 0.0 }).collect();
        let root = fg.root * h..(fg.root + 1) * h;
        l.head1.backward(params, grad, &t.state[root.clone()], &dz1, Some(&mut d_state[root]));

        let mut cat = vec![0.0; 2 * h];
        let mut dcat = vec![0.0; 2 * h];
        let mut dz = vec![0.0; h];
        for &v in order.iter().rev() {
            let r = v * h..(v + 1) * h;
            let mut any = false;
            for ((d, s), z) in dz.iter_mut().zip(&d_state[r.clone()]).zip(&t.z_upd[r.clone()]) {
                *d = if *z > 0.0 { *s } else { 0.0 };
                any |= *d != 0.0;
            }
            if !any {
                continue;
            }
            for (c, z) in cat[..h].iter_mut().zip(&t.z_enc[r.clone()]) {
                *c = z.max(0.0);
            }
            cat[h..].copy_from_slice(&t.agg[r.clone()]);
            dcat.fill(0.0);
            l.update.backward(params, grad, &cat, &dz, Some(&mut dcat));
            let preds = &fg.preds[v];
            if !preds.is_empty() {
                let k = preds.len() as f64;
                for &u in preds {
                    for (ds, dm) in d_state[u * h..(u + 1) * h].iter_mut().zip(&dcat[h..]) {
                        *ds += dm / k;
                    }
                }
            }
            for ((d, e), z) in dz.iter_mut().zip(&dcat[..h]).zip(&t.z_enc[r]) {
                *d = if *z > 0.0 { *e } else { 0.0 };
            }
            l.encoders[fg.kinds[v].index()].backward(params, grad, &fg.features[v], &dz, None);
        }
    }

    /// Standardized-target squared error of one graph and its gradient.
    pub fn loss_and_gradient(&self, fg: &FeaturizedGraph, label_seconds: f64) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate(&self.params, fg, self.target.normalize(label_seconds.ln()), &mut grad);
        (loss, grad)
    }

    fn accumulate(&self, params: &[f64], fg: &FeaturizedGraph, target: f64, grad: &mut [f64]) -> f64 {
        let t = self.tape(params, fg, &fg.order);
        let err = t.y - target;
        self.backward(params, fg, &fg.order, &t, 2.0 * err, grad);
        err * err
    }

    /// Prediction using an explicit topological order of `fg`.
    pub fn forward_with_order(&self, fg: &FeaturizedGraph, order: &[usize]) -> Result<Prediction, ModelError> {
        self.check_graph(fg)?;
        if !fg.is_topological(order) {
            return Err(ModelError::EncoderMismatch("order is not topological".into()));
        }
        Ok(Prediction::from_log(self.target.denormalize(self.tape(&self.params, fg, order).y)))
    }

    /// ReLU activation pattern of one forward pass.
    fn pattern(&self, params: &[f64], fg: &FeaturizedGraph) -> Vec<bool> {
        let t = self.tape(params, fg, &fg.order);
        t.z_enc.iter().chain(&t.z_upd).chain(&t.z1).map(|z| *z > 0.0).collect()
    }

    fn normalized_output(&self, params: &[f64], fg: &FeaturizedGraph) -> f64 {
        self.tape(params, fg, &fg.order).y
    }
}

pub fn forward(model: &Model, fg: &FeaturizedGraph) -> Result<Prediction, ModelError> {
    model.forward_with_order(fg, &fg.order)
}

/// Mean standardized squared error over `data`, in ln(seconds)² units.
pub fn dataset_loss(model: &Model, data: &[(FeaturizedGraph, f64)]) -> f64 {
    let s: f64 = data
        .par_iter()
        .map(|(fg, y)| {
            let e = model.normalized_output(&model.params, fg) - model.target.normalize(y.ln());
            e * e
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    s / data.len() as f64 * model.target.std * model.target.std
}

/// Minimizes squared error on ln(runtime) with Adam. Refits the target
/// standardization on the training split, keeps the weights of the best
/// validation epoch and stops after `patience` epochs without improvement.
pub fn train(
    model: &Model,
    dataset: &[(FeaturizedGraph, f64)],
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory), ModelError> {
    cfg.validate()?;
    check_dataset(dataset)?;
    for (fg, _) in dataset {
        model.check_graph(fg)?;
    }
    let (train_idx, val_idx) = split_validation(dataset.len(), cfg.val_fraction, cfg.seed);
    let mut m = model.clone();
    m.target = TargetNorm::fit(train_idx.iter().map(|&i| dataset[i].1.ln()));
    let train_set: Vec<(&FeaturizedGraph, f64)> =
        train_idx.iter().map(|&i| (&dataset[i].0, m.target.normalize(dataset[i].1.ln()))).collect();
    let val_set: Vec<(FeaturizedGraph, f64)> = val_idx.iter().map(|&i| dataset[i].clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(m.params.len(), cfg.lr);
    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, m.params.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let scale = m.target.std * m.target.std;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mm = &m;
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = vec![0.0; mm.params.len()];
                    let l = mm.accumulate(&mm.params, train_set[i].0, train_set[i].1, &mut g);
                    (l, g)
                })
                .collect();
            let mut grad = vec![0.0; m.params.len()];
            let mut batch_loss = 0.0;
            for (l, g) in &parts {
                batch_loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFiniteLoss { epoch, batch: b, loss: batch_loss });
            }
            let k = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= k);
            opt.step(&mut m.params, &grad);
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / train_set.len() as f64 * scale;
        let val_loss = (!val_set.is_empty()).then(|| dataset_loss(&m, &val_set));
        history.epochs.push(EpochStats { epoch, train_loss, val_loss });
        let monitored = val_loss.unwrap_or(train_loss);
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

/// Number of weights compared by `gradient_check`.
pub const GRADIENT_CHECK_SAMPLES: usize = 200;

/// Max relative deviation between the analytic gradient and central finite
/// differences over randomly chosen weights. Weights whose perturbation flips
/// a ReLU are redrawn: the loss is not differentiable across the kink.
pub fn gradient_check(model: &Model, fg: &FeaturizedGraph, eps: f64) -> f64 {
    gradient_check_with(model, fg, eps, |_| {})
}

/// `gradient_check` with `tamper` applied to the analytic gradient first.
pub fn gradient_check_with(model: &Model, fg: &FeaturizedGraph, eps: f64, tamper: impl Fn(&mut [f64])) -> f64 {
    let p0 = &model.params;
    let target = model.normalized_output(p0, fg) + 1.0;
    let mut grad = vec![0.0; p0.len()];
    model.accumulate(p0, fg, target, &mut grad);
    tamper(&mut grad);
    let base = model.pattern(p0, fg);
    let loss = |p: &[f64]| {
        let e = model.normalized_output(p, fg) - target;
        e * e
    };

    let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ 0x9e37_79b9);
    let mut candidates: Vec<usize> = (0..p0.len()).collect();
    candidates.shuffle(&mut rng);
    let mut p = p0.clone();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for i in candidates {
        if checked >= GRADIENT_CHECK_SAMPLES {
            break;
        }
        p[i] = p0[i] + eps;
        let kink_plus = model.pattern(&p, fg) != base;
        let lp = loss(&p);
        p[i] = p0[i] - eps;
        let kink_minus = model.pattern(&p, fg) != base;
        let lm = loss(&p);
        p[i] = p0[i];
        if kink_plus || kink_minus {
            continue;
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let a = grad[i];
        let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(dev);
        checked += 1;
    }
    worst
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    seed: u64,
    encoder: EncoderSpec,
    target: TargetNorm,
    tensors: Vec<Tensor>,
}

const CHECKPOINT_FORMAT: &str = "udfcost-graph-model";

impl Model {
    pub fn to_json(&self) -> serde_json::Value {
        let mut tensors = Vec::new();
        for (name, d) in self.layout.named() {
            tensors.push(Tensor {
                name: format!("{name}.weight"),
                shape: vec![d.rows, d.cols],
                data: self.params[d.w..d.w + d.rows * d.cols].to_vec(),
            });
            tensors.push(Tensor { name: format!("{name}.bias"), shape: vec![d.rows], data: self.params[d.b..d.b + d.rows].to_vec() });
        }
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: MODEL_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            encoder: self.encoder.clone(),
            target: self.target,
            tensors,
        };
        serde_json::to_value(ck).expect("checkpoint serializes")
    }

    pub fn from_json(doc: &serde_json::Value) -> Result<Model, ModelError> {
        let format = doc.get("format").and_then(|f| f.as_str());
        if format != Some(CHECKPOINT_FORMAT) {
            return Err(ModelError::Checkpoint(format!("not a graph model checkpoint (format {format:?})")));
        }
        let version = doc.get("version").and_then(|v| v.as_u64());
        if version != Some(MODEL_VERSION as u64) {
            return Err(ModelError::Checkpoint(format!("checkpoint version {version:?}, expected {MODEL_VERSION}")));
        }
        let ck: Checkpoint = serde_json::from_value(doc.clone()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.encoder.version != crate::plangraph::ENCODER_VERSION {
            return Err(ModelError::Checkpoint(format!("encoder version {}", ck.encoder.version)));
        }
        let mut m = init_model(&ck.config, ck.encoder, ck.seed)?;
        m.target = ck.target;
        let named = m.layout.named();
        if ck.tensors.len() != 2 * named.len() {
            return Err(ModelError::Checkpoint(format!("expected {} tensors, found {}", 2 * named.len(), ck.tensors.len())));
        }
        for ((name, d), pair) in named.iter().zip(ck.tensors.chunks(2)) {
            let (w, b) = (&pair[0], &pair[1]);
            if w.name != format!("{name}.weight") || w.shape != [d.rows, d.cols] || w.data.len() != d.rows * d.cols {
                return Err(ModelError::Checkpoint(format!("tensor {} does not match {name}.weight", w.name)));
            }
            if b.name != format!("{name}.bias") || b.shape != [d.rows] || b.data.len() != d.rows {
                return Err(ModelError::Checkpoint(format!("tensor {} does not match {name}.bias", b.name)));
            }
            m.params[d.w..d.w + w.data.len()].copy_from_slice(&w.data);
            m.params[d.b..d.b + b.data.len()].copy_from_slice(&b.data);
        }
        if m.params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Checkpoint("non-finite weight".into()));
        }
        Ok(m)
    }
}
