use serde::{Deserialize, Serialize};

use super::joint::{JointFeatures, JointGraph, JointKind};
use super::plan::{AggFunc, CardMode};
use crate::cfg::{LoopType, NodeFeatures};
use crate::udfscript::{CmpOp, Dtype, LibFunc, OpKind};

pub const ENCODER_VERSION: u32 = 1;
pub const UNK: &str = "<unk>";

/// Category names; lookups of names outside the list land on the trailing UNK
/// slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab(pub Vec<String>);

impl Vocab {
    fn of<'a>(names: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut v: Vec<String> = names.into_iter().map(str::to_string).collect();
        v.push(UNK.to_string());
        Vocab(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index(&self, name: &str) -> usize {
        self.0.iter().position(|n| n == name).unwrap_or(self.0.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub ops: Vocab,
    pub libs: Vocab,
    pub cmops: Vocab,
    pub dtypes: Vocab,
    pub loop_types: Vocab,
    pub agg_funcs: Vocab,
}

impl Default for Vocabularies {
    fn default() -> Self {
        Vocabularies {
            ops: Vocab::of(OpKind::ALL.iter().map(|o| o.name())),
            libs: Vocab::of(LibFunc::ALL.iter().map(|l| l.qualified())),
            cmops: Vocab::of(CmpOp::ALL.iter().map(|c| c.symbol())),
            dtypes: Vocab::of(Dtype::ALL.iter().map(|d| d.name())),
            loop_types: Vocab::of(["for", "while"]),
            agg_funcs: Vocab::of(AggFunc::ALL.iter().map(|a| a.name())),
        }
    }
}

/// Mean and standard deviation of log1p-transformed numeric features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Vocabularies, cardinality flavor and normalization statistics, frozen
/// once a model is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub version: u32,
    pub card_mode: CardMode,
    pub vocab: Vocabularies,
    /// Indexed by `JointKind::index`.
    pub norm: Vec<NormStats>,
}

/// Numeric slots (log1p + standardized, or zero when absent) followed by
/// categorical slots used as is.
struct RawNode {
    numeric: Vec<Option<f64>>,
    categorical: Vec<f64>,
}

fn one_hot(out: &mut Vec<f64>, vocab: &Vocab, name: Option<&str>) {
    let start = out.len();
    out.resize(start + vocab.len(), 0.0);
    if let Some(n) = name {
        out[start + vocab.index(n)] = 1.0;
    }
}

fn multi_hot<'a>(out: &mut Vec<f64>, vocab: &Vocab, names: impl IntoIterator<Item = &'a str>) {
    let start = out.len();
    out.resize(start + vocab.len(), 0.0);
    for n in names {
        out[start + vocab.index(n)] = 1.0;
    }
}

fn numeric_width(kind: JointKind) -> usize {
    match kind {
        JointKind::Table | JointKind::Column => 2,
        JointKind::Scan | JointKind::Filter | JointKind::Join | JointKind::Agg | JointKind::Output => 4,
        JointKind::OutputColumn => 0,
        JointKind::Inv | JointKind::Comp | JointKind::Branch => 2,
        JointKind::Loop | JointKind::LoopEnd => 3,
        JointKind::Ret => 1,
    }
}

impl EncoderSpec {
    pub fn new(card_mode: CardMode) -> Self {
        let norm = JointKind::ALL
            .iter()
            .map(|&k| NormStats { mean: vec![0.0; numeric_width(k)], std: vec![1.0; numeric_width(k)] })
            .collect();
        EncoderSpec { version: ENCODER_VERSION, card_mode, vocab: Vocabularies::default(), norm }
    }

    fn raw(&self, kind: JointKind, f: &JointFeatures) -> RawNode {
        let v = &self.vocab;
        let mut numeric = Vec::new();
        let mut cat = Vec::new();
        match f {
            JointFeatures::Table { rows, columns } => numeric.extend([Some(*rows), Some(*columns as f64)]),
            JointFeatures::Column { dtype, null_fraction, distinct } => {
                numeric.extend([Some(*distinct), Some(*null_fraction)]);
                one_hot(&mut cat, &v.dtypes, Some(dtype.name()));
            }
            JointFeatures::Operator { cards, on_udf, cmops, agg, group_by } => {
                let (i, o) = cards.get(self.card_mode);
                numeric.extend([i, o, Some(cmops.len() as f64), Some(*group_by as f64)]);
                cat.extend([i.is_some() as u8 as f64, o.is_some() as u8 as f64, *on_udf as u8 as f64]);
                multi_hot(&mut cat, &v.cmops, cmops.iter().map(|c| c.symbol()));
                one_hot(&mut cat, &v.agg_funcs, agg.map(|a| a.name()));
            }
            JointFeatures::OutputColumn { dtype } => one_hot(&mut cat, &v.dtypes, Some(dtype.name())),
            JointFeatures::Udf(n) => {
                let loop_part = n.loop_part as u8 as f64;
                match &n.features {
                    NodeFeatures::Inv { in_dts, nr_params } => {
                        numeric.extend([Some(n.in_rows), Some(*nr_params as f64)]);
                        cat.extend(in_dts.iter().map(|&c| c as f64));
                    }
                    NodeFeatures::Comp { lib, ops } => {
                        numeric.extend([Some(n.in_rows), Some(ops.len() as f64)]);
                        one_hot(&mut cat, &v.libs, lib.map(|l| l.qualified()));
                        multi_hot(&mut cat, &v.ops, ops.iter().map(|o| o.name()));
                        cat.push(loop_part);
                    }
                    NodeFeatures::Branch { cmop, ops, .. } => {
                        numeric.extend([Some(n.in_rows), Some(ops.len() as f64)]);
                        one_hot(&mut cat, &v.cmops, cmop.map(|c| c.symbol()));
                        cat.push(loop_part);
                    }
                    NodeFeatures::Loop { loop_type, ops, .. } => {
                        numeric.extend([Some(n.in_rows), n.nr_iter, Some(ops.len() as f64)]);
                        one_hot(&mut cat, &v.loop_types, Some(loop_type_name(*loop_type)));
                        cat.push(loop_part);
                    }
                    NodeFeatures::LoopEnd { loop_type } => {
                        numeric.extend([Some(n.in_rows), n.nr_iter, Some(0.0)]);
                        one_hot(&mut cat, &v.loop_types, Some(loop_type_name(*loop_type)));
                        cat.push(loop_part);
                    }
                    NodeFeatures::Ret { out_dtype } => {
                        numeric.push(Some(n.in_rows));
                        one_hot(&mut cat, &v.dtypes, Some(out_dtype.name()));
                    }
                }
            }
        }
        debug_assert_eq!(numeric.len(), numeric_width(kind));
        RawNode { numeric, categorical: cat }
    }

    /// Feature vector width of a node type.
    pub fn width(&self, kind: JointKind) -> usize {
        let v = &self.vocab;
        let cat = match kind {
            JointKind::Table => 0,
            JointKind::Column | JointKind::OutputColumn | JointKind::Ret => v.dtypes.len(),
            JointKind::Scan | JointKind::Filter | JointKind::Join | JointKind::Agg | JointKind::Output => {
                3 + v.cmops.len() + v.agg_funcs.len()
            }
            JointKind::Inv => 4,
            JointKind::Comp => v.libs.len() + v.ops.len() + 1,
            JointKind::Branch => v.cmops.len() + 1,
            JointKind::Loop | JointKind::LoopEnd => v.loop_types.len() + 1,
        };
        numeric_width(kind) + cat
    }

    /// Fits normalization statistics on the numeric features of `graphs`.
    pub fn fit<'a>(&mut self, graphs: impl IntoIterator<Item = &'a JointGraph>) {
        let mut sums: Vec<Vec<(f64, f64, f64)>> =
            JointKind::ALL.iter().map(|&k| vec![(0.0, 0.0, 0.0); numeric_width(k)]).collect();
        for g in graphs {
            for n in &g.nodes {
                let raw = self.raw(n.kind, &n.features);
                for (slot, x) in raw.numeric.iter().enumerate() {
                    if let Some(x) = x {
                        let y = x.max(0.0).ln_1p();
                        let s = &mut sums[n.kind.index()][slot];
                        s.0 += 1.0;
                        s.1 += y;
                        s.2 += y * y;
                    }
                }
            }
        }
        for (k, slots) in sums.iter().enumerate() {
            for (slot, &(n, s, ss)) in slots.iter().enumerate() {
                let (mean, std) = if n > 0.0 {
                    let m = s / n;
                    (m, (ss / n - m * m).max(0.0).sqrt())
                } else {
                    (0.0, 1.0)
                };
                self.norm[k].mean[slot] = mean;
                self.norm[k].std[slot] = if std > 1e-6 { std } else { 1.0 };
            }
        }
    }

    pub fn encode_node(&self, kind: JointKind, f: &JointFeatures) -> Vec<f64> {
        let raw = self.raw(kind, f);
        let norm = &self.norm[kind.index()];
        let mut out = Vec::with_capacity(self.width(kind));
        for (slot, x) in raw.numeric.iter().enumerate() {
            out.push(match x {
                Some(x) => (x.max(0.0).ln_1p() - norm.mean[slot]) / norm.std[slot],
                None => 0.0,
            });
        }
        out.extend(raw.categorical);
        out
    }
}

fn loop_type_name(t: LoopType) -> &'static str {
    match t {
        LoopType::For => "for",
        LoopType::While => "while",
    }
}

/// Model input: typed feature vectors, sorted predecessor lists and one
/// topological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizedGraph {
    pub kinds: Vec<JointKind>,
    pub features: Vec<Vec<f64>>,
    /// Predecessors of each node in ascending index order.
    pub preds: Vec<Vec<usize>>,
    pub order: Vec<usize>,
    pub root: usize,
}

pub fn featurize(joint: &JointGraph, enc: &EncoderSpec) -> FeaturizedGraph {
    FeaturizedGraph {
        kinds: joint.nodes.iter().map(|n| n.kind).collect(),
        features: joint.nodes.iter().map(|n| enc.encode_node(n.kind, &n.features)).collect(),
        preds: joint.predecessors(),
        order: joint.topological_order().expect("joint graphs are acyclic"),
        root: joint.root,
    }
}

impl FeaturizedGraph {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// True iff `order` lists every node once, after all of its predecessors.
    pub fn is_topological(&self, order: &[usize]) -> bool {
        let mut pos = vec![usize::MAX; self.len()];
        for (i, &v) in order.iter().enumerate() {
            if v >= self.len() || pos[v] != usize::MAX {
                return false;
            }
            pos[v] = i;
        }
        order.len() == self.len() && (0..self.len()).all(|v| self.preds[v].iter().all(|&u| pos[u] < pos[v]))
    }

    /// A topological order choosing uniformly among ready nodes.
    pub fn random_order(&self, rng: &mut impl rand::Rng) -> Vec<usize> {
        let n = self.len();
        let mut indeg: Vec<usize> = self.preds.iter().map(Vec::len).collect();
        let mut succ = vec![Vec::new(); n];
        for (v, ps) in self.preds.iter().enumerate() {
            for &u in ps {
                succ[u].push(v);
            }
        }
        let mut ready: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while !ready.is_empty() {
            let v = ready.swap_remove(rng.gen_range(0..ready.len()));
            order.push(v);
            for &w in &succ[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.push(w);
                }
            }
        }
        order
    }
}
