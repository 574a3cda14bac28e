//! Embeddings, bidirectional recurrent encoder(s) and three CRF heads.
//!
//! Heads are indexed by [`Task`]: `t_a` and `t_o` tag rule-extracted aspect
//! and opinion terms with 3-label BIO, `t_m` tags gold data jointly with 5
//! labels.

pub mod crf;
pub mod embedding;
pub mod encoder;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{bio_to_spans, Tag, TagSequence, TermKind, TermSpan};
pub use crf::CrfError;
pub use embedding::{EmbeddingError, EmbeddingTable};
pub use encoder::BiEncoder;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum TaggerError {
    #[error("empty sentence")]
    EmptySentence,
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error("unknown task {0:?} (expected t_a, t_o or t_m)")]
    UnknownTask(String),
    #[error("unknown topology {0:?} (expected shared or double)")]
    UnknownTopology(String),
    #[error("token {0} is labeled as both aspect and opinion")]
    JointConflict(usize),
    #[error("{0} labels for {1} words")]
    LengthMismatch(usize, usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Shared,
    Double,
}

impl FromStr for Topology {
    type Err = TaggerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shared" => Ok(Topology::Shared),
            "double" => Ok(Topology::Double),
            _ => Err(TaggerError::UnknownTopology(s.to_string())),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Shared => "shared",
            Topology::Double => "double",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "t_a")]
    Aspect,
    #[serde(rename = "t_o")]
    Opinion,
    #[serde(rename = "t_m")]
    Manual,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Aspect, Task::Opinion, Task::Manual];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn labels(self) -> usize {
        match self {
            Task::Manual => 5,
            _ => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Aspect => "t_a",
            Task::Opinion => "t_o",
            Task::Manual => "t_m",
        }
    }
}

impl FromStr for Task {
    type Err = TaggerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "t_a" => Ok(Task::Aspect),
            "t_o" => Ok(Task::Opinion),
            "t_m" => Ok(Task::Manual),
            _ => Err(TaggerError::UnknownTask(s.to_string())),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// 3-label ids: O=0, B=1, I=2.
pub fn bio_labels(seq: &TagSequence) -> Vec<usize> {
    seq.tags
        .iter()
        .map(|t| match t {
            Tag::O => 0,
            Tag::B => 1,
            Tag::I => 2,
        })
        .collect()
}

/// 5-label ids: O=0, B-asp=1, I-asp=2, B-op=3, I-op=4.
pub fn joint_labels(aspect: &TagSequence, opinion: &TagSequence) -> Result<Vec<usize>, TaggerError> {
    if aspect.len() != opinion.len() {
        return Err(TaggerError::LengthMismatch(opinion.len(), aspect.len()));
    }
    let a = bio_labels(aspect);
    let o = bio_labels(opinion);
    a.iter()
        .zip(&o)
        .enumerate()
        .map(|(i, (&a, &o))| match (a, o) {
            (0, 0) => Ok(0),
            (a, 0) => Ok(a),
            (0, o) => Ok(o + 2),
            _ => Err(TaggerError::JointConflict(i + 1)),
        })
        .collect()
}

fn bio_tags(labels: impl Iterator<Item = usize>) -> Vec<Tag> {
    labels
        .map(|l| match l {
            1 => Tag::B,
            2 => Tag::I,
            _ => Tag::O,
        })
        .collect()
}

/// Splits decoded label ids into aspect and opinion tag sequences.
pub fn decode_labels(task: Task, labels: &[usize]) -> (TagSequence, TagSequence) {
    let n = labels.len();
    let outside = |kind| TagSequence::outside(kind, n);
    match task {
        Task::Aspect => (
            TagSequence {
                kind: TermKind::Aspect,
                tags: bio_tags(labels.iter().copied()),
            },
            outside(TermKind::Opinion),
        ),
        Task::Opinion => (
            outside(TermKind::Aspect),
            TagSequence {
                kind: TermKind::Opinion,
                tags: bio_tags(labels.iter().copied()),
            },
        ),
        Task::Manual => (
            TagSequence {
                kind: TermKind::Aspect,
                tags: bio_tags(labels.iter().map(|&l| if l <= 2 { l } else { 0 })),
            },
            TagSequence {
                kind: TermKind::Opinion,
                tags: bio_tags(labels.iter().map(|&l| if l >= 3 { l - 2 } else { 0 })),
            },
        ),
    }
}

/// Additive transition mask: 0 where allowed, -inf where an `I` label
/// would follow something other than its own `B` or `I`.
pub fn transition_mask(task: Task) -> Array2<f64> {
    let k = task.labels();
    let mut m = Array2::zeros((k + 2, k + 2));
    // (inside label, labels allowed right before it)
    let rules: &[(usize, &[usize])] = match task {
        Task::Manual => &[(2, &[1, 2]), (4, &[3, 4])],
        _ => &[(2, &[1, 2])],
    };
    for &(inside, allowed) in rules {
        for prev in 0..k + 2 {
            if !allowed.contains(&prev) {
                m[[prev, inside]] = f64::NEG_INFINITY;
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfHead {
    /// `K x input` emission projection.
    pub proj: Array2<f64>,
    pub bias: Array1<f64>,
    /// `(K+2) x (K+2)`, start row `K`, stop column `K+1`.
    pub trans: Array2<f64>,
}

impl CrfHead {
    pub fn new<R: Rng>(rng: &mut R, input: usize, labels: usize) -> Self {
        Self {
            proj: encoder::glorot(rng, labels, input),
            bias: Array1::zeros(labels),
            trans: Array2::zeros((labels + 2, labels + 2)),
        }
    }

    pub fn labels(&self) -> usize {
        self.bias.len()
    }

    pub fn input(&self) -> usize {
        self.proj.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            proj: Array2::zeros(self.proj.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            trans: Array2::zeros(self.trans.raw_dim()),
        }
    }

    pub fn emissions(&self, features: ArrayView2<f64>) -> Array2<f64> {
        features.dot(&self.proj.t()) + &self.bias
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.proj.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
            self.trans.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.proj.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
            self.trans.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub topology: Topology,
    pub hidden: usize,
    pub dropout: f64,
    pub tune_embeddings: bool,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            topology: Topology::Double,
            hidden: 100,
            dropout: 0.5,
            tune_embeddings: false,
            seed: 0,
        }
    }
}

/// Parameter groups, for selective updates and instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Embeddings,
    Encoder(usize),
    Head(Task),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerModel {
    pub topology: Topology,
    pub dropout: f64,
    pub tune_embeddings: bool,
    pub embeddings: EmbeddingTable,
    /// One encoder (shared) or two (double: aspect then opinion).
    pub encoders: Vec<BiEncoder>,
    /// Indexed by [`Task::index`].
    pub heads: Vec<CrfHead>,
}

/// Gradients for the groups a loss touched; `None` means untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Sparse rows, only when embeddings are tuned.
    pub embeddings: BTreeMap<usize, Array1<f64>>,
    pub encoders: Vec<Option<BiEncoder>>,
    pub heads: Vec<Option<CrfHead>>,
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

impl Gradients {
    pub fn empty(model: &TaggerModel) -> Self {
        Self {
            embeddings: BTreeMap::new(),
            encoders: vec![None; model.encoders.len()],
            heads: vec![None; 3],
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (row, g) in &other.embeddings {
            let e = self.embeddings.entry(*row).or_insert_with(|| Array1::zeros(g.len()));
            e.scaled_add(scale, g);
        }
        for (dst, src) in self.encoders.iter_mut().zip(&other.encoders) {
            if let Some(src) = src {
                let d = dst.get_or_insert_with(|| src.zeros_like());
                for (a, b) in d.tensors_mut().into_iter().zip(src.tensors()) {
                    add_into(a, b, scale);
                }
            }
        }
        for (dst, src) in self.heads.iter_mut().zip(&other.heads) {
            if let Some(src) = src {
                let d = dst.get_or_insert_with(|| src.zeros_like());
                for (a, b) in d.tensors_mut().into_iter().zip(src.tensors()) {
                    add_into(a, b, scale);
                }
            }
        }
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut g = Vec::new();
        if !self.embeddings.is_empty() {
            g.push(ParamGroup::Embeddings);
        }
        g.extend(
            self.encoders
                .iter()
                .enumerate()
                .filter(|(_, e)| e.is_some())
                .map(|(i, _)| ParamGroup::Encoder(i)),
        );
        g.extend(
            self.heads
                .iter()
                .zip(Task::ALL)
                .filter(|(h, _)| h.is_some())
                .map(|(_, t)| ParamGroup::Head(t)),
        );
        g
    }
}

struct ForwardPass {
    ids: Vec<usize>,
    emb_mask: Option<Array2<f64>>,
    /// (encoder index, cache, output mask)
    encoded: Vec<(usize, encoder::EncoderCache, Option<Array2<f64>>)>,
    features: Array2<f64>,
    emissions: Array2<f64>,
}

fn dropout_mask<R: Rng>(rng: &mut R, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

/// Output of [`TaggerModel::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub task: Task,
    pub labels: Vec<usize>,
    pub aspect: TagSequence,
    pub opinion: TagSequence,
}

impl Prediction {
    pub fn spans(&self, kind: TermKind) -> Vec<TermSpan> {
        match kind {
            TermKind::Aspect => bio_to_spans(&self.aspect),
            TermKind::Opinion => bio_to_spans(&self.opinion),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    hidden: usize,
    embedding_dim: usize,
    model: TaggerModel,
}

impl TaggerModel {
    pub fn new(config: &TaggerConfig, embeddings: EmbeddingTable) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = embeddings.dim();
        let h = config.hidden;
        let n_enc = match config.topology {
            Topology::Shared => 1,
            Topology::Double => 2,
        };
        let encoders: Vec<BiEncoder> = (0..n_enc).map(|_| BiEncoder::new(&mut rng, d, h)).collect();
        let heads = Task::ALL
            .iter()
            .map(|&t| {
                let width = match (config.topology, t) {
                    (Topology::Double, Task::Manual) => 4 * h,
                    _ => 2 * h,
                };
                CrfHead::new(&mut rng, width, t.labels())
            })
            .collect();
        Self {
            topology: config.topology,
            dropout: config.dropout,
            tune_embeddings: config.tune_embeddings,
            embeddings,
            encoders,
            heads,
        }
    }

    pub fn hidden(&self) -> usize {
        self.encoders[0].hidden()
    }

    pub fn head(&self, task: Task) -> &CrfHead {
        &self.heads[task.index()]
    }

    /// Encoders feeding a task's head, in concatenation order.
    pub fn encoders_for(&self, task: Task) -> &'static [usize] {
        match (self.topology, task) {
            (Topology::Shared, _) => &[0],
            (Topology::Double, Task::Aspect) => &[0],
            (Topology::Double, Task::Opinion) => &[1],
            (Topology::Double, Task::Manual) => &[0, 1],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.matrix.iter().all(|v| v.is_finite())
            && self.encoders.iter().all(|e| e.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())))
            && self.heads.iter().all(|h| h.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())))
    }

    fn embed(&self, words: &[String]) -> Result<(Vec<usize>, Array2<f64>), TaggerError> {
        if words.is_empty() {
            return Err(TaggerError::EmptySentence);
        }
        let ids: Vec<usize> = words.iter().map(|w| self.embeddings.lookup(w)).collect();
        let xs = self.embeddings.matrix.select(Axis(0), &ids);
        Ok((ids, xs))
    }

    fn run(&self, words: &[String], encoders: &[usize], mode: Mode, seed: u64) -> Result<ForwardPass, TaggerError> {
        let (ids, mut xs) = self.embed(words)?;
        let train = mode == Mode::Train && self.dropout > 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb_mask = train.then(|| dropout_mask(&mut rng, xs.dim(), self.dropout));
        if let Some(m) = &emb_mask {
            xs *= m;
        }
        let mut encoded = Vec::new();
        let mut outs = Vec::new();
        for &e in encoders {
            let (mut out, cache) = self.encoders[e].forward(xs.view());
            let mask = train.then(|| dropout_mask(&mut rng, out.dim(), self.dropout));
            if let Some(m) = &mask {
                out *= m;
            }
            outs.push(out);
            encoded.push((e, cache, mask));
        }
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        let features = ndarray::concatenate(Axis(1), &views).expect("same row count");
        Ok(ForwardPass {
            ids,
            emb_mask,
            encoded,
            features,
            emissions: Array2::zeros((0, 0)),
        })
    }

    /// Hidden vectors of one encoder, `T x 2H`.
    pub fn encode(&self, words: &[String], encoder: usize, mode: Mode, seed: u64) -> Result<Array2<f64>, TaggerError> {
        Ok(self.run(words, &[encoder], mode, seed)?.features)
    }

    fn forward(&self, words: &[String], task: Task, mode: Mode, seed: u64) -> Result<ForwardPass, TaggerError> {
        let mut pass = self.run(words, self.encoders_for(task), mode, seed)?;
        pass.emissions = self.head(task).emissions(pass.features.view());
        Ok(pass)
    }

    /// Transition matrix with illegal BIO moves set to -inf.
    pub fn masked_transitions(&self, task: Task) -> Array2<f64> {
        &self.head(task).trans + &transition_mask(task)
    }

    /// Emission scores for a task, without dropout.
    pub fn emissions(&self, words: &[String], task: Task) -> Result<Array2<f64>, TaggerError> {
        Ok(self.forward(words, task, Mode::Infer, 0)?.emissions)
    }

    pub fn loss(&self, words: &[String], gold: &[usize], task: Task, mode: Mode, seed: u64) -> Result<f64, TaggerError> {
        let pass = self.forward(words, task, mode, seed)?;
        Ok(crf::neg_log_likelihood(pass.emissions.view(), self.masked_transitions(task).view(), gold)?.loss)
    }

    /// CRF negative log-likelihood of `gold` and its gradient. `seed` fixes
    /// the dropout masks in train mode.
    pub fn loss_and_grad(
        &self,
        words: &[String],
        gold: &[usize],
        task: Task,
        mode: Mode,
        seed: u64,
    ) -> Result<(f64, Gradients), TaggerError> {
        let pass = self.forward(words, task, mode, seed)?;
        let head = self.head(task);
        let nll = crf::neg_log_likelihood(pass.emissions.view(), self.masked_transitions(task).view(), gold)?;
        let d_em = &nll.d_emissions;

        let mut grads = Gradients::empty(self);
        let mut trans_grad = nll.d_transitions;
        // Masked entries get no gradient (they are already exactly 0 up to
        // rounding of exp(-inf)); keep them clean.
        for ((i, j), m) in transition_mask(task).indexed_iter() {
            if m.is_infinite() {
                trans_grad[[i, j]] = 0.0;
            }
        }
        grads.heads[task.index()] = Some(CrfHead {
            proj: d_em.t().dot(&pass.features).as_standard_layout().into_owned(),
            bias: d_em.sum_axis(Axis(0)),
            trans: trans_grad,
        });

        let d_features = d_em.dot(&head.proj);
        let width = 2 * self.hidden();
        let mut d_xs: Option<Array2<f64>> = None;
        for (slot, (e, cache, mask)) in pass.encoded.iter().enumerate() {
            let mut d_out = d_features.slice(s![.., slot * width..(slot + 1) * width]).to_owned();
            if let Some(m) = mask {
                d_out *= m;
            }
            let (g, dx) = self.encoders[*e].backward(cache, d_out.view());
            grads.encoders[*e] = Some(g);
            d_xs = Some(match d_xs {
                None => dx,
                Some(acc) => acc + dx,
            });
        }
        if self.tune_embeddings {
            let mut d_xs = d_xs.expect("at least one encoder");
            if let Some(m) = &pass.emb_mask {
                d_xs *= m;
            }
            for (t, &id) in pass.ids.iter().enumerate() {
                let row = grads
                    .embeddings
                    .entry(id)
                    .or_insert_with(|| Array1::zeros(self.embeddings.dim()));
                *row += &d_xs.row(t);
            }
        }
        Ok((nll.loss, grads))
    }

    /// Viterbi decoding under the BIO transition constraints.
    pub fn predict(&self, words: &[String], task: Task) -> Result<Prediction, TaggerError> {
        let pass = self.forward(words, task, Mode::Infer, 0)?;
        let (labels, _) = crf::viterbi(pass.emissions.view(), self.masked_transitions(task).view())?;
        let (aspect, opinion) = decode_labels(task, &labels);
        Ok(Prediction {
            task,
            labels,
            aspect,
            opinion,
        })
    }

    /// Mutable slices over every tensor of a group.
    pub fn group_tensors_mut(&mut self, group: ParamGroup) -> Vec<&mut [f64]> {
        match group {
            ParamGroup::Embeddings => vec![self.embeddings.matrix.as_slice_mut().expect("standard layout")],
            ParamGroup::Encoder(i) => self.encoders[i].tensors_mut(),
            ParamGroup::Head(t) => self.heads[t.index()].tensors_mut(),
        }
    }

    pub fn group_tensors(&self, group: ParamGroup) -> Vec<&[f64]> {
        match group {
            ParamGroup::Embeddings => vec![self.embeddings.matrix.as_slice().expect("standard layout")],
            ParamGroup::Encoder(i) => self.encoders[i].tensors(),
            ParamGroup::Head(t) => self.heads[t.index()].tensors(),
        }
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut g = vec![ParamGroup::Embeddings];
        g.extend((0..self.encoders.len()).map(ParamGroup::Encoder));
        g.extend(Task::ALL.map(ParamGroup::Head));
        g
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            hidden: self.hidden(),
            embedding_dim: self.embeddings.dim(),
            model: self.clone(),
        };
        serde_json::to_string(&ck).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TaggerError> {
        let bad = |m: String| TaggerError::Checkpoint(m);
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => return Err(bad(format!("unsupported version {v}"))),
            None => return Err(bad("missing version".into())),
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        let m = ck.model;
        let n_enc = match m.topology {
            Topology::Shared => 1,
            Topology::Double => 2,
        };
        let h = ck.hidden;
        let d = ck.embedding_dim;
        if m.embeddings.dim() != d || m.encoders.len() != n_enc || m.heads.len() != 3 {
            return Err(bad("dimensions do not match topology".into()));
        }
        for e in &m.encoders {
            for dir in [&e.fwd, &e.bwd] {
                if dir.w_x.dim() != (h, d) || dir.w_h.dim() != (h, h) || dir.b.len() != h {
                    return Err(bad("encoder shape mismatch".into()));
                }
            }
        }
        for (t, head) in Task::ALL.iter().zip(&m.heads) {
            let width = match (m.topology, t) {
                (Topology::Double, Task::Manual) => 4 * h,
                _ => 2 * h,
            };
            let k = t.labels();
            if head.proj.dim() != (k, width) || head.bias.len() != k || head.trans.dim() != (k + 2, k + 2) {
                return Err(bad(format!("head {t} shape mismatch")));
            }
        }
        if !m.is_finite() {
            return Err(bad("non-finite parameters".into()));
        }
        Ok(m)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::spans_to_bio;

    pub fn tiny_model(topology: Topology, tune: bool, dropout: f64, seed: u64) -> TaggerModel {
        let words: Vec<String> = ["the", "screen", "is", "great", "battery", "bad"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let emb = EmbeddingTable::random(&words, 4, seed).unwrap();
        TaggerModel::new(
            &TaggerConfig {
                topology,
                hidden: 3,
                dropout,
                tune_embeddings: tune,
                seed,
            },
            emb,
        )
    }

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn head_widths_follow_topology() {
        let d = tiny_model(Topology::Double, false, 0.5, 1);
        assert_eq!(d.head(Task::Manual).input(), 12);
        assert_eq!(d.head(Task::Aspect).input(), 6);
        assert_eq!(d.head(Task::Opinion).input(), 6);
        let s = tiny_model(Topology::Shared, false, 0.5, 1);
        for t in Task::ALL {
            assert_eq!(s.head(t).input(), 6);
        }
        assert_eq!(s.emissions(&words("the screen"), Task::Manual).unwrap().dim(), (2, 5));
    }

    #[test]
    fn untrained_predictions_are_well_formed() {
        for topo in [Topology::Shared, Topology::Double] {
            let m = tiny_model(topo, false, 0.5, 3);
            let w = words("The screen is great zzz");
            for t in Task::ALL {
                let p = m.predict(&w, t).unwrap();
                assert_eq!(p.labels.len(), 5);
                assert!(p.aspect.is_well_formed() && p.opinion.is_well_formed());
            }
        }
    }

    #[test]
    fn encode_shapes_dropout_and_determinism() {
        let m = tiny_model(Topology::Double, false, 0.0, 2);
        let w = words("great");
        let a = m.encode(&w, 1, Mode::Train, 9).unwrap();
        assert_eq!(a.dim(), (1, 6));
        assert_eq!(a, m.encode(&w, 1, Mode::Infer, 0).unwrap());
        let m = tiny_model(Topology::Double, false, 0.5, 2);
        let w = words("the screen is great");
        assert_eq!(m.encode(&w, 0, Mode::Train, 7).unwrap(), m.encode(&w, 0, Mode::Train, 7).unwrap());
        assert_ne!(m.encode(&w, 0, Mode::Train, 7).unwrap(), m.encode(&w, 0, Mode::Infer, 7).unwrap());
        assert_eq!(m.encode(&[], 0, Mode::Infer, 0), Err(TaggerError::EmptySentence));
    }

    #[test]
    fn joint_labels_and_decoding() {
        let a = spans_to_bio(5, &[TermSpan::new(1, 2, TermKind::Aspect)], TermKind::Aspect).unwrap();
        let o = spans_to_bio(5, &[TermSpan::new(4, 4, TermKind::Opinion)], TermKind::Opinion).unwrap();
        let l = joint_labels(&a, &o).unwrap();
        assert_eq!(l, vec![1, 2, 0, 3, 0]);
        let (da, dop) = decode_labels(Task::Manual, &l);
        assert_eq!(da, a);
        assert_eq!(dop, o);
        let clash = spans_to_bio(5, &[TermSpan::new(2, 2, TermKind::Opinion)], TermKind::Opinion).unwrap();
        assert_eq!(joint_labels(&a, &clash), Err(TaggerError::JointConflict(2)));
    }

    #[test]
    fn mask_forbids_only_dangling_inside() {
        let m = transition_mask(Task::Manual);
        assert!(m[[0, 2]].is_infinite() && m[[3, 2]].is_infinite() && m[[5, 4]].is_infinite());
        assert_eq!(m[[1, 2]], 0.0);
        assert_eq!(m[[4, 4]], 0.0);
        assert_eq!(m[[2, 6]], 0.0);
        assert_eq!(m.iter().filter(|v| v.is_infinite()).count(), 2 * 5);
    }

    #[test]
    fn unknown_task() {
        assert_eq!("t_x".parse::<Task>(), Err(TaggerError::UnknownTask("t_x".into())));
        assert_eq!("t_m".parse::<Task>(), Ok(Task::Manual));
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let h = 1e-5;
        for (topo, task, seed) in [
            (Topology::Double, Task::Manual, 1),
            (Topology::Double, Task::Aspect, 2),
            (Topology::Shared, Task::Opinion, 3),
        ] {
            let mut m = tiny_model(topo, true, 0.3, seed);
            let w = words("the screen is great");
            let gold = if task == Task::Manual { vec![0, 1, 0, 3] } else { vec![1, 2, 0, 1] };
            let (_, grads) = m.loss_and_grad(&w, &gold, task, Mode::Train, 77).unwrap();
            for group in m.groups() {
                let analytic: Vec<Vec<f64>> = match group {
                    ParamGroup::Embeddings => {
                        let mut full = Array2::zeros(m.embeddings.matrix.raw_dim());
                        for (r, g) in &grads.embeddings {
                            full.row_mut(*r).assign(g);
                        }
                        vec![full.into_raw_vec_and_offset().0]
                    }
                    ParamGroup::Encoder(i) => match &grads.encoders[i] {
                        Some(g) => g.tensors().iter().map(|t| t.to_vec()).collect(),
                        None => m.encoders[i].zeros_like().tensors().iter().map(|t| t.to_vec()).collect(),
                    },
                    ParamGroup::Head(t) => match &grads.heads[t.index()] {
                        Some(g) => g.tensors().iter().map(|t| t.to_vec()).collect(),
                        None => m.head(t).zeros_like().tensors().iter().map(|t| t.to_vec()).collect(),
                    },
                };
                for (ti, a_t) in analytic.iter().enumerate() {
                    for (i, &a) in a_t.iter().enumerate() {
                        let orig = m.group_tensors(group)[ti][i];
                        m.group_tensors_mut(group)[ti][i] = orig + h;
                        let lp = m.loss(&w, &gold, task, Mode::Train, 77).unwrap();
                        m.group_tensors_mut(group)[ti][i] = orig - h;
                        let lm = m.loss(&w, &gold, task, Mode::Train, 77).unwrap();
                        m.group_tensors_mut(group)[ti][i] = orig;
                        let fd = (lp - lm) / (2.0 * h);
                        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-5);
                        assert!(rel < 1e-4, "{group:?} {ti}/{i}: {a} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn task_touches_only_its_groups() {
        let m = tiny_model(Topology::Double, false, 0.5, 4);
        let w = words("the screen");
        let (_, g) = m.loss_and_grad(&w, &[0, 1], Task::Aspect, Mode::Train, 1).unwrap();
        assert_eq!(g.groups(), vec![ParamGroup::Encoder(0), ParamGroup::Head(Task::Aspect)]);
        let (_, g) = m.loss_and_grad(&w, &[0, 1], Task::Opinion, Mode::Train, 1).unwrap();
        assert_eq!(g.groups(), vec![ParamGroup::Encoder(1), ParamGroup::Head(Task::Opinion)]);
        let (_, g) = m.loss_and_grad(&w, &[0, 3], Task::Manual, Mode::Train, 1).unwrap();
        assert_eq!(
            g.groups(),
            vec![ParamGroup::Encoder(0), ParamGroup::Encoder(1), ParamGroup::Head(Task::Manual)]
        );
    }

    #[test]
    fn checkpoint_round_trip_and_version() {
        let m = tiny_model(Topology::Double, true, 0.5, 5);
        let back = TaggerModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let bumped = m.to_json().replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(TaggerModel::from_json(&bumped), Err(TaggerError::Checkpoint(_))));
    }
}
