//! Multi-task training: alternating updates over `t_a`, `t_o`, `t_m`, or
//! pre-training on `t_a`/`t_o` followed by fine-tuning on `t_m`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{bio_to_spans, format_dual_bio, TermKind, TermSpan, WeakLabeledSentence};
use crate::eval::EvalReport;
use crate::tagger::{bio_labels, joint_labels, Gradients, Mode, ParamGroup, TaggerError, TaggerModel, Task, Topology};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} is empty")]
    EmptyCorpus(&'static str),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error("non-finite {task} loss in {phase} epoch {epoch}")]
    Diverged {
        phase: Phase,
        task: Task,
        epoch: usize,
        manifest: Box<RunManifest>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Alternating,
    PretrainFinetune,
}

impl FromStr for Method {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alt" | "alternating" => Ok(Method::Alternating),
            "pre" | "pretrain_finetune" => Ok(Method::PretrainFinetune),
            _ => Err(TrainError::Config(format!("unknown method {s:?} (expected alt or pre)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Alternating,
    Pretrain,
    Finetune,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Alternating => "alternating",
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Phase-1 epoch cap for pretrain-finetune; `None` uses `max_epochs`.
    pub pretrain_max_epochs: Option<usize>,
    /// Weak sentences per phase-1 epoch; `None` is a full pass.
    pub weak_epoch_size: Option<usize>,
    pub seed: u64,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::PretrainFinetune,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 100,
            patience: 5,
            pretrain_max_epochs: None,
            weak_epoch_size: None,
            seed: 0,
            dropout: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.patience >= self.max_epochs {
            return bad("patience must be smaller than max_epochs");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        if self.weak_epoch_size == Some(0) {
            return bad("weak_epoch_size must be positive");
        }
        Ok(())
    }
}

/// Adam with per-tensor state. Embedding rows keep their own moments and
/// are only touched when they receive a gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    state: BTreeMap<(ParamGroup, usize), (Vec<f64>, Vec<f64>)>,
    rows: BTreeMap<usize, (Array1<f64>, Array1<f64>)>,
}

impl Adam {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            t: 0,
            state: BTreeMap::new(),
            rows: BTreeMap::new(),
        }
    }

    fn update(&self, p: &mut f64, g: f64, m: &mut f64, v: &mut f64, c1: f64, c2: f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
    }

    /// Updates only the groups present in `grads`.
    pub fn step(&mut self, model: &mut TaggerModel, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut dense: Vec<(ParamGroup, Vec<&[f64]>)> = Vec::new();
        for (i, g) in grads.encoders.iter().enumerate() {
            if let Some(g) = g {
                dense.push((ParamGroup::Encoder(i), g.tensors()));
            }
        }
        for (task, g) in Task::ALL.iter().zip(&grads.heads) {
            if let Some(g) = g {
                dense.push((ParamGroup::Head(*task), g.tensors()));
            }
        }
        for (group, gs) in dense {
            let mut state = std::mem::take(&mut self.state);
            for (ti, (p, g)) in model.group_tensors_mut(group).into_iter().zip(gs).enumerate() {
                let (m, v) = state
                    .entry((group, ti))
                    .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
                for i in 0..g.len() {
                    self.update(&mut p[i], g[i], &mut m[i], &mut v[i], c1, c2);
                }
            }
            self.state = state;
        }
        for (&row, g) in &grads.embeddings {
            let mut rows = std::mem::take(&mut self.rows);
            let (m, v) = rows
                .entry(row)
                .or_insert_with(|| (Array1::zeros(g.len()), Array1::zeros(g.len())));
            let mut p = model.embeddings.matrix.row_mut(row);
            for i in 0..g.len() {
                self.update(&mut p[i], g[i], &mut m[i], &mut v[i], c1, c2);
            }
            self.rows = rows;
        }
    }
}

/// Stops after `patience` epochs without a strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if metric <= b => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, metric));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationSet {
    Gold,
    Weak,
}

/// Hooks for instrumentation. All methods default to no-ops.
pub trait StepObserver {
    fn before_update(&mut self, _phase: Phase, _task: Task, _model: &TaggerModel) {}
    fn after_update(&mut self, _phase: Phase, _task: Task, _model: &TaggerModel) {}
    fn on_validation(&mut self, _phase: Phase, _set: ValidationSet) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

impl StepObserver for () {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub loss_ta: Option<f64>,
    pub loss_to: Option<f64>,
    pub loss_tm: Option<f64>,
    pub validation_set: ValidationSet,
    pub validation: EvalReport,
    pub f1_sum: f64,
}

impl EpochRecord {
    pub const TSV_HEADER: &'static str = "epoch\tloss_ta\tloss_to\tloss_tm\tval_aspect_F1\tval_opinion_F1\tF1_sum";

    pub fn tsv(&self) -> String {
        let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
        format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch,
            f(self.loss_ta),
            f(self.loss_to),
            f(self.loss_tm),
            self.validation.aspect.f1,
            self.validation.opinion.f1,
            self.f1_sum
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub sentences: usize,
    pub sha256: String,
}

impl Fingerprint {
    pub fn of(corpus: &[WeakLabeledSentence]) -> Self {
        let digest = Sha256::digest(format_dual_bio(corpus).as_bytes());
        Self {
            sentences: corpus.len(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub topology: Topology,
    pub hidden: usize,
    pub embedding_dim: usize,
    pub vocabulary: usize,
    pub tune_embeddings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestEpoch {
    pub phase: Phase,
    pub epoch: usize,
    pub f1_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: TrainConfig,
    pub model: ModelShape,
    pub data: BTreeMap<String, Fingerprint>,
    pub epochs: Vec<EpochRecord>,
    pub pretrain_best: Option<BestEpoch>,
    pub best: Option<BestEpoch>,
    pub stopped_epoch: usize,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    /// Everything except wall time, for comparing runs.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("wall_time_secs");
        }
        serde_json::to_string(&v).expect("value serializes")
    }
}

/// Training and validation corpora. Gold sentences carry both kinds in the
/// same shape as rule-labeled ones.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub gold: &'a [WeakLabeledSentence],
    pub weak: &'a [WeakLabeledSentence],
    pub gold_validation: &'a [WeakLabeledSentence],
    pub weak_validation: &'a [WeakLabeledSentence],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TaggerModel,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone)]
struct Example {
    words: Vec<String>,
    labels: Vec<usize>,
}

fn examples(corpus: &[WeakLabeledSentence], task: Task) -> Result<Vec<Example>, TaggerError> {
    corpus
        .iter()
        .filter(|s| !s.words.is_empty())
        .map(|s| {
            let labels = match task {
                Task::Aspect => bio_labels(&s.aspect),
                Task::Opinion => bio_labels(&s.opinion),
                Task::Manual => joint_labels(&s.aspect, &s.opinion)?,
            };
            Ok(Example {
                words: s.words.clone(),
                labels,
            })
        })
        .collect()
}

/// Shuffled index stream; reshuffles when exhausted.
struct Stream {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Stream {
    fn new(len: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            pos: len,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    /// Up to `size` indices; a batch never straddles two passes.
    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.reshuffle();
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

fn map_ordered<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Predictions of `task` against the tag sequences it is trained on.
fn evaluate_task(model: &TaggerModel, corpus: &[WeakLabeledSentence], task: Task) -> Result<EvalReport, TaggerError> {
    type Pair = (Vec<TermSpan>, Vec<TermSpan>);
    let rows: Vec<Result<(Pair, Pair), TaggerError>> = map_ordered(corpus, |s| {
        let gold = (bio_to_spans(&s.aspect), bio_to_spans(&s.opinion));
        if s.words.is_empty() {
            return Ok(((vec![], vec![]), gold));
        }
        let p = model.predict(&s.words, task)?;
        let pred = (p.spans(TermKind::Aspect), p.spans(TermKind::Opinion));
        Ok((pred, gold))
    });
    let mut predicted = Vec::with_capacity(rows.len());
    let mut gold = Vec::with_capacity(rows.len());
    for r in rows {
        let (p, g) = r?;
        predicted.push(p);
        gold.push(g);
    }
    Ok(EvalReport::from_predictions(&predicted, &gold))
}

/// `t_m` predictions scored against gold spans of both kinds.
pub fn evaluate_gold(model: &TaggerModel, corpus: &[WeakLabeledSentence]) -> Result<EvalReport, TaggerError> {
    evaluate_task(model, corpus, Task::Manual)
}

/// `t_a` scored on aspect tags and `t_o` on opinion tags.
pub fn evaluate_weak(model: &TaggerModel, corpus: &[WeakLabeledSentence]) -> Result<EvalReport, TaggerError> {
    let a = evaluate_task(model, corpus, Task::Aspect)?;
    let o = evaluate_task(model, corpus, Task::Opinion)?;
    Ok(EvalReport {
        aspect: a.aspect,
        opinion: o.opinion,
    })
}

struct Trainer<'o> {
    config: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    manifest: RunManifest,
    observer: &'o mut dyn StepObserver,
}

#[derive(Default)]
struct LossMeter {
    sums: [f64; 3],
    counts: [usize; 3],
}

impl LossMeter {
    fn add(&mut self, task: Task, loss: f64) {
        self.sums[task.index()] += loss;
        self.counts[task.index()] += 1;
    }

    fn mean(&self, task: Task) -> Option<f64> {
        let i = task.index();
        (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64)
    }
}

impl<'o> Trainer<'o> {
    fn new(model: &TaggerModel, data: &TrainData, config: &TrainConfig, observer: &'o mut dyn StepObserver) -> Self {
        let data_fp = [
            ("gold", data.gold),
            ("weak", data.weak),
            ("gold_validation", data.gold_validation),
            ("weak_validation", data.weak_validation),
        ]
        .into_iter()
        .map(|(k, c)| (k.to_string(), Fingerprint::of(c)))
        .collect();
        Self {
            config: *config,
            adam: Adam::new(config),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config: *config,
                model: ModelShape {
                    topology: model.topology,
                    hidden: model.hidden(),
                    embedding_dim: model.embeddings.dim(),
                    vocabulary: model.embeddings.len(),
                    tune_embeddings: model.tune_embeddings,
                },
                data: data_fp,
                epochs: Vec::new(),
                pretrain_best: None,
                best: None,
                stopped_epoch: 0,
                wall_time_secs: 0.0,
            },
            observer,
        }
    }

    /// One optimizer step on the mean loss of a batch.
    fn update(
        &mut self,
        model: &mut TaggerModel,
        phase: Phase,
        epoch: usize,
        task: Task,
        batch: &[&Example],
        meter: &mut LossMeter,
    ) -> Result<(), TrainError> {
        if batch.is_empty() {
            return Ok(());
        }
        let seeds: Vec<(u64, &Example)> = batch.iter().map(|e| (self.rng.random::<u64>(), *e)).collect();
        let snapshot: &TaggerModel = model;
        let results = map_ordered(&seeds, |(seed, ex)| snapshot.loss_and_grad(&ex.words, &ex.labels, task, Mode::Train, *seed));
        let scale = 1.0 / batch.len() as f64;
        let mut grads = Gradients::empty(model);
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l * scale;
            grads.add_scaled(&g, scale);
        }
        if !loss.is_finite() {
            return Err(TrainError::Diverged {
                phase,
                task,
                epoch,
                manifest: Box::new(self.manifest.clone()),
            });
        }
        meter.add(task, loss);
        self.observer.before_update(phase, task, model);
        self.adam.step(model, &grads);
        self.observer.after_update(phase, task, model);
        Ok(())
    }

    fn record(&mut self, record: EpochRecord) {
        self.observer.on_epoch(&record);
        self.manifest.epochs.push(record);
    }
}

fn batch_of<'a>(pool: &'a [Example], idx: &[usize]) -> Vec<&'a Example> {
    idx.iter().map(|&i| &pool[i]).collect()
}

fn check_inputs(data: &TrainData, config: &TrainConfig) -> Result<(), TrainError> {
    config.validate()?;
    if data.gold.is_empty() {
        return Err(TrainError::EmptyCorpus("gold corpus"));
    }
    if data.gold_validation.is_empty() {
        return Err(TrainError::EmptyCorpus("gold validation"));
    }
    Ok(())
}

/// Each iteration makes one `t_a`, one `t_o` and one `t_m` update; an epoch
/// is one pass over the gold stream. With no weak data only `t_m` runs.
pub fn train_alternating(
    model: TaggerModel,
    data: TrainData,
    config: &TrainConfig,
    observer: &mut dyn StepObserver,
) -> Result<TrainOutcome, TrainError> {
    check_inputs(&data, config)?;
    let started = Instant::now();
    let mut model = model;
    model.dropout = config.dropout;
    let gold = examples(data.gold, Task::Manual)?;
    let weak_a = examples(data.weak, Task::Aspect)?;
    let weak_o = examples(data.weak, Task::Opinion)?;
    let mut t = Trainer::new(&model, &data, config, observer);
    let mut gold_stream = Stream::new(gold.len(), t.rng.random());
    let mut a_stream = Stream::new(weak_a.len(), t.rng.random());
    let mut o_stream = Stream::new(weak_o.len(), t.rng.random());
    let bs = config.batch_size;
    let iterations = gold.len().div_ceil(bs);

    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    for epoch in 1..=config.max_epochs {
        let mut meter = LossMeter::default();
        gold_stream.reshuffle();
        for _ in 0..iterations {
            if !weak_a.is_empty() {
                let b = a_stream.next_batch(bs);
                t.update(&mut model, Phase::Alternating, epoch, Task::Aspect, &batch_of(&weak_a, &b), &mut meter)?;
                let b = o_stream.next_batch(bs);
                t.update(&mut model, Phase::Alternating, epoch, Task::Opinion, &batch_of(&weak_o, &b), &mut meter)?;
            }
            let b = gold_stream.next_batch(bs);
            t.update(&mut model, Phase::Alternating, epoch, Task::Manual, &batch_of(&gold, &b), &mut meter)?;
        }
        t.observer.on_validation(Phase::Alternating, ValidationSet::Gold);
        let report = evaluate_gold(&model, data.gold_validation)?;
        let f1_sum = report.f1_sum();
        t.record(EpochRecord {
            phase: Phase::Alternating,
            epoch,
            loss_ta: meter.mean(Task::Aspect),
            loss_to: meter.mean(Task::Opinion),
            loss_tm: meter.mean(Task::Manual),
            validation_set: ValidationSet::Gold,
            validation: report,
            f1_sum,
        });
        t.manifest.stopped_epoch = epoch;
        match stopper.observe(epoch, f1_sum) {
            StopDecision::Improved => {
                best = model.clone();
                t.manifest.best = Some(BestEpoch {
                    phase: Phase::Alternating,
                    epoch,
                    f1_sum,
                });
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    t.manifest.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        model: best,
        manifest: t.manifest,
    })
}

/// Phase 1: alternate `t_a`/`t_o` updates, monitored on weak validation
/// only. Returns the best snapshot, or the input when no epoch ran.
fn pretrain(
    model: TaggerModel,
    weak: &[WeakLabeledSentence],
    weak_validation: &[WeakLabeledSentence],
    t: &mut Trainer,
) -> Result<TaggerModel, TrainError> {
    let config = t.config;
    let max_epochs = config.pretrain_max_epochs.unwrap_or(config.max_epochs);
    if weak.is_empty() || max_epochs == 0 {
        return Ok(model);
    }
    if weak_validation.is_empty() {
        return Err(TrainError::EmptyCorpus("weak validation"));
    }
    let mut model = model;
    let weak_a = examples(weak, Task::Aspect)?;
    let weak_o = examples(weak, Task::Opinion)?;
    let mut a_stream = Stream::new(weak_a.len(), t.rng.random());
    let mut o_stream = Stream::new(weak_o.len(), t.rng.random());
    let bs = config.batch_size;
    let epoch_size = config.weak_epoch_size.unwrap_or(weak_a.len()).max(1);
    let iterations = epoch_size.div_ceil(bs);

    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    for epoch in 1..=max_epochs {
        let mut meter = LossMeter::default();
        for _ in 0..iterations {
            let b = a_stream.next_batch(bs);
            t.update(&mut model, Phase::Pretrain, epoch, Task::Aspect, &batch_of(&weak_a, &b), &mut meter)?;
            let b = o_stream.next_batch(bs);
            t.update(&mut model, Phase::Pretrain, epoch, Task::Opinion, &batch_of(&weak_o, &b), &mut meter)?;
        }
        t.observer.on_validation(Phase::Pretrain, ValidationSet::Weak);
        let report = evaluate_weak(&model, weak_validation)?;
        let f1_sum = report.f1_sum();
        t.record(EpochRecord {
            phase: Phase::Pretrain,
            epoch,
            loss_ta: meter.mean(Task::Aspect),
            loss_to: meter.mean(Task::Opinion),
            loss_tm: None,
            validation_set: ValidationSet::Weak,
            validation: report,
            f1_sum,
        });
        match stopper.observe(epoch, f1_sum) {
            StopDecision::Improved => {
                best = model.clone();
                t.manifest.pretrain_best = Some(BestEpoch {
                    phase: Phase::Pretrain,
                    epoch,
                    f1_sum,
                });
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    Ok(best)
}

/// Phase 1 on weak data, then `t_m` only on gold data. The optimizer state
/// is reset between phases.
pub fn train_pretrain_finetune(
    model: TaggerModel,
    data: TrainData,
    config: &TrainConfig,
    observer: &mut dyn StepObserver,
) -> Result<TrainOutcome, TrainError> {
    check_inputs(&data, config)?;
    let started = Instant::now();
    let mut model = model;
    model.dropout = config.dropout;
    let mut t = Trainer::new(&model, &data, config, observer);
    let mut model = pretrain(model, data.weak, data.weak_validation, &mut t)?;

    t.adam = Adam::new(config);
    let gold = examples(data.gold, Task::Manual)?;
    let mut gold_stream = Stream::new(gold.len(), t.rng.random());
    let bs = config.batch_size;
    let iterations = gold.len().div_ceil(bs);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    for epoch in 1..=config.max_epochs {
        let mut meter = LossMeter::default();
        gold_stream.reshuffle();
        for _ in 0..iterations {
            let b = gold_stream.next_batch(bs);
            t.update(&mut model, Phase::Finetune, epoch, Task::Manual, &batch_of(&gold, &b), &mut meter)?;
        }
        t.observer.on_validation(Phase::Finetune, ValidationSet::Gold);
        let report = evaluate_gold(&model, data.gold_validation)?;
        let f1_sum = report.f1_sum();
        t.record(EpochRecord {
            phase: Phase::Finetune,
            epoch,
            loss_ta: None,
            loss_to: None,
            loss_tm: meter.mean(Task::Manual),
            validation_set: ValidationSet::Gold,
            validation: report,
            f1_sum,
        });
        t.manifest.stopped_epoch = epoch;
        match stopper.observe(epoch, f1_sum) {
            StopDecision::Improved => {
                best = model.clone();
                t.manifest.best = Some(BestEpoch {
                    phase: Phase::Finetune,
                    epoch,
                    f1_sum,
                });
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    t.manifest.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        model: best,
        manifest: t.manifest,
    })
}

/// Dispatches on `config.method`.
pub fn train(
    model: TaggerModel,
    data: TrainData,
    config: &TrainConfig,
    observer: &mut dyn StepObserver,
) -> Result<TrainOutcome, TrainError> {
    match config.method {
        Method::Alternating => train_alternating(model, data, config, observer),
        Method::PretrainFinetune => train_pretrain_finetune(model, data, config, observer),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::spans_to_bio;
    use crate::tagger::{EmbeddingTable, TaggerConfig};

    fn sentence(words: &str, aspect: &[(usize, usize)], opinion: &[(usize, usize)]) -> WeakLabeledSentence {
        let words: Vec<String> = words.split(' ').map(String::from).collect();
        let n = words.len();
        let sp = |v: &[(usize, usize)], k| v.iter().map(|&(s, e)| TermSpan::new(s, e, k)).collect::<Vec<_>>();
        WeakLabeledSentence {
            aspect: spans_to_bio(n, &sp(aspect, TermKind::Aspect), TermKind::Aspect).unwrap(),
            opinion: spans_to_bio(n, &sp(opinion, TermKind::Opinion), TermKind::Opinion).unwrap(),
            words,
        }
    }

    fn toy() -> Vec<WeakLabeledSentence> {
        vec![
            sentence("the screen is great", &[(2, 2)], &[(4, 4)]),
            sentence("battery life is bad", &[(1, 2)], &[(4, 4)]),
            sentence("great keyboard", &[(2, 2)], &[(1, 1)]),
            sentence("the screen is bad", &[(2, 2)], &[(4, 4)]),
        ]
    }

    fn model(topology: Topology) -> TaggerModel {
        let vocab: Vec<String> = "the screen is great battery life bad keyboard"
            .split(' ')
            .map(String::from)
            .collect();
        TaggerModel::new(
            &TaggerConfig {
                topology,
                hidden: 4,
                dropout: 0.0,
                tune_embeddings: false,
                seed: 1,
            },
            EmbeddingTable::random(&vocab, 5, 2).unwrap(),
        )
    }

    #[test]
    fn early_stopping_semantics() {
        let mut s = EarlyStopping::new(5);
        let metrics = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3];
        let mut stopped = None;
        for (i, m) in metrics.iter().enumerate() {
            if s.observe(i + 1, *m) == StopDecision::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(12));
        assert_eq!(s.best(), Some((7, 0.9)));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            patience: 100,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!("alt".parse::<Method>().is_ok());
        assert!("sgd".parse::<Method>().is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut m = model(Topology::Shared);
        let before = m.head(Task::Aspect).bias.clone();
        let mut g = Gradients::empty(&m);
        let mut head = m.head(Task::Aspect).zeros_like();
        head.bias[0] = 3.0;
        head.bias[1] = -0.5;
        g.heads[0] = Some(head);
        let mut adam = Adam::new(&TrainConfig::default());
        adam.step(&mut m, &g);
        let after = &m.head(Task::Aspect).bias;
        assert!((after[0] - (before[0] - 1e-3)).abs() < 1e-9);
        assert!((after[1] - (before[1] + 1e-3)).abs() < 1e-9);
        assert_eq!(after[2], before[2]);
    }

    #[test]
    fn small_full_batch_step_does_not_increase_loss() {
        let data = toy();
        let ex = examples(&data, Task::Manual).unwrap();
        let total = |m: &TaggerModel| -> f64 {
            ex.iter()
                .map(|e| m.loss(&e.words, &e.labels, Task::Manual, Mode::Infer, 0).unwrap())
                .sum()
        };
        let mut m = model(Topology::Double);
        for _ in 0..5 {
            let mut g = Gradients::empty(&m);
            for e in &ex {
                g.add_scaled(&m.loss_and_grad(&e.words, &e.labels, Task::Manual, Mode::Infer, 0).unwrap().1, 1.0);
            }
            let before = total(&m);
            for group in g.groups() {
                let grad: Vec<Vec<f64>> = match group {
                    ParamGroup::Encoder(i) => g.encoders[i].as_ref().unwrap().tensors().iter().map(|t| t.to_vec()).collect(),
                    ParamGroup::Head(t) => g.heads[t.index()].as_ref().unwrap().tensors().iter().map(|t| t.to_vec()).collect(),
                    ParamGroup::Embeddings => vec![],
                };
                for (p, gr) in m.group_tensors_mut(group).into_iter().zip(grad) {
                    for (x, d) in p.iter_mut().zip(gr) {
                        *x -= 1e-3 * d;
                    }
                }
            }
            assert!(total(&m) <= before, "{} > {before}", total(&m));
        }
    }

    #[test]
    fn empty_weak_corpus_is_supervised_only() {
        let data = toy();
        let config = TrainConfig {
            method: Method::Alternating,
            batch_size: 2,
            max_epochs: 3,
            patience: 2,
            dropout: 0.0,
            ..Default::default()
        };
        let d = TrainData {
            gold: &data,
            weak: &[],
            gold_validation: &data,
            weak_validation: &[],
        };
        let alt = train_alternating(model(Topology::Double), d, &config, &mut ()).unwrap();
        assert!(alt.manifest.epochs.iter().all(|e| e.loss_ta.is_none() && e.loss_tm.is_some()));
        let pre = train_pretrain_finetune(model(Topology::Double), d, &config, &mut ()).unwrap();
        assert!(pre.manifest.epochs.iter().all(|e| e.phase == Phase::Finetune));
        // Same seed, same stream of gold batches: identical parameters.
        assert_eq!(alt.model.heads, pre.model.heads);
    }

    #[test]
    fn manifest_epochs_are_recorded() {
        let data = toy();
        let config = TrainConfig {
            method: Method::PretrainFinetune,
            batch_size: 2,
            max_epochs: 3,
            patience: 2,
            pretrain_max_epochs: Some(2),
            ..Default::default()
        };
        let d = TrainData {
            gold: &data,
            weak: &data,
            gold_validation: &data,
            weak_validation: &data,
        };
        let out = train(model(Topology::Shared), d, &config, &mut ()).unwrap();
        let phases: Vec<Phase> = out.manifest.epochs.iter().map(|e| e.phase).collect();
        assert_eq!(&phases[..2], &[Phase::Pretrain, Phase::Pretrain]);
        assert!(phases[2..].iter().all(|p| *p == Phase::Finetune));
        assert_eq!(out.manifest.data["gold"].sentences, 4);
        assert_eq!(out.manifest.data["gold"].sha256.len(), 64);
        assert_eq!(out.manifest.epochs[0].tsv().split('\t').count(), 7);
    }
}
