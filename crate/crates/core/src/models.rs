//! Convolutional classifiers: the dual-branch fusion model and two baselines.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{softmax, Conv1dSpec, Graph, Var};
use crate::error::{dim_err, param_err, Error, Result};
use crate::nn::{he_uniform, ParamStore};
use crate::optim::{adam_step, AdamState};
use crate::session::{EPOCH_LEN, N_CHANNELS, N_CLASSES};
use crate::tensor::Tensor;

const SPATIAL: usize = 16;
const EEG_FEATURES: usize = 32;
const EMBED_FEATURES: usize = 16;
const HEAD_HIDDEN: usize = 64;
const TEMPORAL_K: usize = 11;

const EEGNET_F1: usize = 8;
const EEGNET_DEPTH: usize = 2;
const EEGNET_F2: usize = 16;
const EEGNET_K1: usize = 64;
const EEGNET_K2: usize = 16;
const EEGNET_POOL1: usize = 4;
const EEGNET_POOL2: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    BaselineCnn,
    EegNet,
    Fusion { d_embed: usize },
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::BaselineCnn => "baseline_cnn",
            Architecture::EegNet => "eegnet",
            Architecture::Fusion { .. } => "fusion",
        }
    }

    pub fn d_embed(&self) -> Option<usize> {
        match self {
            Architecture::Fusion { d_embed } => Some(*d_embed),
            _ => None,
        }
    }

    pub fn build(&self, seed: u64) -> Result<Classifier> {
        match *self {
            Architecture::BaselineCnn => Ok(Classifier::baseline_cnn(seed)),
            Architecture::EegNet => Ok(Classifier::eegnet(seed)),
            Architecture::Fusion { d_embed } => Classifier::fusion(d_embed, seed),
        }
    }
}

/// Registers conv/dense layers by name, in forward order.
struct Builder {
    params: ParamStore,
    rng: ChaCha8Rng,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Self {
            params: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn conv(&mut self, name: &str, c_out: usize, c_in_per_group: usize, k: usize) {
        let w = he_uniform(&[c_out, c_in_per_group, k], c_in_per_group * k, &mut self.rng);
        self.params.add(alloc::format!("{}.weight", name), w);
        self.params.add(alloc::format!("{}.bias", name), Tensor::zeros(&[c_out]));
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let w = he_uniform(&[fan_in, fan_out], fan_in, &mut self.rng);
        self.params.add(alloc::format!("{}.weight", name), w);
        self.params.add(alloc::format!("{}.bias", name), Tensor::zeros(&[fan_out]));
    }

    fn eeg_branch(&mut self) {
        self.conv("eeg.spatial", SPATIAL, N_CHANNELS, 1);
        self.conv("eeg.temporal1", EEG_FEATURES, SPATIAL, TEMPORAL_K);
        self.conv("eeg.temporal2", EEG_FEATURES, EEG_FEATURES, TEMPORAL_K);
    }
}

/// A classifier and its parameters; layer slots are fixed per architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub arch: Architecture,
    pub params: ParamStore,
}

/// Forward-pass cursor over registered parameter variables.
struct Layers<'a> {
    vars: &'a [Var],
    next: usize,
}

impl Layers<'_> {
    fn take(&mut self) -> (Var, Var) {
        let pair = (self.vars[self.next], self.vars[self.next + 1]);
        self.next += 2;
        pair
    }
}

fn temporal_spec() -> Conv1dSpec {
    Conv1dSpec::new(2, TEMPORAL_K / 2)
}

impl Classifier {
    pub fn baseline_cnn(seed: u64) -> Self {
        let mut b = Builder::new(seed);
        b.eeg_branch();
        b.dense("head.hidden", EEG_FEATURES, HEAD_HIDDEN);
        b.dense("head.out", HEAD_HIDDEN, N_CLASSES);
        Self {
            arch: Architecture::BaselineCnn,
            params: b.params,
        }
    }

    pub fn fusion(d_embed: usize, seed: u64) -> Result<Self> {
        if d_embed == 0 {
            return Err(param_err!("d_embed must be at least 1"));
        }
        let mut b = Builder::new(seed);
        b.eeg_branch();
        b.conv("embed.temporal1", EMBED_FEATURES, d_embed, TEMPORAL_K);
        b.conv("embed.temporal2", EMBED_FEATURES, EMBED_FEATURES, TEMPORAL_K);
        b.dense("head.hidden", EEG_FEATURES + EMBED_FEATURES, HEAD_HIDDEN);
        b.dense("head.out", HEAD_HIDDEN, N_CLASSES);
        Ok(Self {
            arch: Architecture::Fusion { d_embed },
            params: b.params,
        })
    }

    pub fn eegnet(seed: u64) -> Self {
        let mut b = Builder::new(seed);
        b.conv("temporal", EEGNET_F1, 1, EEGNET_K1);
        b.conv("depthwise", EEGNET_F1 * EEGNET_DEPTH, N_CHANNELS, 1);
        b.conv("separable.depth", EEGNET_F2, 1, EEGNET_K2);
        b.conv("separable.point", EEGNET_F2, EEGNET_F2, 1);
        let t = EPOCH_LEN / EEGNET_POOL1 / EEGNET_POOL2;
        b.dense("classify", EEGNET_F2 * t, N_CLASSES);
        Self {
            arch: Architecture::EegNet,
            params: b.params,
        }
    }

    pub fn needs_embedding(&self) -> bool {
        matches!(self.arch, Architecture::Fusion { .. })
    }

    /// Logits `[B × 9]` for `eeg[B × 32 × 250]` and, for the fusion model,
    /// `embed[B × d × 250]`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], eeg: Var, embed: Option<Var>) -> Result<Var> {
        let s = g.value(eeg).shape().to_vec();
        if s.len() != 3 || s[1] != N_CHANNELS {
            return Err(dim_err!("eeg input must be [B x {} x T], got {:?}", N_CHANNELS, s));
        }
        if embed.is_some() != self.needs_embedding() {
            return Err(dim_err!("{} model {} an embedding input", self.arch.name(), if self.needs_embedding() { "requires" } else { "takes no" }));
        }
        let mut l = Layers { vars, next: 0 };
        match self.arch {
            Architecture::BaselineCnn => {
                let f = eeg_branch(g, &mut l, eeg)?;
                head(g, &mut l, f)
            }
            Architecture::Fusion { d_embed } => {
                let e = embed.expect("checked above");
                let es = g.value(e).shape();
                if es.len() != 3 || es[0] != s[0] || es[1] != d_embed || es[2] != s[2] {
                    return Err(dim_err!("embedding input {:?} for eeg {:?} and d_embed {}", es, s, d_embed));
                }
                let fe = eeg_branch(g, &mut l, eeg)?;
                let mut h = e;
                for _ in 0..2 {
                    let (w, b) = l.take();
                    h = g.conv1d(h, w, b, temporal_spec())?;
                    h = g.relu(h);
                }
                let fm = g.global_avg_pool(h)?;
                let f = g.concat(&[fe, fm])?;
                head(g, &mut l, f)
            }
            Architecture::EegNet => eegnet_forward(g, &mut l, eeg, s[0], s[2]),
        }
    }

    /// Logits without gradient tracking.
    pub fn logits(&self, eeg: &Tensor, embed: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|p| g.input(p.value.clone())).collect();
        let x = g.input(eeg.clone());
        let e = embed.map(|t| g.input(t.clone()));
        let out = self.forward(&mut g, &vars, x, e)?;
        Ok(g.value(out).clone())
    }

    /// Batched inference over any number of trials.
    pub fn predict(&self, eeg: &Tensor, embed: Option<&Tensor>) -> Result<Prediction> {
        let n = eeg.shape().first().copied().unwrap_or(0);
        let mut logits = Vec::with_capacity(n * N_CLASSES);
        for start in (0..n).step_by(PREDICT_CHUNK) {
            let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(n)).collect();
            let x = eeg.select_rows(&idx)?;
            let e = embed.map(|t| t.select_rows(&idx)).transpose()?;
            logits.extend_from_slice(self.logits(&x, e.as_ref())?.data());
        }
        predict_from_logits(&Tensor::new(&[n, N_CLASSES], logits)?)
    }
}

const PREDICT_CHUNK: usize = 64;

fn eeg_branch(g: &mut Graph, l: &mut Layers, x: Var) -> Result<Var> {
    let (w, b) = l.take();
    let mut h = g.conv1d(x, w, b, Conv1dSpec::new(1, 0))?;
    for _ in 0..2 {
        let (w, b) = l.take();
        h = g.conv1d(h, w, b, temporal_spec())?;
        h = g.relu(h);
    }
    g.global_avg_pool(h)
}

fn head(g: &mut Graph, l: &mut Layers, f: Var) -> Result<Var> {
    let (w, b) = l.take();
    let h = g.dense(f, w, b)?;
    let h = g.relu(h);
    let (w, b) = l.take();
    g.dense(h, w, b)
}

fn eegnet_forward(g: &mut Graph, l: &mut Layers, x: Var, bn: usize, t: usize) -> Result<Var> {
    let h = g.reshape(x, &[bn * N_CHANNELS, 1, t])?;
    let (w, b) = l.take();
    let h = g.conv1d(h, w, b, Conv1dSpec::same(EEGNET_K1))?;
    let h = g.reshape(h, &[bn, N_CHANNELS, EEGNET_F1, t])?;
    let h = g.permute(h, &[0, 2, 1, 3])?;
    let h = g.reshape(h, &[bn, EEGNET_F1 * N_CHANNELS, t])?;
    let (w, b) = l.take();
    let h = g.conv1d(h, w, b, Conv1dSpec::new(1, 0).with_groups(EEGNET_F1))?;
    let h = g.relu(h);
    let h = g.avg_pool(h, EEGNET_POOL1)?;
    let (w, b) = l.take();
    let h = g.conv1d(h, w, b, Conv1dSpec::same(EEGNET_K2).with_groups(EEGNET_F2))?;
    let (w, b) = l.take();
    let h = g.conv1d(h, w, b, Conv1dSpec::new(1, 0))?;
    let h = g.relu(h);
    let h = g.avg_pool(h, EEGNET_POOL2)?;
    let width = g.value(h).shape()[1] * g.value(h).shape()[2];
    let h = g.reshape(h, &[bn, width])?;
    let (w, b) = l.take();
    g.dense(h, w, b)
}

/// Arg-max classes and softmax probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub classes: Vec<usize>,
    /// `n × 9`.
    pub probabilities: Tensor,
}

/// Softmax per row; ties in the arg-max go to the lowest class index.
pub fn predict_from_logits(logits: &Tensor) -> Result<Prediction> {
    if logits.ndim() != 2 {
        return Err(dim_err!("logits must be 2-D, got {:?}", logits.shape()));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut classes = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n * k);
    for r in 0..n {
        let row = logits.row(r);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        classes.push(best);
        probs.extend(softmax(row));
    }
    Ok(Prediction {
        classes,
        probabilities: Tensor::new(&[n, k], probs)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Fraction of training trials held out for early stopping.
    pub val_fraction: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            seed: 0,
            val_fraction: 0.1,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(param_err!("lr must be positive and batch_size at least 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(param_err!("val_fraction {} outside [0, 1)", self.val_fraction));
        }
        Ok(())
    }
}

/// Training trials; `embed` is required exactly for fusion models.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierData<'a> {
    pub eeg: &'a Tensor,
    pub embed: Option<&'a Tensor>,
    pub labels: &'a [usize],
}

impl ClassifierData<'_> {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Option<Tensor>, Vec<usize>)> {
        Ok((
            self.eeg.select_rows(idx)?,
            self.embed.map(|e| e.select_rows(idx)).transpose()?,
            idx.iter().map(|&i| self.labels[i]).collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    /// Empty when no trials were held out.
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

fn batch_loss(model: &Classifier, g: &mut Graph, vars: &[Var], batch: &(Tensor, Option<Tensor>, Vec<usize>)) -> Result<Var> {
    let x = g.input(batch.0.clone());
    let e = batch.1.as_ref().map(|t| g.input(t.clone()));
    let logits = model.forward(g, vars, x, e)?;
    g.softmax_cross_entropy(logits, &batch.2)
}

/// Mean cross-entropy over `idx` without gradient tracking.
fn evaluate_loss(model: &Classifier, data: &ClassifierData, idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(PREDICT_CHUNK) {
        let batch = data.batch(chunk)?;
        let mut g = Graph::new();
        let vars: Vec<Var> = model.params.iter().map(|p| g.input(p.value.clone())).collect();
        let loss = batch_loss(model, &mut g, &vars, &batch)?;
        total += g.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Mini-batch Adam with a seeded hold-out for early stopping; the best
/// validation parameters are restored at the end.
pub fn train_classifier(model: &mut Classifier, data: &ClassifierData, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let n = data.len();
    if data.eeg.shape().first() != Some(&n) || data.embed.is_some_and(|e| e.shape().first() != Some(&n)) {
        return Err(dim_err!("inputs and {} labels disagree on trial count", n));
    }
    if data.embed.is_some() != model.needs_embedding() {
        return Err(dim_err!("embedding input present for {} model", model.arch.name()));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= N_CLASSES) {
        return Err(Error::Label {
            label: bad,
            classes: N_CLASSES,
        });
    }
    let mut history = TrainHistory::default();
    if cfg.max_epochs == 0 || n == 0 {
        return Ok(history);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = libm::round(cfg.val_fraction * n as f64) as usize;
    let n_val = if n - n_val == 0 { 0 } else { n_val };
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();
    let mut adam = AdamState::new(model.params.params(), cfg.lr);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        train.shuffle(&mut rng);
        let snapshot = model.params.clone();
        let mut total = 0.0;
        for (bi, chunk) in train.chunks(cfg.batch_size).enumerate() {
            let batch = data.batch(chunk)?;
            let mut g = Graph::new();
            let vars = model.params.register(&mut g);
            let loss = batch_loss(model, &mut g, &vars, &batch)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                model.params = snapshot;
                return Err(Error::Diverged {
                    step: epoch * train.len().div_ceil(cfg.batch_size) + bi,
                    last_finite_loss: history.train_loss.last().copied(),
                });
            }
            g.backward(loss)?;
            model.params.zero_grad();
            model.params.accumulate_grads(&g, &vars);
            adam_step(model.params.params_mut(), &mut adam)?;
            total += value * chunk.len() as f64;
        }
        history.train_loss.push(total / train.len() as f64);
        if val.is_empty() {
            continue;
        }
        let v = evaluate_loss(model, data, val)?;
        history.val_loss.push(v);
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, epoch, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    match best {
        Some((_, epoch, params)) => {
            model.params = params;
            history.best_epoch = Some(epoch);
        }
        None => history.best_epoch = Some(history.train_loss.len() - 1),
    }
    Ok(history)
}

/// Parameter names and shapes, for checkpoint manifests.
pub fn layer_shapes(model: &Classifier) -> Vec<(String, Vec<usize>)> {
    model.params.iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect()
}
