//! Contrastive embeddings of epoched EEG conditioned on time and class labels.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Conv1dSpec, Graph, Var};
use crate::dsp::EpochSet;
use crate::error::{contract_err, dim_err, param_err, Error, Result};
use crate::nn::{he_uniform, ParamStore};
use crate::optim::{adam_step, AdamState};
use crate::session::{N_CLASSES, N_KINEMATICS};
use crate::tensor::Tensor;

/// Embedding widths evaluated by the experiment grid.
pub const SUPPORTED_DIMS: [usize; 5] = [2, 4, 8, 12, 16];
const HIDDEN: usize = 32;
const KERNEL: usize = 3;
const CONV_LAYERS: usize = 3;
const MAX_RESAMPLES: usize = 1000;

/// Per-time-point side information, flattened trial-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryVariables {
    /// `N × 4`: x, y, pressure, velocity.
    pub continuous: Tensor,
    pub discrete: Vec<usize>,
    /// Time points per trial; point `i` belongs to trial `i / trial_len`.
    pub trial_len: usize,
}

impl AuxiliaryVariables {
    pub fn new(continuous: Tensor, discrete: Vec<usize>, trial_len: usize) -> Result<Self> {
        let n = discrete.len();
        if continuous.shape() != [n, N_KINEMATICS] {
            return Err(dim_err!("continuous {:?} for {} time points", continuous.shape(), n));
        }
        if trial_len == 0 || n % trial_len != 0 {
            return Err(dim_err!("{} time points do not split into trials of {}", n, trial_len));
        }
        if let Some(&bad) = discrete.iter().find(|&&l| l >= N_CLASSES) {
            return Err(Error::Label {
                label: bad,
                classes: N_CLASSES,
            });
        }
        if !continuous.is_finite() {
            return Err(Error::NonFinite("continuous auxiliary variables".into()));
        }
        Ok(Self {
            continuous,
            discrete,
            trial_len,
        })
    }

    /// Transposes each trial's `4 × T` trajectory to `T × 4` rows and repeats
    /// the trial label over its time points.
    pub fn from_epoch_set(set: &EpochSet) -> Result<Self> {
        let t = set.trajectories.shape()[2];
        let mut cont = Vec::with_capacity(set.len() * t * N_KINEMATICS);
        let mut disc = Vec::with_capacity(set.len() * t);
        for (i, &label) in set.labels.iter().enumerate() {
            let traj = set.trajectories.row(i);
            for s in 0..t {
                for k in 0..N_KINEMATICS {
                    cont.push(traj[k * t + s]);
                }
                disc.push(label);
            }
        }
        Self::new(Tensor::new(&[disc.len(), N_KINEMATICS], cont)?, disc, t)
    }

    pub fn len(&self) -> usize {
        self.discrete.len()
    }

    pub fn is_empty(&self) -> bool {
        self.discrete.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CebraConfig {
    pub d_embed: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Positive-pair offset bound and encoder receptive window, in samples.
    pub offset_frames: usize,
    pub temperature: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for CebraConfig {
    fn default() -> Self {
        Self {
            d_embed: 16,
            batch_size: 1024,
            lr: 2e-4,
            offset_frames: 10,
            temperature: 1.0,
            steps: 5000,
            seed: 0,
        }
    }
}

impl CebraConfig {
    pub fn validate(&self, trial_len: usize) -> Result<()> {
        if self.d_embed == 0 || self.batch_size == 0 {
            return Err(param_err!("d_embed and batch_size must be positive"));
        }
        if self.offset_frames < 2 * CONV_LAYERS + 1 || self.offset_frames >= trial_len {
            return Err(param_err!(
                "offset_frames {} must lie in [{}, {})",
                self.offset_frames,
                2 * CONV_LAYERS + 1,
                trial_len
            ));
        }
        if !(self.temperature > 0.0) || !(self.lr > 0.0) {
            return Err(param_err!("temperature and lr must be positive"));
        }
        Ok(())
    }
}

/// Three valid temporal convolutions over a short window, a dense head and a
/// projection onto the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub params: ParamStore,
    pub n_channels: usize,
    pub d_embed: usize,
    pub window: usize,
}

impl Encoder {
    pub fn new(n_channels: usize, d_embed: usize, window: usize, seed: u64) -> Result<Self> {
        if n_channels == 0 || d_embed == 0 || window < 2 * CONV_LAYERS + 1 {
            return Err(param_err!(
                "encoder needs channels, d_embed > 0 and window >= {}",
                2 * CONV_LAYERS + 1
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let widths = [n_channels, HIDDEN, HIDDEN, d_embed];
        for l in 0..CONV_LAYERS {
            let (ci, co) = (widths[l], widths[l + 1]);
            params.add(alloc::format!("conv{}.weight", l + 1), he_uniform(&[co, ci, KERNEL], ci * KERNEL, &mut rng));
            params.add(alloc::format!("conv{}.bias", l + 1), Tensor::zeros(&[co]));
        }
        let flat = d_embed * (window - 2 * CONV_LAYERS);
        params.add("head.weight", he_uniform(&[flat, d_embed], flat, &mut rng));
        params.add("head.bias", Tensor::zeros(&[d_embed]));
        Ok(Self {
            params,
            n_channels,
            d_embed,
            window,
        })
    }

    fn conv_stack(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..CONV_LAYERS {
            h = g.conv1d(h, vars[2 * l], vars[2 * l + 1], Conv1dSpec::new(1, 0))?;
            h = g.relu(h);
        }
        Ok(h)
    }

    /// `x[B × C × window]` to unit-norm `[B × d_embed]`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let s = g.value(x).shape();
        if s.len() != 3 || s[1] != self.n_channels || s[2] != self.window {
            return Err(dim_err!(
                "encoder expects [B x {} x {}], got {:?}",
                self.n_channels,
                self.window,
                s
            ));
        }
        let bn = s[0];
        let h = self.conv_stack(g, vars, x)?;
        let flat = g.reshape(h, &[bn, self.d_embed * (self.window - 2 * CONV_LAYERS)])?;
        let z = g.dense(flat, vars[2 * CONV_LAYERS], vars[2 * CONV_LAYERS + 1])?;
        g.l2_normalize(z)
    }

    /// Embeds a batch of windows without recording gradients.
    pub fn encode_windows(&self, windows: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|p| g.input(p.value.clone())).collect();
        let x = g.input(windows.clone());
        let z = self.forward(&mut g, &vars, x)?;
        Ok(g.value(z).clone())
    }

    /// The dense head as a convolution kernel `[d × d × (window − 6)]`.
    fn head_as_kernel(&self) -> Tensor {
        let tail = self.window - 2 * CONV_LAYERS;
        let d = self.d_embed;
        let w = self.params.get(2 * CONV_LAYERS).value.data();
        let mut k = vec![0.0; d * d * tail];
        for o in 0..d {
            for c in 0..d {
                for j in 0..tail {
                    k[(o * d + c) * tail + j] = w[(c * tail + j) * d + o];
                }
            }
        }
        Tensor::new(&[d, d, tail], k).expect("kernel shape")
    }
}

/// Copies the causal window ending at flat time point `point` into `out`,
/// repeating the trial's first sample where the window starts before it.
fn write_window(epochs: &Tensor, trial_len: usize, window: usize, point: usize, out: &mut [f64]) {
    let c = epochs.shape()[1];
    let (trial, t) = (point / trial_len, point % trial_len);
    let src = epochs.row(trial);
    for ch in 0..c {
        let row = &src[ch * trial_len..(ch + 1) * trial_len];
        for j in 0..window {
            let s = (t + j + 1).saturating_sub(window);
            out[ch * window + j] = row[s];
        }
    }
}

/// Gathers `[points.len() × C × window]` causal windows from `n × C × T` epochs.
pub fn gather_windows(epochs: &Tensor, points: &[usize], window: usize) -> Result<Tensor> {
    if epochs.ndim() != 3 {
        return Err(dim_err!("epochs must be n x C x T, got {:?}", epochs.shape()));
    }
    let (n, c, t) = (epochs.shape()[0], epochs.shape()[1], epochs.shape()[2]);
    let mut data = vec![0.0; points.len() * c * window];
    for (i, &p) in points.iter().enumerate() {
        if p >= n * t {
            return Err(dim_err!("time point {} outside {} points", p, n * t));
        }
        write_window(epochs, t, window, p, &mut data[i * c * window..(i + 1) * c * window]);
    }
    Tensor::new(&[points.len(), c, window], data)
}

/// Flat time-point indices of one contrastive batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    /// Shared by every anchor in the batch.
    pub negatives: Vec<usize>,
}

/// Anchors uniform over all points; each positive uniform over the other
/// points of the same trial and label within `offset_frames`; negatives
/// uniform with replacement, label-agnostic.
pub fn sample_contrastive_batch(aux: &AuxiliaryVariables, cfg: &CebraConfig, rng: &mut ChaCha8Rng) -> Result<ContrastiveBatch> {
    let n = aux.len();
    let b = cfg.batch_size;
    if b == 0 || b > n {
        return Err(param_err!("batch size {} for {} time points", b, n));
    }
    let tl = aux.trial_len;
    let off = cfg.offset_frames;
    let mut anchors = Vec::with_capacity(b);
    let mut positives = Vec::with_capacity(b);
    let mut candidates = Vec::with_capacity(2 * off);
    let mut resamples = 0;
    while anchors.len() < b {
        let a = rng.random_range(0..n);
        let (trial, t) = (a / tl, a % tl);
        candidates.clear();
        let lo = t.saturating_sub(off);
        let hi = (t + off).min(tl - 1);
        for s in lo..=hi {
            let j = trial * tl + s;
            if s != t && aux.discrete[j] == aux.discrete[a] {
                candidates.push(j);
            }
        }
        if candidates.is_empty() {
            resamples += 1;
            if resamples > MAX_RESAMPLES {
                return Err(contract_err!("no anchor with a valid positive after {} draws", MAX_RESAMPLES));
            }
            continue;
        }
        anchors.push(a);
        positives.push(candidates[rng.random_range(0..candidates.len())]);
    }
    let negatives = (0..b).map(|_| rng.random_range(0..n)).collect();
    Ok(ContrastiveBatch {
        anchors,
        positives,
        negatives,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedEncoder {
    pub encoder: Encoder,
    pub config: CebraConfig,
    pub losses: Vec<f64>,
}

/// Adam on the InfoNCE objective for `cfg.steps` sampled batches.
pub fn train_cebra(epochs: &Tensor, aux: &AuxiliaryVariables, cfg: &CebraConfig) -> Result<TrainedEncoder> {
    if epochs.ndim() != 3 {
        return Err(dim_err!("epochs must be n x C x T, got {:?}", epochs.shape()));
    }
    let (n, c, t) = (epochs.shape()[0], epochs.shape()[1], epochs.shape()[2]);
    if aux.trial_len != t || aux.len() != n * t {
        return Err(dim_err!("auxiliary variables cover {} points, epochs {}x{}", aux.len(), n, t));
    }
    cfg.validate(t)?;
    let mut encoder = Encoder::new(c, cfg.d_embed, cfg.offset_frames, cfg.seed)?;
    let mut adam = AdamState::new(encoder.params.params(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_cebb);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = sample_contrastive_batch(aux, cfg, &mut rng)?;
        let w = cfg.offset_frames;
        let mut g = Graph::new();
        let vars = encoder.params.register(&mut g);
        let xa = g.input(gather_windows(epochs, &batch.anchors, w)?);
        let xp = g.input(gather_windows(epochs, &batch.positives, w)?);
        let xn = g.input(gather_windows(epochs, &batch.negatives, w)?);
        let za = encoder.forward(&mut g, &vars, xa)?;
        let zp = encoder.forward(&mut g, &vars, xp)?;
        let zn = encoder.forward(&mut g, &vars, xn)?;
        let loss = g.infonce(za, zp, zn, cfg.temperature)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                step,
                last_finite_loss: losses.last().copied(),
            });
        }
        g.backward(loss)?;
        encoder.params.zero_grad();
        encoder.params.accumulate_grads(&g, &vars);
        adam_step(encoder.params.params_mut(), &mut adam)?;
        if !encoder.params.all_finite() {
            return Err(Error::Diverged {
                step,
                last_finite_loss: Some(value),
            });
        }
        losses.push(value);
    }
    Ok(TrainedEncoder {
        encoder,
        config: cfg.clone(),
        losses,
    })
}

/// Embeddings of every time point of every trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `(n·T) × d`, trial-major.
    pub matrix: Tensor,
    /// `n × d × T`, the classifier view.
    pub trial_major: Tensor,
}

/// Encodes the causal window at every time point, sliding the encoder along
/// each left-padded trial.
pub fn encode_dataset(encoder: &Encoder, epochs: &Tensor) -> Result<Embedding> {
    if epochs.ndim() != 3 || epochs.shape()[1] != encoder.n_channels {
        return Err(dim_err!("epochs {:?} for a {}-channel encoder", epochs.shape(), encoder.n_channels));
    }
    let (n, c, t) = (epochs.shape()[0], epochs.shape()[1], epochs.shape()[2]);
    let (w, d) = (encoder.window, encoder.d_embed);
    let padded_len = t + w - 1;
    let mut trial_major = Vec::with_capacity(n * d * t);
    let head = encoder.head_as_kernel();
    let chunk = 16;
    for start in (0..n).step_by(chunk) {
        let m = chunk.min(n - start);
        let mut buf = Vec::with_capacity(m * c * padded_len);
        for i in start..start + m {
            let trial = epochs.row(i);
            for ch in 0..c {
                let row = &trial[ch * t..(ch + 1) * t];
                buf.extend(core::iter::repeat_n(row[0], w - 1));
                buf.extend_from_slice(row);
            }
        }
        let mut g = Graph::new();
        let vars: Vec<Var> = encoder.params.iter().map(|p| g.input(p.value.clone())).collect();
        let x = g.input(Tensor::new(&[m, c, padded_len], buf)?);
        let h = encoder.conv_stack(&mut g, &vars, x)?;
        let hw = g.input(head.clone());
        let z = g.conv1d(h, hw, vars[2 * CONV_LAYERS + 1], Conv1dSpec::new(1, 0))?;
        let z = g.value(z).data();
        for i in 0..m {
            let block = &z[i * d * t..(i + 1) * d * t];
            let mut out = block.to_vec();
            for s in 0..t {
                let norm = libm::sqrt((0..d).map(|k| block[k * t + s] * block[k * t + s]).sum::<f64>());
                let norm = if norm > 0.0 { norm } else { 1.0 };
                for k in 0..d {
                    out[k * t + s] = block[k * t + s] / norm;
                }
            }
            trial_major.extend(out);
        }
    }
    let mut matrix = vec![0.0; n * t * d];
    for i in 0..n {
        for k in 0..d {
            for s in 0..t {
                matrix[(i * t + s) * d + k] = trial_major[(i * d + k) * t + s];
            }
        }
    }
    Ok(Embedding {
        matrix: Tensor::new(&[n * t, d], matrix)?,
        trial_major: Tensor::new(&[n, d, t], trial_major)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aux_for(labels: &[usize], t: usize) -> AuxiliaryVariables {
        let disc: Vec<usize> = labels.iter().flat_map(|&l| core::iter::repeat_n(l, t)).collect();
        AuxiliaryVariables::new(Tensor::zeros(&[disc.len(), 4]), disc, t).unwrap()
    }

    fn random_epochs(n: usize, c: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[n, c, t], (0..n * c * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn positives_stay_within_offset_and_trial() {
        let aux = aux_for(&[3], 250);
        let cfg = CebraConfig {
            batch_size: 200,
            ..CebraConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_contrastive_batch(&aux, &cfg, &mut rng).unwrap();
        for (&a, &p) in b.anchors.iter().zip(&b.positives) {
            assert!(a.abs_diff(p) <= 10 && a != p);
        }
    }

    #[test]
    fn positives_never_cross_trials() {
        let aux = aux_for(&[0, 1], 250);
        let cfg = CebraConfig {
            batch_size: 500,
            ..CebraConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = sample_contrastive_batch(&aux, &cfg, &mut rng).unwrap();
        for (&a, &p) in b.anchors.iter().zip(&b.positives) {
            assert_eq!(a / 250, p / 250);
        }
    }

    #[test]
    fn full_batch_on_nine_thousand_points() {
        let aux = aux_for(&[0; 36], 250);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = sample_contrastive_batch(&aux, &CebraConfig::default(), &mut rng).unwrap();
        assert_eq!(aux.len(), 9000);
        assert_eq!((b.anchors.len(), b.positives.len(), b.negatives.len()), (1024, 1024, 1024));
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let aux = aux_for(&[0], 250);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_contrastive_batch(&aux, &CebraConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn encoder_rows_are_unit_norm_and_deterministic() {
        let enc = Encoder::new(32, 2, 10, 9).unwrap();
        let x = random_epochs(5, 32, 10, 4);
        let z = enc.encode_windows(&x).unwrap();
        assert_eq!(z.shape(), &[5, 2]);
        for r in 0..5 {
            let n: f64 = z.row(r).iter().map(|v| v * v).sum();
            assert!((libm::sqrt(n) - 1.0).abs() < 1e-9);
        }
        assert_eq!(z, enc.encode_windows(&x).unwrap());
    }

    #[test]
    fn sliding_encoding_matches_window_encoding() {
        let enc = Encoder::new(3, 4, 10, 5).unwrap();
        let epochs = random_epochs(2, 3, 30, 6);
        let emb = encode_dataset(&enc, &epochs).unwrap();
        let points: Vec<usize> = (0..60).collect();
        let direct = enc.encode_windows(&gather_windows(&epochs, &points, 10).unwrap()).unwrap();
        for (a, b) in emb.matrix.data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn four_trials_give_thousand_rows() {
        let enc = Encoder::new(32, 8, 10, 1).unwrap();
        let emb = encode_dataset(&enc, &random_epochs(4, 32, 250, 2)).unwrap();
        assert_eq!(emb.matrix.shape(), &[1000, 8]);
        assert_eq!(emb.trial_major.shape(), &[4, 8, 250]);
    }

    #[test]
    fn constant_trial_embeds_constantly() {
        let enc = Encoder::new(4, 3, 10, 1).unwrap();
        let epochs = Tensor::full(&[1, 4, 50], 0.7);
        let emb = encode_dataset(&enc, &epochs).unwrap();
        let first = emb.matrix.row(0).to_vec();
        for r in 1..50 {
            assert_eq!(emb.matrix.row(r), &first[..]);
        }
    }

    #[test]
    fn zero_steps_return_initialization() {
        let epochs = random_epochs(2, 4, 40, 3);
        let aux = aux_for(&[0, 1], 40);
        let cfg = CebraConfig {
            d_embed: 2,
            batch_size: 16,
            steps: 0,
            seed: 11,
            ..CebraConfig::default()
        };
        let trained = train_cebra(&epochs, &aux, &cfg).unwrap();
        assert!(trained.losses.is_empty());
        assert_eq!(trained.encoder, Encoder::new(4, 2, 10, 11).unwrap());
    }
}
