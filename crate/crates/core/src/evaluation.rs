//! Cross-validation, classification metrics, projections and result tables.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::FoldAssignment;
use crate::error::{contract_err, dim_err, param_err, Error, Result};
use crate::linalg::{gemm, solve, svd_right};
use crate::seed::fingerprint;
use crate::tensor::Tensor;

/// Accuracy and macro-averaged F1 over `n_classes` classes.
///
/// A class with no predictions and no instances contributes an F1 of 0.
pub fn compute_metrics(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<(f64, f64)> {
    if predictions.len() != labels.len() {
        return Err(dim_err!("{} predictions for {} labels", predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(contract_err!("metrics of an empty set"));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(Error::Label {
            label: bad,
            classes: n_classes,
        });
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fneg = vec![0usize; n_classes];
    let mut correct = 0;
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fneg[l] += 1;
        }
    }
    let f1_sum: f64 = (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok((correct as f64 / labels.len() as f64, f1_sum / n_classes as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Per-fold metrics with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub per_fold: Vec<FoldMetrics>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

/// Mean and population (divide-by-n) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

impl FoldReport {
    pub fn from_folds(per_fold: Vec<FoldMetrics>) -> Result<Self> {
        if per_fold.is_empty() {
            return Err(contract_err!("report needs at least one fold"));
        }
        let acc: Vec<f64> = per_fold.iter().map(|m| m.accuracy).collect();
        let f1: Vec<f64> = per_fold.iter().map(|m| m.macro_f1).collect();
        let (mean_acc, std_acc) = mean_std(&acc);
        let (mean_f1, std_f1) = mean_std(&f1);
        Ok(Self {
            per_fold,
            mean_acc,
            std_acc,
            mean_f1,
            std_f1,
        })
    }
}

/// One train/test split of a cross-validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvRound {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn cv_rounds(folds: &FoldAssignment) -> Vec<CvRound> {
    (0..folds.n_folds)
        .map(|k| CvRound {
            fold: k,
            train: folds.train_indices(k),
            test: folds.test_indices(k),
        })
        .collect()
}

/// Fails if any test trial appears in training, by index or by identical content.
pub fn check_leakage(round: &CvRound, epochs: &Tensor) -> Result<()> {
    let n = epochs.shape().first().copied().unwrap_or(0);
    if let Some(&bad) = round.train.iter().chain(&round.test).find(|&&i| i >= n) {
        return Err(dim_err!("trial index {} outside {} epochs", bad, n));
    }
    let mut in_train = vec![false; n];
    for &i in &round.train {
        in_train[i] = true;
    }
    if let Some(&i) = round.test.iter().find(|&&i| in_train[i]) {
        return Err(Error::Leakage(format!("fold {}: test trial {} is also a training trial", round.fold, i)));
    }
    let mut seen = BTreeMap::new();
    for &i in &round.train {
        seen.insert(fingerprint(epochs.row(i)), i);
    }
    for &i in &round.test {
        if let Some(&j) = seen.get(&fingerprint(epochs.row(i))) {
            if epochs.row(i) == epochs.row(j) {
                return Err(Error::Leakage(format!(
                    "fold {}: test trial {} duplicates training trial {}",
                    round.fold, i, j
                )));
            }
        }
    }
    Ok(())
}

/// Runs `evaluate` on every round after the leakage check; `evaluate`
/// returns one prediction per test trial.
pub fn run_cv<F>(rounds: &[CvRound], epochs: &Tensor, labels: &[usize], n_classes: usize, mut evaluate: F) -> Result<FoldReport>
where
    F: FnMut(&CvRound) -> Result<Vec<usize>>,
{
    if rounds.len() < 2 {
        return Err(contract_err!("cross-validation needs at least 2 rounds, got {}", rounds.len()));
    }
    if epochs.shape().first() != Some(&labels.len()) {
        return Err(dim_err!("{} labels for epochs {:?}", labels.len(), epochs.shape()));
    }
    let mut per_fold = Vec::with_capacity(rounds.len());
    for round in rounds {
        check_leakage(round, epochs)?;
        let preds = evaluate(round)?;
        let truth: Vec<usize> = round.test.iter().map(|&i| labels[i]).collect();
        let (accuracy, macro_f1) = compute_metrics(&preds, &truth, n_classes)?;
        per_fold.push(FoldMetrics { accuracy, macro_f1 });
    }
    FoldReport::from_folds(per_fold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

impl ProjectionMethod {
    pub fn name(self) -> &'static str {
        match self {
            ProjectionMethod::Pca => "pca",
            ProjectionMethod::Tsne => "tsne",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionMeta {
    ExplainedVariance(Vec<f64>),
    FinalKl(f64),
}

/// Two-dimensional coordinates for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub method: ProjectionMethod,
    pub coords: Tensor,
    pub meta: ProjectionMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k × D`, orthonormal rows.
    pub components: Tensor,
    /// Variance along each component, descending.
    pub explained_variance: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    /// `N × k`.
    pub coords: Tensor,
}

impl Pca {
    /// Maps projected coordinates back to the input space.
    pub fn reconstruct(&self) -> Tensor {
        let (n, k) = (self.coords.shape()[0], self.coords.shape()[1]);
        let d = self.mean.len();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(&self.mean);
        }
        gemm(n, k, d, 1.0, self.coords.data(), false, self.components.data(), false, 1.0, &mut out);
        Tensor::new(&[n, d], out).expect("reconstruction shape")
    }

    pub fn projection(&self) -> ProjectionResult {
        let n = self.coords.shape()[0];
        let k = self.coords.shape()[1].min(2);
        let mut xy = vec![0.0; n * 2];
        for i in 0..n {
            for j in 0..k {
                xy[i * 2 + j] = self.coords.row(i)[j];
            }
        }
        ProjectionResult {
            method: ProjectionMethod::Pca,
            coords: Tensor::new(&[n, 2], xy).expect("n x 2"),
            meta: ProjectionMeta::ExplainedVariance(self.explained_ratio.clone()),
        }
    }
}

/// Principal components from the SVD of the centered data.
pub fn pca_project(x: &Tensor, k: usize) -> Result<Pca> {
    if x.ndim() != 2 {
        return Err(dim_err!("pca expects N x D, got {:?}", x.shape()));
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if n < 2 {
        return Err(contract_err!("pca needs at least 2 rows, got {}", n));
    }
    if k == 0 || k > n.min(d) {
        return Err(param_err!("k = {} outside 1..={}", k, n.min(d)));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = x.data().to_vec();
    for row in centered.chunks_mut(d) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let (sv, vt) = svd_right(&centered, n, d);
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let variance: Vec<f64> = sv.iter().map(|s| s * s / (n - 1) as f64).collect();
    let components = vt[..k * d].to_vec();
    let mut coords = vec![0.0; n * k];
    gemm(n, d, k, 1.0, &centered, false, &components, true, 0.0, &mut coords);
    Ok(Pca {
        mean,
        components: Tensor::new(&[k, d], components)?,
        explained_variance: variance[..k].to_vec(),
        explained_ratio: sv[..k].iter().map(|s| if total > 0.0 { s * s / total } else { 0.0 }).collect(),
        coords: Tensor::new(&[n, k], coords)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub exaggeration: f64,
    /// Iterations with exaggerated affinities and momentum 0.5.
    pub early_iters: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iters: 1000,
            seed: 0,
            learning_rate: 200.0,
            exaggeration: 12.0,
            early_iters: 250,
        }
    }
}

pub const TSNE_MAX_POINTS: usize = 5000;
const PERPLEXITY_TOL: f64 = 1e-5;
const BISECTION_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Tsne {
    pub projection: ProjectionResult,
    /// KL(P‖Q) after every iteration.
    pub kl_history: Vec<f64>,
    /// Realized perplexity of every conditional distribution.
    pub perplexities: Vec<f64>,
}

fn squared_distances(x: &Tensor) -> Vec<f64> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut g = vec![0.0; n * n];
    gemm(n, d, n, 1.0, x.data(), false, x.data(), true, 0.0, &mut g);
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = if i == j { 0.0 } else { (g[i * n + i] + g[j * n + j] - 2.0 * g[i * n + j]).max(0.0) };
        }
    }
    out
}

/// Conditional distribution of row `i` at log-precision `log_beta` on
/// shifted distances; returns its perplexity.
fn conditional_row(dist: &[f64], i: usize, log_beta: f64, out: &mut [f64]) -> f64 {
    let beta = libm::exp(log_beta);
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, p)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *p = 0.0;
            continue;
        }
        *p = libm::exp(-beta * d);
        z += *p;
        weighted += d * *p;
    }
    for p in out.iter_mut() {
        *p /= z;
    }
    libm::exp(libm::log(z) + beta * weighted / z)
}

/// Row-stochastic conditional affinities matched to `perplexity` by
/// bisection on the log precision.
pub fn conditional_affinities(x: &Tensor, perplexity: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.shape()[0];
    let dist = squared_distances(x);
    let mut p = vec![0.0; n * n];
    let mut realized = Vec::with_capacity(n);
    let mut row = vec![0.0; n];
    for i in 0..n {
        let src = &dist[i * n..(i + 1) * n];
        let dmin = src.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).fold(f64::INFINITY, f64::min);
        let others: Vec<f64> = src.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d - dmin).collect();
        let scale = others.iter().sum::<f64>() / others.len() as f64;
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let shifted: Vec<f64> = (0..n).map(|j| if j == i { 0.0 } else { (src[j] - dmin) / scale }).collect();
        let (mut lo, mut hi) = (-40.0, 40.0);
        let mut perp = 0.0;
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            perp = conditional_row(&shifted, i, mid, &mut row);
            if (perp - perplexity).abs() < PERPLEXITY_TOL {
                break;
            }
            if perp > perplexity {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if !perp.is_finite() {
            return Err(Error::NonFinite(format!("perplexity of point {}", i)));
        }
        realized.push(perp);
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    Ok((p, realized))
}

/// Symmetrized joint affinities `(P + Pᵀ) / 2N`.
pub fn joint_affinities(cond: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-300);
            }
        }
    }
    p
}

fn student_kernel(y: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    (num, z)
}

/// KL(P‖Q) of joint affinities `p` and 2-D map `y` (`n × 2`, row-major).
pub fn tsne_kl(p: &[f64], y: &[f64], n: usize) -> f64 {
    let (num, z) = student_kernel(y, n);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                kl += pij * libm::log(pij / (num[i * n + j] / z));
            }
        }
    }
    kl
}

/// Gradient of KL(`scale`·P‖Q) with respect to `y`.
pub fn tsne_kl_gradient(p: &[f64], y: &[f64], n: usize, scale: f64) -> Vec<f64> {
    let (num, z) = student_kernel(y, n);
    let mut grad = vec![0.0; 2 * n];
    for i in 0..n {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = (scale * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
            gx += w * (y[2 * i] - y[2 * j]);
            gy += w * (y[2 * i + 1] - y[2 * j + 1]);
        }
        grad[2 * i] = 4.0 * gx;
        grad[2 * i + 1] = 4.0 * gy;
    }
    grad
}

/// Exact t-SNE to two dimensions with early exaggeration, momentum and gains.
pub fn tsne_project(x: &Tensor, cfg: &TsneConfig) -> Result<Tsne> {
    if x.ndim() != 2 {
        return Err(dim_err!("t-SNE expects N x D, got {:?}", x.shape()));
    }
    let n = x.shape()[0];
    if n > TSNE_MAX_POINTS {
        return Err(param_err!("exact t-SNE limited to {} points, got {}", TSNE_MAX_POINTS, n));
    }
    if !(cfg.perplexity >= 5.0) || n < 4 || cfg.perplexity > (n - 1) as f64 / 3.0 {
        return Err(param_err!("perplexity {} infeasible for {} points", cfg.perplexity, n));
    }
    let (cond, perplexities) = conditional_affinities(x, cfg.perplexity)?;
    let p = joint_affinities(&cond, n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut kl_history = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let early = it < cfg.early_iters;
        let momentum = if early { 0.5 } else { 0.8 };
        let grad = tsne_kl_gradient(&p, &y, n, if early { cfg.exaggeration } else { 1.0 });
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) { gains[k] + 0.2 } else { gains[k] * 0.8 };
            gains[k] = gains[k].max(0.01);
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for axis in 0..2 {
            let m = (0..n).map(|i| y[2 * i + axis]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + axis] -= m);
        }
        kl_history.push(tsne_kl(&p, &y, n));
    }
    let kl = kl_history.last().copied().unwrap_or_else(|| tsne_kl(&p, &y, n));
    Ok(Tsne {
        projection: ProjectionResult {
            method: ProjectionMethod::Tsne,
            coords: Tensor::new(&[n, 2], y)?,
            meta: ProjectionMeta::FinalKl(kl.max(0.0)),
        },
        kl_history,
        perplexities,
    })
}

/// Mean silhouette coefficient under Euclidean distance.
pub fn silhouette(x: &Tensor, labels: &[usize]) -> Result<f64> {
    let n = x.shape()[0];
    if labels.len() != n || n < 2 {
        return Err(dim_err!("{} labels for {} points", labels.len(), n));
    }
    let dist = squared_distances(x);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += libm::sqrt(dist[i * n + j]);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    Ok(total / n as f64)
}

/// Averages each embedding dimension of `n × d × T` trials over `bins`
/// equal time segments, giving `n × (d·bins)` probe features.
pub fn binned_features(trial_major: &Tensor, bins: usize) -> Result<Tensor> {
    if trial_major.ndim() != 3 || bins == 0 || trial_major.shape()[2] < bins {
        return Err(dim_err!("cannot bin {:?} into {} segments", trial_major.shape(), bins));
    }
    let (n, d, t) = (trial_major.shape()[0], trial_major.shape()[1], trial_major.shape()[2]);
    let mut out = Vec::with_capacity(n * d * bins);
    for i in 0..n {
        for series in trial_major.row(i).chunks(t) {
            for b in 0..bins {
                let seg = &series[b * t / bins..(b + 1) * t / bins];
                out.push(seg.iter().sum::<f64>() / seg.len() as f64);
            }
        }
    }
    Tensor::new(&[n, d * bins], out)
}

/// Ridge-regression classifier on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `(F + 1) × classes`, bias last.
    weights: Vec<f64>,
    n_classes: usize,
}

impl LinearProbe {
    pub fn fit(x: &Tensor, labels: &[usize], n_classes: usize, ridge: f64) -> Result<Self> {
        if x.ndim() != 2 || x.shape()[0] != labels.len() || labels.is_empty() {
            return Err(dim_err!("probe features {:?} for {} labels", x.shape(), labels.len()));
        }
        let (n, f) = (x.shape()[0], x.shape()[1]);
        let mut mean = vec![0.0; f];
        let mut scale = vec![0.0; f];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v / n as f64;
            }
        }
        for i in 0..n {
            for ((s, v), m) in scale.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        scale.iter_mut().for_each(|s| *s = if *s > 1e-24 { 1.0 / libm::sqrt(*s) } else { 0.0 });
        let mut probe = Self {
            mean,
            scale,
            weights: Vec::new(),
            n_classes,
        };
        let a = probe.design(x);
        let fa = f + 1;
        let mut gram = vec![0.0; fa * fa];
        gemm(fa, n, fa, 1.0, &a, true, &a, false, 0.0, &mut gram);
        for j in 0..f {
            gram[j * fa + j] += ridge;
        }
        let mut onehot = vec![0.0; n * n_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= n_classes {
                return Err(Error::Label {
                    label: l,
                    classes: n_classes,
                });
            }
            onehot[i * n_classes + l] = 1.0;
        }
        let mut rhs = vec![0.0; fa * n_classes];
        gemm(fa, n, n_classes, 1.0, &a, true, &onehot, false, 0.0, &mut rhs);
        probe.weights = solve(&gram, fa, &rhs, n_classes)?;
        Ok(probe)
    }

    fn design(&self, x: &Tensor) -> Vec<f64> {
        let f = self.mean.len();
        let mut a = Vec::with_capacity(x.shape()[0] * (f + 1));
        for i in 0..x.shape()[0] {
            for ((v, m), s) in x.row(i).iter().zip(&self.mean).zip(&self.scale) {
                a.push((v - m) * s);
            }
            a.push(1.0);
        }
        a
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        if x.ndim() != 2 || x.shape()[1] != self.mean.len() {
            return Err(dim_err!("probe expects {} features, got {:?}", self.mean.len(), x.shape()));
        }
        let n = x.shape()[0];
        let a = self.design(x);
        let mut scores = vec![0.0; n * self.n_classes];
        gemm(n, self.mean.len() + 1, self.n_classes, 1.0, &a, false, &self.weights, false, 0.0, &mut scores);
        Ok(scores
            .chunks(self.n_classes)
            .map(|row| (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b }))
            .collect())
    }
}

/// Aggregated cross-validation results of one model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelResult {
    pub model: String,
    pub d_embed: Option<usize>,
    pub report: FoldReport,
}

fn d_field(d: Option<usize>) -> String {
    d.map_or_else(String::new, |d| format!("{}", d))
}

pub const PER_FOLD_HEADER: &str = "model,d_embed,fold,accuracy,macro_f1";
pub const AGGREGATE_HEADER: &str = "model,d_embed,mean_acc,std_acc,mean_f1,std_f1";
pub const PROJECTION_HEADER: &str = "index,dim1,dim2,label";

/// One row per model and fold; reals use shortest round-trip formatting.
pub fn per_fold_csv(results: &[ModelResult]) -> String {
    let mut s = String::from(PER_FOLD_HEADER);
    s.push('\n');
    for r in results {
        for (k, m) in r.report.per_fold.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{:?},{:?}", r.model, d_field(r.d_embed), k, m.accuracy, m.macro_f1);
        }
    }
    s
}

pub fn aggregate_csv(results: &[ModelResult]) -> String {
    let mut s = String::from(AGGREGATE_HEADER);
    s.push('\n');
    for r in results {
        let p = &r.report;
        let _ = writeln!(
            s,
            "{},{},{:?},{:?},{:?},{:?}",
            r.model,
            d_field(r.d_embed),
            p.mean_acc,
            p.std_acc,
            p.mean_f1,
            p.std_f1
        );
    }
    s
}

pub fn projection_csv(coords: &Tensor, labels: &[usize]) -> Result<String> {
    if coords.ndim() != 2 || coords.shape()[1] != 2 || coords.shape()[0] != labels.len() {
        return Err(dim_err!("projection {:?} for {} labels", coords.shape(), labels.len()));
    }
    let mut s = String::from(PROJECTION_HEADER);
    s.push('\n');
    for (i, &l) in labels.iter().enumerate() {
        let r = coords.row(i);
        let _ = writeln!(s, "{},{:?},{:?},{}", i, r[0], r[1], l);
    }
    Ok(s)
}
