//! Deflationary FastICA (tanh contrast) and correlation-based EOG rejection.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract_err, dim_err, Error, Result};
use crate::linalg::{gemm, pinv_full_row_rank, symmetric_eigen};
use crate::tensor::Tensor;

pub const MAX_ITER: usize = 500;
pub const TOLERANCE: f64 = 1e-6;
// Eigenvalues below this fraction of the largest count as rank loss.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct IcaDecomposition {
    /// `n × C`, maps centered channels to sources.
    pub unmixing: Tensor,
    /// `n × S`.
    pub sources: Tensor,
    /// Per-channel mean removed before unmixing.
    pub mean: Vec<f64>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
}

impl IcaDecomposition {
    pub fn n_components(&self) -> usize {
        self.unmixing.shape()[0]
    }

    /// Applies the fitted unmixing to another recording with the same channels.
    pub fn transform(&self, eeg: &Tensor) -> Result<Tensor> {
        let (n, c) = (self.unmixing.shape()[0], self.unmixing.shape()[1]);
        if eeg.ndim() != 2 || eeg.shape()[0] != c {
            return Err(dim_err!("unmixing expects {} channels, got {:?}", c, eeg.shape()));
        }
        let s = eeg.shape()[1];
        let centered = center(eeg.data(), c, s, &self.mean);
        let mut out = vec![0.0; n * s];
        gemm(n, c, s, 1.0, self.unmixing.data(), false, &centered, false, 0.0, &mut out);
        Tensor::new(&[n, s], out)
    }
}

fn center(x: &[f64], c: usize, s: usize, mean: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    for ch in 0..c {
        out[ch * s..(ch + 1) * s].iter_mut().for_each(|v| *v -= mean[ch]);
    }
    out
}

/// FastICA on `eeg[C×S]` returning `n_components` sources.
pub fn fast_ica(eeg: &Tensor, n_components: usize, seed: u64) -> Result<IcaDecomposition> {
    if eeg.ndim() != 2 {
        return Err(dim_err!("expected channels x samples, got {:?}", eeg.shape()));
    }
    let (c, s) = (eeg.shape()[0], eeg.shape()[1]);
    if n_components == 0 || n_components > c {
        return Err(dim_err!("{} components requested from {} channels", n_components, c));
    }
    if s <= c {
        return Err(contract_err!("ICA needs more samples ({}) than channels ({})", s, c));
    }
    let mean: Vec<f64> = eeg.data().chunks(s).map(|r| r.iter().sum::<f64>() / s as f64).collect();
    let x = center(eeg.data(), c, s, &mean);

    let mut cov = vec![0.0; c * c];
    gemm(c, s, c, 1.0 / s as f64, &x, false, &x, true, 0.0, &mut cov);
    let (vals, vecs) = symmetric_eigen(&cov, c)?;
    let n = n_components;
    if !(vals[0] > 0.0) || vals[n - 1] <= RANK_TOL * vals[0] {
        return Err(Error::Decomposition(alloc::format!(
            "covariance rank below {} components (eigenvalue ratio {:e})",
            n,
            vals[n - 1] / vals[0]
        )));
    }
    // whitening: K = Λ^{-1/2} Eᵀ over the leading n eigenpairs
    let mut k = vec![0.0; n * c];
    for i in 0..n {
        let inv = 1.0 / libm::sqrt(vals[i]);
        for ch in 0..c {
            k[i * c + ch] = vecs[ch * c + i] * inv;
        }
    }
    let mut z = vec![0.0; n * s];
    gemm(n, c, s, 1.0, &k, false, &x, false, 0.0, &mut z);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; n * n];
    let mut converged = vec![false; n];
    let mut iterations = vec![0; n];
    let mut proj = vec![0.0; s];
    let mut g = vec![0.0; s];
    for p in 0..n {
        let mut wp: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        deflate(&mut wp, &w[..p * n], n);
        normalize(&mut wp);
        for it in 0..MAX_ITER {
            gemm(1, n, s, 1.0, &wp, false, &z, false, 0.0, &mut proj);
            let mut gprime = 0.0;
            for (gv, &u) in g.iter_mut().zip(&proj) {
                let t = libm::tanh(u);
                *gv = t;
                gprime += 1.0 - t * t;
            }
            gprime /= s as f64;
            let mut next = vec![0.0; n];
            gemm(n, s, 1, 1.0 / s as f64, &z, false, &g, false, 0.0, &mut next);
            next.iter_mut().zip(&wp).for_each(|(a, b)| *a -= gprime * b);
            deflate(&mut next, &w[..p * n], n);
            normalize(&mut next);
            let dot: f64 = next.iter().zip(&wp).map(|(a, b)| a * b).sum();
            let sign = if dot < 0.0 { -1.0 } else { 1.0 };
            let change = next
                .iter()
                .zip(&wp)
                .map(|(a, b)| (a - sign * b).abs())
                .fold(0.0f64, f64::max);
            wp = next;
            iterations[p] = it + 1;
            if change < TOLERANCE {
                converged[p] = true;
                break;
            }
        }
        w[p * n..(p + 1) * n].copy_from_slice(&wp);
    }

    let mut unmixing = vec![0.0; n * c];
    gemm(n, n, c, 1.0, &w, false, &k, false, 0.0, &mut unmixing);
    let mut sources = vec![0.0; n * s];
    gemm(n, n, s, 1.0, &w, false, &z, false, 0.0, &mut sources);
    Ok(IcaDecomposition {
        unmixing: Tensor::new(&[n, c], unmixing)?,
        sources: Tensor::new(&[n, s], sources)?,
        mean,
        converged,
        iterations,
    })
}

fn deflate(w: &mut [f64], previous: &[f64], n: usize) {
    for row in previous.chunks(n) {
        let d: f64 = w.iter().zip(row).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(row).for_each(|(a, b)| *a -= d * b);
    }
}

fn normalize(w: &mut [f64]) {
    let norm = libm::sqrt(w.iter().map(|v| v * v).sum::<f64>());
    w.iter_mut().for_each(|v| *v /= norm);
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / libm::sqrt(saa * sbb)
}

/// Result of removing ocular components.
#[derive(Debug, Clone, PartialEq)]
pub struct EogRejection {
    pub cleaned: Tensor,
    pub rejected: Vec<usize>,
    pub correlations: Vec<f64>,
}

/// Zeroes every component whose |Pearson r| with `frontal_reference` reaches
/// `corr_threshold`, then reconstructs channels through the pseudo-inverse.
pub fn reject_eog(decomp: &IcaDecomposition, frontal_reference: &[f64], corr_threshold: f64) -> Result<EogRejection> {
    let (n, c) = (decomp.unmixing.shape()[0], decomp.unmixing.shape()[1]);
    let s = decomp.sources.shape()[1];
    if frontal_reference.len() != s {
        return Err(dim_err!("reference of {} samples vs sources of {}", frontal_reference.len(), s));
    }
    let correlations: Vec<f64> = decomp.sources.data().chunks(s).map(|src| pearson(src, frontal_reference)).collect();
    let rejected: Vec<usize> = (0..n).filter(|&i| correlations[i].abs() >= corr_threshold).collect();
    if rejected.len() == n {
        return Err(contract_err!(
            "threshold {} rejects all {} components",
            corr_threshold,
            n
        ));
    }
    let mut kept = decomp.sources.clone();
    for &i in &rejected {
        kept.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
    }
    let mixing = pinv_full_row_rank(decomp.unmixing.data(), n, c)?;
    let mut out = vec![0.0; c * s];
    gemm(c, n, s, 1.0, &mixing, false, kept.data(), false, 0.0, &mut out);
    for ch in 0..c {
        out[ch * s..(ch + 1) * s].iter_mut().for_each(|v| *v += decomp.mean[ch]);
    }
    Ok(EogRejection {
        cleaned: Tensor::new(&[c, s], out)?,
        rejected,
        correlations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn repeated_channels_are_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let row: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eeg = Tensor::new(&[3, 500], row.repeat(3)).unwrap();
        assert!(matches!(fast_ica(&eeg, 3, 0), Err(Error::Decomposition(_))));
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1., 2., 3.], &[2., 4., 6.]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1., 2., 3.], &[3., 2., 1.]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1., 1., 1.], &[1., 2., 3.]), 0.0);
    }
}
