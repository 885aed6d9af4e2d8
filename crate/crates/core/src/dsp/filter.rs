//! Zero-phase Butterworth band-pass filtering in second-order sections.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{contract_err, dim_err, param_err, Result};
use crate::session::SAMPLE_RATE_HZ;
use crate::tensor::Tensor;

/// One biquad: `[b0, b1, b2, a1, a2]` with `a0 = 1`.
pub type Section = [f64; 5];

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    sections: Vec<Section>,
}

// Impulse-response envelope level treated as "settled".
const SETTLE_LEVEL: f64 = 1e-3;

impl Sos {
    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// Butterworth band-pass of prototype `order` (the band-pass has `2·order` poles).
    pub fn butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Self> {
        let nyq = fs / 2.0;
        if order == 0 {
            return Err(param_err!("filter order must be positive"));
        }
        if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyq) {
            return Err(param_err!(
                "band ({}, {}) Hz must satisfy 0 < low < high < {} Hz",
                low_hz,
                high_hz,
                nyq
            ));
        }
        let fs2 = 2.0 * fs;
        let warp = |f: f64| fs2 * libm::tan(core::f64::consts::PI * f / fs);
        let (wl, wh) = (warp(low_hz), warp(high_hz));
        let bw = wh - wl;
        let w0 = libm::sqrt(wl * wh);

        let mut poles = Vec::with_capacity(2 * order);
        for m in 0..order {
            let theta = core::f64::consts::PI * (2 * m + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
            let disc = (p * p - w0 * w0).sqrt();
            for pa in [p + disc, p - disc] {
                poles.push((fs2 + pa) / (fs2 - pa));
            }
        }
        // Gain of the bilinear map: bw^N · fs2^N / Π(fs2 − p_analog), with
        // the analog poles recovered from the digital ones.
        let mut denom = Complex64::new(1.0, 0.0);
        for z in &poles {
            let pa = fs2 * (z - 1.0) / (z + 1.0);
            denom *= fs2 - pa;
        }
        let gain = (Complex64::new(libm::pow(bw * fs2, order as f64), 0.0) / denom).re;

        let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-14).collect();
        let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= 1e-14).map(|p| p.re).collect();
        upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        real.sort_by(|a, b| a.total_cmp(b));
        let mut sections = Vec::with_capacity(order);
        for p in upper {
            sections.push([1.0, 0.0, -1.0, -2.0 * p.re, p.norm_sqr()]);
        }
        for pair in real.chunks(2) {
            let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            sections.push([1.0, 0.0, -1.0, -(r1 + r2), r1 * r2]);
        }
        if sections.len() != order {
            return Err(param_err!("unexpected pole layout for band ({}, {})", low_hz, high_hz));
        }
        for c in &mut sections[0][..3] {
            *c *= gain;
        }
        Ok(Self { sections })
    }

    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let w = 2.0 * core::f64::consts::PI * freq_hz / fs;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            acc * (s[0] + s[1] * z1 + s[2] * z2) / (1.0 + s[3] * z1 + s[4] * z2)
        })
    }

    /// Samples for the slowest pole's envelope to decay to 1e−3.
    pub fn transient_len(&self) -> usize {
        let r = self
            .sections
            .iter()
            .map(|s| {
                let disc = Complex64::new(s[3] * s[3] - 4.0 * s[4], 0.0).sqrt();
                let p1 = (-s[3] + disc) / 2.0;
                let p2 = (-s[3] - disc) / 2.0;
                p1.norm().max(p2.norm())
            })
            .fold(0.0f64, f64::max);
        if r <= 0.0 {
            return 1;
        }
        libm::ceil(libm::log(SETTLE_LEVEL) / libm::log(r)) as usize
    }

    /// Initial conditions for a unit-step steady state.
    pub fn step_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let y = (s[0] + s[1] + s[2]) / (1.0 + s[3] + s[4]);
                let z = [scale * (y - s[0]), scale * (s[2] - s[4] * y)];
                scale *= y;
                z
            })
            .collect()
    }

    /// Causal filtering (transposed direct form II) from state `zi`.
    pub fn filter(&self, x: &[f64], zi: &[[f64; 2]]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, z0) in self.sections.iter().zip(zi) {
            let mut z = *z0;
            for v in y.iter_mut() {
                let xin = *v;
                let out = s[0] * xin + z[0];
                z[0] = s[1] * xin - s[3] * out + z[1];
                z[1] = s[2] * xin - s[4] * out;
                *v = out;
            }
        }
        y
    }

    /// Forward–backward filtering with odd-extension padding.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let transient = self.transient_len();
        if n < 3 * transient {
            return Err(contract_err!(
                "signal of {} samples shorter than 3x filter transient ({} samples)",
                n,
                transient
            ));
        }
        let pad = transient.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (x[0], x[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

        let zi = self.step_state();
        let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
        let mut y = self.filter(&ext, &scaled(ext[0]));
        y.reverse();
        let mut y = self.filter(&y, &scaled(y[0]));
        y.reverse();
        Ok(y[pad..pad + n].to_vec())
    }
}

/// Zero-phase Butterworth band-pass of every channel of `eeg[C×S]` at 250 Hz.
pub fn butter_bandpass(eeg: &Tensor, low_hz: f64, high_hz: f64, order: usize) -> Result<Tensor> {
    if eeg.ndim() != 2 {
        return Err(dim_err!("expected channels x samples, got {:?}", eeg.shape()));
    }
    let sos = Sos::butterworth_bandpass(order, low_hz, high_hz, SAMPLE_RATE_HZ)?;
    let s = eeg.shape()[1];
    let mut out = vec![0.0; eeg.len()];
    for (ch, row) in eeg.data().chunks(s).enumerate() {
        out[ch * s..(ch + 1) * s].copy_from_slice(&sos.filtfilt(row)?);
    }
    Tensor::new(eeg.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gain_at_geometric_center() {
        for (lo, hi) in [(1.0, 45.0), (0.5, 8.0)] {
            let sos = Sos::butterworth_bandpass(4, lo, hi, 250.0).unwrap();
            assert_eq!(sos.sections().len(), 4);
            // digital center maps back from the warped geometric mean
            let fs2 = 500.0;
            let warp = |f: f64| fs2 * libm::tan(core::f64::consts::PI * f / 250.0);
            let w0 = libm::sqrt(warp(lo) * warp(hi));
            let fc = libm::atan(w0 / fs2) * 250.0 / core::f64::consts::PI;
            assert!((sos.response(fc, 250.0).norm() - 1.0).abs() < 1e-9);
            // -3 dB at both edges
            let half = core::f64::consts::FRAC_1_SQRT_2;
            assert!((sos.response(lo, 250.0).norm() - half).abs() < 1e-9);
            assert!((sos.response(hi, 250.0).norm() - half).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_cutoffs() {
        for (lo, hi) in [(0.0, 10.0), (10.0, 5.0), (1.0, 125.0), (-1.0, 4.0)] {
            assert!(matches!(
                Sos::butterworth_bandpass(4, lo, hi, 250.0),
                Err(crate::Error::Parameter(_))
            ));
        }
    }

    #[test]
    fn short_signal_rejected() {
        let sos = Sos::butterworth_bandpass(4, 1.0, 45.0, 250.0).unwrap();
        let n = 3 * sos.transient_len() - 1;
        assert!(matches!(sos.filtfilt(&vec![0.0; n]), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn step_state_holds_steady_state() {
        let sos = Sos::butterworth_bandpass(2, 2.0, 20.0, 250.0).unwrap();
        let zi = sos.step_state();
        let y = sos.filter(&[1.0; 50], &zi);
        // a band-pass has zero DC gain; starting in steady state keeps it there
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }
}
