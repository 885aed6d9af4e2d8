//! Zero-phase band-pass filters against an FFT impulse-response oracle.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use scribe_core::dsp::{butter_bandpass, Sos};
use scribe_core::session::SAMPLE_RATE_HZ;
use scribe_core::Tensor;

const FS: f64 = SAMPLE_RATE_HZ;
const N_FFT: usize = 1 << 14;

/// Magnitude of the forward-backward response at each FFT bin, from the
/// causal impulse response of one pass.
fn fft_power_response(sos: &Sos) -> Vec<f64> {
    let mut delta = vec![0.0; N_FFT];
    delta[0] = 1.0;
    let zi = vec![[0.0; 2]; sos.sections().len()];
    let h = sos.filter(&delta, &zi);
    let mut buf: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(N_FFT).process(&mut buf);
    buf.iter().map(|c| c.norm_sqr()).collect()
}

fn bin(freq: f64) -> usize {
    (freq * N_FFT as f64 / FS).round() as usize
}

/// Analog Butterworth band-pass magnitude² at the prewarped frequency.
fn butterworth_oracle(order: usize, low: f64, high: f64, f: f64) -> f64 {
    let w = |hz: f64| (PI * hz / FS).tan();
    let (wl, wh, wf) = (w(low), w(high), w(f));
    let x = (wf * wf - wl * wh) / (wf * (wh - wl));
    1.0 / (1.0 + x.powi(2 * order as i32))
}

fn interior_amplitude(x: &[f64]) -> f64 {
    let q = x.len() / 4;
    x[q..x.len() - q].iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn sine(freq: f64, secs: f64) -> Vec<f64> {
    (0..(secs * FS) as usize).map(|i| (2.0 * PI * freq * i as f64 / FS).sin()).collect()
}

#[test]
fn design_matches_butterworth_magnitude() {
    for (lo, hi) in [(1.0, 45.0), (0.5, 8.0)] {
        let sos = Sos::butterworth_bandpass(4, lo, hi, FS).unwrap();
        for f in [0.2, 0.5, 1.0, 3.0, 8.0, 10.0, 30.0, 45.0, 60.0, 100.0] {
            let got = sos.response(f, FS).norm_sqr();
            let want = butterworth_oracle(4, lo, hi, f);
            assert!((got - want).abs() < 1e-9 * want.max(1e-6), "{lo}-{hi} Hz at {f}: {got} vs {want}");
        }
    }
}

#[test]
fn fft_impulse_response_agrees_with_analytic_response() {
    let sos = Sos::butterworth_bandpass(4, 1.0, 45.0, FS).unwrap();
    let power = fft_power_response(&sos);
    for f in [2.0, 10.0, 25.0, 60.0, 90.0] {
        let k = bin(f);
        let exact = sos.response(k as f64 * FS / N_FFT as f64, FS).norm_sqr();
        assert!((power[k] - exact).abs() < 1e-8, "{f} Hz: {} vs {}", power[k], exact);
    }
}

#[test]
fn broad_band_passes_alpha_and_rejects_mains() {
    let sos = Sos::butterworth_bandpass(4, 1.0, 45.0, FS).unwrap();
    let power = fft_power_response(&sos);
    let a10 = interior_amplitude(&sos.filtfilt(&sine(10.0, 12.0)).unwrap());
    let a60 = interior_amplitude(&sos.filtfilt(&sine(60.0, 12.0)).unwrap());
    assert!((a10 - 1.0).abs() < 0.02, "10 Hz amplitude {a10}");
    assert!(a60 < 0.10, "60 Hz amplitude {a60}");
    assert!((a10 - power[bin(10.0)]).abs() < 0.01);
    assert!((a60 - power[bin(60.0)]).abs() < 0.01);
}

#[test]
fn narrow_band_removes_dc() {
    let sos = Sos::butterworth_bandpass(4, 0.5, 8.0, FS).unwrap();
    let y = sos.filtfilt(&vec![1.0; 5000]).unwrap();
    assert!(interior_amplitude(&y) < 1e-3, "residual DC {}", interior_amplitude(&y));
    assert!(fft_power_response(&sos)[0] < 1e-12);
    let x: Vec<f64> = sine(3.0, 20.0).iter().map(|v| v + 5.0).collect();
    let a3 = interior_amplitude(&sos.filtfilt(&x).unwrap());
    assert!((a3 - 1.0).abs() < 0.02, "3 Hz amplitude {a3}");
}

#[test]
fn filtfilt_has_no_lag() {
    let sos = Sos::butterworth_bandpass(4, 1.0, 45.0, FS).unwrap();
    let (n, c) = (4001, 2000);
    let x: Vec<f64> = (0..n).map(|i| (-((i as f64 - c as f64) / 6.0).powi(2)).exp()).collect();
    let y = sos.filtfilt(&x).unwrap();
    let peak = (0..n).fold(0, |b, i| if y[i] > y[b] { i } else { b });
    assert_eq!(peak, c);
    for k in 1..200 {
        assert!((y[c - k] - y[c + k]).abs() < 1e-9, "asymmetry at lag {k}");
    }
}

#[test]
fn channel_filter_acts_per_row() {
    let a = sine(10.0, 12.0);
    let b = sine(60.0, 12.0);
    let eeg = Tensor::new(&[2, a.len()], [a.clone(), b].concat()).unwrap();
    let out = butter_bandpass(&eeg, 1.0, 45.0, 4).unwrap();
    let sos = Sos::butterworth_bandpass(4, 1.0, 45.0, FS).unwrap();
    assert_eq!(out.row(0), &sos.filtfilt(&a).unwrap()[..]);
    assert!(interior_amplitude(out.row(1)) < 0.1);
}

#[test]
fn rejects_invalid_bands() {
    assert!(Sos::butterworth_bandpass(4, 8.0, 0.5, FS).is_err());
    assert!(Sos::butterworth_bandpass(4, 1.0, 200.0, FS).is_err());
    assert!(Sos::butterworth_bandpass(0, 1.0, 45.0, FS).is_err());
}
