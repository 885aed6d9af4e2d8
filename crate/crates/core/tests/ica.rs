//! FastICA source recovery and ocular-component rejection on planted mixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scribe_core::dsp::{fast_ica, reject_eog};
use scribe_core::dsp::ica::pearson;
use scribe_core::Tensor;

const SAMPLES: usize = 10_000;
const CHANNELS: usize = 8;

fn laplace(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(-0.5..0.5);
    -u.signum() * (1.0 - 2.0 * u.abs()).max(1e-300).ln()
}

fn mix(a: &[f64], sources: &[Vec<f64>]) -> Tensor {
    let k = sources.len();
    let mut x = vec![0.0; CHANNELS * SAMPLES];
    for ch in 0..CHANNELS {
        for (j, src) in sources.iter().enumerate() {
            let w = a[ch * k + j];
            for (o, s) in x[ch * SAMPLES..(ch + 1) * SAMPLES].iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    Tensor::new(&[CHANNELS, SAMPLES], x).unwrap()
}

fn random_mixing(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..CHANNELS * k).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn laplace_sources(k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..SAMPLES).map(|_| laplace(rng)).collect()).collect()
}

#[test]
fn recovers_laplace_sources() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = laplace_sources(3, &mut rng);
        let x = mix(&random_mixing(3, &mut rng), &truth);
        let ica = fast_ica(&x, 3, seed).unwrap();
        assert!(ica.converged.iter().all(|&c| c));
        for t in &truth {
            let best = (0..3).map(|i| pearson(ica.sources.row(i), t).abs()).fold(0.0, f64::max);
            assert!(best > 0.95, "seed {seed}: best match {best}");
        }
    }
}

#[test]
fn transform_reproduces_fitted_sources() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = mix(&random_mixing(3, &mut rng), &laplace_sources(3, &mut rng));
    let ica = fast_ica(&x, 3, 1).unwrap();
    let again = ica.transform(&x).unwrap();
    for (a, b) in again.data().iter().zip(ica.sources.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

/// Sparse positive bumps, like eye blinks.
fn blink_train(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut b = vec![0.0; SAMPLES];
    let mut t = 200;
    while t < SAMPLES - 200 {
        for (i, v) in b.iter_mut().enumerate().skip(t - 60).take(120) {
            let z = (i as f64 - t as f64) / 15.0;
            *v += 20.0 * (-0.5 * z * z).exp();
        }
        t += rng.random_range(500..1500);
    }
    b
}

#[test]
fn blink_rejection_halves_reconstruction_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let neural = laplace_sources(3, &mut rng);
    let mut a = random_mixing(4, &mut rng);
    for ch in 0..CHANNELS {
        a[ch * 4 + 3] = if ch == 0 { 1.0 } else { 0.4 / (ch as f64) };
    }
    let mut sources = neural.clone();
    sources.push(blink_train(&mut rng));
    let contaminated = mix(&a, &sources);
    let clean_a: Vec<f64> = a.iter().enumerate().map(|(i, &w)| if i % 4 == 3 { 0.0 } else { w }).collect();
    let mut clean_sources = neural;
    clean_sources.push(vec![0.0; SAMPLES]);
    let clean = mix(&clean_a, &clean_sources);

    let ica = fast_ica(&contaminated, 4, 3).unwrap();
    let out = reject_eog(&ica, contaminated.row(0), 0.7).unwrap();
    assert_eq!(out.rejected.len(), 1, "correlations {:?}", out.correlations);

    let sq = |x: &Tensor| -> f64 { x.data().iter().zip(clean.data()).map(|(a, b)| (a - b) * (a - b)).sum() };
    let before = sq(&contaminated);
    let after = sq(&out.cleaned);
    assert!(after <= 0.5 * before, "error {after} vs {before}");
}

#[test]
fn rejecting_nothing_reconstructs_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = mix(&random_mixing(3, &mut rng), &laplace_sources(3, &mut rng));
    let ica = fast_ica(&x, 3, 0).unwrap();
    let reference: Vec<f64> = (0..SAMPLES).map(|i| (i as f64 * 0.37).sin()).collect();
    let out = reject_eog(&ica, &reference, 0.99).unwrap();
    assert!(out.rejected.is_empty());
    for (a, b) in out.cleaned.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn requesting_more_components_than_channels_fails() {
    let x = Tensor::zeros(&[4, 100]);
    assert!(fast_ica(&x, 5, 0).is_err());
}
