//! Classifier training behaviour and the fusion/baseline concatenation identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scribe_core::models::{predict_from_logits, train_classifier, Architecture, Classifier, ClassifierData, TrainConfig};
use scribe_core::session::{EPOCH_LEN, N_CHANNELS};
use scribe_core::Tensor;

/// Two classes of opposite-sign 4 Hz bursts on random channel patterns.
fn separable(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern: Vec<f64> = (0..N_CHANNELS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut x = Vec::with_capacity(n * N_CHANNELS * EPOCH_LEN);
    for &l in &labels {
        let sign = if l == 0 { 1.0 } else { -1.0 };
        for p in &pattern {
            for t in 0..EPOCH_LEN {
                let s = (2.0 * std::f64::consts::PI * 4.0 * t as f64 / EPOCH_LEN as f64).sin();
                x.push(sign * p * s + 0.2 * rng.random_range(-1.0..1.0));
            }
        }
    }
    (Tensor::new(&[n, N_CHANNELS, EPOCH_LEN], x).unwrap(), labels)
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn separable_toy_reaches_full_train_accuracy() {
    let (x, labels) = separable(24, 1);
    let mut model = Classifier::baseline_cnn(5);
    let cfg = TrainConfig { max_epochs: 50, batch_size: 8, val_fraction: 0.0, seed: 2, ..TrainConfig::default() };
    let data = ClassifierData { eeg: &x, embed: None, labels: &labels };
    train_classifier(&mut model, &data, &cfg).unwrap();
    assert_eq!(model.predict(&x, None).unwrap().classes, labels);
}

#[test]
fn full_batch_loss_does_not_increase_early() {
    let (x, labels) = separable(16, 3);
    for arch in [Architecture::BaselineCnn, Architecture::EegNet] {
        let mut model = arch.build(9).unwrap();
        let cfg = TrainConfig { max_epochs: 10, batch_size: 16, val_fraction: 0.0, lr: 1e-3, ..TrainConfig::default() };
        let h = train_classifier(&mut model, &ClassifierData { eeg: &x, embed: None, labels: &labels }, &cfg).unwrap();
        for w in h.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{}: {:?}", arch.name(), h.train_loss);
        }
    }
}

#[test]
fn training_is_seed_deterministic() {
    let (x, labels) = separable(12, 4);
    let e = random(&[12, 4, EPOCH_LEN], 5);
    let run = || {
        let mut m = Classifier::fusion(4, 7).unwrap();
        let cfg = TrainConfig { max_epochs: 3, batch_size: 5, seed: 11, ..TrainConfig::default() };
        let h = train_classifier(&mut m, &ClassifierData { eeg: &x, embed: Some(&e), labels: &labels }, &cfg).unwrap();
        (h, m.params)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn fusion_with_silent_embedding_branch_equals_baseline() {
    let base = Classifier::baseline_cnn(21);
    let mut fusion = Classifier::fusion(8, 22).unwrap();
    let eeg_features = base.params.iter().find(|p| p.name == "head.hidden.weight").unwrap().value.shape()[0];
    for p in fusion.params.params_mut() {
        let src = base.params.iter().find(|q| q.name == p.name);
        match src {
            Some(q) if q.value.shape() == p.value.shape() => p.value = q.value.clone(),
            Some(q) => {
                let width = p.value.shape()[1];
                let d = p.value.data_mut();
                d.iter_mut().for_each(|v| *v = 0.0);
                d[..eeg_features * width].copy_from_slice(q.value.data());
            }
            None => p.value.data_mut().iter_mut().for_each(|v| *v = 0.0),
        }
    }
    let eeg = random(&[3, N_CHANNELS, EPOCH_LEN], 23);
    let embed = random(&[3, 8, EPOCH_LEN], 24);
    let a = base.logits(&eeg, None).unwrap();
    let b = fusion.logits(&eeg, Some(&embed)).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn shifting_logits_keeps_predictions() {
    let logits = random(&[20, 9], 31);
    let shifted = logits.map(|v| v + 123.5);
    assert_eq!(predict_from_logits(&logits).unwrap().classes, predict_from_logits(&shifted).unwrap().classes);
    let p = predict_from_logits(&logits).unwrap();
    for row in p.probabilities.data().chunks(9) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let mut peaked = Tensor::zeros(&[1, 9]);
    peaked.data_mut()[5] = 10.0;
    let q = predict_from_logits(&peaked).unwrap();
    assert_eq!(q.classes, vec![5]);
    assert!(q.probabilities.data()[5] > 0.99);
}

#[test]
fn every_architecture_handles_single_trials() {
    let eeg = random(&[1, N_CHANNELS, EPOCH_LEN], 41);
    for arch in [Architecture::BaselineCnn, Architecture::EegNet, Architecture::Fusion { d_embed: 2 }] {
        let m = arch.build(1).unwrap();
        let e = arch.d_embed().map(|d| random(&[1, d, EPOCH_LEN], 42));
        assert_eq!(m.logits(&eeg, e.as_ref()).unwrap().shape(), &[1, 9]);
    }
}
