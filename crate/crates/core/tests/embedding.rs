//! Contrastive encoder training, sampling and the InfoNCE objective.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scribe_core::cebra::{encode_dataset, sample_contrastive_batch, train_cebra, AuxiliaryVariables, CebraConfig};
use scribe_core::evaluation::{binned_features, LinearProbe};
use scribe_core::{Graph, Tensor};

const T: usize = 250;
const C: usize = 8;

fn patterns(k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..C).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn aux_for(labels: &[usize]) -> AuxiliaryVariables {
    let n = labels.len();
    let disc = labels.iter().flat_map(|&l| std::iter::repeat_n(l, T)).collect();
    AuxiliaryVariables::new(Tensor::zeros(&[n * T, 4]), disc, T).unwrap()
}

/// Nine classes, each an oscillation at its own frequency over a class offset.
fn oscillating_toy() -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pats = patterns(9, &mut rng);
    let labels: Vec<usize> = (0..36).map(|i| i % 9).collect();
    let mut data = Vec::with_capacity(labels.len() * C * T);
    for &l in &labels {
        let f = 2.0 + l as f64;
        for ch in 0..C {
            for s in 0..T {
                let phase = 2.0 * std::f64::consts::PI * f * s as f64 / 250.0;
                data.push(pats[l][ch] * phase.sin() + pats[(l + 1) % 9][ch] + 0.1 * rng.random_range(-1.0..1.0));
            }
        }
    }
    (Tensor::new(&[labels.len(), C, T], data).unwrap(), labels)
}

/// Three classes with a constant spatial pattern under uniform noise.
fn static_toy() -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pats = patterns(9, &mut rng);
    let labels: Vec<usize> = (0..36).map(|i| i % 3).collect();
    let mut data = Vec::with_capacity(labels.len() * C * T);
    for &l in &labels {
        for ch in 0..C {
            for _ in 0..T {
                data.push(pats[l][ch] + 0.3 * rng.random_range(-1.0..1.0));
            }
        }
    }
    (Tensor::new(&[labels.len(), C, T], data).unwrap(), labels)
}

fn static_cfg(seed: u64) -> CebraConfig {
    CebraConfig {
        d_embed: 8,
        batch_size: 64,
        lr: 1e-3,
        temperature: 0.5,
        steps: 1000,
        seed,
        ..CebraConfig::default()
    }
}

fn class_centroids(matrix: &Tensor, labels: &[usize], k: usize) -> DMatrix<f64> {
    let d = matrix.shape()[1];
    let mut sums = DMatrix::<f64>::zeros(k, d);
    let mut counts = vec![0.0; k];
    for i in 0..matrix.shape()[0] {
        let l = labels[i / T];
        counts[l] += 1.0;
        for (j, v) in matrix.row(i).iter().enumerate() {
            sums[(l, j)] += v;
        }
    }
    for l in 0..k {
        for j in 0..d {
            sums[(l, j)] /= counts[l];
        }
    }
    sums
}

#[test]
fn smoke_training_reduces_loss() {
    let (epochs, labels) = oscillating_toy();
    let cfg = CebraConfig {
        batch_size: 32,
        temperature: 0.5,
        steps: 500,
        seed: 3,
        ..CebraConfig::default()
    };
    let trained = train_cebra(&epochs, &aux_for(&labels), &cfg).unwrap();
    let first = trained.losses[0];
    let tail = trained.losses[480..].iter().sum::<f64>() / 20.0;
    assert!(tail <= 0.8 * first, "loss {first:.3} -> {tail:.3}");
}

#[test]
fn same_seed_is_bitwise_reproducible() {
    let (epochs, labels) = oscillating_toy();
    let aux = aux_for(&labels);
    let cfg = CebraConfig {
        batch_size: 32,
        steps: 30,
        seed: 11,
        ..CebraConfig::default()
    };
    let a = train_cebra(&epochs, &aux, &cfg).unwrap();
    let b = train_cebra(&epochs, &aux, &cfg).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.losses), bits(&b.losses));
    let ea = encode_dataset(&a.encoder, &epochs).unwrap();
    let eb = encode_dataset(&b.encoder, &epochs).unwrap();
    assert_eq!(bits(ea.matrix.data()), bits(eb.matrix.data()));

    let c = train_cebra(&epochs, &aux, &CebraConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(bits(&a.losses), bits(&c.losses));
}

#[test]
fn seeds_agree_up_to_rotation() {
    let (epochs, labels) = static_toy();
    let aux = aux_for(&labels);
    let cents = |seed| {
        let trained = train_cebra(&epochs, &aux, &static_cfg(seed)).unwrap();
        class_centroids(&encode_dataset(&trained.encoder, &epochs).unwrap().matrix, &labels, 3)
    };
    let a = cents(1);
    let b = cents(2);
    let svd = (b.transpose() * &a).svd(true, true);
    let rot = svd.u.unwrap() * svd.v_t.unwrap();
    let ratio = (&a - &b * rot).norm() / a.norm();
    assert!(ratio < 0.1, "aligned centroid difference {ratio:.3}");
}

#[test]
fn probe_reads_labels_from_embedding() {
    let (epochs, labels) = static_toy();
    let trained = train_cebra(&epochs, &aux_for(&labels), &static_cfg(5)).unwrap();
    let emb = encode_dataset(&trained.encoder, &epochs).unwrap();
    let feats = binned_features(&emb.trial_major, 10).unwrap();
    let train: Vec<usize> = (0..labels.len()).filter(|i| i % 4 != 0).collect();
    let test: Vec<usize> = (0..labels.len()).filter(|i| i % 4 == 0).collect();
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let probe = LinearProbe::fit(&feats.select_rows(&train).unwrap(), &pick(&train), 9, 1e-3).unwrap();
    let pred = probe.predict(&feats.select_rows(&test).unwrap()).unwrap();
    let hits = pred.iter().zip(pick(&test)).filter(|(p, l)| **p == *l).count();
    assert!(hits as f64 >= 0.8 * test.len() as f64, "{hits}/{}", test.len());
}

#[test]
fn positives_share_trial_label_and_window() {
    let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
    let aux = aux_for(&labels);
    let cfg = CebraConfig {
        batch_size: 500,
        ..CebraConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let batch = sample_contrastive_batch(&aux, &cfg, &mut rng).unwrap();
        assert_eq!(batch.anchors.len(), 500);
        assert_eq!(batch.negatives.len(), 500);
        for (&a, &p) in batch.anchors.iter().zip(&batch.positives) {
            assert_ne!(a, p);
            assert_eq!(a / T, p / T);
            assert_eq!(aux.discrete[a], aux.discrete[p]);
            assert!(a.abs_diff(p) <= cfg.offset_frames);
        }
    }
    let too_big = CebraConfig {
        batch_size: aux.len() + 1,
        ..cfg
    };
    assert!(sample_contrastive_batch(&aux, &too_big, &mut rng).is_err());
}

#[test]
fn infonce_is_rotation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = 6;
    let unit = |n: usize, rng: &mut ChaCha8Rng| {
        let mut m = DMatrix::<f64>::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        for mut row in m.row_iter_mut() {
            let norm = row.norm();
            row /= norm;
        }
        m
    };
    let to_tensor = |m: &DMatrix<f64>| {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        Tensor::new(&[m.nrows(), m.ncols()], data).unwrap()
    };
    let loss = |za: &DMatrix<f64>, zp: &DMatrix<f64>, zn: &DMatrix<f64>| {
        let mut g = Graph::new();
        let a = g.input(to_tensor(za));
        let p = g.input(to_tensor(zp));
        let n = g.input(to_tensor(zn));
        let l = g.infonce(a, p, n, 0.7).unwrap();
        g.value(l).item()
    };
    for _ in 0..10 {
        let (za, zp, zn) = (unit(8, &mut rng), unit(8, &mut rng), unit(12, &mut rng));
        let q = DMatrix::<f64>::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let before = loss(&za, &zp, &zn);
        let after = loss(&(&za * &q), &(&zp * &q), &(&zn * &q));
        assert!((before - after).abs() < 1e-9, "{before} vs {after}");
    }
}
