//! Pen-down epoching and per-trial normalization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, Result};
use crate::session::{KinSample, PenEvent, RawSession, Warning, EPOCH_LEN, N_KINEMATICS};
use crate::tensor::Tensor;

/// Per-trial EEG windows, resampled trajectories and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    /// `n × C × 250`.
    pub epochs: Tensor,
    /// `n × 4 × 250` rows x, y, pressure, velocity.
    pub trajectories: Tensor,
    pub labels: Vec<usize>,
    /// Pen-down sample index of each trial in the source recording.
    pub onsets: Vec<usize>,
}

impl EpochSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.epochs.shape()[1]
    }

    /// Subset of trials in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            epochs: self.epochs.select_rows(idx)?,
            trajectories: self.trajectories.select_rows(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            onsets: idx.iter().map(|&i| self.onsets[i]).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub set: EpochSet,
    pub warnings: Vec<Warning>,
}

/// One `[t0, t0+250)` window per pen-down; trials that overrun the recording
/// or lack kinematics are dropped with a warning.
pub fn extract_epochs(session: &RawSession) -> Result<Extraction> {
    let (c, s) = (session.n_channels(), session.n_samples());
    let eeg = session.eeg().data();
    let events = session.events();
    let mut epochs = Vec::new();
    let mut trajectories = Vec::new();
    let mut labels = Vec::new();
    let mut onsets = Vec::new();
    let mut warnings = Vec::new();
    for (i, e) in events.iter().enumerate() {
        if e.kind != PenEvent::Down {
            continue;
        }
        let t0 = e.sample_index;
        if t0 + EPOCH_LEN > s {
            warnings.push(Warning::new(
                "epoching",
                format!("pen_down at sample {} leaves {} of {} samples; trial dropped", t0, s - t0, EPOCH_LEN),
            ));
            continue;
        }
        let end = events.get(i + 1).map_or(s, |u| u.sample_index);
        let segment = kinematics_between(session.kinematics(), t0, end);
        let traj = match resample_segment(segment) {
            Ok(t) => t,
            Err(_) => {
                warnings.push(Warning::new(
                    "epoching",
                    format!("pen_down at sample {} has {} kinematic samples; trial dropped", t0, segment.len()),
                ));
                continue;
            }
        };
        for ch in 0..c {
            epochs.extend_from_slice(&eeg[ch * s + t0..ch * s + t0 + EPOCH_LEN]);
        }
        trajectories.extend(traj);
        labels.push(e.char_class);
        onsets.push(t0);
    }
    let n = labels.len();
    if n == 0 {
        return Err(contract_err!("no complete trials in recording"));
    }
    Ok(Extraction {
        set: EpochSet {
            epochs: Tensor::new(&[n, c, EPOCH_LEN], epochs)?,
            trajectories: Tensor::new(&[n, N_KINEMATICS, EPOCH_LEN], trajectories)?,
            labels,
            onsets,
        },
        warnings,
    })
}

fn kinematics_between(kin: &[KinSample], start: usize, end: usize) -> &[KinSample] {
    let lo = kin.partition_point(|k| k.sample_index < start);
    let hi = kin.partition_point(|k| k.sample_index < end);
    &kin[lo..hi]
}

/// Linear interpolation of a segment onto 250 uniform time points, row-major
/// `[x; y; pressure; velocity]`.
pub fn resample_segment(segment: &[KinSample]) -> Result<Vec<f64>> {
    if segment.len() < 2 {
        return Err(contract_err!("trajectory needs at least 2 samples, got {}", segment.len()));
    }
    let t_first = segment[0].sample_index as f64;
    let t_last = segment[segment.len() - 1].sample_index as f64;
    let mut out = vec![0.0; N_KINEMATICS * EPOCH_LEN];
    let mut j = 0;
    for i in 0..EPOCH_LEN {
        let t = t_first + (t_last - t_first) * i as f64 / (EPOCH_LEN - 1) as f64;
        while j + 2 < segment.len() && (segment[j + 1].sample_index as f64) < t {
            j += 1;
        }
        let (a, b) = (&segment[j], &segment[j + 1]);
        let (ta, tb) = (a.sample_index as f64, b.sample_index as f64);
        let f = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let lerp = |u: f64, v: f64| u + f * (v - u);
        out[i] = lerp(a.x, b.x);
        out[EPOCH_LEN + i] = lerp(a.y, b.y);
        out[2 * EPOCH_LEN + i] = lerp(a.pressure, b.pressure);
        out[3 * EPOCH_LEN + i] = lerp(a.velocity, b.velocity);
    }
    Ok(out)
}

/// Shifts x and y so the first point sits at the origin.
pub fn shift_to_origin(traj: &mut [f64]) {
    for row in traj.chunks_mut(EPOCH_LEN).take(2) {
        let first = row[0];
        row.iter_mut().for_each(|v| *v -= first);
    }
}

/// Scales each row into `[0, 1]`; a constant row becomes zeros.
pub fn min_max_rows(traj: &mut [f64]) {
    for row in traj.chunks_mut(EPOCH_LEN) {
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if span <= 1e-12 * hi.abs().max(lo.abs()).max(1.0) {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v = (*v - lo) / span);
        }
    }
}

/// Origin shift then min-max scaling of an already resampled `4 × 250` trajectory.
pub fn normalize_resampled(traj: &mut [f64]) {
    shift_to_origin(traj);
    min_max_rows(traj);
}

/// Resample, origin-shift and min-max one pen-down segment into `4 × 250`.
pub fn normalize_trajectory(segment: &[KinSample]) -> Result<Tensor> {
    let mut t = resample_segment(segment)?;
    normalize_resampled(&mut t);
    Tensor::new(&[N_KINEMATICS, EPOCH_LEN], t)
}

/// Per-epoch, per-channel z-scoring with population standard deviation.
pub fn znorm_channels(epochs: &Tensor) -> Result<Tensor> {
    if epochs.ndim() != 3 {
        return Err(dim_err!("expected trials x channels x time, got {:?}", epochs.shape()));
    }
    let t = epochs.shape()[2];
    let mut out = epochs.clone();
    for row in out.data_mut().chunks_mut(t) {
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        let std = libm::sqrt(var);
        if std < 1e-12 {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }
    Ok(out)
}

/// z-scores EEG and shift/min-max scales every trajectory.
pub fn normalize_epoch_set(set: &EpochSet) -> Result<EpochSet> {
    let mut trajectories = set.trajectories.clone();
    for traj in trajectories.data_mut().chunks_mut(N_KINEMATICS * EPOCH_LEN) {
        normalize_resampled(traj);
    }
    Ok(EpochSet {
        epochs: znorm_channels(&set.epochs)?,
        trajectories,
        labels: set.labels.clone(),
        onsets: set.onsets.clone(),
    })
}
