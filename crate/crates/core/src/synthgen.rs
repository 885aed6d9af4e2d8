//! Seeded synthetic recording sessions with planted class structure.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{param_err, Result};
use crate::seed::derive_seed;
use crate::session::{Event, Glyph, KinSample, PenEvent, RawSession, EPOCH_LEN, N_CHANNELS, N_CLASSES, PHRASE, SAMPLE_RATE_HZ};
use crate::tensor::Tensor;

/// Column of the mixing matrix that carries the blink source.
pub const BLINK_SOURCE: usize = N_CLASSES;
pub const N_SOURCES: usize = N_CLASSES + 1;
pub const BLINK_CHANNEL: usize = 0;

const LEAD_IN: usize = 500;
const TAIL: usize = 500;
const GAP: (usize, usize) = (100, 200);
const BLINK_WIDTH_S: f64 = 0.06;
const BLINK_INTERVAL_S: (f64, f64) = (2.0, 8.0);

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_repetitions: usize,
    /// Class-signal to background power ratio; `+∞` disables the background.
    pub snr_db: f64,
    /// Band that holds the class oscillations, in Hz.
    pub class_band: (f64, f64),
    pub seed: u64,
    /// Standard deviation of positional jitter on the pen trajectories.
    pub jitter: f64,
    /// Blink peak on the frontal channel relative to the class-signal RMS; 0 disables blinks.
    pub blink_amplitude: f64,
    /// Per-trial multiplicative amplitude spread of the class source.
    pub amplitude_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_repetitions: 25,
            snr_db: 5.0,
            class_band: (0.5, 8.0),
            seed: 42,
            jitter: 0.01,
            blink_amplitude: 20.0,
            amplitude_jitter: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_repetitions == 0 {
            return Err(param_err!("n_repetitions must be at least 1"));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(param_err!("snr_db must be finite or +inf, got {}", self.snr_db));
        }
        let (lo, hi) = self.class_band;
        if !(lo > 0.0 && hi > lo && hi < SAMPLE_RATE_HZ / 2.0) {
            return Err(param_err!("class band ({}, {}) invalid", lo, hi));
        }
        if !(self.jitter >= 0.0) || !(self.blink_amplitude >= 0.0) || !(self.amplitude_jitter >= 0.0) {
            return Err(param_err!("jitter and amplitudes must be non-negative"));
        }
        Ok(())
    }

    /// Oscillation frequency of each class: evenly spaced over the central
    /// part of the band so the windowed spectrum stays inside it.
    pub fn class_frequencies(&self) -> [f64; N_CLASSES] {
        let (lo, hi) = self.class_band;
        let (a, b) = (lo + 0.27 * (hi - lo), hi - 0.33 * (hi - lo));
        core::array::from_fn(|c| a + (b - a) * c as f64 / (N_CLASSES - 1) as f64)
    }
}

/// Pen path and pressure profile of one glyph.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterTemplate {
    pub char_class: usize,
    pub stroke: Vec<[f64; 2]>,
    /// Pressure `base + swing · sin(πτ)` over normalized time τ.
    pub pressure: [f64; 2],
}

impl CharacterTemplate {
    pub fn for_glyph(glyph: Glyph) -> Self {
        let stroke: Vec<[f64; 2]> = match glyph {
            Glyph::H => vec![[0.0, 1.0], [0.0, 0.0], [0.0, 0.5], [0.6, 0.5], [0.6, 1.0], [0.6, 0.0]],
            Glyph::E => vec![[0.6, 1.0], [0.0, 1.0], [0.0, 0.5], [0.5, 0.5], [0.0, 0.5], [0.0, 0.0], [0.6, 0.0]],
            Glyph::L => vec![[0.0, 1.0], [0.0, 0.0], [0.6, 0.0]],
            Glyph::O => (0..=16)
                .map(|i| {
                    let a = PI / 2.0 + 2.0 * PI * i as f64 / 16.0;
                    [0.3 + 0.3 * libm::cos(a), 0.5 + 0.5 * libm::sin(a)]
                })
                .collect(),
            Glyph::Comma => vec![[0.1, 0.1], [0.1, 0.0], [0.0, -0.2]],
            Glyph::W => vec![[0.0, 1.0], [0.15, 0.0], [0.3, 0.7], [0.45, 0.0], [0.6, 1.0]],
            Glyph::R => vec![[0.0, 0.0], [0.0, 1.0], [0.5, 1.0], [0.6, 0.85], [0.5, 0.6], [0.0, 0.6], [0.6, 0.0]],
            Glyph::D => vec![[0.0, 0.0], [0.0, 1.0], [0.3, 1.0], [0.6, 0.7], [0.6, 0.3], [0.3, 0.0], [0.0, 0.0]],
            Glyph::Exclamation => vec![[0.1, 1.0], [0.1, 0.3], [0.1, 0.05], [0.1, 0.0]],
        };
        let c = glyph.class() as f64;
        Self {
            char_class: glyph.class(),
            stroke,
            pressure: [0.4 + 0.02 * c, 0.3],
        }
    }

    fn point_at(&self, u: f64) -> [f64; 2] {
        let lens: Vec<f64> = self
            .stroke
            .windows(2)
            .map(|w| libm::hypot(w[1][0] - w[0][0], w[1][1] - w[0][1]))
            .collect();
        let total: f64 = lens.iter().sum();
        let mut target = u.clamp(0.0, 1.0) * total;
        for (w, &len) in self.stroke.windows(2).zip(&lens) {
            if target <= len && len > 0.0 {
                let f = target / len;
                return [w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])];
            }
            target -= len;
        }
        *self.stroke.last().expect("stroke has vertices")
    }
}

/// One second of pen kinematics at the EEG rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub pressure: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// Speed of the planar path by central differences, one-sided at the ends.
pub fn path_speed(x: &[f64], y: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let dt = (b - a) as f64 / fs;
            libm::hypot(x[b] - x[a], y[b] - y[a]) / dt
        })
        .collect()
}

/// Traverses the template with a smooth, strictly positive speed profile and
/// adds Gaussian positional jitter.
pub fn gen_character_trajectory(template: &CharacterTemplate, jitter: f64, rng: &mut ChaCha8Rng) -> Trajectory {
    let n = EPOCH_LEN;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut pressure = Vec::with_capacity(n);
    for i in 0..n {
        let tau = i as f64 / (n - 1) as f64;
        let u = tau - 0.8 * libm::sin(2.0 * PI * tau) / (2.0 * PI);
        let p = template.point_at(u);
        let (jx, jy) = if jitter > 0.0 {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            (jitter * a, jitter * b)
        } else {
            (0.0, 0.0)
        };
        x.push(p[0] + jx);
        y.push(p[1] + jy);
        pressure.push(template.pressure[0] + template.pressure[1] * libm::sin(PI * tau));
    }
    let velocity = path_speed(&x, &y, SAMPLE_RATE_HZ);
    Trajectory {
        x,
        y,
        pressure,
        velocity,
    }
}

/// Planted generative factors, for oracle checks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `32 × 10`: one column per class source, the last for the blink.
    pub mixing: Tensor,
    /// `10 × S` source activity.
    pub sources: Tensor,
    /// `32 × S` scaled background noise.
    pub noise: Tensor,
    pub offsets: Vec<f64>,
    pub class_frequencies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub session: RawSession,
    pub truth: GroundTruth,
}

/// Unit-variance 1/f noise from Kellet's filter over white Gaussian input.
pub fn pink_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            b[0] = 0.99886 * b[0] + w * 0.055_517_9;
            b[1] = 0.99332 * b[1] + w * 0.075_075_9;
            b[2] = 0.96900 * b[2] + w * 0.153_852;
            b[3] = 0.86650 * b[3] + w * 0.310_485_6;
            b[4] = 0.55000 * b[4] + w * 0.532_952_2;
            b[5] = -0.7616 * b[5] - w * 0.016_898;
            let v = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
            b[6] = w * 0.115_926;
            v
        })
        .collect();
    let mean = out.iter().sum::<f64>() / len as f64;
    let sd = libm::sqrt(out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64);
    out.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    out
}

/// Builds a session of `n_repetitions` phrase repetitions: class sources
/// mixed onto 32 channels, 1/f background, frontal blinks and DC offsets.
pub fn gen_session(cfg: &SynthConfig) -> Result<SynthSession> {
    cfg.validate()?;
    let mut layout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth/layout"));
    let mut mix_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth/mixing"));
    let mut kin_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth/kinematics"));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth/noise"));
    let mut blink_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth/blink"));

    let mut onsets = Vec::with_capacity(cfg.n_repetitions * PHRASE.len());
    let mut t = LEAD_IN;
    for _ in 0..cfg.n_repetitions {
        for g in PHRASE {
            onsets.push((t, g));
            t += EPOCH_LEN + layout_rng.random_range(GAP.0..=GAP.1);
        }
    }
    let n_samples = onsets.last().map_or(LEAD_IN, |&(t0, _)| t0 + EPOCH_LEN) + TAIL;
    let c = N_CHANNELS;

    let mut mixing = vec![0.0; c * N_SOURCES];
    for ch in 0..c {
        for k in 0..N_CLASSES {
            mixing[ch * N_SOURCES + k] = StandardNormal.sample(&mut mix_rng);
        }
    }
    for (ch, w) in [1.0, 0.6, 0.4, 0.25, 0.15].iter().enumerate() {
        mixing[(BLINK_CHANNEL + ch) * N_SOURCES + BLINK_SOURCE] = *w;
    }
    let phases: Vec<f64> = (0..N_CLASSES).map(|_| mix_rng.random_range(0.0..2.0 * PI)).collect();
    let freqs = cfg.class_frequencies();

    let mut sources = vec![0.0; N_SOURCES * n_samples];
    let mut events = Vec::with_capacity(2 * onsets.len());
    let mut kinematics = Vec::with_capacity(onsets.len() * EPOCH_LEN);
    for &(t0, g) in &onsets {
        let k = g.class();
        let amp = 1.0 + cfg.amplitude_jitter * { let z: f64 = StandardNormal.sample(&mut layout_rng); z };
        for i in 0..EPOCH_LEN {
            let hann = 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / (EPOCH_LEN - 1) as f64);
            let s = libm::sin(2.0 * PI * freqs[k] * i as f64 / SAMPLE_RATE_HZ + phases[k]);
            sources[k * n_samples + t0 + i] = amp * hann * s;
        }
        events.push(Event {
            sample_index: t0,
            kind: PenEvent::Down,
            char_class: k,
        });
        events.push(Event {
            sample_index: t0 + EPOCH_LEN,
            kind: PenEvent::Up,
            char_class: k,
        });
        let traj = gen_character_trajectory(&CharacterTemplate::for_glyph(g), cfg.jitter, &mut kin_rng);
        for i in 0..EPOCH_LEN {
            kinematics.push(KinSample {
                sample_index: t0 + i,
                x: traj.x[i],
                y: traj.y[i],
                pressure: traj.pressure[i],
                velocity: traj.velocity[i],
            });
        }
    }

    let mut eeg = vec![0.0; c * n_samples];
    for &(t0, g) in &onsets {
        let k = g.class();
        let src = &sources[k * n_samples + t0..k * n_samples + t0 + EPOCH_LEN];
        for ch in 0..c {
            let w = mixing[ch * N_SOURCES + k];
            for (e, s) in eeg[ch * n_samples + t0..ch * n_samples + t0 + EPOCH_LEN].iter_mut().zip(src) {
                *e += w * s;
            }
        }
    }
    let active = onsets.len() * EPOCH_LEN;
    let signal_power = eeg.iter().map(|v| v * v).sum::<f64>() / (c * active) as f64;
    let rms = libm::sqrt(signal_power);

    if cfg.blink_amplitude > 0.0 {
        let width = BLINK_WIDTH_S * SAMPLE_RATE_HZ;
        let reach = (6.0 * width) as usize;
        let mut tb = blink_rng.random_range(BLINK_INTERVAL_S.0..BLINK_INTERVAL_S.1) * SAMPLE_RATE_HZ;
        let blink = &mut sources[BLINK_SOURCE * n_samples..];
        while (tb as usize) < n_samples {
            let centre = tb as usize;
            for i in centre.saturating_sub(reach)..(centre + reach).min(n_samples) {
                let d = (i as f64 - tb) / width;
                blink[i] += cfg.blink_amplitude * rms * libm::exp(-0.5 * d * d);
            }
            tb += blink_rng.random_range(BLINK_INTERVAL_S.0..BLINK_INTERVAL_S.1) * SAMPLE_RATE_HZ;
        }
        for ch in 0..c {
            let w = mixing[ch * N_SOURCES + BLINK_SOURCE];
            if w != 0.0 {
                for i in 0..n_samples {
                    eeg[ch * n_samples + i] += w * blink[i];
                }
            }
        }
    }

    let mut noise = vec![0.0; c * n_samples];
    if cfg.snr_db.is_finite() {
        let sd = rms / libm::pow(10.0, cfg.snr_db / 20.0);
        for ch in 0..c {
            let p = pink_noise(n_samples, &mut noise_rng);
            for i in 0..n_samples {
                noise[ch * n_samples + i] = sd * p[i];
                eeg[ch * n_samples + i] += sd * p[i];
            }
        }
    }
    let offsets: Vec<f64> = (0..c).map(|_| noise_rng.random_range(-5.0..5.0) * rms).collect();
    for ch in 0..c {
        eeg[ch * n_samples..(ch + 1) * n_samples].iter_mut().for_each(|v| *v += offsets[ch]);
    }

    let session = RawSession::new(Tensor::new(&[c, n_samples], eeg)?, events, kinematics)?;
    Ok(SynthSession {
        session,
        truth: GroundTruth {
            mixing: Tensor::new(&[c, N_SOURCES], mixing)?,
            sources: Tensor::new(&[N_SOURCES, n_samples], sources)?,
            noise: Tensor::new(&[c, n_samples], noise)?,
            offsets,
            class_frequencies: freqs.to_vec(),
        },
    })
}
