//! The fixed preprocessing chain from raw session to normalized, folded epochs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dsp::epochs::{extract_epochs, normalize_epoch_set, EpochSet};
use crate::dsp::filter::butter_bandpass;
use crate::dsp::folds::{make_folds, FoldAssignment, N_FOLDS};
use crate::dsp::ica::{fast_ica, reject_eog};
use crate::dsp::reference::average_reference;
use crate::error::{contract_err, Result};
use crate::session::{RawSession, Warning};
use crate::tensor::Tensor;

/// Continuous-signal stages, in their canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    AverageReference,
    BroadBandpass,
    IcaRejection,
    NarrowBandpass,
}

impl Stage {
    pub const CANONICAL: [Stage; 4] = [
        Stage::AverageReference,
        Stage::BroadBandpass,
        Stage::IcaRejection,
        Stage::NarrowBandpass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::AverageReference => "average_reference",
            Stage::BroadBandpass => "broad_bandpass",
            Stage::IcaRejection => "ica_rejection",
            Stage::NarrowBandpass => "narrow_bandpass",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::CANONICAL.into_iter().find(|st| st.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub broad_band: (f64, f64),
    pub narrow_band: (f64, f64),
    pub filter_order: usize,
    /// `None` uses channels − 1 (average referencing removes one rank).
    pub ica_components: Option<usize>,
    /// ICA is fitted on every `k`-th sample and applied to all samples.
    pub ica_fit_decimation: usize,
    pub eog_threshold: f64,
    pub frontal_channel: usize,
    pub ica_seed: u64,
    pub n_folds: usize,
    pub fold_seed: u64,
    /// Continuous-stage order; epoching and normalization always follow.
    pub stages: Vec<Stage>,
    /// Must be set for any `stages` other than the canonical order.
    pub allow_custom_order: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            broad_band: (1.0, 45.0),
            narrow_band: (0.5, 8.0),
            filter_order: 4,
            ica_components: None,
            ica_fit_decimation: 4,
            eog_threshold: 0.7,
            frontal_channel: 0,
            ica_seed: 0,
            n_folds: N_FOLDS,
            fold_seed: 0,
            stages: Stage::CANONICAL.to_vec(),
            allow_custom_order: false,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages != Stage::CANONICAL && !self.allow_custom_order {
            return Err(contract_err!(
                "stage order {:?} differs from the canonical chain; set allow_custom_order to override",
                self.stages
            ));
        }
        if self.ica_fit_decimation == 0 {
            return Err(contract_err!("ica_fit_decimation must be at least 1"));
        }
        Ok(())
    }
}

/// Summary of the ocular-artifact stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IcaReport {
    pub n_components: usize,
    pub rejected: Vec<usize>,
    pub correlations: Vec<f64>,
    pub converged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub epochs: EpochSet,
    pub folds: FoldAssignment,
    pub ica: Option<IcaReport>,
    pub warnings: Vec<Warning>,
}

/// Runs the continuous stages on the session EEG, then epochs, normalizes and folds.
pub fn preprocess(session: &RawSession, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    let mut eeg = session.eeg().clone();
    let mut warnings = Vec::new();
    let mut ica = None;
    let mut referenced = false;
    for stage in &cfg.stages {
        eeg = match stage {
            Stage::AverageReference => {
                referenced = true;
                average_reference(&eeg)?
            }
            Stage::BroadBandpass => butter_bandpass(&eeg, cfg.broad_band.0, cfg.broad_band.1, cfg.filter_order)?,
            Stage::NarrowBandpass => butter_bandpass(&eeg, cfg.narrow_band.0, cfg.narrow_band.1, cfg.filter_order)?,
            Stage::IcaRejection => {
                let (cleaned, report) = ica_stage(&eeg, cfg, referenced, &mut warnings)?;
                ica = Some(report);
                cleaned
            }
        };
    }
    let extraction = extract_epochs(&session.with_eeg(eeg)?)?;
    warnings.extend(extraction.warnings);
    let epochs = normalize_epoch_set(&extraction.set)?;
    let (folds, fold_warnings) = make_folds(&epochs.labels, cfg.n_folds, cfg.fold_seed)?;
    warnings.extend(fold_warnings);
    Ok(Preprocessed {
        epochs,
        folds,
        ica,
        warnings,
    })
}

fn ica_stage(eeg: &Tensor, cfg: &PreprocessConfig, referenced: bool, warnings: &mut Vec<Warning>) -> Result<(Tensor, IcaReport)> {
    let (c, s) = (eeg.shape()[0], eeg.shape()[1]);
    if cfg.frontal_channel >= c {
        return Err(contract_err!("frontal channel {} outside {} channels", cfg.frontal_channel, c));
    }
    let n = cfg.ica_components.unwrap_or(if referenced { c - 1 } else { c });
    let step = cfg.ica_fit_decimation;
    let fit = if step == 1 {
        eeg.clone()
    } else {
        let m = s.div_ceil(step);
        let mut d = vec![0.0; c * m];
        for ch in 0..c {
            for (j, t) in (0..s).step_by(step).enumerate() {
                d[ch * m + j] = eeg.data()[ch * s + t];
            }
        }
        Tensor::new(&[c, m], d)?
    };
    let mut decomp = fast_ica(&fit, n, cfg.ica_seed)?;
    for (i, ok) in decomp.converged.iter().enumerate() {
        if !ok {
            warnings.push(Warning::new("ica", format!("component {} did not converge", i)));
        }
    }
    if step != 1 {
        decomp.sources = decomp.transform(eeg)?;
    }
    let frontal = eeg.row(cfg.frontal_channel).to_vec();
    let rejection = reject_eog(&decomp, &frontal, cfg.eog_threshold)?;
    let report = IcaReport {
        n_components: n,
        rejected: rejection.rejected,
        correlations: rejection.correlations,
        converged: decomp.converged.iter().filter(|&&c| c).count(),
    };
    Ok((rejection.cleaned, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scrambled_order_needs_override() {
        let mut cfg = PreprocessConfig::default();
        cfg.stages = vec![Stage::BroadBandpass, Stage::AverageReference, Stage::IcaRejection, Stage::NarrowBandpass];
        assert!(matches!(cfg.validate(), Err(crate::Error::Contract(_))));
        cfg.allow_custom_order = true;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::CANONICAL {
            assert_eq!(Stage::parse(s.name()), Some(s));
        }
    }
}
