//! TOML experiment configuration and its translation into core settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scribe_core::cebra::{CebraConfig, SUPPORTED_DIMS};
use scribe_core::dsp::{PreprocessConfig, Stage};
use scribe_core::evaluation::TsneConfig;
use scribe_core::models::{Architecture, TrainConfig};
use scribe_core::seed::derive_seed;
use scribe_core::synthgen::SynthConfig;

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic,
    Files { eeg: PathBuf, events: PathBuf, kinematics: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_repetitions: usize,
    pub snr_db: f64,
    pub class_band: (f64, f64),
    pub jitter: f64,
    pub blink_amplitude: f64,
    pub amplitude_jitter: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            n_repetitions: d.n_repetitions,
            snr_db: d.snr_db,
            class_band: d.class_band,
            jitter: d.jitter,
            blink_amplitude: d.blink_amplitude,
            amplitude_jitter: d.amplitude_jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub broad_band: (f64, f64),
    pub narrow_band: (f64, f64),
    pub filter_order: usize,
    pub ica_components: Option<usize>,
    pub ica_fit_decimation: usize,
    pub eog_threshold: f64,
    pub frontal_channel: usize,
    pub n_folds: usize,
    pub stages: Vec<String>,
    pub allow_custom_order: bool,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let d = PreprocessConfig::default();
        Self {
            broad_band: d.broad_band,
            narrow_band: d.narrow_band,
            filter_order: d.filter_order,
            ica_components: d.ica_components,
            ica_fit_decimation: d.ica_fit_decimation,
            eog_threshold: d.eog_threshold,
            frontal_channel: d.frontal_channel,
            n_folds: d.n_folds,
            stages: d.stages.iter().map(|s| s.name().to_string()).collect(),
            allow_custom_order: d.allow_custom_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CebraSection {
    pub batch_size: usize,
    pub lr: f64,
    pub offset_frames: usize,
    pub temperature: f64,
    pub steps: usize,
}

impl Default for CebraSection {
    fn default() -> Self {
        let d = CebraConfig::default();
        Self {
            batch_size: d.batch_size,
            lr: d.lr,
            offset_frames: d.offset_frames,
            temperature: d.temperature,
            steps: d.steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub val_fraction: f64,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lr: d.lr,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            val_fraction: d.val_fraction,
            patience: d.patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BaselineCnn,
    Eegnet,
    Fusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_embed: Option<usize>,
}

impl ModelEntry {
    pub fn architecture(&self) -> Result<Architecture, Failure> {
        match (self.kind, self.d_embed) {
            (ModelKind::BaselineCnn, None) => Ok(Architecture::BaselineCnn),
            (ModelKind::Eegnet, None) => Ok(Architecture::EegNet),
            (ModelKind::Fusion, Some(d)) if d > 0 => Ok(Architecture::Fusion { d_embed: d }),
            (ModelKind::Fusion, _) => Err(Failure::config("fusion models need a positive d_embed")),
            (_, Some(_)) => Err(Failure::config("only fusion models take d_embed")),
        }
    }

    /// Directory-safe identifier, e.g. `fusion_d16`.
    pub fn label(&self) -> String {
        match self.d_embed {
            Some(d) => format!("{}_d{}", self.architecture().map(|a| a.name()).unwrap_or("fusion"), d),
            None => self.architecture().map(|a| a.name()).unwrap_or("model").to_string(),
        }
    }
}

fn default_models() -> Vec<ModelEntry> {
    let mut m = vec![
        ModelEntry {
            kind: ModelKind::BaselineCnn,
            d_embed: None,
        },
        ModelEntry {
            kind: ModelKind::Eegnet,
            d_embed: None,
        },
    ];
    m.extend(SUPPORTED_DIMS.iter().map(|&d| ModelEntry {
        kind: ModelKind::Fusion,
        d_embed: Some(d),
    }));
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionSection {
    pub enabled: bool,
    pub tsne_perplexity: f64,
    pub tsne_iters: usize,
    /// Keep every `stride`-th time point in embedding projections.
    pub embedding_stride: usize,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        Self {
            enabled: true,
            tsne_perplexity: 30.0,
            tsne_iters: 1000,
            embedding_stride: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub allow_unsupported_dims: bool,
    pub data: DataSource,
    pub synth: SynthSection,
    pub preprocess: PreprocessSection,
    pub cebra: CebraSection,
    pub train: TrainSection,
    pub models: Vec<ModelEntry>,
    pub projections: ProjectionSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            allow_unsupported_dims: false,
            data: DataSource::Synthetic,
            synth: SynthSection::default(),
            preprocess: PreprocessSection::default(),
            cebra: CebraSection::default(),
            train: TrainSection::default(),
            models: default_models(),
            projections: ProjectionSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses, resolves file paths against the config's directory and validates.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Files { eeg, events, kinematics } = &mut cfg.data {
            for p in [eeg, events, kinematics] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.models.is_empty() {
            return Err(Failure::config("at least one model must be configured"));
        }
        for m in &self.models {
            m.architecture()?;
            if let Some(d) = m.d_embed {
                if !SUPPORTED_DIMS.contains(&d) && !self.allow_unsupported_dims {
                    return Err(Failure::config(format!(
                        "d_embed {} not in {:?}; set allow_unsupported_dims to override",
                        d, SUPPORTED_DIMS
                    )));
                }
            }
        }
        if let DataSource::Files { eeg, events, kinematics } = &self.data {
            for p in [eeg, events, kinematics] {
                if !p.exists() {
                    return Err(Failure::config(format!("input file {} does not exist", p.display())));
                }
            }
        }
        self.preprocess_config()?.validate().map_err(|e| Failure::core("config", e))?;
        self.synth_config().validate().map_err(|e| Failure::core("config", e))?;
        self.train_config(0).validate().map_err(|e| Failure::core("config", e))?;
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            n_repetitions: s.n_repetitions,
            snr_db: s.snr_db,
            class_band: s.class_band,
            seed: derive_seed(self.seed, "synth"),
            jitter: s.jitter,
            blink_amplitude: s.blink_amplitude,
            amplitude_jitter: s.amplitude_jitter,
        }
    }

    pub fn preprocess_config(&self) -> Result<PreprocessConfig, Failure> {
        let p = &self.preprocess;
        let stages = p
            .stages
            .iter()
            .map(|s| Stage::parse(s).ok_or_else(|| Failure::config(format!("unknown stage {:?}", s))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PreprocessConfig {
            broad_band: p.broad_band,
            narrow_band: p.narrow_band,
            filter_order: p.filter_order,
            ica_components: p.ica_components,
            ica_fit_decimation: p.ica_fit_decimation,
            eog_threshold: p.eog_threshold,
            frontal_channel: p.frontal_channel,
            ica_seed: derive_seed(self.seed, "ica"),
            n_folds: p.n_folds,
            fold_seed: derive_seed(self.seed, "folds"),
            stages,
            allow_custom_order: p.allow_custom_order,
        })
    }

    pub fn cebra_config(&self, d_embed: usize, fold: usize) -> CebraConfig {
        let c = &self.cebra;
        CebraConfig {
            d_embed,
            batch_size: c.batch_size,
            lr: c.lr,
            offset_frames: c.offset_frames,
            temperature: c.temperature,
            steps: c.steps,
            seed: derive_seed(self.seed, &format!("cebra/d{}/fold{}", d_embed, fold)),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            seed,
            val_fraction: t.val_fraction,
            patience: t.patience,
        }
    }

    pub fn model_seed(&self, model: &ModelEntry, fold: usize) -> u64 {
        derive_seed(self.seed, &format!("model/{}/fold{}", model.label(), fold))
    }

    pub fn tsne_config(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.projections.tsne_perplexity,
            iters: self.projections.tsne_iters,
            seed: derive_seed(self.seed, "tsne"),
            ..TsneConfig::default()
        }
    }

    /// Embedding widths needed by the configured fusion models, ascending.
    pub fn embed_dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.models.iter().filter_map(|m| m.d_embed).collect();
        d.sort_unstable();
        d.dedup();
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.models.len(), 7);
    }

    #[test]
    fn sparse_file_fills_defaults() {
        let cfg = ExperimentConfig::parse("seed = 7\n[cebra]\nsteps = 10\n[[models]]\nkind = \"fusion\"\nd_embed = 2\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.cebra.steps, 10);
        assert_eq!(cfg.cebra.batch_size, 1024);
        assert_eq!(cfg.embed_dims(), [2]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unsupported_dims_need_override() {
        let mut cfg = ExperimentConfig::parse("[[models]]\nkind = \"fusion\"\nd_embed = 3\n").unwrap();
        assert!(cfg.validate().is_err());
        cfg.allow_unsupported_dims = true;
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("sede = 1\n").is_err());
    }

    #[test]
    fn missing_input_files_fail_validation() {
        let cfg = ExperimentConfig::parse(
            "[data]\nsource = \"files\"\neeg = \"/nonexistent/eeg.stk\"\nevents = \"/nonexistent/e.csv\"\nkinematics = \"/nonexistent/k.csv\"\n",
        )
        .unwrap();
        assert!(matches!(cfg.validate(), Err(Failure::Config(_))));
    }
}
