//! Preprocessing of raw EEG and pen kinematics into normalized epochs.

pub mod epochs;
pub mod filter;
pub mod folds;
pub mod ica;
pub mod pipeline;
pub mod reference;

pub use epochs::{extract_epochs, normalize_trajectory, znorm_channels, EpochSet, Extraction};
pub use filter::{butter_bandpass, Sos};
pub use folds::{make_folds, FoldAssignment};
pub use ica::{fast_ica, reject_eog, IcaDecomposition};
pub use pipeline::{preprocess, PreprocessConfig, Preprocessed, Stage};
pub use reference::average_reference;
