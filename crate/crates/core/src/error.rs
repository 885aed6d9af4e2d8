use alloc::string::String;

/// Errors raised anywhere in the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("decomposition failed: {0}")]
    Decomposition(String),
    #[error("training diverged at step {step} (last finite loss {last_finite_loss:?})")]
    Diverged {
        step: usize,
        last_finite_loss: Option<f64>,
    },
    #[error("fold leakage: {0}")]
    Leakage(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::Error::Dimension(alloc::format!($($arg)*)) };
}
macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::Error::Contract(alloc::format!($($arg)*)) };
}
macro_rules! param_err {
    ($($arg:tt)*) => { $crate::Error::Parameter(alloc::format!($($arg)*)) };
}
pub(crate) use {contract_err, dim_err, param_err};
