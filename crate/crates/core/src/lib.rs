#![no_std]
extern crate alloc;

pub mod autograd;
pub mod cebra;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod optim;
pub mod seed;
pub mod session;
pub mod synthgen;
pub mod tensor;

pub use autograd::{Conv1dSpec, Graph, Var};
pub use error::{Error, Result};
pub use nn::{Param, ParamStore};
pub use optim::{adam_step, AdamState};
pub use tensor::Tensor;
