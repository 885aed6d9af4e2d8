//! Trainable parameters and initialization.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// A named trainable tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub requires_grad: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            requires_grad: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Ordered parameter collection shared by every model in the crate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its slot.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(Param::new(name, value));
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `g`, in slot order.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if p.requires_grad {
                    g.param(p.value.clone())
                } else {
                    g.input(p.value.clone())
                }
            })
            .collect()
    }

    /// Adds the graph gradients of `vars` into the parameter buffers.
    pub fn accumulate_grads(&mut self, g: &Graph, vars: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            if let Some(gr) = g.grad(v) {
                p.grad.data_mut().iter_mut().zip(gr).for_each(|(a, b)| *a += b);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Param::zero_grad);
    }

    /// Replaces parameter values, checking names and shapes.
    pub fn load_values(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(dim_err!("expected {} tensors, got {}", self.params.len(), values.len()));
        }
        for (p, (name, t)) in self.params.iter_mut().zip(values) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(dim_err!(
                    "parameter {} {:?} does not match {} {:?}",
                    p.name,
                    p.value.shape(),
                    name,
                    t.shape()
                ));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

/// He-uniform weights: `U(−√(6/fan_in), √(6/fan_in))`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = libm::sqrt(6.0 / fan_in as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}
