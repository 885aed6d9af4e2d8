//! Finite-difference verification of graph gradients.

use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Compares the analytic gradient of a scalar function against central
/// differences with step `h`, for every entry of every input.
///
/// `build` records the function on a fresh graph given the input variables
/// and returns the scalar output. Relative error is
/// `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn grad_check<F>(build: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        passed: true,
    };
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match g.grad(v) {
            Some(gr) => gr.to_vec(),
            None => alloc::vec![0.0; inputs[i].len()],
        };
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let fp = eval(&probe)?;
            probe[i].data_mut()[j] = x0 - h;
            let fm = eval(&probe)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
