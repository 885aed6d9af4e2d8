//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in creation order; [`Graph::backward`]
//! walks the tape in exact reverse order. Graphs are cheap and meant to be
//! rebuilt for every forward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, param_err, Error, Result};
use crate::linalg::gemm;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 1-D (cross-correlation) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub groups: usize,
}

impl Conv1dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            pad_left: padding,
            pad_right: padding,
            groups: 1,
        }
    }

    /// Stride-1 padding that preserves length for kernel width `k`.
    pub fn same(k: usize) -> Self {
        Self {
            stride: 1,
            pad_left: (k - 1) / 2,
            pad_right: k / 2,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn output_len(&self, t: usize, k: usize) -> Result<usize> {
        let padded = t + self.pad_left + self.pad_right;
        if self.stride == 0 {
            return Err(param_err!("stride must be positive"));
        }
        if padded < k {
            return Err(dim_err!("kernel {} exceeds padded length {}", k, padded));
        }
        Ok((padded - k) / self.stride + 1)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Dense { x: Var, w: Var, b: Var },
    Conv1d { x: Var, w: Var, b: Var, spec: Conv1dSpec },
    Relu(Var),
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    AvgPool { x: Var, width: usize },
    SoftmaxXent { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    L2Normalize(Var),
    InfoNce {
        anchors: Var,
        positives: Var,
        negatives: Var,
        temperature: f64,
        weights: Vec<f64>,
    },
    Sum(Var),
    Square(Var),
    Scale(Var, f64),
    Add(Var, Var),
    Mul(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape plus gradient buffers for its leaves.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

// Bounds the im2col scratch buffer (in f64 entries).
const IM2COL_BUDGET: usize = 1 << 22;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a tracked leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut() {
            *g = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// `x[B×I] · W[I×O] + b[O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || bs[0] != ws[1] {
            return Err(dim_err!("dense: x{:?} W{:?} b{:?}", xs, ws, bs));
        }
        let (bn, i, o) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(bn * o);
        for _ in 0..bn {
            out.extend_from_slice(self.value(b).data());
        }
        gemm(bn, i, o, 1.0, self.value(x).data(), false, self.value(w).data(), false, 1.0, &mut out);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::new(&[bn, o], out)?, Op::Dense { x, w, b }, rg))
    }

    /// Cross-correlation of `x[B×C_in×T]` with `K[C_out×C_in/groups×k]` plus bias.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, spec: Conv1dSpec) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 1 || bs[0] != ws[0] {
            return Err(dim_err!("conv1d: x{:?} K{:?} b{:?}", xs, ws, bs));
        }
        let g = spec.groups;
        if g == 0 || xs[1] % g != 0 || ws[0] % g != 0 || xs[1] / g != ws[1] {
            return Err(dim_err!("conv1d: {} groups incompatible with x{:?} K{:?}", g, xs, ws));
        }
        let geo = ConvGeometry::new(xs, ws, spec)?;
        let mut out = vec![0.0; geo.batch * geo.c_out * geo.t_out];
        geo.forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &mut out);
        let rg = self.rg(&[x, w, b]);
        let t = Tensor::new(&[geo.batch, geo.c_out, geo.t_out], out)?;
        Ok(self.push(t, Op::Conv1d { x, w, b, spec }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || core::mem::replace(&mut seen[a], true)) {
            return Err(dim_err!("permute: axes {:?} invalid for {:?}", axes, shape));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for_each_permuted(&shape, axes, |dst, s| out[dst] = src[s]);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Permute { x, axes: axes.to_vec() }, rg))
    }

    /// Concatenates `[B×F_i]` tensors along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| dim_err!("concat of nothing"))?;
        let bn = self.value(*first).shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != 2 || s[0] != bn {
                return Err(dim_err!("concat: part shape {:?} with batch {}", s, bn));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(bn * total);
        for r in 0..bn {
            for (p, &wd) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * wd..(r + 1) * wd]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(&[bn, total], out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Mean over the last axis of `[B×C×T]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 3 {
            return Err(dim_err!("global_avg_pool expects 3-D, got {:?}", s));
        }
        let (bn, c, t) = (s[0], s[1], s[2]);
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(t)
            .map(|row| row.iter().sum::<f64>() / t as f64)
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[bn, c], out)?, Op::GlobalAvgPool(x), rg))
    }

    /// Non-overlapping mean pooling over the last axis; a ragged tail is dropped.
    pub fn avg_pool(&mut self, x: Var, width: usize) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 3 || width == 0 || s[2] < width {
            return Err(dim_err!("avg_pool width {} over {:?}", width, s));
        }
        let (bn, c, t) = (s[0], s[1], s[2]);
        let to = t / width;
        let mut out = Vec::with_capacity(bn * c * to);
        for row in self.value(x).data().chunks(t) {
            for j in 0..to {
                out.push(row[j * width..(j + 1) * width].iter().sum::<f64>() / width as f64);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[bn, c, to], out)?, Op::AvgPool { x, width }, rg))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.value(logits).shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(dim_err!("softmax_cross_entropy: logits {:?} vs {} labels", s, labels.len()));
        }
        let (bn, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label: bad, classes: k });
        }
        let mut probs = Vec::with_capacity(bn * k);
        let mut loss = 0.0;
        for (row, &label) in self.value(logits).data().chunks(k).zip(labels) {
            let p = softmax(row);
            let lse = log_sum_exp(row);
            loss += lse - row[label];
            probs.extend(p);
        }
        let rg = self.rg(&[logits]);
        let op = Op::SoftmaxXent {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss / bn as f64), op, rg))
    }

    /// Scales every row of a 2-D tensor to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 2 {
            return Err(dim_err!("l2_normalize expects 2-D, got {:?}", s));
        }
        let d = s[1];
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(d) {
            let n = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>()).max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
        }
        let t = Tensor::new(self.value(x).shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::L2Normalize(x), rg))
    }

    /// InfoNCE with dot-product similarity.
    ///
    /// `negatives` is either `[K×d]`, shared by every anchor, or `[B×K×d]`
    /// with a private set per anchor.
    pub fn infonce(&mut self, anchors: Var, positives: Var, negatives: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(param_err!("temperature must be positive, got {}", temperature));
        }
        let (a, p, n) = (self.value(anchors), self.value(positives), self.value(negatives));
        if a.ndim() != 2 || a.shape() != p.shape() {
            return Err(dim_err!("infonce: anchors {:?} positives {:?}", a.shape(), p.shape()));
        }
        let (bn, d) = (a.shape()[0], a.shape()[1]);
        let k = match n.shape() {
            [k, dd] if *dd == d => *k,
            [b2, k, dd] if *b2 == bn && *dd == d => *k,
            s => return Err(dim_err!("infonce: negatives {:?} for anchors [{}x{}]", s, bn, d)),
        };
        let sims = infonce_similarities(a.data(), p.data(), n.data(), n.ndim() == 2, bn, k, d, temperature);
        let mut weights = Vec::with_capacity(bn * (k + 1));
        let mut loss = 0.0;
        for row in sims.chunks(k + 1) {
            loss += log_sum_exp(row) - row[0];
            weights.extend(softmax(row));
        }
        let rg = self.rg(&[anchors, positives, negatives]);
        let op = Op::InfoNce {
            anchors,
            positives,
            negatives,
            temperature,
            weights,
        };
        Ok(self.push(Tensor::scalar(loss / bn as f64), op, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v * v);
        let rg = self.rg(&[x]);
        self.push(t, Op::Square(x), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, |_, _| Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, |_, _| Op::Mul(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: impl Fn(Var, Var) -> Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err!("elementwise op on {:?} and {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op(a, b), rg))
    }

    /// Back-propagates from a scalar `loss`, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, g, &mut grads)?;
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &nodes[i].op {
            Op::Leaf => {
                accumulate(&mut self.leaf_grads[i], &g, nodes[i].value.len());
            }
            Op::Dense { x, w, b } => {
                let (xs, ws) = (nodes[x.0].value.shape(), nodes[w.0].value.shape());
                let (bn, inn, o) = (xs[0], xs[1], ws[1]);
                if wants(*x) {
                    let mut dx = vec![0.0; bn * inn];
                    gemm(bn, o, inn, 1.0, &g, false, nodes[w.0].value.data(), true, 0.0, &mut dx);
                    accumulate(&mut grads[x.0], &dx, dx.len());
                }
                if wants(*w) {
                    let mut dw = vec![0.0; inn * o];
                    gemm(inn, bn, o, 1.0, nodes[x.0].value.data(), true, &g, false, 0.0, &mut dw);
                    accumulate(&mut grads[w.0], &dw, dw.len());
                }
                if wants(*b) {
                    let mut db = vec![0.0; o];
                    for row in g.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    accumulate(&mut grads[b.0], &db, o);
                }
            }
            Op::Conv1d { x, w, b, spec } => {
                let geo = ConvGeometry::new(nodes[x.0].value.shape(), nodes[w.0].value.shape(), *spec)?;
                let xd = nodes[x.0].value.data();
                let wd = nodes[w.0].value.data();
                let mut dx = wants(*x).then(|| vec![0.0; xd.len()]);
                let mut dw = wants(*w).then(|| vec![0.0; wd.len()]);
                geo.backward(xd, wd, &g, dx.as_deref_mut(), dw.as_deref_mut());
                if let Some(dx) = dx {
                    accumulate(&mut grads[x.0], &dx, dx.len());
                }
                if let Some(dw) = dw {
                    accumulate(&mut grads[w.0], &dw, dw.len());
                }
                if wants(*b) {
                    let mut db = vec![0.0; geo.c_out];
                    for (r, row) in g.chunks(geo.t_out).enumerate() {
                        db[r % geo.c_out] += row.iter().sum::<f64>();
                    }
                    accumulate(&mut grads[b.0], &db, db.len());
                }
            }
            Op::Relu(x) => {
                let dx: Vec<f64> = nodes[x.0]
                    .value
                    .data()
                    .iter()
                    .zip(&g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(&mut grads[x.0], &dx, dx.len());
            }
            Op::Reshape(x) => accumulate(&mut grads[x.0], &g, g.len()),
            Op::Permute { x, axes } => {
                let shape = nodes[x.0].value.shape();
                let mut dx = vec![0.0; g.len()];
                for_each_permuted(shape, axes, |dst, src| dx[src] = g[dst]);
                accumulate(&mut grads[x.0], &dx, dx.len());
            }
            Op::Concat(parts) => {
                let bn = nodes[i].value.shape()[0];
                let total = nodes[i].value.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let wd = nodes[p.0].value.shape()[1];
                    if wants(*p) {
                        let mut dp = Vec::with_capacity(bn * wd);
                        for r in 0..bn {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + wd]);
                        }
                        accumulate(&mut grads[p.0], &dp, dp.len());
                    }
                    offset += wd;
                }
            }
            Op::GlobalAvgPool(x) => {
                let t = nodes[x.0].value.shape()[2];
                let dx: Vec<f64> = g.iter().flat_map(|&gv| core::iter::repeat(gv / t as f64).take(t)).collect();
                accumulate(&mut grads[x.0], &dx, dx.len());
            }
            Op::AvgPool { x, width } => {
                let t = nodes[x.0].value.shape()[2];
                let to = t / width;
                let mut dx = vec![0.0; nodes[x.0].value.len()];
                for (r, row) in g.chunks(to).enumerate() {
                    for (j, &gv) in row.iter().enumerate() {
                        for s in 0..*width {
                            dx[r * t + j * width + s] = gv / *width as f64;
                        }
                    }
                }
                accumulate(&mut grads[x.0], &dx, dx.len());
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let bn = labels.len();
                let k = probs.len() / bn;
                let scale = g[0] / bn as f64;
                let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dl[r * k + l] -= scale;
                }
                accumulate(&mut grads[logits.0], &dl, dl.len());
            }
            Op::L2Normalize(x) => {
                let xv = nodes[x.0].value.data();
                let yv = nodes[i].value.data();
                let d = nodes[x.0].value.shape()[1];
                let mut dx = vec![0.0; xv.len()];
                for r in 0..xv.len() / d {
                    let xr = &xv[r * d..(r + 1) * d];
                    let yr = &yv[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let n = libm::sqrt(xr.iter().map(|v| v * v).sum::<f64>()).max(1e-12);
                    let yg: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] = (gr[j] - yr[j] * yg) / n;
                    }
                }
                accumulate(&mut grads[x.0], &dx, dx.len());
            }
            Op::InfoNce {
                anchors,
                positives,
                negatives,
                temperature,
                weights,
            } => {
                let a = nodes[anchors.0].value.data();
                let p = nodes[positives.0].value.data();
                let n = &nodes[negatives.0].value;
                let shared = n.ndim() == 2;
                let d = nodes[anchors.0].value.shape()[1];
                let bn = a.len() / d;
                let k = weights.len() / bn - 1;
                let c = g[0] / (bn as f64 * temperature);
                // coefficient matrix over negatives: c * w_ik
                let mut wn = vec![0.0; bn * k];
                let mut w0 = vec![0.0; bn];
                for r in 0..bn {
                    w0[r] = c * (weights[r * (k + 1)] - 1.0);
                    for j in 0..k {
                        wn[r * k + j] = c * weights[r * (k + 1) + 1 + j];
                    }
                }
                if wants(*anchors) {
                    let mut da = vec![0.0; a.len()];
                    if shared {
                        gemm(bn, k, d, 1.0, &wn, false, n.data(), false, 0.0, &mut da);
                    } else {
                        for r in 0..bn {
                            let nr = &n.data()[r * k * d..(r + 1) * k * d];
                            gemm(1, k, d, 1.0, &wn[r * k..(r + 1) * k], false, nr, false, 0.0, &mut da[r * d..(r + 1) * d]);
                        }
                    }
                    for r in 0..bn {
                        for j in 0..d {
                            da[r * d + j] += w0[r] * p[r * d + j];
                        }
                    }
                    accumulate(&mut grads[anchors.0], &da, da.len());
                }
                if wants(*positives) {
                    let mut dp = vec![0.0; p.len()];
                    for r in 0..bn {
                        for j in 0..d {
                            dp[r * d + j] = w0[r] * a[r * d + j];
                        }
                    }
                    accumulate(&mut grads[positives.0], &dp, dp.len());
                }
                if wants(*negatives) {
                    let mut dn = vec![0.0; n.len()];
                    if shared {
                        gemm(k, bn, d, 1.0, &wn, true, a, false, 0.0, &mut dn);
                    } else {
                        for r in 0..bn {
                            for j in 0..k {
                                let cw = wn[r * k + j];
                                for q in 0..d {
                                    dn[(r * k + j) * d + q] = cw * a[r * d + q];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[negatives.0], &dn, dn.len());
                }
            }
            Op::Sum(x) => {
                let n = nodes[x.0].value.len();
                accumulate(&mut grads[x.0], &vec![g[0]; n], n);
            }
            Op::Square(x) => {
                let dx: Vec<f64> = nodes[x.0].value.data().iter().zip(&g).map(|(v, gv)| 2.0 * v * gv).collect();
                accumulate(&mut grads[x.0], &dx, dx.len());
            }
            Op::Scale(x, c) => {
                let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate(&mut grads[x.0], &dx, dx.len());
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], &g, g.len());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], &g, g.len());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if wants(*a) {
                    let da: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], &da, da.len());
                }
                if wants(*b) {
                    let db: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[b.0], &db, db.len());
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64], n: usize) {
    debug_assert_eq!(g.len(), n);
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

/// Calls `f(dst, src)` for every element of a permutation of `shape` by `axes`.
fn for_each_permuted(shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for dst in 0..total {
        f(dst, src);
        for d in (0..nd).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| libm::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(row.iter().map(|v| libm::exp(v - m)).sum::<f64>())
}

/// Rows of `[s_pos, s_neg_1, …, s_neg_K]` scaled by `1/τ`.
#[allow(clippy::too_many_arguments)]
fn infonce_similarities(a: &[f64], p: &[f64], n: &[f64], shared: bool, bn: usize, k: usize, d: usize, tau: f64) -> Vec<f64> {
    let mut neg = vec![0.0; bn * k];
    if shared {
        gemm(bn, d, k, 1.0 / tau, a, false, n, true, 0.0, &mut neg);
    } else {
        for r in 0..bn {
            gemm(1, d, k, 1.0 / tau, &a[r * d..(r + 1) * d], false, &n[r * k * d..(r + 1) * k * d], true, 0.0, &mut neg[r * k..(r + 1) * k]);
        }
    }
    let mut out = Vec::with_capacity(bn * (k + 1));
    for r in 0..bn {
        let pos: f64 = a[r * d..(r + 1) * d].iter().zip(&p[r * d..(r + 1) * d]).map(|(x, y)| x * y).sum();
        out.push(pos / tau);
        out.extend_from_slice(&neg[r * k..(r + 1) * k]);
    }
    out
}

struct ConvGeometry {
    batch: usize,
    c_in: usize,
    t_in: usize,
    c_out: usize,
    k: usize,
    t_out: usize,
    spec: Conv1dSpec,
}

impl ConvGeometry {
    fn new(xs: &[usize], ws: &[usize], spec: Conv1dSpec) -> Result<Self> {
        let t_out = spec.output_len(xs[2], ws[2])?;
        Ok(Self {
            batch: xs[0],
            c_in: xs[1],
            t_in: xs[2],
            c_out: ws[0],
            k: ws[2],
            t_out,
            spec,
        })
    }

    fn cin_g(&self) -> usize {
        self.c_in / self.spec.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.spec.groups
    }

    fn chunk(&self) -> usize {
        let per_item = self.cin_g() * self.k * self.t_out;
        (IM2COL_BUDGET / per_item.max(1)).clamp(1, self.batch)
    }

    /// im2col for batch items `b0..b1` of group `g`: `[cin_g·k × (b1−b0)·t_out]`.
    fn im2col(&self, x: &[f64], g: usize, b0: usize, b1: usize, cols: &mut Vec<f64>) {
        let nb = b1 - b0;
        let width = nb * self.t_out;
        cols.clear();
        cols.resize(self.cin_g() * self.k * width, 0.0);
        let s = self.spec.stride;
        let pl = self.spec.pad_left as isize;
        for ci in 0..self.cin_g() {
            let c = g * self.cin_g() + ci;
            for kk in 0..self.k {
                let row = &mut cols[(ci * self.k + kk) * width..(ci * self.k + kk + 1) * width];
                for bi in 0..nb {
                    let xr = &x[((b0 + bi) * self.c_in + c) * self.t_in..((b0 + bi) * self.c_in + c + 1) * self.t_in];
                    for t in 0..self.t_out {
                        let pos = (t * s + kk) as isize - pl;
                        if pos >= 0 && (pos as usize) < self.t_in {
                            row[bi * self.t_out + t] = xr[pos as usize];
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
        let (cin_g, cout_g) = (self.cin_g(), self.cout_g());
        let kw = cin_g * self.k;
        let mut cols = Vec::new();
        let mut prod = Vec::new();
        let step = self.chunk();
        for b0 in (0..self.batch).step_by(step) {
            let b1 = (b0 + step).min(self.batch);
            let width = (b1 - b0) * self.t_out;
            for g in 0..self.spec.groups {
                self.im2col(x, g, b0, b1, &mut cols);
                prod.clear();
                prod.resize(cout_g * width, 0.0);
                gemm(cout_g, kw, width, 1.0, &w[g * cout_g * kw..(g + 1) * cout_g * kw], false, &cols, false, 0.0, &mut prod);
                for o in 0..cout_g {
                    let co = g * cout_g + o;
                    for bi in 0..b1 - b0 {
                        let dst = &mut out[((b0 + bi) * self.c_out + co) * self.t_out..((b0 + bi) * self.c_out + co + 1) * self.t_out];
                        let src = &prod[o * width + bi * self.t_out..o * width + (bi + 1) * self.t_out];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d = s + b[co]);
                    }
                }
            }
        }
    }

    fn backward(&self, x: &[f64], w: &[f64], g_out: &[f64], mut dx: Option<&mut [f64]>, mut dw: Option<&mut [f64]>) {
        let (cin_g, cout_g) = (self.cin_g(), self.cout_g());
        let kw = cin_g * self.k;
        let mut cols = Vec::new();
        let mut gg = Vec::new();
        let mut dcols = Vec::new();
        let step = self.chunk();
        for b0 in (0..self.batch).step_by(step) {
            let b1 = (b0 + step).min(self.batch);
            let nb = b1 - b0;
            let width = nb * self.t_out;
            for g in 0..self.spec.groups {
                gg.clear();
                gg.resize(cout_g * width, 0.0);
                for o in 0..cout_g {
                    let co = g * cout_g + o;
                    for bi in 0..nb {
                        let src = &g_out[((b0 + bi) * self.c_out + co) * self.t_out..((b0 + bi) * self.c_out + co + 1) * self.t_out];
                        gg[o * width + bi * self.t_out..o * width + (bi + 1) * self.t_out].copy_from_slice(src);
                    }
                }
                let wg = &w[g * cout_g * kw..(g + 1) * cout_g * kw];
                if let Some(dw) = dw.as_deref_mut() {
                    self.im2col(x, g, b0, b1, &mut cols);
                    gemm(cout_g, width, kw, 1.0, &gg, false, &cols, true, 1.0, &mut dw[g * cout_g * kw..(g + 1) * cout_g * kw]);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    dcols.clear();
                    dcols.resize(kw * width, 0.0);
                    gemm(kw, cout_g, width, 1.0, wg, true, &gg, false, 0.0, &mut dcols);
                    let s = self.spec.stride;
                    let pl = self.spec.pad_left as isize;
                    for ci in 0..cin_g {
                        let c = g * cin_g + ci;
                        for kk in 0..self.k {
                            let row = &dcols[(ci * self.k + kk) * width..(ci * self.k + kk + 1) * width];
                            for bi in 0..nb {
                                let base = ((b0 + bi) * self.c_in + c) * self.t_in;
                                for t in 0..self.t_out {
                                    let pos = (t * s + kk) as isize - pl;
                                    if pos >= 0 && (pos as usize) < self.t_in {
                                        dx[base + pos as usize] += row[bi * self.t_out + t];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn dense_examples() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[1., 2.]));
        let w = g.input(t(&[2, 2], &[1., 0., 0., 1.]));
        let b = g.input(t(&[2], &[0., 0.]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1., 2.]);

        let x = g.input(t(&[1, 2], &[1., 1.]));
        let w = g.input(t(&[2, 1], &[2., 3.]));
        let b = g.input(t(&[1], &[1.]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[6.]);

        let x = g.input(Tensor::zeros(&[1, 4]));
        let w = g.input(t(&[4, 1], &[0.3, -2., 7., 1.]));
        let b = g.input(t(&[1], &[5.]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[5.]);

        let bad = g.input(Tensor::zeros(&[3, 1]));
        assert!(matches!(g.dense(x, bad, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv1d_examples() {
        let mut g = Graph::new();
        let run = |g: &mut Graph, x: &[f64], k: &[f64], pad: usize| {
            let xv = g.input(t(&[1, 1, x.len()], x));
            let kv = g.input(t(&[1, 1, k.len()], k));
            let bv = g.input(t(&[1], &[0.]));
            let y = g.conv1d(xv, kv, bv, Conv1dSpec::new(1, pad)).unwrap();
            g.value(y).data().to_vec()
        };
        assert_eq!(run(&mut g, &[1., 2., 3.], &[1.], 0), vec![1., 2., 3.]);
        assert_eq!(run(&mut g, &[1., 2., 3., 4.], &[1., 1.], 0), vec![3., 5., 7.]);
        assert_eq!(run(&mut g, &[1., 1., 1.], &[1., 1., 1.], 1), vec![2., 3., 2.]);

        let xv = g.input(t(&[1, 1, 2], &[1., 2.]));
        let kv = g.input(t(&[1, 1, 3], &[1., 1., 1.]));
        let bv = g.input(t(&[1], &[0.]));
        assert!(matches!(g.conv1d(xv, kv, bv, Conv1dSpec::new(1, 0)), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv1d_stride_output_length() {
        let spec = Conv1dSpec::new(2, 5);
        assert_eq!(spec.output_len(250, 11).unwrap(), 125);
        assert_eq!(spec.output_len(125, 11).unwrap(), 63);
        assert_eq!(Conv1dSpec::same(64).output_len(250, 64).unwrap(), 250);
    }

    #[test]
    fn relu_examples() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(&[-1., 0., 2.]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0., 0., 2.]);
        let x = g.input(Tensor::vector(&[-3., -0.5]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0., 0.]);
        let x = g.input(Tensor::vector(&[0.5, 4.]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.5, 4.]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[0.0, 1.0]));
        let y = g.relu(x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let l = g.input(Tensor::zeros(&[1, 9]));
        let loss = g.softmax_cross_entropy(l, &[4]).unwrap();
        assert!((g.value(loss).item() - libm::log(9.0)).abs() < 1e-12);

        let mut row = [0.0; 9];
        row[3] = 30.0;
        let l = g.input(t(&[1, 9], &row));
        let loss = g.softmax_cross_entropy(l, &[3]).unwrap();
        assert!(g.value(loss).item() < 1e-9);

        let l = g.input(t(&[1, 2], &[1., 0.]));
        let loss = g.softmax_cross_entropy(l, &[0]).unwrap();
        let e = core::f64::consts::E;
        assert!((g.value(loss).item() + libm::log(e / (e + 1.0))).abs() < 1e-12);
        assert!((g.value(loss).item() - 0.31326).abs() < 1e-5);

        assert!(matches!(
            g.softmax_cross_entropy(l, &[2]),
            Err(Error::Label { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 3], &[1., -2., 3., 0.5, 0., 9.]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[3.0]));
        let sq = g.square(x);
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);

        // non-scalar loss
        assert!(matches!(g.backward(sq), Ok(())));
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(&[3.0]));
        let sq = g.square(x);
        let s = g.sum(sq);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[12.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn infonce_examples() {
        let mut g = Graph::new();
        let a = g.input(t(&[1, 2], &[1., 0.]));
        let p = g.input(t(&[1, 2], &[1., 0.]));
        let n = g.input(t(&[1, 2], &[-1., 0.]));
        let loss = g.infonce(a, p, n, 1.0).unwrap();
        let e = core::f64::consts::E;
        let want = -libm::log(e / (e + 1.0 / e));
        assert!((g.value(loss).item() - want).abs() < 1e-12);
        assert!((want - 0.12693).abs() < 1e-5);

        // positive equal to every negative
        let a = g.input(t(&[2, 2], &[0.6, 0.8, 0., 1.]));
        let p = g.input(t(&[2, 2], &[1., 0., 1., 0.]));
        let n = g.input(t(&[2, 3, 2], &[1., 0., 1., 0., 1., 0., 1., 0., 1., 0., 1., 0.]));
        let loss = g.infonce(a, p, n, 0.5).unwrap();
        assert!((g.value(loss).item() - libm::log(4.0)).abs() < 1e-12);

        assert!(matches!(g.infonce(a, p, n, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn permute_moves_axes() {
        let mut g = Graph::new();
        let x = g.input(t(&[2, 3], &[0., 1., 2., 3., 4., 5.]));
        let y = g.permute(x, &[1, 0]).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 2]);
        assert_eq!(g.value(y).data(), &[0., 3., 1., 4., 2., 5.]);
        assert!(g.permute(x, &[0, 0]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[1000.0, -3.0, 2.5, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
