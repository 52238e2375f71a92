//! Wengert-list reverse-mode differentiation.
//!
//! A [`Tape`] lives for one forward pass: every differentiable operation is
//! a method on it, appending a node that keeps handles to its inputs plus
//! whatever the backward rule needs (pooling argmaxes, softmax
//! probabilities). [`Tape::backward`] walks the list once in reverse and
//! returns a [`GradientMap`] from tensor identity to gradient, after which
//! the tape is consumed.
//!
//! Recording is skipped when no input requires a gradient, and an inactive
//! tape ([`Tape::inactive`]) records nothing at all, so inference pays only
//! for the arithmetic.

use super::{
    broadcast_shape, broadcast_to, nested_sum, reduce_to_shape, Tensor, TensorId,
};
use crate::error::{Error, Result};
use std::collections::HashMap;

enum Op {
    Add {
        a: Tensor,
        b: Tensor,
    },
    Mul {
        a: Tensor,
        b: Tensor,
    },
    Scale {
        a: Tensor,
        factor: f64,
    },
    Conv2d {
        input: Tensor,
        weights: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu {
        input: Tensor,
    },
    MaxPool2d {
        input: Tensor,
        /// Flat input index of the winning element for each output element.
        argmax: Vec<usize>,
    },
    Dense {
        input: Tensor,
        weights: Tensor,
        bias: Tensor,
    },
    Reshape {
        input: Tensor,
    },
    SpatialMean {
        input: Tensor,
    },
    ChannelSums {
        input: Tensor,
    },
    SumAll {
        input: Tensor,
    },
    SoftmaxCrossEntropy {
        logits: Tensor,
        label: usize,
        /// Softmax probabilities saved from the forward pass.
        probs: Vec<f64>,
    },
    SmoothL1Sum {
        pred: Tensor,
        target: Tensor,
        beta: f64,
    },
    Gather {
        input: Tensor,
        indices: Vec<usize>,
    },
}

struct Node {
    op: Op,
    out_id: TensorId,
    out_shape: Vec<usize>,
}

/// Gradients keyed by the identity of the tensors they belong to.
pub struct GradientMap {
    grads: HashMap<TensorId, Tensor>,
}

impl GradientMap {
    /// Gradient for `t`, if `t` participated in the differentiated graph.
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        self.grads.get(&t.id())
    }

    /// Gradient for `t`, or [`Error::DetachedGraph`] if it never received one.
    pub fn grad(&self, t: &Tensor) -> Result<Tensor> {
        self.grads.get(&t.id()).cloned().ok_or(Error::DetachedGraph)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Records one forward pass and replays it in reverse.
pub struct Tape {
    nodes: Vec<Node>,
    active: bool,
}

impl Tape {
    /// A recording tape for a training step.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), active: true }
    }

    /// A non-recording tape: operations run normally but leave no trace,
    /// and the outputs never require gradients.
    pub fn inactive() -> Self {
        Tape { nodes: Vec::new(), active: false }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Wrap an op result: tag it as differentiable and push the node when
    /// recording applies, otherwise hand the plain value back.
    fn push(&mut self, op: Op, out: Tensor, track: bool) -> Tensor {
        if self.active && track {
            let out = out.with_requires_grad(true);
            self.nodes.push(Node { op, out_id: out.id(), out_shape: out.shape().to_vec() });
            out
        } else {
            out
        }
    }

    /// Elementwise addition with trailing-dimension broadcasting.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let shape = broadcast_shape("add", a.shape(), b.shape())?;
        let xa = broadcast_to(a.data(), a.shape(), &shape);
        let xb = broadcast_to(b.data(), b.shape(), &shape);
        let data = xa.iter().zip(&xb).map(|(x, y)| x + y).collect();
        let track = a.needs_grad() || b.needs_grad();
        Ok(self.push(Op::Add { a: a.clone(), b: b.clone() }, Tensor::new(shape, data), track))
    }

    /// Elementwise product with trailing-dimension broadcasting.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let shape = broadcast_shape("mul", a.shape(), b.shape())?;
        let xa = broadcast_to(a.data(), a.shape(), &shape);
        let xb = broadcast_to(b.data(), b.shape(), &shape);
        let data = xa.iter().zip(&xb).map(|(x, y)| x * y).collect();
        let track = a.needs_grad() || b.needs_grad();
        Ok(self.push(Op::Mul { a: a.clone(), b: b.clone() }, Tensor::new(shape, data), track))
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, a: &Tensor, factor: f64) -> Tensor {
        let out = a.map(|v| v * factor);
        let track = a.needs_grad();
        self.push(Op::Scale { a: a.clone(), factor }, out, track)
    }

    /// 2-D cross-correlation of a `[C,H,W]` input with `[O,C,kh,kw]` kernels
    /// plus a `[O]` bias, zero padding, square stride. Output spatial size
    /// must come out exact: `(H + 2·padding - kh)` has to be divisible by
    /// the stride (and likewise for width) or the geometry is rejected.
    pub fn conv2d(
        &mut self,
        input: &Tensor,
        weights: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        input.check_rank(3)?;
        weights.check_rank(4)?;
        bias.check_rank(1)?;
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (o, wc, kh, kw) = (
            weights.shape()[0],
            weights.shape()[1],
            weights.shape()[2],
            weights.shape()[3],
        );
        if wc != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input.shape().to_vec(),
                right: weights.shape().to_vec(),
            });
        }
        if bias.shape()[0] != o {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        let geometry_err = || Error::ConvGeometry { h, w, kh, kw, stride, padding };
        if stride == 0 || kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(geometry_err());
        }
        if (h + 2 * padding - kh) % stride != 0 || (w + 2 * padding - kw) % stride != 0 {
            return Err(geometry_err());
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;

        let x = input.data();
        let k = weights.data();
        let b = bias.data();
        let mut out = vec![0.0; o * oh * ow];
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x[(ic * h + iy as usize) * w + ix as usize]
                                    * k[((oc * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let track = input.needs_grad() || weights.needs_grad() || bias.needs_grad();
        Ok(self.push(
            Op::Conv2d {
                input: input.clone(),
                weights: weights.clone(),
                bias: bias.clone(),
                stride,
                padding,
            },
            Tensor::new(vec![o, oh, ow], out),
            track,
        ))
    }

    /// Elementwise `max(0, x)`. The subgradient at exactly zero is zero.
    pub fn relu(&mut self, input: &Tensor) -> Tensor {
        let out = input.map(|v| if v > 0.0 { v } else { 0.0 });
        let track = input.needs_grad();
        self.push(Op::Relu { input: input.clone() }, out, track)
    }

    /// Max pooling over square windows on a `[C,H,W]` input. Window and
    /// stride must tile the plane exactly. Ties go to the earliest element
    /// in row-major window order, and only that element receives gradient.
    pub fn maxpool2d(&mut self, input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
        input.check_rank(3)?;
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let geometry_err = || Error::PoolGeometry { h, w, window, stride };
        if window == 0 || stride == 0 || window > h || window > w {
            return Err(geometry_err());
        }
        if (h - window) % stride != 0 || (w - window) % stride != 0 {
            return Err(geometry_err());
        }
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let x = input.data();
        let mut out = vec![0.0; c * oh * ow];
        let mut argmax = vec![0usize; c * oh * ow];
        for ic in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx =
                                (ic * h + oy * stride + ky) * w + ox * stride + kx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[(ic * oh + oy) * ow + ox] = best;
                    argmax[(ic * oh + oy) * ow + ox] = best_idx;
                }
            }
        }
        let track = input.needs_grad();
        Ok(self.push(
            Op::MaxPool2d { input: input.clone(), argmax },
            Tensor::new(vec![c, oh, ow], out),
            track,
        ))
    }

    /// Affine map `W·x + b` of a `[in]` vector with `[out,in]` weights.
    pub fn dense(&mut self, input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
        input.check_rank(1)?;
        weights.check_rank(2)?;
        bias.check_rank(1)?;
        let (n_out, n_in) = (weights.shape()[0], weights.shape()[1]);
        if input.shape()[0] != n_in {
            return Err(Error::ShapeMismatch {
                op: "dense",
                left: weights.shape().to_vec(),
                right: input.shape().to_vec(),
            });
        }
        if bias.shape()[0] != n_out {
            return Err(Error::ShapeMismatch {
                op: "dense",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        let x = input.data();
        let wdat = weights.data();
        let mut out = bias.data().to_vec();
        for o in 0..n_out {
            let row = &wdat[o * n_in..(o + 1) * n_in];
            out[o] += row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
        }
        let track = input.needs_grad() || weights.needs_grad() || bias.needs_grad();
        Ok(self.push(
            Op::Dense { input: input.clone(), weights: weights.clone(), bias: bias.clone() },
            Tensor::new(vec![n_out], out),
            track,
        ))
    }

    /// Reinterpret the element buffer under a new shape of equal size.
    pub fn reshape(&mut self, input: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != input.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: input.shape().to_vec(),
                right: shape,
            });
        }
        let out = Tensor::new(shape, input.data().to_vec());
        let track = input.needs_grad();
        Ok(self.push(Op::Reshape { input: input.clone() }, out, track))
    }

    /// Collapse a `[C,H,W]` tensor to `[C·H·W]`.
    pub fn flatten(&mut self, input: &Tensor) -> Result<Tensor> {
        self.reshape(input, vec![input.numel()])
    }

    /// Spatial mean per channel: `[C,H,W]` down to `[C]`.
    pub fn spatial_mean(&mut self, input: &Tensor) -> Result<Tensor> {
        input.check_rank(3)?;
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let plane = h * w;
        let out: Vec<f64> = (0..c)
            .map(|ic| nested_sum(&input.data()[ic * plane..(ic + 1) * plane], &[h, w]) / plane as f64)
            .collect();
        let track = input.needs_grad();
        Ok(self.push(Op::SpatialMean { input: input.clone() }, Tensor::new(vec![c], out), track))
    }

    /// Spatial sum per channel: `[C,H,W]` down to `[C]`.
    ///
    /// Each channel is reduced with the same hierarchical grouping as
    /// [`Tape::sum_all`], so summing this op's output reproduces `sum_all`
    /// of the input bit for bit.
    pub fn channel_sums(&mut self, input: &Tensor) -> Result<Tensor> {
        input.check_rank(3)?;
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let plane = h * w;
        let out: Vec<f64> = (0..c)
            .map(|ic| nested_sum(&input.data()[ic * plane..(ic + 1) * plane], &[h, w]))
            .collect();
        let track = input.needs_grad();
        Ok(self.push(Op::ChannelSums { input: input.clone() }, Tensor::new(vec![c], out), track))
    }

    /// Sum of every element, reduced one axis at a time, to a scalar.
    pub fn sum_all(&mut self, input: &Tensor) -> Tensor {
        let out = Tensor::scalar(input.sum_value());
        let track = input.needs_grad();
        self.push(Op::SumAll { input: input.clone() }, out, track)
    }

    /// Cross-entropy of softmax(logits) against an integer label, as a
    /// scalar. Computed with max subtraction so large logits stay finite.
    pub fn softmax_cross_entropy(&mut self, logits: &Tensor, label: usize) -> Result<Tensor> {
        logits.check_rank(1)?;
        let k = logits.shape()[0];
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let z = logits.data();
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - zmax).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|&e| e / total).collect();
        let loss = total.ln() - (z[label] - zmax);
        let track = logits.needs_grad();
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits: logits.clone(), label, probs },
            Tensor::scalar(loss),
            track,
        ))
    }

    /// Smooth-L1 distance summed over all elements of two same-shaped
    /// tensors: quadratic inside `beta`, linear outside.
    pub fn smooth_l1_sum(&mut self, pred: &Tensor, target: &Tensor, beta: f64) -> Result<Tensor> {
        if pred.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "smooth_l1_sum",
                left: pred.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        assert!(beta > 0.0, "smooth_l1_sum needs beta > 0, got {beta}");
        let total: f64 = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let d = p - t;
                if d.abs() < beta {
                    0.5 * d * d / beta
                } else {
                    d.abs() - 0.5 * beta
                }
            })
            .sum();
        let track = pred.needs_grad() || target.needs_grad();
        Ok(self.push(
            Op::SmoothL1Sum { pred: pred.clone(), target: target.clone(), beta },
            Tensor::scalar(total),
            track,
        ))
    }

    /// Pick elements by flat index into a `[n]` vector. Gradient scatters
    /// back additively, so repeated indices accumulate.
    pub fn gather(&mut self, input: &Tensor, indices: &[usize]) -> Tensor {
        let data: Vec<f64> = indices
            .iter()
            .map(|&i| {
                assert!(i < input.numel(), "gather index {i} out of bounds for {} elements", input.numel());
                input.data()[i]
            })
            .collect();
        let out = Tensor::new(vec![indices.len()], data);
        let track = input.needs_grad();
        self.push(Op::Gather { input: input.clone(), indices: indices.to_vec() }, out, track)
    }

    /// Run the chain rule backwards from a scalar loss produced by this
    /// tape. Consumes the tape; gradients come back keyed by tensor id.
    pub fn backward(self, loss: &Tensor) -> Result<GradientMap> {
        if !loss.is_scalar() {
            return Err(Error::NonScalarLoss { shape: loss.shape().to_vec() });
        }
        if !self.nodes.iter().any(|n| n.out_id == loss.id()) {
            return Err(Error::DetachedGraph);
        }

        // Raw per-id accumulators; shapes tag along so they can be boxed
        // into tensors at the end.
        let mut acc: HashMap<TensorId, (Vec<usize>, Vec<f64>)> = HashMap::new();
        acc.insert(loss.id(), (vec![], vec![1.0]));

        for node in self.nodes.iter().rev() {
            let Some((_, g)) = acc.get(&node.out_id) else {
                continue; // side branch that never reached the loss
            };
            let g = g.clone();
            match &node.op {
                Op::Add { a, b } => {
                    if a.needs_grad() {
                        let ga = reduce_to_shape(&g, &node.out_shape, a.shape());
                        accumulate(&mut acc, a, ga);
                    }
                    if b.needs_grad() {
                        let gb = reduce_to_shape(&g, &node.out_shape, b.shape());
                        accumulate(&mut acc, b, gb);
                    }
                }
                Op::Mul { a, b } => {
                    if a.needs_grad() {
                        let xb = broadcast_to(b.data(), b.shape(), &node.out_shape);
                        let raw: Vec<f64> = g.iter().zip(&xb).map(|(gi, bi)| gi * bi).collect();
                        accumulate(&mut acc, a, reduce_to_shape(&raw, &node.out_shape, a.shape()));
                    }
                    if b.needs_grad() {
                        let xa = broadcast_to(a.data(), a.shape(), &node.out_shape);
                        let raw: Vec<f64> = g.iter().zip(&xa).map(|(gi, ai)| gi * ai).collect();
                        accumulate(&mut acc, b, reduce_to_shape(&raw, &node.out_shape, b.shape()));
                    }
                }
                Op::Scale { a, factor } => {
                    if a.needs_grad() {
                        accumulate(&mut acc, a, g.iter().map(|gi| gi * factor).collect());
                    }
                }
                Op::Conv2d { input, weights, bias, stride, padding } => {
                    backward_conv2d(&mut acc, &g, &node.out_shape, input, weights, bias, *stride, *padding);
                }
                Op::Relu { input } => {
                    if input.needs_grad() {
                        let gx: Vec<f64> = input
                            .data()
                            .iter()
                            .zip(&g)
                            .map(|(&x, gi)| if x > 0.0 { *gi } else { 0.0 })
                            .collect();
                        accumulate(&mut acc, input, gx);
                    }
                }
                Op::MaxPool2d { input, argmax } => {
                    if input.needs_grad() {
                        let mut gx = vec![0.0; input.numel()];
                        for (gi, &src) in g.iter().zip(argmax) {
                            gx[src] += gi;
                        }
                        accumulate(&mut acc, input, gx);
                    }
                }
                Op::Dense { input, weights, bias } => {
                    let (n_out, n_in) = (weights.shape()[0], weights.shape()[1]);
                    if input.needs_grad() {
                        let wdat = weights.data();
                        let mut gx = vec![0.0; n_in];
                        for o in 0..n_out {
                            for i in 0..n_in {
                                gx[i] += g[o] * wdat[o * n_in + i];
                            }
                        }
                        accumulate(&mut acc, input, gx);
                    }
                    if weights.needs_grad() {
                        let x = input.data();
                        let mut gw = vec![0.0; n_out * n_in];
                        for o in 0..n_out {
                            for i in 0..n_in {
                                gw[o * n_in + i] = g[o] * x[i];
                            }
                        }
                        accumulate(&mut acc, weights, gw);
                    }
                    if bias.needs_grad() {
                        accumulate(&mut acc, bias, g.clone());
                    }
                }
                Op::Reshape { input } => {
                    if input.needs_grad() {
                        accumulate(&mut acc, input, g.clone());
                    }
                }
                Op::SpatialMean { input } => {
                    if input.needs_grad() {
                        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
                        let plane = h * w;
                        let mut gx = vec![0.0; input.numel()];
                        for ic in 0..c {
                            let share = g[ic] / plane as f64;
                            for slot in &mut gx[ic * plane..(ic + 1) * plane] {
                                *slot = share;
                            }
                        }
                        accumulate(&mut acc, input, gx);
                    }
                }
                Op::ChannelSums { input } => {
                    if input.needs_grad() {
                        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
                        let plane = h * w;
                        let mut gx = vec![0.0; input.numel()];
                        for ic in 0..c {
                            for slot in &mut gx[ic * plane..(ic + 1) * plane] {
                                *slot = g[ic];
                            }
                        }
                        accumulate(&mut acc, input, gx);
                    }
                }
                Op::SumAll { input } => {
                    if input.needs_grad() {
                        accumulate(&mut acc, input, vec![g[0]; input.numel()]);
                    }
                }
                Op::SoftmaxCrossEntropy { logits, label, probs } => {
                    if logits.needs_grad() {
                        let gx: Vec<f64> = probs
                            .iter()
                            .enumerate()
                            .map(|(i, &p)| g[0] * (p - if i == *label { 1.0 } else { 0.0 }))
                            .collect();
                        accumulate(&mut acc, logits, gx);
                    }
                }
                Op::SmoothL1Sum { pred, target, beta } => {
                    let deriv = |p: f64, t: f64| {
                        let d = p - t;
                        if d.abs() < *beta {
                            d / beta
                        } else {
                            d.signum()
                        }
                    };
                    if pred.needs_grad() {
                        let gx: Vec<f64> = pred
                            .data()
                            .iter()
                            .zip(target.data())
                            .map(|(&p, &t)| g[0] * deriv(p, t))
                            .collect();
                        accumulate(&mut acc, pred, gx);
                    }
                    if target.needs_grad() {
                        let gx: Vec<f64> = pred
                            .data()
                            .iter()
                            .zip(target.data())
                            .map(|(&p, &t)| -g[0] * deriv(p, t))
                            .collect();
                        accumulate(&mut acc, target, gx);
                    }
                }
                Op::Gather { input, indices } => {
                    if input.needs_grad() {
                        let mut gx = vec![0.0; input.numel()];
                        for (gi, &src) in g.iter().zip(indices) {
                            gx[src] += gi;
                        }
                        accumulate(&mut acc, input, gx);
                    }
                }
            }
        }

        let grads = acc
            .into_iter()
            .map(|(id, (shape, data))| (id, Tensor::new(shape, data)))
            .collect();
        Ok(GradientMap { grads })
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn accumulate(
    acc: &mut HashMap<TensorId, (Vec<usize>, Vec<f64>)>,
    tensor: &Tensor,
    grad: Vec<f64>,
) {
    debug_assert_eq!(grad.len(), tensor.numel());
    match acc.entry(tensor.id()) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            for (slot, gi) in e.get_mut().1.iter_mut().zip(&grad) {
                *slot += gi;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert((tensor.shape().to_vec(), grad));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_conv2d(
    acc: &mut HashMap<TensorId, (Vec<usize>, Vec<f64>)>,
    g: &[f64],
    out_shape: &[usize],
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (o, kh, kw) = (weights.shape()[0], weights.shape()[2], weights.shape()[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let x = input.data();
    let k = weights.data();

    let mut gx = if input.needs_grad() { vec![0.0; input.numel()] } else { Vec::new() };
    let mut gw = if weights.needs_grad() { vec![0.0; weights.numel()] } else { Vec::new() };
    let mut gb = if bias.needs_grad() { vec![0.0; o] } else { Vec::new() };

    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let go = g[(oc * oh + oy) * ow + ox];
                if bias.needs_grad() {
                    gb[oc] += go;
                }
                if go == 0.0 {
                    continue;
                }
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = (ic * h + iy as usize) * w + ix as usize;
                            let wi = ((oc * c + ic) * kh + ky) * kw + kx;
                            if input.needs_grad() {
                                gx[xi] += go * k[wi];
                            }
                            if weights.needs_grad() {
                                gw[wi] += go * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }

    if input.needs_grad() {
        accumulate(acc, input, gx);
    }
    if weights.needs_grad() {
        accumulate(acc, weights, gw);
    }
    if bias.needs_grad() {
        accumulate(acc, bias, gb);
    }
}
