//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in creation order, so the node list
//! is topologically sorted by construction and [`Graph::backward`] is a
//! single reverse sweep. Shapes never broadcast, except that a scalar
//! (shape `[]`) operand of a binary op is applied to every element.

mod gradcheck;
pub(crate) mod kernels;

use alloc::vec;
use alloc::vec::Vec;

pub use gradcheck::{gradient_check, GradCheckFailure, GradCheckOptions, GradCheckReport};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::ConvGeom;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Log,
    OneMinus,
    /// `x^exponent`; inputs are expected non-negative for fractional powers.
    Pow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
        window: usize,
        stride: usize,
    },
    AddBias {
        input: Var,
        bias: Var,
    },
    Unary {
        input: Var,
        kind: Unary,
    },
    Binary {
        lhs: Var,
        rhs: Var,
        kind: Binary,
    },
    Affine {
        input: Var,
        scale: f64,
    },
    Clamp {
        input: Var,
        lo: f64,
        hi: f64,
    },
    Sum {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Single-threaded computation graph.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`; `None` if the root does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros shaped like `like` when unreachable.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf (input or parameter).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.input(Tensor::scalar(value))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(kernel);
        let [n, c, h, wd] = x.dims4("conv2d")?;
        let [k, kc, kh, kw] = w.dims4("conv2d")?;
        if kc != c {
            return Err(Error::shape("conv2d", x.shape(), w.shape()));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        if kh > h + 2 * padding || kw > wd + 2 * padding {
            return Err(Error::shape("conv2d", x.shape(), w.shape()));
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kh,
            kw,
            stride,
            padding,
        };
        let out = kernels::conv2d(x.data(), n, w.data(), k, &geom);
        let value = Tensor::new([n, k, geom.out_h(), geom.out_w()], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, geom }))
    }

    /// Transposed convolution, the adjoint of `conv2d(_, kernel, stride, 0)`.
    /// The kernel is `[K_in, C_out, kh, kw]`.
    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(kernel);
        let [n, k, h, wd] = x.dims4("conv_transpose2d")?;
        let [kk, c, kh, kw] = w.dims4("conv_transpose2d")?;
        if kk != k {
            return Err(Error::shape("conv_transpose2d", x.shape(), w.shape()));
        }
        if stride == 0 {
            return Err(Error::invalid("conv_transpose2d", "stride must be >= 1"));
        }
        let geom = ConvGeom {
            channels: c,
            height: (h - 1) * stride + kh,
            width: (wd - 1) * stride + kw,
            kh,
            kw,
            stride,
            padding: 0,
        };
        let out = kernels::conv_transpose2d(x.data(), n, w.data(), k, &geom);
        let value = Tensor::new([n, c, geom.height, geom.width], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { input, kernel, geom }))
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("maxpool2d")?;
        if window == 0 || stride == 0 {
            return Err(Error::invalid("maxpool2d", "window and stride must be >= 1"));
        }
        if window > h || window > w {
            return Err(Error::invalid(
                "maxpool2d",
                alloc::format!("window {window} exceeds spatial dims {h}x{w}"),
            ));
        }
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::invalid(
                "maxpool2d",
                alloc::format!("spatial dims {h}x{w} not divisible by stride {stride}"),
            ));
        }
        let (out, argmax) = kernels::maxpool2d(x.data(), n * c, h, w, window, stride);
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let value = Tensor::new([n, c, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::MaxPool {
                input,
                argmax,
                window,
                stride,
            },
        ))
    }

    /// Adds a per-channel `[C]` bias to a `[N, C, H, W]` array.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let b = self.value(bias);
        let [n, c, h, w] = x.dims4("add_bias")?;
        if b.shape() != [c] {
            return Err(Error::shape("add_bias", x.shape(), b.shape()));
        }
        let mut out = x.data().to_vec();
        let plane = h * w;
        for s in 0..n {
            for ch in 0..c {
                let bv = b.data()[ch];
                let start = (s * c + ch) * plane;
                out[start..start + plane].iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::AddBias { input, bias }))
    }

    pub fn unary(&mut self, input: Var, kind: Unary) -> Result<Var> {
        let x = self.value(input);
        if kind == Unary::Log {
            if let Some((i, v)) = x.data().iter().enumerate().find(|(_, v)| **v <= 0.0) {
                return Err(Error::Internal(alloc::format!(
                    "log of non-positive value {v} at index {i}; inputs must be clamped"
                )));
            }
        }
        let value = x.map(|v| match kind {
            Unary::Relu => v.max(0.0),
            Unary::Sigmoid => sigmoid(v),
            Unary::Log => libm::log(v),
            Unary::OneMinus => 1.0 - v,
            Unary::Pow(e) => libm::pow(v, e),
        });
        Ok(self.push(value, Op::Unary { input, kind }))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.unary(input, Unary::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.unary(input, Unary::Sigmoid)
    }

    pub fn log(&mut self, input: Var) -> Result<Var> {
        self.unary(input, Unary::Log)
    }

    pub fn one_minus(&mut self, input: Var) -> Result<Var> {
        self.unary(input, Unary::OneMinus)
    }

    pub fn pow(&mut self, input: Var, exponent: f64) -> Result<Var> {
        self.unary(input, Unary::Pow(exponent))
    }

    pub fn binary(&mut self, lhs: Var, rhs: Var, kind: Binary) -> Result<Var> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let value = if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        } else if b.is_scalar() {
            let y = b.item();
            a.map(|x| f(x, y))
        } else if a.is_scalar() {
            let x = a.item();
            b.map(|y| f(x, y))
        } else {
            return Err(Error::shape("binary", a.shape(), b.shape()));
        };
        Ok(self.push(value, Op::Binary { lhs, rhs, kind }))
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, Binary::Add)
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, Binary::Sub)
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, Binary::Mul)
    }

    pub fn div(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, Binary::Div)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(input).map(|v| scale * v + shift);
        self.push(value, Op::Affine { input, scale })
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        self.affine(input, factor, 0.0)
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero where clamped.
    pub fn clamp(&mut self, input: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(input).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp { input, lo, hi })
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, Op::Sum { input })
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).len() as f64;
        let s = self.sum(input);
        self.scale(s, 1.0 / n)
    }

    /// Channel-wise concatenation of two `[N, C, H, W]` arrays.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a);
        let tb = self.value(b);
        let [n, ca, h, w] = ta.dims4("concat_channels")?;
        let [nb, cb, hb, wb] = tb.dims4("concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape("concat_channels", ta.shape(), tb.shape()));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for s in 0..n {
            out.extend_from_slice(&ta.data()[s * ca * plane..(s + 1) * ca * plane]);
            out.extend_from_slice(&tb.data()[s * cb * plane..(s + 1) * cb * plane]);
        }
        let value = Tensor::new([n, ca + cb, h, w], out)?;
        Ok(self.push(value, Op::Concat { a, b }))
    }

    /// Distance from the current point to the nearest non-differentiable
    /// point: ReLU inputs vs 0, clamp inputs vs their bounds, and the gap
    /// between the two largest values of each max-pool window (ignoring
    /// ties at exactly zero). Central
    /// differences with a step below this margin never straddle a kink.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Unary {
                    input,
                    kind: Unary::Relu,
                } => {
                    for &v in self.value(*input).data() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    for &v in self.value(*input).data() {
                        margin = margin.min((v - lo).abs()).min((v - hi).abs());
                    }
                }
                Op::MaxPool {
                    input,
                    argmax,
                    window,
                    stride,
                } => {
                    let x = self.value(*input);
                    let (h, w) = (x.shape()[2], x.shape()[3]);
                    let (oh, ow) = (node.value.shape()[2], node.value.shape()[3]);
                    for (o, &best) in argmax.iter().enumerate() {
                        let base = (o / (oh * ow)) * h * w;
                        let (y, xo) = ((o / ow) % oh, o % ow);
                        for wy in 0..*window {
                            for wx in 0..*window {
                                let idx = base + (y * stride + wy) * w + xo * stride + wx;
                                let (b, v) = (x.data()[best], x.data()[idx]);
                                // zero ties come from inactive ReLUs, which carry no gradient
                                if idx != best && !(b == 0.0 && v == 0.0) {
                                    margin = margin.min(b - v);
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::invalid(
                "backward",
                alloc::format!("root must be scalar, got shape {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::filled(self.value(root).shape().to_vec(), 1.0));
        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &grad, &mut grads)?;
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, geom } => {
                let x = self.value(*input);
                let w = self.value(*kernel);
                let n = x.shape()[0];
                let k = w.shape()[0];
                let (gi, gk) = kernels::conv2d_backward(x.data(), n, w.data(), k, geom, grad.data());
                accumulate(grads, *input, x.shape(), gi)?;
                accumulate(grads, *kernel, w.shape(), gk)?;
            }
            Op::ConvTranspose2d { input, kernel, geom } => {
                let x = self.value(*input);
                let w = self.value(*kernel);
                let n = x.shape()[0];
                let k = w.shape()[0];
                let (gi, gk) =
                    kernels::conv_transpose2d_backward(x.data(), n, w.data(), k, geom, grad.data());
                accumulate(grads, *input, x.shape(), gi)?;
                accumulate(grads, *kernel, w.shape(), gk)?;
            }
            Op::MaxPool { input, argmax, .. } => {
                let x = self.value(*input);
                let mut gi = vec![0.0; x.len()];
                for (&src, &g) in argmax.iter().zip(grad.data()) {
                    gi[src] += g;
                }
                accumulate(grads, *input, x.shape(), gi)?;
            }
            Op::AddBias { input, bias } => {
                let [n, c, h, w] = out.dims4("add_bias")?;
                let plane = h * w;
                let mut gb = vec![0.0; c];
                for s in 0..n {
                    for (ch, slot) in gb.iter_mut().enumerate() {
                        let start = (s * c + ch) * plane;
                        *slot += grad.data()[start..start + plane].iter().sum::<f64>();
                    }
                }
                accumulate(grads, *input, out.shape(), grad.data().to_vec())?;
                accumulate(grads, *bias, &[c], gb)?;
            }
            Op::Unary { input, kind } => {
                let x = self.value(*input);
                let gi = x
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(grad.data())
                    .map(|((&xv, &yv), &g)| {
                        g * match *kind {
                            Unary::Relu => {
                                if xv > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Sigmoid => yv * (1.0 - yv),
                            Unary::Log => 1.0 / xv,
                            Unary::OneMinus => -1.0,
                            Unary::Pow(e) => {
                                if e == 0.0 {
                                    0.0
                                } else {
                                    e * libm::pow(xv, e - 1.0)
                                }
                            }
                        }
                    })
                    .collect();
                accumulate(grads, *input, x.shape(), gi)?;
            }
            Op::Binary { lhs, rhs, kind } => {
                let a = self.value(*lhs);
                let b = self.value(*rhs);
                let n = out.len();
                let av = |i: usize| if a.is_scalar() && n > 1 { a.item() } else { a.data()[i] };
                let bv = |i: usize| if b.is_scalar() && n > 1 { b.item() } else { b.data()[i] };
                let mut ga = vec![0.0; n];
                let mut gb = vec![0.0; n];
                for i in 0..n {
                    let g = grad.data()[i];
                    let (da, db) = match kind {
                        Binary::Add => (1.0, 1.0),
                        Binary::Sub => (1.0, -1.0),
                        Binary::Mul => (bv(i), av(i)),
                        Binary::Div => (1.0 / bv(i), -av(i) / (bv(i) * bv(i))),
                    };
                    ga[i] = g * da;
                    gb[i] = g * db;
                }
                accumulate(grads, *lhs, a.shape(), reduce_to(a, ga))?;
                accumulate(grads, *rhs, b.shape(), reduce_to(b, gb))?;
            }
            Op::Affine { input, scale, .. } => {
                let gi = grad.data().iter().map(|g| g * scale).collect();
                accumulate(grads, *input, out.shape(), gi)?;
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input);
                let gi = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| if v < *lo || v > *hi { 0.0 } else { g })
                    .collect();
                accumulate(grads, *input, x.shape(), gi)?;
            }
            Op::Sum { input } => {
                let x = self.value(*input);
                accumulate(grads, *input, x.shape(), vec![grad.item(); x.len()])?;
            }
            Op::Concat { a, b } => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (ga, gb) = grad.split_channels(ta.shape()[1])?;
                debug_assert_eq!(gb.shape(), tb.shape());
                accumulate(grads, *a, ta.shape(), ga.into_data())?;
                accumulate(grads, *b, tb.shape(), gb.into_data())?;
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

/// Sums a broadcast gradient back down to a scalar operand.
fn reduce_to(operand: &Tensor, grad: Vec<f64>) -> Vec<f64> {
    if operand.is_scalar() && grad.len() > 1 {
        vec![grad.iter().sum()]
    } else {
        grad
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, shape: &[usize], delta: Vec<f64>) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(&delta) {
                *e += d;
            }
        }
        slot @ None => {
            *slot = Some(if shape.is_empty() {
                Tensor::scalar(delta[0])
            } else {
                Tensor::new(shape.to_vec(), delta)?
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
