//! Forward/backward kernels over NCHW buffers.
//!
//! Convolutions go through im2col and a GEMM; every reduction runs in a
//! fixed order so repeated passes are bit-identical.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kw) / self.stride + 1
    }

    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Row-major `c (m x n) = alpha * op(a) * op(b) + beta * c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover m*k, k*n and m*n elements under the given strides.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output columns `[x0, x1)` whose input column `x * stride + kj - pad`
/// falls inside `0..width`.
fn valid_cols(g: &ConvGeom, kj: usize, ow: usize) -> (usize, usize) {
    let offset = kj as isize - g.padding as isize;
    let s = g.stride as isize;
    // smallest x with x*s + offset >= 0
    let x0 = if offset >= 0 { 0 } else { ((-offset + s - 1) / s) as usize };
    // largest x with x*s + offset <= width - 1
    let last = g.width as isize - 1 - offset;
    let x1 = if last < 0 { 0 } else { ((last / s) as usize + 1).min(ow) };
    (x0.min(x1), x1)
}

/// Unfolds one `[C, H, W]` image into a `[C*kh*kw, oh*ow]` column matrix.
fn im2col(img: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let pad = g.padding as isize;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (x0, x1) = valid_cols(g, kj, ow);
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let iy = (y * g.stride + ki) as isize - pad;
                    let line = &mut dst[y * ow..(y + 1) * ow];
                    if iy < 0 || iy >= g.height as isize || x0 >= x1 {
                        line.fill(0.0);
                        continue;
                    }
                    line[..x0].fill(0.0);
                    line[x1..].fill(0.0);
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let start = (x0 * g.stride + kj) - g.padding;
                    if g.stride == 1 {
                        line[x0..x1].copy_from_slice(&src[start..start + (x1 - x0)]);
                    } else {
                        for (i, out) in line[x0..x1].iter_mut().enumerate() {
                            *out = src[start + i * g.stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `[C, H, W]`.
fn col2im(col: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let pad = g.padding as isize;
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (x0, x1) = valid_cols(g, kj, ow);
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                row += 1;
                if x0 >= x1 {
                    continue;
                }
                let start = (x0 * g.stride + kj) - g.padding;
                for y in 0..oh {
                    let iy = (y * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[y * ow + x0..y * ow + x1];
                    if g.stride == 1 {
                        for (d, v) in dst[start..start + line.len()].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (i, v) in line.iter().enumerate() {
                            dst[start + i * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `[N, C, H, W]` input with `[K, C, kh, kw]` kernel.
pub(crate) fn conv2d(input: &[f64], n: usize, kernel: &[f64], k: usize, g: &ConvGeom) -> Vec<f64> {
    let (rows, cols) = (g.rows(), g.cols());
    let in_len = g.channels * g.height * g.width;
    let mut out = vec![0.0; n * k * cols];
    let mut col = vec![0.0; rows * cols];
    for s in 0..n {
        im2col(&input[s * in_len..(s + 1) * in_len], g, &mut col);
        gemm(k, rows, cols, kernel, false, &col, false, 0.0, &mut out[s * k * cols..(s + 1) * k * cols]);
    }
    out
}

/// Gradients of [`conv2d`] with respect to input and kernel.
pub(crate) fn conv2d_backward(
    input: &[f64],
    n: usize,
    kernel: &[f64],
    k: usize,
    g: &ConvGeom,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (g.rows(), g.cols());
    let in_len = g.channels * g.height * g.width;
    let mut grad_in = vec![0.0; n * in_len];
    let mut grad_k = vec![0.0; k * rows];
    let mut col = vec![0.0; rows * cols];
    let mut dcol = vec![0.0; rows * cols];
    for s in 0..n {
        let go = &grad_out[s * k * cols..(s + 1) * k * cols];
        im2col(&input[s * in_len..(s + 1) * in_len], g, &mut col);
        // dK += dOut (k x cols) * col^T (cols x rows)
        gemm(k, cols, rows, go, false, &col, true, 1.0, &mut grad_k);
        // dcol = K^T (rows x k) * dOut (k x cols)
        gemm(rows, k, cols, kernel, true, go, false, 0.0, &mut dcol);
        col2im(&dcol, g, &mut grad_in[s * in_len..(s + 1) * in_len]);
    }
    (grad_in, grad_k)
}

/// Transposed convolution: `[N, K, h, w]` input, `[K, C, kh, kw]` kernel,
/// output `[N, C, (h-1)*stride+kh, (w-1)*stride+kw]`. `g` describes the
/// output geometry as the matching forward convolution sees it.
pub(crate) fn conv_transpose2d(input: &[f64], n: usize, kernel: &[f64], k: usize, g: &ConvGeom) -> Vec<f64> {
    let (rows, cols) = (g.rows(), g.cols());
    let out_len = g.channels * g.height * g.width;
    let mut out = vec![0.0; n * out_len];
    let mut col = vec![0.0; rows * cols];
    for s in 0..n {
        // col = K^T (rows x k) * x (k x cols)
        gemm(rows, k, cols, kernel, true, &input[s * k * cols..(s + 1) * k * cols], false, 0.0, &mut col);
        col2im(&col, g, &mut out[s * out_len..(s + 1) * out_len]);
    }
    out
}

pub(crate) fn conv_transpose2d_backward(
    input: &[f64],
    n: usize,
    kernel: &[f64],
    k: usize,
    g: &ConvGeom,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (g.rows(), g.cols());
    let out_len = g.channels * g.height * g.width;
    let mut grad_in = vec![0.0; n * k * cols];
    let mut grad_k = vec![0.0; k * rows];
    let mut col = vec![0.0; rows * cols];
    for s in 0..n {
        im2col(&grad_out[s * out_len..(s + 1) * out_len], g, &mut col);
        let x = &input[s * k * cols..(s + 1) * k * cols];
        // dx = K (k x rows) * im2col(dOut) (rows x cols)
        gemm(k, rows, cols, kernel, false, &col, false, 0.0, &mut grad_in[s * k * cols..(s + 1) * k * cols]);
        // dK += x (k x cols) * im2col(dOut)^T (cols x rows)
        gemm(k, cols, rows, x, false, &col, true, 1.0, &mut grad_k);
    }
    (grad_in, grad_k)
}

/// Max pooling over `[N*C]` planes. Returns pooled values and, per output,
/// the flat input index of the first maximum in row-major window order.
pub(crate) fn maxpool2d(
    input: &[f64],
    planes: usize,
    height: usize,
    width: usize,
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let oh = (height - window) / stride + 1;
    let ow = (width - window) / stride + 1;
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * height * width;
        for y in 0..oh {
            for x in 0..ow {
                let mut best_idx = base + y * stride * width + x * stride;
                let mut best = input[best_idx];
                for wy in 0..window {
                    for wx in 0..window {
                        let idx = base + (y * stride + wy) * width + x * stride + wx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}
