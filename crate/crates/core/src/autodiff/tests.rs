use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Direct nested-loop cross-correlation.
fn naive_conv(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, w] = x.dims4("t").unwrap();
    let [kk, _, kh, kw] = k.dims4("t").unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * kk * oh * ow];
    for s in 0..n {
        for o in 0..kk {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data()[((s * c + ch) * h + iy as usize) * w + ix as usize]
                                    * k.data()[((o * c + ch) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((s * kk + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_of_ones_sums_window() {
    let mut g = Graph::new();
    let x = g.input(Tensor::filled([1, 1, 3, 3], 1.0));
    let k = g.input(Tensor::filled([1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).item(), 9.0);
}

#[test]
fn conv_zero_kernel_gives_zero() {
    let mut g = Graph::new();
    let x = g.input(random(&[2, 3, 6, 5], 1, -1.0, 1.0));
    let k = g.input(Tensor::zeros([4, 3, 3, 3]));
    let y = g.conv2d(x, k, 1, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 4, 6, 5]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_matches_naive_with_stride_and_padding() {
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
        let x = random(&[2, 3, 7, 6], 3, -1.0, 1.0);
        let k = random(&[4, 3, 3, 2], 4, -1.0, 1.0);
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let kv = g.input(k.clone());
        let y = g.conv2d(xv, kv, stride, pad).unwrap();
        let expect = naive_conv(&x, &k, stride, pad);
        let oh = (7 + 2 * pad - 3) / stride + 1;
        let ow = (6 + 2 * pad - 2) / stride + 1;
        assert_eq!(g.value(y).shape(), &[2, 4, oh, ow]);
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch_naming_both_shapes() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros([1, 2, 4, 4]));
    let k = g.input(Tensor::zeros([1, 3, 3, 3]));
    let err = g.conv2d(x, k, 1, 0).unwrap_err();
    let msg = alloc::format!("{err}");
    assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
}

#[test]
fn conv_gradient_matches_finite_differences() {
    let opts = GradCheckOptions::default();
    for seed in 0..10 {
        let x = random(&[1, 2, 5, 5], seed, -1.0, 1.0);
        let k = random(&[3, 2, 3, 3], seed + 100, -1.0, 1.0);
        let w = random(&[1, 3, 5, 5], seed + 200, -1.0, 1.0);
        let report = gradient_check(
            |g, v| {
                let y = g.conv2d(v[0], v[1], 1, 1)?;
                let wv = g.input(w.clone());
                let p = g.mul(y, wv)?;
                Ok(g.sum(p))
            },
            &[x, k],
            &opts,
        )
        .unwrap();
        assert!(report.passed(), "seed {seed}: {report:?}");
    }
}

#[test]
fn maxpool_unique_max_routes_gradient() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new([1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap());
    let y = g.maxpool2d(x, 2, 2).unwrap();
    assert_eq!(g.value(y).item(), 4.0);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0., 0., 0., 1.]);
}

#[test]
fn maxpool_ties_go_to_first_row_major_index() {
    let mut g = Graph::new();
    let x = g.input(Tensor::filled([1, 1, 4, 4], 2.5));
    let y = g.maxpool2d(x, 2, 2).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    let gx = grads.get(x).unwrap().data();
    for (i, &v) in gx.iter().enumerate() {
        let (r, c) = (i / 4, i % 4);
        let expect = if r % 2 == 0 && c % 2 == 0 { 1.0 } else { 0.0 };
        assert_eq!(v, expect, "position ({r},{c})");
    }
}

#[test]
fn maxpool_gradient_matches_finite_differences() {
    let opts = GradCheckOptions::default();
    for seed in 0..10 {
        // values on a coarse lattice plus distinct offsets keep windows untied
        let mut x = random(&[1, 1, 4, 4], seed, 0.0, 1.0);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v += i as f64 * 1e-3;
        }
        let w = random(&[1, 1, 2, 2], seed + 50, -1.0, 1.0);
        let report = gradient_check(
            |g, v| {
                let y = g.maxpool2d(v[0], 2, 2)?;
                let wv = g.input(w.clone());
                let p = g.mul(y, wv)?;
                Ok(g.sum(p))
            },
            &[x],
            &opts,
        )
        .unwrap();
        assert!(report.passed(), "seed {seed}: {report:?}");
    }
}

#[test]
fn maxpool_rejects_oversized_window_and_indivisible_dims() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros([1, 1, 2, 2]));
    assert!(g.maxpool2d(x, 3, 1).is_err());
    let y = g.input(Tensor::zeros([1, 1, 5, 4]));
    assert!(g.maxpool2d(y, 2, 2).is_err());
}

#[test]
fn transposed_conv_broadcasts_single_value() {
    let mut g = Graph::new();
    let x = g.input(Tensor::filled([1, 1, 1, 1], 3.25));
    let k = g.input(Tensor::filled([1, 1, 2, 2], 1.0));
    let y = g.conv_transpose2d(x, k, 2).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
    assert!(g.value(y).data().iter().all(|&v| v == 3.25));
}

#[test]
fn transposed_conv_zero_kernel_gives_zero() {
    let mut g = Graph::new();
    let x = g.input(random(&[1, 4, 3, 3], 9, -1.0, 1.0));
    let k = g.input(Tensor::zeros([4, 2, 2, 2]));
    let y = g.conv_transpose2d(x, k, 2).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 2, 6, 6]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    for seed in 0..10 {
        for (stride, kh) in [(2, 2), (1, 3), (2, 3)] {
            let h = 4;
            let big = (h - 1) * stride + kh;
            // conv maps [1, C=3, big, big] -> [1, K=2, h, h]; transpose goes back.
            let kernel = random(&[2, 3, kh, kh], seed, -1.0, 1.0);
            let x = random(&[1, 3, big, big], seed + 1, -1.0, 1.0);
            let y = random(&[1, 2, h, h], seed + 2, -1.0, 1.0);
            let mut g = Graph::new();
            let (xv, yv, kv) = (g.input(x.clone()), g.input(y.clone()), g.input(kernel));
            let cx = g.conv2d(xv, kv, stride, 0).unwrap();
            let ty = g.conv_transpose2d(yv, kv, stride).unwrap();
            assert_eq!(g.value(cx).shape(), y.shape());
            assert_eq!(g.value(ty).shape(), x.shape());
            let lhs = g.value(cx).dot(&y);
            let rhs = x.dot(g.value(ty));
            assert!((lhs - rhs).abs() < 1e-10, "seed {seed}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn transposed_conv_gradient_matches_finite_differences() {
    let opts = GradCheckOptions::default();
    for seed in 0..10 {
        let x = random(&[1, 3, 3, 3], seed, -1.0, 1.0);
        let k = random(&[3, 2, 2, 2], seed + 10, -1.0, 1.0);
        let w = random(&[1, 2, 6, 6], seed + 20, -1.0, 1.0);
        let report = gradient_check(
            |g, v| {
                let y = g.conv_transpose2d(v[0], v[1], 2)?;
                let wv = g.input(w.clone());
                let p = g.mul(y, wv)?;
                Ok(g.sum(p))
            },
            &[x, k],
            &opts,
        )
        .unwrap();
        assert!(report.passed(), "seed {seed}: {report:?}");
    }
}

#[test]
fn elementwise_values() {
    let mut g = Graph::new();
    let z = g.input(Tensor::scalar(0.0));
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).item(), 0.5);

    let m = g.input(Tensor::scalar(-3.0));
    let r = g.relu(m).unwrap();
    assert_eq!(g.value(r).item(), 0.0);
    let grads = g.backward(r).unwrap();
    assert_eq!(grads.get(m).unwrap().item(), 0.0);
}

#[test]
fn sigmoid_stays_in_open_unit_interval() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new([4], vec![-30.0, -5.0, 5.0, 30.0]).unwrap());
    let s = g.sigmoid(x).unwrap();
    assert!(g.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn pow_gradient_at_point_seven() {
    let report = gradient_check(
        |g, v| g.pow(v[0], 5.0).map(|y| g.sum(y)),
        &[Tensor::scalar(0.7)],
        &GradCheckOptions {
            tolerance: 1e-6,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn log_of_non_positive_is_internal_error() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(0.0));
    assert!(matches!(g.log(x), Err(Error::Internal(_))));
}

#[test]
fn every_elementwise_op_passes_gradcheck() {
    let opts = GradCheckOptions::default();
    for seed in 0..10 {
        let x = random(&[3, 4], seed, 0.1, 0.9);
        let y = random(&[3, 4], seed + 7, 0.1, 0.9);
        let report = gradient_check(
            |g, v| {
                let a = g.sigmoid(v[0])?;
                let b = g.log(v[1])?;
                let c = g.one_minus(v[0])?;
                let d = g.pow(c, 2.5)?;
                let e = g.mul(a, b)?;
                let f = g.div(d, v[1])?;
                let h = g.add(e, f)?;
                let i = g.sub(h, v[0])?;
                let shifted = g.affine(v[1], 1.0, -0.5);
                let j = g.relu(shifted)?;
                let k = g.add(i, j)?;
                let l = g.clamp(k, -100.0, 100.0);
                let s = g.sum(l);
                let t = g.mean(v[0]);
                let u = g.mul(s, t)?;
                Ok(u)
            },
            &[x, y],
            &opts,
        )
        .unwrap();
        assert!(report.passed(), "seed {seed}: {report:?}");
    }
}

#[test]
fn scalar_broadcast_in_binary_ops() {
    let report = gradient_check(
        |g, v| {
            let s = g.sum(v[1]);
            let q = g.div(v[0], s)?;
            let r = g.mul(s, q)?;
            Ok(g.sum(r))
        },
        &[random(&[2, 3], 1, 0.5, 1.0), random(&[4], 2, 0.5, 1.0)],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");

    let mut g = Graph::new();
    let a = g.input(Tensor::zeros([2, 3]));
    let b = g.input(Tensor::zeros([3, 2]));
    assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn concat_shapes_routing_and_split() {
    let a = random(&[1, 8, 16, 16], 1, -1.0, 1.0);
    let b = random(&[1, 8, 16, 16], 2, -1.0, 1.0);
    let mut g = Graph::new();
    let (av, bv) = (g.input(a.clone()), g.input(b.clone()));
    let c = g.concat_channels(av, bv).unwrap();
    assert_eq!(g.value(c).shape(), &[1, 16, 16, 16]);

    let (sa, sb) = g.value(c).split_channels(8).unwrap();
    assert_eq!(sa, a);
    assert_eq!(sb, b);

    let upstream = random(&[1, 16, 16, 16], 3, -1.0, 1.0);
    let uv = g.input(upstream.clone());
    let p = g.mul(c, uv).unwrap();
    let s = g.sum(p);
    let grads = g.backward(s).unwrap();
    let (ua, ub) = upstream.split_channels(8).unwrap();
    assert_eq!(grads.get(av).unwrap(), &ua);
    assert_eq!(grads.get(bv).unwrap(), &ub);
}

#[test]
fn concat_rejects_spatial_mismatch() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros([1, 2, 4, 4]));
    let b = g.input(Tensor::zeros([1, 2, 4, 5]));
    assert!(g.concat_channels(a, b).is_err());
}

#[test]
fn gradcheck_sum_of_squares() {
    let report = gradient_check(
        |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        },
        &[Tensor::new([2], vec![1.0, 2.0]).unwrap()],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed());
    assert!(report.max_deviation < 1e-8, "{}", report.max_deviation);

    let mut g = Graph::new();
    let x = g.input(Tensor::new([2], vec![1.0, 2.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn gradcheck_reports_non_finite_per_coordinate() {
    // x - step hits exactly 0 for the first coordinate, so 1/x is infinite.
    let report = gradient_check(
        |g, v| {
            let one = g.constant_scalar(1.0);
            let q = g.div(one, v[0])?;
            Ok(g.sum(q))
        },
        &[Tensor::new([2], vec![1e-6, 1.0]).unwrap()],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(report.non_finite, vec![(0, 0)]);
    assert!(!report.passed());
}

#[test]
fn gradcheck_flags_a_wrong_gradient() {
    // relu at an exact kink: analytic derivative 0, central difference 0.5.
    let report = gradient_check(
        |g, v| g.relu(v[0]).map(|y| g.sum(y)),
        &[Tensor::scalar(0.0)],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(report.failures.len(), 1);
}

#[test]
fn forward_and_backward_are_bit_reproducible() {
    let run = || {
        let mut g = Graph::new();
        let x = g.input(random(&[2, 3, 8, 8], 5, -1.0, 1.0));
        let k = g.input(random(&[4, 3, 3, 3], 6, -1.0, 1.0));
        let y = g.conv2d(x, k, 1, 1).unwrap();
        let p = g.maxpool2d(y, 2, 2).unwrap();
        let s = g.sigmoid(p).unwrap();
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        (
            g.value(l).item().to_bits(),
            grads.get(x).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            grads.get(k).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn backward_requires_scalar_root() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros([3]));
    assert!(g.backward(x).is_err());
}
