//! Network correctness: convolution against the direct-summation oracle,
//! adjointness of the transposed convolution, finite-difference gradient
//! checks for every layer type and the composed graph, shape laws, and
//! determinism.

mod common;

use common::*;
use lfdense::lightfield::{Epi, EpiAxis};
use lfdense::net::ops::{
    conv2d, conv2d_backward, deconv2d, deconv2d_backward, prelu, prelu_backward,
};
use lfdense::net::{
    backward, batch_inputs, forward, l2_loss, LayerId, LayerKind, NetworkParams, Tensor4,
};
use lfdense::pyramid::{build_lapepi, PyramidConfig};
use lfdense::train::init_params;
use ndarray::{Array1, Array4, Dimension};
use rand::Rng;

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-4;

#[test]
fn conv2d_matches_direct_summation() {
    let mut r = rng(11);
    for &(n, c, o, h, w, kh, kw) in
        &[(1, 1, 1, 4, 5, 3, 3), (2, 3, 4, 5, 7, 1, 5), (1, 2, 3, 6, 6, 5, 1), (2, 2, 2, 3, 9, 3, 5)]
    {
        let x = random_tensor(&mut r, (n, c, h, w), 1.0);
        let wt = random_tensor(&mut r, (o, c, kh, kw), 1.0);
        let b = Array1::from_shape_fn(o, |_| r.gen_range(-0.5..0.5));
        let got = conv2d(&x, &wt, &b, (1, 1)).unwrap();
        let want = conv2d_oracle(&x, &wt, &b);
        let err = got
            .iter()
            .zip(want.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(err <= 1e-12, "conv oracle mismatch {err}");
    }
}

#[test]
fn deconv_is_adjoint_of_strided_conv() {
    let mut r = rng(13);
    for &(stride, kh, kw, h, w) in &[
        ((3usize, 1usize), 9usize, 9usize, 5usize, 6usize),
        ((1, 4), 5, 5, 4, 6),
        ((2, 2), 5, 3, 4, 5),
        ((1, 1), 3, 5, 5, 7),
    ] {
        let (i, o) = (2, 3);
        let y = random_tensor(&mut r, (2, i, h, w), 1.0);
        let wt = random_tensor(&mut r, (o, i, kh, kw), 1.0);
        let b = Array1::zeros(o);
        let dy = deconv2d(&y, &wt, &b, stride).unwrap();
        let z = random_tensor(&mut r, dy.raw_dim().into_pattern(), 1.0);
        // swap in/out axes so the oracle maps O-channel data back to I channels
        let mut w_swap = Array4::zeros((i, o, kh, kw));
        for oi in 0..o {
            for ii in 0..i {
                for a in 0..kh {
                    for bq in 0..kw {
                        w_swap[[ii, oi, a, bq]] = wt[[oi, ii, a, bq]];
                    }
                }
            }
        }
        let adj = conv2d_strided_oracle(&z, &w_swap, stride);
        let lhs = dot4(&dy, &z);
        let rhs = dot4(&y, &adj);
        assert!(
            (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0),
            "adjoint identity violated: {lhs} vs {rhs} at stride {stride:?}"
        );
    }
}

#[test]
fn conv_and_deconv_adjoint_pair_stride_one() {
    let mut r = rng(17);
    let (i, o, h, w) = (3, 2, 5, 6);
    let x = random_tensor(&mut r, (1, i, h, w), 1.0);
    let wt = random_tensor(&mut r, (o, i, 3, 5), 1.0);
    let y = random_tensor(&mut r, (1, o, h, w), 1.0);
    let zero_o = Array1::zeros(o);
    let conv_x = conv2d(&x, &wt, &zero_o, (1, 1)).unwrap();
    let mut w_swap = Array4::zeros((i, o, 3, 5));
    for oi in 0..o {
        for ii in 0..i {
            for a in 0..3 {
                for bq in 0..5 {
                    w_swap[[ii, oi, a, bq]] = wt[[oi, ii, a, bq]];
                }
            }
        }
    }
    let zero_i = Array1::zeros(i);
    let deconv_y = deconv2d(&y, &w_swap, &zero_i, (1, 1)).unwrap();
    let lhs = dot4(&conv_x, &y);
    let rhs = dot4(&x, &deconv_y);
    assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
}

fn check_layer_gradients<FwdF>(
    x: &Tensor4,
    wt: &Array4<f64>,
    b: &Array1<f64>,
    label: &Tensor4,
    fwd: FwdF,
    bwd: &dyn Fn(&Tensor4, &Array4<f64>, &Tensor4) -> (Tensor4, Array4<f64>, Array1<f64>),
    name: &str,
) where
    FwdF: Fn(&Tensor4, &Array4<f64>, &Array1<f64>) -> Tensor4,
{
    let loss_of = |x: &Tensor4, wt: &Array4<f64>, b: &Array1<f64>| -> f64 {
        l2_loss(&fwd(x, wt, b), label).unwrap().0
    };
    let out = fwd(x, wt, b);
    let (_, grad_out) = l2_loss(&out, label).unwrap();
    let (gx, gw, gb) = bwd(x, wt, &grad_out);

    for idx in 0..wt.len() {
        let mut wp = wt.clone();
        let v = *wp.iter().nth(idx).unwrap();
        *wp.iter_mut().nth(idx).unwrap() = v + FD_STEP;
        let lp = loss_of(x, &wp, b);
        *wp.iter_mut().nth(idx).unwrap() = v - FD_STEP;
        let lm = loss_of(x, &wp, b);
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let an = *gw.iter().nth(idx).unwrap();
        assert!(rel_err(an, fd) < FD_TOL, "{name} weight[{idx}]: analytic {an}, fd {fd}");
    }
    for idx in 0..b.len() {
        let mut bp = b.clone();
        bp[idx] += FD_STEP;
        let lp = loss_of(x, wt, &bp);
        bp[idx] -= 2.0 * FD_STEP;
        let lm = loss_of(x, wt, &bp);
        let fd = (lp - lm) / (2.0 * FD_STEP);
        assert!(rel_err(gb[idx], fd) < FD_TOL, "{name} bias[{idx}]: analytic {}, fd {fd}", gb[idx]);
    }
    for idx in 0..x.len() {
        let mut xp = x.clone();
        let v = *xp.iter().nth(idx).unwrap();
        *xp.iter_mut().nth(idx).unwrap() = v + FD_STEP;
        let lp = loss_of(&xp, wt, b);
        *xp.iter_mut().nth(idx).unwrap() = v - FD_STEP;
        let lm = loss_of(&xp, wt, b);
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let an = *gx.iter().nth(idx).unwrap();
        assert!(rel_err(an, fd) < FD_TOL, "{name} input[{idx}]: analytic {an}, fd {fd}");
    }
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut r = rng(19);
    let x = random_tensor(&mut r, (2, 2, 4, 5), 1.0);
    let wt = random_tensor(&mut r, (3, 2, 3, 3), 0.5);
    let b = Array1::from_shape_fn(3, |_| r.gen_range(-0.3..0.3));
    let label = random_tensor(&mut r, (2, 3, 4, 5), 1.0);
    check_layer_gradients(
        &x,
        &wt,
        &b,
        &label,
        |x, w, b| conv2d(x, w, b, (1, 1)).unwrap(),
        &|x, w, g| conv2d_backward(x, w, g, (1, 1)),
        "conv2d",
    );
}

#[test]
fn deconv2d_gradients_match_finite_differences() {
    let mut r = rng(23);
    // angular-strided (the DeconvA configuration, shrunk)
    let x = random_tensor(&mut r, (1, 2, 4, 3), 1.0);
    let wt = random_tensor(&mut r, (2, 2, 5, 5), 0.5);
    let b = Array1::from_shape_fn(2, |_| r.gen_range(-0.3..0.3));
    let label = random_tensor(&mut r, (1, 2, 10, 3), 1.0);
    check_layer_gradients(
        &x,
        &wt,
        &b,
        &label,
        |x, w, b| deconv2d(x, w, b, (3, 1)).unwrap(),
        &|x, w, g| deconv2d_backward(x, w, g, (3, 1)),
        "deconv2d(3,1)",
    );
    // spatially-strided (the DeconvS configuration, shrunk)
    let x = random_tensor(&mut r, (1, 2, 3, 4), 1.0);
    let wt = random_tensor(&mut r, (2, 2, 5, 5), 0.5);
    let b = Array1::from_shape_fn(2, |_| r.gen_range(-0.3..0.3));
    let label = random_tensor(&mut r, (1, 2, 3, 13), 1.0);
    check_layer_gradients(
        &x,
        &wt,
        &b,
        &label,
        |x, w, b| deconv2d(x, w, b, (1, 4)).unwrap(),
        &|x, w, g| deconv2d_backward(x, w, g, (1, 4)),
        "deconv2d(1,4)",
    );
}

#[test]
fn prelu_gradients_match_finite_differences() {
    let mut r = rng(29);
    let x = random_tensor(&mut r, (2, 3, 4, 4), 1.0);
    let slope = Array1::from_shape_fn(3, |_| r.gen_range(0.05..0.3));
    let label = random_tensor(&mut r, (2, 3, 4, 4), 1.0);
    let loss_of = |x: &Tensor4, s: &Array1<f64>| l2_loss(&prelu(x, s).unwrap(), &label).unwrap().0;
    let out = prelu(&x, &slope).unwrap();
    let (_, grad_out) = l2_loss(&out, &label).unwrap();
    let (gx, gs) = prelu_backward(&x, &slope, &grad_out);
    for idx in 0..slope.len() {
        let mut sp = slope.clone();
        sp[idx] += FD_STEP;
        let lp = loss_of(&x, &sp);
        sp[idx] -= 2.0 * FD_STEP;
        let lm = loss_of(&x, &sp);
        let fd = (lp - lm) / (2.0 * FD_STEP);
        assert!(rel_err(gs[idx], fd) < FD_TOL, "slope[{idx}]: {} vs {fd}", gs[idx]);
    }
    for idx in 0..x.len() {
        let mut xp = x.clone();
        let v = *xp.iter().nth(idx).unwrap();
        *xp.iter_mut().nth(idx).unwrap() = v + FD_STEP;
        let lp = loss_of(&xp, &slope);
        *xp.iter_mut().nth(idx).unwrap() = v - FD_STEP;
        let lm = loss_of(&xp, &slope);
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let an = *gx.iter().nth(idx).unwrap();
        assert!(rel_err(an, fd) < FD_TOL, "prelu input[{idx}]: {an} vs {fd}");
    }
}

/// Parameters at a healthy scale so activations spread well away from the
/// PReLU kinks (the tiny training initialization would pile them up at zero,
/// where finite differences measure nothing).
fn gradcheck_params(seed: u64) -> NetworkParams {
    let mut params = init_params(&PyramidConfig::default(), 3, seed).unwrap();
    let mut r = rng(seed.wrapping_add(99));
    for layer in &mut params.layers {
        for w in layer.weights.iter_mut() {
            *w = r.gen_range(-0.15..0.15);
        }
        for b in layer.bias.iter_mut() {
            *b = r.gen_range(-0.05..0.05);
        }
        if let Some(s) = &mut layer.prelu_slope {
            for v in s.iter_mut() {
                *v = r.gen_range(0.05..0.3);
            }
        }
    }
    params
}

fn pyramid_5x12(seed: u64) -> (Vec<Tensor4>, Tensor4) {
    let mut r = rng(seed);
    let epi = random_epi(&mut r, 5, 12);
    let pyr = build_lapepi(&epi, &PyramidConfig::default()).unwrap();
    let inputs = batch_inputs(&[&pyr]).unwrap();
    let label = random_tensor(&mut r, (1, 1, 13, 12), 0.5);
    (inputs, label)
}

#[test]
fn composed_network_gradients_match_finite_differences() {
    let params = gradcheck_params(31);
    let (inputs, label) = pyramid_5x12(37);
    let loss_of = |p: &NetworkParams| -> f64 {
        let (out, _) = forward(p, &inputs, 3).unwrap();
        l2_loss(&out, &label).unwrap().0
    };
    let (out, cache) = forward(&params, &inputs, 3).unwrap();
    let (_, grad_out) = l2_loss(&out, &label).unwrap();
    let grads = backward(&params, &cache, &grad_out).unwrap();

    let mut r = rng(41);
    let mut checked = 0;
    let mut skipped = 0;
    for (li, layer) in params.layers.iter().enumerate() {
        let mut slots = vec![(Slot::Weight, layer.weights.len()), (Slot::Bias, layer.bias.len())];
        if let Some(s) = &layer.prelu_slope {
            slots.push((Slot::Slope, s.len()));
        }
        let mut verified_here = 0;
        for (slot, len) in slots {
            // sample a handful of parameters per array; exhaustive FD over
            // ~250k parameters is not tractable
            let n_samples = 6.min(len);
            for _ in 0..n_samples {
                let idx = r.gen_range(0..len);
                // A perturbation can push one of ~170k activations across a
                // PReLU kink, where a difference quotient measures nothing.
                // Step-halving self-consistency detects those points.
                let fd_a = central_diff(&params, li, slot, idx, FD_STEP, &loss_of);
                let fd_b = central_diff(&params, li, slot, idx, FD_STEP / 2.0, &loss_of);
                if (fd_a - fd_b).abs() > 1e-3 * fd_a.abs().max(fd_b.abs()).max(1e-7) {
                    skipped += 1;
                    continue;
                }
                let an = get_grad(&grads, li, slot, idx);
                if an.abs().max(fd_b.abs()) < 1e-7 {
                    continue; // relative error is meaningless at zero
                }
                assert!(
                    rel_err(an, fd_b) < FD_TOL,
                    "layer {} ({:?}) [{idx}]: analytic {an}, fd {fd_b}",
                    params.layers[li].spec.id.name(),
                    slot
                );
                checked += 1;
                verified_here += 1;
            }
        }
        assert!(
            verified_here >= 3,
            "layer {} verified only {verified_here} parameters",
            params.layers[li].spec.id.name()
        );
    }
    assert!(checked >= 100, "checked only {checked} parameters");
    assert!(skipped * 4 <= checked, "too many non-smooth samples: {skipped} vs {checked}");
}

#[test]
fn gradient_linearity_in_output_grad() {
    let params = gradcheck_params(43);
    let (inputs, _) = pyramid_5x12(47);
    let (out, cache) = forward(&params, &inputs, 3).unwrap();
    let mut r = rng(53);
    let g = random_tensor(&mut r, out.raw_dim().into_pattern(), 1.0);
    let g2 = g.mapv(|v| 2.0 * v);
    let grads1 = backward(&params, &cache, &g).unwrap();
    let grads2 = backward(&params, &cache, &g2).unwrap();
    for (a, b) in grads1.layers.iter().zip(grads2.layers.iter()) {
        for (x, y) in a.weights.iter().zip(b.weights.iter()) {
            assert!((2.0 * x - y).abs() <= 1e-9 * y.abs().max(1e-12).max(x.abs()),
                "doubling grad_out must double gradients: {x} vs {y}");
        }
    }
}

#[test]
fn forward_shape_law_and_param_count() {
    let params = gradcheck_params(59);
    // 11x44 -> 31x44 at alpha_a = 3
    let mut r = rng(61);
    let epi = random_epi(&mut r, 11, 44);
    let pyr = build_lapepi(&epi, &PyramidConfig::default()).unwrap();
    let (out, _) = forward(&params, &batch_inputs(&[&pyr]).unwrap(), 3).unwrap();
    assert_eq!(out.dim(), (1, 1, 31, 44));

    // 25-view EPI -> 193 views at alpha_a = 8, same weights
    let epi = random_epi(&mut r, 25, 16);
    let pyr = build_lapepi(&epi, &PyramidConfig::default()).unwrap();
    let (out, _) = forward(&params, &batch_inputs(&[&pyr]).unwrap(), 8).unwrap();
    assert_eq!(out.dim(), (1, 1, 193, 16));

    // closed-form parameter count from the architecture table
    let counts = |k: (usize, usize), i: usize, o: usize, prelu: bool| {
        k.0 * k.1 * i * o + o + if prelu { o } else { 0 }
    };
    let expected = counts((5, 5), 1, 56, true)      // ConvFE1
        + counts((5, 5), 2, 56, true) * 2           // ConvFE2..3
        + counts((5, 5), 56, 56, true) * 2          // DeconvS1..2
        + counts((1, 5), 56, 56, true)              // ConvPE2
        + counts((1, 13), 56, 56, true)             // ConvPE3
        + counts((1, 1), 168, 24, true)             // ConvS
        + counts((3, 3), 24, 24, true) * 4          // ConvM1..4
        + counts((1, 1), 24, 56, true)              // ConvE
        + counts((9, 9), 56, 1, false);             // DeconvA
    assert_eq!(params.num_params(), expected);
}

#[test]
fn forward_is_bit_deterministic() {
    let params = gradcheck_params(67);
    let (inputs, _) = pyramid_5x12(71);
    let (a, _) = forward(&params, &inputs, 3).unwrap();
    let (b, _) = forward(&params, &inputs, 3).unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn deconv_layers_carry_deconv_kind() {
    let params = NetworkParams::zeros(&PyramidConfig::default(), 3).unwrap();
    for l in &params.layers {
        let want = matches!(l.spec.id, LayerId::DeconvS(_) | LayerId::DeconvA);
        assert_eq!(l.spec.kind == LayerKind::Deconv, want);
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut r = rng(73);
    let pred = random_tensor(&mut r, (3, 1, 4, 5), 1.0);
    let label = random_tensor(&mut r, (3, 1, 4, 5), 1.0);
    let (_, grad) = l2_loss(&pred, &label).unwrap();
    for idx in [0usize, 7, 19, 33, 59] {
        let mut p = pred.clone();
        let v = *p.iter().nth(idx).unwrap();
        *p.iter_mut().nth(idx).unwrap() = v + 1e-6;
        let lp = l2_loss(&p, &label).unwrap().0;
        *p.iter_mut().nth(idx).unwrap() = v - 1e-6;
        let lm = l2_loss(&p, &label).unwrap().0;
        let fd = (lp - lm) / 2e-6;
        let an = *grad.iter().nth(idx).unwrap();
        assert!(rel_err(an, fd) < 1e-6, "loss grad[{idx}]: {an} vs {fd}");
    }
}

#[test]
fn batch_inputs_channel_layout() {
    let mut r = rng(79);
    let epi = random_epi(&mut r, 5, 12);
    let pyr = build_lapepi(&epi, &PyramidConfig::default()).unwrap();
    let inputs = batch_inputs(&[&pyr, &pyr]).unwrap();
    assert_eq!(inputs.len(), 3);
    assert_eq!(inputs[0].dim(), (2, 1, 5, 3));
    assert_eq!(inputs[1].dim(), (2, 2, 5, 6));
    assert_eq!(inputs[2].dim(), (2, 2, 5, 12));
    // channel 0 is the raw residual, channel 1 its blurred copy
    let (res, blur) = &pyr.residuals[1];
    assert_eq!(inputs[2][[0, 0, 2, 3]], res.data()[[2, 3]]);
    assert_eq!(inputs[2][[1, 1, 2, 3]], blur.data()[[2, 3]]);
}

#[test]
fn mismatched_level_shapes_rejected() {
    let params = NetworkParams::zeros(&PyramidConfig::default(), 3).unwrap();
    let bad = vec![
        Tensor4::zeros((1, 1, 5, 3)),
        Tensor4::zeros((1, 2, 5, 7)), // should be width 6
        Tensor4::zeros((1, 2, 5, 12)),
    ];
    assert!(forward(&params, &bad, 3).is_err());
}

#[test]
fn epi_forward_roundtrip_shape() {
    let params = gradcheck_params(83);
    let mut r = rng(89);
    let epi = random_epi(&mut r, 3, 16);
    let pyr = build_lapepi(&epi, &PyramidConfig::default()).unwrap();
    let out: Epi = lfdense::net::forward_epi(&params, &pyr, 3).unwrap();
    assert_eq!(out.n_a(), 7);
    assert_eq!(out.n_w(), 16);
    assert_eq!(out.axis_tag(), EpiAxis::US);
}

#[test]
fn grad_shapes_match_param_shapes() {
    let params = gradcheck_params(97);
    let (inputs, label) = pyramid_5x12(101);
    let (out, cache) = forward(&params, &inputs, 3).unwrap();
    let (_, grad_out) = l2_loss(&out, &label).unwrap();
    let grads = backward(&params, &cache, &grad_out).unwrap();
    for (p, g) in params.layers.iter().zip(grads.layers.iter()) {
        assert_eq!(p.weights.raw_dim(), g.weights.raw_dim());
        assert_eq!(p.bias.raw_dim(), g.bias.raw_dim());
        assert_eq!(p.prelu_slope.is_some(), g.prelu_slope.is_some());
    }
}
