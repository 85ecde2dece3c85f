use super::*;
use crate::rng::Rng;
use crate::tensor::{Fill, Shape, Tensor};

fn random(shape: Shape, rng: &mut Rng) -> Tensor {
    Tensor::new(shape, Fill::Uniform { lo: -1.0, hi: 1.0 }, rng).unwrap()
}

/// Independent six-loop convolution used as the oracle for the fast kernels.
fn conv_brute_force(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: (usize, usize),
) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    let out_h = (xs.height + 2 * pad.0 - ws.height) / stride + 1;
    let out_w = (xs.width + 2 * pad.1 - ws.width) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(xs.batch, ws.batch, out_h, out_w));
    for n in 0..xs.batch {
        for o in 0..ws.batch {
            for yo in 0..out_h {
                for xo in 0..out_w {
                    let mut acc = bias.map_or(0.0, |b| b.data()[o]);
                    for i in 0..xs.channels {
                        for ky in 0..ws.height {
                            for kx in 0..ws.width {
                                let yi = (yo * stride + ky) as isize - pad.0 as isize;
                                let xi = (xo * stride + kx) as isize - pad.1 as isize;
                                if yi < 0
                                    || xi < 0
                                    || yi >= xs.height as isize
                                    || xi >= xs.width as isize
                                {
                                    continue;
                                }
                                acc += x.at(n, i, yi as usize, xi as usize)
                                    * w.at(o, i, ky, kx);
                            }
                        }
                    }
                    out.set(n, o, yo, xo, acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv_1x1_scales_value() {
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![3.0]).unwrap();
    let w = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![2.0]).unwrap();
    let spec = ConvSpec {
        kernel: 1,
        in_channels: 1,
        out_channels: 1,
        stride: 1,
        padding: 0,
        factorized: false,
    };
    let y = conv2d(&x, &spec, &w, None).unwrap();
    assert_eq!(y.data(), &[6.0]);
}

#[test]
fn conv_identity_kernel_is_identity() {
    let mut rng = Rng::new(3);
    let x = random(Shape::new(1, 1, 5, 6), &mut rng);
    let mut w = Tensor::zeros(Shape::new(1, 1, 3, 3));
    w.set(0, 0, 1, 1, 1.0);
    let spec = ConvSpec {
        kernel: 3,
        in_channels: 1,
        out_channels: 1,
        stride: 1,
        padding: 1,
        factorized: false,
    };
    let y = conv2d(&x, &spec, &w, None).unwrap();
    assert!(y.max_abs_diff(&x) < 1e-15);
}

#[test]
fn conv_matches_brute_force_oracle() {
    let mut rng = Rng::new(11);
    for &(stride, pad) in &[(1usize, (0usize, 0usize)), (1, (1, 1)), (2, (3, 3)), (2, (1, 0))] {
        let x = random(Shape::new(2, 3, 5, 5), &mut rng);
        let k = if pad.0 == 3 { 7 } else { 3 };
        let w = random(Shape::new(4, 3, k, k), &mut rng);
        let b = random(Shape::new(1, 1, 1, 4), &mut rng);
        let fast = conv_forward(&x, &w, Some(&b), stride, pad).unwrap();
        let slow = conv_brute_force(&x, &w, Some(&b), stride, pad);
        assert!(fast.max_abs_diff(&slow) < 1e-12, "stride {stride} pad {pad:?}");
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
    let w = Tensor::zeros(Shape::new(1, 3, 3, 3));
    assert!(conv_forward(&x, &w, None, 1, (1, 1)).is_err());
}

#[test]
fn sepconv_equals_outer_product_conv() {
    // Rank-1 factorization: for d = D = 1 the separable layer must equal a
    // conventional convolution whose kernel is the outer product col * row.
    let mut rng = Rng::new(5);
    for case in 0..20 {
        let k = [3, 5, 7][case % 3];
        let stride = 1 + case % 2;
        let x = random(Shape::new(1, 1, 9, 10), &mut rng);
        let row = random(Shape::new(1, 1, 1, k), &mut rng);
        let col = random(Shape::new(1, 1, k, 1), &mut rng);
        let mut full = Tensor::zeros(Shape::new(1, 1, k, k));
        for ky in 0..k {
            for kx in 0..k {
                full.set(0, 0, ky, kx, col.at(0, 0, ky, 0) * row.at(0, 0, 0, kx));
            }
        }
        let pad = k / 2;
        let sep = sepconv_forward(&x, &row, &col, None, stride, pad).unwrap();
        let conv = conv_brute_force(&x, &full, None, stride, (pad, pad));
        assert!(sep.max_abs_diff(&conv) < 1e-10, "k={k} stride={stride}");
    }
}

#[test]
fn sepconv_delta_kernels_are_identity() {
    let mut rng = Rng::new(6);
    let x = random(Shape::new(1, 1, 6, 7), &mut rng);
    let mut row = Tensor::zeros(Shape::new(1, 1, 1, 3));
    row.set(0, 0, 0, 1, 1.0);
    let mut col = Tensor::zeros(Shape::new(1, 1, 3, 1));
    col.set(0, 0, 1, 0, 1.0);
    let y = sepconv_forward(&x, &row, &col, None, 1, 1).unwrap();
    assert!(y.max_abs_diff(&x) < 1e-15);
}

#[test]
fn sepconv_param_count_matches_cost_model() {
    let spec = ConvSpec {
        kernel: 3,
        in_channels: 64,
        out_channels: 256,
        stride: 1,
        padding: 1,
        factorized: true,
    };
    // K*d*D + K*D^2
    assert_eq!(spec.param_count(), 3 * 64 * 256 + 3 * 256 * 256);
    assert_eq!(spec.param_count(), crate::cost::count_sep(&crate::cost::ConvConfig {
        kernel: 3,
        in_depth: 64,
        out_depth: 256,
        height: 1,
        width: 1,
    }).0 as usize);
}

#[test]
fn sepconv_geometry_matches_conv_geometry() {
    let mut rng = Rng::new(8);
    let x = random(Shape::new(1, 2, 11, 13), &mut rng);
    let row = random(Shape::new(4, 2, 1, 3), &mut rng);
    let col = random(Shape::new(4, 4, 3, 1), &mut rng);
    for stride in 1..=2 {
        let sep = sepconv_forward(&x, &row, &col, None, stride, 1).unwrap();
        let expect_h = (11 + 2 - 3) / stride + 1;
        let expect_w = (13 + 2 - 3) / stride + 1;
        assert_eq!(sep.shape().spatial(), (expect_h, expect_w));
    }
}

#[test]
fn resized_conv_replicates_pixels() {
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let w = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap();
    let spec = ConvSpec {
        kernel: 1,
        in_channels: 1,
        out_channels: 1,
        stride: 1,
        padding: 0,
        factorized: false,
    };
    let y = resized_conv(&x, 2, &spec, &w, None).unwrap();
    assert_eq!(y.shape().spatial(), (4, 4));
    assert_eq!(
        y.data(),
        &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
    );
}

#[test]
fn resized_conv_factor_one_is_plain_conv() {
    let mut rng = Rng::new(9);
    let x = random(Shape::new(1, 2, 5, 5), &mut rng);
    let w = random(Shape::new(3, 2, 3, 3), &mut rng);
    let spec = ConvSpec {
        kernel: 3,
        in_channels: 2,
        out_channels: 3,
        stride: 1,
        padding: 1,
        factorized: false,
    };
    let a = resized_conv(&x, 1, &spec, &w, None).unwrap();
    let b = conv2d(&x, &spec, &w, None).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-15);

    assert!(resized_conv(&x, 0, &spec, &w, None).is_err());
}

#[test]
fn resized_conv_triples_decoder_map() {
    let x = Tensor::zeros(Shape::new(1, 1, 40, 54));
    let up = upsample_nearest(&x, 3);
    assert_eq!(up.shape().spatial(), (120, 162));
}

#[test]
fn batchnorm_normalizes_batch() {
    let mut rng = Rng::new(10);
    let x = Tensor::new(Shape::new(2, 3, 4, 4), Fill::Uniform { lo: -2.0, hi: 5.0 }, &mut rng)
        .unwrap();
    let mut state = BatchNormState::new(3);
    let y = batchnorm(&x, &mut state).unwrap();
    let per_channel = (2 * 4 * 4) as f64;
    for c in 0..3 {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for n in 0..2 {
            for &v in y.plane(n, c) {
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / per_channel;
        let var = sq / per_channel - mean * mean;
        assert!(mean.abs() < 1e-9, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
    }
}

#[test]
fn batchnorm_zero_gamma_yields_beta() {
    let mut rng = Rng::new(12);
    let x = random(Shape::new(1, 2, 3, 3), &mut rng);
    let mut state = BatchNormState::new(2);
    state.gamma = vec![0.0, 0.0];
    state.beta = vec![0.25, -0.5];
    let y = batchnorm(&x, &mut state).unwrap();
    for &v in y.plane(0, 0) {
        assert_eq!(v, 0.25);
    }
    for &v in y.plane(0, 1) {
        assert_eq!(v, -0.5);
    }
}

#[test]
fn batchnorm_infer_with_unit_stats_is_identity() {
    let mut rng = Rng::new(13);
    let x = random(Shape::new(1, 2, 4, 4), &mut rng);
    let mut state = BatchNormState::new(2);
    state.mode = BnMode::Infer;
    state.epsilon = 1e-12;
    let y = batchnorm(&x, &mut state).unwrap();
    assert!(y.max_abs_diff(&x) < 1e-6);
}

#[test]
fn batchnorm_rejects_empty_input() {
    let x = Tensor::zeros(Shape::new(0, 2, 4, 4));
    let mut state = BatchNormState::new(2);
    assert!(batchnorm(&x, &mut state).is_err());
}

#[test]
fn leaky_relu_cases() {
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![5.0, -2.0]).unwrap();
    let y = leaky_relu(&x, 0.1);
    assert_eq!(y.data(), &[5.0, -0.2]);
    // alpha = 1 degenerates to the identity map
    let id = leaky_relu(&x, 1.0);
    assert_eq!(id.data(), x.data());
}

#[test]
fn maxpool_constant_input() {
    let x = Tensor::full(Shape::new(1, 2, 6, 6), 3.5);
    let y = maxpool(&x, 2, 2).unwrap();
    assert!(y.data().iter().all(|&v| v == 3.5));
}

#[test]
fn maxpool_floor_semantics_match_stem() {
    let x = Tensor::zeros(Shape::new(1, 64, 120, 160));
    let y = maxpool(&x, 3, 3).unwrap();
    assert_eq!(y.shape().spatial(), (40, 53));
}

#[test]
fn maxpool_matches_window_maximum() {
    let mut rng = Rng::new(14);
    let x = random(Shape::new(1, 1, 6, 6), &mut rng);
    let y = maxpool(&x, 2, 2).unwrap();
    for yo in 0..3 {
        for xo in 0..3 {
            let mut best = f64::NEG_INFINITY;
            for dy in 0..2 {
                for dx in 0..2 {
                    best = best.max(x.at(0, 0, yo * 2 + dy, xo * 2 + dx));
                }
            }
            assert_eq!(y.at(0, 0, yo, xo), best);
        }
    }
}

#[test]
fn maxpool_rejects_oversized_window() {
    let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
    assert!(maxpool(&x, 3, 1).is_err());
}

#[test]
fn sigmoid_values() {
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.0, 40.0, -40.0]).unwrap();
    let y = sigmoid(&x);
    assert_eq!(y.data()[0], 0.5);
    assert!((y.data()[1] - 1.0).abs() < 1e-12);
    assert!(y.data()[2] > 0.0 && y.data()[2] < 1e-12);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0 || v == 1.0 - 0.5 + 0.5));
}

#[test]
fn sigmoid_derivative_at_zero() {
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.0]).unwrap();
    let y = sigmoid(&x);
    let upstream = Tensor::full(x.shape(), 1.0);
    let grad = sigmoid_backward(&y, &upstream);
    assert!((grad.data()[0] - 0.25).abs() < 1e-15);
}

#[test]
fn leaky_relu_backward_slope() {
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![-3.0]).unwrap();
    let upstream = Tensor::full(x.shape(), 1.0);
    let grad = leaky_relu_backward(&x, 0.1, &upstream);
    assert!((grad.data()[0] - 0.1).abs() < 1e-15);
}
