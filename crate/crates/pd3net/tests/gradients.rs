//! Central finite-difference checks for every differentiable layer.
//!
//! The oracle here is independent of the backward implementations: it only
//! calls the forward path, perturbing one element at a time with step 1e-5
//! and comparing `(f(x+h) - f(x-h)) / 2h` against the analytic gradient at a
//! relative tolerance of 1e-4.

use pd3net::rng::Rng;
use pd3net::tape::{GraphBuilder, Params, Reg};
use pd3net::tensor::{Fill, Shape, Tensor};

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-8)
}

/// Build a one-layer (or few-layer) graph, then verify analytic gradients of
/// `sum(output * probe)` with respect to every input element and every
/// trainable parameter element.
fn check_gradients(
    label: &str,
    input_shapes: &[Shape],
    build: impl Fn(&mut GraphBuilder, &mut Rng) -> Reg,
) {
    let mut rng = Rng::new(0xC0FFEE);
    let reg_shapes: Vec<(usize, usize, usize)> = input_shapes
        .iter()
        .map(|s| (s.channels, s.height, s.width))
        .collect();
    let mut builder = GraphBuilder::new(&reg_shapes);
    let out_reg = build(&mut builder, &mut rng);
    let (program, params) = builder.finish();

    let inputs: Vec<Tensor> = input_shapes
        .iter()
        .map(|&s| Tensor::new(s, Fill::Uniform { lo: -1.0, hi: 1.0 }, &mut rng).unwrap())
        .collect();
    let out_shape = {
        let mut p = params.clone();
        program.run_train(&mut p, inputs.clone()).unwrap().output(out_reg).shape()
    };
    let probe = Tensor::new(out_shape, Fill::Uniform { lo: -1.0, hi: 1.0 }, &mut rng).unwrap();

    let eval = |params: &Params, inputs: &[Tensor]| -> f64 {
        let mut p = params.clone();
        let exec = program.run_train(&mut p, inputs.to_vec()).unwrap();
        dot(exec.output(out_reg), &probe)
    };

    // Analytic gradients.
    let mut analytic_params = params.clone();
    let exec = program.run_train(&mut analytic_params, inputs.clone()).unwrap();
    let input_grads = program
        .backward(exec, &mut analytic_params, vec![(out_reg, probe.clone())])
        .unwrap();

    // Inputs.
    for (idx, shape) in input_shapes.iter().enumerate() {
        let grads = input_grads[idx]
            .as_ref()
            .unwrap_or_else(|| panic!("{label}: no gradient for input {idx}"));
        let total = shape.len().unwrap();
        for flat in 0..total {
            let mut plus = inputs.clone();
            plus[idx].data_mut()[flat] += STEP;
            let mut minus = inputs.clone();
            minus[idx].data_mut()[flat] -= STEP;
            let numeric = (eval(&params, &plus) - eval(&params, &minus)) / (2.0 * STEP);
            let analytic = grads.data()[flat];
            assert!(
                rel_err(analytic, numeric) < REL_TOL,
                "{label}: input {idx} element {flat}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    // Parameters.
    for (pidx, entry) in params.entries().iter().enumerate() {
        if !entry.trainable {
            continue;
        }
        let analytic_entry = &analytic_params.entries()[pidx];
        let grads = analytic_entry
            .value
            .grad()
            .unwrap_or_else(|| panic!("{label}: parameter {} has no gradient", entry.name));
        for flat in 0..entry.value.data().len() {
            let mut plus = params.clone();
            plus.entries_mut()[pidx].value.data_mut()[flat] += STEP;
            let mut minus = params.clone();
            minus.entries_mut()[pidx].value.data_mut()[flat] -= STEP;
            let numeric = (eval(&plus, &inputs) - eval(&minus, &inputs)) / (2.0 * STEP);
            let analytic = grads[flat];
            assert!(
                rel_err(analytic, numeric) < REL_TOL,
                "{label}: param {} element {flat}: analytic {analytic} vs numeric {numeric}",
                entry.name
            );
        }
    }
}

#[test]
fn conv2d_gradients() {
    check_gradients("conv stride 1", &[Shape::new(1, 3, 6, 6)], |b, rng| {
        b.conv("conv", 0, 4, 3, 1, 1, true, rng).unwrap()
    });
    check_gradients("conv stride 2 pad 3", &[Shape::new(1, 2, 8, 8)], |b, rng| {
        b.conv("conv", 0, 3, 7, 2, 3, true, rng).unwrap()
    });
    check_gradients("conv 1x1", &[Shape::new(1, 4, 4, 4)], |b, rng| {
        b.conv("conv", 0, 2, 1, 1, 0, false, rng).unwrap()
    });
}

#[test]
fn sepconv2d_gradients() {
    check_gradients("sepconv stride 1", &[Shape::new(1, 3, 6, 6)], |b, rng| {
        b.sepconv("sep", 0, 4, 3, 1, rng).unwrap()
    });
    check_gradients("sepconv stride 2", &[Shape::new(1, 2, 7, 7)], |b, rng| {
        b.sepconv("sep", 0, 3, 3, 2, rng).unwrap()
    });
}

#[test]
fn resized_conv_gradients() {
    check_gradients("resized conv x2", &[Shape::new(1, 2, 4, 4)], |b, rng| {
        b.resized_conv("up", 0, 3, 3, 2, rng).unwrap()
    });
    check_gradients("resized conv x3", &[Shape::new(1, 1, 3, 3)], |b, rng| {
        b.resized_conv("up", 0, 2, 3, 3, rng).unwrap()
    });
}

#[test]
fn batchnorm_gradients() {
    check_gradients("batchnorm", &[Shape::new(2, 3, 4, 4)], |b, _| b.batchnorm("bn", 0));
}

#[test]
fn activation_gradients() {
    check_gradients("leaky relu", &[Shape::new(1, 2, 5, 5)], |b, _| {
        b.leaky_relu("act", 0, 0.1)
    });
    check_gradients("sigmoid", &[Shape::new(1, 2, 4, 4)], |b, _| b.sigmoid("act", 0));
}

#[test]
fn maxpool_gradients() {
    check_gradients("maxpool 2x2", &[Shape::new(1, 2, 6, 6)], |b, _| {
        b.maxpool("pool", 0, 2, 2).unwrap()
    });
    check_gradients("maxpool 3x3", &[Shape::new(1, 1, 7, 8)], |b, _| {
        b.maxpool("pool", 0, 3, 3).unwrap()
    });
}

#[test]
fn structural_op_gradients() {
    check_gradients("crop", &[Shape::new(1, 2, 6, 7)], |b, _| {
        b.crop_to("crop", 0, (4, 4)).unwrap()
    });
    check_gradients("upsample", &[Shape::new(1, 2, 3, 3)], |b, _| b.upsample("up", 0, 2));
    check_gradients("concat", &[Shape::new(1, 2, 4, 4), Shape::new(1, 3, 4, 4)], |b, _| {
        b.concat("cat", 0, 1).unwrap()
    });
    check_gradients("add", &[Shape::new(1, 2, 4, 4), Shape::new(1, 2, 4, 4)], |b, _| {
        b.add("sum", 0, 1).unwrap()
    });
}

#[test]
fn residual_block_composite_gradients() {
    // A miniature bottleneck: conv1x1 -> bn -> lrelu -> sepconv -> bn -> lrelu
    // -> conv1x1 -> bn, plus a projected shortcut, joined by add + lrelu.
    check_gradients("mini residual block", &[Shape::new(1, 3, 6, 6)], |b, rng| {
        let main = b.conv("main1", 0, 2, 1, 1, 0, false, rng).unwrap();
        let main = b.batchnorm("main1", main);
        let main = b.leaky_relu("main1", main, 0.1);
        let main = b.sepconv("main2", main, 2, 3, 1, rng).unwrap();
        let main = b.batchnorm("main2", main);
        let main = b.leaky_relu("main2", main, 0.1);
        let main = b.conv("main3", main, 4, 1, 1, 0, false, rng).unwrap();
        let main = b.batchnorm("main3", main);
        let short = b.conv("short", 0, 4, 1, 1, 0, false, rng).unwrap();
        let short = b.batchnorm("short", short);
        let sum = b.add("join", main, short).unwrap();
        b.leaky_relu("join", sum, 0.1)
    });
}
