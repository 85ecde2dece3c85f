//! Pointwise activations.

use crate::tensor::Tensor;

/// `y = x` for `x >= 0`, `alpha * x` otherwise.
pub fn leaky_relu(x: &Tensor, alpha: f64) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { alpha * v })
}

pub fn leaky_relu_backward(x: &Tensor, alpha: f64, grad_out: &Tensor) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &xv) in grad.data_mut().iter_mut().zip(x.data()) {
        if xv < 0.0 {
            *g *= alpha;
        }
    }
    grad
}

/// Numerically stable logistic function; saturates without overflow.
pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// Backward given the forward *output* `y`: `dx = dy * y * (1 - y)`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &yv) in grad.data_mut().iter_mut().zip(y.data()) {
        *g *= yv * (1.0 - yv);
    }
    grad
}

/// Clamp values into `[0, 1]`.
pub fn clamp01(x: &Tensor) -> Tensor {
    x.map(|v| v.clamp(0.0, 1.0))
}

/// Subgradient of [`clamp01`]: passes where the pre-clamp value is interior.
pub fn clamp01_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut grad = grad_out.clone();
    for (g, &xv) in grad.data_mut().iter_mut().zip(x.data()) {
        if !(0.0..=1.0).contains(&xv) {
            *g = 0.0;
        }
    }
    grad
}
