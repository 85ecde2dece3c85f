//! Batch normalization forward and backward.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel statistics captured by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub mean: Vec<f64>,
    /// Biased (1/N) variance, as used for normalization.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Train-mode forward: normalize with batch statistics.
/// `y = gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn batchnorm_forward_train(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    epsilon: f64,
) -> Result<(Tensor, BnCache)> {
    let xs = x.shape();
    let per_channel = xs.batch * xs.height * xs.width;
    if per_channel == 0 {
        return Err(Error::Validation(
            "batchnorm: zero elements per channel (degenerate input)".into(),
        ));
    }
    let channels = xs.channels;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut sum = 0.0;
        for n in 0..xs.batch {
            sum += x.plane(n, c).iter().sum::<f64>();
        }
        let m = sum / per_channel as f64;
        let mut sq = 0.0;
        for n in 0..xs.batch {
            sq += x.plane(n, c).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        mean[c] = m;
        var[c] = sq / per_channel as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();

    let mut y = Tensor::zeros(xs);
    for n in 0..xs.batch {
        for c in 0..channels {
            let (g, b, m, is) = (gamma[c], beta[c], mean[c], inv_std[c]);
            let src = x.plane(n, c);
            let dst = y.plane_mut(n, c);
            for (d, s) in dst.iter_mut().zip(src) {
                *d = g * (s - m) * is + b;
            }
        }
    }
    Ok((y, BnCache { mean, var, inv_std }))
}

/// Infer-mode forward: normalize with running statistics.
pub fn batchnorm_forward_infer(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    epsilon: f64,
) -> Result<Tensor> {
    let xs = x.shape();
    let mut y = Tensor::zeros(xs);
    for n in 0..xs.batch {
        for c in 0..xs.channels {
            if running_var[c] < 0.0 {
                return Err(Error::Validation(format!(
                    "batchnorm running_var[{c}] is negative"
                )));
            }
            let is = 1.0 / (running_var[c] + epsilon).sqrt();
            let (g, b, m) = (gamma[c], beta[c], running_mean[c]);
            let src = x.plane(n, c);
            let dst = y.plane_mut(n, c);
            for (d, s) in dst.iter_mut().zip(src) {
                *d = g * (s - m) * is + b;
            }
        }
    }
    Ok(y)
}

/// Backward through a train-mode forward. Gradients flow through the batch
/// statistics as well as the affine transform.
///
/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    x: &Tensor,
    gamma: &[f64],
    cache: &BnCache,
    grad_out: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let xs = x.shape();
    let count = (xs.batch * xs.height * xs.width) as f64;
    let channels = xs.channels;
    let mut grad_gamma = vec![0.0; channels];
    let mut grad_beta = vec![0.0; channels];
    let mut grad_x = Tensor::zeros(xs);

    for c in 0..channels {
        let (m, is) = (cache.mean[c], cache.inv_std[c]);
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for n in 0..xs.batch {
            let xp = x.plane(n, c);
            let gp = grad_out.plane(n, c);
            for (xv, g) in xp.iter().zip(gp) {
                sum_dy += g;
                sum_dy_xhat += g * (xv - m) * is;
            }
        }
        grad_gamma[c] = sum_dy_xhat;
        grad_beta[c] = sum_dy;
        let mean_dy = sum_dy / count;
        let mean_dy_xhat = sum_dy_xhat / count;
        let scale = gamma[c] * is;
        for n in 0..xs.batch {
            let xp = x.plane(n, c);
            let gxp = grad_x.plane_mut(n, c);
            let gp = grad_out.plane(n, c);
            for ((gx, g), xv) in gxp.iter_mut().zip(gp).zip(xp) {
                let xhat = (xv - m) * is;
                *gx = scale * (g - mean_dy - xhat * mean_dy_xhat);
            }
        }
    }
    (grad_x, grad_gamma, grad_beta)
}
