//! Differentiable layers: conventional and spatially separable convolution,
//! resized (upsample + conv) convolution, batch normalization, Leaky ReLU,
//! sigmoid and max pooling. Every layer has a reverse-mode backward, checked
//! against central finite differences in the test suites.

mod act;
mod conv;
mod norm;
mod pool;

pub use act::{clamp01, clamp01_backward, leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward};
pub use conv::{
    conv_backward, conv_forward, sepconv_forward, upsample_backward, upsample_nearest,
    ConvGrads,
};
pub use norm::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, BnCache,
};
pub use pool::{maxpool_backward, maxpool_forward};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Configuration of a convolutional layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    /// Square kernel size; odd.
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
    /// When true, the layer is the composition of a 1xK and a Kx1 stage.
    pub factorized: bool,
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Param(format!("kernel must be odd positive, got {}", self.kernel)));
        }
        if self.stride == 0 {
            return Err(Error::Param("stride must be >= 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Param("channel counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Weight count of the layer (biases excluded). For the factorized form
    /// this is `K*d*D + K*D^2`: a 1xK stage mapping d->D channels followed by
    /// a Kx1 stage mapping D->D.
    pub fn param_count(&self) -> usize {
        let (k, d, dd) = (self.kernel, self.in_channels, self.out_channels);
        if self.factorized {
            k * d * dd + k * dd * dd
        } else {
            k * k * d * dd
        }
    }
}

/// Output extent of a convolution/pooling axis under floor semantics.
pub fn out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Standard cross-correlation with zero padding. `weights` is `(D, d, K, K)`.
pub fn conv2d(x: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    spec.validate()?;
    if spec.factorized {
        return Err(Error::Param("conv2d called with factorized spec; use sepconv2d".into()));
    }
    let ws = weights.shape();
    if ws.batch != spec.out_channels
        || ws.channels != spec.in_channels
        || ws.height != spec.kernel
        || ws.width != spec.kernel
    {
        return Err(Error::Shape(format!("weights {ws} do not match spec {spec:?}")));
    }
    conv_forward(x, weights, bias, spec.stride, (spec.padding, spec.padding))
}

/// Spatially separable convolution: a 1xK stage (d -> D channels, width
/// padding) followed by a Kx1 stage (D -> D, height padding, stride). The
/// composed output geometry matches [`conv2d`] with the same spec.
pub fn sepconv2d(
    x: &Tensor,
    spec: &ConvSpec,
    w_row: &Tensor,
    w_col: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor> {
    spec.validate()?;
    if !spec.factorized {
        return Err(Error::Param("sepconv2d called with non-factorized spec".into()));
    }
    sepconv_forward(x, w_row, w_col, bias, spec.stride, spec.padding)
}

/// Nearest-neighbor upsampling by `up` followed by a stride-1, size-preserving
/// convolution. The deconvolution substitute used by every decoder stage.
pub fn resized_conv(
    x: &Tensor,
    up: usize,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor> {
    if up < 1 {
        return Err(Error::Param("up factor must be >= 1".into()));
    }
    let upsampled = upsample_nearest(x, up);
    let conv_spec = ConvSpec { stride: 1, padding: spec.kernel / 2, ..*spec };
    conv2d(&upsampled, &conv_spec, weights, bias)
}

/// Batch-normalization mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Per-channel batch-normalization state.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: BnMode,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.99,
            epsilon: 1e-5,
            mode: BnMode::Train,
        }
    }
}

/// Normalize `x` per channel. Train mode uses batch statistics and folds them
/// into the running averages; infer mode uses the running statistics only.
pub fn batchnorm(x: &Tensor, state: &mut BatchNormState) -> Result<Tensor> {
    let channels = x.shape().channels;
    if state.gamma.len() != channels || state.beta.len() != channels {
        return Err(Error::Shape(format!(
            "batchnorm state sized for {} channels, input has {channels}",
            state.gamma.len()
        )));
    }
    match state.mode {
        BnMode::Train => {
            let (y, cache) = batchnorm_forward_train(x, &state.gamma, &state.beta, state.epsilon)?;
            let m = state.momentum;
            for c in 0..channels {
                state.running_mean[c] = m * state.running_mean[c] + (1.0 - m) * cache.mean[c];
                state.running_var[c] = m * state.running_var[c] + (1.0 - m) * cache.var[c];
            }
            Ok(y)
        }
        BnMode::Infer => batchnorm_forward_infer(
            x,
            &state.gamma,
            &state.beta,
            &state.running_mean,
            &state.running_var,
            state.epsilon,
        ),
    }
}

/// Per-window maximum with floor output semantics.
pub fn maxpool(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    Ok(maxpool_forward(x, window, stride)?.0)
}

#[cfg(test)]
mod tests;
