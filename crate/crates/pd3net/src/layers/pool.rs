//! Max pooling with argmax routing for the backward pass.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::out_dim;

/// Per-window maximum. Returns the pooled tensor and, per output element, the
/// flat input index of its maximum (first index wins ties, which keeps the
/// backward pass deterministic).
pub fn maxpool_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    if window == 0 || stride == 0 {
        return Err(Error::Param("maxpool window and stride must be >= 1".into()));
    }
    let xs = x.shape();
    if window > xs.height || window > xs.width {
        return Err(Error::Shape(format!(
            "maxpool window {window} larger than input {}x{}",
            xs.height, xs.width
        )));
    }
    let out_h = out_dim(xs.height, window, stride, 0)?;
    let out_w = out_dim(xs.width, window, stride, 0)?;
    let shape = Shape::new(xs.batch, xs.channels, out_h, out_w);
    let mut out = Tensor::zeros(shape);
    let mut argmax = vec![0usize; shape.len()?];

    let data = x.data();
    for n in 0..xs.batch {
        for c in 0..xs.channels {
            let plane_start = (n * xs.channels + c) * xs.height * xs.width;
            let out_start = (n * xs.channels + c) * out_h * out_w;
            for yo in 0..out_h {
                for xo in 0..out_w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..window {
                        let yi = yo * stride + dy;
                        let row = plane_start + yi * xs.width + xo * stride;
                        for dx in 0..window {
                            let v = data[row + dx];
                            if v > best {
                                best = v;
                                best_idx = row + dx;
                            }
                        }
                    }
                    let oidx = out_start + yo * out_w + xo;
                    out.data_mut()[oidx] = best;
                    argmax[oidx] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Route each output gradient to the input element that won its window.
pub fn maxpool_backward(grad_out: &Tensor, argmax: &[usize], input_shape: Shape) -> Tensor {
    let mut grad_in = Tensor::zeros(input_shape);
    let gin = grad_in.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        gin[idx] += g;
    }
    grad_in
}
