//! Four-term weighted squared-error loss over likelihood maps.
//!
//! Both network outputs are compared against the same encoded label map, with
//! separate weights for pixels that are positive in the ground truth and
//! pixels that are zero. Each term is averaged over its own masked pixel
//! count per frame and then over the batch, so the weights keep their meaning
//! regardless of image area or crowd density.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weights for the positive-pixel and zero-pixel terms.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    /// Weight of ground-truth-positive pixels.
    pub positive: f64,
    /// Weight of ground-truth-zero pixels.
    pub zero: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { positive: 1.3, zero: 1.0 }
    }
}

/// Loss value plus analytic gradients for both predictions.
pub struct LossValue {
    pub total: f64,
    pub grad_map: Tensor,
    pub grad_polished: Tensor,
}

/// Evaluate the loss for a batch. `target` holds the encoded label maps; the
/// positive mask is `target > 0`, the zero mask its complement.
pub fn likelihood_loss(
    pred_map: &Tensor,
    pred_polished: &Tensor,
    target: &Tensor,
    weights: &LossWeights,
) -> Result<LossValue> {
    let shape = target.shape();
    if pred_map.shape() != shape || pred_polished.shape() != shape {
        return Err(Error::Shape(format!(
            "loss operands disagree: {} / {} vs target {}",
            pred_map.shape(),
            pred_polished.shape(),
            shape
        )));
    }
    if weights.positive <= 0.0 || weights.zero <= 0.0 {
        return Err(Error::Param("loss weights must be positive".into()));
    }
    let batch = shape.batch;
    let per_frame = shape.channels * shape.height * shape.width;
    let mut total = 0.0;
    let mut grad_map = Tensor::zeros(shape);
    let mut grad_polished = Tensor::zeros(shape);

    for n in 0..batch {
        let offset = n * per_frame;
        let t = &target.data()[offset..offset + per_frame];
        let positives = t.iter().filter(|&&v| v > 0.0).count();
        let zeros = per_frame - positives;

        for (pred, grad) in [
            (pred_map.data(), grad_map.data_mut()),
            (pred_polished.data(), grad_polished.data_mut()),
        ] {
            let p = &pred[offset..offset + per_frame];
            let g = &mut grad[offset..offset + per_frame];
            let mut pos_sq = 0.0;
            let mut zero_sq = 0.0;
            for ((gv, &pv), &tv) in g.iter_mut().zip(p).zip(t) {
                let err = pv - tv;
                if tv > 0.0 {
                    pos_sq += err * err;
                    if positives > 0 {
                        *gv = 2.0 * weights.positive * err / (positives as f64 * batch as f64);
                    }
                } else {
                    zero_sq += err * err;
                    if zeros > 0 {
                        *gv = 2.0 * weights.zero * err / (zeros as f64 * batch as f64);
                    }
                }
            }
            if positives > 0 {
                total += weights.positive * pos_sq / (positives as f64 * batch as f64);
            }
            if zeros > 0 {
                total += weights.zero * zero_sq / (zeros as f64 * batch as f64);
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("loss is not finite".into()));
    }
    Ok(LossValue { total, grad_map, grad_polished })
}
