//! Adam and SGD-with-momentum parameter updates.

use crate::error::{Error, Result};
use crate::tape::{round_to_f32, Params};

/// Optimizer state: per-parameter moment buffers aligned with the parameter
/// registry. Buffers are allocated lazily on the first step.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        step: u64,
        first_moment: Vec<Vec<f64>>,
        second_moment: Vec<Vec<f64>>,
    },
    SgdMomentum {
        lr: f64,
        momentum: f64,
        velocity: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Optimizer {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn sgd_momentum(lr: f64, momentum: f64) -> Optimizer {
        Optimizer::SgdMomentum { lr, momentum, velocity: Vec::new() }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Adam { lr, .. } | Optimizer::SgdMomentum { lr, .. } => *lr,
        }
    }

    /// Apply one update from the gradients stored on the trainable entries.
    pub fn step(&mut self, params: &mut Params) -> Result<()> {
        match self {
            Optimizer::Adam { lr, beta1, beta2, epsilon, step, first_moment, second_moment } => {
                ensure_buffers(first_moment, params)?;
                ensure_buffers(second_moment, params)?;
                *step += 1;
                let correction1 = 1.0 - beta1.powi(*step as i32);
                let correction2 = 1.0 - beta2.powi(*step as i32);
                for (idx, entry) in params.entries_mut().iter_mut().enumerate() {
                    if !entry.trainable {
                        continue;
                    }
                    let grads = entry.value.take_grad().ok_or_else(|| {
                        Error::State(format!("parameter {} has no gradient", entry.name))
                    })?;
                    let m = &mut first_moment[idx];
                    let v = &mut second_moment[idx];
                    for (i, value) in entry.value.data_mut().iter_mut().enumerate() {
                        let g = grads[i];
                        m[i] = *beta1 * m[i] + (1.0 - *beta1) * g;
                        v[i] = *beta2 * v[i] + (1.0 - *beta2) * g * g;
                        let m_hat = m[i] / correction1;
                        let v_hat = v[i] / correction2;
                        *value -= *lr * m_hat / (v_hat.sqrt() + *epsilon);
                    }
                    round_to_f32(&mut entry.value);
                    entry.value.alloc_grad();
                }
                Ok(())
            }
            Optimizer::SgdMomentum { lr, momentum, velocity } => {
                ensure_buffers(velocity, params)?;
                for (idx, entry) in params.entries_mut().iter_mut().enumerate() {
                    if !entry.trainable {
                        continue;
                    }
                    let grads = entry.value.take_grad().ok_or_else(|| {
                        Error::State(format!("parameter {} has no gradient", entry.name))
                    })?;
                    let vel = &mut velocity[idx];
                    for (i, value) in entry.value.data_mut().iter_mut().enumerate() {
                        vel[i] = *momentum * vel[i] + grads[i];
                        *value -= *lr * vel[i];
                    }
                    round_to_f32(&mut entry.value);
                    entry.value.alloc_grad();
                }
                Ok(())
            }
        }
    }
}

fn ensure_buffers(buffers: &mut Vec<Vec<f64>>, params: &Params) -> Result<()> {
    if buffers.is_empty() {
        *buffers = params
            .entries()
            .iter()
            .map(|e| if e.trainable { vec![0.0; e.value.data().len()] } else { Vec::new() })
            .collect();
        return Ok(());
    }
    if buffers.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} parameters, registry has {}",
            buffers.len(),
            params.len()
        )));
    }
    for (buf, entry) in buffers.iter().zip(params.entries()) {
        if entry.trainable && buf.len() != entry.value.data().len() {
            return Err(Error::Shape(format!(
                "moment buffer for {} has length {}, parameter has {}",
                entry.name,
                buf.len(),
                entry.value.data().len()
            )));
        }
    }
    Ok(())
}
