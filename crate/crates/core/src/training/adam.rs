//! Adam optimizer with bias correction, applied per parameter tensor.

use super::TrainError;
use crate::scalar::{real, Real};

/// One Adam update on a single parameter tensor.
///
/// `t` is the 1-based global step shared by all tensors of the model;
/// `m`/`v` are this tensor's first and second moment estimates, updated in
/// place. Non-finite gradients abort with the parameter identified.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<F: Real>(
    name: &str,
    params: &mut [F],
    grads: &[F],
    m: &mut [F],
    v: &mut [F],
    t: u64,
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != m.len() || params.len() != v.len() {
        return Err(TrainError::Config(format!(
            "adam_step: misaligned shapes for {name} (params {}, grads {}, m {}, v {})",
            params.len(),
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    if t == 0 {
        return Err(TrainError::Config("adam_step: step must be ≥ 1".into()));
    }
    let one = F::one();
    let bc1 = one - beta1.powi(t as i32);
    let bc2 = one - beta2.powi(t as i32);
    for (i, ((p, &g), (mi, vi))) in params
        .iter_mut()
        .zip(grads)
        .zip(m.iter_mut().zip(v.iter_mut()))
        .enumerate()
    {
        if !g.is_finite() {
            return Err(TrainError::Numerics(format!(
                "non-finite gradient in parameter {name}[{i}]"
            )));
        }
        *mi = beta1 * *mi + (one - beta1) * g;
        *vi = beta2 * *vi + (one - beta2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Optimizer state for a fixed list of named parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    /// Global step count (0 until the first `begin_step`).
    pub t: u64,
    pub names: Vec<String>,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(shapes: &[(String, usize)], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1: real::<F>(beta1),
            beta2: real::<F>(beta2),
            eps: real::<F>(eps),
            t: 0,
            names: shapes.iter().map(|(n, _)| n.clone()).collect(),
            m: shapes.iter().map(|&(_, n)| vec![F::zero(); n]).collect(),
            v: shapes.iter().map(|&(_, n)| vec![F::zero(); n]).collect(),
        }
    }

    /// Advances the shared step counter; call once per batch before the
    /// per-tensor updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updates tensor `slot` with its gradient.
    pub fn update(&mut self, slot: usize, params: &mut [F], grads: &[F], lr: F) -> Result<(), TrainError> {
        adam_step(
            &self.names[slot].clone(),
            params,
            grads,
            &mut self.m[slot],
            &mut self.v[slot],
            self.t,
            lr,
            self.beta1,
            self.beta2,
            self.eps,
        )
    }
}
