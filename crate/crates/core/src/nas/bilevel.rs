//! Two-level optimisation: inner steps fit network weights on support data,
//! outer steps move architecture logits to lower the query objective. The
//! outer gradient is either the cheap first-order term or the unrolled
//! estimate that differentiates through one virtual weight step.

use crate::error::{Error, Result};
use crate::optim::{sgd_step, zero_grads};
use crate::tensor::{Scalar, Tensor};
use crate::Param;
use crate::Var;

/// A model whose parameters split into fast weights and slow architecture
/// logits. `loss` must build a fresh computation on every call so the two
/// levels can replay it at different parameter values.
pub trait BilevelModel<T: Scalar> {
    type Batch;

    fn weight_params(&self) -> Vec<Param<T>>;
    fn arch_params(&self) -> Vec<Param<T>>;
    fn loss(&self, batch: &Self::Batch) -> Result<Var<T>>;
}

/// How the outer step estimates the architecture gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArchGrad {
    /// Gradient of the query loss at the current weights.
    FirstOrder,
    /// Differentiates through one virtual weight step of size `gamma1`,
    /// replacing the second-order term with a central difference whose
    /// radius is `fd_scale / |grad|`. At `gamma1 = 0` this reduces exactly
    /// to the first-order estimate.
    Unrolled { gamma1: f64, fd_scale: f64 },
}

impl ArchGrad {
    pub fn unrolled(gamma1: f64) -> Self {
        ArchGrad::Unrolled { gamma1, fd_scale: 0.01 }
    }
}

// ─── parameter bookkeeping ───

pub fn snapshot_values<T: Scalar>(params: &[Param<T>]) -> Vec<Tensor<T>> {
    params.iter().map(|p| p.value()).collect()
}

pub fn restore_values<T: Scalar>(params: &[Param<T>], values: &[Tensor<T>]) {
    assert_eq!(params.len(), values.len(), "snapshot does not match parameter set");
    for (p, v) in params.iter().zip(values) {
        p.set_value(v.clone());
    }
}

/// `p <- p + scale * d`, elementwise per parameter.
pub fn add_scaled<T: Scalar>(params: &[Param<T>], dirs: &[Tensor<T>], scale: T) {
    assert_eq!(params.len(), dirs.len(), "direction does not match parameter set");
    for (p, d) in params.iter().zip(dirs) {
        p.set_value(p.value().add(&d.scale(scale)).expect("direction shape drift"));
    }
}

pub fn collect_grads<T: Scalar>(params: &[Param<T>]) -> Vec<Tensor<T>> {
    params.iter().map(|p| p.grad()).collect()
}

pub fn grad_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v.to_f64() * v.to_f64())
        .sum::<f64>()
        .sqrt()
}

// ─── steps ───

/// Differentiate `loss(batch)`, accumulating into every touched parameter.
/// Returns the loss value; a non-finite loss is refused before backward.
pub fn backward_loss<T: Scalar, M: BilevelModel<T>>(model: &M, batch: &M::Batch) -> Result<f64> {
    let loss = model.loss(batch)?;
    let value = loss.value().item()?.to_f64();
    if !value.is_finite() {
        return Err(Error::numeric(format!("loss diverged to {value}")));
    }
    loss.backward()?;
    Ok(value)
}

/// One plain gradient step on the weights; architecture logits stay put.
/// All gradients are cleared afterwards.
pub fn sgd_weight_step<T: Scalar, M: BilevelModel<T>>(
    model: &M,
    batch: &M::Batch,
    lr: T,
) -> Result<f64> {
    let value = backward_loss(model, batch)?;
    let weights = model.weight_params();
    sgd_step(&weights, lr);
    zero_grads(&weights);
    zero_grads(&model.arch_params());
    Ok(value)
}

/// Estimate the architecture gradient and leave it in the arch parameters'
/// gradient slots (replacing whatever was there, ready for any optimizer).
/// Weights and their gradients are left exactly as found. Returns the query
/// loss at the evaluation point.
pub fn accumulate_arch_grads<T: Scalar, M: BilevelModel<T>>(
    model: &M,
    support: &M::Batch,
    query: &M::Batch,
    method: ArchGrad,
) -> Result<f64> {
    let weights = model.weight_params();
    let arch = model.arch_params();
    zero_grads(&weights);
    zero_grads(&arch);

    let (gamma1, fd_scale) = match method {
        ArchGrad::FirstOrder => (0.0, 0.0),
        ArchGrad::Unrolled { gamma1, fd_scale } => (gamma1, fd_scale),
    };
    if gamma1 == 0.0 {
        let value = backward_loss(model, query)?;
        zero_grads(&weights);
        return Ok(value);
    }

    let w0 = snapshot_values(&weights);

    // virtual inner step: w' = w - gamma1 * grad_w L_support
    backward_loss(model, support)?;
    let gs_w = collect_grads(&weights);
    zero_grads(&weights);
    zero_grads(&arch);
    add_scaled(&weights, &gs_w, T::from_f64(-gamma1));

    // query gradients at w'
    let value = backward_loss(model, query)?;
    let v = collect_grads(&weights);
    let mut g_arch = collect_grads(&arch);
    zero_grads(&weights);
    zero_grads(&arch);

    // second-order correction by central difference along v
    let vnorm = grad_norm(&v);
    if vnorm > 0.0 {
        let eps = fd_scale / vnorm;
        restore_values(&weights, &w0);
        add_scaled(&weights, &v, T::from_f64(eps));
        backward_loss(model, support)?;
        let plus = collect_grads(&arch);
        zero_grads(&weights);
        zero_grads(&arch);

        restore_values(&weights, &w0);
        add_scaled(&weights, &v, T::from_f64(-eps));
        backward_loss(model, support)?;
        let minus = collect_grads(&arch);
        zero_grads(&weights);
        zero_grads(&arch);

        let k = T::from_f64(gamma1 / (2.0 * eps));
        for ((g, p), m) in g_arch.iter_mut().zip(&plus).zip(&minus) {
            *g = g.sub(&p.sub(m)?.scale(k))?;
        }
    }

    restore_values(&weights, &w0);
    for (p, g) in arch.iter().zip(&g_arch) {
        p.accumulate_grad(g);
    }
    Ok(value)
}

/// Estimate the architecture gradient and apply one plain step of size `lr`.
pub fn sgd_arch_step<T: Scalar, M: BilevelModel<T>>(
    model: &M,
    support: &M::Batch,
    query: &M::Batch,
    method: ArchGrad,
    lr: T,
) -> Result<f64> {
    let value = accumulate_arch_grads(model, support, query, method)?;
    let arch = model.arch_params();
    sgd_step(&arch, lr);
    zero_grads(&arch);
    Ok(value)
}
