//! First-order optimisers over `Param` collections.
//!
//! Optimisers read each parameter's accumulated gradient, apply the update,
//! and leave gradient clearing to the caller (`zero_grads` helper below).
//! State is keyed by position in the parameter list, so the same list must be
//! passed on every step.

use crate::tape::Param;
use crate::tensor::{Scalar, Tensor};

/// One plain gradient-descent step: `p <- p - lr * g`. No state, no decay.
pub fn sgd_step<T: Scalar>(params: &[Param<T>], lr: T) {
    for p in params {
        let g = p.grad();
        let v = p.value().zip_map(&g, |v, g| v - lr * g).unwrap();
        p.set_value(v);
    }
}

pub fn zero_grads<T: Scalar>(params: &[Param<T>]) {
    for p in params {
        p.zero_grad();
    }
}

pub struct Sgd<T: Scalar> {
    pub lr: T,
    pub weight_decay: T,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T) -> Self {
        Sgd { lr, weight_decay: T::ZERO }
    }

    pub fn with_weight_decay(lr: T, weight_decay: T) -> Self {
        Sgd { lr, weight_decay }
    }

    pub fn step(&self, params: &[Param<T>]) {
        for p in params {
            let g = p.grad();
            let wd = self.weight_decay;
            let lr = self.lr;
            let v = p.value().zip_map(&g, |v, g| v - lr * (g + wd * v)).unwrap();
            p.set_value(v);
        }
    }
}

/// Adam with the classic L2-in-gradient weight decay.
pub struct Adam<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T, weight_decay: T) -> Self {
        Adam {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &[Param<T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(&p.shape())).collect();
            self.v = params.iter().map(|p| Tensor::zeros(&p.shape())).collect();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between steps");
        self.t += 1;
        let t = self.t as f64;
        let bc1 = T::ONE - T::from_f64(self.beta1.to_f64().powf(t));
        let bc2 = T::ONE - T::from_f64(self.beta2.to_f64().powf(t));
        for (i, p) in params.iter().enumerate() {
            let g = p.grad().zip_map(&p.value(), |g, v| g + self.weight_decay * v).unwrap();
            self.m[i] = self.m[i]
                .zip_map(&g, |m, g| self.beta1 * m + (T::ONE - self.beta1) * g)
                .unwrap();
            self.v[i] = self.v[i]
                .zip_map(&g, |v, g| self.beta2 * v + (T::ONE - self.beta2) * g * g)
                .unwrap();
            let mut new = p.value();
            {
                let out = new.data_mut();
                let m = self.m[i].data();
                let v = self.v[i].data();
                for j in 0..out.len() {
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    out[j] = out[j] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
            p.set_value(new);
        }
    }
}

/// Step-decay schedule: the base rate is halved every `halve_every` epochs.
pub fn halving_lr(base: f64, halve_every: usize, epoch: usize) -> f64 {
    if halve_every == 0 {
        return base;
    }
    base * 0.5_f64.powi((epoch / halve_every) as i32)
}
