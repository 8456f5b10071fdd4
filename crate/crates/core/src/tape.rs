//! Reverse-mode autodiff on a recording tape.
//!
//! A `Tape` records every operation as a node holding the forward value and a
//! one-shot backward closure; `Var` is a cheap handle into the tape; `Param`
//! is a named, tape-independent leaf whose gradient buffer survives the tape.
//! One forward pass builds one tape, `backward` consumes it (calling it twice
//! is an error), and gradients accumulate additively into every `Param` that
//! participated. Nodes know whether any parameter feeds them, so backward
//! skips whole subgraphs (and the expensive convolution input/weight passes)
//! that cannot influence a gradient.

use crate::error::{Error, Result};
use crate::tensor::kernels::{self, Conv2dCfg};
use crate::tensor::{Scalar, Tensor};
use std::cell::RefCell;
use std::rc::Rc;

// ─── parameters ───

struct ParamInner<T: Scalar> {
    name: String,
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
}

/// A named trainable leaf. Cloning shares the underlying storage.
pub struct Param<T: Scalar> {
    inner: Rc<RefCell<ParamInner<T>>>,
}

impl<T: Scalar> Clone for Param<T> {
    fn clone(&self) -> Self {
        Param { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            inner: Rc::new(RefCell::new(ParamInner { name: name.into(), value, grad: None })),
        }
    }

    pub fn name(&self) -> String {
        self.inner.borrow().name.clone()
    }

    pub fn value(&self) -> Tensor<T> {
        self.inner.borrow().value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().value.numel()
    }

    /// Replace the value; the new tensor must keep the shape.
    pub fn set_value(&self, value: Tensor<T>) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(
            inner.value.shape(),
            value.shape(),
            "parameter {} cannot change shape",
            inner.name
        );
        inner.value = value;
    }

    /// Accumulated gradient; zeros if the parameter was never touched.
    pub fn grad(&self) -> Tensor<T> {
        let inner = self.inner.borrow();
        inner
            .grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(inner.value.shape()))
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    pub fn accumulate_grad(&self, g: &Tensor<T>) {
        let mut inner = self.inner.borrow_mut();
        inner.grad = Some(match inner.grad.take() {
            Some(existing) => existing.add(g).expect("gradient shape drift"),
            None => g.clone(),
        });
    }

    /// Identity comparison (same underlying storage).
    pub fn ptr_eq(&self, other: &Param<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl<T: Scalar> std::fmt::Debug for Param<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        write!(f, "Param({:?}, shape {:?})", inner.name, inner.value.shape())
    }
}

// ─── tape ───

type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &mut dyn FnMut(usize, Tensor<T>))>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    needs_grad: bool,
    param: Option<Param<T>>,
    backward: Option<BackwardFn<T>>,
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

pub struct Tape<T: Scalar> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on some tape.
pub struct Var<T: Scalar> {
    tape: Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var { tape: self.tape.clone(), id: self.id }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new(), consumed: false })) }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(
        &self,
        value: Tensor<T>,
        needs_grad: bool,
        param: Option<Param<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { value, needs_grad, param, backward });
        Var { tape: self.clone(), id: inner.nodes.len() - 1 }
    }

    /// A leaf with no gradient path.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, false, None, None)
    }

    /// A leaf bound to a parameter; backward accumulates into `p`.
    pub fn param(&self, p: &Param<T>) -> Var<T> {
        self.push(p.value(), true, Some(p.clone()), None)
    }
}

fn same_tape<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<()> {
    if !Rc::ptr_eq(&a.tape.inner, &b.tape.inner) {
        return Err(Error::config("variables belong to different tapes"));
    }
    Ok(())
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> Tensor<T> {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    fn needs_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].needs_grad
    }

    /// Runs reverse accumulation from this scalar node, filling parameter
    /// gradients. Consumes the tape: a second call is an error.
    pub fn backward(&self) -> Result<()> {
        let value = self.value();
        if value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                value.shape()
            )));
        }
        if !value.all_finite() {
            return Err(Error::numeric("loss is not finite"));
        }
        let mut inner = self.tape.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::config("backward already ran on this tape"));
        }
        inner.consumed = true;
        let needs: Vec<bool> = inner.nodes.iter().map(|n| n.needs_grad).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..inner.nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(Tensor::ones(value.shape()));
        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(p) = inner.nodes[id].param.clone() {
                p.accumulate_grad(&g);
            }
            if let Some(back) = inner.nodes[id].backward.take() {
                back(&g, &mut |pid, contrib| {
                    if !needs[pid] {
                        return;
                    }
                    grads[pid] = Some(match grads[pid].take() {
                        Some(t) => t.add(&contrib).expect("gradient shape drift"),
                        None => contrib,
                    });
                });
            }
        }
        Ok(())
    }
}

// ─── elementwise and reduction ops ───

impl<T: Scalar> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        same_tape(self, other)?;
        let value = self.value().add(&other.value())?;
        let (a, b) = (self.id, other.id);
        Ok(self.tape.push(
            value,
            self.needs_grad() || other.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(a, g.clone());
                sink(b, g.clone());
            })),
        ))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        same_tape(self, other)?;
        let value = self.value().sub(&other.value())?;
        let (a, b) = (self.id, other.id);
        Ok(self.tape.push(
            value,
            self.needs_grad() || other.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(a, g.clone());
                sink(b, g.scale(-T::ONE));
            })),
        ))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        same_tape(self, other)?;
        let av = self.value();
        let bv = other.value();
        let value = av.mul(&bv)?;
        let (a, b) = (self.id, other.id);
        Ok(self.tape.push(
            value,
            self.needs_grad() || other.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(a, g.mul(&bv).unwrap());
                sink(b, g.mul(&av).unwrap());
            })),
        ))
    }

    pub fn scale(&self, k: T) -> Var<T> {
        let value = self.value().scale(k);
        let a = self.id;
        self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| sink(a, g.scale(k)))),
        )
    }

    pub fn add_scalar(&self, k: T) -> Var<T> {
        let value = self.value().add_scalar(k);
        let a = self.id;
        self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| sink(a, g.clone()))),
        )
    }

    /// Element `i` of the flat layout, as a rank-0 variable. The gradient
    /// scatters back into that single position.
    pub fn at(&self, i: usize) -> Result<Var<T>> {
        let xv = self.value();
        let n = xv.numel();
        if i >= n {
            return Err(Error::config(format!("index {i} out of range for {n} elements")));
        }
        let value = Tensor::scalar(xv.data()[i]);
        let a = self.id;
        let shape = xv.shape().to_vec();
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                let mut gx = vec![T::ZERO; n];
                gx[i] = g.data()[0];
                sink(a, Tensor::from_vec(&shape, gx).unwrap());
            })),
        ))
    }

    /// Multiply a tensor by a rank-0 variable (a learnable scalar gate).
    pub fn scale_by(&self, s: &Var<T>) -> Result<Var<T>> {
        same_tape(self, s)?;
        let sv = s.value().item()?;
        let xv = self.value();
        let value = xv.scale(sv);
        let (a, b) = (self.id, s.id);
        Ok(self.tape.push(
            value,
            self.needs_grad() || s.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(a, g.scale(sv));
                let mut dot = T::ZERO;
                for (gv, xv) in g.data().iter().zip(xv.data()) {
                    dot += *gv * *xv;
                }
                sink(b, Tensor::scalar(dot));
            })),
        ))
    }

    /// Clamp values into [lo, hi]; gradients pass only where the input was
    /// already inside the interval.
    pub fn clamp(&self, lo: T, hi: T) -> Var<T> {
        let xv = self.value();
        let value = xv.map(|v| v.maximum(lo).minimum(hi));
        let a = self.id;
        self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(
                    a,
                    g.zip_map(&xv, |gv, x| if x >= lo && x <= hi { gv } else { T::ZERO })
                        .unwrap(),
                );
            })),
        )
    }

    /// Natural logarithm, elementwise.
    pub fn ln(&self) -> Var<T> {
        let xv = self.value();
        let value = xv.map(|v| v.ln());
        let a = self.id;
        self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(a, g.zip_map(&xv, |gv, x| gv / x).unwrap());
            })),
        )
    }

    pub fn relu(&self) -> Var<T> {
        let xv = self.value();
        let value = xv.map(|v| v.maximum(T::ZERO));
        let a = self.id;
        self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(a, g.zip_map(&xv, |gv, x| if x > T::ZERO { gv } else { T::ZERO }).unwrap());
            })),
        )
    }

    pub fn sigmoid(&self) -> Var<T> {
        let s = self.value().map(|v| T::ONE / (T::ONE + (-v).exp()));
        let a = self.id;
        let s_saved = s.clone();
        self.tape.push(
            s,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(a, g.zip_map(&s_saved, |gv, sv| gv * sv * (T::ONE - sv)).unwrap());
            })),
        )
    }

    pub fn sum_all(&self) -> Var<T> {
        let value = Tensor::scalar(self.value().sum());
        let a = self.id;
        let shape = self.shape();
        self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                let gv = g.data()[0];
                sink(a, Tensor::full(&shape, gv));
            })),
        )
    }

    pub fn mean_all(&self) -> Var<T> {
        let n = self.value().numel();
        let value = Tensor::scalar(self.value().mean());
        let a = self.id;
        let shape = self.shape();
        self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                let gv = g.data()[0] / T::from_usize(n);
                sink(a, Tensor::full(&shape, gv));
            })),
        )
    }

    /// Softmax along the last axis.
    pub fn softmax_last(&self) -> Var<T> {
        let s = self.value().softmax_last();
        let a = self.id;
        let s_saved = s.clone();
        self.tape.push(
            s,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                let inner: usize = *s_saved.shape().last().unwrap_or(&1);
                let mut out = g.clone();
                let od = out.data_mut();
                for (row_o, row_s) in od.chunks_mut(inner).zip(s_saved.data().chunks(inner)) {
                    let mut dot = T::ZERO;
                    for (gv, sv) in row_o.iter().zip(row_s) {
                        dot += *gv * *sv;
                    }
                    for (gv, sv) in row_o.iter_mut().zip(row_s) {
                        *gv = *sv * (*gv - dot);
                    }
                }
                sink(a, out);
            })),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let value = self.value().reshape(shape)?;
        let a = self.id;
        let orig = self.shape();
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| sink(a, g.reshape(&orig).unwrap()))),
        ))
    }
}

// ─── structured ops ───

impl<T: Scalar> Var<T> {
    pub fn conv2d(&self, w: &Var<T>, bias: Option<&Var<T>>, cfg: Conv2dCfg) -> Result<Var<T>> {
        same_tape(self, w)?;
        if let Some(b) = bias {
            same_tape(self, b)?;
        }
        let xv = self.value();
        let wv = w.value();
        let bv = bias.map(|b| b.value());
        let value = kernels::conv2d_fwd(&xv, &wv, bv.as_ref(), &cfg)?;
        let (xi, wi, bi) = (self.id, w.id, bias.map(|b| b.id));
        let (need_x, need_w) = (self.needs_grad(), w.needs_grad());
        let need_b = bias.map(|b| b.needs_grad()).unwrap_or(false);
        let x_shape = xv.shape().to_vec();
        let w_shape = wv.shape().to_vec();
        let needs = need_x || need_w || need_b;
        Ok(self.tape.push(
            value,
            needs,
            None,
            Some(Box::new(move |g, sink| {
                if need_x {
                    sink(xi, kernels::conv2d_bwd_input(g, &wv, &x_shape, &cfg).unwrap());
                }
                if need_w {
                    sink(wi, kernels::conv2d_bwd_weight(g, &xv, &w_shape, &cfg).unwrap());
                }
                if need_b {
                    sink(bi.unwrap(), kernels::conv2d_bwd_bias(g).unwrap());
                }
            })),
        ))
    }

    pub fn center_sample(&self, k: usize, cfg: Conv2dCfg) -> Result<Var<T>> {
        let xv = self.value();
        let value = kernels::center_sample_fwd(&xv, k, &cfg)?;
        let a = self.id;
        let x_shape = xv.shape().to_vec();
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(a, kernels::center_sample_bwd(g, &x_shape, k, &cfg).unwrap());
            })),
        ))
    }

    pub fn avg_pool(&self, k: usize, cfg: Conv2dCfg) -> Result<Var<T>> {
        let xv = self.value();
        let value = kernels::avg_pool_fwd(&xv, k, &cfg)?;
        let a = self.id;
        let x_shape = xv.shape().to_vec();
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(a, kernels::avg_pool_bwd(g, &x_shape, k, &cfg).unwrap());
            })),
        ))
    }

    pub fn max_pool(&self, k: usize, cfg: Conv2dCfg) -> Result<Var<T>> {
        let xv = self.value();
        let (value, arg) = kernels::max_pool_fwd(&xv, k, &cfg)?;
        let a = self.id;
        let x_shape = xv.shape().to_vec();
        let numel = xv.numel();
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(a, kernels::max_pool_bwd(g, numel, &arg, &x_shape).unwrap());
            })),
        ))
    }

    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let xv = self.value();
        let value = kernels::resize_bilinear_fwd(&xv, out_h, out_w)?;
        let a = self.id;
        let x_shape = xv.shape().to_vec();
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                sink(a, kernels::resize_bilinear_bwd(g, &x_shape).unwrap());
            })),
        ))
    }

    /// Per-channel batch normalisation using the statistics of this batch,
    /// followed by the affine map `gamma * xhat + beta`.
    pub fn batch_norm(&self, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        same_tape(self, gamma)?;
        same_tape(self, beta)?;
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        let gv = gamma.value();
        let bv = beta.value();
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::shape(format!(
                "batch-norm affine parameters must have shape [{c}], got {:?} and {:?}",
                gv.shape(),
                bv.shape()
            )));
        }
        let m = n * h * w;
        let minv = T::ONE / T::from_usize(m);
        let xd = xv.data();
        let mut mean = vec![T::ZERO; c];
        for b_i in 0..n {
            for ch in 0..c {
                let base = (b_i * c + ch) * h * w;
                let mut acc = T::ZERO;
                for &v in &xd[base..base + h * w] {
                    acc += v;
                }
                mean[ch] += acc;
            }
        }
        for v in mean.iter_mut() {
            *v *= minv;
        }
        let mut var = vec![T::ZERO; c];
        for b_i in 0..n {
            for ch in 0..c {
                let base = (b_i * c + ch) * h * w;
                let mu = mean[ch];
                let mut acc = T::ZERO;
                for &v in &xd[base..base + h * w] {
                    let d = v - mu;
                    acc += d * d;
                }
                var[ch] += acc;
            }
        }
        for v in var.iter_mut() {
            *v *= minv;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::ZERO; xv.numel()];
        let mut out = vec![T::ZERO; xv.numel()];
        for b_i in 0..n {
            for ch in 0..c {
                let base = (b_i * c + ch) * h * w;
                let (mu, is, ga, be) = (mean[ch], inv_std[ch], gv.data()[ch], bv.data()[ch]);
                for i in base..base + h * w {
                    let xh = (xd[i] - mu) * is;
                    xhat[i] = xh;
                    out[i] = ga * xh + be;
                }
            }
        }
        let value = Tensor::from_vec(xv.shape(), out)?;
        let xhat = Tensor::from_vec(xv.shape(), xhat)?;
        let (xi, gi, bi) = (self.id, gamma.id, beta.id);
        let (need_x, need_g, need_b) = (self.needs_grad(), gamma.needs_grad(), beta.needs_grad());
        let x_shape = xv.shape().to_vec();
        Ok(self.tape.push(
            value,
            need_x || need_g || need_b,
            None,
            Some(Box::new(move |g, sink| {
                let gd = g.data();
                let xh = xhat.data();
                // per-channel sums of g and g*xhat
                let mut sum_g = vec![T::ZERO; c];
                let mut sum_gx = vec![T::ZERO; c];
                for b_i in 0..n {
                    for ch in 0..c {
                        let base = (b_i * c + ch) * h * w;
                        let mut a0 = T::ZERO;
                        let mut a1 = T::ZERO;
                        for i in base..base + h * w {
                            a0 += gd[i];
                            a1 += gd[i] * xh[i];
                        }
                        sum_g[ch] += a0;
                        sum_gx[ch] += a1;
                    }
                }
                if need_b {
                    sink(bi, Tensor::from_vec(&[c], sum_g.clone()).unwrap());
                }
                if need_g {
                    sink(gi, Tensor::from_vec(&[c], sum_gx.clone()).unwrap());
                }
                if need_x {
                    let mut gx = vec![T::ZERO; gd.len()];
                    for b_i in 0..n {
                        for ch in 0..c {
                            let base = (b_i * c + ch) * h * w;
                            let ga = gv.data()[ch];
                            let is = inv_std[ch];
                            let mg = sum_g[ch] * minv;
                            let mgx = sum_gx[ch] * minv;
                            for i in base..base + h * w {
                                gx[i] = ga * is * (gd[i] - mg - xh[i] * mgx);
                            }
                        }
                    }
                    sink(xi, Tensor::from_vec(&x_shape, gx).unwrap());
                }
            })),
        ))
    }

    pub fn linear(&self, w: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
        same_tape(self, w)?;
        if let Some(b) = bias {
            same_tape(self, b)?;
        }
        let xv = self.value();
        let wv = w.value();
        let bv = bias.map(|b| b.value());
        let value = kernels::linear_fwd(&xv, &wv, bv.as_ref())?;
        let (n, f) = (xv.shape()[0], xv.shape()[1]);
        let o = wv.shape()[0];
        let (xi, wi, bi) = (self.id, w.id, bias.map(|b| b.id));
        let (need_x, need_w) = (self.needs_grad(), w.needs_grad());
        let need_b = bias.map(|b| b.needs_grad()).unwrap_or(false);
        Ok(self.tape.push(
            value,
            need_x || need_w || need_b,
            None,
            Some(Box::new(move |g, sink| {
                let gd = g.data();
                if need_x {
                    let mut gx = vec![T::ZERO; n * f];
                    for i in 0..n {
                        for j in 0..o {
                            let gv = gd[i * o + j];
                            let ws = &wv.data()[j * f..(j + 1) * f];
                            for (out, &wvj) in gx[i * f..(i + 1) * f].iter_mut().zip(ws) {
                                *out += gv * wvj;
                            }
                        }
                    }
                    sink(xi, Tensor::from_vec(&[n, f], gx).unwrap());
                }
                if need_w {
                    let mut gw = vec![T::ZERO; o * f];
                    for i in 0..n {
                        let xs = &xv.data()[i * f..(i + 1) * f];
                        for j in 0..o {
                            let gv = gd[i * o + j];
                            for (out, &xvj) in gw[j * f..(j + 1) * f].iter_mut().zip(xs) {
                                *out += gv * xvj;
                            }
                        }
                    }
                    sink(wi, Tensor::from_vec(&[o, f], gw).unwrap());
                }
                if need_b {
                    let mut gb = vec![T::ZERO; o];
                    for i in 0..n {
                        for j in 0..o {
                            gb[j] += gd[i * o + j];
                        }
                    }
                    sink(bi.unwrap(), Tensor::from_vec(&[o], gb).unwrap());
                }
            })),
        ))
    }

    /// Concatenate rank-4 tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<T>]) -> Result<Var<T>> {
        if parts.is_empty() {
            return Err(Error::config("concat of zero tensors"));
        }
        let first = &parts[0];
        for p in &parts[1..] {
            same_tape(first, p)?;
        }
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let (n, _, h, w) = values[0].dims4()?;
        let mut channels = Vec::with_capacity(parts.len());
        for v in &values {
            let (vn, vc, vh, vw) = v.dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::shape(format!(
                    "concat parts disagree outside the channel axis: {:?} vs {:?}",
                    values[0].shape(),
                    v.shape()
                )));
            }
            channels.push(vc);
        }
        let c_total: usize = channels.iter().sum();
        let mut out = vec![T::ZERO; n * c_total * h * w];
        let plane = h * w;
        for b_i in 0..n {
            let mut c_off = 0;
            for v in &values {
                let vc = v.shape()[1];
                let src = &v.data()[b_i * vc * plane..(b_i + 1) * vc * plane];
                let dst_base = (b_i * c_total + c_off) * plane;
                out[dst_base..dst_base + vc * plane].copy_from_slice(src);
                c_off += vc;
            }
        }
        let value = Tensor::from_vec(&[n, c_total, h, w], out)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let needs = parts.iter().any(|p| p.needs_grad());
        Ok(first.tape.push(
            value,
            needs,
            None,
            Some(Box::new(move |g, sink| {
                let gd = g.data();
                let mut c_off = 0;
                for (part, &vc) in ids.iter().zip(&channels) {
                    let mut gp = vec![T::ZERO; n * vc * plane];
                    for b_i in 0..n {
                        let src_base = (b_i * c_total + c_off) * plane;
                        gp[b_i * vc * plane..(b_i + 1) * vc * plane]
                            .copy_from_slice(&gd[src_base..src_base + vc * plane]);
                    }
                    sink(*part, Tensor::from_vec(&[n, vc, h, w], gp).unwrap());
                    c_off += vc;
                }
            })),
        ))
    }

    /// Copy of channels [lo, hi).
    pub fn slice_channels(&self, lo: usize, hi: usize) -> Result<Var<T>> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        if lo >= hi || hi > c {
            return Err(Error::config(format!(
                "channel slice {lo}..{hi} out of range for {c} channels"
            )));
        }
        let keep = hi - lo;
        let plane = h * w;
        let mut out = vec![T::ZERO; n * keep * plane];
        for b_i in 0..n {
            let src = (b_i * c + lo) * plane;
            out[b_i * keep * plane..(b_i + 1) * keep * plane]
                .copy_from_slice(&xv.data()[src..src + keep * plane]);
        }
        let value = Tensor::from_vec(&[n, keep, h, w], out)?;
        let a = self.id;
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                let mut gx = vec![T::ZERO; n * c * plane];
                for b_i in 0..n {
                    let dst = (b_i * c + lo) * plane;
                    gx[dst..dst + keep * plane]
                        .copy_from_slice(&g.data()[b_i * keep * plane..(b_i + 1) * keep * plane]);
                }
                sink(a, Tensor::from_vec(&[n, c, h, w], gx).unwrap());
            })),
        ))
    }

    /// Mean over the channel axis, keeping a singleton channel.
    pub fn channel_mean(&self) -> Result<Var<T>> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        let plane = h * w;
        let cinv = T::ONE / T::from_usize(c);
        let mut out = vec![T::ZERO; n * plane];
        for b_i in 0..n {
            for ch in 0..c {
                let base = (b_i * c + ch) * plane;
                for i in 0..plane {
                    out[b_i * plane + i] += xv.data()[base + i];
                }
            }
        }
        for v in out.iter_mut() {
            *v *= cinv;
        }
        let value = Tensor::from_vec(&[n, 1, h, w], out)?;
        let a = self.id;
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                let mut gx = vec![T::ZERO; n * c * plane];
                for b_i in 0..n {
                    for ch in 0..c {
                        let base = (b_i * c + ch) * plane;
                        for i in 0..plane {
                            gx[base + i] = g.data()[b_i * plane + i] * cinv;
                        }
                    }
                }
                sink(a, Tensor::from_vec(&[n, c, h, w], gx).unwrap());
            })),
        ))
    }

    /// Max over the channel axis, keeping a singleton channel.
    pub fn channel_max(&self) -> Result<Var<T>> {
        let xv = self.value();
        let (n, c, h, w) = xv.dims4()?;
        let plane = h * w;
        let mut out = vec![T::ZERO; n * plane];
        let mut arg = vec![0usize; n * plane];
        for b_i in 0..n {
            for i in 0..plane {
                let mut best = xv.data()[(b_i * c) * plane + i];
                let mut best_ch = 0;
                for ch in 1..c {
                    let v = xv.data()[(b_i * c + ch) * plane + i];
                    if v > best {
                        best = v;
                        best_ch = ch;
                    }
                }
                out[b_i * plane + i] = best;
                arg[b_i * plane + i] = best_ch;
            }
        }
        let value = Tensor::from_vec(&[n, 1, h, w], out)?;
        let a = self.id;
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                let mut gx = vec![T::ZERO; n * c * plane];
                for b_i in 0..n {
                    for i in 0..plane {
                        let ch = arg[b_i * plane + i];
                        gx[(b_i * c + ch) * plane + i] += g.data()[b_i * plane + i];
                    }
                }
                sink(a, Tensor::from_vec(&[n, c, h, w], gx).unwrap());
            })),
        ))
    }

    /// Multiply by a (N,1,H,W) map broadcast across channels.
    pub fn mul_broadcast_channel(&self, m: &Var<T>) -> Result<Var<T>> {
        same_tape(self, m)?;
        let xv = self.value();
        let mv = m.value();
        let (n, c, h, w) = xv.dims4()?;
        let (mn, mc, mh, mw) = mv.dims4()?;
        if (mn, mc, mh, mw) != (n, 1, h, w) {
            return Err(Error::shape(format!(
                "broadcast map must be [{n},1,{h},{w}], got {:?}",
                mv.shape()
            )));
        }
        let plane = h * w;
        let mut out = vec![T::ZERO; xv.numel()];
        for b_i in 0..n {
            for ch in 0..c {
                let base = (b_i * c + ch) * plane;
                for i in 0..plane {
                    out[base + i] = xv.data()[base + i] * mv.data()[b_i * plane + i];
                }
            }
        }
        let value = Tensor::from_vec(xv.shape(), out)?;
        let (xi, mi) = (self.id, m.id);
        let (need_x, need_m) = (self.needs_grad(), m.needs_grad());
        Ok(self.tape.push(
            value,
            need_x || need_m,
            None,
            Some(Box::new(move |g, sink| {
                let gd = g.data();
                if need_x {
                    let mut gx = vec![T::ZERO; gd.len()];
                    for b_i in 0..n {
                        for ch in 0..c {
                            let base = (b_i * c + ch) * plane;
                            for i in 0..plane {
                                gx[base + i] = gd[base + i] * mv.data()[b_i * plane + i];
                            }
                        }
                    }
                    sink(xi, Tensor::from_vec(&[n, c, h, w], gx).unwrap());
                }
                if need_m {
                    let mut gm = vec![T::ZERO; n * plane];
                    for b_i in 0..n {
                        for ch in 0..c {
                            let base = (b_i * c + ch) * plane;
                            for i in 0..plane {
                                gm[b_i * plane + i] += gd[base + i] * xv.data()[base + i];
                            }
                        }
                    }
                    sink(mi, Tensor::from_vec(&[n, 1, h, w], gm).unwrap());
                }
            })),
        ))
    }

    /// Sum a rank-4 tensor over its two trailing (spatial) axes, keeping
    /// singleton dimensions: (A,B,kh,kw) -> (A,B,1,1).
    pub fn sum_spatial(&self) -> Result<Var<T>> {
        let xv = self.value();
        let (a_dim, b_dim, kh, kw) = xv.dims4()?;
        let window = kh * kw;
        let mut out = vec![T::ZERO; a_dim * b_dim];
        for (i, chunk) in xv.data().chunks(window).enumerate() {
            let mut acc = T::ZERO;
            for &v in chunk {
                acc += v;
            }
            out[i] = acc;
        }
        let value = Tensor::from_vec(&[a_dim, b_dim, 1, 1], out)?;
        let a = self.id;
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                let mut gx = vec![T::ZERO; a_dim * b_dim * window];
                for (i, chunk) in gx.chunks_mut(window).enumerate() {
                    let gv = g.data()[i];
                    for v in chunk {
                        *v = gv;
                    }
                }
                sink(a, Tensor::from_vec(&[a_dim, b_dim, kh, kw], gx).unwrap());
            })),
        ))
    }

    /// Mean cross-entropy of row logits against class indices.
    pub fn cross_entropy_logits(&self, labels: &[usize]) -> Result<Var<T>> {
        let zv = self.value();
        let (n, k) = match *zv.shape() {
            [n, k] => (n, k),
            _ => return Err(Error::shape("cross-entropy expects rank-2 logits")),
        };
        if labels.len() != n {
            return Err(Error::shape(format!("{n} logit rows but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::config(format!("label {bad} out of range for {k} classes")));
        }
        let probs = zv.softmax_last();
        let mut loss = T::ZERO;
        for (i, &y) in labels.iter().enumerate() {
            loss += -(probs.data()[i * k + y].ln());
        }
        loss = loss / T::from_usize(n);
        let value = Tensor::scalar(loss);
        let a = self.id;
        let labels = labels.to_vec();
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                let scale = g.data()[0] / T::from_usize(n);
                let mut gz = probs.clone();
                let gzd = gz.data_mut();
                for (i, &y) in labels.iter().enumerate() {
                    gzd[i * k + y] -= T::ONE;
                }
                for v in gzd.iter_mut() {
                    *v *= scale;
                }
                sink(a, gz);
            })),
        ))
    }

    /// Mean binary cross-entropy of logits against a same-shape target in
    /// [0,1], computed in the numerically stable fused form.
    pub fn bce_with_logits(&self, target: &Tensor<T>) -> Result<Var<T>> {
        let zv = self.value();
        if zv.shape() != target.shape() {
            return Err(Error::shape(format!(
                "logits {:?} vs target {:?}",
                zv.shape(),
                target.shape()
            )));
        }
        let n = zv.numel();
        let mut loss = T::ZERO;
        for (&z, &t) in zv.data().iter().zip(target.data()) {
            // max(z,0) - z*t + ln(1 + exp(-|z|))
            loss += z.maximum(T::ZERO) - z * t + (T::ONE + (-z.abs()).exp()).ln();
        }
        loss = loss / T::from_usize(n);
        let value = Tensor::scalar(loss);
        let a = self.id;
        let target = target.clone();
        Ok(self.tape.push(
            value,
            self.needs_grad(),
            None,
            Some(Box::new(move |g, sink| {
                let scale = g.data()[0] / T::from_usize(n);
                let gz = zv
                    .zip_map(&target, |z, t| (T::ONE / (T::ONE + (-z).exp()) - t) * scale)
                    .unwrap();
                sink(a, gz);
            })),
        ))
    }
}
