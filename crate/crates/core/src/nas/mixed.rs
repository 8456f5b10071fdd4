//! Softmax-weighted candidate mixing: the continuous relaxation that makes
//! architecture choice differentiable, plus the partial-channel economy mode
//! where only a 1/K slice of the channels runs through the candidates.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{MaxPool2d, Module};
use crate::spaces::build_op;
use crate::tensor::kernels::{Conv2dCfg, SizeMode};
use crate::tensor::Scalar;
use crate::Var;

/// f(x) = sum_o beta_o * o(x). `beta` is a [n_ops] vector variable (softmax
/// of the edge's architecture logits), so gradients flow into both the op
/// weights and the architecture.
pub fn mixed_op_forward<T: Scalar>(
    x: &Var<T>,
    beta: &Var<T>,
    ops: &[Box<dyn Module<T>>],
) -> Result<Var<T>> {
    if beta.value().numel() != ops.len() {
        return Err(Error::shape(format!(
            "{} mixing weights for {} candidate ops",
            beta.value().numel(),
            ops.len()
        )));
    }
    let mut acc: Option<Var<T>> = None;
    for (o, op) in ops.iter().enumerate() {
        let y = op.forward(x)?.scale_by(&beta.at(o)?)?;
        if let Some(prev) = &acc {
            if prev.shape() != y.shape() {
                return Err(Error::shape(format!(
                    "candidate {o} produced {:?}, others {:?}",
                    y.shape(),
                    prev.shape()
                )));
            }
        }
        acc = Some(match acc {
            Some(a) => a.add(&y)?,
            None => y,
        });
    }
    acc.ok_or_else(|| Error::config("mixed op with zero candidates"))
}

/// One searchable edge: its candidate instances plus the channel-slicing
/// policy. With `kpc == 1` every channel passes through the mix; with
/// `kpc > 1` only the leading C/kpc channels do and the rest bypass
/// untouched (max-pooled 2x2 when the edge downsamples).
pub struct MixedOp<T: Scalar> {
    pub ops: Vec<Box<dyn Module<T>>>,
    pub names: Vec<String>,
    pub stride: usize,
    pub kpc: usize,
}

impl<T: Scalar> MixedOp<T> {
    pub fn new(
        op_names: &[String],
        channels: usize,
        stride: usize,
        kpc: usize,
        tag: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kpc == 0 || channels % kpc != 0 {
            return Err(Error::config(format!(
                "channel count {channels} not divisible by partial-channel factor {kpc}"
            )));
        }
        let mixed_c = channels / kpc;
        let mut ops = Vec::with_capacity(op_names.len());
        for name in op_names {
            ops.push(build_op::<T>(name, mixed_c, stride, &format!("{tag}/{name}"), rng)?);
        }
        Ok(MixedOp { ops, names: op_names.to_vec(), stride, kpc })
    }

    pub fn forward(&self, x: &Var<T>, beta: &Var<T>) -> Result<Var<T>> {
        if self.kpc == 1 {
            return mixed_op_forward(x, beta, &self.ops);
        }
        let c = x.shape()[1];
        let keep = c / self.kpc;
        let slice = x.slice_channels(0, keep)?;
        let rest = x.slice_channels(keep, c)?;
        let mixed = mixed_op_forward(&slice, beta, &self.ops)?;
        let rest = if mixed.shape()[2] != rest.shape()[2] {
            let cfg = Conv2dCfg { stride: 2, size_mode: SizeMode::Floor, ..Default::default() };
            MaxPool2d { k: 2, cfg }.forward(&rest)?
        } else {
            rest
        };
        Var::concat_channels(&[mixed, rest])
    }

    pub fn params(&self) -> Vec<crate::Param<T>> {
        self.ops.iter().flat_map(|o| o.params()).collect()
    }
}
