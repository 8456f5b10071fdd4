//! Concrete networks instantiated from a genotype: the searched skeleton
//! with exactly one op per kept edge and no architecture parameters. The
//! parameter names mirror the search network's so weights can be carried
//! over by name.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nas::genotype::Genotype;
use crate::nas::supernet::{head_loss, head_scores, relu_conv_bn, Batch, Head};
use crate::nn::{conv_bn_relu, CdPool2d, MaxPool2d, Module, Sequential};
use crate::rng::substream;
use crate::spaces::{
    build_op, CellTemplate, HeadKind, PoolKind, SearchSpace, SpaceFamily, SpatialAttention,
    CD_BLEND,
};
use crate::tensor::kernels::Conv2dCfg;
use crate::tensor::{Scalar, Tensor};
use crate::{Param, Tape, Var};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NetConfig {
    /// Base cell width; retraining typically doubles the search width.
    pub channels: usize,
    /// Square input side; must be a positive multiple of 8.
    pub input_size: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { channels: 16, input_size: 64, seed: 0 }
    }
}

struct DiscreteOp<T: Scalar> {
    from: usize,
    to: usize,
    op: Box<dyn Module<T>>,
}

struct DiscreteCell<T: Scalar> {
    template: usize,
    pres: Vec<Sequential<T>>,
    ops: Vec<DiscreteOp<T>>,
}

impl<T: Scalar> DiscreteCell<T> {
    fn forward(&self, inputs: &[Var<T>], template: &CellTemplate) -> Result<Var<T>> {
        let mut vals: Vec<Var<T>> = Vec::with_capacity(template.nodes());
        for (k, inp) in inputs.iter().enumerate() {
            if self.pres.is_empty() {
                vals.push(inp.clone());
            } else {
                vals.push(self.pres[k].forward(inp)?);
            }
        }
        for node in template.intermediate_nodes() {
            let mut acc: Option<Var<T>> = None;
            for op in self.ops.iter().filter(|o| o.to == node) {
                let y = op.op.forward(&vals[op.from])?;
                acc = Some(match acc {
                    Some(a) => a.add(&y)?,
                    None => y,
                });
            }
            vals.push(acc.expect("genotype keeps at least one edge per node"));
        }
        if template.concat_output {
            Var::concat_channels(&vals[template.inputs..])
        } else {
            Ok(vals.last().expect("nonempty cell").clone())
        }
    }

    fn params(&self) -> Vec<Param<T>> {
        let mut out = Vec::new();
        for p in &self.pres {
            out.extend(p.params());
        }
        for o in &self.ops {
            out.extend(o.op.params());
        }
        out
    }
}

/// A trained-from-genotype network: fixed wiring, ordinary weights only.
pub struct DiscreteNet<T: Scalar> {
    pub space: SearchSpace,
    pub genotype: Genotype,
    pub config: NetConfig,
    stems: Vec<Sequential<T>>,
    cells: Vec<DiscreteCell<T>>,
    pools: Vec<Vec<Box<dyn Module<T>>>>,
    head: Head<T>,
}

impl<T: Scalar> DiscreteNet<T> {
    pub fn new(genotype: &Genotype, space: &SearchSpace, config: NetConfig) -> Result<Self> {
        genotype.validate(space)?;
        if config.channels == 0 {
            return Err(Error::config("cell width must be positive"));
        }
        if config.input_size == 0 || config.input_size % 8 != 0 {
            return Err(Error::config("input size must be a positive multiple of 8"));
        }
        let mut rng = substream(config.seed, "discrete/init");
        match space.family {
            SpaceFamily::Baseline => {
                Self::build_baseline(genotype.clone(), space.clone(), config, &mut rng)
            }
            SpaceFamily::Fas => Self::build_fas(genotype.clone(), space.clone(), config, &mut rng),
        }
    }

    fn cell_ops(
        genotype: &Genotype,
        template: &CellTemplate,
        t: usize,
        cell_tag: usize,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<DiscreteOp<T>>> {
        let mut ops = Vec::new();
        for ge in &genotype.cells[t].edges {
            let stride = template
                .edges
                .iter()
                .find(|e| e.from == ge.from && e.to == ge.to)
                .expect("validated edge")
                .stride;
            ops.push(DiscreteOp {
                from: ge.from,
                to: ge.to,
                op: build_op(
                    &ge.op,
                    channels,
                    stride,
                    &format!("c{cell_tag}/e{}-{}/{}", ge.from, ge.to, ge.op),
                    rng,
                )?,
            });
        }
        Ok(ops)
    }

    fn build_baseline(
        genotype: Genotype,
        space: SearchSpace,
        config: NetConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let c0 = config.channels;
        let c_stem = 3 * c0;
        let stems = vec![
            conv_bn_relu("stem0", 3, c_stem, 3, Conv2dCfg::with_stride_padding(1, 1), rng),
            conv_bn_relu("stem1", c_stem, c_stem, 3, Conv2dCfg::with_stride_padding(1, 1), rng),
        ];
        let mut cells = Vec::with_capacity(space.layout.len());
        let (mut c_pp, mut c_p, mut c_cur) = (c_stem, c_stem, c0);
        let mut prev_reduced = false;
        for (i, &t) in space.layout.iter().enumerate() {
            let template = &space.templates[t];
            let reduction = template.edges.iter().any(|e| e.stride > 1);
            if reduction {
                c_cur *= 2;
            }
            let pres = vec![
                relu_conv_bn(
                    &format!("c{i}/pre0"),
                    c_pp,
                    c_cur,
                    if prev_reduced { 2 } else { 1 },
                    rng,
                ),
                relu_conv_bn(&format!("c{i}/pre1"), c_p, c_cur, 1, rng),
            ];
            let ops = Self::cell_ops(&genotype, template, t, i, c_cur, rng)?;
            cells.push(DiscreteCell { template: t, pres, ops });
            c_pp = c_p;
            c_p = template.intermediates * c_cur;
            prev_reduced = reduction;
        }
        if matches!(space.head, HeadKind::DepthMap) {
            return Err(Error::config("baseline family has no depth head"));
        }
        let head = Head::build(&space.head, c_p, c0, space.cd, rng);
        Ok(DiscreteNet { space, genotype, config, stems, cells, pools: Vec::new(), head })
    }

    fn build_fas(
        genotype: Genotype,
        space: SearchSpace,
        config: NetConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = config.channels;
        let theta = T::from_f64(CD_BLEND);
        let stems =
            vec![conv_bn_relu("stem", 3, w, 3, Conv2dCfg::with_stride_padding(1, 1), rng)];
        let mut cells = Vec::with_capacity(space.layout.len());
        let mut pools: Vec<Vec<Box<dyn Module<T>>>> = Vec::with_capacity(space.layout.len());
        for (i, &t) in space.layout.iter().enumerate() {
            let template = &space.templates[t];
            let ops = Self::cell_ops(&genotype, template, t, i, w, rng)?;
            cells.push(DiscreteCell { template: t, pres: Vec::new(), ops });
            let mut stack: Vec<Box<dyn Module<T>>> = vec![match space.pool {
                PoolKind::Max => Box::new(MaxPool2d::halving()),
                PoolKind::Cdp => Box::new(CdPool2d::halving(theta)),
            }];
            if space.attention {
                stack.push(Box::new(SpatialAttention::new(
                    &format!("att{i}"),
                    crate::nas::supernet::ATTENTION_KERNELS[i],
                    rng,
                )?));
            }
            pools.push(stack);
        }
        let head = Head::build(&space.head, 3 * w, w, space.cd, rng);
        Ok(DiscreteNet { space, genotype, config, stems, cells, pools, head })
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let (_, c, h, w) = x.value().dims4()?;
        if c != 3 || h != w || h != self.config.input_size {
            return Err(Error::shape(format!(
                "expected (N,3,{s},{s}) input, got {:?}",
                x.shape(),
                s = self.config.input_size
            )));
        }
        let features = match self.space.family {
            SpaceFamily::Baseline => {
                let s0 = self.stems[0].forward(x)?;
                let s1 = self.stems[1].forward(&s0)?;
                let (mut prev_prev, mut prev) = (s0, s1);
                for cell in &self.cells {
                    let template = &self.space.templates[cell.template];
                    let out = cell.forward(&[prev_prev.clone(), prev.clone()], template)?;
                    prev_prev = prev;
                    prev = out;
                }
                prev
            }
            SpaceFamily::Fas => {
                let mut v = self.stems[0].forward(x)?;
                let target = self.config.input_size / 8;
                let mut taps = Vec::with_capacity(self.cells.len());
                for (cell, stack) in self.cells.iter().zip(&self.pools) {
                    let template = &self.space.templates[cell.template];
                    v = cell.forward(&[v], template)?;
                    for m in stack {
                        v = m.forward(&v)?;
                    }
                    taps.push(v.resize_bilinear(target, target)?);
                }
                Var::concat_channels(&taps)?
            }
        };
        self.head.apply(&features)
    }

    pub fn params(&self) -> Vec<Param<T>> {
        let mut out = Vec::new();
        for s in &self.stems {
            out.extend(s.params());
        }
        for c in &self.cells {
            out.extend(c.params());
        }
        for stack in &self.pools {
            for m in stack {
                out.extend(m.params());
            }
        }
        out.extend(self.head.params());
        out
    }

    /// Training objective of `batch` on a fresh tape.
    pub fn batch_loss(&self, batch: &Batch<T>) -> Result<Var<T>> {
        let tape = Tape::new();
        let x = tape.constant(batch.inputs.clone());
        let out = self.forward(&x)?;
        head_loss(&self.space.head, &out, batch)
    }

    /// Per-sample liveness scores (higher = more live), no gradients.
    pub fn score_batch(&self, inputs: &Tensor<T>) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let out = self.forward(&x)?;
        head_scores(&self.space.head, &out.value())
    }
}

/// Copy values between parameter sets wherever name and shape both match.
/// Returns how many destination parameters were filled.
pub fn copy_matching_params<T: Scalar>(src: &[Param<T>], dst: &[Param<T>]) -> usize {
    let by_name: HashMap<String, &Param<T>> = src.iter().map(|p| (p.name(), p)).collect();
    let mut copied = 0;
    for d in dst {
        if let Some(s) = by_name.get(&d.name()) {
            if s.shape() == d.shape() {
                d.set_value(s.value());
                copied += 1;
            }
        }
    }
    copied
}
