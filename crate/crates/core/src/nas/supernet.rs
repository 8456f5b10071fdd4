//! The over-parameterised search network: every candidate op lives on every
//! edge, blended by softmaxed architecture logits. One instance owns its
//! weights and its architecture state exclusively; concurrent searches use
//! separate instances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nas::bilevel::BilevelModel;
use crate::nas::genotype::{Genotype, GenotypeMeta};
use crate::nas::mixed::MixedOp;
use crate::nn::{
    conv_bn_relu, BatchNorm2d, CdPool2d, CdcConv2d, Conv2d, Linear, MaxPool2d, Module, ReLU,
    Sequential,
};
use crate::rng::substream;
use crate::spaces::{
    CellTemplate, HeadKind, PoolKind, SearchSpace, SpaceFamily, SpatialAttention, CD_BLEND,
};
use crate::supervision::{cross_entropy, overall_depth_loss};
use crate::tensor::kernels::{Conv2dCfg, SizeMode};
use crate::tensor::{Scalar, Tensor};
use crate::{Param, Tape, Var};

/// Kernel sizes of the attention gates after the low/mid/high FAS cells.
pub const ATTENTION_KERNELS: [usize; 3] = [7, 5, 3];

// ─── architecture state ───

/// Per-edge operation logits plus per-node edge gains, shared across all
/// instances of a template. Softmax of an edge's logits gives the mixing
/// weights beta (positive, summing to one).
pub struct Alpha<T: Scalar> {
    /// [template][edge] -> logits over that edge's candidate ops.
    pub ops: Vec<Vec<Param<T>>>,
    /// [template][intermediate node] -> logits over its incoming edges;
    /// active only when partial channels are on.
    pub edge_gains: Vec<Vec<Param<T>>>,
}

impl<T: Scalar> Alpha<T> {
    /// Zero-initialised logits: exactly uniform mixing, no seed needed.
    pub fn new(space: &SearchSpace) -> Self {
        let mut ops = Vec::with_capacity(space.templates.len());
        let mut edge_gains = Vec::with_capacity(space.templates.len());
        for (t, template) in space.templates.iter().enumerate() {
            ops.push(
                (0..template.edges.len())
                    .map(|e| {
                        Param::new(
                            format!("alpha/t{t}/e{e}"),
                            Tensor::zeros(&[template.ops.len()]),
                        )
                    })
                    .collect(),
            );
            edge_gains.push(
                template
                    .intermediate_nodes()
                    .map(|node| {
                        Param::new(
                            format!("alpha/t{t}/n{node}"),
                            Tensor::zeros(&[template.incoming(node).len()]),
                        )
                    })
                    .collect(),
            );
        }
        Alpha { ops, edge_gains }
    }

    pub fn params(&self) -> Vec<Param<T>> {
        let mut out = Vec::new();
        for row in &self.ops {
            out.extend(row.iter().cloned());
        }
        for row in &self.edge_gains {
            out.extend(row.iter().cloned());
        }
        out
    }

    /// Current mixing weights of one edge, as plain numbers.
    pub fn beta(&self, template: usize, edge: usize) -> Vec<f64> {
        softmax_f64(&self.ops[template][edge].value())
    }
}

pub(crate) fn softmax_f64<T: Scalar>(logits: &Tensor<T>) -> Vec<f64> {
    let vals: Vec<f64> = logits.data().iter().map(|v| v.to_f64()).collect();
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = vals.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

// ─── configuration and batches ───

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SupernetConfig {
    /// Base cell width. Baseline cells double it after each reduction;
    /// FAS cells keep it constant. Must be divisible by `kpc`.
    pub channels: usize,
    /// Partial-channel factor: 1 sends every channel through the mix.
    pub kpc: usize,
    /// Square input side; must be a positive multiple of 8.
    pub input_size: usize,
    pub seed: u64,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        SupernetConfig { channels: 8, kpc: 2, input_size: 64, seed: 0 }
    }
}

impl SupernetConfig {
    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.kpc == 0 || self.channels % self.kpc != 0 {
            return Err(Error::config(format!(
                "cell width {} must be a positive multiple of the channel factor {}",
                self.channels, self.kpc
            )));
        }
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(Error::config("input size must be a positive multiple of 8"));
        }
        Ok(())
    }
}

/// One step's worth of data. `labels` are 1 = live, 0 = attack; `depth` is
/// required by depth-map heads and ignored by the others.
#[derive(Debug, Clone)]
pub struct Batch<T: Scalar> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
    pub depth: Option<Tensor<T>>,
}

// ─── cells ───

struct SuperCell<T: Scalar> {
    template: usize,
    /// Input preprocessors (baseline family only): 1x1 projections that
    /// align channel counts, strided when the previous cell halved.
    pres: Vec<Sequential<T>>,
    edges: Vec<MixedOp<T>>,
}

impl<T: Scalar> SuperCell<T> {
    fn forward(
        &self,
        inputs: &[Var<T>],
        template: &CellTemplate,
        betas: &[Var<T>],
        gains: Option<&[Var<T>]>,
    ) -> Result<Var<T>> {
        let mut vals: Vec<Var<T>> = Vec::with_capacity(template.nodes());
        for (k, inp) in inputs.iter().enumerate() {
            if self.pres.is_empty() {
                vals.push(inp.clone());
            } else {
                vals.push(self.pres[k].forward(inp)?);
            }
        }
        for node in template.intermediate_nodes() {
            let incoming = template.incoming(node);
            let mut acc: Option<Var<T>> = None;
            for (pos, &e) in incoming.iter().enumerate() {
                let src = template.edges[e].from;
                let mut y = self.edges[e].forward(&vals[src], &betas[e])?;
                if let Some(g) = gains {
                    y = y.scale_by(&g[node - template.inputs].at(pos)?)?;
                }
                acc = Some(match acc {
                    Some(a) => a.add(&y)?,
                    None => y,
                });
            }
            vals.push(acc.expect("every intermediate node has incoming edges"));
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
        for e in &self.edges {
            out.extend(e.params());
        }
        out
    }
}

pub(crate) enum Head<T: Scalar> {
    /// Global average pool -> linear, two logits.
    Score(Linear<T>),
    /// 1x1 conv to a one-channel logit map.
    BinaryMap(Conv2d<T>),
    /// Fused multi-level conv stack ending in ReLU, one-channel depth map.
    DepthMap(Sequential<T>),
}

impl<T: Scalar> Head<T> {
    pub(crate) fn params(&self) -> Vec<Param<T>> {
        match self {
            Head::Score(l) => l.params(),
            Head::BinaryMap(c) => c.params(),
            Head::DepthMap(s) => s.params(),
        }
    }

    pub(crate) fn apply(&self, features: &Var<T>) -> Result<Var<T>> {
        match self {
            Head::Score(linear) => {
                let (n, c, h, w) = features.value().dims4()?;
                let pooled = features
                    .sum_spatial()?
                    .scale(T::ONE / T::from_usize(h * w))
                    .reshape(&[n, c])?;
                linear.forward(&pooled)
            }
            Head::BinaryMap(conv) => conv.forward(features),
            Head::DepthMap(stack) => stack.forward(features),
        }
    }

    /// The head for `kind` over `in_c` feature channels, with the contract
    /// names the discretized twin shares.
    pub(crate) fn build(
        kind: &HeadKind,
        in_c: usize,
        cell_width: usize,
        cd: bool,
        rng: &mut impl Rng,
    ) -> Head<T> {
        match kind {
            HeadKind::Score => Head::Score(Linear::new("head/fc", in_c, 2, true, rng)),
            HeadKind::BinaryMap => Head::BinaryMap(Conv2d::new(
                "head/map",
                in_c,
                1,
                1,
                Conv2dCfg::default(),
                true,
                rng,
            )),
            HeadKind::DepthMap => Head::DepthMap(depth_head(cell_width, cd, rng)),
        }
    }
}

/// Fused depth head: 3w -> w -> w/2 -> 1 with a final ReLU. The last conv's
/// bias starts at mid depth range so the head is alive at init.
pub(crate) fn depth_head<T: Scalar>(w: usize, cd: bool, rng: &mut impl Rng) -> Sequential<T> {
    let cfg = Conv2dCfg::with_stride_padding(1, 1);
    let half = (w / 2).max(1);
    let final_conv: Box<dyn Module<T>> = if cd {
        let c = CdcConv2d::new("head/out", half, 1, 3, T::from_f64(CD_BLEND), cfg, true, rng);
        c.b.as_ref().unwrap().set_value(Tensor::full(&[1], T::from_f64(0.5)));
        Box::new(c)
    } else {
        let c = Conv2d::new("head/out", half, 1, 3, cfg, true, rng);
        c.b.as_ref().unwrap().set_value(Tensor::full(&[1], T::from_f64(0.5)));
        Box::new(c)
    };
    Sequential::new(vec![
        Box::new(conv_bn_relu("head/c0", 3 * w, w, 3, cfg, rng)),
        Box::new(conv_bn_relu("head/c1", w, half, 3, cfg, rng)),
        final_conv,
        Box::new(ReLU),
    ])
}

pub(crate) fn relu_conv_bn<T: Scalar>(
    name: &str,
    in_c: usize,
    out_c: usize,
    stride: usize,
    rng: &mut impl Rng,
) -> Sequential<T> {
    let cfg = Conv2dCfg { stride, size_mode: SizeMode::Floor, ..Default::default() };
    Sequential::new(vec![
        Box::new(ReLU),
        Box::new(Conv2d::new(&format!("{name}/proj"), in_c, out_c, 1, cfg, false, rng)),
        Box::new(BatchNorm2d::new(&format!("{name}/bn"), out_c)),
    ])
}

// ─── the supernet ───

pub struct Supernet<T: Scalar> {
    pub space: SearchSpace,
    pub config: SupernetConfig,
    pub alpha: Alpha<T>,
    stems: Vec<Sequential<T>>,
    cells: Vec<SuperCell<T>>,
    /// FAS family: pool (plus optional attention) after each cell.
    pools: Vec<Vec<Box<dyn Module<T>>>>,
    head: Head<T>,
}

impl<T: Scalar> Supernet<T> {
    pub fn new(space: &SearchSpace, config: SupernetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(config.seed, "supernet/init");
        match space.family {
            SpaceFamily::Baseline => Self::build_baseline(space.clone(), config, &mut rng),
            SpaceFamily::Fas => Self::build_fas(space.clone(), config, &mut rng),
        }
    }

    fn template_is_reduction(t: &CellTemplate) -> bool {
        t.edges.iter().any(|e| e.stride > 1)
    }

    fn build_baseline(
        space: SearchSpace,
        config: SupernetConfig,
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
            let reduction = Self::template_is_reduction(template);
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
            let mut edges = Vec::with_capacity(template.edges.len());
            for e in &template.edges {
                edges.push(MixedOp::new(
                    &template.ops,
                    c_cur,
                    e.stride,
                    config.kpc,
                    &format!("c{i}/e{}-{}", e.from, e.to),
                    rng,
                )?);
            }
            cells.push(SuperCell { template: t, pres, edges });
            c_pp = c_p;
            c_p = template.intermediates * c_cur;
            prev_reduced = reduction;
        }
        if matches!(space.head, HeadKind::DepthMap) {
            return Err(Error::config("baseline family has no depth head"));
        }
        let head = Head::build(&space.head, c_p, c0, space.cd, rng);
        let alpha = Alpha::new(&space);
        Ok(Supernet { space, config, alpha, stems, cells, pools: Vec::new(), head })
    }

    fn build_fas(space: SearchSpace, config: SupernetConfig, rng: &mut impl Rng) -> Result<Self> {
        let w = config.channels;
        let theta = T::from_f64(CD_BLEND);
        let stems =
            vec![conv_bn_relu("stem", 3, w, 3, Conv2dCfg::with_stride_padding(1, 1), rng)];
        let mut cells = Vec::with_capacity(space.layout.len());
        let mut pools: Vec<Vec<Box<dyn Module<T>>>> = Vec::with_capacity(space.layout.len());
        for (i, &t) in space.layout.iter().enumerate() {
            let template = &space.templates[t];
            let mut edges = Vec::with_capacity(template.edges.len());
            for e in &template.edges {
                edges.push(MixedOp::new(
                    &template.ops,
                    w,
                    e.stride,
                    config.kpc,
                    &format!("c{i}/e{}-{}", e.from, e.to),
                    rng,
                )?);
            }
            cells.push(SuperCell { template: t, pres: Vec::new(), edges });
            let mut stack: Vec<Box<dyn Module<T>>> = vec![match space.pool {
                PoolKind::Max => Box::new(MaxPool2d::halving()),
                PoolKind::Cdp => Box::new(CdPool2d::halving(theta)),
            }];
            if space.attention {
                stack.push(Box::new(SpatialAttention::new(
                    &format!("att{i}"),
                    ATTENTION_KERNELS[i],
                    rng,
                )?));
            }
            pools.push(stack);
        }
        let head = Head::build(&space.head, 3 * w, w, space.cd, rng);
        let alpha = Alpha::new(&space);
        Ok(Supernet { space, config, alpha, stems, cells, pools, head })
    }

    fn betas_on(&self, tape: &Tape<T>) -> Vec<Vec<Var<T>>> {
        self.alpha
            .ops
            .iter()
            .map(|row| row.iter().map(|p| tape.param(p).softmax_last()).collect())
            .collect()
    }

    fn gains_on(&self, tape: &Tape<T>) -> Option<Vec<Vec<Var<T>>>> {
        (self.config.kpc > 1).then(|| {
            self.alpha
                .edge_gains
                .iter()
                .map(|row| row.iter().map(|p| tape.param(p).softmax_last()).collect())
                .collect()
        })
    }

    /// Head output: (N,2) logits, (N,1,S/8,S/8) logit map, or a nonnegative
    /// (N,1,S/8,S/8) depth map, by head kind.
    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let (_, c, h, w) = x.value().dims4()?;
        if c != 3 || h != w || h != self.config.input_size {
            return Err(Error::shape(format!(
                "expected (N,3,{s},{s}) input, got {:?}",
                x.shape(),
                s = self.config.input_size
            )));
        }
        let tape = x.tape().clone();
        let betas = self.betas_on(&tape);
        let gains = self.gains_on(&tape);
        let features = match self.space.family {
            SpaceFamily::Baseline => {
                let s0 = self.stems[0].forward(x)?;
                let s1 = self.stems[1].forward(&s0)?;
                let (mut prev_prev, mut prev) = (s0, s1);
                for cell in &self.cells {
                    let template = &self.space.templates[cell.template];
                    let out = cell.forward(
                        &[prev_prev.clone(), prev.clone()],
                        template,
                        &betas[cell.template],
                        gains.as_ref().map(|g| g[cell.template].as_slice()),
                    )?;
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
                    v = cell.forward(
                        &[v],
                        template,
                        &betas[cell.template],
                        gains.as_ref().map(|g| g[cell.template].as_slice()),
                    )?;
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

    pub fn discretize(&self, meta: GenotypeMeta) -> Genotype {
        crate::nas::discretize::discretize(&self.alpha, &self.space, meta)
    }
}

/// Map-head pixel target: all ones for live rows, zeros for attacks.
fn binary_target<T: Scalar>(labels: &[usize], h: usize, w: usize) -> Tensor<T> {
    let n = labels.len();
    let mut data = vec![T::ZERO; n * h * w];
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            for v in data[i * h * w..(i + 1) * h * w].iter_mut() {
                *v = T::ONE;
            }
        }
    }
    Tensor::from_vec(&[n, 1, h, w], data).expect("target shape")
}

/// Training objective for a head output against a batch's targets.
pub fn head_loss<T: Scalar>(head: &HeadKind, out: &Var<T>, batch: &Batch<T>) -> Result<Var<T>> {
    let n = batch.inputs.shape()[0];
    if batch.labels.len() != n {
        return Err(Error::shape(format!("{n} inputs, {} labels", batch.labels.len())));
    }
    match head {
        HeadKind::Score => cross_entropy(out, &batch.labels),
        HeadKind::BinaryMap => {
            let (_, _, h, w) = out.value().dims4()?;
            out.bce_with_logits(&binary_target(&batch.labels, h, w))
        }
        HeadKind::DepthMap => {
            let depth = batch
                .depth
                .as_ref()
                .ok_or_else(|| Error::config("depth-map head needs depth targets"))?;
            overall_depth_loss(out, depth)
        }
    }
}

/// Reduce a head output to per-sample liveness scores.
pub fn head_scores<T: Scalar>(head: &HeadKind, out: &Tensor<T>) -> Result<Vec<f64>> {
    match head {
        HeadKind::Score => {
            let (n, k) = match *out.shape() {
                [n, k] => (n, k),
                _ => return Err(Error::shape("score head emits rank-2 logits")),
            };
            // softmax probability of the live class
            Ok((0..n)
                .map(|i| {
                    let row: Vec<f64> =
                        (0..k).map(|j| out.data()[i * k + j].to_f64()).collect();
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                    exps[1] / exps.iter().sum::<f64>()
                })
                .collect())
        }
        HeadKind::BinaryMap => {
            let (n, _, h, w) = out.dims4()?;
            let plane = h * w;
            Ok((0..n)
                .map(|i| {
                    out.data()[i * plane..(i + 1) * plane]
                        .iter()
                        .map(|&z| 1.0 / (1.0 + (-z.to_f64()).exp()))
                        .sum::<f64>()
                        / plane as f64
                })
                .collect())
        }
        HeadKind::DepthMap => {
            let (n, _, h, w) = out.dims4()?;
            let plane = h * w;
            Ok((0..n)
                .map(|i| {
                    out.data()[i * plane..(i + 1) * plane]
                        .iter()
                        .map(|&v| v.to_f64())
                        .sum::<f64>()
                        / plane as f64
                })
                .collect())
        }
    }
}

impl<T: Scalar> BilevelModel<T> for Supernet<T> {
    type Batch = Batch<T>;

    fn weight_params(&self) -> Vec<Param<T>> {
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

    fn arch_params(&self) -> Vec<Param<T>> {
        self.alpha.params()
    }

    fn loss(&self, batch: &Batch<T>) -> Result<Var<T>> {
        self.batch_loss(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::{baseline_space, eval_module, fas_space, random_sample, OP_NONE};

    fn tiny_fas_config() -> SupernetConfig {
        SupernetConfig { channels: 2, kpc: 1, input_size: 16, seed: 7 }
    }

    fn demo_batch(n: usize, size: usize, seed: u64) -> Batch<f64> {
        let mut rng = substream(seed, "supernet/test-batch");
        Batch {
            inputs: Tensor::rand_uniform(&[n, 3, size, size], 0.0, 1.0, &mut rng),
            labels: (0..n).map(|i| i % 2).collect(),
            depth: Some(Tensor::rand_uniform(&[n, 1, size / 8, size / 8], 0.0, 1.0, &mut rng)),
        }
    }

    #[test]
    fn fas_supernet_output_shape_and_nonnegativity() {
        let space = fas_space(true, PoolKind::Cdp, true);
        let net = Supernet::<f64>::new(&space, tiny_fas_config()).unwrap();
        let batch = demo_batch(2, 16, 1);
        let tape = Tape::new();
        let out = net.forward(&tape.constant(batch.inputs.clone())).unwrap().value();
        assert_eq!(out.shape(), &[2, 1, 2, 2]);
        assert!(out.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn baseline_supernet_heads_have_contract_shapes() {
        let config = SupernetConfig { channels: 2, kpc: 1, input_size: 16, seed: 3 };
        let batch = demo_batch(2, 16, 2);

        let ce = baseline_space(false, HeadKind::Score).unwrap();
        let net = Supernet::<f64>::new(&ce, config).unwrap();
        let tape = Tape::new();
        let out = net.forward(&tape.constant(batch.inputs.clone())).unwrap().value();
        assert_eq!(out.shape(), &[2, 2]);

        let dp = baseline_space(true, HeadKind::BinaryMap).unwrap();
        let net = Supernet::<f64>::new(&dp, config).unwrap();
        let tape = Tape::new();
        let out = net.forward(&tape.constant(batch.inputs.clone())).unwrap().value();
        assert_eq!(out.shape(), &[2, 1, 2, 2]);
    }

    #[test]
    fn beta_sums_to_one_and_stays_positive_after_updates() {
        let space = fas_space(false, PoolKind::Max, false);
        let net = Supernet::<f64>::new(&space, tiny_fas_config()).unwrap();
        let batch = demo_batch(2, 16, 3);
        // push alpha around with a few gradient steps
        for _ in 0..3 {
            let loss = net.loss(&batch).unwrap();
            loss.backward().unwrap();
            crate::optim::sgd_step(&net.arch_params(), 0.5);
            crate::optim::zero_grads(&net.arch_params());
            crate::optim::zero_grads(&net.weight_params());
        }
        for (t, row) in net.alpha.ops.iter().enumerate() {
            for e in 0..row.len() {
                let beta = net.alpha.beta(t, e);
                let sum: f64 = beta.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(beta.iter().all(|&b| b > 0.0));
            }
        }
    }

    #[test]
    fn chain_cell_with_saturated_alpha_is_sequential_application() {
        let space = fas_space(false, PoolKind::Max, false);
        let net = Supernet::<f64>::new(&space, tiny_fas_config()).unwrap();
        let mut rng = substream(11, "supernet/chain");
        // choose one op per edge of cell 0, saturate alpha onto it
        let template = &net.space.templates[0];
        let chosen: Vec<usize> =
            (0..4).map(|_| 1 + (rng.gen_range(0..template.ops.len() - 1))).collect();
        for (e, &op) in chosen.iter().enumerate() {
            let mut logits = vec![-60.0; template.ops.len()];
            logits[op] = 60.0;
            net.alpha.ops[0][e].set_value(Tensor::from_vec(&[template.ops.len()], logits).unwrap());
        }
        let x = Tensor::rand_uniform(&[1, 2, 16, 16], 0.0, 1.0, &mut rng);
        let tape = Tape::new();
        let betas = net.betas_on(&tape);
        let got = net.cells[0]
            .forward(&[tape.constant(x.clone())], template, &betas[0], None)
            .unwrap()
            .value();
        // oracle: apply the chosen underlying instances one after another
        let mut v = x;
        for (e, &op) in chosen.iter().enumerate() {
            v = eval_module(net.cells[0].edges[e].ops[op].as_ref(), &v).unwrap();
        }
        let diff = got
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn all_none_alpha_zeroes_every_node() {
        let space = fas_space(false, PoolKind::Max, false);
        let net = Supernet::<f64>::new(&space, tiny_fas_config()).unwrap();
        let template = &net.space.templates[1];
        for e in 0..4 {
            let mut logits = vec![-60.0; template.ops.len()];
            logits[0] = 60.0; // "none" leads each catalog
            net.alpha.ops[1][e].set_value(Tensor::from_vec(&[template.ops.len()], logits).unwrap());
        }
        assert_eq!(template.ops[0], OP_NONE);
        let x = Tensor::rand_uniform(&[1, 2, 8, 8], 0.0, 1.0, &mut substream(12, "supernet/none"));
        let tape = Tape::new();
        let betas = net.betas_on(&tape);
        let out = net.cells[1].forward(&[tape.constant(x)], template, &betas[1], None).unwrap();
        assert!(out.value().data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn dag_cell_matches_topological_sum_oracle() {
        let config = SupernetConfig { channels: 2, kpc: 1, input_size: 8, seed: 5 };
        let space = baseline_space(false, HeadKind::Score).unwrap();
        let net = Supernet::<f64>::new(&space, config).unwrap();
        let mut rng = substream(13, "supernet/dag");
        let template = &net.space.templates[0];
        // saturate every edge onto a random non-none op
        let chosen: Vec<usize> = (0..template.edges.len())
            .map(|_| 1 + rng.gen_range(0..template.ops.len() - 1))
            .collect();
        for (e, &op) in chosen.iter().enumerate() {
            let mut logits = vec![-60.0; template.ops.len()];
            logits[op] = 60.0;
            net.alpha.ops[0][e].set_value(Tensor::from_vec(&[template.ops.len()], logits).unwrap());
        }
        let cell = &net.cells[0];
        let c = 2;
        let x0 = Tensor::rand_uniform(&[1, 3 * c, 8, 8], 0.0, 1.0, &mut rng);
        let x1 = Tensor::rand_uniform(&[1, 3 * c, 8, 8], 0.0, 1.0, &mut rng);
        let tape = Tape::new();
        let betas = net.betas_on(&tape);
        let got = cell
            .forward(
                &[tape.constant(x0.clone()), tape.constant(x1.clone())],
                template,
                &betas[0],
                None,
            )
            .unwrap()
            .value();

        // independent oracle: explicit topological loop over plain tensors
        let p0 = eval_module(&cell.pres[0], &x0).unwrap();
        let p1 = eval_module(&cell.pres[1], &x1).unwrap();
        let mut nodes = vec![p0, p1];
        for node in 2..6 {
            let mut acc = Tensor::zeros(&[1, c, 8, 8]);
            for (e, spec) in template.edges.iter().enumerate() {
                if spec.to != node {
                    continue;
                }
                let y = eval_module(cell.edges[e].ops[chosen[e]].as_ref(), &nodes[spec.from])
                    .unwrap();
                for (a, b) in acc.data_mut().iter_mut().zip(y.data()) {
                    *a += b;
                }
            }
            nodes.push(acc);
        }
        let mut want = Vec::new();
        for n in &nodes[2..] {
            want.extend_from_slice(n.data());
        }
        let diff = got
            .data()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn losses_are_finite_and_gradients_reach_both_levels() {
        for space in [
            baseline_space(false, HeadKind::Score).unwrap(),
            baseline_space(true, HeadKind::BinaryMap).unwrap(),
            fas_space(true, PoolKind::Cdp, true),
        ] {
            let config = SupernetConfig { channels: 2, kpc: 2, input_size: 16, seed: 9 };
            let net = Supernet::<f64>::new(&space, config).unwrap();
            let batch = demo_batch(2, 16, 4);
            let loss = net.loss(&batch).unwrap();
            let lv = loss.value().item().unwrap();
            assert!(lv.is_finite(), "{}", space.name);
            loss.backward().unwrap();
            let w_grad: f64 =
                net.weight_params().iter().map(|p| p.grad().data().iter().map(|v| v.abs()).sum::<f64>()).sum();
            let a_grad: f64 =
                net.arch_params().iter().map(|p| p.grad().data().iter().map(|v| v.abs()).sum::<f64>()).sum();
            assert!(w_grad > 0.0, "{}: weight gradient dead", space.name);
            assert!(a_grad > 0.0, "{}: arch gradient dead", space.name);
        }
    }

    #[test]
    fn supernet_rejects_bad_configs_and_inputs() {
        let space = fas_space(false, PoolKind::Max, false);
        assert!(Supernet::<f64>::new(
            &space,
            SupernetConfig { channels: 3, kpc: 2, input_size: 16, seed: 0 }
        )
        .is_err());
        assert!(Supernet::<f64>::new(
            &space,
            SupernetConfig { channels: 4, kpc: 2, input_size: 20, seed: 0 }
        )
        .is_err());
        let net = Supernet::<f64>::new(&space, tiny_fas_config()).unwrap();
        let tape = Tape::new();
        let bad = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
        assert!(net.forward(&bad).is_err());
        // depth head without depth targets
        let mut batch = demo_batch(1, 16, 5);
        batch.depth = None;
        assert!(net.loss(&batch).is_err());
    }

    #[test]
    fn score_batch_orders_by_head_kind() {
        // binary-map scores are mean sigmoids in (0,1); score-head scores are
        // live-class probabilities in (0,1)
        let config = SupernetConfig { channels: 2, kpc: 1, input_size: 16, seed: 21 };
        let batch = demo_batch(3, 16, 6);
        for space in
            [baseline_space(false, HeadKind::Score).unwrap(), baseline_space(false, HeadKind::BinaryMap).unwrap()]
        {
            let net = Supernet::<f64>::new(&space, config).unwrap();
            let scores = net.score_batch(&batch.inputs).unwrap();
            assert_eq!(scores.len(), 3);
            assert!(scores.iter().all(|s| (0.0..=1.0).contains(s) && s.is_finite()));
        }
    }

    #[test]
    fn random_sampled_genotypes_validate_against_their_space() {
        let mut rng = substream(30, "supernet/validate");
        for space in [
            baseline_space(true, HeadKind::BinaryMap).unwrap(),
            fas_space(true, PoolKind::Cdp, true),
        ] {
            for _ in 0..50 {
                random_sample(&space, &mut rng).validate(&space).unwrap();
            }
        }
    }
}
