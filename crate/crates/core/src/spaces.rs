//! Search-space descriptors: cell topologies, candidate-operation catalogs,
//! spatial attention, and space-cardinality accounting.
//!
//! Two space families are provided. The *baseline* family is a
//! classification-style stack of dual-input DAG cells (six normal, three
//! reduction, architectures shared per kind); the *FAS* family is a
//! depth-supervised chain of three independent low/mid/high cells with a
//! halving pool (optionally gated by spatial attention) after each cell.
//! Each family comes in a vanilla and a central-difference operation variant.

use num_bigint::BigUint;
use rand::seq::index::sample as index_sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nas::genotype::{Genotype, GenotypeCell, GenotypeEdge, GenotypeMeta};
use crate::nn::{
    cdc_bn_relu, conv_bn_relu, AvgPool2d, BatchNorm2d, CdPool2d, CdcConv2d, Conv2d, Identity,
    MaxPool2d, Module, ReLU, Sequential, Zero,
};
use crate::tensor::kernels::{Conv2dCfg, SizeMode};
use crate::tensor::Scalar;
use crate::{Tape, Var};

/// Theta/lambda used by every central-difference candidate.
pub const CD_BLEND: f64 = 0.7;

// ─── op catalogs ───

pub const OP_NONE: &str = "none";
pub const OP_SKIP: &str = "skip_connect";
pub const OP_MAX_POOL: &str = "max_pool_3x3";
pub const OP_AVG_POOL: &str = "avg_pool_3x3";
pub const OP_SEP_3: &str = "sep_conv_3x3";
pub const OP_SEP_5: &str = "sep_conv_5x5";
pub const OP_DIL_3: &str = "dil_conv_3x3";
pub const OP_CDP: &str = "cdp_0.7_3x3";
pub const OP_CDC: &str = "cdc_0.7_3x3";
pub const OP_CONV_3: &str = "conv_3x3";
pub const OP_CDC_3: &str = "cdc_3x3";

/// Candidate list for baseline-family edges. The central-difference variant
/// swaps exactly two entries: the average pool becomes a CD pool and the
/// dilated conv becomes a CD conv.
pub fn baseline_catalog(cd: bool) -> Vec<String> {
    let names: [&str; 7] = if cd {
        [OP_NONE, OP_SKIP, OP_MAX_POOL, OP_CDP, OP_SEP_3, OP_SEP_5, OP_CDC]
    } else {
        [OP_NONE, OP_SKIP, OP_MAX_POOL, OP_AVG_POOL, OP_SEP_3, OP_SEP_5, OP_DIL_3]
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// Candidate list for FAS-family edges: eight entries, dominated by plain and
/// expand-squeeze convolutions (`_2_r` = two stacked 3x3 convs growing the
/// channel count by ratio r, then shrinking back).
pub fn fas_catalog(cd: bool) -> Vec<String> {
    let mut names = vec![OP_NONE.to_string(), OP_SKIP.to_string(), OP_MAX_POOL.to_string()];
    if cd {
        names.push(OP_CDC_3.to_string());
        for r in [2, 4, 6, 8] {
            names.push(format!("cdc_2_{r}"));
        }
    } else {
        names.push(OP_CONV_3.to_string());
        for r in [2, 4, 6, 8] {
            names.push(format!("conv_2_{r}"));
        }
    }
    names
}

// ─── space descriptors ───

/// One searchable connection inside a cell template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: usize,
    pub to: usize,
    pub stride: usize,
}

/// A cell shape shared by every instance of its kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellTemplate {
    pub name: String,
    /// Leading nodes fed from outside the cell.
    pub inputs: usize,
    pub intermediates: usize,
    pub edges: Vec<EdgeSpec>,
    /// Candidate op names, fixed order; index into this list is the op id.
    pub ops: Vec<String>,
    /// true: cell output concatenates all intermediates; false: the last
    /// intermediate is the output.
    pub concat_output: bool,
    /// Op-choice slots this template contributes to the space cardinality.
    /// Dual-input cells count their parallel input nodes as a single
    /// alternative source, so a 4-intermediate DAG cell has 1+2+3+4 slots.
    pub decision_slots: usize,
}

impl CellTemplate {
    /// Node count including the output node.
    pub fn nodes(&self) -> usize {
        self.inputs + self.intermediates + 1
    }

    /// Indices of edges entering intermediate node `node` (absolute index).
    pub fn incoming(&self, node: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].to == node).collect()
    }

    /// Absolute indices of the intermediate nodes.
    pub fn intermediate_nodes(&self) -> std::ops::Range<usize> {
        self.inputs..self.inputs + self.intermediates
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceFamily {
    /// Dual-input DAG cells, shared normal/reduction architectures.
    Baseline,
    /// Chain cells at three feature levels with pooled downsampling.
    Fas,
}

/// What the network predicts, and therefore which loss drives it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Global average pool -> linear -> 2-way logits (cross-entropy).
    Score,
    /// 1x1 conv -> one-channel logit map at S/8 (pixel-wise binary CE).
    BinaryMap,
    /// Multi-level fused depth map at S/8 (MSE + contrastive depth).
    DepthMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    Max,
    Cdp,
}

/// Immutable description of one search space; freely shareable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpace {
    pub name: String,
    pub family: SpaceFamily,
    pub templates: Vec<CellTemplate>,
    /// Template index per cell instance, in network order.
    pub layout: Vec<usize>,
    /// Incoming edges each intermediate node keeps after discretisation.
    pub m_per_node: usize,
    pub head: HeadKind,
    /// Downsampling pool between FAS cells (ignored by the baseline family).
    pub pool: PoolKind,
    /// Gate each FAS pool output with spatial attention (7/5/3 by level).
    pub attention: bool,
    pub cd: bool,
}

fn dag_template(name: &str, ops: Vec<String>, reduction: bool) -> CellTemplate {
    let inputs = 2;
    let intermediates = 4;
    let mut edges = Vec::new();
    for j in inputs..inputs + intermediates {
        for i in 0..j {
            // Edges leaving the cell inputs carry the spatial halving in a
            // reduction cell; everything downstream already runs at the
            // halved resolution.
            let stride = if reduction && i < inputs { 2 } else { 1 };
            edges.push(EdgeSpec { from: i, to: j, stride });
        }
    }
    CellTemplate {
        name: name.to_string(),
        inputs,
        intermediates,
        edges,
        ops,
        concat_output: true,
        decision_slots: (1..=intermediates).sum(),
    }
}

fn chain_template(name: &str, ops: Vec<String>) -> CellTemplate {
    let intermediates = 4;
    let edges =
        (1..=intermediates).map(|j| EdgeSpec { from: j - 1, to: j, stride: 1 }).collect();
    CellTemplate {
        name: name.to_string(),
        inputs: 1,
        intermediates,
        edges,
        ops,
        concat_output: false,
        decision_slots: intermediates,
    }
}

/// Nine-cell dual-input space: layout N N R N N R N N R, normal and
/// reduction architectures each shared across their instances.
pub fn baseline_space(cd: bool, head: HeadKind) -> Result<SearchSpace> {
    if head == HeadKind::DepthMap {
        return Err(Error::config("baseline space heads are score or binary-map"));
    }
    let ops = baseline_catalog(cd);
    let variant = if cd { "cd" } else { "vanilla" };
    let head_tag = match head {
        HeadKind::Score => "ce",
        HeadKind::BinaryMap => "dp",
        HeadKind::DepthMap => unreachable!(),
    };
    Ok(SearchSpace {
        name: format!("baseline-{variant}-{head_tag}"),
        family: SpaceFamily::Baseline,
        templates: vec![
            dag_template("normal", ops.clone(), false),
            dag_template("reduction", ops, true),
        ],
        layout: vec![0, 0, 1, 0, 0, 1, 0, 0, 1],
        m_per_node: 2,
        head,
        pool: PoolKind::Max,
        attention: false,
        cd,
    })
}

/// Three independent chain cells (low/mid/high) with a halving pool after
/// each, depth-map head fused from all three levels.
pub fn fas_space(cd: bool, pool: PoolKind, attention: bool) -> SearchSpace {
    let ops = fas_catalog(cd);
    let variant = if cd { "cd" } else { "vanilla" };
    let pool_tag = match pool {
        PoolKind::Max => "max",
        PoolKind::Cdp => "cdp",
    };
    let att_tag = if attention { "-att" } else { "" };
    SearchSpace {
        name: format!("fas-{variant}-{pool_tag}{att_tag}"),
        family: SpaceFamily::Fas,
        templates: vec![
            chain_template("low", ops.clone()),
            chain_template("mid", ops.clone()),
            chain_template("high", ops),
        ],
        layout: vec![0, 1, 2],
        m_per_node: 1,
        head: HeadKind::DepthMap,
        pool,
        attention,
        cd,
    }
}

impl SearchSpace {
    /// Rebuild a space from its identifier, e.g. `baseline-cd-dp` or
    /// `fas-cd-cdp-att`. Inverse of the builders' naming.
    pub fn from_name(name: &str) -> Result<SearchSpace> {
        let parts: Vec<&str> = name.split('-').collect();
        let parse_variant = |v: &str| -> Result<bool> {
            match v {
                "cd" => Ok(true),
                "vanilla" => Ok(false),
                _ => Err(Error::config(format!("unknown space variant {v:?}"))),
            }
        };
        match parts.as_slice() {
            ["baseline", variant, head] => {
                let head = match *head {
                    "ce" => HeadKind::Score,
                    "dp" => HeadKind::BinaryMap,
                    _ => return Err(Error::config(format!("unknown head tag {head:?}"))),
                };
                baseline_space(parse_variant(variant)?, head)
            }
            ["fas", variant, pool] | ["fas", variant, pool, "att"] => {
                let pool_kind = match *pool {
                    "max" => PoolKind::Max,
                    "cdp" => PoolKind::Cdp,
                    _ => return Err(Error::config(format!("unknown pool tag {pool:?}"))),
                };
                Ok(fas_space(parse_variant(variant)?, pool_kind, parts.len() == 4))
            }
            _ => Err(Error::config(format!("unparseable space name {name:?}"))),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("space serializes")
    }
}

// ─── candidate op construction ───

fn halved(stride: usize) -> Conv2dCfg {
    Conv2dCfg {
        stride,
        padding: 1,
        size_mode: SizeMode::Floor,
        ..Default::default()
    }
}

fn sep_conv<T: Scalar>(
    tag: &str,
    channels: usize,
    k: usize,
    stride: usize,
    rng: &mut impl Rng,
) -> Sequential<T> {
    let pad = k / 2;
    let mut layers: Vec<Box<dyn Module<T>>> = Vec::new();
    for (i, s) in [stride, 1].into_iter().enumerate() {
        let dw_cfg = Conv2dCfg {
            stride: s,
            padding: pad,
            groups: channels,
            size_mode: SizeMode::Floor,
            ..Default::default()
        };
        layers.push(Box::new(ReLU));
        layers.push(Box::new(Conv2d::new(
            &format!("{tag}/dw{i}"),
            channels,
            channels,
            k,
            dw_cfg,
            false,
            rng,
        )));
        layers.push(Box::new(Conv2d::new(
            &format!("{tag}/pw{i}"),
            channels,
            channels,
            1,
            Conv2dCfg::default(),
            false,
            rng,
        )));
        layers.push(Box::new(BatchNorm2d::new(&format!("{tag}/bn{i}"), channels)));
    }
    Sequential::new(layers)
}

fn dil_conv<T: Scalar>(
    tag: &str,
    channels: usize,
    stride: usize,
    rng: &mut impl Rng,
) -> Sequential<T> {
    let dw_cfg = Conv2dCfg {
        stride,
        padding: 2,
        dilation: 2,
        groups: channels,
        size_mode: SizeMode::Floor,
        ..Default::default()
    };
    Sequential::new(vec![
        Box::new(ReLU),
        Box::new(Conv2d::new(&format!("{tag}/dw"), channels, channels, 3, dw_cfg, false, rng)),
        Box::new(Conv2d::new(
            &format!("{tag}/pw"),
            channels,
            channels,
            1,
            Conv2dCfg::default(),
            false,
            rng,
        )),
        Box::new(BatchNorm2d::new(&format!("{tag}/bn"), channels)),
    ])
}

fn expand_squeeze<T: Scalar>(
    tag: &str,
    channels: usize,
    ratio: usize,
    cd: bool,
    stride: usize,
    rng: &mut impl Rng,
) -> Sequential<T> {
    let wide = channels * ratio;
    let grow = format!("{tag}/grow");
    let shrink = format!("{tag}/shrink");
    let theta = T::from_f64(CD_BLEND);
    let (a, b): (Sequential<T>, Sequential<T>) = if cd {
        (
            cdc_bn_relu(&grow, channels, wide, 3, theta, halved(stride), rng),
            cdc_bn_relu(&shrink, wide, channels, 3, theta, halved(1), rng),
        )
    } else {
        (
            conv_bn_relu(&grow, channels, wide, 3, halved(stride), rng),
            conv_bn_relu(&shrink, wide, channels, 3, halved(1), rng),
        )
    };
    Sequential::new(vec![Box::new(a), Box::new(b)])
}

/// Instantiate a catalog op. `tag` prefixes every parameter name, so each
/// edge's instance is independently addressable. All ops preserve channel
/// count; stride-2 instances halve the spatial extent (floor semantics).
pub fn build_op<T: Scalar>(
    name: &str,
    channels: usize,
    stride: usize,
    tag: &str,
    rng: &mut impl Rng,
) -> Result<Box<dyn Module<T>>> {
    let theta = T::from_f64(CD_BLEND);
    let op: Box<dyn Module<T>> = match name {
        OP_NONE => Box::new(Zero { stride }),
        OP_SKIP => {
            if stride == 1 {
                Box::new(Identity)
            } else {
                // identity cannot change resolution: project with a strided
                // 1x1 conv instead
                let cfg = Conv2dCfg {
                    stride,
                    size_mode: SizeMode::Floor,
                    ..Default::default()
                };
                Box::new(Sequential::new(vec![
                    Box::new(ReLU),
                    Box::new(Conv2d::new(
                        &format!("{tag}/proj"),
                        channels,
                        channels,
                        1,
                        cfg,
                        false,
                        rng,
                    )),
                    Box::new(BatchNorm2d::new(&format!("{tag}/bn"), channels)),
                ]))
            }
        }
        // pooling candidates are batch-normalised so their output scale
        // stays comparable with the conv candidates under channel sampling
        OP_MAX_POOL => Box::new(Sequential::new(vec![
            Box::new(MaxPool2d { k: 3, cfg: halved(stride) }),
            Box::new(BatchNorm2d::new(&format!("{tag}/bn"), channels)),
        ])),
        OP_AVG_POOL => Box::new(Sequential::new(vec![
            Box::new(AvgPool2d { k: 3, cfg: halved(stride) }),
            Box::new(BatchNorm2d::new(&format!("{tag}/bn"), channels)),
        ])),
        OP_CDP => Box::new(Sequential::new(vec![
            Box::new(CdPool2d { k: 3, lambda: theta, cfg: halved(stride) }),
            Box::new(BatchNorm2d::new(&format!("{tag}/bn"), channels)),
        ])),
        OP_SEP_3 => Box::new(sep_conv(tag, channels, 3, stride, rng)),
        OP_SEP_5 => Box::new(sep_conv(tag, channels, 5, stride, rng)),
        OP_DIL_3 => Box::new(dil_conv(tag, channels, stride, rng)),
        OP_CDC => Box::new(Sequential::new(vec![
            Box::new(ReLU),
            Box::new(CdcConv2d::new(
                &format!("{tag}/cdc"),
                channels,
                channels,
                3,
                theta,
                halved(stride),
                false,
                rng,
            )),
            Box::new(BatchNorm2d::new(&format!("{tag}/bn"), channels)),
        ])),
        OP_CONV_3 => Box::new(conv_bn_relu(tag, channels, channels, 3, halved(stride), rng)),
        OP_CDC_3 => Box::new(cdc_bn_relu(tag, channels, channels, 3, theta, halved(stride), rng)),
        _ => {
            if let Some(r) = name.strip_prefix("conv_2_") {
                let ratio: usize =
                    r.parse().map_err(|_| Error::config(format!("bad ratio in op {name:?}")))?;
                Box::new(expand_squeeze(tag, channels, ratio, false, stride, rng))
            } else if let Some(r) = name.strip_prefix("cdc_2_") {
                let ratio: usize =
                    r.parse().map_err(|_| Error::config(format!("bad ratio in op {name:?}")))?;
                Box::new(expand_squeeze(tag, channels, ratio, true, stride, rng))
            } else {
                return Err(Error::config(format!("unknown candidate op {name:?}")));
            }
        }
    };
    Ok(op)
}

// ─── spatial attention ───

/// Channel-statistics attention gate: mean and max maps over channels are
/// stacked, convolved to a single map, squashed by a sigmoid, and multiplied
/// back into the features. Shape-preserving; gate values lie in (0,1).
pub struct SpatialAttention<T: Scalar> {
    conv: Conv2d<T>,
    pub k: usize,
}

impl<T: Scalar> SpatialAttention<T> {
    pub fn new(name: &str, k: usize, rng: &mut impl Rng) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::config("attention kernel must be odd"));
        }
        let cfg = Conv2dCfg::with_stride_padding(1, (k - 1) / 2);
        Ok(SpatialAttention { conv: Conv2d::new(name, 2, 1, k, cfg, true, rng), k })
    }
}

impl<T: Scalar> Module<T> for SpatialAttention<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let mean = x.channel_mean()?;
        let max = x.channel_max()?;
        let stat = Var::concat_channels(&[mean, max])?;
        let gate = self.conv.forward(&stat)?.sigmoid();
        x.mul_broadcast_channel(&gate)
    }

    fn params(&self) -> Vec<crate::Param<T>> {
        self.conv.params()
    }
}

// ─── cardinality and sampling ───

/// Number of distinct discrete architectures, under the per-kind sharing
/// rule: every template is counted once (instances reuse its choice), each
/// contributing |ops|^decision_slots.
pub fn space_size(space: &SearchSpace) -> BigUint {
    let mut total = BigUint::from(1u32);
    for t in &space.templates {
        total *= BigUint::from(t.ops.len()).pow(t.decision_slots as u32);
    }
    total
}

/// Uniform random genotype: per intermediate node an M-subset of its
/// incoming edges, each assigned a uniform non-`none` op.
pub fn random_sample(space: &SearchSpace, rng: &mut impl Rng) -> Genotype {
    let mut cells = Vec::with_capacity(space.templates.len());
    for template in &space.templates {
        let non_none: Vec<usize> =
            (0..template.ops.len()).filter(|&o| template.ops[o] != OP_NONE).collect();
        let mut edges = Vec::new();
        for node in template.intermediate_nodes() {
            let incoming = template.incoming(node);
            let keep = space.m_per_node.min(incoming.len());
            let chosen = index_sample(rng, incoming.len(), keep);
            let mut picked: Vec<usize> = chosen.iter().map(|i| incoming[i]).collect();
            picked.sort_unstable();
            for e in picked {
                let op = non_none[rng.gen_range(0..non_none.len())];
                edges.push(GenotypeEdge {
                    to: template.edges[e].to,
                    from: template.edges[e].from,
                    op: template.ops[op].clone(),
                });
            }
        }
        cells.push(GenotypeCell { edges });
    }
    Genotype { space: space.name.clone(), cells, meta: GenotypeMeta::default() }
}

/// Straight-line attention oracle used by tests: same arithmetic, no tape.
#[cfg(test)]
fn attention_oracle(
    x: &crate::Tensor<f64>,
    w: &crate::Tensor<f64>,
    b: f64,
) -> crate::Tensor<f64> {
    use crate::tensor::kernels;
    let (n, c, h, w_dim) = x.dims4().unwrap();
    let plane = h * w_dim;
    let mut stat = vec![0.0; n * 2 * plane];
    for bi in 0..n {
        for i in 0..plane {
            let mut acc = 0.0;
            let mut best = f64::NEG_INFINITY;
            for ch in 0..c {
                let v = x.data()[(bi * c + ch) * plane + i];
                acc += v;
                best = best.max(v);
            }
            stat[(bi * 2) * plane + i] = acc / c as f64;
            stat[(bi * 2 + 1) * plane + i] = best;
        }
    }
    let stat = crate::Tensor::from_vec(&[n, 2, h, w_dim], stat).unwrap();
    let k = w.shape()[2];
    let cfg = Conv2dCfg::with_stride_padding(1, (k - 1) / 2);
    let bias = crate::Tensor::from_vec(&[1], vec![b]).unwrap();
    let gate = kernels::conv2d_fwd(&stat, w, Some(&bias), &cfg).unwrap();
    let mut out = x.clone();
    for bi in 0..n {
        for ch in 0..c {
            for i in 0..plane {
                let g = 1.0 / (1.0 + (-gate.data()[bi * plane + i]).exp());
                out.data_mut()[(bi * c + ch) * plane + i] *= g;
            }
        }
    }
    out
}

/// Run a module over a constant input on a throwaway tape.
pub fn eval_module<T: Scalar>(m: &dyn Module<T>, x: &crate::Tensor<T>) -> Result<crate::Tensor<T>> {
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    Ok(m.forward(&xv)?.value())
}
