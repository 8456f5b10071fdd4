//! Reference depth-regression networks: a stem, three conv blocks with
//! stride-2 pooling, multi-level fusion at the deepest resolution, and a
//! three-conv head emitting a single-channel depth map at 1/8 input size.
//!
//! Three variants share the exact same parameter layout:
//!   depthnet — vanilla convolutions, max pooling;
//!   cdn_cdc  — central-difference convolutions, max pooling;
//!   cdn_cdp  — vanilla convolutions, central-difference pooling.

use crate::cdops::{DEFAULT_LAMBDA, DEFAULT_THETA};
use crate::error::{Error, Result};
use crate::nn::{self, CdPool2d, CdcConv2d, Conv2d, MaxPool2d, Module, ReLU, Sequential};
use crate::rng;
use crate::tape::{Param, Var};
use crate::tensor::kernels::Conv2dCfg;
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdnVariant {
    DepthNet,
    CdnCdc,
    CdnCdp,
}

impl CdnVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "depthnet" => Ok(CdnVariant::DepthNet),
            "cdn_cdc" => Ok(CdnVariant::CdnCdc),
            "cdn_cdp" => Ok(CdnVariant::CdnCdp),
            other => Err(Error::config(format!(
                "unknown network variant {other:?} (expected depthnet | cdn_cdc | cdn_cdp)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CdnVariant::DepthNet => "depthnet",
            CdnVariant::CdnCdc => "cdn_cdc",
            CdnVariant::CdnCdp => "cdn_cdp",
        }
    }
}

/// Per-block channel widths. The reference pattern is 128 → 196 → 128.
pub const BLOCK_WIDTHS: [usize; 3] = [128, 196, 128];
pub const STEM_WIDTH: usize = 64;
pub const HEAD_WIDTHS: [usize; 2] = [128, 64];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CdnConfig {
    pub variant: CdnVariant,
    pub theta: f64,
    pub lambda: f64,
    /// Input images are `(N, 3, input_size, input_size)`.
    pub input_size: usize,
    /// Multiplies every hidden width (the 1-channel output is fixed).
    pub width_scale: f64,
    pub seed: u64,
}

impl Default for CdnConfig {
    fn default() -> Self {
        CdnConfig {
            variant: CdnVariant::DepthNet,
            theta: DEFAULT_THETA,
            lambda: DEFAULT_LAMBDA,
            input_size: 256,
            width_scale: 1.0,
            seed: 0,
        }
    }
}

impl CdnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(Error::config(format!(
                "input size {} must be a positive multiple of 8",
                self.input_size
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("theta and lambda must lie in [0, 1]"));
        }
        if self.width_scale <= 0.0 {
            return Err(Error::config("width scale must be positive"));
        }
        Ok(())
    }

    fn scaled(&self, w: usize) -> usize {
        ((w as f64 * self.width_scale).round() as usize).max(1)
    }
}

pub struct CdnNet<T: Scalar> {
    pub config: CdnConfig,
    stem: Sequential<T>,
    blocks: Vec<Sequential<T>>,
    head: Sequential<T>,
}

impl<T: Scalar> CdnNet<T> {
    pub fn build(config: CdnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::substream(config.seed, "cdn/init");
        let cfg = Conv2dCfg::with_stride_padding(1, 1);
        let theta = T::from_f64(config.theta);
        let lambda = T::from_f64(config.lambda);
        let use_cdc = config.variant == CdnVariant::CdnCdc;
        let use_cdp = config.variant == CdnVariant::CdnCdp;

        let conv_unit = |name: &str, i: usize, o: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Sequential<T> {
            if use_cdc {
                nn::cdc_bn_relu(name, i, o, 3, theta, cfg, rng)
            } else {
                nn::conv_bn_relu(name, i, o, 3, cfg, rng)
            }
        };
        let pool = || -> Box<dyn Module<T>> {
            if use_cdp {
                Box::new(CdPool2d::halving(lambda))
            } else {
                Box::new(MaxPool2d::halving())
            }
        };

        let stem_w = config.scaled(STEM_WIDTH);
        let stem = conv_unit("stem", 3, stem_w, &mut rng);

        let widths: Vec<usize> = BLOCK_WIDTHS.iter().map(|&w| config.scaled(w)).collect();
        let mut blocks = Vec::new();
        let mut in_c = stem_w;
        for b in 0..3 {
            let mut layers: Vec<Box<dyn Module<T>>> = Vec::new();
            let mut c = in_c;
            for (l, &w) in widths.iter().enumerate() {
                layers.push(Box::new(conv_unit(&format!("block{b}.conv{l}"), c, w, &mut rng)));
                c = w;
            }
            layers.push(pool());
            blocks.push(Sequential::new(layers));
            in_c = c;
        }

        let fused = 3 * in_c;
        let h0 = config.scaled(HEAD_WIDTHS[0]);
        let h1 = config.scaled(HEAD_WIDTHS[1]);
        let mut head_layers: Vec<Box<dyn Module<T>>> = vec![
            Box::new(conv_unit("head.conv0", fused, h0, &mut rng)),
            Box::new(conv_unit("head.conv1", h0, h1, &mut rng)),
        ];
        // final conv keeps its activation but takes no batch norm; its bias
        // starts at the middle of the unit depth range so the rectified
        // output is live (non-zero gradient) from the first step
        let out_bias = Tensor::full(&[1], T::from_f64(0.5));
        if use_cdc {
            let conv = CdcConv2d::new("head.out", h1, 1, 3, theta, cfg, true, &mut rng);
            conv.b.as_ref().unwrap().set_value(out_bias);
            head_layers.push(Box::new(conv));
        } else {
            let conv = Conv2d::new("head.out", h1, 1, 3, cfg, true, &mut rng);
            conv.b.as_ref().unwrap().set_value(out_bias);
            head_layers.push(Box::new(conv));
        }
        head_layers.push(Box::new(ReLU));
        let head = Sequential::new(head_layers);

        Ok(CdnNet { config, stem, blocks, head })
    }

    /// Depth prediction: `(N, 3, S, S)` → `(N, 1, S/8, S/8)`.
    pub fn forward_depth(&self, x: &Var<T>) -> Result<Var<T>> {
        let (_, c, h, w) = x.value().dims4()?;
        if c != 3 || h != w || h % 8 != 0 {
            return Err(Error::shape(format!(
                "expected square 3-channel input with side divisible by 8, got {:?}",
                x.value().shape()
            )));
        }
        let mut cur = self.stem.forward(x)?;
        let mut levels = Vec::new();
        for block in &self.blocks {
            cur = block.forward(&cur)?;
            levels.push(cur.clone());
        }
        let target = h / 8;
        let resized: Vec<Var<T>> = levels
            .iter()
            .map(|l| l.resize_bilinear(target, target))
            .collect::<Result<_>>()?;
        let fused = Var::concat_channels(&resized)?;
        self.head.forward(&fused)
    }

    pub fn params(&self) -> Vec<Param<T>> {
        let mut out = self.stem.params();
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.head.params());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Named value snapshot for checkpointing.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        self.params().iter().map(|p| (p.name().to_string(), p.value())).collect()
    }

    pub fn load_state(&self, state: &[(String, Tensor<T>)]) -> Result<()> {
        let params = self.params();
        if state.len() != params.len() {
            return Err(Error::config(format!(
                "state has {} tensors, network has {} parameters",
                state.len(),
                params.len()
            )));
        }
        for (p, (name, value)) in params.iter().zip(state) {
            if p.name() != *name {
                return Err(Error::config(format!(
                    "state tensor {name:?} does not match parameter {:?}",
                    p.name()
                )));
            }
            if p.shape() != *value.shape() {
                return Err(Error::shape(format!(
                    "checkpoint tensor {name:?} has shape {:?}, parameter expects {:?}",
                    value.shape(),
                    p.shape()
                )));
            }
            p.set_value(value.clone());
        }
        Ok(())
    }

    /// Copies parameter values from another instance with identical layout.
    pub fn copy_weights_from(&self, other: &CdnNet<T>) -> Result<()> {
        self.load_state(&other.state())
    }
}
