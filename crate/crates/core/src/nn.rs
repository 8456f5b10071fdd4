//! Network building blocks over the autodiff tape.
//!
//! A `Module` owns its parameters and knows how to extend the tape of its
//! input. Initialisation is centred uniform with fan-in scaling, driven by an
//! explicit RNG so identical seeds rebuild identical networks.

use crate::cdops;
use crate::error::Result;
use crate::tape::{Param, Var};
use crate::tensor::kernels::{Conv2dCfg, SizeMode};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;

pub trait Module<T: Scalar> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>>;
    /// Parameters in a stable order (definition order).
    fn params(&self) -> Vec<Param<T>>;
}

/// Total number of scalar parameters in a module.
pub fn param_count<T: Scalar>(m: &dyn Module<T>) -> usize {
    m.params().iter().map(|p| p.numel()).sum()
}

fn fan_in_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

// ─── convolution layers ───

pub struct Conv2d<T: Scalar> {
    pub w: Param<T>,
    pub b: Option<Param<T>>,
    pub cfg: Conv2dCfg,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        cfg: Conv2dCfg,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_c / cfg.groups) * k * k;
        let bound = fan_in_bound(fan_in);
        let w = Param::new(
            format!("{name}.weight"),
            Tensor::rand_uniform(&[out_c, in_c / cfg.groups, k, k], -bound, bound, rng),
        );
        let b = bias.then(|| {
            Param::new(format!("{name}.bias"), Tensor::rand_uniform(&[out_c], -bound, bound, rng))
        });
        Conv2d { w, b, cfg }
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let tape = x.tape();
        let w = tape.param(&self.w);
        let b = self.b.as_ref().map(|p| tape.param(p));
        x.conv2d(&w, b.as_ref(), self.cfg)
    }

    fn params(&self) -> Vec<Param<T>> {
        let mut out = vec![self.w.clone()];
        if let Some(b) = &self.b {
            out.push(b.clone());
        }
        out
    }
}

/// Central-difference convolution layer: same parameters as `Conv2d`, the
/// theta blend happens in the forward pass.
pub struct CdcConv2d<T: Scalar> {
    pub w: Param<T>,
    pub b: Option<Param<T>>,
    pub theta: T,
    pub cfg: Conv2dCfg,
}

impl<T: Scalar> CdcConv2d<T> {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        theta: T,
        cfg: Conv2dCfg,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let conv = Conv2d::new(name, in_c, out_c, k, cfg, bias, rng);
        CdcConv2d { w: conv.w, b: conv.b, theta, cfg }
    }
}

impl<T: Scalar> Module<T> for CdcConv2d<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let tape = x.tape();
        let w = tape.param(&self.w);
        let b = self.b.as_ref().map(|p| tape.param(p));
        cdops::cdc_var(x, &w, b.as_ref(), self.theta, self.cfg)
    }

    fn params(&self) -> Vec<Param<T>> {
        let mut out = vec![self.w.clone()];
        if let Some(b) = &self.b {
            out.push(b.clone());
        }
        out
    }
}

// ─── normalisation and activations ───

pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: T,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            eps: T::from_f64(1e-5),
        }
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let tape = x.tape();
        let g = tape.param(&self.gamma);
        let b = tape.param(&self.beta);
        x.batch_norm(&g, &b, self.eps)
    }

    fn params(&self) -> Vec<Param<T>> {
        vec![self.gamma.clone(), self.beta.clone()]
    }
}

pub struct ReLU;

impl<T: Scalar> Module<T> for ReLU {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        Ok(x.relu())
    }

    fn params(&self) -> Vec<Param<T>> {
        Vec::new()
    }
}

// ─── pooling ───

pub struct MaxPool2d {
    pub k: usize,
    pub cfg: Conv2dCfg,
}

impl MaxPool2d {
    /// The halving pool used throughout: 3x3, stride 2, padding 1.
    pub fn halving() -> Self {
        MaxPool2d {
            k: 3,
            cfg: Conv2dCfg { stride: 2, padding: 1, size_mode: SizeMode::Floor, ..Default::default() },
        }
    }
}

impl<T: Scalar> Module<T> for MaxPool2d {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        x.max_pool(self.k, self.cfg)
    }

    fn params(&self) -> Vec<Param<T>> {
        Vec::new()
    }
}

pub struct AvgPool2d {
    pub k: usize,
    pub cfg: Conv2dCfg,
}

impl<T: Scalar> Module<T> for AvgPool2d {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        x.avg_pool(self.k, self.cfg)
    }

    fn params(&self) -> Vec<Param<T>> {
        Vec::new()
    }
}

/// Central-difference pooling layer.
pub struct CdPool2d<T: Scalar> {
    pub k: usize,
    pub lambda: T,
    pub cfg: Conv2dCfg,
}

impl<T: Scalar> CdPool2d<T> {
    pub fn halving(lambda: T) -> Self {
        CdPool2d {
            k: 3,
            lambda,
            cfg: Conv2dCfg { stride: 2, padding: 1, size_mode: SizeMode::Floor, ..Default::default() },
        }
    }
}

impl<T: Scalar> Module<T> for CdPool2d<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        cdops::cdp_var(x, self.k, self.lambda, self.cfg)
    }

    fn params(&self) -> Vec<Param<T>> {
        Vec::new()
    }
}

// ─── dense ───

pub struct Linear<T: Scalar> {
    pub w: Param<T>,
    pub b: Option<Param<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, in_f: usize, out_f: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = fan_in_bound(in_f);
        Linear {
            w: Param::new(
                format!("{name}.weight"),
                Tensor::rand_uniform(&[out_f, in_f], -bound, bound, rng),
            ),
            b: bias.then(|| {
                Param::new(
                    format!("{name}.bias"),
                    Tensor::rand_uniform(&[out_f], -bound, bound, rng),
                )
            }),
        }
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let tape = x.tape();
        let w = tape.param(&self.w);
        let b = self.b.as_ref().map(|p| tape.param(p));
        x.linear(&w, b.as_ref())
    }

    fn params(&self) -> Vec<Param<T>> {
        let mut out = vec![self.w.clone()];
        if let Some(b) = &self.b {
            out.push(b.clone());
        }
        out
    }
}

// ─── structural ───

pub struct Sequential<T: Scalar> {
    pub layers: Vec<Box<dyn Module<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Box<dyn Module<T>>>) -> Self {
        Sequential { layers }
    }
}

impl<T: Scalar> Module<T> for Sequential<T> {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    fn params(&self) -> Vec<Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}

pub struct Identity;

impl<T: Scalar> Module<T> for Identity {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        Ok(x.clone())
    }

    fn params(&self) -> Vec<Param<T>> {
        Vec::new()
    }
}

/// The `none` candidate: a zero map of the correct (possibly strided) shape.
pub struct Zero {
    pub stride: usize,
}

impl<T: Scalar> Module<T> for Zero {
    fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        if self.stride == 1 {
            return Ok(x.scale(T::ZERO));
        }
        // subsample every stride-th pixel, then zero it
        let cfg = Conv2dCfg {
            stride: self.stride,
            size_mode: SizeMode::Floor,
            ..Default::default()
        };
        Ok(x.avg_pool(1, cfg)?.scale(T::ZERO))
    }

    fn params(&self) -> Vec<Param<T>> {
        Vec::new()
    }
}

/// Convenience composite: conv → BN → ReLU, the Table-1 layer pattern.
pub fn conv_bn_relu<T: Scalar>(
    name: &str,
    in_c: usize,
    out_c: usize,
    k: usize,
    cfg: Conv2dCfg,
    rng: &mut impl Rng,
) -> Sequential<T> {
    Sequential::new(vec![
        Box::new(Conv2d::new(name, in_c, out_c, k, cfg, true, rng)),
        Box::new(BatchNorm2d::new(name, out_c)),
        Box::new(ReLU),
    ])
}

/// conv → BN → ReLU with a central-difference convolution.
pub fn cdc_bn_relu<T: Scalar>(
    name: &str,
    in_c: usize,
    out_c: usize,
    k: usize,
    theta: T,
    cfg: Conv2dCfg,
    rng: &mut impl Rng,
) -> Sequential<T> {
    Sequential::new(vec![
        Box::new(CdcConv2d::new(name, in_c, out_c, k, theta, cfg, true, rng)),
        Box::new(BatchNorm2d::new(name, out_c)),
        Box::new(ReLU),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn conv_layer_shapes_and_count() {
        let mut rng = crate::rng::substream(61, "nn/conv");
        let layer = Conv2d::<f64>::new(
            "stem",
            3,
            64,
            3,
            Conv2dCfg::with_stride_padding(1, 1),
            true,
            &mut rng,
        );
        assert_eq!(param_count(&layer), 3 * 64 * 9 + 64); // 1792
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3, 8, 8]));
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), vec![2, 64, 8, 8]);
    }

    #[test]
    fn cdc_layer_has_same_params_as_vanilla() {
        let mut rng = crate::rng::substream(62, "nn/cdc-count");
        let cfg = Conv2dCfg::with_stride_padding(1, 1);
        let vanilla = Conv2d::<f64>::new("a", 16, 32, 3, cfg, true, &mut rng);
        let cdc = CdcConv2d::<f64>::new("b", 16, 32, 3, 0.7, cfg, true, &mut rng);
        assert_eq!(param_count(&vanilla), param_count(&cdc));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let make = || {
            let mut rng = crate::rng::substream(63, "nn/init");
            Conv2d::<f32>::new("c", 4, 4, 3, Conv2dCfg::default(), true, &mut rng)
        };
        assert_eq!(make().w.value(), make().w.value());
    }

    #[test]
    fn zero_module_zeroes_and_strides() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 8, 8]));
        let y = Zero { stride: 1 }.forward(&x).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 8, 8]);
        assert_eq!(y.value().max_abs(), 0.0);
        let y = Zero { stride: 2 }.forward(&x).unwrap();
        assert_eq!(y.shape(), vec![1, 2, 4, 4]);
        assert_eq!(y.value().max_abs(), 0.0);
    }

    #[test]
    fn batch_norm_normalises_and_learns_affine() {
        let mut rng = crate::rng::substream(64, "nn/bn");
        let x = Tensor::rand_uniform(&[4, 3, 6, 6], -2.0, 5.0, &mut rng);
        let bn = BatchNorm2d::<f64>::new("bn", 3);
        let tape = Tape::new();
        let y = bn.forward(&tape.constant(x)).unwrap().value();
        // per-channel mean ~0, var ~1
        let (n, c, h, w) = y.dims4().unwrap();
        for ch in 0..c {
            let mut vals = Vec::new();
            for b in 0..n {
                let base = (b * c + ch) * h * w;
                vals.extend_from_slice(&y.data()[base..base + h * w]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn gradient_reaches_deep_parameters() {
        let mut rng = crate::rng::substream(65, "nn/deep");
        let cfg = Conv2dCfg::with_stride_padding(1, 1);
        let net: Sequential<f64> = Sequential::new(vec![
            Box::new(conv_bn_relu("l0", 2, 4, 3, cfg, &mut rng)),
            Box::new(conv_bn_relu("l1", 4, 4, 3, cfg, &mut rng)),
        ]);
        let tape = Tape::new();
        let x = tape.constant(Tensor::rand_uniform(&[2, 2, 6, 6], -1.0, 1.0, &mut rng));
        let y = net.forward(&x).unwrap();
        y.mean_all().backward().unwrap();
        let g = net.params()[0].grad();
        assert!(g.max_abs() > 0.0, "stem weight gradient is zero");
    }
}
