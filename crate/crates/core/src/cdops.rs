//! The central-difference operator family.
//!
//! CDC blends vanilla convolution with a central-difference term under a
//! single shared weight tensor:
//!
//!   y(p0) = theta * sum_n w(pn) * (x(p0+pn) - x(p0))
//!         + (1 - theta) * sum_n w(pn) * x(p0+pn)
//!
//! which refactors to `conv(x, w) - theta * x(p0) * sum(w)`. The refactored
//! form is the production path (one convolution plus a 1x1 rescale of the
//! centre map); the literal form is kept as the oracle. CDP does the same to
//! average pooling: `avg_pool(x) - lambda * x(p0)`. Bias, when present,
//! participates once, outside the theta trade-off, so theta = 0 reproduces a
//! biased convolution exactly.

use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::kernels::{self, Conv2dCfg, SizeMode};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_THETA: f64 = 0.7;
pub const DEFAULT_LAMBDA: f64 = 0.7;

/// A convolution's weights plus its layout hyperparameters.
#[derive(Clone, Debug)]
pub struct ConvParams<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub size_mode: SizeMode,
}

impl<T: Scalar> ConvParams<T> {
    /// Square odd kernels only, so the window centre p0 is well defined.
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let (_, _, kh, kw) = weight.dims4()?;
        if kh != kw {
            return Err(Error::config(format!("kernel must be square, got {kh}x{kw}")));
        }
        if kh % 2 == 0 {
            return Err(Error::config(format!(
                "kernel must be odd-sized so the centre is defined, got {kh}"
            )));
        }
        Ok(ConvParams {
            weight,
            bias,
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
            size_mode: SizeMode::Exact,
        })
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_size_mode(mut self, mode: SizeMode) -> Self {
        self.size_mode = mode;
        self
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    /// The receptive-field offsets pn relative to the window centre,
    /// dilation-scaled, enumerated row-major. Always k*k of them, symmetric
    /// around (0, 0).
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let k = self.kernel_size() as isize;
        let d = self.dilation as isize;
        let half = k / 2;
        let mut out = Vec::with_capacity((k * k) as usize);
        for r in -half..=half {
            for c in -half..=half {
                out.push((r * d, c * d));
            }
        }
        out
    }

    pub fn cfg(&self) -> Conv2dCfg {
        Conv2dCfg {
            stride: self.stride,
            padding: self.padding,
            dilation: self.dilation,
            groups: self.groups,
            size_mode: self.size_mode,
        }
    }
}

/// Vanilla convolution: y(p0) = sum_n w(pn) * x(p0 + pn) (+ bias).
pub fn conv2d<T: Scalar>(x: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    kernels::conv2d_fwd(x, &params.weight, params.bias.as_ref(), &params.cfg())
}

#[derive(Clone, Debug)]
pub struct CdcParams<T: Scalar> {
    pub base: ConvParams<T>,
    pub theta: T,
}

impl<T: Scalar> CdcParams<T> {
    pub fn new(base: ConvParams<T>, theta: T) -> Result<Self> {
        check_unit_interval(theta, "theta")?;
        Ok(CdcParams { base, theta })
    }
}

#[derive(Clone, Debug)]
pub struct CdpParams<T: Scalar> {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub lambda: T,
    pub size_mode: SizeMode,
}

impl<T: Scalar> CdpParams<T> {
    pub fn new(kernel: usize, stride: usize, padding: usize, lambda: T) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::config(format!(
                "pooling window must be odd-sized so the centre is defined, got {kernel}"
            )));
        }
        check_unit_interval(lambda, "lambda")?;
        Ok(CdpParams { kernel, stride, padding, lambda, size_mode: SizeMode::Exact })
    }

    pub fn with_size_mode(mut self, mode: SizeMode) -> Self {
        self.size_mode = mode;
        self
    }

    fn cfg(&self) -> Conv2dCfg {
        Conv2dCfg {
            stride: self.stride,
            padding: self.padding,
            dilation: 1,
            groups: 1,
            size_mode: self.size_mode,
        }
    }
}

fn check_unit_interval<T: Scalar>(v: T, name: &str) -> Result<()> {
    if v < T::ZERO || v > T::ONE {
        return Err(Error::config(format!("{name} must lie in [0,1], got {v}")));
    }
    Ok(())
}

/// Literal transcription of the CDC definition; the test oracle. Walks every
/// output position and every offset, reading padded positions (including a
/// padded centre) as zero.
pub fn cdc_forward<T: Scalar>(x: &Tensor<T>, params: &CdcParams<T>) -> Result<Tensor<T>> {
    check_unit_interval(params.theta, "theta")?;
    let p = &params.base;
    let (n, ci, h, w) = x.dims4()?;
    let (co, ci_g, kh, kw) = p.weight.dims4()?;
    if p.groups == 0 || ci % p.groups != 0 || ci_g != ci / p.groups {
        return Err(Error::shape(format!(
            "weight expects {ci_g} channels per group, input provides {} over {} groups",
            ci, p.groups
        )));
    }
    let cfg = p.cfg();
    let oh = kernels::conv_out_size(h, kh, &cfg)?;
    let ow = kernels::conv_out_size(w, kw, &cfg)?;
    let co_g = co / p.groups;
    let half = (kh / 2) as isize;
    let theta = params.theta;
    let xd = x.data();
    let wd = p.weight.data();
    let read = |b: usize, ch: usize, r: isize, c: isize| -> T {
        if r < 0 || r >= h as isize || c < 0 || c >= w as isize {
            T::ZERO
        } else {
            xd[((b * ci + ch) * h + r as usize) * w + c as usize]
        }
    };
    let mut out = vec![T::ZERO; n * co * oh * ow];
    for b in 0..n {
        for oc in 0..co {
            let g = oc / co_g;
            for or in 0..oh {
                for ocol in 0..ow {
                    // window centre in input coordinates
                    let cr = (or * p.stride) as isize - p.padding as isize + half * p.dilation as isize;
                    let cc = (ocol * p.stride) as isize - p.padding as isize + half * p.dilation as isize;
                    let mut acc = T::ZERO;
                    for icl in 0..ci_g {
                        let ic = g * ci_g + icl;
                        let xc = read(b, ic, cr, cc);
                        for (oi, (dr, dc)) in offsets_rowmajor(kh, p.dilation).into_iter().enumerate() {
                            let wv = wd[(oc * ci_g + icl) * kh * kw + oi];
                            let xv = read(b, ic, cr + dr, cc + dc);
                            acc += theta * wv * (xv - xc) + (T::ONE - theta) * wv * xv;
                        }
                    }
                    if let Some(bias) = &p.bias {
                        acc += bias.data()[oc];
                    }
                    out[((b * co + oc) * oh + or) * ow + ocol] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, oh, ow], out)
}

fn offsets_rowmajor(k: usize, dilation: usize) -> Vec<(isize, isize)> {
    let half = (k / 2) as isize;
    let d = dilation as isize;
    let mut v = Vec::with_capacity(k * k);
    for r in -half..=half {
        for c in -half..=half {
            v.push((r * d, c * d));
        }
    }
    v
}

/// Production CDC path: one convolution minus a theta-scaled 1x1 projection
/// of the centre map by the spatially summed weights.
pub fn cdc_forward_efficient<T: Scalar>(x: &Tensor<T>, params: &CdcParams<T>) -> Result<Tensor<T>> {
    check_unit_interval(params.theta, "theta")?;
    let p = &params.base;
    let vanilla = conv2d(x, p)?;
    if params.theta == T::ZERO {
        return Ok(vanilla);
    }
    let k = p.kernel_size();
    let centers = kernels::center_sample_fwd(x, k, &p.cfg())?;
    let wsum = spatial_weight_sum(&p.weight)?;
    let correction = kernels::conv2d_fwd(
        &centers,
        &wsum,
        None,
        &Conv2dCfg { groups: p.groups, ..Default::default() },
    )?;
    vanilla.sub(&correction.scale(params.theta))
}

fn spatial_weight_sum<T: Scalar>(w: &Tensor<T>) -> Result<Tensor<T>> {
    let (co, ci_g, kh, kw) = w.dims4()?;
    let mut out = vec![T::ZERO; co * ci_g];
    for (i, chunk) in w.data().chunks(kh * kw).enumerate() {
        let mut acc = T::ZERO;
        for &v in chunk {
            acc += v;
        }
        out[i] = acc;
    }
    Tensor::from_vec(&[co, ci_g, 1, 1], out)
}

/// CDP, efficient form: avg_pool(x) - lambda * centre(x).
pub fn cdp_forward<T: Scalar>(x: &Tensor<T>, params: &CdpParams<T>) -> Result<Tensor<T>> {
    check_unit_interval(params.lambda, "lambda")?;
    if params.kernel % 2 == 0 {
        return Err(Error::config("pooling window must be odd-sized"));
    }
    let cfg = params.cfg();
    let avg = kernels::avg_pool_fwd(x, params.kernel, &cfg)?;
    if params.lambda == T::ZERO {
        return Ok(avg);
    }
    let centers = kernels::center_sample_fwd(x, params.kernel, &cfg)?;
    avg.sub(&centers.scale(params.lambda))
}

/// Literal transcription of the CDP definition, the test oracle.
pub fn cdp_forward_literal<T: Scalar>(x: &Tensor<T>, params: &CdpParams<T>) -> Result<Tensor<T>> {
    check_unit_interval(params.lambda, "lambda")?;
    let (n, c, h, w) = x.dims4()?;
    let k = params.kernel;
    if k % 2 == 0 {
        return Err(Error::config("pooling window must be odd-sized"));
    }
    let cfg = params.cfg();
    let oh = kernels::conv_out_size(h, k, &cfg)?;
    let ow = kernels::conv_out_size(w, k, &cfg)?;
    let half = (k / 2) as isize;
    let inv_n = T::ONE / T::from_usize(k * k);
    let lambda = params.lambda;
    let xd = x.data();
    let read = |nc: usize, r: isize, cc: isize| -> T {
        if r < 0 || r >= h as isize || cc < 0 || cc >= w as isize {
            T::ZERO
        } else {
            xd[nc * h * w + r as usize * w + cc as usize]
        }
    };
    let mut out = vec![T::ZERO; n * c * oh * ow];
    for nc in 0..n * c {
        for or in 0..oh {
            for ocol in 0..ow {
                let cr = (or * params.stride) as isize - params.padding as isize + half;
                let cc = (ocol * params.stride) as isize - params.padding as isize + half;
                let xc = read(nc, cr, cc);
                let mut acc = T::ZERO;
                for dr in -half..=half {
                    for dc in -half..=half {
                        let xv = read(nc, cr + dr, cc + dc);
                        acc += lambda * inv_n * (xv - xc) + (T::ONE - lambda) * inv_n * xv;
                    }
                }
                out[nc * oh * ow + or * ow + ocol] = acc;
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

// ─── differentiable composites ───

/// CDC on the tape; weights and bias flow gradients.
pub fn cdc_var<T: Scalar>(
    x: &Var<T>,
    w: &Var<T>,
    bias: Option<&Var<T>>,
    theta: T,
    cfg: Conv2dCfg,
) -> Result<Var<T>> {
    check_unit_interval(theta, "theta")?;
    let k = w.shape()[2];
    if k % 2 == 0 {
        return Err(Error::config("kernel must be odd-sized so the centre is defined"));
    }
    let vanilla = x.conv2d(w, bias, cfg)?;
    if theta == T::ZERO {
        return Ok(vanilla);
    }
    let centers = x.center_sample(k, cfg)?;
    let wsum = w.sum_spatial()?;
    let correction =
        centers.conv2d(&wsum, None, Conv2dCfg { groups: cfg.groups, ..Default::default() })?;
    vanilla.sub(&correction.scale(theta))
}

/// CDP on the tape.
pub fn cdp_var<T: Scalar>(x: &Var<T>, k: usize, lambda: T, cfg: Conv2dCfg) -> Result<Var<T>> {
    check_unit_interval(lambda, "lambda")?;
    if k % 2 == 0 {
        return Err(Error::config("pooling window must be odd-sized"));
    }
    let avg = x.avg_pool(k, cfg)?;
    if lambda == T::ZERO {
        return Ok(avg);
    }
    let centers = x.center_sample(k, cfg)?;
    avg.sub(&centers.scale(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rel_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) -> bool {
        let scale = b.max_abs().max(1e-9);
        a.max_abs_diff(b).unwrap() / scale < tol
    }

    fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn theta_zero_is_vanilla_conv() {
        let mut rng = crate::rng::substream(41, "cdops/theta-zero");
        let x = rand_tensor(&mut rng, &[2, 3, 8, 8]);
        let w = rand_tensor(&mut rng, &[4, 3, 3, 3]);
        let b = rand_tensor(&mut rng, &[4]);
        let base = ConvParams::new(w, Some(b)).unwrap().with_padding(1);
        let vanilla = conv2d(&x, &base).unwrap();
        let cdc = CdcParams::new(base, 0.0).unwrap();
        // literal loop sums in a different order, so allow rounding noise
        assert!(rel_close(&cdc_forward(&x, &cdc).unwrap(), &vanilla, 1e-13));
        // the efficient path degenerates to the very same convolution
        assert_eq!(cdc_forward_efficient(&x, &cdc).unwrap(), vanilla);
    }

    #[test]
    fn constant_input_kills_difference_term() {
        // all-ones 3x3 input and kernel, padding 0, theta 0.7 -> 0.3 * 9
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let p = CdcParams::new(ConvParams::new(w, None).unwrap(), 0.7).unwrap();
        let y = cdc_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert!((y.data()[0] - 2.7).abs() < 1e-12);
    }

    #[test]
    fn ramp_window_matches_straight_line_evaluation() {
        // x = [[1..9]], ones kernel: sum(x) = 45, centre 5, sum(w) = 9,
        // so y = 45 - theta * 45 for every theta.
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        for theta in [0.0, 0.25, 0.7, 1.0] {
            let p = CdcParams::new(ConvParams::new(w.clone(), None).unwrap(), theta).unwrap();
            let lit = cdc_forward(&x, &p).unwrap();
            let eff = cdc_forward_efficient(&x, &p).unwrap();
            assert!((lit.data()[0] - (45.0 - theta * 45.0)).abs() < 1e-12);
            assert!((eff.data()[0] - lit.data()[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn efficient_path_matches_literal_on_random_configs() {
        let mut rng = crate::rng::substream(42, "cdops/equivalence");
        for trial in 0..100 {
            let k = [1, 3, 5][trial % 3];
            let stride = 1 + trial % 2;
            let padding = trial % 3;
            let dilation = 1 + (trial / 2) % 2;
            let groups = if trial % 7 == 0 { 2 } else { 1 };
            let h = 8 + trial % 3;
            if h + 2 * padding < (k - 1) * dilation + 1 {
                continue;
            }
            let ci = 2 * groups;
            let co = 2 * groups;
            let x = rand_tensor(&mut rng, &[1, ci, h, h]);
            let w = rand_tensor(&mut rng, &[co, ci / groups, k, k]);
            let bias = if trial % 2 == 0 { Some(rand_tensor(&mut rng, &[co])) } else { None };
            let base = ConvParams::new(w, bias)
                .unwrap()
                .with_stride(stride)
                .with_padding(padding)
                .with_dilation(dilation)
                .with_groups(groups)
                .with_size_mode(SizeMode::Floor);
            let theta = rng.gen_range(0.0..=1.0);
            let p = CdcParams::new(base, theta).unwrap();
            let lit = cdc_forward(&x, &p).unwrap();
            let eff = cdc_forward_efficient(&x, &p).unwrap();
            assert!(
                rel_close(&eff, &lit, 1e-12),
                "trial {trial}: efficient path diverged from literal definition"
            );
        }
    }

    #[test]
    fn zero_sum_kernel_equals_vanilla_for_any_theta() {
        let mut rng = crate::rng::substream(43, "cdops/zero-sum");
        let x = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        // make each filter zero-sum by subtracting its mean
        let mut w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        {
            let wd = w.data_mut();
            for f in wd.chunks_mut(9) {
                let m: f64 = f.iter().sum::<f64>() / 9.0;
                for v in f.iter_mut() {
                    *v -= m;
                }
            }
        }
        let base = ConvParams::new(w, None).unwrap().with_padding(1);
        let vanilla = conv2d(&x, &base).unwrap();
        for theta in [0.3, 1.0] {
            let p = CdcParams::new(base.clone(), theta).unwrap();
            assert!(rel_close(&cdc_forward_efficient(&x, &p).unwrap(), &vanilla, 1e-12));
        }
    }

    #[test]
    fn theta_one_zero_kernel_gives_zero() {
        let x = Tensor::<f64>::ones(&[1, 1, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let p = CdcParams::new(ConvParams::new(w, None).unwrap(), 1.0).unwrap();
        let y = cdc_forward_efficient(&x, &p).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn theta_interpolates_linearly() {
        let mut rng = crate::rng::substream(44, "cdops/interp");
        let x = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        let w = rand_tensor(&mut rng, &[2, 2, 3, 3]);
        let base = ConvParams::new(w, None).unwrap().with_padding(1);
        let at = |theta: f64| {
            cdc_forward_efficient(&x, &CdcParams::new(base.clone(), theta).unwrap()).unwrap()
        };
        let y0 = at(0.0);
        let y1 = at(1.0);
        for theta in [0.2, 0.7] {
            let blend = y0.scale(1.0 - theta).add(&y1.scale(theta)).unwrap();
            assert!(rel_close(&at(theta), &blend, 1e-12));
        }
    }

    #[test]
    fn cdc_is_linear_in_the_input() {
        let mut rng = crate::rng::substream(45, "cdops/linear");
        let x1 = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        let x2 = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        let w = rand_tensor(&mut rng, &[2, 2, 3, 3]);
        let p = CdcParams::new(ConvParams::new(w, None).unwrap().with_padding(1), 0.7).unwrap();
        let (a, b) = (1.7, -0.4);
        let lhs =
            cdc_forward_efficient(&x1.scale(a).add(&x2.scale(b)).unwrap(), &p).unwrap();
        let rhs = cdc_forward_efficient(&x1, &p)
            .unwrap()
            .scale(a)
            .add(&cdc_forward_efficient(&x2, &p).unwrap().scale(b))
            .unwrap();
        assert!(rel_close(&lhs, &rhs, 1e-10));
    }

    #[test]
    fn cdp_lambda_zero_is_avg_pool() {
        let mut rng = crate::rng::substream(46, "cdops/cdp-zero");
        let x = rand_tensor(&mut rng, &[1, 2, 7, 7]);
        let p = CdpParams::new(3, 2, 0, 0.0).unwrap();
        let avg = kernels::avg_pool_fwd(&x, 3, &Conv2dCfg::with_stride_padding(2, 0)).unwrap();
        assert_eq!(cdp_forward(&x, &p).unwrap(), avg);
        assert!(rel_close(&cdp_forward_literal(&x, &p).unwrap(), &avg, 1e-12));
    }

    #[test]
    fn cdp_constant_input_lambda_one_is_zero() {
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], 3.25);
        let p = CdpParams::new(3, 1, 0, 1.0).unwrap();
        assert!(cdp_forward(&x, &p).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn cdp_single_window_value() {
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let p = CdpParams::new(3, 1, 0, 0.7).unwrap();
        let y = cdp_forward(&x, &p).unwrap();
        assert!((y.data()[0] - 1.5).abs() < 1e-12); // avg 5 - 0.7 * 5
        let lit = cdp_forward_literal(&x, &p).unwrap();
        assert!((lit.data()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn cdp_matches_literal_with_padding_and_stride() {
        let mut rng = crate::rng::substream(47, "cdops/cdp-equiv");
        for trial in 0..40 {
            let k = [3, 5][trial % 2];
            let stride = 1 + trial % 2;
            let padding = trial % 2;
            let h = 8 + trial % 3;
            let x = rand_tensor(&mut rng, &[1, 2, h, h]);
            let p = CdpParams::new(k, stride, padding, rng.gen_range(0.0..=1.0))
                .unwrap()
                .with_size_mode(SizeMode::Floor);
            let eff = cdp_forward(&x, &p).unwrap();
            let lit = cdp_forward_literal(&x, &p).unwrap();
            assert!(rel_close(&eff, &lit, 1e-12), "trial {trial}");
        }
    }

    #[test]
    fn rejects_invalid_hyperparameters() {
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let base = ConvParams::new(w, None).unwrap();
        assert!(CdcParams::new(base.clone(), -0.1).is_err());
        assert!(CdcParams::new(base, 1.5).is_err());
        assert!(CdpParams::new(2, 1, 0, 0.5).is_err());
        assert!(CdpParams::new(3, 1, 0, 1.1).is_err());
        let even = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(ConvParams::new(even, None).is_err());
    }

    #[test]
    fn offsets_enumerate_symmetric_receptive_field() {
        let w = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        let p = ConvParams::new(w, None).unwrap().with_dilation(2);
        let offs = p.offsets();
        assert_eq!(offs.len(), 25);
        for &(r, c) in &offs {
            assert!(offs.contains(&(-r, -c)), "offset ({r},{c}) lacks its mirror");
        }
        assert!(offs.contains(&(0, 0)));
        assert!(offs.contains(&(-4, 4))); // dilation-scaled corner
    }

    #[test]
    fn tape_composites_match_plain_ops() {
        let mut rng = crate::rng::substream(48, "cdops/tape");
        let x = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        let w = rand_tensor(&mut rng, &[2, 2, 3, 3]);
        let b = rand_tensor(&mut rng, &[2]);
        let cfg = Conv2dCfg::with_stride_padding(1, 1);
        let base = ConvParams::new(w.clone(), Some(b.clone())).unwrap().with_padding(1);
        let plain = cdc_forward_efficient(&x, &CdcParams::new(base, 0.7).unwrap()).unwrap();
        let tape = crate::tape::Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w);
        let bv = tape.constant(b);
        let y = cdc_var(&xv, &wv, Some(&bv), 0.7, cfg).unwrap();
        assert!(rel_close(&y.value(), &plain, 1e-12));

        let pool_cfg = Conv2dCfg { stride: 2, padding: 1, size_mode: SizeMode::Floor, ..Default::default() };
        let pp = CdpParams::new(3, 2, 1, 0.7).unwrap().with_size_mode(SizeMode::Floor);
        let plain_pool = cdp_forward(&x, &pp).unwrap();
        let y = cdp_var(&xv, 3, 0.7, pool_cfg).unwrap();
        assert!(rel_close(&y.value(), &plain_pool, 1e-12));
    }

    #[test]
    fn gradients_flow_through_cdc_and_cdp() {
        let mut rng = crate::rng::substream(49, "cdops/grad");
        let x = rand_tensor(&mut rng, &[1, 2, 5, 5]);
        let w = rand_tensor(&mut rng, &[2, 2, 3, 3]);
        let b = rand_tensor(&mut rng, &[2]);
        let cfg = Conv2dCfg::with_stride_padding(1, 1);
        let report = crate::gradcheck::check_gradients(&[x.clone(), w, b], usize::MAX, |_, v| {
            Ok(cdc_var(&v[0], &v[1], Some(&v[2]), 0.7, cfg)?.mean_all().scale(3.0))
        })
        .unwrap();
        assert!(report.passes(), "cdc grad err {}", report.max_rel_err);

        let pool_cfg = Conv2dCfg { stride: 2, padding: 1, size_mode: SizeMode::Floor, ..Default::default() };
        let report = crate::gradcheck::check_gradients(&[x], usize::MAX, |_, v| {
            Ok(cdp_var(&v[0], 3, 0.7, pool_cfg)?.mean_all())
        })
        .unwrap();
        assert!(report.passes(), "cdp grad err {}", report.max_rel_err);
    }
}
