//! Raw compute kernels on plain tensors: 2-D convolution (forward and the
//! three backward passes), pooling, center sampling, bilinear resize and a
//! dense linear map. Everything here is deterministic and single-threaded;
//! the inner loops run along the contiguous width axis so they vectorise.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// How to treat a stride that does not divide the padded span exactly.
/// `Exact` refuses (a non-integer output size is a configuration error);
/// `Floor` truncates, which is what stride-2 pooling on even inputs needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeMode {
    Exact,
    Floor,
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2dCfg {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub size_mode: SizeMode,
}

impl Default for Conv2dCfg {
    fn default() -> Self {
        Conv2dCfg { stride: 1, padding: 0, dilation: 1, groups: 1, size_mode: SizeMode::Exact }
    }
}

impl Conv2dCfg {
    pub fn with_stride_padding(stride: usize, padding: usize) -> Self {
        Conv2dCfg { stride, padding, ..Default::default() }
    }
}

/// Output extent along one spatial axis.
pub fn conv_out_size(input: usize, k: usize, cfg: &Conv2dCfg) -> Result<usize> {
    if cfg.stride == 0 || cfg.dilation == 0 {
        return Err(Error::config("stride and dilation must be positive"));
    }
    let eff = (k - 1) * cfg.dilation + 1;
    let span = input + 2 * cfg.padding;
    if span < eff {
        return Err(Error::config(format!(
            "kernel (effective size {eff}) larger than padded input ({span})"
        )));
    }
    let rem = (span - eff) % cfg.stride;
    if rem != 0 && cfg.size_mode == SizeMode::Exact {
        return Err(Error::config(format!(
            "stride {} does not divide span {} - {} exactly (non-integer output size)",
            cfg.stride, span, eff
        )));
    }
    Ok((span - eff) / cfg.stride + 1)
}

fn conv_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    cfg: &Conv2dCfg,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize, usize)> {
    let (n, ci, h, win) = x.dims4()?;
    let (co, ci_g, kh, kw) = w.dims4()?;
    if cfg.groups == 0 || ci % cfg.groups != 0 || co % cfg.groups != 0 {
        return Err(Error::config(format!(
            "groups {} must divide both input channels {ci} and output channels {co}",
            cfg.groups
        )));
    }
    if ci_g != ci / cfg.groups {
        return Err(Error::shape(format!(
            "weight expects {ci_g} channels per group, input provides {}",
            ci / cfg.groups
        )));
    }
    let oh = conv_out_size(h, kh, cfg)?;
    let ow = conv_out_size(win, kw, cfg)?;
    Ok((n, ci, h, win, co, kh, kw, oh, ow))
}

/// Valid output range [lo, hi) for which iw = ow*s + off stays in [0, input).
#[inline]
fn valid_range(off: isize, s: usize, input: usize, out: usize) -> (usize, usize) {
    let s = s as isize;
    let lo_num = -off;
    let lo = if lo_num <= 0 { 0 } else { ((lo_num + s - 1) / s) as usize };
    let hi_num = input as isize - 1 - off;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num / s) as usize + 1;
    (lo.min(out), hi.min(out))
}

pub fn conv2d_fwd<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    cfg: &Conv2dCfg,
) -> Result<Tensor<T>> {
    let (n, ci, h, win, co, kh, kw, oh, ow) = conv_shapes(x, w, cfg)?;
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {co} output channels",
                b.shape()
            )));
        }
    }
    let ci_g = ci / cfg.groups;
    let co_g = co / cfg.groups;
    let (s, p, d) = (cfg.stride, cfg.padding, cfg.dilation);
    let mut out = vec![T::ZERO; n * co * oh * ow];
    let xd = x.data();
    let wd = w.data();
    for b_i in 0..n {
        for g in 0..cfg.groups {
            for oc in 0..co_g {
                let oc_abs = g * co_g + oc;
                let out_base = (b_i * co + oc_abs) * oh * ow;
                if let Some(b) = bias {
                    let bv = b.data()[oc_abs];
                    for v in &mut out[out_base..out_base + oh * ow] {
                        *v = bv;
                    }
                }
                for icl in 0..ci_g {
                    let ic = g * ci_g + icl;
                    let x_base = (b_i * ci + ic) * h * win;
                    let w_base = ((oc_abs * ci_g + icl) * kh) * kw;
                    for r in 0..kh {
                        let roff = (r * d) as isize - p as isize;
                        for c in 0..kw {
                            let coff = (c * d) as isize - p as isize;
                            let wv = wd[w_base + r * kw + c];
                            let (wlo, whi) = valid_range(coff, s, win, ow);
                            if wlo >= whi {
                                continue;
                            }
                            for or in 0..oh {
                                let ir = or as isize * s as isize + roff;
                                if ir < 0 || ir >= h as isize {
                                    continue;
                                }
                                let xrow = x_base + ir as usize * win;
                                let orow = out_base + or * ow;
                                if s == 1 {
                                    let ioff = (wlo as isize + coff) as usize;
                                    let xs = &xd[xrow + ioff..xrow + ioff + (whi - wlo)];
                                    let os = &mut out[orow + wlo..orow + whi];
                                    for (o, &xv) in os.iter_mut().zip(xs) {
                                        *o += wv * xv;
                                    }
                                } else {
                                    for oc_w in wlo..whi {
                                        let iw = (oc_w as isize * s as isize + coff) as usize;
                                        out[orow + oc_w] += wv * xd[xrow + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, oh, ow], out)
}

/// Gradient with respect to the convolution input.
pub fn conv2d_bwd_input<T: Scalar>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    x_shape: &[usize],
    cfg: &Conv2dCfg,
) -> Result<Tensor<T>> {
    let (n, ci, h, win) = match *x_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::shape("conv input must be rank 4")),
    };
    let (co, ci_g, kh, kw) = w.dims4()?;
    let (gn, gco, oh, ow) = gy.dims4()?;
    if gn != n || gco != co {
        return Err(Error::shape("output gradient does not match convolution shapes"));
    }
    let co_g = co / cfg.groups;
    let (s, p, d) = (cfg.stride, cfg.padding, cfg.dilation);
    let mut gx = vec![T::ZERO; n * ci * h * win];
    let gyd = gy.data();
    let wd = w.data();
    for b_i in 0..n {
        for g in 0..cfg.groups {
            for oc in 0..co_g {
                let oc_abs = g * co_g + oc;
                let gy_base = (b_i * co + oc_abs) * oh * ow;
                for icl in 0..ci_g {
                    let ic = g * ci_g + icl;
                    let gx_base = (b_i * ci + ic) * h * win;
                    let w_base = ((oc_abs * ci_g + icl) * kh) * kw;
                    for r in 0..kh {
                        let roff = (r * d) as isize - p as isize;
                        for c in 0..kw {
                            let coff = (c * d) as isize - p as isize;
                            let wv = wd[w_base + r * kw + c];
                            let (wlo, whi) = valid_range(coff, s, win, ow);
                            if wlo >= whi {
                                continue;
                            }
                            for or in 0..oh {
                                let ir = or as isize * s as isize + roff;
                                if ir < 0 || ir >= h as isize {
                                    continue;
                                }
                                let gxrow = gx_base + ir as usize * win;
                                let gyrow = gy_base + or * ow;
                                if s == 1 {
                                    let ioff = (wlo as isize + coff) as usize;
                                    let gys = &gyd[gyrow + wlo..gyrow + whi];
                                    let gxs = &mut gx[gxrow + ioff..gxrow + ioff + (whi - wlo)];
                                    for (o, &gv) in gxs.iter_mut().zip(gys) {
                                        *o += wv * gv;
                                    }
                                } else {
                                    for oc_w in wlo..whi {
                                        let iw = (oc_w as isize * s as isize + coff) as usize;
                                        gx[gxrow + iw] += wv * gyd[gyrow + oc_w];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(x_shape, gx)
}

/// Gradient with respect to the convolution weights.
pub fn conv2d_bwd_weight<T: Scalar>(
    gy: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: &[usize],
    cfg: &Conv2dCfg,
) -> Result<Tensor<T>> {
    let (n, ci, h, win) = x.dims4()?;
    let (co, ci_g, kh, kw) = match *w_shape {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(Error::shape("conv weight must be rank 4")),
    };
    let (_, _, oh, ow) = gy.dims4()?;
    let co_g = co / cfg.groups;
    let (s, p, d) = (cfg.stride, cfg.padding, cfg.dilation);
    let mut gw = vec![T::ZERO; co * ci_g * kh * kw];
    let gyd = gy.data();
    let xd = x.data();
    for b_i in 0..n {
        for g in 0..cfg.groups {
            for oc in 0..co_g {
                let oc_abs = g * co_g + oc;
                let gy_base = (b_i * co + oc_abs) * oh * ow;
                for icl in 0..ci_g {
                    let ic = g * ci_g + icl;
                    let x_base = (b_i * ci + ic) * h * win;
                    let w_base = ((oc_abs * ci_g + icl) * kh) * kw;
                    for r in 0..kh {
                        let roff = (r * d) as isize - p as isize;
                        for c in 0..kw {
                            let coff = (c * d) as isize - p as isize;
                            let (wlo, whi) = valid_range(coff, s, win, ow);
                            if wlo >= whi {
                                continue;
                            }
                            let mut acc = T::ZERO;
                            for or in 0..oh {
                                let ir = or as isize * s as isize + roff;
                                if ir < 0 || ir >= h as isize {
                                    continue;
                                }
                                let xrow = x_base + ir as usize * win;
                                let gyrow = gy_base + or * ow;
                                if s == 1 {
                                    let ioff = (wlo as isize + coff) as usize;
                                    let xs = &xd[xrow + ioff..xrow + ioff + (whi - wlo)];
                                    let gys = &gyd[gyrow + wlo..gyrow + whi];
                                    for (&a, &b) in xs.iter().zip(gys) {
                                        acc += a * b;
                                    }
                                } else {
                                    for oc_w in wlo..whi {
                                        let iw = (oc_w as isize * s as isize + coff) as usize;
                                        acc += xd[xrow + iw] * gyd[gyrow + oc_w];
                                    }
                                }
                            }
                            gw[w_base + r * kw + c] += acc;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(w_shape, gw)
}

/// Gradient with respect to the convolution bias: sum over batch and space.
pub fn conv2d_bwd_bias<T: Scalar>(gy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, co, oh, ow) = gy.dims4()?;
    let gyd = gy.data();
    let mut gb = vec![T::ZERO; co];
    for b_i in 0..n {
        for oc in 0..co {
            let base = (b_i * co + oc) * oh * ow;
            for &v in &gyd[base..base + oh * ow] {
                gb[oc] += v;
            }
        }
    }
    Tensor::from_vec(&[co], gb)
}

/// Samples the receptive-field centre of each output position: for odd k the
/// value at `o*stride - padding + (k-1)/2 * dilation`, zero when that falls
/// into the padding. Output size matches a convolution with the same layout.
pub fn center_sample_fwd<T: Scalar>(x: &Tensor<T>, k: usize, cfg: &Conv2dCfg) -> Result<Tensor<T>> {
    if k % 2 == 0 {
        return Err(Error::config(format!("centre of an even {k}x{k} kernel is undefined")));
    }
    let (n, c, h, w) = x.dims4()?;
    let oh = conv_out_size(h, k, cfg)?;
    let ow = conv_out_size(w, k, cfg)?;
    let ctr = (k / 2 * cfg.dilation) as isize - cfg.padding as isize;
    let xd = x.data();
    let mut out = vec![T::ZERO; n * c * oh * ow];
    for nc in 0..n * c {
        let x_base = nc * h * w;
        let o_base = nc * oh * ow;
        for or in 0..oh {
            let ir = or as isize * cfg.stride as isize + ctr;
            if ir < 0 || ir >= h as isize {
                continue;
            }
            for oc in 0..ow {
                let iw = oc as isize * cfg.stride as isize + ctr;
                if iw < 0 || iw >= w as isize {
                    continue;
                }
                out[o_base + or * ow + oc] = xd[x_base + ir as usize * w + iw as usize];
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

pub fn center_sample_bwd<T: Scalar>(
    gy: &Tensor<T>,
    x_shape: &[usize],
    k: usize,
    cfg: &Conv2dCfg,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = match *x_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::shape("centre-sample input must be rank 4")),
    };
    let (_, _, oh, ow) = gy.dims4()?;
    let ctr = (k / 2 * cfg.dilation) as isize - cfg.padding as isize;
    let gyd = gy.data();
    let mut gx = vec![T::ZERO; n * c * h * w];
    for nc in 0..n * c {
        let gx_base = nc * h * w;
        let gy_base = nc * oh * ow;
        for or in 0..oh {
            let ir = or as isize * cfg.stride as isize + ctr;
            if ir < 0 || ir >= h as isize {
                continue;
            }
            for oc in 0..ow {
                let iw = oc as isize * cfg.stride as isize + ctr;
                if iw < 0 || iw >= w as isize {
                    continue;
                }
                gx[gx_base + ir as usize * w + iw as usize] += gyd[gy_base + or * ow + oc];
            }
        }
    }
    Tensor::from_vec(x_shape, gx)
}

/// Average pooling with a constant divisor of k*k (padded positions count as
/// zeros, exactly the normalisation the central-difference pooling derivation
/// assumes).
pub fn avg_pool_fwd<T: Scalar>(x: &Tensor<T>, k: usize, cfg: &Conv2dCfg) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let oh = conv_out_size(h, k, cfg)?;
    let ow = conv_out_size(w, k, cfg)?;
    let inv = T::ONE / T::from_usize(k * k);
    let (s, p) = (cfg.stride, cfg.padding);
    let xd = x.data();
    let mut out = vec![T::ZERO; n * c * oh * ow];
    for nc in 0..n * c {
        let x_base = nc * h * w;
        let o_base = nc * oh * ow;
        for or in 0..oh {
            for oc in 0..ow {
                let mut acc = T::ZERO;
                for r in 0..k {
                    let ir = (or * s + r) as isize - p as isize;
                    if ir < 0 || ir >= h as isize {
                        continue;
                    }
                    let row = x_base + ir as usize * w;
                    for cidx in 0..k {
                        let iw = (oc * s + cidx) as isize - p as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        acc += xd[row + iw as usize];
                    }
                }
                out[o_base + or * ow + oc] = acc * inv;
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

pub fn avg_pool_bwd<T: Scalar>(
    gy: &Tensor<T>,
    x_shape: &[usize],
    k: usize,
    cfg: &Conv2dCfg,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = match *x_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::shape("pool input must be rank 4")),
    };
    let (_, _, oh, ow) = gy.dims4()?;
    let inv = T::ONE / T::from_usize(k * k);
    let (s, p) = (cfg.stride, cfg.padding);
    let gyd = gy.data();
    let mut gx = vec![T::ZERO; n * c * h * w];
    for nc in 0..n * c {
        let gx_base = nc * h * w;
        let gy_base = nc * oh * ow;
        for or in 0..oh {
            for oc in 0..ow {
                let g = gyd[gy_base + or * ow + oc] * inv;
                for r in 0..k {
                    let ir = (or * s + r) as isize - p as isize;
                    if ir < 0 || ir >= h as isize {
                        continue;
                    }
                    let row = gx_base + ir as usize * w;
                    for cidx in 0..k {
                        let iw = (oc * s + cidx) as isize - p as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        gx[row + iw as usize] += g;
                    }
                }
            }
        }
    }
    Tensor::from_vec(x_shape, gx)
}

/// Max pooling; returns the pooled tensor and the flat input index of each
/// window maximum (first occurrence wins ties), which the backward pass uses.
pub fn max_pool_fwd<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    cfg: &Conv2dCfg,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    let oh = conv_out_size(h, k, cfg)?;
    let ow = conv_out_size(w, k, cfg)?;
    let (s, p) = (cfg.stride, cfg.padding);
    let xd = x.data();
    let mut out = vec![T::ZERO; n * c * oh * ow];
    let mut arg = vec![0usize; n * c * oh * ow];
    for nc in 0..n * c {
        let x_base = nc * h * w;
        let o_base = nc * oh * ow;
        for or in 0..oh {
            for oc in 0..ow {
                let mut best = T::from_f64(f64::NEG_INFINITY);
                let mut best_idx = usize::MAX;
                for r in 0..k {
                    let ir = (or * s + r) as isize - p as isize;
                    if ir < 0 || ir >= h as isize {
                        continue;
                    }
                    let row = x_base + ir as usize * w;
                    for cidx in 0..k {
                        let iw = (oc * s + cidx) as isize - p as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let v = xd[row + iw as usize];
                        if v > best {
                            best = v;
                            best_idx = row + iw as usize;
                        }
                    }
                }
                if best_idx == usize::MAX {
                    return Err(Error::config("max-pool window fell entirely into padding"));
                }
                out[o_base + or * ow + oc] = best;
                arg[o_base + or * ow + oc] = best_idx;
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, arg))
}

pub fn max_pool_bwd<T: Scalar>(gy: &Tensor<T>, x_numel: usize, arg: &[usize], x_shape: &[usize]) -> Result<Tensor<T>> {
    let mut gx = vec![T::ZERO; x_numel];
    for (g, &idx) in gy.data().iter().zip(arg) {
        gx[idx] += *g;
    }
    Tensor::from_vec(x_shape, gx)
}

/// Bilinear resize to (out_h, out_w); half-pixel centre alignment, edges
/// clamped. Returns for each output position the four source corners and
/// their weights packed for the backward pass.
pub fn resize_bilinear_fwd<T: Scalar>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("resize target must be positive"));
    }
    let xd = x.data();
    let mut out = vec![T::ZERO; n * c * out_h * out_w];
    let plan_h = axis_plan(h, out_h);
    let plan_w = axis_plan(w, out_w);
    for nc in 0..n * c {
        let x_base = nc * h * w;
        let o_base = nc * out_h * out_w;
        for (or, &(r0, r1, fr)) in plan_h.iter().enumerate() {
            for (oc, &(c0, c1, fc)) in plan_w.iter().enumerate() {
                let a = xd[x_base + r0 * w + c0].to_f64();
                let b = xd[x_base + r0 * w + c1].to_f64();
                let cc = xd[x_base + r1 * w + c0].to_f64();
                let d = xd[x_base + r1 * w + c1].to_f64();
                let top = a + (b - a) * fc;
                let bot = cc + (d - cc) * fc;
                out[o_base + or * out_w + oc] = T::from_f64(top + (bot - top) * fr);
            }
        }
    }
    Tensor::from_vec(&[n, c, out_h, out_w], out)
}

pub fn resize_bilinear_bwd<T: Scalar>(
    gy: &Tensor<T>,
    x_shape: &[usize],
) -> Result<Tensor<T>> {
    let (n, c, h, w) = match *x_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::shape("resize input must be rank 4")),
    };
    let (_, _, oh, ow) = gy.dims4()?;
    let plan_h = axis_plan(h, oh);
    let plan_w = axis_plan(w, ow);
    let gyd = gy.data();
    let mut gx = vec![T::ZERO; n * c * h * w];
    for nc in 0..n * c {
        let gx_base = nc * h * w;
        let gy_base = nc * oh * ow;
        for (or, &(r0, r1, fr)) in plan_h.iter().enumerate() {
            for (oc, &(c0, c1, fc)) in plan_w.iter().enumerate() {
                let g = gyd[gy_base + or * ow + oc].to_f64();
                gx[gx_base + r0 * w + c0] += T::from_f64(g * (1.0 - fr) * (1.0 - fc));
                gx[gx_base + r0 * w + c1] += T::from_f64(g * (1.0 - fr) * fc);
                gx[gx_base + r1 * w + c0] += T::from_f64(g * fr * (1.0 - fc));
                gx[gx_base + r1 * w + c1] += T::from_f64(g * fr * fc);
            }
        }
    }
    Tensor::from_vec(x_shape, gx)
}

/// Per output index: (low source index, high source index, fraction).
fn axis_plan(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * input as f64 / output as f64 - 0.5)
                .clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// y = x W^T + b for x of shape (N, F), W of shape (O, F).
pub fn linear_fwd<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, f) = match *x.shape() {
        [n, f] => (n, f),
        _ => return Err(Error::shape("linear input must be rank 2")),
    };
    let (o, fw) = match *w.shape() {
        [o, fw] => (o, fw),
        _ => return Err(Error::shape("linear weight must be rank 2")),
    };
    if f != fw {
        return Err(Error::shape(format!(
            "linear weight expects {fw} features, input provides {f}"
        )));
    }
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![T::ZERO; n * o];
    for i in 0..n {
        for j in 0..o {
            let mut acc = bias.map_or(T::ZERO, |b| b.data()[j]);
            let xs = &xd[i * f..(i + 1) * f];
            let ws = &wd[j * f..(j + 1) * f];
            for (&a, &b) in xs.iter().zip(ws) {
                acc += a * b;
            }
            out[i * o + j] = acc;
        }
    }
    Tensor::from_vec(&[n, o], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Straight transcription of the convolution definition: for every output
    /// position, sum x(p0 + pn) * w(pn) over the receptive field. Written
    /// independently of the production kernel, six nested loops, no tricks.
    fn conv_reference(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        bias: Option<&Tensor<f64>>,
        cfg: &Conv2dCfg,
    ) -> Tensor<f64> {
        let (n, ci, h, win) = x.dims4().unwrap();
        let (co, ci_g, kh, kw) = w.dims4().unwrap();
        let groups = cfg.groups;
        let co_g = co / groups;
        let oh = conv_out_size(h, kh, cfg).unwrap();
        let ow = conv_out_size(win, kw, cfg).unwrap();
        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        let od = out.data_mut();
        for b in 0..n {
            for oc in 0..co {
                let g = oc / co_g;
                for or in 0..oh {
                    for ocol in 0..ow {
                        let mut acc = bias.map_or(0.0, |t| t.data()[oc]);
                        for icl in 0..ci_g {
                            let ic = g * ci_g + icl;
                            for r in 0..kh {
                                for c in 0..kw {
                                    let ir = (or * cfg.stride + r * cfg.dilation) as isize
                                        - cfg.padding as isize;
                                    let iw = (ocol * cfg.stride + c * cfg.dilation) as isize
                                        - cfg.padding as isize;
                                    if ir < 0 || ir >= h as isize || iw < 0 || iw >= win as isize {
                                        continue;
                                    }
                                    let xv = x.data()
                                        [((b * ci + ic) * h + ir as usize) * win + iw as usize];
                                    let wv = w.data()[((oc * ci_g + icl) * kh + r) * kw + c];
                                    acc += xv * wv;
                                }
                            }
                        }
                        od[((b * co + oc) * oh + or) * ow + ocol] = acc;
                    }
                }
            }
        }
        out
    }

    fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn conv_matches_reference_across_configs() {
        let mut rng = crate::rng::substream(21, "kernels/conv-oracle");
        for trial in 0..40 {
            let k = [1, 3, 5][trial % 3];
            let stride = 1 + trial % 2;
            let padding = trial % 3;
            let dilation = 1 + (trial / 3) % 2;
            let groups = if trial % 5 == 0 { 2 } else { 1 };
            let ci = 2 * groups;
            let co = 2 * groups;
            let h = 7 + trial % 4;
            let cfg = Conv2dCfg { stride, padding, dilation, groups, size_mode: SizeMode::Floor };
            let eff = (k - 1) * dilation + 1;
            if h + 2 * padding < eff {
                continue;
            }
            let x = rand_tensor(&mut rng, &[2, ci, h, h]);
            let w = rand_tensor(&mut rng, &[co, ci / groups, k, k]);
            let b = rand_tensor(&mut rng, &[co]);
            let got = conv2d_fwd(&x, &w, Some(&b), &cfg).unwrap();
            let want = conv_reference(&x, &w, Some(&b), &cfg);
            assert_eq!(got.shape(), want.shape());
            assert!(
                got.max_abs_diff(&want).unwrap() < 1e-12,
                "trial {trial}: kernel disagrees with direct transcription"
            );
        }
    }

    #[test]
    fn conv_exact_mode_rejects_non_integer_output() {
        let x = Tensor::<f64>::zeros(&[1, 1, 7, 7]);
        let w = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let cfg = Conv2dCfg { stride: 2, ..Default::default() };
        assert!(matches!(
            conv2d_fwd(&x, &w, None, &cfg),
            Err(crate::error::Error::Config(_))
        ));
        let cfg = Conv2dCfg { stride: 2, size_mode: SizeMode::Floor, ..Default::default() };
        assert_eq!(conv2d_fwd(&x, &w, None, &cfg).unwrap().shape(), [1, 1, 3, 3]);
    }

    #[test]
    fn conv_rejects_kernel_larger_than_input() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let w = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        assert!(conv2d_fwd(&x, &w, None, &Conv2dCfg::default()).is_err());
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let mut rng = crate::rng::substream(22, "kernels/conv-bwd");
        let cfg = Conv2dCfg { stride: 2, padding: 1, dilation: 1, groups: 1, size_mode: SizeMode::Floor };
        let x = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        let y = conv2d_fwd(&x, &w, Some(&b), &cfg).unwrap();
        let gy = rand_tensor(&mut rng, y.shape());
        let loss = |y: &Tensor<f64>| -> f64 {
            y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum()
        };
        let gx = conv2d_bwd_input(&gy, &w, x.shape(), &cfg).unwrap();
        let gw = conv2d_bwd_weight(&gy, &x, w.shape(), &cfg).unwrap();
        let gb = conv2d_bwd_bias(&gy).unwrap();
        let eps = 1e-6;
        for probe in 0..12 {
            let i = rng.gen_range(0..x.numel());
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (loss(&conv2d_fwd(&xp, &w, Some(&b), &cfg).unwrap())
                - loss(&conv2d_fwd(&xm, &w, Some(&b), &cfg).unwrap()))
                / (2.0 * eps);
            assert!((fd - gx.data()[i]).abs() < 1e-6, "input grad probe {probe}");
        }
        for probe in 0..12 {
            let i = rng.gen_range(0..w.numel());
            let mut wp = w.clone();
            wp.data_mut()[i] += eps;
            let mut wm = w.clone();
            wm.data_mut()[i] -= eps;
            let fd = (loss(&conv2d_fwd(&x, &wp, Some(&b), &cfg).unwrap())
                - loss(&conv2d_fwd(&x, &wm, Some(&b), &cfg).unwrap()))
                / (2.0 * eps);
            assert!((fd - gw.data()[i]).abs() < 1e-6, "weight grad probe {probe}");
        }
        for i in 0..b.numel() {
            let mut bp = b.clone();
            bp.data_mut()[i] += eps;
            let mut bm = b.clone();
            bm.data_mut()[i] -= eps;
            let fd = (loss(&conv2d_fwd(&x, &w, Some(&bp), &cfg).unwrap())
                - loss(&conv2d_fwd(&x, &w, Some(&bm), &cfg).unwrap()))
                / (2.0 * eps);
            assert!((fd - gb.data()[i]).abs() < 1e-6, "bias grad {i}");
        }
    }

    #[test]
    fn avg_pool_counts_padding_as_zero() {
        // 2x2 input, 3x3 window, stride 2, padding 1: each output is the sum
        // of the in-bounds values divided by 9.
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![9.0f64, 18.0, 27.0, 36.0]).unwrap();
        let cfg = Conv2dCfg { stride: 2, padding: 1, size_mode: SizeMode::Floor, ..Default::default() };
        let y = avg_pool_fwd(&x, 3, &cfg).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert!((y.data()[0] - (9.0 + 18.0 + 27.0 + 36.0) / 9.0).abs() < 1e-12);
    }

    #[test]
    fn max_pool_picks_window_maxima() {
        let x = Tensor::from_vec(
            &[1, 1, 4, 4],
            vec![
                1.0f64, 2.0, 5.0, 4.0, //
                3.0, 0.0, 1.0, 1.0, //
                0.0, -1.0, -2.0, 8.0, //
                2.0, 2.0, 7.0, 1.0,
            ],
        )
        .unwrap();
        let cfg = Conv2dCfg { stride: 2, ..Default::default() };
        let (y, arg) = max_pool_fwd(&x, 2, &cfg).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0, 2.0, 8.0]);
        let gy = Tensor::ones(&[1, 1, 2, 2]);
        let gx = max_pool_bwd(&gy, 16, &arg, x.shape()).unwrap();
        assert_eq!(gx.data()[4], 1.0); // the 3.0
        assert_eq!(gx.data()[2], 1.0); // the 5.0
        assert_eq!(gx.data().iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut rng = crate::rng::substream(9, "kernels/resize");
        let x = rand_tensor(&mut rng, &[1, 2, 5, 5]);
        let same = resize_bilinear_fwd(&x, 5, 5).unwrap();
        assert!(x.max_abs_diff(&same).unwrap() < 1e-12);
        let c = Tensor::<f64>::full(&[1, 1, 3, 3], 2.5);
        let up = resize_bilinear_fwd(&c, 8, 8).unwrap();
        assert!(up.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn resize_backward_is_transpose() {
        // <gy, R(x)> must equal <R^T(gy), x> for the linear resize map.
        let mut rng = crate::rng::substream(10, "kernels/resize-bwd");
        let x = rand_tensor(&mut rng, &[1, 1, 5, 7]);
        let y = resize_bilinear_fwd(&x, 3, 4).unwrap();
        let gy = rand_tensor(&mut rng, y.shape());
        let gx = resize_bilinear_bwd(&gy, x.shape()).unwrap();
        let lhs: f64 = y.data().iter().zip(gy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn linear_matches_manual() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0f64, 2.0, 3.0, 0.0, -1.0, 1.0]).unwrap();
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap();
        let b = Tensor::from_vec(&[2], vec![10.0, 0.0]).unwrap();
        let y = linear_fwd(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[8.0, 3.0, 9.0, 0.0]);
    }

    #[test]
    fn center_sample_extracts_centres() {
        let x = Tensor::from_fn(&[1, 1, 5, 5], |i| i as f64);
        let cfg = Conv2dCfg { stride: 2, padding: 1, size_mode: SizeMode::Floor, ..Default::default() };
        let y = center_sample_fwd(&x, 3, &cfg).unwrap();
        // centre of window at output (r, c) is input (2r, 2c)
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert_eq!(y.data(), &[0.0, 2.0, 4.0, 10.0, 12.0, 14.0, 20.0, 22.0, 24.0]);
    }
}
