//! Supervision targets and losses for depth-map and binary-map heads.
//!
//! Depth heads train against mean squared error plus the contrastive depth
//! loss (eight directional contrast convolutions, each compared by MSE);
//! binary-map heads train against pixel-wise binary cross-entropy with the
//! predicted probability clamped to [1e-7, 1-1e-7]; scalar heads use
//! two-class cross-entropy. A sample's score at evaluation time is the mean
//! of its predicted map.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::kernels::Conv2dCfg;
use crate::tensor::{Scalar, Tensor};

pub const BCE_EPS: f64 = 1e-7;

/// Ground-truth depth map paired with its liveness label. Live maps hold
/// values in [0,1]; spoof maps are identically zero.
#[derive(Clone, Debug)]
pub struct DepthTarget<T: Scalar> {
    pub map: Tensor<T>,
    pub liveness: bool,
}

impl<T: Scalar> DepthTarget<T> {
    pub fn live(map: Tensor<T>) -> Result<Self> {
        if let (Ok(mn), Ok(mx)) = (map.min_value(), map.max_value()) {
            if mn < T::ZERO || mx > T::ONE {
                return Err(Error::config(format!(
                    "live depth map must lie in [0,1], found range [{mn}, {mx}]"
                )));
            }
        }
        Ok(DepthTarget { map, liveness: true })
    }

    pub fn spoof(shape: &[usize]) -> Self {
        DepthTarget { map: Tensor::zeros(shape), liveness: false }
    }
}

/// Ground-truth binary map: every cell carries the sample's label.
#[derive(Clone, Debug)]
pub struct BinaryTarget<T: Scalar> {
    pub map: Tensor<T>,
    pub liveness: bool,
}

impl<T: Scalar> BinaryTarget<T> {
    pub fn new(liveness: bool, shape: &[usize]) -> Self {
        let fill = if liveness { T::ONE } else { T::ZERO };
        BinaryTarget { map: Tensor::full(shape, fill), liveness }
    }
}

/// Mean squared error against a fixed target.
pub fn mse_loss<T: Scalar>(pred: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
    let t = pred.tape().constant(target.clone());
    let diff = pred.sub(&t)?;
    Ok(diff.mul(&diff)?.mean_all())
}

/// Plain-tensor MSE for evaluation paths.
pub fn mse_plain<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    let d = a.sub(b)?;
    Ok(d.mul(&d)?.mean())
}

/// The eight 3x3 directional contrast kernels: -1 at the centre, +1 at the
/// i-th neighbour (row-major order, centre skipped). Each sums to zero.
pub fn contrast_kernels<T: Scalar>() -> Vec<Tensor<T>> {
    let mut out = Vec::with_capacity(8);
    for pos in 0..9 {
        if pos == 4 {
            continue;
        }
        let mut k = vec![T::ZERO; 9];
        k[4] = -T::ONE;
        k[pos] = T::ONE;
        out.push(Tensor::from_vec(&[1, 1, 3, 3], k).unwrap());
    }
    out
}

/// Sum over the eight contrast directions of MSE between the contrast maps
/// of prediction and target. Constant offsets vanish because every kernel is
/// zero-sum. Accepts (N,1,H,W) maps.
pub fn contrastive_depth_loss<T: Scalar>(pred: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let cfg = Conv2dCfg::with_stride_padding(1, 1);
    let tape = pred.tape().clone();
    let mut total: Option<Var<T>> = None;
    for kernel in contrast_kernels::<T>() {
        let kv = tape.constant(kernel.clone());
        let pred_contrast = pred.conv2d(&kv, None, cfg)?;
        let target_contrast =
            crate::tensor::kernels::conv2d_fwd(target, &kernel, None, &cfg)?;
        let term = mse_loss(&pred_contrast, &target_contrast)?;
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("eight kernels"))
}

/// L_overall = MSE + CDL.
pub fn overall_depth_loss<T: Scalar>(pred: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
    mse_loss(pred, target)?.add(&contrastive_depth_loss(pred, target)?)
}

/// Pixel-wise binary cross-entropy of a logit map against a binary target.
/// The sigmoid output is clamped to [1e-7, 1-1e-7] before the logarithm.
pub fn deeppixel_loss<T: Scalar>(pred_logits: &Var<T>, target: &BinaryTarget<T>) -> Result<Var<T>> {
    if pred_logits.shape() != target.map.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred_logits.shape(),
            target.map.shape()
        )));
    }
    let eps = T::from_f64(BCE_EPS);
    let tape = pred_logits.tape().clone();
    let p = pred_logits.sigmoid().clamp(eps, T::ONE - eps);
    let t = tape.constant(target.map.clone());
    let one_minus_t = tape.constant(target.map.map(|v| T::ONE - v));
    let one_minus_p = p.scale(-T::ONE).add_scalar(T::ONE);
    let ll = t.mul(&p.ln())?.add(&one_minus_t.mul(&one_minus_p.ln())?)?;
    Ok(ll.mean_all().scale(-T::ONE))
}

/// Two-class cross-entropy for a scalar-score head producing (N,2) logits.
pub fn cross_entropy<T: Scalar>(logits: &Var<T>, labels: &[usize]) -> Result<Var<T>> {
    logits.cross_entropy_logits(labels)
}

/// Evaluation score of a predicted map: its arithmetic mean.
pub fn score_from_map<T: Scalar>(map: &Tensor<T>) -> T {
    map.mean()
}

/// Convenience: run a loss closure on a fresh tape over a constant input.
pub fn eval_loss<T: Scalar, F>(f: F) -> Result<T>
where
    F: FnOnce(&Tape<T>) -> Result<Var<T>>,
{
    let tape = Tape::new();
    f(&tape)?.value().item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use rand::Rng;

    #[test]
    fn mse_trivial_cases() {
        let tape = Tape::<f64>::new();
        let t = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let same = tape.constant(t.clone());
        assert_eq!(mse_loss(&same, &t).unwrap().value().item().unwrap(), 0.0);
        let shifted = tape.constant(t.add_scalar(1.0));
        assert_eq!(mse_loss(&shifted, &t).unwrap().value().item().unwrap(), 1.0);
        let p = tape.constant(Tensor::from_vec(&[2], vec![0.5, 0.5]).unwrap());
        assert_eq!(mse_loss(&p, &t).unwrap().value().item().unwrap(), 0.25);
    }

    #[test]
    fn contrast_kernels_are_zero_sum_and_directional() {
        let ks = contrast_kernels::<f64>();
        assert_eq!(ks.len(), 8);
        for k in &ks {
            assert_eq!(k.sum(), 0.0);
            assert_eq!(k.data()[4], -1.0);
            assert_eq!(k.data().iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }

    #[test]
    fn cdl_zero_for_equal_and_invariant_to_global_shift() {
        let mut rng = crate::rng::substream(51, "supervision/cdl");
        let t = Tensor::from_fn(&[1, 1, 6, 6], |_| rng.gen_range(0.0..1.0));
        let p = Tensor::from_fn(&[1, 1, 6, 6], |_| rng.gen_range(0.0..1.0));
        let tape = Tape::new();
        let same = tape.constant(t.clone());
        assert!(contrastive_depth_loss(&same, &t).unwrap().value().item().unwrap() < 1e-15);
        // shifting BOTH maps by the same constant leaves the loss unchanged;
        // shifting only one is cancelled on the interior (zero-sum kernels)
        // but not at zero-padded borders, so the two-sided form is the
        // invariant that holds exactly.
        let base = contrastive_depth_loss(&tape.constant(p.clone()), &t)
            .unwrap()
            .value()
            .item()
            .unwrap();
        let shifted = contrastive_depth_loss(&tape.constant(p.add_scalar(0.37)), &t.add_scalar(0.37))
            .unwrap()
            .value()
            .item()
            .unwrap();
        assert!((base - shifted).abs() < 1e-12, "global shift changed CDL: {base} vs {shifted}");
    }

    #[test]
    fn cdl_constant_offset_vanishes_on_the_interior() {
        // one-sided constant shift: every contrast-map disagreement sits on
        // the border ring where zero padding breaks the cancellation.
        let mut rng = crate::rng::substream(55, "supervision/cdl-interior");
        let t = Tensor::from_fn(&[1, 1, 6, 6], |_| rng.gen_range(0.0..1.0));
        let shifted = t.add_scalar(0.37);
        let cfg = Conv2dCfg::with_stride_padding(1, 1);
        for kernel in contrast_kernels::<f64>() {
            let a = crate::tensor::kernels::conv2d_fwd(&shifted, &kernel, None, &cfg).unwrap();
            let b = crate::tensor::kernels::conv2d_fwd(&t, &kernel, None, &cfg).unwrap();
            let d = a.sub(&b).unwrap();
            for r in 1..5 {
                for c in 1..5 {
                    assert!(d.data()[r * 6 + c].abs() < 1e-12, "interior cell ({r},{c}) leaked");
                }
            }
        }
    }

    #[test]
    fn cdl_matches_brute_force_oracle() {
        // 2x2 case embedded in zeros, evaluated by looping over the eight
        // kernels and every output cell directly.
        let pred_t = Tensor::from_vec(
            &[1, 1, 4, 4],
            vec![
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.8, 0.2, 0.0, //
                0.0, 0.1, 0.9, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        )
        .unwrap();
        let target_t = Tensor::from_vec(
            &[1, 1, 4, 4],
            vec![
                0.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        )
        .unwrap();
        let read = |t: &Tensor<f64>, r: isize, c: isize| -> f64 {
            if r < 0 || r > 3 || c < 0 || c > 3 {
                0.0
            } else {
                t.data()[(r * 4 + c) as usize]
            }
        };
        let neighbours: [(isize, isize); 8] = [
            (-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1),
        ];
        let mut want = 0.0;
        for (dr, dc) in neighbours {
            let mut acc = 0.0;
            for r in 0..4isize {
                for c in 0..4isize {
                    let p = read(&pred_t, r + dr, c + dc) - read(&pred_t, r, c);
                    let t = read(&target_t, r + dr, c + dc) - read(&target_t, r, c);
                    acc += (p - t) * (p - t);
                }
            }
            want += acc / 16.0;
        }
        let tape = Tape::new();
        let pred = tape.constant(pred_t);
        let got = contrastive_depth_loss(&pred, &target_t).unwrap().value().item().unwrap();
        assert!((got - want).abs() < 1e-12, "got {got}, oracle {want}");
    }

    #[test]
    fn overall_is_sum_of_components() {
        let mut rng = crate::rng::substream(52, "supervision/overall");
        let t = Tensor::from_fn(&[1, 1, 5, 5], |_| rng.gen_range(0.0..1.0));
        let p = Tensor::from_fn(&[1, 1, 5, 5], |_| rng.gen_range(0.0..1.0));
        let tape = Tape::new();
        let pv = tape.constant(p);
        let total = overall_depth_loss(&pv, &t).unwrap().value().item().unwrap();
        let mse = mse_loss(&pv, &t).unwrap().value().item().unwrap();
        let cdl = contrastive_depth_loss(&pv, &t).unwrap().value().item().unwrap();
        assert!((total - (mse + cdl)).abs() < 1e-12);
        assert!(total >= mse && mse >= 0.0);
    }

    #[test]
    fn deeppixel_limits() {
        let tape = Tape::<f64>::new();
        // zero logits: p = 0.5,每 cell ln 2
        let z = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let target = BinaryTarget::new(true, &[1, 1, 2, 2]);
        let v = deeppixel_loss(&z, &target).unwrap().value().item().unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        // saturated correct logit: clamped, loss ≈ 0
        let z = tape.constant(Tensor::full(&[1, 1, 2, 2], 50.0));
        let v = deeppixel_loss(&z, &target).unwrap().value().item().unwrap();
        assert!(v < 1e-6);
        // saturated wrong logit: clamped at -ln(1e-7)
        let target0 = BinaryTarget::new(false, &[1, 1, 2, 2]);
        let v = deeppixel_loss(&z, &target0).unwrap().value().item().unwrap();
        assert!((v - (-(BCE_EPS).ln())).abs() < 1e-3);
    }

    #[test]
    fn deeppixel_matches_scalar_formula() {
        let mut rng = crate::rng::substream(53, "supervision/deeppixel");
        let z = Tensor::from_fn(&[1, 1, 3, 3], |_| rng.gen_range(-3.0..3.0));
        let target = BinaryTarget::new(true, &[1, 1, 3, 3]);
        let tape = Tape::new();
        let zv = tape.constant(z.clone());
        let got = deeppixel_loss(&zv, &target).unwrap().value().item().unwrap();
        let want: f64 = z
            .data()
            .iter()
            .map(|&zi: &f64| {
                let p = (1.0 / (1.0 + (-zi).exp())).clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(p.ln())
            })
            .sum::<f64>()
            / 9.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn score_from_map_cases() {
        assert_eq!(score_from_map(&Tensor::<f64>::zeros(&[2, 2])), 0.0);
        assert_eq!(score_from_map(&Tensor::<f64>::ones(&[2, 2])), 1.0);
        let m = Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(score_from_map(&m), 0.5);
    }

    #[test]
    fn depth_target_invariants() {
        assert!(DepthTarget::live(Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap()).is_ok());
        assert!(DepthTarget::live(Tensor::from_vec(&[2], vec![-0.1, 0.5]).unwrap()).is_err());
        assert!(DepthTarget::live(Tensor::from_vec(&[2], vec![0.1, 1.5]).unwrap()).is_err());
        let spoof = DepthTarget::<f64>::spoof(&[3, 3]);
        assert_eq!(spoof.map.max_abs(), 0.0);
        assert!(!spoof.liveness);
        let live = BinaryTarget::<f64>::new(true, &[2, 2]);
        assert!(live.map.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn loss_gradients_pass_finite_differences() {
        let mut rng = crate::rng::substream(54, "supervision/grads");
        let target = Tensor::from_fn(&[1, 1, 4, 4], |_| rng.gen_range(0.0..1.0));
        let pred = Tensor::from_fn(&[1, 1, 4, 4], |_| rng.gen_range(-1.0..1.5));

        let t = target.clone();
        let r = check_gradients(&[pred.clone()], usize::MAX, move |_, v| mse_loss(&v[0], &t))
            .unwrap();
        assert!(r.passes(), "mse {}", r.max_rel_err);

        let t = target.clone();
        let r = check_gradients(&[pred.clone()], usize::MAX, move |_, v| {
            contrastive_depth_loss(&v[0], &t)
        })
        .unwrap();
        assert!(r.passes(), "cdl {}", r.max_rel_err);

        let t = target.clone();
        let r = check_gradients(&[pred.clone()], usize::MAX, move |_, v| {
            overall_depth_loss(&v[0], &t)
        })
        .unwrap();
        assert!(r.passes(), "overall {}", r.max_rel_err);

        let bt = BinaryTarget::new(true, &[1, 1, 4, 4]);
        let r = check_gradients(&[pred.clone()], usize::MAX, move |_, v| {
            deeppixel_loss(&v[0], &bt)
        })
        .unwrap();
        assert!(r.passes(), "deeppixel {}", r.max_rel_err);

        let logits = Tensor::from_fn(&[4, 2], |_| rng.gen_range(-2.0..2.0));
        let labels = vec![0, 1, 1, 0];
        let r = check_gradients(&[logits], usize::MAX, move |_, v| {
            cross_entropy(&v[0], &labels)
        })
        .unwrap();
        assert!(r.passes(), "cross-entropy {}", r.max_rel_err);
    }
}
