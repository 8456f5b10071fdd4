//! Dynamic images: a frame sequence is collapsed to one image whose pixels
//! are the parameters of a ranking function over the sequence's prefix
//! means, so the result encodes temporal ordering. A fused representation
//! adds the static frame back and rescales to the unit range.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Default temporal window length for sliding dynamic images.
pub const DEFAULT_WINDOW: usize = 7;

/// Default iteration budget for the descent solver.
pub const SOLVER_ITERS: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPoolSolver {
    /// Subgradient descent on the hinge ranking objective.
    Exact,
    /// Closed-form weighted frame sum with coefficients 2t − K − 1.
    Approximate,
}

impl RankPoolSolver {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(RankPoolSolver::Exact),
            "approximate" | "approx" => Ok(RankPoolSolver::Approximate),
            other => Err(Error::config(format!(
                "unknown solver {other:?} (expected exact | approximate)"
            ))),
        }
    }
}

/// Temporally ordered frames of one clip; all share a shape, values in [0,1].
#[derive(Debug, Clone)]
pub struct FrameSequence<T: Scalar> {
    frames: Vec<Tensor<T>>,
}

impl<T: Scalar> FrameSequence<T> {
    pub fn new(frames: Vec<Tensor<T>>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::config(format!(
                "a frame sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let shape = frames[0].shape().to_vec();
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != shape {
                return Err(Error::shape(format!(
                    "frame {i} has shape {:?}, expected {:?}",
                    f.shape(),
                    shape
                )));
            }
            if f.data().iter().any(|v| {
                let x = v.to_f64();
                !(0.0..=1.0).contains(&x)
            }) {
                return Err(Error::config(format!("frame {i} has values outside [0, 1]")));
            }
        }
        Ok(FrameSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Tensor<T>] {
        &self.frames
    }

    pub fn frame_shape(&self) -> &[usize] {
        self.frames[0].shape()
    }

    /// The window `frames[t .. t+k]` as a new sequence.
    pub fn window(&self, t: usize, k: usize) -> Result<FrameSequence<T>> {
        if k < 2 || t + k > self.frames.len() {
            return Err(Error::config(format!(
                "window start {t} length {k} out of range for {} frames",
                self.frames.len()
            )));
        }
        Ok(FrameSequence { frames: self.frames[t..t + k].to_vec() })
    }
}

// ─── ranking objective ───

/// Prefix means S_i flattened, their pairwise differences, and the margin
/// weight δ = 2 / (K(K−1)).
struct RankProblem {
    diffs: Vec<Vec<f64>>, // S_i − S_j for every i > j
    delta: f64,
    numel: usize,
}

impl RankProblem {
    fn build<T: Scalar>(seq: &FrameSequence<T>) -> RankProblem {
        let k = seq.len();
        let numel = seq.frames[0].numel();
        let mut prefix = vec![0.0f64; numel];
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
        for (i, f) in seq.frames.iter().enumerate() {
            for (acc, v) in prefix.iter_mut().zip(f.data()) {
                *acc += v.to_f64();
            }
            means.push(prefix.iter().map(|a| a / (i + 1) as f64).collect());
        }
        let mut diffs = Vec::with_capacity(k * (k - 1) / 2);
        for i in 1..k {
            for j in 0..i {
                diffs.push(
                    means[i].iter().zip(&means[j]).map(|(a, b)| a - b).collect(),
                );
            }
        }
        RankProblem { diffs, delta: 2.0 / (k * (k - 1)) as f64, numel }
    }

    /// ½‖D‖² + δ Σ max(0, 1 − Dᵀd) over all prefix-mean differences d.
    fn loss(&self, d: &[f64]) -> f64 {
        let reg = 0.5 * d.iter().map(|v| v * v).sum::<f64>();
        let hinge: f64 = self
            .diffs
            .iter()
            .map(|diff| {
                let margin = 1.0 - dot(d, diff);
                margin.max(0.0)
            })
            .sum();
        reg + self.delta * hinge
    }

    fn gradient(&self, d: &[f64], out: &mut [f64]) {
        out.copy_from_slice(d);
        for diff in &self.diffs {
            if 1.0 - dot(d, diff) > 0.0 {
                for (o, v) in out.iter_mut().zip(diff) {
                    *o -= self.delta * v;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Step schedule: constant 1e-2 for the first half of the budget, then
/// halved every 1/30 of the budget. Scaling both phases with the budget
/// keeps a longer run strictly more converged.
fn step_at(iter: usize, budget: usize) -> f64 {
    let half = budget / 2;
    let base = 1e-2;
    if iter < half {
        base
    } else {
        let halvings = 1 + (iter - half) / (budget / 30).max(1);
        base * 0.5f64.powi(halvings.min(60) as i32)
    }
}

fn solve_exact(problem: &RankProblem, iters: usize) -> Result<Vec<f64>> {
    let mut d = vec![0.0f64; problem.numel];
    let mut grad = vec![0.0f64; problem.numel];
    let mut prev = problem.loss(&d);
    if !prev.is_finite() {
        return Err(Error::numeric("ranking objective is not finite at the origin"));
    }
    for it in 0..iters {
        problem.gradient(&d, &mut grad);
        let step = step_at(it, iters);
        for (x, g) in d.iter_mut().zip(&grad) {
            *x -= step * g;
        }
        let loss = problem.loss(&d);
        if !loss.is_finite() {
            return Err(Error::numeric("ranking objective diverged to a non-finite value"));
        }
        // subgradient chatter at hinge kinks is tiny; a 10% jump is divergence
        if loss > prev + 0.1 * (1.0 + prev.abs()) {
            return Err(Error::numeric(format!(
                "ranking solve diverged at iteration {it}: loss {prev} -> {loss}"
            )));
        }
        prev = loss;
    }
    Ok(d)
}

/// Collapses a sequence to one frame-shaped tensor ranking its prefix means.
pub fn rank_pool<T: Scalar>(seq: &FrameSequence<T>, solver: RankPoolSolver) -> Result<Tensor<T>> {
    rank_pool_with_budget(seq, solver, SOLVER_ITERS)
}

pub fn rank_pool_with_budget<T: Scalar>(
    seq: &FrameSequence<T>,
    solver: RankPoolSolver,
    iters: usize,
) -> Result<Tensor<T>> {
    let shape = seq.frame_shape().to_vec();
    match solver {
        RankPoolSolver::Approximate => {
            let k = seq.len() as f64;
            let mut out = Tensor::zeros(&shape);
            {
                let data = out.data_mut();
                for (t, f) in seq.frames.iter().enumerate() {
                    let coef = T::from_f64(2.0 * (t + 1) as f64 - k - 1.0);
                    for (o, v) in data.iter_mut().zip(f.data()) {
                        *o += coef * *v;
                    }
                }
            }
            Ok(out)
        }
        RankPoolSolver::Exact => {
            let problem = RankProblem::build(seq);
            let d = solve_exact(&problem, iters)?;
            Tensor::from_vec(&shape, d.iter().map(|&v| T::from_f64(v)).collect())
        }
    }
}

/// Dynamic image of the window starting at `t` with `k` frames.
pub fn sliding_dynamic<T: Scalar>(
    seq: &FrameSequence<T>,
    t: usize,
    k: usize,
    solver: RankPoolSolver,
) -> Result<Tensor<T>> {
    rank_pool(&seq.window(t, k)?, solver)
}

/// static + dynamic, then max-min rescaled to [0,1]. A constant sum carries
/// no signal and maps to all zeros.
pub fn fuse_static_dynamic<T: Scalar>(stat: &Tensor<T>, dynamic: &Tensor<T>) -> Result<Tensor<T>> {
    let sum = stat.add(dynamic)?;
    let lo = sum.min_value()?;
    let hi = sum.max_value()?;
    if hi <= lo {
        return Ok(Tensor::zeros(sum.shape()));
    }
    let range = hi - lo;
    Ok(sum.map(|v| (v - lo) / range))
}
