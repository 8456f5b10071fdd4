//! Experiment orchestration: fit any scoring network on synthetic samples,
//! reduce a held-out split to metric reports, and compare a searched
//! architecture against random sampling from the same space.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dynimg::RankPoolSolver;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, relative_improvement, MetricReport, ScoredSet};
use crate::nas::bilevel::BilevelModel;
use crate::nas::genotype::Genotype;
use crate::nas::materialize::{DiscreteNet, NetConfig};
use crate::nas::supernet::{head_loss, head_scores, Batch, Supernet};
use crate::optim::{halving_lr, zero_grads, Adam};
use crate::rng::substream;
use crate::spaces::{random_sample, HeadKind, SearchSpace};
use crate::synthetic::{assemble_batch, InputMode, SyntheticSample};
use crate::tape::{Param, Tape, Var};
use crate::tensor::{Scalar, Tensor};

// ─── configuration ───

/// How raw clips become network inputs and batches.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InputConfig {
    pub mode: InputMode,
    /// Rank-pooling window length for the dynamic modes.
    pub window: usize,
    pub solver: RankPoolSolver,
    pub batch_size: usize,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            mode: InputMode::Static,
            window: 7,
            solver: RankPoolSolver::Approximate,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub input: InputConfig,
    /// Base adaptive-moment rate; halves every `halve_every` epochs.
    pub lr: f64,
    pub weight_decay: f64,
    pub halve_every: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            input: InputConfig::default(),
            lr: 1e-4,
            weight_decay: 5e-5,
            halve_every: 500,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::config("weight decay must be finite and >= 0"));
        }
        if self.halve_every == 0 || self.epochs == 0 || self.input.batch_size == 0 {
            return Err(Error::config("epochs, halve_every, and batch size must be positive"));
        }
        if self.input.window == 0 {
            return Err(Error::config("rank-pooling window must be positive"));
        }
        Ok(())
    }
}

// ─── the trainable abstraction ───

/// Anything that can be fitted on assembled batches and scored per sample.
pub trait ScoringNet<T: Scalar> {
    fn params(&self) -> Vec<Param<T>>;
    fn batch_loss(&self, batch: &Batch<T>) -> Result<Var<T>>;
    /// Per-sample liveness scores, higher = more live.
    fn scores(&self, inputs: &Tensor<T>) -> Result<Vec<f64>>;
}

impl<T: Scalar> ScoringNet<T> for crate::cdn::CdnNet<T> {
    fn params(&self) -> Vec<Param<T>> {
        crate::cdn::CdnNet::params(self)
    }

    fn batch_loss(&self, batch: &Batch<T>) -> Result<Var<T>> {
        let tape = Tape::new();
        let x = tape.constant(batch.inputs.clone());
        let out = self.forward_depth(&x)?;
        head_loss(&HeadKind::DepthMap, &out, batch)
    }

    fn scores(&self, inputs: &Tensor<T>) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let out = self.forward_depth(&x)?;
        head_scores(&HeadKind::DepthMap, &out.value())
    }
}

impl<T: Scalar> ScoringNet<T> for DiscreteNet<T> {
    fn params(&self) -> Vec<Param<T>> {
        DiscreteNet::params(self)
    }

    fn batch_loss(&self, batch: &Batch<T>) -> Result<Var<T>> {
        DiscreteNet::batch_loss(self, batch)
    }

    fn scores(&self, inputs: &Tensor<T>) -> Result<Vec<f64>> {
        DiscreteNet::score_batch(self, inputs)
    }
}

impl<T: Scalar> ScoringNet<T> for Supernet<T> {
    fn params(&self) -> Vec<Param<T>> {
        let mut out = self.weight_params();
        out.extend(self.arch_params());
        out
    }

    fn batch_loss(&self, batch: &Batch<T>) -> Result<Var<T>> {
        Supernet::batch_loss(self, batch)
    }

    fn scores(&self, inputs: &Tensor<T>) -> Result<Vec<f64>> {
        Supernet::score_batch(self, inputs)
    }
}

// ─── training ───

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStat>,
}

impl TrainLog {
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch stat serializes"));
            out.push('\n');
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Turns a slice of samples into one training batch.
pub fn batch_from_samples<T: Scalar>(
    samples: &[SyntheticSample<T>],
    input: &InputConfig,
) -> Result<Batch<T>> {
    let (inputs, depth, labels) = assemble_batch(samples, input.mode, input.window, input.solver)?;
    Ok(Batch { inputs, labels, depth: Some(depth) })
}

/// Adaptive-moment fitting with the halving rate schedule. Weights move in
/// place; the log carries one mean-loss entry per epoch. A non-finite loss
/// aborts with a numeric error naming the epoch.
pub fn train<T: Scalar, N: ScoringNet<T>>(
    net: &N,
    samples: &[SyntheticSample<T>],
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::config("cannot train on an empty sample set"));
    }
    let params = net.params();
    let mut adam = Adam::new(T::from_f64(config.lr), T::from_f64(config.weight_decay));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let lr = halving_lr(config.lr, config.halve_every, epoch);
        adam.lr = T::from_f64(lr);
        order.shuffle(&mut substream(config.seed, &format!("train/epoch/{epoch}")));
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.input.batch_size) {
            let chosen: Vec<SyntheticSample<T>> =
                chunk.iter().map(|&i| samples[i].clone()).collect();
            let batch = batch_from_samples(&chosen, &config.input)?;
            let loss = net.batch_loss(&batch)?;
            let value = loss.value().item()?.to_f64();
            if !value.is_finite() {
                return Err(Error::numeric(format!(
                    "training loss diverged to {value} in epoch {epoch}"
                )));
            }
            loss.backward()?;
            adam.step(&params);
            zero_grads(&params);
            total += value;
            batches += 1;
        }
        log.epochs.push(EpochStat { epoch, lr, loss: total / batches as f64 });
    }
    Ok(log)
}

// ─── evaluation ───

/// Scores every sample (attack-type tags included) without touching weights.
pub fn score_samples<T: Scalar, N: ScoringNet<T>>(
    net: &N,
    samples: &[SyntheticSample<T>],
    input: &InputConfig,
) -> Result<ScoredSet> {
    if samples.is_empty() {
        return Err(Error::config("cannot score an empty sample set"));
    }
    let mut scores = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut tags = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(input.batch_size) {
        let (inputs, _, _) = assemble_batch(chunk, input.mode, input.window, input.solver)?;
        scores.extend(net.scores(&inputs)?);
        labels.extend(chunk.iter().map(|s| s.label()));
        tags.extend(chunk.iter().map(|s| s.tag().to_string()));
    }
    ScoredSet::with_tags(scores, labels, Some(tags))
}

/// Full metric summary of `net` on `samples`.
pub fn evaluate_net<T: Scalar, N: ScoringNet<T>>(
    net: &N,
    samples: &[SyntheticSample<T>],
    input: &InputConfig,
) -> Result<MetricReport> {
    evaluate(&score_samples(net, samples, input)?)
}

// ─── checkpoint plumbing ───

/// Named snapshot of every parameter, ready for the checkpoint container.
pub fn param_state<T: Scalar>(params: &[Param<T>]) -> Vec<(String, Tensor<T>)> {
    params.iter().map(|p| (p.name(), p.value())).collect()
}

/// Restores parameters by name. Every parameter must find its tensor and
/// shapes must agree; extra state entries are ignored.
pub fn restore_params<T: Scalar>(
    params: &[Param<T>],
    state: &[(String, Tensor<T>)],
) -> Result<()> {
    let by_name: std::collections::HashMap<&str, &Tensor<T>> =
        state.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for p in params {
        let t = by_name.get(p.name().as_str()).ok_or_else(|| {
            Error::config(format!("checkpoint is missing parameter {:?}", p.name()))
        })?;
        if t.shape() != p.shape().as_slice() {
            return Err(Error::shape(format!(
                "checkpoint parameter {:?} has shape {:?}, expected {:?}",
                p.name(),
                t.shape(),
                p.shape()
            )));
        }
        p.set_value((*t).clone());
    }
    Ok(())
}

// ─── searched-vs-random comparison ───

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompareConfig {
    /// Number of random-sampled competitor genotypes.
    pub rounds: usize,
    /// Reuse the searched genotype for every competitor (all runs then
    /// coincide and the improvement is exactly zero) — a self-test mode.
    pub inject_searched: bool,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig { rounds: 3, inject_searched: false, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub search_acer: f64,
    pub random_acers: Vec<f64>,
    pub mean_random_acer: f64,
    /// Percent improvement over the random mean; positive = search helped.
    pub ri: f64,
}

/// Retrains the searched genotype and `rounds` random genotypes under the
/// same regime, evaluates each on the held-out samples, and reports the
/// relative improvement of search over the random mean.
pub fn compare_to_random<T: Scalar>(
    space: &SearchSpace,
    searched: &Genotype,
    train_samples: &[SyntheticSample<T>],
    test_samples: &[SyntheticSample<T>],
    net_config: NetConfig,
    train_config: &TrainConfig,
    compare: &CompareConfig,
) -> Result<CompareReport> {
    if compare.rounds == 0 {
        return Err(Error::config("comparison needs at least one random round"));
    }
    let fit = |genotype: &Genotype| -> Result<f64> {
        let net = DiscreteNet::<T>::new(genotype, space, net_config)?;
        train(&net, train_samples, train_config)?;
        Ok(evaluate_net(&net, test_samples, &train_config.input)?.acer)
    };
    let search_acer = fit(searched)?;
    let mut random_acers = Vec::with_capacity(compare.rounds);
    for k in 0..compare.rounds {
        let candidate = if compare.inject_searched {
            searched.clone()
        } else {
            let mut rng = substream(compare.seed, &format!("compare/random/{k}"));
            random_sample(space, &mut rng)
        };
        random_acers.push(fit(&candidate)?);
    }
    let mean_random_acer = random_acers.iter().sum::<f64>() / random_acers.len() as f64;
    // equal rates mean no improvement even when both are zero, where the
    // ratio form is undefined
    let ri = if search_acer == mean_random_acer {
        0.0
    } else {
        relative_improvement(search_acer, mean_random_acer)?
    };
    Ok(CompareReport { search_acer, random_acers, mean_random_acer, ri })
}
