//! Search schemes over multi-domain data: a plain scheme that splits the
//! pooled data at random, a domain/type-aware scheme that holds one task out
//! as query per iteration, and the meta scheme whose weights advance through
//! per-task inner learners before the held-out task scores them.
//!
//! Weight and architecture updates inside the meta scheme are plain gradient
//! steps with the configured rates — that is the algebra the update rules
//! are stated in. The other two schemes optionally step with Adam for
//! production runs.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dynimg::RankPoolSolver;
use crate::error::{Error, Result};
use crate::nas::bilevel::{
    accumulate_arch_grads, add_scaled, backward_loss, restore_values, sgd_arch_step,
    sgd_weight_step, snapshot_values, ArchGrad, BilevelModel,
};
use crate::nas::genotype::{Genotype, GenotypeMeta};
use crate::nas::supernet::Supernet;
use crate::optim::{sgd_step, zero_grads, Adam};
use crate::rng::substream;
use crate::synthetic::{assemble_batch, InputMode, SyntheticSample};
use crate::tensor::{Scalar, Tensor};

// ─── configuration ───

/// How the non-meta schemes apply the computed gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    /// Plain gradient steps with `gamma1` / `gamma2`.
    Plain,
    /// Adaptive steps; the gammas only govern the virtual inner step of the
    /// unrolled architecture gradient.
    Adam { weight_lr: f64, weight_decay: f64, arch_lr: f64, arch_decay: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Inner weight rate (per-task learners; also the plain weight step).
    pub gamma1: f64,
    /// Outer weight rate of the meta scheme.
    pub gamma1_tilde: f64,
    /// Architecture rate.
    pub gamma2: f64,
    /// Gradient steps per support batch (the meta scheme's inner updates).
    pub inner_steps: usize,
    /// Samples per task batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    /// Architecture logits stay frozen for this many leading epochs.
    pub freeze_epochs: usize,
    pub step_rule: StepRule,
    /// Differentiate the architecture gradient through one virtual weight
    /// step instead of the first-order shortcut.
    pub unrolled: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            gamma1: 1e-4,
            gamma1_tilde: 1e-4,
            gamma2: 6e-4,
            inner_steps: 1,
            batch_size: 8,
            epochs: 2,
            iterations_per_epoch: 8,
            freeze_epochs: 0,
            step_rule: StepRule::Plain,
            unrolled: false,
            seed: 0,
        }
    }
}

impl SearchConfig {
    /// The adaptive production preset layered on the defaults.
    pub fn production() -> Self {
        SearchConfig {
            step_rule: StepRule::Adam {
                weight_lr: 1e-4,
                weight_decay: 5e-5,
                arch_lr: 6e-4,
                arch_decay: 1e-3,
            },
            ..SearchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("gamma1", self.gamma1),
            ("gamma1_tilde", self.gamma1_tilde),
            ("gamma2", self.gamma2),
        ] {
            if !lr.is_finite() || lr < 0.0 {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {lr}")));
            }
        }
        if self.inner_steps == 0 || self.batch_size == 0 {
            return Err(Error::config("inner_steps and batch_size must be positive"));
        }
        if self.epochs == 0 || self.iterations_per_epoch == 0 {
            return Err(Error::config("epoch budget must be positive"));
        }
        Ok(())
    }

    fn arch_method(&self) -> ArchGrad {
        if self.unrolled {
            ArchGrad::unrolled(self.gamma1)
        } else {
            ArchGrad::FirstOrder
        }
    }
}

// ─── model and data abstractions ───

/// A searchable model: bilevel parameters plus a genotype read-out.
pub trait SearchModel<T: Scalar>: BilevelModel<T> {
    fn discretize(&self, meta: GenotypeMeta) -> Genotype;
    /// Per-template mean (over edges) of the strongest mixing weight; 1.0
    /// means every edge has fully committed to one op.
    fn beta_peaks(&self) -> Vec<f64>;
}

impl<T: Scalar> SearchModel<T> for Supernet<T> {
    fn discretize(&self, meta: GenotypeMeta) -> Genotype {
        Supernet::discretize(self, meta)
    }

    fn beta_peaks(&self) -> Vec<f64> {
        self.alpha
            .ops
            .iter()
            .enumerate()
            .map(|(t, row)| {
                let sum: f64 = (0..row.len())
                    .map(|e| {
                        self.alpha.beta(t, e).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    })
                    .sum();
                sum / row.len() as f64
            })
            .collect()
    }
}

/// Batches drawn from task-partitioned data. Tasks are domains or attack
/// types; the pooled halves serve the scheme that ignores task structure.
pub trait TaskSource<B> {
    fn n_tasks(&self) -> usize;
    /// A batch from one task's pool.
    fn task_batch(&self, task: usize, rng: &mut dyn RngCore) -> Result<B>;
    /// A batch from the random support half of the pooled data.
    fn support_batch(&self, rng: &mut dyn RngCore) -> Result<B>;
    /// A batch from the random query half of the pooled data.
    fn query_batch(&self, rng: &mut dyn RngCore) -> Result<B>;
}

// ─── search log ───

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub scheme: String,
    pub epoch: usize,
    pub iteration: usize,
    /// Held-out task of this iteration; absent for the pooled scheme.
    pub query_task: Option<usize>,
    pub support_tasks: Vec<usize>,
    pub support_losses: Vec<f64>,
    pub query_loss: Option<f64>,
    pub arch_updated: bool,
    pub beta_peaks: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub genotype: Genotype,
    pub records: Vec<SearchRecord>,
}

impl SearchOutcome {
    /// One JSON object per line, ready for audit tooling.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

// ─── shared machinery ───

/// Query-task rotation: within every block of `n` consecutive iterations,
/// each task is held out exactly once, in an order reshuffled per block.
pub fn rotation(seed: u64, iteration: usize, n: usize) -> (usize, Vec<usize>) {
    let block = iteration / n;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, &format!("schemes/rotation/{block}"));
    order.shuffle(&mut rng);
    let query = order[iteration % n];
    let support = (0..n).filter(|&d| d != query).collect();
    (query, support)
}

/// Optimizer state for the non-meta schemes.
struct Steppers<T: Scalar> {
    weight: Option<Adam<T>>,
    arch: Option<Adam<T>>,
}

impl<T: Scalar> Steppers<T> {
    fn new(config: &SearchConfig) -> Self {
        match config.step_rule {
            StepRule::Plain => Steppers { weight: None, arch: None },
            StepRule::Adam { weight_lr, weight_decay, arch_lr, arch_decay } => Steppers {
                weight: Some(Adam::new(T::from_f64(weight_lr), T::from_f64(weight_decay))),
                arch: Some(Adam::new(T::from_f64(arch_lr), T::from_f64(arch_decay))),
            },
        }
    }

    fn weight_step<M: BilevelModel<T>>(
        &mut self,
        model: &M,
        batch: &M::Batch,
        gamma1: f64,
    ) -> Result<f64> {
        match &mut self.weight {
            None => sgd_weight_step(model, batch, T::from_f64(gamma1)),
            Some(adam) => {
                let value = backward_loss(model, batch)?;
                adam.step(&model.weight_params());
                zero_grads(&model.weight_params());
                zero_grads(&model.arch_params());
                Ok(value)
            }
        }
    }

    fn arch_step<M: BilevelModel<T>>(
        &mut self,
        model: &M,
        support: &M::Batch,
        query: &M::Batch,
        config: &SearchConfig,
    ) -> Result<f64> {
        match &mut self.arch {
            None => sgd_arch_step(
                model,
                support,
                query,
                config.arch_method(),
                T::from_f64(config.gamma2),
            ),
            Some(adam) => {
                let value = accumulate_arch_grads(model, support, query, config.arch_method())?;
                adam.step(&model.arch_params());
                zero_grads(&model.arch_params());
                Ok(value)
            }
        }
    }
}

fn outcome<T: Scalar, M: SearchModel<T>>(
    model: &M,
    config: &SearchConfig,
    records: Vec<SearchRecord>,
) -> SearchOutcome {
    let meta = GenotypeMeta { seed: config.seed, epochs: config.epochs };
    SearchOutcome { genotype: model.discretize(meta), records }
}

// ─── the three schemes ───

/// Task-blind search: every iteration fits weights on a batch from the
/// random support half and moves the architecture on a batch from the
/// random query half.
pub fn nas_search<T: Scalar, M: SearchModel<T>, S: TaskSource<M::Batch>>(
    model: &M,
    source: &S,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    config.validate()?;
    let mut rng = substream(config.seed, "schemes/nas");
    let mut steppers = Steppers::new(config);
    let mut records = Vec::new();
    let mut iteration = 0;
    for epoch in 0..config.epochs {
        let arch_live = epoch >= config.freeze_epochs;
        for _ in 0..config.iterations_per_epoch {
            let support = source.support_batch(&mut rng)?;
            let mut support_losses = Vec::with_capacity(config.inner_steps);
            for _ in 0..config.inner_steps {
                support_losses.push(steppers.weight_step(model, &support, config.gamma1)?);
            }
            let query_loss = if arch_live {
                let query = source.query_batch(&mut rng)?;
                Some(steppers.arch_step(model, &support, &query, config)?)
            } else {
                None
            };
            records.push(SearchRecord {
                scheme: "nas".into(),
                epoch,
                iteration,
                query_task: None,
                support_tasks: Vec::new(),
                support_losses,
                query_loss,
                arch_updated: arch_live,
                beta_peaks: model.beta_peaks(),
            });
            iteration += 1;
        }
    }
    Ok(outcome(model, config, records))
}

/// Task-aware search: each iteration holds one task out, fits weights on a
/// batch from every other task, then moves the architecture on the held-out
/// task's batch.
pub fn dt_nas_search<T: Scalar, M: SearchModel<T>, S: TaskSource<M::Batch>>(
    model: &M,
    source: &S,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    config.validate()?;
    let n = source.n_tasks();
    if n < 2 {
        return Err(Error::config(format!(
            "task-aware search needs at least two tasks, got {n}"
        )));
    }
    let mut rng = substream(config.seed, "schemes/dt-nas");
    let mut steppers = Steppers::new(config);
    let mut records = Vec::new();
    let mut iteration = 0;
    for epoch in 0..config.epochs {
        let arch_live = epoch >= config.freeze_epochs;
        for _ in 0..config.iterations_per_epoch {
            let (query_task, support_tasks) = rotation(config.seed, iteration, n);
            let mut support_losses = Vec::with_capacity(support_tasks.len());
            let mut first_support = None;
            for &d in &support_tasks {
                let batch = source.task_batch(d, &mut rng)?;
                let mut last = 0.0;
                for _ in 0..config.inner_steps {
                    last = steppers.weight_step(model, &batch, config.gamma1)?;
                }
                support_losses.push(last);
                if first_support.is_none() {
                    first_support = Some(batch);
                }
            }
            let query_loss = if arch_live {
                let query = source.task_batch(query_task, &mut rng)?;
                let support = first_support.as_ref().expect("n >= 2 gives a support task");
                Some(steppers.arch_step(model, support, &query, config)?)
            } else {
                None
            };
            records.push(SearchRecord {
                scheme: "dt_nas".into(),
                epoch,
                iteration,
                query_task: Some(query_task),
                support_tasks,
                support_losses,
                query_loss,
                arch_updated: arch_live,
                beta_peaks: model.beta_peaks(),
            });
            iteration += 1;
        }
    }
    Ok(outcome(model, config, records))
}

/// Meta search. Per iteration, with one task held out as query:
/// 1. sample one batch per support task and one query batch;
/// 2. from the shared weights, run the inner updates on each support batch
///    separately, giving one adapted learner per task;
/// 3. sum each learner's query-batch weight gradient (taken at the learner,
///    treating the adaptation as identity) and step the shared weights by
///    `gamma1_tilde` along that sum;
/// 4. step the architecture logits by `gamma2` along the query-batch
///    gradient at the new weights;
/// 5. keep the new weights and continue.
pub fn dt_meta_nas_search<T: Scalar, M: SearchModel<T>, S: TaskSource<M::Batch>>(
    model: &M,
    source: &S,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    config.validate()?;
    let n = source.n_tasks();
    if n < 2 {
        return Err(Error::config(format!("meta search needs at least two tasks, got {n}")));
    }
    let mut rng = substream(config.seed, "schemes/dt-meta");
    let mut records = Vec::new();
    let mut iteration = 0;
    let weights = model.weight_params();
    let arch = model.arch_params();
    for epoch in 0..config.epochs {
        let arch_live = epoch >= config.freeze_epochs;
        for _ in 0..config.iterations_per_epoch {
            let (query_task, support_tasks) = rotation(config.seed, iteration, n);
            let support_batches: Vec<M::Batch> = support_tasks
                .iter()
                .map(|&d| source.task_batch(d, &mut rng))
                .collect::<Result<_>>()?;
            let query = source.task_batch(query_task, &mut rng)?;

            let shared = snapshot_values(&weights);
            let mut outer_grad: Vec<Tensor<T>> =
                weights.iter().map(|p| Tensor::zeros(&p.shape())).collect();
            let mut support_losses = Vec::with_capacity(support_batches.len());
            let mut query_sum = 0.0;
            for batch in &support_batches {
                restore_values(&weights, &shared);
                let mut first = 0.0;
                for s in 0..config.inner_steps {
                    let v = sgd_weight_step(model, batch, T::from_f64(config.gamma1))?;
                    if s == 0 {
                        first = v;
                    }
                }
                support_losses.push(first);
                query_sum += backward_loss(model, &query)?;
                for (acc, p) in outer_grad.iter_mut().zip(&weights) {
                    *acc = acc.add(&p.grad())?;
                }
                zero_grads(&weights);
                zero_grads(&arch);
            }
            restore_values(&weights, &shared);
            add_scaled(&weights, &outer_grad, T::from_f64(-config.gamma1_tilde));

            let query_loss = if arch_live {
                let v = accumulate_arch_grads(model, &support_batches[0], &query, ArchGrad::FirstOrder)?;
                sgd_step(&arch, T::from_f64(config.gamma2));
                zero_grads(&arch);
                Some(v)
            } else {
                None
            };
            records.push(SearchRecord {
                scheme: "dt_meta".into(),
                epoch,
                iteration,
                query_task: Some(query_task),
                support_tasks,
                support_losses,
                query_loss: query_loss.or(Some(query_sum / support_batches.len() as f64)),
                arch_updated: arch_live,
                beta_peaks: model.beta_peaks(),
            });
            iteration += 1;
        }
    }
    Ok(outcome(model, config, records))
}

// ─── batches over synthetic data ───

/// Task partition of a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskSplit {
    /// One task per domain tag.
    ByDomain,
    /// One task per attack type; every task shares all live samples and
    /// holds that type's attacks.
    ByType,
}

/// Concrete [`TaskSource`] over synthetic samples: task pools by domain or
/// attack type, plus a fixed random half-split of the union for the pooled
/// scheme.
pub struct TaskBatches<T: Scalar> {
    tasks: Vec<Vec<SyntheticSample<T>>>,
    task_names: Vec<String>,
    support_half: Vec<SyntheticSample<T>>,
    query_half: Vec<SyntheticSample<T>>,
    batch_size: usize,
    mode: InputMode,
    window: usize,
    solver: RankPoolSolver,
}

impl<T: Scalar> TaskBatches<T> {
    pub fn new(
        samples: &[SyntheticSample<T>],
        split: TaskSplit,
        batch_size: usize,
        mode: InputMode,
        window: usize,
        solver: RankPoolSolver,
        seed: u64,
    ) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::config("need at least two samples to form batches"));
        }
        if batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        let mut task_names: Vec<String> = match split {
            TaskSplit::ByDomain => samples.iter().map(|s| s.domain.clone()).collect(),
            TaskSplit::ByType => samples
                .iter()
                .filter_map(|s| s.attack.map(|a| a.as_str().to_string()))
                .collect(),
        };
        task_names.sort();
        task_names.dedup();
        if task_names.is_empty() {
            return Err(Error::config("no tasks: the sample set has no attack types"));
        }
        let tasks: Vec<Vec<SyntheticSample<T>>> = task_names
            .iter()
            .map(|name| {
                samples
                    .iter()
                    .filter(|s| match split {
                        TaskSplit::ByDomain => &s.domain == name,
                        TaskSplit::ByType => {
                            s.is_live || s.attack.map(|a| a.as_str() == name).unwrap_or(false)
                        }
                    })
                    .cloned()
                    .collect()
            })
            .collect();
        for (t, pool) in tasks.iter().enumerate() {
            if pool.is_empty() {
                return Err(Error::config(format!("task {} has no samples", task_names[t])));
            }
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut substream(seed, "schemes/split"));
        let cut = samples.len() / 2;
        let support_half = order[..cut].iter().map(|&i| samples[i].clone()).collect();
        let query_half = order[cut..].iter().map(|&i| samples[i].clone()).collect();
        Ok(TaskBatches {
            tasks,
            task_names,
            support_half,
            query_half,
            batch_size,
            mode,
            window,
            solver,
        })
    }

    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    pub fn task_sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.len()).collect()
    }

    fn draw(&self, pool: &[SyntheticSample<T>], rng: &mut dyn RngCore) -> Result<BatchOf<T>> {
        if pool.is_empty() {
            return Err(Error::config("cannot draw from an empty pool"));
        }
        let k = self.batch_size.min(pool.len());
        let picks = rand::seq::index::sample(rng, pool.len(), k);
        let chosen: Vec<SyntheticSample<T>> = picks.iter().map(|i| pool[i].clone()).collect();
        let (inputs, depth, labels) =
            assemble_batch(&chosen, self.mode, self.window, self.solver)?;
        Ok(crate::nas::supernet::Batch { inputs, labels, depth: Some(depth) })
    }
}

type BatchOf<T> = crate::nas::supernet::Batch<T>;

impl<T: Scalar> TaskSource<BatchOf<T>> for TaskBatches<T> {
    fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    fn task_batch(&self, task: usize, rng: &mut dyn RngCore) -> Result<BatchOf<T>> {
        let pool = self
            .tasks
            .get(task)
            .ok_or_else(|| Error::config(format!("task {task} out of range")))?;
        self.draw(pool, rng)
    }

    fn support_batch(&self, rng: &mut dyn RngCore) -> Result<BatchOf<T>> {
        self.draw(&self.support_half, rng)
    }

    fn query_batch(&self, rng: &mut dyn RngCore) -> Result<BatchOf<T>> {
        self.draw(&self.query_half, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nas::mixed::MixedOp;
    use crate::nas::supernet::{Alpha, Supernet, SupernetConfig};
    use crate::spaces::{
        fas_space, CellTemplate, EdgeSpec, HeadKind, PoolKind, SearchSpace, SpaceFamily,
    };
    use crate::synthetic::TaskSpec;
    use crate::{Param, Tape};
    use rand::Rng;

    // ── toy models ──

    /// Loss linear in the weights (gradient independent of everything),
    /// quadratic in the single architecture logit.
    struct LinearToy {
        w: Param<f64>,
        a: Param<f64>,
    }

    impl LinearToy {
        fn new() -> Self {
            LinearToy {
                w: Param::new("w", Tensor::from_vec(&[2], vec![1.0, -0.5]).unwrap()),
                a: Param::new("a", Tensor::scalar(0.7)),
            }
        }
    }

    impl BilevelModel<f64> for LinearToy {
        type Batch = Tensor<f64>;

        fn weight_params(&self) -> Vec<Param<f64>> {
            vec![self.w.clone()]
        }

        fn arch_params(&self) -> Vec<Param<f64>> {
            vec![self.a.clone()]
        }

        fn loss(&self, c: &Tensor<f64>) -> Result<crate::Var<f64>> {
            let tape = Tape::new();
            let w = tape.param(&self.w);
            let a = tape.param(&self.a);
            let dot = w.mul(&tape.constant(c.clone()))?.sum_all();
            dot.add(&a.mul(&a)?.scale(0.5))
        }
    }

    impl SearchModel<f64> for LinearToy {
        fn discretize(&self, meta: GenotypeMeta) -> Genotype {
            Genotype { space: "toy".into(), cells: Vec::new(), meta }
        }

        fn beta_peaks(&self) -> Vec<f64> {
            Vec::new()
        }
    }

    /// Per-task quadratic: task d pulls the weight toward minimum m[d];
    /// the architecture logit feels an independent quadratic pull to zero.
    struct QuadraticToy {
        w: Param<f64>,
        a: Param<f64>,
        minima: Vec<f64>,
    }

    impl QuadraticToy {
        fn new(w0: f64, a0: f64, minima: Vec<f64>) -> Self {
            QuadraticToy {
                w: Param::new("w", Tensor::scalar(w0)),
                a: Param::new("a", Tensor::scalar(a0)),
                minima,
            }
        }
    }

    impl BilevelModel<f64> for QuadraticToy {
        type Batch = usize;

        fn weight_params(&self) -> Vec<Param<f64>> {
            vec![self.w.clone()]
        }

        fn arch_params(&self) -> Vec<Param<f64>> {
            vec![self.a.clone()]
        }

        fn loss(&self, task: &usize) -> Result<crate::Var<f64>> {
            let tape = Tape::new();
            let w = tape.param(&self.w);
            let a = tape.param(&self.a);
            let d = w.add_scalar(-self.minima[*task]);
            d.mul(&d)?.scale(0.5).add(&a.mul(&a)?.scale(0.5))
        }
    }

    impl SearchModel<f64> for QuadraticToy {
        fn discretize(&self, meta: GenotypeMeta) -> Genotype {
            Genotype { space: "toy".into(), cells: Vec::new(), meta }
        }

        fn beta_peaks(&self) -> Vec<f64> {
            Vec::new()
        }
    }

    /// Source whose every batch is the task index (or 0 for pooled halves).
    struct IndexSource {
        n: usize,
    }

    impl TaskSource<usize> for IndexSource {
        fn n_tasks(&self) -> usize {
            self.n
        }

        fn task_batch(&self, task: usize, _rng: &mut dyn RngCore) -> Result<usize> {
            Ok(task)
        }

        fn support_batch(&self, _rng: &mut dyn RngCore) -> Result<usize> {
            Ok(0)
        }

        fn query_batch(&self, _rng: &mut dyn RngCore) -> Result<usize> {
            Ok(0)
        }
    }

    /// Source whose every batch is one fixed tensor.
    struct ConstSource {
        n: usize,
        c: Tensor<f64>,
    }

    impl TaskSource<Tensor<f64>> for ConstSource {
        fn n_tasks(&self) -> usize {
            self.n
        }

        fn task_batch(&self, _task: usize, _rng: &mut dyn RngCore) -> Result<Tensor<f64>> {
            Ok(self.c.clone())
        }

        fn support_batch(&self, _rng: &mut dyn RngCore) -> Result<Tensor<f64>> {
            Ok(self.c.clone())
        }

        fn query_batch(&self, _rng: &mut dyn RngCore) -> Result<Tensor<f64>> {
            Ok(self.c.clone())
        }
    }

    fn quick_config(epochs: usize, ipe: usize) -> SearchConfig {
        SearchConfig {
            gamma1: 0.2,
            gamma1_tilde: 0.3,
            gamma2: 0.1,
            epochs,
            iterations_per_epoch: ipe,
            batch_size: 2,
            ..SearchConfig::default()
        }
    }

    // ── rotation and logging contracts ──

    #[test]
    fn rotation_covers_every_task_per_block_and_separates_sets() {
        for n in [2usize, 3, 5] {
            for block in 0..3 {
                let mut seen = Vec::new();
                for pos in 0..n {
                    let (q, s) = rotation(9, block * n + pos, n);
                    assert_eq!(s.len(), n - 1);
                    assert!(!s.contains(&q));
                    let mut all = s.clone();
                    all.push(q);
                    all.sort();
                    assert_eq!(all, (0..n).collect::<Vec<_>>());
                    seen.push(q);
                }
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>(), "block {block} missed a task");
            }
        }
    }

    #[test]
    fn dt_records_keep_support_and_query_disjoint() {
        let toy = QuadraticToy::new(1.0, 0.4, vec![0.0, 0.5, 1.0]);
        let out =
            dt_nas_search(&toy, &IndexSource { n: 3 }, &quick_config(2, 6)).unwrap();
        assert_eq!(out.records.len(), 12);
        for r in &out.records {
            let q = r.query_task.unwrap();
            assert!(!r.support_tasks.contains(&q));
            assert_eq!(r.support_tasks.len(), 2);
            assert_eq!(r.support_losses.len(), 2);
        }
        // per 3-iteration block, every task appears as query once
        for block in out.records.chunks(3) {
            let mut qs: Vec<usize> = block.iter().map(|r| r.query_task.unwrap()).collect();
            qs.sort();
            assert_eq!(qs, vec![0, 1, 2]);
        }
        let toy2 = QuadraticToy::new(1.0, 0.4, vec![0.0, 0.5, 1.0]);
        let out2 =
            dt_meta_nas_search(&toy2, &IndexSource { n: 3 }, &quick_config(2, 6)).unwrap();
        for r in &out2.records {
            assert!(!r.support_tasks.contains(&r.query_task.unwrap()));
        }
    }

    #[test]
    fn two_task_rotation_alternates_the_query() {
        let toy = QuadraticToy::new(0.0, 0.0, vec![0.0, 1.0]);
        let out = dt_nas_search(&toy, &IndexSource { n: 2 }, &quick_config(1, 6)).unwrap();
        for pair in out.records.chunks(2) {
            let (a, b) = (pair[0].query_task.unwrap(), pair[1].query_task.unwrap());
            assert_ne!(a, b);
        }
    }

    #[test]
    fn log_lines_are_json_objects() {
        let toy = QuadraticToy::new(1.0, 0.4, vec![0.0, 1.0]);
        let out = dt_meta_nas_search(&toy, &IndexSource { n: 2 }, &quick_config(1, 2)).unwrap();
        let log = out.log_jsonl();
        assert_eq!(log.lines().count(), 2);
        for line in log.lines() {
            let r: SearchRecord = serde_json::from_str(line).unwrap();
            assert_eq!(r.scheme, "dt_meta");
        }
    }

    // ── fixed points and exact algebra ──

    #[test]
    fn zero_rates_change_nothing() {
        let toy = QuadraticToy::new(0.8, -0.6, vec![0.0, 1.0]);
        let config = SearchConfig {
            gamma1: 0.0,
            gamma1_tilde: 0.0,
            gamma2: 0.0,
            epochs: 2,
            iterations_per_epoch: 4,
            ..SearchConfig::default()
        };
        dt_meta_nas_search(&toy, &IndexSource { n: 2 }, &config).unwrap();
        assert_eq!(toy.w.value().item().unwrap(), 0.8);
        assert_eq!(toy.a.value().item().unwrap(), -0.6);
        let toy = QuadraticToy::new(0.8, -0.6, vec![0.0, 1.0]);
        nas_search(&toy, &IndexSource { n: 2 }, &config).unwrap();
        assert_eq!(toy.w.value().item().unwrap(), 0.8);
        assert_eq!(toy.a.value().item().unwrap(), -0.6);
    }

    #[test]
    fn meta_with_identity_inner_step_is_a_scaled_plain_step() {
        // gamma1 = 0 makes every learner the shared weights, so one
        // iteration moves w by gamma1_tilde * (n-1) * grad exactly
        let (w0, a0) = (0.9, 0.5);
        let minima = vec![0.1, 0.2, 0.3, 0.4];
        let toy = QuadraticToy::new(w0, a0, minima.clone());
        let config = SearchConfig {
            gamma1: 0.0,
            gamma1_tilde: 0.05,
            gamma2: 0.0,
            epochs: 1,
            iterations_per_epoch: 1,
            ..SearchConfig::default()
        };
        let out = dt_meta_nas_search(&toy, &IndexSource { n: 4 }, &config).unwrap();
        let q = out.records[0].query_task.unwrap();
        let want = w0 - 0.05 * 3.0 * (w0 - minima[q]);
        let got = toy.w.value().item().unwrap();
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn one_meta_iteration_matches_hand_unrolled_arithmetic() {
        let (w0, a0) = (1.0, 0.7);
        let (g1, g1t, g2) = (0.2, 0.3, 0.1);
        let minima = vec![0.5, -0.25];
        let toy = QuadraticToy::new(w0, a0, minima.clone());
        let config = SearchConfig {
            gamma1: g1,
            gamma1_tilde: g1t,
            gamma2: g2,
            epochs: 1,
            iterations_per_epoch: 1,
            ..SearchConfig::default()
        };
        let out = dt_meta_nas_search(&toy, &IndexSource { n: 2 }, &config).unwrap();
        let q = out.records[0].query_task.unwrap();
        let s = 1 - q;
        // inner learner on the support task, outer step from its query grad
        let w_learner = w0 - g1 * (w0 - minima[s]);
        let w_new = w0 - g1t * (w_learner - minima[q]);
        // architecture pull is independent of the weights: a <- a - g2*a
        let a_new = a0 - g2 * a0;
        assert!((toy.w.value().item().unwrap() - w_new).abs() < 1e-10);
        assert!((toy.a.value().item().unwrap() - a_new).abs() < 1e-10);
    }

    #[test]
    fn identical_tasks_make_meta_follow_the_plain_trajectory() {
        // linear model: gradients independent of position, so with
        // gamma1_tilde = gamma1/(n-1) the meta weight path superposes to
        // exactly the plain path
        let c = Tensor::from_vec(&[2], vec![0.3, -0.2]).unwrap();
        let n = 3;
        let plain = LinearToy::new();
        let meta = LinearToy::new();
        let config = SearchConfig {
            gamma1: 0.05,
            gamma1_tilde: 0.05, // unused by the plain scheme
            gamma2: 0.1,
            epochs: 1,
            iterations_per_epoch: 4,
            ..SearchConfig::default()
        };
        nas_search(&plain, &ConstSource { n, c: c.clone() }, &config).unwrap();
        let meta_config = SearchConfig {
            gamma1_tilde: config.gamma1 / (n - 1) as f64,
            ..config
        };
        dt_meta_nas_search(&meta, &ConstSource { n, c }, &meta_config).unwrap();
        let pw = plain.w.value();
        let mw = meta.w.value();
        for (a, b) in pw.data().iter().zip(mw.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(
            (plain.a.value().item().unwrap() - meta.a.value().item().unwrap()).abs() < 1e-12
        );
    }

    // ── freeze and determinism ──

    #[test]
    fn frozen_epochs_leave_architecture_logits_bitwise_untouched() {
        let space = fas_space(false, PoolKind::Max, false);
        let net = Supernet::<f64>::new(
            &space,
            SupernetConfig { channels: 2, kpc: 1, input_size: 16, seed: 4 },
        )
        .unwrap();
        let source = demo_source(16, 6, 31);
        let config = SearchConfig {
            gamma1: 1e-3,
            gamma2: 0.05,
            epochs: 1,
            iterations_per_epoch: 2,
            freeze_epochs: 1,
            batch_size: 2,
            ..SearchConfig::default()
        };
        let before: Vec<Tensor<f64>> = net.arch_params().iter().map(|p| p.value()).collect();
        let out = nas_search(&net, &source, &config).unwrap();
        for (p, b) in net.arch_params().iter().zip(&before) {
            assert_eq!(p.value().data(), b.data());
        }
        assert!(out.records.iter().all(|r| !r.arch_updated && r.query_loss.is_none()));

        // once the freeze lifts, the logits move
        let config = SearchConfig { epochs: 2, ..config };
        let out = nas_search(&net, &source, &config).unwrap();
        let moved = net
            .arch_params()
            .iter()
            .zip(&before)
            .any(|(p, b)| p.value().data() != b.data());
        assert!(moved);
        assert!(out.records.iter().any(|r| r.arch_updated));
    }

    #[test]
    fn zero_rates_return_the_initial_discretization() {
        let space = fas_space(false, PoolKind::Max, false);
        let net = Supernet::<f64>::new(
            &space,
            SupernetConfig { channels: 2, kpc: 1, input_size: 16, seed: 8 },
        )
        .unwrap();
        let initial = net.discretize(GenotypeMeta { seed: 3, epochs: 1 });
        let source = demo_source(16, 6, 32);
        let config = SearchConfig {
            gamma1: 0.0,
            gamma1_tilde: 0.0,
            gamma2: 0.0,
            epochs: 1,
            iterations_per_epoch: 2,
            batch_size: 2,
            seed: 3,
            ..SearchConfig::default()
        };
        let out = nas_search(&net, &source, &config).unwrap();
        assert_eq!(out.genotype, initial);
    }

    #[test]
    fn fixed_seeds_reproduce_the_same_genotype_and_log() {
        let space = fas_space(false, PoolKind::Max, false);
        let run = || {
            let net = Supernet::<f64>::new(
                &space,
                SupernetConfig { channels: 2, kpc: 1, input_size: 16, seed: 12 },
            )
            .unwrap();
            let source = demo_source(16, 6, 33);
            let config = SearchConfig {
                gamma1: 1e-3,
                gamma1_tilde: 1e-3,
                gamma2: 0.02,
                epochs: 1,
                iterations_per_epoch: 3,
                batch_size: 2,
                seed: 5,
                ..SearchConfig::default()
            };
            dt_meta_nas_search(&net, &source, &config).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.genotype, b.genotype);
        assert_eq!(a.records, b.records);
    }

    // ── a task with a known best op ──

    /// One mixed edge over [none, max-pool, skip] fitting the identity map:
    /// only skip reaches zero loss, so the search must commit to it over the
    /// pool even when the pool starts out favoured.
    struct OneEdgeToy {
        mix: MixedOp<f64>,
        alpha: Alpha<f64>,
        space: SearchSpace,
    }

    fn one_edge_space() -> SearchSpace {
        SearchSpace {
            name: "toy-one-edge".into(),
            family: SpaceFamily::Fas,
            templates: vec![CellTemplate {
                name: "toy".into(),
                inputs: 1,
                intermediates: 1,
                edges: vec![EdgeSpec { from: 0, to: 1, stride: 1 }],
                ops: vec!["none".into(), "max_pool_3x3".into(), "skip_connect".into()],
                concat_output: false,
                decision_slots: 1,
            }],
            layout: vec![0],
            m_per_node: 1,
            head: HeadKind::DepthMap,
            pool: PoolKind::Max,
            attention: false,
            cd: false,
        }
    }

    impl OneEdgeToy {
        fn new(seed: u64) -> Self {
            let space = one_edge_space();
            let mut rng = substream(seed, "schemes/one-edge");
            let mix =
                MixedOp::new(&space.templates[0].ops, 2, 1, 1, "toy", &mut rng).unwrap();
            let alpha = Alpha::new(&space);
            // random starting preference, sometimes favouring the wrong op
            let logits: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            alpha.ops[0][0].set_value(Tensor::from_vec(&[3], logits).unwrap());
            OneEdgeToy { mix, alpha, space }
        }
    }

    impl BilevelModel<f64> for OneEdgeToy {
        type Batch = Tensor<f64>;

        fn weight_params(&self) -> Vec<Param<f64>> {
            self.mix.params()
        }

        fn arch_params(&self) -> Vec<Param<f64>> {
            self.alpha.params()
        }

        fn loss(&self, x: &Tensor<f64>) -> Result<crate::Var<f64>> {
            let tape = Tape::new();
            let input = tape.constant(x.clone());
            let beta = tape.param(&self.alpha.ops[0][0]).softmax_last();
            let y = self.mix.forward(&input, &beta)?;
            let d = y.sub(&input)?;
            Ok(d.mul(&d)?.mean_all())
        }
    }

    impl SearchModel<f64> for OneEdgeToy {
        fn discretize(&self, meta: GenotypeMeta) -> Genotype {
            crate::nas::discretize::discretize(&self.alpha, &self.space, meta)
        }

        fn beta_peaks(&self) -> Vec<f64> {
            Vec::new()
        }
    }

    struct RandomTensorSource {
        seed: u64,
    }

    impl TaskSource<Tensor<f64>> for RandomTensorSource {
        fn n_tasks(&self) -> usize {
            2
        }

        fn task_batch(&self, _task: usize, rng: &mut dyn RngCore) -> Result<Tensor<f64>> {
            let mut r = substream(self.seed, &format!("toy/{}", rng.next_u64()));
            Ok(Tensor::rand_uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut r))
        }

        fn support_batch(&self, rng: &mut dyn RngCore) -> Result<Tensor<f64>> {
            self.task_batch(0, rng)
        }

        fn query_batch(&self, rng: &mut dyn RngCore) -> Result<Tensor<f64>> {
            self.task_batch(1, rng)
        }
    }

    #[test]
    fn search_commits_to_the_strictly_better_op_on_most_seeds() {
        let mut wins = 0;
        for seed in 0..5 {
            let toy = OneEdgeToy::new(seed);
            let config = SearchConfig {
                gamma1: 0.1,
                gamma2: 0.5,
                epochs: 1,
                iterations_per_epoch: 40,
                seed,
                ..SearchConfig::default()
            };
            let out = nas_search(&toy, &RandomTensorSource { seed }, &config).unwrap();
            let op = &out.genotype.cells[0].edges[0].op;
            if op == "skip_connect" {
                wins += 1;
            }
        }
        assert!(wins >= 4, "only {wins}/5 seeds picked the identity-capable op");
    }

    // ── synthetic-data batch source ──

    fn demo_samples(side: usize, per_domain: usize, seed: u64) -> Vec<SyntheticSample<f64>> {
        let spec = TaskSpec {
            domains: crate::synthetic::default_domains().into_iter().take(2).collect(),
            per_class_per_domain: per_domain,
            frames_per_clip: 3,
            resolution: side,
            seed,
            ..TaskSpec::default()
        };
        crate::synthetic::gen_dataset::<f64>(&spec).unwrap().samples
    }

    fn demo_source(side: usize, per_domain: usize, seed: u64) -> TaskBatches<f64> {
        TaskBatches::new(
            &demo_samples(side, per_domain, seed),
            TaskSplit::ByDomain,
            2,
            InputMode::Static,
            3,
            RankPoolSolver::Approximate,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn task_batches_partition_by_domain_and_split_evenly() {
        let samples = demo_samples(16, 6, 40);
        let src = TaskBatches::new(
            &samples,
            TaskSplit::ByDomain,
            2,
            InputMode::Static,
            3,
            RankPoolSolver::Approximate,
            40,
        )
        .unwrap();
        assert_eq!(src.n_tasks(), 2);
        let total: usize = src.task_sizes().iter().sum();
        assert_eq!(total, samples.len());
        assert_eq!(src.support_half.len() + src.query_half.len(), samples.len());
        assert!((src.support_half.len() as i64 - src.query_half.len() as i64).abs() <= 1);
        let mut rng = substream(1, "schemes/test-draw");
        let b = src.task_batch(1, &mut rng).unwrap();
        assert_eq!(b.inputs.shape(), &[2, 3, 16, 16]);
        assert_eq!(b.labels.len(), 2);
        assert_eq!(b.depth.as_ref().unwrap().shape(), &[2, 1, 2, 2]);
        assert!(src.task_batch(7, &mut rng).is_err());
    }

    #[test]
    fn type_split_shares_live_samples_and_separates_attacks() {
        let samples = demo_samples(16, 8, 41);
        let src = TaskBatches::new(
            &samples,
            TaskSplit::ByType,
            2,
            InputMode::Static,
            3,
            RankPoolSolver::Approximate,
            41,
        )
        .unwrap();
        let lives = samples.iter().filter(|s| s.is_live).count();
        assert!(src.n_tasks() >= 2);
        for (t, name) in src.task_names().iter().enumerate() {
            let pool = &src.tasks[t];
            assert_eq!(pool.iter().filter(|s| s.is_live).count(), lives);
            assert!(pool
                .iter()
                .filter(|s| !s.is_live)
                .all(|s| s.attack.unwrap().as_str() == name));
        }
    }

    #[test]
    fn task_blind_and_task_aware_coincide_when_every_batch_is_identical() {
        // with a constant source the task structure carries no information,
        // so both schemes perform the same step sequence
        let c = Tensor::from_vec(&[2], vec![0.4, -0.7]).unwrap();
        let blind = LinearToy::new();
        let aware = LinearToy::new();
        let config = quick_config(2, 4);
        nas_search(&blind, &ConstSource { n: 2, c: c.clone() }, &config).unwrap();
        dt_nas_search(&aware, &ConstSource { n: 2, c }, &config).unwrap();
        assert_eq!(blind.w.value().data(), aware.w.value().data());
        assert_eq!(blind.a.value().data(), aware.a.value().data());
    }

    #[test]
    fn invalid_configs_and_task_counts_are_rejected() {
        let toy = QuadraticToy::new(0.0, 0.0, vec![0.0]);
        let bad = SearchConfig { gamma1: f64::NAN, ..SearchConfig::default() };
        assert!(nas_search(&toy, &IndexSource { n: 2 }, &bad).is_err());
        let bad = SearchConfig { gamma2: -0.1, ..SearchConfig::default() };
        assert!(nas_search(&toy, &IndexSource { n: 2 }, &bad).is_err());
        let bad = SearchConfig { epochs: 0, ..SearchConfig::default() };
        assert!(nas_search(&toy, &IndexSource { n: 2 }, &bad).is_err());
        let bad = SearchConfig { batch_size: 0, ..SearchConfig::default() };
        assert!(nas_search(&toy, &IndexSource { n: 2 }, &bad).is_err());
        // task-aware schemes need something to hold out
        let ok = SearchConfig::default();
        assert!(dt_nas_search(&toy, &IndexSource { n: 1 }, &ok).is_err());
        assert!(dt_meta_nas_search(&toy, &IndexSource { n: 1 }, &ok).is_err());
    }

    #[test]
    fn adaptive_steps_move_both_parameter_sets() {
        let toy = QuadraticToy::new(2.0, 1.5, vec![0.0, 0.0]);
        let config = SearchConfig {
            epochs: 1,
            iterations_per_epoch: 10,
            ..SearchConfig::production()
        };
        assert!(matches!(config.step_rule, StepRule::Adam { .. }));
        nas_search(&toy, &IndexSource { n: 2 }, &config).unwrap();
        let w = toy.w.value().item().unwrap();
        let a = toy.a.value().item().unwrap();
        assert!(w < 2.0 && w.is_finite());
        assert!(a < 1.5 && a.is_finite());
    }

    #[test]
    fn unrolled_gradient_wiring_still_finds_the_better_op() {
        let toy = OneEdgeToy::new(11);
        let config = SearchConfig {
            gamma1: 0.1,
            gamma2: 0.5,
            epochs: 1,
            iterations_per_epoch: 40,
            unrolled: true,
            seed: 11,
            ..SearchConfig::default()
        };
        let out = nas_search(&toy, &RandomTensorSource { seed: 11 }, &config).unwrap();
        assert_eq!(out.genotype.cells[0].edges[0].op, "skip_connect");
    }

    #[test]
    fn dt_meta_runs_end_to_end_on_a_real_supernet() {
        let space = fas_space(false, PoolKind::Max, false);
        let net = Supernet::<f64>::new(
            &space,
            SupernetConfig { channels: 2, kpc: 2, input_size: 16, seed: 77 },
        )
        .unwrap();
        let source = demo_source(16, 4, 42);
        let config = SearchConfig {
            gamma1: 1e-3,
            gamma1_tilde: 1e-3,
            gamma2: 0.01,
            epochs: 1,
            iterations_per_epoch: 2,
            batch_size: 2,
            seed: 6,
            ..SearchConfig::default()
        };
        let out = dt_meta_nas_search(&net, &source, &config).unwrap();
        out.genotype.validate(&space).unwrap();
        assert_eq!(out.records.len(), 2);
        assert!(out
            .records
            .iter()
            .all(|r| r.support_losses.iter().all(|l| l.is_finite())));
        assert!(out.records.iter().all(|r| !r.beta_peaks.is_empty()));
    }
}
