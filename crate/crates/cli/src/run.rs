//! The seven commands. Every command resolves its knobs in the same order:
//! explicit flag, then run-config file, then the documented default.

use std::fs;
use std::path::PathBuf;

use clap::Args;

use cdnas_core::cdn::{CdnConfig, CdnNet, CdnVariant};
use cdnas_core::cdops::{DEFAULT_LAMBDA, DEFAULT_THETA};
use cdnas_core::dynimg::{fuse_static_dynamic, rank_pool, FrameSequence, RankPoolSolver};
use cdnas_core::error::{Error, Result};
use cdnas_core::harness::{
    self, compare_to_random, evaluate_net, param_state, restore_params, CompareConfig,
    InputConfig, ScoringNet, TrainConfig,
};
use cdnas_core::checkpoint::{load_checkpoint, save_checkpoint};
use cdnas_core::nas::materialize::{DiscreteNet, NetConfig};
use cdnas_core::nas::supernet::{Supernet, SupernetConfig};
use cdnas_core::nas::Genotype;
use cdnas_core::schemes::{
    dt_meta_nas_search, dt_nas_search, nas_search, SearchConfig, SearchOutcome, StepRule,
    TaskBatches, TaskSource, TaskSplit,
};
use cdnas_core::spaces::{baseline_space, fas_space, HeadKind, PoolKind, SearchSpace};
use cdnas_core::synthetic::{
    default_domains, gen_dataset, AttackType, InputMode, SplitMode, TaskSpec,
};
use cdnas_core::tensor::io::save_tensor;

use crate::store::{self, RunConfig};

// ─── shared resolution helpers ───

fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

fn required_out(flag: &Option<PathBuf>, file: &Option<PathBuf>) -> Result<PathBuf> {
    pick(flag, file).ok_or_else(|| Error::config("--out is required (flag or config file)"))
}

/// `intra`, `loo:<domain>`, or `lot:<attack>`.
fn parse_split(s: &str) -> Result<SplitMode> {
    if s == "intra" {
        return Ok(SplitMode::IntraDomain);
    }
    if let Some(domain) = s.strip_prefix("loo:") {
        return Ok(SplitMode::LeaveOneDomainOut(domain.to_string()));
    }
    if let Some(attack) = s.strip_prefix("lot:") {
        return Ok(SplitMode::LeaveOneTypeOut(AttackType::parse(attack)?));
    }
    Err(Error::config(format!(
        "unknown split {s:?} (expected intra | loo:<domain> | lot:<attack>)"
    )))
}

/// Space selection shared by `search`, `retrain`, and `compare`.
#[derive(Debug, Args)]
pub struct SpaceArgs {
    /// Search space family: baseline | fas [default: fas]
    #[arg(long)]
    pub space: Option<String>,
    /// Use the central-difference op catalog
    #[arg(long)]
    pub cd: bool,
    /// FAS downsampling pool: max | cdp [default: max]
    #[arg(long)]
    pub pool: Option<String>,
    /// Gate FAS pool outputs with spatial attention
    #[arg(long)]
    pub attention: bool,
    /// Baseline loss head: score | binary [default: score]
    #[arg(long)]
    pub head: Option<String>,
}

impl SpaceArgs {
    fn build(&self, file: &RunConfig) -> Result<SearchSpace> {
        let family = pick(&self.space, &file.space).unwrap_or_else(|| "fas".into());
        let cd = self.cd;
        match family.as_str() {
            "fas" => {
                let pool = match pick(&self.pool, &file.pool).as_deref().unwrap_or("max") {
                    "max" => PoolKind::Max,
                    "cdp" => PoolKind::Cdp,
                    other => {
                        return Err(Error::config(format!(
                            "unknown pool {other:?} (expected max | cdp)"
                        )))
                    }
                };
                Ok(fas_space(cd, pool, self.attention))
            }
            "baseline" => {
                let head = match pick(&self.head, &file.head).as_deref().unwrap_or("score") {
                    "score" => HeadKind::Score,
                    "binary" => HeadKind::BinaryMap,
                    other => {
                        return Err(Error::config(format!(
                            "unknown head {other:?} (expected score | binary)"
                        )))
                    }
                };
                baseline_space(cd, head)
            }
            other => {
                Err(Error::config(format!("unknown space {other:?} (expected baseline | fas)")))
            }
        }
    }
}

/// Input-pipeline and fitting knobs shared by `train`, `retrain`,
/// `compare`, and (input side only) `search`.
#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input mode: static | dynamic | static-dynamic [default: static]
    #[arg(long)]
    pub input: Option<String>,
    /// Rank-pooling window for the dynamic modes [default: 7]
    #[arg(long)]
    pub window: Option<usize>,
    /// Rank-pooling solver: exact | approximate [default: approximate]
    #[arg(long)]
    pub solver: Option<String>,
    /// Samples per batch [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Fitting epochs [default: 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Base learning rate; halves every --halve-every epochs [default: 1e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Halving period in epochs [default: 500]
    #[arg(long)]
    pub halve_every: Option<usize>,
    /// Weight decay [default: 5e-5]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl FitArgs {
    fn input_config(&self, file: &RunConfig) -> Result<InputConfig> {
        let mode = InputMode::parse(
            pick(&self.input, &file.input).as_deref().unwrap_or("static"),
        )?;
        let solver = RankPoolSolver::parse(
            pick(&self.solver, &file.solver).as_deref().unwrap_or("approximate"),
        )?;
        Ok(InputConfig {
            mode,
            window: pick(&self.window, &file.window).unwrap_or(7),
            solver,
            batch_size: pick(&self.batch_size, &file.batch_size).unwrap_or(8),
        })
    }

    fn train_config(&self, file: &RunConfig) -> Result<TrainConfig> {
        Ok(TrainConfig {
            input: self.input_config(file)?,
            lr: pick(&self.lr, &file.lr).unwrap_or(1e-4),
            weight_decay: pick(&self.weight_decay, &file.weight_decay).unwrap_or(5e-5),
            halve_every: pick(&self.halve_every, &None).unwrap_or(500),
            epochs: pick(&self.epochs, &file.epochs).unwrap_or(20),
            seed: pick(&self.seed, &file.seed).unwrap_or(0),
        })
    }
}

fn print_report(report: &cdnas_core::metrics::MetricReport) {
    print!("{report}");
}

// ─── gen ───

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output dataset directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of capture domains, drawn from the built-in list [default: 3]
    #[arg(long)]
    pub domains: Option<usize>,
    /// Clips per class per domain [default: 8]
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Frames per clip [default: 8]
    #[arg(long)]
    pub frames: Option<usize>,
    /// Square frame side, multiple of 8 [default: 64]
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run-config file backing omitted flags
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let file = RunConfig::load(a.config.as_deref())?;
    let out = required_out(&a.out, &file.out)?;
    let all = default_domains();
    let n = a.domains.unwrap_or(3);
    if n == 0 || n > all.len() {
        return Err(Error::config(format!(
            "--domains must be 1..={}, got {n}",
            all.len()
        )));
    }
    let spec = TaskSpec {
        resolution: a.size.unwrap_or(64),
        frames_per_clip: a.frames.unwrap_or(8),
        per_class_per_domain: a.per_class.unwrap_or(8),
        domains: all.into_iter().take(n).collect(),
        seed: pick(&a.seed, &file.seed).unwrap_or(0),
        ..TaskSpec::default()
    };
    let data = gen_dataset::<f32>(&spec)?;
    store::save_dataset(&out, &data)?;
    println!(
        "wrote {} clips ({} domains, {} frames each) to {}",
        data.samples.len(),
        spec.domains.len(),
        spec.frames_per_clip,
        out.display()
    );
    Ok(())
}

// ─── dynimg ───

#[derive(Debug, Args)]
pub struct DynimgArgs {
    /// Directory of 8-bit RGB frames in lexicographic temporal order
    #[arg(long)]
    pub frames: PathBuf,
    /// Window length; clamped to the clip length [default: 7]
    #[arg(long)]
    pub k: Option<usize>,
    /// exact | approximate [default: approximate]
    #[arg(long)]
    pub solver: Option<String>,
    /// Also write the fused static-dynamic image
    #[arg(long)]
    pub fuse: bool,
    /// Output directory [default: the frames directory]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn dynimg(a: &DynimgArgs) -> Result<()> {
    let file = RunConfig::load(a.config.as_deref())?;
    let paths = store::list_frames(&a.frames)?;
    let frames = paths.iter().map(store::read_rgb).collect::<Result<Vec<_>>>()?;
    let seq = FrameSequence::new(frames)?;
    let solver = RankPoolSolver::parse(
        pick(&a.solver, &file.solver).as_deref().unwrap_or("approximate"),
    )?;
    let k = pick(&a.k, &file.window).unwrap_or(7).min(seq.len()).max(2);
    let start = (seq.len() - k) / 2;
    let dynamic = rank_pool(&seq.window(start, k)?, solver)?;

    let out = a.out.clone().unwrap_or_else(|| a.frames.clone());
    fs::create_dir_all(&out)?;
    save_tensor(out.join("dynamic.cdnt"), &dynamic)?;
    store::write_rgb(out.join("dynamic.png"), &store::normalize_for_display(&dynamic))?;
    println!("dynamic image over {k} frames -> {}", out.join("dynamic.png").display());
    if a.fuse {
        let stat = seq.frames()[seq.len() / 2].clone();
        let fused = fuse_static_dynamic(&stat, &dynamic)?;
        save_tensor(out.join("fused.cdnt"), &fused)?;
        store::write_rgb(out.join("fused.png"), &fused)?;
        println!("fused image -> {}", out.join("fused.png").display());
    }
    Ok(())
}

// ─── train ───

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen`
    #[arg(long)]
    pub data: PathBuf,
    /// Network: depthnet | cdn_cdc | cdn_cdp [default: depthnet]
    #[arg(long)]
    pub variant: Option<String>,
    /// CDC blend weight [default: 0.7]
    #[arg(long)]
    pub theta: Option<f64>,
    /// CDP blend weight [default: 0.7]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Hidden-width multiplier; 1.0 is the full reference net [default: 0.25]
    #[arg(long)]
    pub width_scale: Option<f64>,
    /// intra | loo:<domain> | lot:<attack> [default: intra]
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Output directory for checkpoint, reports, and the training log
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let file = RunConfig::load(a.config.as_deref())?;
    let out = required_out(&a.out, &file.out)?;
    let data = store::load_dataset(&a.data)?;
    let split = parse_split(pick(&a.split, &file.split).as_deref().unwrap_or("intra"))?;
    let (train_s, test_s) = data.split(&split)?;

    let config = CdnConfig {
        variant: CdnVariant::parse(a.variant.as_deref().unwrap_or("depthnet"))?,
        theta: pick(&a.theta, &file.theta).unwrap_or(DEFAULT_THETA),
        lambda: pick(&a.lambda, &file.lambda).unwrap_or(DEFAULT_LAMBDA),
        input_size: data.spec.resolution,
        width_scale: pick(&a.width_scale, &file.width_scale).unwrap_or(0.25),
        seed: pick(&a.fit.seed, &file.seed).unwrap_or(0),
    };
    let tc = a.fit.train_config(&file)?;
    let net = CdnNet::<f32>::build(config.clone())?;
    println!(
        "training {} ({} parameters) on {} samples",
        config.variant.as_str(),
        net.param_count(),
        train_s.len()
    );
    let log = harness::train(&net, &train_s, &tc)?;
    let report = evaluate_net(&net, &test_s, &tc.input)?;

    let meta = serde_json::json!({ "kind": "cdn", "cdn": config, "input": tc.input });
    fs::create_dir_all(&out)?;
    save_checkpoint(out.join("checkpoint.cdna"), &meta, &param_state(&ScoringNet::params(&net)))?;
    store::write_text(&out.join("train_log.jsonl"), &log.log_jsonl())?;
    store::write_report(&out, &report)?;
    print_report(&report);
    println!("checkpoint + reports -> {}", out.display());
    Ok(())
}

// ─── search ───

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Dataset directory written by `gen`
    #[arg(long)]
    pub data: PathBuf,
    /// Scheme: nas | dt-nas | dt-meta [default: nas]
    #[arg(long)]
    pub scheme: Option<String>,
    #[command(flatten)]
    pub space: SpaceArgs,
    /// Task partition for the task-aware schemes: domain | type [default: domain]
    #[arg(long)]
    pub tasks: Option<String>,
    /// Supernet base channels [default: 8]
    #[arg(long)]
    pub channels: Option<usize>,
    /// Partial-channel fraction denominator; 1 mixes every channel [default: 2]
    #[arg(long)]
    pub kpc: Option<usize>,
    /// Search epochs [default: 2]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Iterations per epoch [default: 8]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Keep architecture logits frozen this many leading epochs [default: 0]
    #[arg(long)]
    pub freeze_epochs: Option<usize>,
    /// Inner weight steps per support batch [default: 1]
    #[arg(long)]
    pub inner_steps: Option<usize>,
    /// Inner/meta weight rate [default: 1e-4]
    #[arg(long)]
    pub gamma1: Option<f64>,
    /// Meta outer weight rate [default: 1e-4]
    #[arg(long)]
    pub gamma1_tilde: Option<f64>,
    /// Architecture rate [default: 6e-4]
    #[arg(long)]
    pub gamma2: Option<f64>,
    /// Plain gradient steps instead of adaptive ones (the meta scheme is
    /// always plain)
    #[arg(long)]
    pub plain: bool,
    /// Unrolled architecture gradient instead of the first-order shortcut
    #[arg(long)]
    pub unrolled: bool,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Output directory for the genotype and the search log
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn search(a: &SearchArgs) -> Result<()> {
    let file = RunConfig::load(a.config.as_deref())?;
    let out = required_out(&a.out, &file.out)?;
    let data = store::load_dataset(&a.data)?;
    let space = a.space.build(&file)?;
    let input = a.fit.input_config(&file)?;
    let seed = pick(&a.fit.seed, &file.seed).unwrap_or(0);

    let sc = SearchConfig {
        gamma1: pick(&a.gamma1, &file.gamma1).unwrap_or(1e-4),
        gamma1_tilde: pick(&a.gamma1_tilde, &file.gamma1_tilde).unwrap_or(1e-4),
        gamma2: pick(&a.gamma2, &file.gamma2).unwrap_or(6e-4),
        inner_steps: a.inner_steps.unwrap_or(1),
        batch_size: input.batch_size,
        epochs: pick(&a.epochs, &file.epochs).unwrap_or(2),
        iterations_per_epoch: pick(&a.iters, &file.iters).unwrap_or(8),
        freeze_epochs: pick(&a.freeze_epochs, &file.freeze_epochs).unwrap_or(0),
        step_rule: if a.plain {
            StepRule::Plain
        } else {
            SearchConfig::production().step_rule
        },
        unrolled: a.unrolled,
        seed,
    };
    let net = Supernet::<f32>::new(
        &space,
        SupernetConfig {
            channels: pick(&a.channels, &file.channels).unwrap_or(8),
            kpc: pick(&a.kpc, &file.kpc).unwrap_or(2),
            input_size: data.spec.resolution,
            seed,
        },
    )?;
    let task_split = match pick(&a.tasks, &file.tasks).as_deref().unwrap_or("domain") {
        "domain" => TaskSplit::ByDomain,
        "type" => TaskSplit::ByType,
        other => {
            return Err(Error::config(format!(
                "unknown task partition {other:?} (expected domain | type)"
            )))
        }
    };
    let source = TaskBatches::new(
        &data.samples,
        task_split,
        input.batch_size,
        input.mode,
        input.window,
        input.solver,
        seed,
    )?;

    let scheme = pick(&a.scheme, &file.scheme).unwrap_or_else(|| "nas".into());
    println!("searching {} with scheme {scheme} over {} tasks", space.name, source.n_tasks());
    let outcome: SearchOutcome = match scheme.as_str() {
        "nas" => nas_search(&net, &source, &sc)?,
        "dt-nas" | "dt_nas" => dt_nas_search(&net, &source, &sc)?,
        "dt-meta" | "dt_meta" => dt_meta_nas_search(&net, &source, &sc)?,
        other => {
            return Err(Error::config(format!(
                "unknown scheme {other:?} (expected nas | dt-nas | dt-meta)"
            )))
        }
    };
    store::write_genotype(&out.join("genotype.json"), &outcome.genotype)?;
    store::write_text(&out.join("search_log.jsonl"), &outcome.log_jsonl())?;
    if let Some(last) = outcome.records.last() {
        println!("final mixing peaks per template: {:?}", last.beta_peaks);
    }
    println!("genotype + search log -> {}", out.display());
    Ok(())
}

// ─── retrain ───

#[derive(Debug, Args)]
pub struct RetrainArgs {
    /// Dataset directory written by `gen`
    #[arg(long)]
    pub data: PathBuf,
    /// Genotype file written by `search`
    #[arg(long)]
    pub genotype: PathBuf,
    #[command(flatten)]
    pub space: SpaceArgs,
    /// Base channels; the convention is double the search width [default: 16]
    #[arg(long)]
    pub channels: Option<usize>,
    /// intra | loo:<domain> | lot:<attack> [default: intra]
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Output directory for checkpoint, reports, and the training log
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn retrain(a: &RetrainArgs) -> Result<()> {
    let file = RunConfig::load(a.config.as_deref())?;
    let out = required_out(&a.out, &file.out)?;
    let data = store::load_dataset(&a.data)?;
    let split = parse_split(pick(&a.split, &file.split).as_deref().unwrap_or("intra"))?;
    let (train_s, test_s) = data.split(&split)?;
    let genotype = store::read_genotype(&a.genotype)?;
    let space = a.space.build(&file)?;
    let net_config = NetConfig {
        channels: pick(&a.channels, &file.channels).unwrap_or(16),
        input_size: data.spec.resolution,
        seed: pick(&a.fit.seed, &file.seed).unwrap_or(0),
    };
    let tc = a.fit.train_config(&file)?;
    let net = DiscreteNet::<f32>::new(&genotype, &space, net_config)?;
    println!("retraining discretized {} at {} channels", space.name, net_config.channels);
    let log = harness::train(&net, &train_s, &tc)?;
    let report = evaluate_net(&net, &test_s, &tc.input)?;

    let meta = serde_json::json!({
        "kind": "discrete",
        "space": space,
        "genotype": genotype,
        "net": net_config,
        "input": tc.input,
    });
    fs::create_dir_all(&out)?;
    save_checkpoint(out.join("checkpoint.cdna"), &meta, &param_state(&ScoringNet::params(&net)))?;
    store::write_text(&out.join("train_log.jsonl"), &log.log_jsonl())?;
    store::write_report(&out, &report)?;
    print_report(&report);
    println!("checkpoint + reports -> {}", out.display());
    Ok(())
}

// ─── eval ───

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory written by `gen`
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint written by `train` or `retrain`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// intra | loo:<domain> | lot:<attack> [default: intra]
    #[arg(long)]
    pub split: Option<String>,
    /// Evaluate the train or the test partition [default: test]
    #[arg(long)]
    pub part: Option<String>,
    /// Optional directory for report files; the report always prints
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let file = RunConfig::load(a.config.as_deref())?;
    let data = store::load_dataset(&a.data)?;
    let split = parse_split(pick(&a.split, &file.split).as_deref().unwrap_or("intra"))?;
    let (train_s, test_s) = data.split(&split)?;
    let samples = match a.part.as_deref().unwrap_or("test") {
        "test" => &test_s,
        "train" => &train_s,
        other => {
            return Err(Error::config(format!(
                "unknown partition {other:?} (expected train | test)"
            )))
        }
    };
    if !a.checkpoint.is_file() {
        return Err(Error::config(format!(
            "checkpoint {} does not exist",
            a.checkpoint.display()
        )));
    }
    let ck = load_checkpoint::<f32>(&a.checkpoint)?;
    let input: InputConfig = serde_json::from_value(
        ck.config
            .get("input")
            .cloned()
            .ok_or_else(|| Error::config("checkpoint carries no input config"))?,
    )?;
    let kind = ck.config.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    let report = match kind {
        "cdn" => {
            let config: CdnConfig = serde_json::from_value(
                ck.config
                    .get("cdn")
                    .cloned()
                    .ok_or_else(|| Error::config("checkpoint carries no network config"))?,
            )?;
            let net = CdnNet::<f32>::build(config)?;
            restore_params(&ScoringNet::params(&net), &ck.state)?;
            evaluate_net(&net, samples, &input)?
        }
        "discrete" => {
            let space: SearchSpace = serde_json::from_value(
                ck.config
                    .get("space")
                    .cloned()
                    .ok_or_else(|| Error::config("checkpoint carries no space"))?,
            )?;
            let genotype: Genotype = serde_json::from_value(
                ck.config
                    .get("genotype")
                    .cloned()
                    .ok_or_else(|| Error::config("checkpoint carries no genotype"))?,
            )?;
            let net_config: NetConfig = serde_json::from_value(
                ck.config
                    .get("net")
                    .cloned()
                    .ok_or_else(|| Error::config("checkpoint carries no net config"))?,
            )?;
            let net = DiscreteNet::<f32>::new(&genotype, &space, net_config)?;
            restore_params(&ScoringNet::params(&net), &ck.state)?;
            evaluate_net(&net, samples, &input)?
        }
        other => {
            return Err(Error::config(format!("unknown checkpoint kind {other:?}")));
        }
    };
    print_report(&report);
    if let Some(out) = pick(&a.out, &file.out) {
        store::write_report(&out, &report)?;
        println!("reports -> {}", out.display());
    }
    Ok(())
}

// ─── compare ───

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Dataset directory written by `gen`
    #[arg(long)]
    pub data: PathBuf,
    /// Searched genotype to defend
    #[arg(long)]
    pub genotype: PathBuf,
    #[command(flatten)]
    pub space: SpaceArgs,
    /// Random competitor count [default: 3]
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Reuse the searched genotype for every competitor (improvement is
    /// then exactly zero) — a plumbing self-test
    #[arg(long = "inject-random")]
    pub inject_random: bool,
    /// Base channels for every retrained candidate [default: 16]
    #[arg(long)]
    pub channels: Option<usize>,
    /// intra | loo:<domain> | lot:<attack> [default: intra]
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Optional output directory for compare.json
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let file = RunConfig::load(a.config.as_deref())?;
    let data = store::load_dataset(&a.data)?;
    let split = parse_split(pick(&a.split, &file.split).as_deref().unwrap_or("intra"))?;
    let (train_s, test_s) = data.split(&split)?;
    let genotype = store::read_genotype(&a.genotype)?;
    let space = a.space.build(&file)?;
    let seed = pick(&a.fit.seed, &file.seed).unwrap_or(0);
    let net_config = NetConfig {
        channels: pick(&a.channels, &file.channels).unwrap_or(16),
        input_size: data.spec.resolution,
        seed,
    };
    let tc = a.fit.train_config(&file)?;
    let cc = CompareConfig {
        rounds: pick(&a.rounds, &file.rounds).unwrap_or(3),
        inject_searched: a.inject_random,
        seed,
    };
    println!("comparing searched genotype against {} random samples", cc.rounds);
    let report =
        compare_to_random::<f32>(&space, &genotype, &train_s, &test_s, net_config, &tc, &cc)?;
    println!("search ACER        {:.4}", report.search_acer);
    for (k, acer) in report.random_acers.iter().enumerate() {
        println!("random[{k}] ACER    {acer:.4}");
    }
    println!("mean random ACER   {:.4}", report.mean_random_acer);
    println!("relative improvement {:.2} %", report.ri);
    if let Some(out) = pick(&a.out, &file.out) {
        fs::create_dir_all(&out)?;
        fs::write(out.join("compare.json"), serde_json::to_string_pretty(&report)?)?;
        println!("compare.json -> {}", out.display());
    }
    Ok(())
}
