//! Synthetic live/spoof video generator with controllable capture domains.
//!
//! Live clips are smooth periodic textures drifting rigidly, paired with a
//! radial depth bump; spoof clips overlay a presentation artifact (screen
//! lattice, static noise field, or blur-flattening) on the same kind of base
//! texture and carry an all-zero depth target. Each domain applies its own
//! photometric transform (gamma, brightness, tint, sensor noise). Everything
//! is derived from one seed, so datasets are bitwise reproducible.

use crate::dynimg::{fuse_static_dynamic, rank_pool, FrameSequence, RankPoolSolver};
use crate::error::{Error, Result};
use crate::metrics::{SampleLabel, ScoredSet};
use crate::rng;
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackType {
    Lattice,
    Noise,
    BlurFlat,
}

impl AttackType {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lattice" => Ok(AttackType::Lattice),
            "noise" => Ok(AttackType::Noise),
            "blur_flat" | "blur-flat" => Ok(AttackType::BlurFlat),
            other => Err(Error::config(format!(
                "unknown attack type {other:?} (expected lattice | noise | blur_flat)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackType::Lattice => "lattice",
            AttackType::Noise => "noise",
            AttackType::BlurFlat => "blur_flat",
        }
    }
}

/// One capture condition: a photometric transform applied to every clip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub gamma: f64,
    pub brightness: f64,
    pub tint: [f64; 3],
    pub noise_sigma: f64,
}

impl DomainSpec {
    pub fn neutral(name: &str) -> Self {
        DomainSpec {
            name: name.to_string(),
            gamma: 1.0,
            brightness: 0.0,
            tint: [1.0, 1.0, 1.0],
            noise_sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Square frame side; must be a positive multiple of 8.
    pub resolution: usize,
    pub frames_per_clip: usize,
    pub per_class_per_domain: usize,
    pub domains: Vec<DomainSpec>,
    pub attack_types: Vec<AttackType>,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            resolution: 64,
            frames_per_clip: 8,
            per_class_per_domain: 8,
            domains: default_domains(),
            attack_types: vec![AttackType::Lattice, AttackType::Noise, AttackType::BlurFlat],
            seed: 0,
        }
    }
}

/// Four capture conditions spanning gamma, brightness, tint and sensor noise.
pub fn default_domains() -> Vec<DomainSpec> {
    vec![
        DomainSpec::neutral("studio"),
        DomainSpec {
            name: "warm_bright".into(),
            gamma: 0.55,
            brightness: 0.10,
            tint: [1.15, 1.00, 0.82],
            noise_sigma: 0.01,
        },
        DomainSpec {
            name: "cool_dim".into(),
            gamma: 1.8,
            brightness: -0.08,
            tint: [0.82, 0.96, 1.15],
            noise_sigma: 0.02,
        },
        DomainSpec {
            name: "grainy".into(),
            gamma: 1.0,
            brightness: 0.0,
            tint: [1.0, 1.0, 1.0],
            noise_sigma: 0.10,
        },
    ]
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % 8 != 0 {
            return Err(Error::config(format!(
                "resolution {} must be a positive multiple of 8",
                self.resolution
            )));
        }
        if self.frames_per_clip < 2 {
            return Err(Error::config("clips need at least 2 frames"));
        }
        if self.per_class_per_domain == 0 {
            return Err(Error::config("need at least one sample per class per domain"));
        }
        if self.domains.is_empty() {
            return Err(Error::config("need at least one domain"));
        }
        if self.attack_types.is_empty() {
            return Err(Error::config("need at least one attack type"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample<T: Scalar> {
    pub id: String,
    pub clip: FrameSequence<T>,
    pub is_live: bool,
    /// `(1, S/8, S/8)`; all zeros for spoof samples.
    pub depth: Tensor<T>,
    pub domain: String,
    pub attack: Option<AttackType>,
}

impl<T: Scalar> SyntheticSample<T> {
    pub fn label(&self) -> SampleLabel {
        if self.is_live {
            SampleLabel::Live
        } else {
            SampleLabel::Attack
        }
    }

    pub fn tag(&self) -> &'static str {
        self.attack.map(|a| a.as_str()).unwrap_or("-")
    }
}

#[derive(Debug, Clone)]
pub struct DomainDataset<T: Scalar> {
    pub spec: TaskSpec,
    pub samples: Vec<SyntheticSample<T>>,
}

// ─── texture synthesis ───

/// A band-limited periodic texture: integer-frequency sinusoids evaluated
/// analytically, so rigid translation never needs resampling.
struct Texture {
    // per term: amplitude, fx, fy, phase
    terms: Vec<(f64, f64, f64, f64)>,
    channel_scale: [f64; 3],
}

impl Texture {
    fn sample(rng: &mut impl Rng) -> Texture {
        let n = 3;
        let mut terms = Vec::with_capacity(n);
        let mut total = 0.0;
        for _ in 0..n {
            let a: f64 = rng.gen_range(0.5..1.0);
            let fx = rng.gen_range(-3i32..=3) as f64;
            let mut fy = rng.gen_range(-3i32..=3) as f64;
            if fx == 0.0 && fy == 0.0 {
                fy = 1.0;
            }
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            total += a;
            terms.push((a, fx, fy, phase));
        }
        // amplitudes normalized so the pattern stays within ±0.35 of mid-grey
        for t in &mut terms {
            t.0 *= 0.35 / total;
        }
        let channel_scale = [
            1.0,
            rng.gen_range(0.85..1.0),
            rng.gen_range(0.85..1.0),
        ];
        Texture { terms, channel_scale }
    }

    fn luminance(&self, x: f64, y: f64, side: f64) -> f64 {
        let mut v = 0.0;
        for &(a, fx, fy, phase) in &self.terms {
            v += a * (std::f64::consts::TAU * (fx * x + fy * y) / side + phase).sin();
        }
        v
    }

    /// Frame at rigid offset (dx, dy), channel-major `3·S·S`, values near
    /// mid-grey before artifacts and photometric transforms.
    fn frame(&self, side: usize, dx: f64, dy: f64) -> Vec<f64> {
        let s = side as f64;
        let mut out = vec![0.0; 3 * side * side];
        for yy in 0..side {
            for xx in 0..side {
                let v = self.luminance(xx as f64 + dx, yy as f64 + dy, s);
                let idx = yy * side + xx;
                for c in 0..3 {
                    out[c * side * side + idx] = 0.5 + self.channel_scale[c] * v;
                }
            }
        }
        out
    }
}

// ─── presentation artifacts ───

/// Physical realization of the attack artifacts for one capture setup: the
/// same three attack types appear in every domain, but the recaptured
/// hardware differs — grid pitch, noise strength and blur severity vary.
#[derive(Debug, Clone, Copy)]
pub struct ArtifactParams {
    pub lattice_pitch: usize,
    pub lattice_amp: f64,
    pub noise_hi: f64,
    pub blur_passes: usize,
    pub blur_level: f64,
}

impl ArtifactParams {
    pub fn for_domain(domain_idx: usize) -> ArtifactParams {
        const TABLE: [ArtifactParams; 4] = [
            ArtifactParams { lattice_pitch: 4, lattice_amp: 0.12, noise_hi: 0.14, blur_passes: 2, blur_level: 0.60 },
            ArtifactParams { lattice_pitch: 5, lattice_amp: 0.10, noise_hi: 0.10, blur_passes: 1, blur_level: 0.55 },
            ArtifactParams { lattice_pitch: 7, lattice_amp: 0.09, noise_hi: 0.08, blur_passes: 1, blur_level: 0.54 },
            ArtifactParams { lattice_pitch: 6, lattice_amp: 0.10, noise_hi: 0.11, blur_passes: 3, blur_level: 0.56 },
        ];
        TABLE[domain_idx % TABLE.len()]
    }
}

/// Additive bright grid lines with a fixed pitch, as left by a re-captured
/// display. The grid is static in camera coordinates.
pub fn apply_lattice(frame: &mut [f64], side: usize, pitch: usize, amplitude: f64) {
    for yy in 0..side {
        for xx in 0..side {
            if xx % pitch == 0 || yy % pitch == 0 {
                let idx = yy * side + xx;
                for c in 0..3 {
                    frame[c * side * side + idx] += amplitude;
                }
            }
        }
    }
}

/// Additive static per-pixel noise field in [0, amplitude]; the same field
/// must be passed for every frame of one clip.
pub fn apply_noise_field(frame: &mut [f64], field: &[f64]) {
    for (v, n) in frame.iter_mut().zip(field) {
        *v += n;
    }
}

/// Box-blurs each channel and compresses contrast toward a slightly raised
/// level, mimicking a flat printed recapture.
pub fn apply_blur_flat(frame: &mut [f64], side: usize, passes: usize, level: f64) {
    for c in 0..3 {
        let ch = &mut frame[c * side * side..(c + 1) * side * side];
        for _ in 0..passes {
            box_blur3(ch, side);
        }
        for v in ch.iter_mut() {
            *v = level + 0.45 * (*v - level);
        }
    }
}

fn box_blur3(ch: &mut [f64], side: usize) {
    let src = ch.to_vec();
    for yy in 0..side {
        for xx in 0..side {
            let mut acc = 0.0;
            for ky in -1i64..=1 {
                for kx in -1i64..=1 {
                    let sy = (yy as i64 + ky).clamp(0, side as i64 - 1) as usize;
                    let sx = (xx as i64 + kx).clamp(0, side as i64 - 1) as usize;
                    acc += src[sy * side + sx];
                }
            }
            ch[yy * side + xx] = acc / 9.0;
        }
    }
}

/// Mean squared deviation of a `(3,S,S)` frame from its own 3×3 box blur — a
/// cheap high-frequency energy proxy.
pub fn high_frequency_energy<T: Scalar>(frame: &Tensor<T>) -> f64 {
    let shape = frame.shape();
    let side = shape[shape.len() - 1];
    let channels = frame.numel() / (side * side);
    let data: Vec<f64> = frame.data().iter().map(|v| v.to_f64()).collect();
    let mut total = 0.0;
    for c in 0..channels {
        let ch = &data[c * side * side..(c + 1) * side * side];
        let mut blurred = ch.to_vec();
        box_blur3(&mut blurred, side);
        for (a, b) in ch.iter().zip(&blurred) {
            total += (a - b) * (a - b);
        }
    }
    total / data.len() as f64
}

// ─── photometric domains ───

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn apply_domain(frame: &mut [f64], side: usize, d: &DomainSpec, rng: &mut impl Rng) {
    let px = side * side;
    for c in 0..3 {
        for v in &mut frame[c * px..(c + 1) * px] {
            let clamped = v.clamp(0.0, 1.0);
            let mut y = clamped.powf(d.gamma);
            y = (y + d.brightness) * d.tint[c];
            y += d.noise_sigma * gaussian(rng);
            *v = y.clamp(0.0, 1.0);
        }
    }
}

// ─── generation ───

fn depth_bump(side: usize, cx: f64, cy: f64) -> Vec<f64> {
    let grid = side / 8;
    let sigma = side as f64 / 4.0;
    let mut out = vec![0.0; grid * grid];
    for v in 0..grid {
        for u in 0..grid {
            let x = (u * 8 + 4) as f64;
            let y = (v * 8 + 4) as f64;
            let r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            out[v * grid + u] = (-r2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let lo = out.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        for v in &mut out {
            *v = (*v - lo) / (hi - lo);
        }
    }
    out
}

fn luminance_centroid(frame: &[f64], side: usize) -> (f64, f64) {
    let px = side * side;
    let lum = &frame[0..px];
    let lo = lum.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut wsum = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for yy in 0..side {
        for xx in 0..side {
            let w = lum[yy * side + xx] - lo + 1e-9;
            wsum += w;
            cx += w * xx as f64;
            cy += w * yy as f64;
        }
    }
    (cx / wsum, cy / wsum)
}

fn gen_sample<T: Scalar>(
    spec: &TaskSpec,
    domain: &DomainSpec,
    domain_idx: usize,
    attack: Option<AttackType>,
    idx: usize,
) -> Result<SyntheticSample<T>> {
    let art = ArtifactParams::for_domain(domain_idx);
    let class = attack.map(|a| a.as_str()).unwrap_or("live");
    let label = format!("sample/{}/{}/{}", domain.name, class, idx);
    let mut rng = rng::substream(spec.seed, &label);
    let side = spec.resolution;
    let texture = Texture::sample(&mut rng);
    let vx: f64 = rng.gen_range(-1.5..1.5);
    let vy: f64 = rng.gen_range(-1.5..1.5);

    // spoof-only randomness drawn up front so live/spoof share stream shape
    let noise_field: Vec<f64> = (0..3 * side * side)
        .map(|_| rng.gen_range(0.0..art.noise_hi))
        .collect();
    let jitter: Vec<(f64, f64)> = (0..spec.frames_per_clip)
        .map(|_| (rng.gen_range(-0.35..0.35), rng.gen_range(-0.35..0.35)))
        .collect();

    let mut frames = Vec::with_capacity(spec.frames_per_clip);
    let mut centroid = (side as f64 / 2.0, side as f64 / 2.0);
    for t in 0..spec.frames_per_clip {
        let tf = t as f64;
        let (mut dx, mut dy) = (vx * tf, vy * tf);
        if attack.is_some() {
            dx += jitter[t].0;
            dy += jitter[t].1;
        }
        let mut frame = texture.frame(side, dx, dy);
        if t == 0 {
            centroid = luminance_centroid(&frame, side);
        }
        match attack {
            Some(AttackType::Lattice) => {
                apply_lattice(&mut frame, side, art.lattice_pitch, art.lattice_amp)
            }
            Some(AttackType::Noise) => apply_noise_field(&mut frame, &noise_field),
            Some(AttackType::BlurFlat) => {
                apply_blur_flat(&mut frame, side, art.blur_passes, art.blur_level)
            }
            None => {}
        }
        apply_domain(&mut frame, side, domain, &mut rng);
        frames.push(Tensor::from_vec(
            &[3, side, side],
            frame.into_iter().map(T::from_f64).collect(),
        )?);
    }

    let grid = side / 8;
    let depth = if attack.is_none() {
        Tensor::from_vec(
            &[1, grid, grid],
            depth_bump(side, centroid.0, centroid.1)
                .into_iter()
                .map(T::from_f64)
                .collect(),
        )?
    } else {
        Tensor::zeros(&[1, grid, grid])
    };

    Ok(SyntheticSample {
        id: label,
        clip: FrameSequence::new(frames)?,
        is_live: attack.is_none(),
        depth,
        domain: domain.name.clone(),
        attack,
    })
}

/// Generates the full dataset: per domain, `per_class_per_domain` live clips
/// and the same number of spoof clips cycling through the attack types.
pub fn gen_dataset<T: Scalar>(spec: &TaskSpec) -> Result<DomainDataset<T>> {
    spec.validate()?;
    let mut samples = Vec::new();
    for (di, domain) in spec.domains.iter().enumerate() {
        for i in 0..spec.per_class_per_domain {
            samples.push(gen_sample(spec, domain, di, None, i)?);
        }
        for i in 0..spec.per_class_per_domain {
            let attack = spec.attack_types[i % spec.attack_types.len()];
            samples.push(gen_sample(spec, domain, di, Some(attack), i)?);
        }
    }
    Ok(DomainDataset { spec: spec.clone(), samples })
}

// ─── splits ───

#[derive(Debug, Clone, PartialEq)]
pub enum SplitMode {
    /// Alternating half split inside every (domain, class, type) group.
    IntraDomain,
    /// The named domain is entirely held out for testing.
    LeaveOneDomainOut(String),
    /// The named attack type is excluded from training; live samples are
    /// split by parity so both partitions keep both classes.
    LeaveOneTypeOut(AttackType),
}

impl<T: Scalar> DomainDataset<T> {
    pub fn split(&self, mode: &SplitMode) -> Result<(Vec<SyntheticSample<T>>, Vec<SyntheticSample<T>>)> {
        match mode {
            SplitMode::IntraDomain => {
                let mut train = Vec::new();
                let mut test = Vec::new();
                let mut counters: std::collections::BTreeMap<(String, &str), usize> =
                    std::collections::BTreeMap::new();
                for s in &self.samples {
                    let key = (s.domain.clone(), s.tag());
                    let c = counters.entry(key).or_insert(0);
                    if *c % 2 == 0 {
                        train.push(s.clone());
                    } else {
                        test.push(s.clone());
                    }
                    *c += 1;
                }
                Ok((train, test))
            }
            SplitMode::LeaveOneDomainOut(name) => {
                if !self.spec.domains.iter().any(|d| &d.name == name) {
                    return Err(Error::config(format!("dataset has no domain named {name:?}")));
                }
                let (test, train): (Vec<_>, Vec<_>) =
                    self.samples.iter().cloned().partition(|s| &s.domain == name);
                Ok((train, test))
            }
            SplitMode::LeaveOneTypeOut(attack) => {
                if !self.spec.attack_types.contains(attack) {
                    return Err(Error::config(format!(
                        "dataset has no attack type {:?}",
                        attack.as_str()
                    )));
                }
                let mut train = Vec::new();
                let mut test = Vec::new();
                let mut live_count = 0usize;
                for s in &self.samples {
                    match s.attack {
                        Some(a) if a == *attack => test.push(s.clone()),
                        Some(_) => train.push(s.clone()),
                        None => {
                            if live_count % 2 == 0 {
                                train.push(s.clone());
                            } else {
                                test.push(s.clone());
                            }
                            live_count += 1;
                        }
                    }
                }
                Ok((train, test))
            }
        }
    }
}

// ─── input representations ───

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Static,
    Dynamic,
    StaticDynamic,
}

impl InputMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(InputMode::Static),
            "dynamic" => Ok(InputMode::Dynamic),
            "static-dynamic" | "static_dynamic" | "fused" => Ok(InputMode::StaticDynamic),
            other => Err(Error::config(format!(
                "unknown input mode {other:?} (expected static | dynamic | static-dynamic)"
            ))),
        }
    }
}

/// One network input from a clip: the middle frame, a rank-pooled dynamic
/// image over a centred window, or their fused combination.
pub fn sample_input<T: Scalar>(
    clip: &FrameSequence<T>,
    mode: InputMode,
    window: usize,
    solver: RankPoolSolver,
) -> Result<Tensor<T>> {
    let mid = clip.frames()[clip.len() / 2].clone();
    match mode {
        InputMode::Static => Ok(mid),
        InputMode::Dynamic => {
            let k = window.min(clip.len());
            let start = (clip.len() - k) / 2;
            rank_pool(&clip.window(start, k)?, solver)
        }
        InputMode::StaticDynamic => {
            let k = window.min(clip.len());
            let start = (clip.len() - k) / 2;
            let dynamic = rank_pool(&clip.window(start, k)?, solver)?;
            fuse_static_dynamic(&mid, &dynamic)
        }
    }
}

/// Stacks samples into `(N,3,S,S)` inputs, `(N,1,S/8,S/8)` depth targets and
/// class indices (live = 1).
pub fn assemble_batch<T: Scalar>(
    samples: &[SyntheticSample<T>],
    mode: InputMode,
    window: usize,
    solver: RankPoolSolver,
) -> Result<(Tensor<T>, Tensor<T>, Vec<usize>)> {
    if samples.is_empty() {
        return Err(Error::config("cannot assemble an empty batch"));
    }
    let side = samples[0].clip.frame_shape()[1];
    let grid = side / 8;
    let n = samples.len();
    let mut inputs = Vec::with_capacity(n * 3 * side * side);
    let mut depths = Vec::with_capacity(n * grid * grid);
    let mut labels = Vec::with_capacity(n);
    for s in samples {
        let x = sample_input(&s.clip, mode, window, solver)?;
        inputs.extend_from_slice(x.data());
        depths.extend_from_slice(s.depth.data());
        labels.push(if s.is_live { 1 } else { 0 });
    }
    Ok((
        Tensor::from_vec(&[n, 3, side, side], inputs)?,
        Tensor::from_vec(&[n, 1, grid, grid], depths)?,
        labels,
    ))
}

// ─── pixel-level linear baseline ───

/// Logistic regression on centred raw pixels of the static frame. Used as an
/// oracle that the domain shift is real: strong within a domain, weaker
/// across domains.
#[derive(Debug, Clone)]
pub struct PixelProbe {
    pub w: Vec<f64>,
    pub b: f64,
}

pub fn fit_pixel_probe<T: Scalar>(train: &[SyntheticSample<T>]) -> Result<PixelProbe> {
    if train.is_empty() {
        return Err(Error::config("probe needs training samples"));
    }
    let feats: Vec<Vec<f64>> = train
        .iter()
        .map(|s| {
            s.clip.frames()[s.clip.len() / 2]
                .data()
                .iter()
                .map(|v| v.to_f64() - 0.5)
                .collect()
        })
        .collect();
    let ys: Vec<f64> = train.iter().map(|s| if s.is_live { 1.0 } else { 0.0 }).collect();
    let dim = feats[0].len();
    let n = feats.len() as f64;
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let lr = 2.0;
    let l2 = 1e-4;
    for _ in 0..400 {
        let mut gw = vec![0.0f64; dim];
        let mut gb = 0.0f64;
        for (x, y) in feats.iter().zip(&ys) {
            let z: f64 = b + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - y;
            gb += err;
            for (g, xv) in gw.iter_mut().zip(x) {
                *g += err * xv;
            }
        }
        b -= lr * gb / n;
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= lr * (gi / n + l2 * *wi);
        }
    }
    Ok(PixelProbe { w, b })
}

pub fn probe_scores<T: Scalar>(probe: &PixelProbe, set: &[SyntheticSample<T>]) -> Result<ScoredSet> {
    let scores: Vec<f64> = set
        .iter()
        .map(|s| {
            let x = &s.clip.frames()[s.clip.len() / 2];
            probe.b
                + x.data()
                    .iter()
                    .zip(&probe.w)
                    .map(|(v, w)| (v.to_f64() - 0.5) * w)
                    .sum::<f64>()
        })
        .collect();
    let labels: Vec<SampleLabel> = set.iter().map(|s| s.label()).collect();
    ScoredSet::new(scores, labels)
}
