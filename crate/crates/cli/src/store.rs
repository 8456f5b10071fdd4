//! On-disk formats: 8-bit RGB frames, dataset directories with an index
//! file, genotype JSON, metric reports, and the optional run-config file
//! whose values back-fill omitted command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use cdnas_core::dynimg::FrameSequence;
use cdnas_core::error::{Error, Result};
use cdnas_core::metrics::MetricReport;
use cdnas_core::nas::Genotype;
use cdnas_core::synthetic::{AttackType, DomainDataset, SyntheticSample, TaskSpec};
use cdnas_core::tensor::io::{load_tensor, save_tensor};
use cdnas_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

// ─── images ───

fn image_err(path: &Path, e: image::ImageError) -> Error {
    Error::config(format!("image {}: {e}", path.display()))
}

/// Writes a `(3, H, W)` tensor with values in [0, 1] as an 8-bit RGB file.
pub fn write_rgb<P: AsRef<Path>>(path: P, frame: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = frame_dims(frame)?;
    let plane = h * w;
    let data = frame.data();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let q = |c: usize| (data[c * plane + y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, image::Rgb([q(0), q(1), q(2)]));
        }
    }
    img.save(path).map_err(|e| image_err(path, e))
}

/// Reads an 8-bit RGB image file into a `(3, H, W)` tensor in [0, 1].
pub fn read_rgb<P: AsRef<Path>>(path: P) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    let plane = h * w;
    for (x, y, px) in img.enumerate_pixels() {
        let at = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * plane + at] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

fn frame_dims(frame: &Tensor<f32>) -> Result<(usize, usize)> {
    match *frame.shape() {
        [3, h, w] => Ok((h, w)),
        _ => Err(Error::shape(format!("expected a (3, H, W) frame, got {:?}", frame.shape()))),
    }
}

/// Min-max rescales an arbitrary-range tensor into [0, 1] for display;
/// constant tensors map to zeros.
pub fn normalize_for_display(t: &Tensor<f32>) -> Tensor<f32> {
    let lo = t.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = t.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if hi <= lo {
        return Tensor::zeros(t.shape());
    }
    t.map(|v| (v - lo) / (hi - lo))
}

/// All image files directly inside `dir`, lexicographically by file name —
/// the temporal order of a frame directory.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if path.is_file() && matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
            frames.push(path);
        }
    }
    frames.sort();
    if frames.is_empty() {
        return Err(Error::config(format!("no image files in {}", dir.display())));
    }
    Ok(frames)
}

// ─── dataset directories ───

pub const INDEX_FILE: &str = "index.json";
const DEPTH_FILE: &str = "depth.cdnt";

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    id: String,
    live: bool,
    domain: String,
    attack: Option<AttackType>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetIndex {
    spec: TaskSpec,
    samples: Vec<IndexEntry>,
}

/// Writes every clip as a directory of numbered frames plus a depth
/// snapshot, and the index that ties them together.
pub fn save_dataset(dir: &Path, data: &DomainDataset<f32>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(data.samples.len());
    for s in &data.samples {
        let clip_dir = dir.join(&s.id);
        fs::create_dir_all(&clip_dir)?;
        for (t, frame) in s.clip.frames().iter().enumerate() {
            write_rgb(clip_dir.join(format!("frame_{t:03}.png")), frame)?;
        }
        save_tensor(clip_dir.join(DEPTH_FILE), &s.depth)?;
        entries.push(IndexEntry {
            id: s.id.clone(),
            live: s.is_live,
            domain: s.domain.clone(),
            attack: s.attack,
        });
    }
    let index = DatasetIndex { spec: data.spec.clone(), samples: entries };
    fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

/// Loads a dataset directory written by [`save_dataset`]. Frame values are
/// 8-bit quantized; everything else round-trips.
pub fn load_dataset(dir: &Path) -> Result<DomainDataset<f32>> {
    let index_path = dir.join(INDEX_FILE);
    if !index_path.is_file() {
        return Err(Error::config(format!("{} has no {INDEX_FILE}", dir.display())));
    }
    let index: DatasetIndex = serde_json::from_str(&fs::read_to_string(&index_path)?)?;
    let mut samples = Vec::with_capacity(index.samples.len());
    for e in index.samples {
        let clip_dir = dir.join(&e.id);
        let frames = list_frames(&clip_dir)?
            .into_iter()
            .map(|p| read_rgb(&p))
            .collect::<Result<Vec<_>>>()?;
        let depth = load_tensor(clip_dir.join(DEPTH_FILE))?;
        samples.push(SyntheticSample {
            id: e.id,
            clip: FrameSequence::new(frames)?,
            is_live: e.live,
            depth,
            domain: e.domain,
            attack: e.attack,
        });
    }
    Ok(DomainDataset { spec: index.spec, samples })
}

// ─── artifacts ───

pub fn write_genotype(path: &Path, genotype: &Genotype) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, genotype.to_json())?;
    Ok(())
}

pub fn read_genotype(path: &Path) -> Result<Genotype> {
    if !path.is_file() {
        return Err(Error::config(format!("genotype file {} does not exist", path.display())));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Report files next to each other: `report.csv` and `report.txt`.
pub fn write_report(dir: &Path, report: &MetricReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.csv"), report.to_csv())?;
    fs::write(dir.join("report.txt"), format!("{report}"))?;
    Ok(())
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, content)?;
    Ok(())
}

// ─── run-config file ───

/// Optional config file: any field present here fills in a flag the command
/// line omitted. Unknown keys are rejected so typos surface immediately.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub space: Option<String>,
    pub scheme: Option<String>,
    pub head: Option<String>,
    pub pool: Option<String>,
    pub input: Option<String>,
    pub solver: Option<String>,
    pub split: Option<String>,
    pub tasks: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub iters: Option<usize>,
    pub freeze_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub window: Option<usize>,
    pub channels: Option<usize>,
    pub kpc: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma1_tilde: Option<f64>,
    pub gamma2: Option<f64>,
    pub theta: Option<f64>,
    pub lambda: Option<f64>,
    pub width_scale: Option<f64>,
    pub rounds: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::config(format!(
                        "config file {} does not exist",
                        p.display()
                    )));
                }
                toml::from_str(&fs::read_to_string(p)?)
                    .map_err(|e| Error::config(format!("config file {}: {e}", p.display())))
            }
        }
    }
}
