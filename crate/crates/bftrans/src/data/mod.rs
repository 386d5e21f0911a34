//! Sequence datasets: synthetic generation, frame and annotation I/O, crop
//! geometry, and training-sample assembly.
//!
//! Directory layout per sequence: `img/%06d.ppm`, `groundtruth.csv`
//! ("x,y,w,h" per line), `attributes.txt` (comma-separated tags).

pub mod ppm;
mod synth;

pub use synth::{render_sequence, MotionModel, ObjectShape, SynthConfig};

use crate::backbone::BackboneConfig;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::heads::{self, TrainTarget};
use crate::tensor::Tensor;
use rand::Rng;
use std::path::{Path, PathBuf};

/// Pluggable frame decoder so real datasets in other formats can be dropped
/// in; the default reads binary PPM.
pub trait FrameDecoder: Sync {
    /// Returns (width, height, rgb8).
    fn decode(&self, path: &Path) -> Result<(usize, usize, Vec<u8>)>;
}

pub struct PpmDecoder;

impl FrameDecoder for PpmDecoder {
    fn decode(&self, path: &Path) -> Result<(usize, usize, Vec<u8>)> {
        ppm::read(path)
    }
}

/// Ordered frames with one ground-truth box each plus sequence-level
/// attribute tags.
#[derive(Clone, Debug)]
pub struct SequenceDataset {
    pub name: String,
    pub frames: Vec<PathBuf>,
    pub boxes: Vec<BBox>,
    pub tags: Vec<String>,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn load_frame(&self, idx: usize) -> Result<Tensor> {
        load_image(&self.frames[idx], &PpmDecoder)
    }
}

/// Decode a frame into `[3,H,W]` floats in [0,1].
pub fn load_image(path: &Path, decoder: &dyn FrameDecoder) -> Result<Tensor> {
    let (w, h, rgb) = decoder.decode(path)?;
    let mut t = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * 3;
            for c in 0..3 {
                t.set(&[c, y, x], rgb[o + c] as f32 / 255.0);
            }
        }
    }
    Ok(t)
}

pub fn parse_box_line(line: &str) -> Result<BBox> {
    let parts: Vec<&str> = line.trim().split(',').collect();
    if parts.len() != 4 {
        return Err(Error::Data(format!("bad box line '{line}'")));
    }
    let vals: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(format!("bad box line '{line}': {e}")))?;
    Ok(BBox::new(vals[0], vals[1], vals[2], vals[3]))
}

pub fn load_boxes(path: &Path) -> Result<Vec<BBox>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_box_line)
        .collect()
}

/// Load one sequence directory.
pub fn load_sequence(dir: &Path) -> Result<SequenceDataset> {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "sequence".to_string());
    let img_dir = dir.join("img");
    let mut frames: Vec<PathBuf> = std::fs::read_dir(&img_dir)
        .map_err(|e| Error::Data(format!("no img/ under {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "ppm").unwrap_or(false))
        .collect();
    frames.sort();
    let boxes = load_boxes(&dir.join("groundtruth.csv"))?;
    if boxes.len() != frames.len() {
        return Err(Error::Data(format!(
            "{name}: {} ground-truth lines for {} frames",
            boxes.len(),
            frames.len()
        )));
    }
    let tags = match std::fs::read_to_string(dir.join("attributes.txt")) {
        Ok(text) => text
            .trim()
            .split(',')
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect(),
        Err(_) => Vec::new(),
    };
    Ok(SequenceDataset { name, frames, boxes, tags })
}

/// Load every sequence subdirectory of `dir`, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<SequenceDataset>> {
    let mut seqs = Vec::new();
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        seqs.push(load_sequence(&sub)?);
    }
    if seqs.is_empty() {
        return Err(Error::Data(format!("no sequences under {}", dir.display())));
    }
    Ok(seqs)
}

/// Generate a single sequence into `out_dir` and return its dataset view.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<SequenceDataset> {
    render_sequence(cfg, out_dir)?;
    load_sequence(out_dir)
}

/// The standard attribute suite: two sequences per tag under `train/` and
/// three plain held-out sequences under `test/`.
pub fn suite_configs(seed: u64) -> Vec<(String, SynthConfig)> {
    let mut out = Vec::new();
    let mut push = |name: &str, f: &dyn Fn(&mut SynthConfig)| {
        let idx = out.len() as u64;
        let mut c = SynthConfig::with_seed(seed.wrapping_add(idx * 101));
        f(&mut c);
        out.push((name.to_string(), c));
    };
    push("fm_a", &|c| {
        c.speed = 7.0;
        c.motion = MotionModel::Linear;
    });
    push("fm_b", &|c| {
        c.speed = 8.5;
        c.motion = MotionModel::RandomWalk;
        c.object = ObjectShape::Ellipse;
    });
    push("bc_a", &|c| c.clutter = true);
    push("bc_b", &|c| {
        c.clutter = true;
        c.motion = MotionModel::Sinusoidal;
        c.object = ObjectShape::Ellipse;
    });
    push("def_a", &|c| c.deform = true);
    push("def_b", &|c| {
        c.deform = true;
        c.motion = MotionModel::RandomWalk;
    });
    push("occ_a", &|c| c.occluder = true);
    push("occ_b", &|c| {
        c.occluder = true;
        c.motion = MotionModel::Sinusoidal;
    });
    push("sv_a", &|c| c.scale_drift = 0.3);
    push("sv_b", &|c| {
        c.scale_drift = 0.35;
        c.object = ObjectShape::Ellipse;
    });
    push("iv_a", &|c| c.illumination = true);
    push("iv_b", &|c| {
        c.illumination = true;
        c.motion = MotionModel::RandomWalk;
    });
    out
}

pub fn holdout_configs(seed: u64) -> Vec<(String, SynthConfig)> {
    let base = seed.wrapping_add(9000);
    vec![
        ("test_a".to_string(), SynthConfig::with_seed(base)),
        ("test_b".to_string(), {
            let mut c = SynthConfig::with_seed(base + 101);
            c.motion = MotionModel::Sinusoidal;
            c.object = ObjectShape::Ellipse;
            c
        }),
        ("test_c".to_string(), {
            let mut c = SynthConfig::with_seed(base + 202);
            c.motion = MotionModel::RandomWalk;
            c.speed = 3.5;
            c
        }),
    ]
}

/// Generate the full suite; returns (train sequences, held-out sequences).
pub fn generate_suite(out_root: &Path, seed: u64) -> Result<(Vec<SequenceDataset>, Vec<SequenceDataset>)> {
    let mut train = Vec::new();
    for (name, cfg) in suite_configs(seed) {
        train.push(generate(&cfg, &out_root.join("train").join(name))?);
    }
    let mut test = Vec::new();
    for (name, cfg) in holdout_configs(seed) {
        test.push(generate(&cfg, &out_root.join("test").join(name))?);
    }
    Ok((train, test))
}

/// SiamFC-style context side: sqrt((w+p)(h+p)) with p = (w+h)/2.
pub fn context_side(b: &BBox) -> f64 {
    let p = (b.w + b.h) / 2.0;
    ((b.w + p) * (b.h + p)).sqrt()
}

/// Square crop of side `side` centered at (cx, cy), bilinearly resampled to
/// `out x out`; samples outside the frame read the per-channel mean.
pub fn crop_resize(img: &Tensor, cx: f64, cy: f64, side: f64, out: usize) -> Tensor {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut mean = [0.0f64; 3];
    for c in 0..3 {
        let plane = &img.data()[c * h * w..(c + 1) * h * w];
        mean[c] = plane.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64;
    }
    let scale = side / out as f64;
    let x0 = cx - side / 2.0;
    let y0 = cy - side / 2.0;
    Tensor::from_fn(&[3, out, out], |idx| {
        let (c, oy, ox) = (idx[0], idx[1], idx[2]);
        let sx = x0 + (ox as f64 + 0.5) * scale - 0.5;
        let sy = y0 + (oy as f64 + 0.5) * scale - 0.5;
        let xf = sx.floor();
        let yf = sy.floor();
        let (tx, ty) = (sx - xf, sy - yf);
        let sample = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                mean[c]
            } else {
                img.at(&[c, yi as usize, xi as usize]) as f64
            }
        };
        let v00 = sample(xf, yf);
        let v01 = sample(xf + 1.0, yf);
        let v10 = sample(xf, yf + 1.0);
        let v11 = sample(xf + 1.0, yf + 1.0);
        let top = v00 * (1.0 - tx) + v01 * tx;
        let bot = v10 * (1.0 - tx) + v11 * tx;
        (top * (1.0 - ty) + bot * ty) as f32
    })
}

/// One training sample: template/search crops plus grid supervision.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub template: Tensor,
    pub search: Tensor,
    pub target: TrainTarget,
}

/// Deterministic pair assembly. `jitter_px` shifts the object inside the
/// search crop (in output crop pixels), `scale_jitter` scales the crop side,
/// `flip` mirrors both crops horizontally.
pub fn make_training_pair_at(
    ds: &SequenceDataset,
    template_idx: usize,
    search_idx: usize,
    jitter_px: (f64, f64),
    scale_jitter: f64,
    flip: bool,
    cfg: &BackboneConfig,
) -> Result<TrainingPair> {
    if template_idx >= ds.len() || search_idx >= ds.len() {
        return Err(Error::Data(format!(
            "pair indices {template_idx}/{search_idx} out of range for '{}' ({} frames)",
            ds.name,
            ds.len()
        )));
    }
    let frame_z = ds.load_frame(template_idx)?;
    let frame_x = ds.load_frame(search_idx)?;
    let box_z = ds.boxes[template_idx];
    let box_x = ds.boxes[search_idx];

    let (zcx, zcy) = box_z.center();
    let side_z = context_side(&box_z);
    let mut template = crop_resize(&frame_z, zcx, zcy, side_z, cfg.template_size);

    let ratio = cfg.search_size as f64 / cfg.template_size as f64;
    let side_x = context_side(&box_x) * ratio * scale_jitter;
    let scale = cfg.search_size as f64 / side_x;
    let (xcx, xcy) = box_x.center();
    // shifting the crop window negatively moves the object positively
    let crop_cx = xcx - jitter_px.0 / scale;
    let crop_cy = xcy - jitter_px.1 / scale;
    let mut search = crop_resize(&frame_x, crop_cx, crop_cy, side_x, cfg.search_size);

    let mut gt_in_crop = BBox::new(
        (box_x.x - (crop_cx - side_x / 2.0)) * scale,
        (box_x.y - (crop_cy - side_x / 2.0)) * scale,
        box_x.w * scale,
        box_x.h * scale,
    );

    if flip {
        template = mirror_h(&template);
        search = mirror_h(&search);
        gt_in_crop.x = cfg.search_size as f64 - (gt_in_crop.x + gt_in_crop.w);
    }

    let target = heads::make_target(&gt_in_crop, cfg.search_size, cfg.search_grid())?;
    Ok(TrainingPair { template, search, target })
}

/// Sample a pair: random frame, partner <= `max_gap` away, jitter up to 15%
/// of the crop, scale jitter in [0.85, 1.18), horizontal flip with p = 0.5.
pub fn make_training_pair(
    ds: &SequenceDataset,
    max_gap: usize,
    cfg: &BackboneConfig,
    rng: &mut impl Rng,
) -> Result<TrainingPair> {
    if ds.len() < 2 {
        return Err(Error::Data(format!("sequence '{}' has fewer than 2 frames", ds.name)));
    }
    let n = ds.len();
    let i = rng.random_range(0..n);
    let lo = i.saturating_sub(max_gap);
    let hi = (i + max_gap).min(n - 1);
    let j = rng.random_range(lo..=hi);
    let max_shift = 0.15 * cfg.search_size as f64;
    let jx = (rng.random::<f64>() * 2.0 - 1.0) * max_shift;
    let jy = (rng.random::<f64>() * 2.0 - 1.0) * max_shift;
    let scale = 0.85 + 0.33 * rng.random::<f64>();
    let flip = rng.random::<f64>() < 0.5;
    make_training_pair_at(ds, i, j, (jx, jy), scale, flip, cfg)
}

fn mirror_h(t: &Tensor) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    Tensor::from_fn(&[c, h, w], |idx| t.at(&[idx[0], idx[1], w - 1 - idx[2]]))
}


// Independent re-derivation of the sinusoidal path for the closed-form test.
#[cfg(test)]
pub(crate) fn synth_test_centers(cfg: &SynthConfig) -> Vec<(f64, f64)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.frame_w as f64, cfg.frame_h as f64);
    let margin = 26.0;
    let cx = w / 2.0;
    let cy = h / 2.0;
    let ax = (w / 2.0 - margin) * (0.5 + 0.4 * rng.random::<f64>());
    let ay = (h / 2.0 - margin) * (0.5 + 0.4 * rng.random::<f64>());
    let tx = (std::f64::consts::TAU * ax / cfg.speed.max(0.5)).max(8.0);
    let ty = (std::f64::consts::TAU * ay / cfg.speed.max(0.5)).max(8.0);
    let px = std::f64::consts::TAU * rng.random::<f64>();
    let py = std::f64::consts::TAU * rng.random::<f64>();
    (0..cfg.frames)
        .map(|t| {
            let tf = t as f64;
            (
                cx + ax * (std::f64::consts::TAU * tf / tx + px).sin(),
                cy + ay * (std::f64::consts::TAU * tf / ty + py).sin(),
            )
        })
        .collect()
}
