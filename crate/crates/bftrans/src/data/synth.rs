//! Synthetic aerial-style sequence rendering.
//!
//! Each sequence is a textured background with one moving object (rectangle
//! or ellipse), optional distractor blobs, an occluder sweep, scale drift,
//! aspect deformation, and global illumination change. Every pixel is a
//! deterministic function of the config, so regeneration is byte-identical.

use super::ppm;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectShape {
    Rect,
    Ellipse,
}

impl ObjectShape {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rect" => Ok(ObjectShape::Rect),
            "ellipse" => Ok(ObjectShape::Ellipse),
            other => Err(Error::Config(format!("unknown object shape '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionModel {
    Linear,
    Sinusoidal,
    RandomWalk,
}

impl MotionModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(MotionModel::Linear),
            "sinusoidal" => Ok(MotionModel::Sinusoidal),
            "random_walk" => Ok(MotionModel::RandomWalk),
            other => Err(Error::Config(format!("unknown motion model '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub frames: usize,
    pub frame_w: usize,
    pub frame_h: usize,
    pub object: ObjectShape,
    pub motion: MotionModel,
    /// Baseline speed in px/frame; >= 6 tags the sequence FM.
    pub speed: f64,
    /// Relative scale oscillation amplitude; > 0.15 tags SV.
    pub scale_drift: f64,
    pub occluder: bool,
    pub clutter: bool,
    pub deform: bool,
    pub illumination: bool,
    pub seed: u64,
    /// Object fill appearance seed; defaults derived from `seed`.
    pub fill_seed: u64,
    /// Background texture seed; defaults derived from `seed`.
    pub texture_seed: u64,
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            frames: 60,
            frame_w: 192,
            frame_h: 144,
            object: ObjectShape::Rect,
            motion: MotionModel::Linear,
            speed: 2.5,
            scale_drift: 0.0,
            occluder: false,
            clutter: false,
            deform: false,
            illumination: false,
            seed,
            fill_seed: seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1),
            texture_seed: seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 || self.frame_w < 32 || self.frame_h < 32 {
            return Err(Error::Config("synth: need >= 2 frames of >= 32x32".into()));
        }
        Ok(())
    }

    pub fn tags(&self) -> Vec<String> {
        let mut tags = Vec::new();
        if self.speed >= 6.0 {
            tags.push("FM".to_string());
        }
        if self.clutter {
            tags.push("BC".to_string());
        }
        if self.deform {
            tags.push("DEF".to_string());
        }
        if self.occluder {
            tags.push("OCC".to_string());
        }
        if self.scale_drift > 0.15 {
            tags.push("SV".to_string());
        }
        if self.illumination {
            tags.push("IV".to_string());
        }
        tags
    }
}

struct Texture {
    base: [f64; 3],
    waves: Vec<([f64; 3], f64, f64, f64)>, // per-channel amp, fx, fy, phase
}

fn make_texture(rng: &mut Xoshiro256PlusPlus) -> Texture {
    let base = [
        0.25 + 0.2 * rng.random::<f64>(),
        0.25 + 0.2 * rng.random::<f64>(),
        0.25 + 0.2 * rng.random::<f64>(),
    ];
    let waves = (0..3)
        .map(|_| {
            let amp = [
                0.03 + 0.05 * rng.random::<f64>(),
                0.03 + 0.05 * rng.random::<f64>(),
                0.03 + 0.05 * rng.random::<f64>(),
            ];
            let fx = 0.05 + 0.25 * rng.random::<f64>();
            let fy = 0.05 + 0.25 * rng.random::<f64>();
            let phase = std::f64::consts::TAU * rng.random::<f64>();
            (amp, fx, fy, phase)
        })
        .collect();
    Texture { base, waves }
}

fn texture_at(t: &Texture, x: f64, y: f64) -> [f64; 3] {
    let mut px = t.base;
    for (amp, fx, fy, phase) in &t.waves {
        let s = (fx * x + fy * y + phase).sin();
        for c in 0..3 {
            px[c] += amp[c] * s;
        }
    }
    px
}

/// Motion path: per-frame object center.
fn centers(cfg: &SynthConfig, rng: &mut Xoshiro256PlusPlus) -> Vec<(f64, f64)> {
    let (w, h) = (cfg.frame_w as f64, cfg.frame_h as f64);
    let margin = 26.0;
    let mut out = Vec::with_capacity(cfg.frames);
    match cfg.motion {
        MotionModel::Linear => {
            let mut x = margin + (w - 2.0 * margin) * rng.random::<f64>();
            let mut y = margin + (h - 2.0 * margin) * rng.random::<f64>();
            let ang = std::f64::consts::TAU * rng.random::<f64>();
            let mut vx = cfg.speed * ang.cos();
            let mut vy = cfg.speed * ang.sin();
            for _ in 0..cfg.frames {
                out.push((x, y));
                x += vx;
                y += vy;
                if x < margin || x > w - margin {
                    vx = -vx;
                    x = x.clamp(margin, w - margin);
                }
                if y < margin || y > h - margin {
                    vy = -vy;
                    y = y.clamp(margin, h - margin);
                }
            }
        }
        MotionModel::Sinusoidal => {
            let cx = w / 2.0;
            let cy = h / 2.0;
            let ax = (w / 2.0 - margin) * (0.5 + 0.4 * rng.random::<f64>());
            let ay = (h / 2.0 - margin) * (0.5 + 0.4 * rng.random::<f64>());
            // period scaled so peak velocity tracks cfg.speed
            let tx = (std::f64::consts::TAU * ax / cfg.speed.max(0.5)).max(8.0);
            let ty = (std::f64::consts::TAU * ay / cfg.speed.max(0.5)).max(8.0);
            let px = std::f64::consts::TAU * rng.random::<f64>();
            let py = std::f64::consts::TAU * rng.random::<f64>();
            for t in 0..cfg.frames {
                let tf = t as f64;
                out.push((
                    cx + ax * (std::f64::consts::TAU * tf / tx + px).sin(),
                    cy + ay * (std::f64::consts::TAU * tf / ty + py).sin(),
                ));
            }
        }
        MotionModel::RandomWalk => {
            let mut x = w / 2.0;
            let mut y = h / 2.0;
            let mut vx = 0.0;
            let mut vy = 0.0;
            for _ in 0..cfg.frames {
                out.push((x, y));
                vx = (vx + cfg.speed * (rng.random::<f64>() - 0.5)).clamp(-cfg.speed, cfg.speed);
                vy = (vy + cfg.speed * (rng.random::<f64>() - 0.5)).clamp(-cfg.speed, cfg.speed);
                x = (x + vx).clamp(margin, w - margin);
                y = (y + vy).clamp(margin, h - margin);
            }
        }
    }
    out
}

struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    vx: f64,
    vy: f64,
    color: [f64; 3],
}

/// Render one sequence: frames as `img/%06d.ppm`, `groundtruth.csv`, and
/// `attributes.txt`. Returns the per-frame ground-truth boxes.
pub fn render_sequence(cfg: &SynthConfig, dir: &Path) -> Result<Vec<BBox>> {
    cfg.validate()?;
    let img_dir = dir.join("img");
    std::fs::create_dir_all(&img_dir)?;

    let mut motion_rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let mut fill_rng = Xoshiro256PlusPlus::seed_from_u64(cfg.fill_seed);
    let mut tex_rng = Xoshiro256PlusPlus::seed_from_u64(cfg.texture_seed);

    let texture = make_texture(&mut tex_rng);
    let path = centers(cfg, &mut motion_rng);

    let base_w = 18.0 + 22.0 * fill_rng.random::<f64>();
    let base_h = 18.0 + 22.0 * fill_rng.random::<f64>();
    // bright object color well separated from the muted background
    let color = [
        0.65 + 0.3 * fill_rng.random::<f64>(),
        0.55 + 0.35 * fill_rng.random::<f64>(),
        0.1 + 0.3 * fill_rng.random::<f64>(),
    ];
    let grad = 0.25 * fill_rng.random::<f64>();

    let mut blobs: Vec<Blob> = Vec::new();
    if cfg.clutter {
        for _ in 0..5 {
            blobs.push(Blob {
                cx: cfg.frame_w as f64 * fill_rng.random::<f64>(),
                cy: cfg.frame_h as f64 * fill_rng.random::<f64>(),
                rx: 7.0 + 10.0 * fill_rng.random::<f64>(),
                ry: 7.0 + 10.0 * fill_rng.random::<f64>(),
                vx: 1.5 * (fill_rng.random::<f64>() - 0.5),
                vy: 1.5 * (fill_rng.random::<f64>() - 0.5),
                color: [
                    (color[0] + 0.15 * (fill_rng.random::<f64>() - 0.5)).clamp(0.0, 1.0),
                    (color[1] + 0.15 * (fill_rng.random::<f64>() - 0.5)).clamp(0.0, 1.0),
                    (color[2] + 0.15 * (fill_rng.random::<f64>() - 0.5)).clamp(0.0, 1.0),
                ],
            });
        }
    }

    let (fw, fh) = (cfg.frame_w, cfg.frame_h);
    let mut boxes = Vec::with_capacity(cfg.frames);
    let mut rgb = vec![0u8; fw * fh * 3];

    for (t, &(cx, cy)) in path.iter().enumerate() {
        let tf = t as f64;
        let scale = 1.0 + cfg.scale_drift * (std::f64::consts::TAU * tf / 40.0).sin();
        let deform = if cfg.deform {
            0.22 * (std::f64::consts::TAU * tf / 15.0).sin()
        } else {
            0.0
        };
        let ow = (base_w * scale * (1.0 + deform)).max(8.0);
        let oh = (base_h * scale * (1.0 - deform)).max(8.0);
        let gt = BBox::from_center(cx, cy, ow, oh);
        boxes.push(gt);

        let illum = if cfg.illumination {
            1.0 + 0.3 * (std::f64::consts::TAU * tf / 20.0).sin()
        } else {
            1.0
        };

        // occluder bar sweeps across the middle third of the sequence
        let occ = if cfg.occluder {
            let t0 = cfg.frames as f64 / 3.0;
            let t1 = 2.0 * cfg.frames as f64 / 3.0;
            if tf >= t0 && tf <= t1 {
                let frac = (tf - t0) / (t1 - t0);
                let bar_x = cx - ow + 2.0 * ow * frac;
                Some((bar_x, ow * 0.7))
            } else {
                None
            }
        } else {
            None
        };

        for y in 0..fh {
            for x in 0..fw {
                let (xf, yf) = (x as f64, y as f64);
                let mut px = texture_at(&texture, xf, yf);
                for b in &blobs {
                    let bx = (b.cx + b.vx * tf).rem_euclid(fw as f64);
                    let by = (b.cy + b.vy * tf).rem_euclid(fh as f64);
                    let dx = (xf - bx) / b.rx;
                    let dy = (yf - by) / b.ry;
                    if dx * dx + dy * dy <= 1.0 {
                        px = b.color;
                    }
                }
                let inside = match cfg.object {
                    ObjectShape::Rect => {
                        xf >= gt.x && xf < gt.x + gt.w && yf >= gt.y && yf < gt.y + gt.h
                    }
                    ObjectShape::Ellipse => {
                        let dx = (xf - cx) / (ow / 2.0);
                        let dy = (yf - cy) / (oh / 2.0);
                        dx * dx + dy * dy <= 1.0
                    }
                };
                if inside {
                    let shade = 1.0 + grad * ((xf - gt.x) / ow.max(1.0) - 0.5);
                    px = [color[0] * shade, color[1] * shade, color[2] * shade];
                }
                if let Some((bar_x, bar_w)) = occ {
                    if xf >= bar_x && xf < bar_x + bar_w {
                        px = texture_at(&texture, xf + 31.0, yf + 17.0);
                    }
                }
                let o = (y * fw + x) * 3;
                for c in 0..3 {
                    rgb[o + c] = ((px[c] * illum).clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        ppm::write(&img_dir.join(format!("{:06}.ppm", t + 1)), fw, fh, &rgb)?;
    }

    let mut gt_lines = String::new();
    for b in &boxes {
        gt_lines.push_str(&format!("{},{},{},{}\n", b.x, b.y, b.w, b.h));
    }
    std::fs::write(dir.join("groundtruth.csv"), gt_lines)?;
    std::fs::write(dir.join("attributes.txt"), cfg.tags().join(",") + "\n")?;
    Ok(boxes)
}
