//! Run configuration: presets, the sectioned key=value config file, and
//! validation. Unknown sections or keys are rejected outright.

use crate::backbone::BackboneConfig;
use crate::data::{MotionModel, ObjectShape, SynthConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::heads::{HeadsConfig, LossConfig};
use crate::model::{ModelConfig, Variant};
use crate::tape::TapeConfig;
use crate::train::TrainConfig;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    pub backbone: BackboneConfig,
    pub tape: TapeConfig,
    pub fusion: FusionConfig,
    pub heads: HeadsConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    /// Desk-scale defaults: d = 32, template 64 / search 128 at total stride
    /// 8, 30 epochs x 500 pairs.
    pub fn desk() -> Self {
        Self {
            seed: 7,
            variant: Variant::Full,
            backbone: BackboneConfig {
                d: 32,
                stage_channels: [8, 16, 24, 32],
                strides: [2, 2, 1, 2],
                template_size: 64,
                search_size: 128,
                corr_group: 1,
            },
            tape: TapeConfig {
                enabled: true,
                ratio: 4,
                kernel: 7,
                multiplicative: false,
                alpha_init: 0.0,
                in_self: false,
            },
            fusion: FusionConfig {
                depth: 1,
                ffn_expansion: 2,
                share_streams: false,
                share_self: false,
            },
            heads: HeadsConfig { depth: 3, window_gamma: 0.3 },
            loss: LossConfig { lambda1: 2.0, lambda2: 5.0 },
            train: TrainConfig {
                epochs: 30,
                pairs_per_epoch: 500,
                batch_size: 8,
                lr_backbone: 4e-5,
                lr_rest: 4e-4,
                weight_decay: 1e-4,
                decay_at: 0.8,
                decay_factor: 0.1,
                clip_norm: 10.0,
                max_frame_gap: 20,
                seed: 7,
            },
            synth: SynthConfig::with_seed(7),
        }
    }

    /// Full reference-scale structure, kept constructible for shape parity;
    /// its training schedule (300 x 60000, batch 128) is never run in CI.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.backbone = BackboneConfig {
            d: 192,
            stage_channels: [32, 64, 96, 128],
            strides: [2, 2, 2, 2],
            template_size: 128,
            search_size: 256,
            corr_group: 1,
        };
        cfg.train = TrainConfig {
            epochs: 300,
            pairs_per_epoch: 60000,
            batch_size: 128,
            lr_backbone: 4e-5,
            lr_rest: 4e-4,
            weight_decay: 1e-4,
            decay_at: 0.8,
            decay_factor: 0.1,
            clip_norm: 10.0,
            max_frame_gap: 20,
            seed: 7,
        };
        cfg
    }

    /// Tiny model used by the finite-difference sweeps: every parameter scalar
    /// gets two extra forward passes, so the network must stay small.
    pub fn gradcheck_preset() -> Self {
        let mut cfg = Self::desk();
        cfg.backbone = BackboneConfig {
            d: 8,
            stage_channels: [3, 4, 4, 6],
            strides: [1, 2, 1, 2],
            template_size: 16,
            search_size: 32,
            corr_group: 1,
        };
        cfg.tape.ratio = 2;
        cfg.tape.kernel = 3;
        cfg.heads.depth = 1;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            "gradcheck" => Ok(Self::gradcheck_preset()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected desk|paper|gradcheck)"
            ))),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        let base = SynthConfig::with_seed(seed);
        self.synth.seed = base.seed;
        self.synth.fill_seed = base.fill_seed;
        self.synth.texture_seed = base.texture_seed;
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            tape: self.tape.clone(),
            fusion: self.fusion.clone(),
            heads: self.heads.clone(),
            loss: self.loss.clone(),
            variant: self.variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.tape.validate()?;
        self.fusion.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        Ok(())
    }

    /// Load an INI-style config: `[section]` headers, `key = value` lines,
    /// `#` comments. A `preset` key in `[run]` picks the base; every other
    /// key overrides one field.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_ini(&text)
    }

    pub fn from_str_ini(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String, String)> = Vec::new();
        let mut section = String::from("run");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            entries.push((section.clone(), k.trim().to_string(), v.trim().to_string()));
        }

        let mut cfg = match entries.iter().find(|(s, k, _)| s == "run" && k == "preset") {
            Some((_, _, v)) => Self::preset(v)?,
            None => Self::desk(),
        };
        for (section, key, value) in &entries {
            if section == "run" && key == "preset" {
                continue;
            }
            cfg.apply(section, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad value '{value}' for {section}.{key}"));
        let as_usize = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let as_u64 = |v: &str| v.parse::<u64>().map_err(|_| bad());
        let as_f64 = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let as_bool = |v: &str| match v {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad()),
        };
        let as_four = |v: &str| -> Result<[usize; 4]> {
            let parts: Vec<usize> = v
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad())?;
            parts.try_into().map_err(|_| bad())
        };

        match (section, key) {
            ("run", "seed") => self.set_seed(as_u64(value)?),
            ("run", "variant") => self.variant = Variant::parse(value)?,

            ("backbone", "d") => self.backbone.d = as_usize(value)?,
            ("backbone", "stage_channels") => self.backbone.stage_channels = as_four(value)?,
            ("backbone", "strides") => self.backbone.strides = as_four(value)?,
            ("backbone", "template_size") => self.backbone.template_size = as_usize(value)?,
            ("backbone", "search_size") => self.backbone.search_size = as_usize(value)?,
            ("backbone", "corr_group") => self.backbone.corr_group = as_usize(value)?,

            ("tape", "enabled") => self.tape.enabled = as_bool(value)?,
            ("tape", "ratio") => self.tape.ratio = as_usize(value)?,
            ("tape", "kernel") => self.tape.kernel = as_usize(value)?,
            ("tape", "multiplicative") => self.tape.multiplicative = as_bool(value)?,
            ("tape", "alpha_init") => self.tape.alpha_init = as_f64(value)?,
            ("tape", "in_self") => self.tape.in_self = as_bool(value)?,

            ("fusion", "depth") => self.fusion.depth = as_usize(value)?,
            ("fusion", "ffn_expansion") => self.fusion.ffn_expansion = as_usize(value)?,
            ("fusion", "share_streams") => self.fusion.share_streams = as_bool(value)?,
            ("fusion", "share_self") => self.fusion.share_self = as_bool(value)?,

            ("heads", "depth") => self.heads.depth = as_usize(value)?,
            ("heads", "window_gamma") => self.heads.window_gamma = as_f64(value)?,

            ("loss", "lambda1") => self.loss.lambda1 = as_f64(value)?,
            ("loss", "lambda2") => self.loss.lambda2 = as_f64(value)?,

            ("train", "epochs") => self.train.epochs = as_usize(value)?,
            ("train", "pairs_per_epoch") => self.train.pairs_per_epoch = as_usize(value)?,
            ("train", "batch_size") => self.train.batch_size = as_usize(value)?,
            ("train", "lr_backbone") => self.train.lr_backbone = as_f64(value)?,
            ("train", "lr_rest") => self.train.lr_rest = as_f64(value)?,
            ("train", "weight_decay") => self.train.weight_decay = as_f64(value)?,
            ("train", "decay_at") => self.train.decay_at = as_f64(value)?,
            ("train", "decay_factor") => self.train.decay_factor = as_f64(value)?,
            ("train", "clip_norm") => self.train.clip_norm = as_f64(value)?,
            ("train", "max_frame_gap") => self.train.max_frame_gap = as_usize(value)?,

            ("synth", "frames") => self.synth.frames = as_usize(value)?,
            ("synth", "frame_w") => self.synth.frame_w = as_usize(value)?,
            ("synth", "frame_h") => self.synth.frame_h = as_usize(value)?,
            ("synth", "object") => self.synth.object = ObjectShape::parse(value)?,
            ("synth", "motion") => self.synth.motion = MotionModel::parse(value)?,
            ("synth", "speed") => self.synth.speed = as_f64(value)?,
            ("synth", "scale_drift") => self.synth.scale_drift = as_f64(value)?,
            ("synth", "occluder") => self.synth.occluder = as_bool(value)?,
            ("synth", "clutter") => self.synth.clutter = as_bool(value)?,
            ("synth", "deform") => self.synth.deform = as_bool(value)?,
            ("synth", "illumination") => self.synth.illumination = as_bool(value)?,

            _ => {
                return Err(Error::Config(format!(
                    "unknown config key '{section}.{key}'"
                )))
            }
        }
        Ok(())
    }
}
