//! Variant wiring: backbone + correlation, optional fusion streams, heads.
//!
//! Ablation map: `baseline` feeds the deep correlation map to every head;
//! `ffm` adds the forward stream (fused deep for classification, raw shallow
//! for regression); `bfm` the backward stream; `bidir` both; `full` enables
//! the target-aware positional encoding inside the cross blocks.

use crate::backbone::{self, BackboneConfig};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionConfig, StreamDir};
use crate::heads::{self, HeadsConfig, LossConfig, LossVars, PredictionVars, TrainTarget};
use crate::tape::TapeConfig;
use crate::tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Ffm,
    Bfm,
    Bidir,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Ffm,
        Variant::Bfm,
        Variant::Bidir,
        Variant::Full,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Ffm => "ffm",
            Variant::Bfm => "bfm",
            Variant::Bidir => "bidir",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "ffm" => Ok(Variant::Ffm),
            "bfm" => Ok(Variant::Bfm),
            "bidir" => Ok(Variant::Bidir),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected baseline|ffm|bfm|bidir|full)"
            ))),
        }
    }

    /// (forward stream, backward stream)
    pub fn streams(&self) -> (bool, bool) {
        match self {
            Variant::Baseline => (false, false),
            Variant::Ffm => (true, false),
            Variant::Bfm => (false, true),
            Variant::Bidir | Variant::Full => (true, true),
        }
    }

    pub fn uses_tape(&self) -> bool {
        matches!(self, Variant::Full)
    }
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub tape: TapeConfig,
    pub fusion: FusionConfig,
    pub heads: HeadsConfig,
    pub loss: LossConfig,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn tape_cross(&self) -> bool {
        self.variant.uses_tape() && self.tape.enabled
    }
}

/// Create every parameter the variant needs, deterministically from `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<f32>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut store = ParamStore::new();
    backbone::init_params(&mut store, &cfg.backbone, &mut rng)?;
    let streams = cfg.variant.streams();
    if streams.0 || streams.1 {
        fusion::init_params(
            &mut store,
            cfg.backbone.d,
            &cfg.fusion,
            &cfg.tape,
            cfg.tape_cross(),
            streams,
            &mut rng,
        )?;
    }
    heads::init_params(&mut store, cfg.backbone.d, &cfg.heads, &mut rng)?;
    Ok(store)
}

/// Wire correlation maps through the variant's fusion streams into the heads.
pub fn forward_from_maps<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    cfg: &ModelConfig,
    m3: Var,
    m4: Var,
) -> Result<PredictionVars> {
    let (fwd, bwd) = fusion::stream_scopes(&cfg.fusion);
    let tape_cross = cfg.tape_cross();
    let (cls_in, reg_in) = match cfg.variant {
        Variant::Baseline => (m4, m4),
        Variant::Ffm => {
            let fused_deep = fusion::stream(
                g, store, &fwd, StreamDir::Forward, m3, m4, &cfg.fusion, &cfg.tape, tape_cross,
            )?;
            (fused_deep, m3)
        }
        Variant::Bfm => {
            let fused_shallow = fusion::stream(
                g, store, &bwd, StreamDir::Backward, m3, m4, &cfg.fusion, &cfg.tape, tape_cross,
            )?;
            (m4, fused_shallow)
        }
        Variant::Bidir | Variant::Full => {
            let (fused_shallow, fused_deep) =
                fusion::fuse(g, store, m3, m4, &cfg.fusion, &cfg.tape, tape_cross)?;
            (fused_deep, fused_shallow)
        }
    };
    heads::predict(g, store, &cfg.heads, cls_in, reg_in)
}

/// Full forward pass from raw template and search images.
pub fn forward<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    cfg: &ModelConfig,
    template: Tensor<E>,
    search: Tensor<E>,
) -> Result<PredictionVars> {
    let zi = g.input(template);
    let xi = g.input(search);
    let zf = backbone::extract(g, store, &cfg.backbone, zi)?;
    let xf = backbone::extract(g, store, &cfg.backbone, xi)?;
    let (m3, m4) = backbone::correlate(g, store, &cfg.backbone, &zf, &xf)?;
    forward_from_maps(g, store, cfg, m3, m4)
}

/// Forward pass reusing template features computed at track-init time.
pub fn forward_cached<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    cfg: &ModelConfig,
    template_f3: Tensor<E>,
    template_f4: Tensor<E>,
    search: Tensor<E>,
) -> Result<PredictionVars> {
    let zf = backbone::FeatureVars {
        f3: g.input(template_f3),
        f4: g.input(template_f4),
    };
    let xi = g.input(search);
    let xf = backbone::extract(g, store, &cfg.backbone, xi)?;
    let (m3, m4) = backbone::correlate(g, store, &cfg.backbone, &zf, &xf)?;
    forward_from_maps(g, store, cfg, m3, m4)
}

/// Forward plus the combined training objective for one pair.
pub fn training_loss<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    cfg: &ModelConfig,
    template: Tensor<E>,
    search: Tensor<E>,
    target: &TrainTarget,
) -> Result<LossVars> {
    let pred = forward(g, store, cfg, template, search)?;
    heads::total_loss(g, &pred, target, &cfg.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;
    use crate::config::RunConfig;
    use crate::tensor::gradcheck;

    #[test]
    fn variant_round_trips_names() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.as_str()).unwrap(), v);
        }
        assert!(Variant::parse("nope").is_err());
    }

    #[test]
    fn every_variant_produces_grid_shaped_predictions() {
        let rc = RunConfig::gradcheck_preset();
        let grid = rc.backbone.search_grid();
        for v in Variant::ALL {
            let mut cfg = rc.model_config();
            cfg.variant = v;
            let store = init_params(&cfg, 3).unwrap();
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
            let template =
                Tensor::<f32>::uniform(&[3, rc.backbone.template_size, rc.backbone.template_size], 0.0, 1.0, &mut rng);
            let search =
                Tensor::<f32>::uniform(&[3, rc.backbone.search_size, rc.backbone.search_size], 0.0, 1.0, &mut rng);
            let mut g = Graph::new();
            let pred = forward(&mut g, &store, &cfg, template, search).unwrap();
            assert_eq!(g.value(pred.cls).shape(), &[1, grid, grid], "{v:?}");
            assert_eq!(g.value(pred.offset).shape(), &[2, grid, grid]);
            assert_eq!(g.value(pred.size).shape(), &[2, grid, grid]);
        }
    }

    #[test]
    fn baseline_binds_no_fusion_parameters() {
        let mut cfg = RunConfig::gradcheck_preset().model_config();
        cfg.variant = Variant::Baseline;
        let store = init_params(&cfg, 5).unwrap();
        assert!(!store.iter().any(|e| e.name.starts_with("fusion.")));
        cfg.variant = Variant::Full;
        let store = init_params(&cfg, 5).unwrap();
        assert!(store.iter().any(|e| e.name.starts_with("fusion.fwd.")));
        assert!(store.iter().any(|e| e.name.contains(".tape.")));
    }

    #[test]
    fn full_model_training_loss_passes_gradcheck() {
        let rc = RunConfig::gradcheck_preset();
        let cfg = rc.model_config();
        let store32 = init_params(&cfg, 11).unwrap();
        let mut store = store32.cast::<f64>();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
        let ts = rc.backbone.template_size;
        let ss = rc.backbone.search_size;
        let template = Tensor::<f64>::uniform(&[3, ts, ts], 0.0, 1.0, &mut rng);
        let search = Tensor::<f64>::uniform(&[3, ss, ss], 0.0, 1.0, &mut rng);
        let gt = BBox::new(ss as f64 * 0.3, ss as f64 * 0.35, ss as f64 * 0.25, ss as f64 * 0.2);
        let target = heads::make_target(&gt, ss, rc.backbone.search_grid()).unwrap();
        let report = gradcheck(
            |g, store| {
                let lv = training_loss(g, store, &cfg, template.clone(), search.clone(), &target)?;
                Ok(lv.total)
            },
            &mut store,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(
            report.passed(),
            "max rel err {:e} over {} scalars at {:?}",
            report.max_rel_err,
            report.scalars_checked,
            report.worst
        );
    }
}
