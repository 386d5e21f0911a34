//! Stand-in feature extractor and pixel-wise cross-correlation.
//!
//! A plain four-stage CNN (two 3x3 conv-ReLU per stage, configurable
//! transition strides) replaces the pretrained backbone. Stage 3 is aligned
//! to stage 4's resolution with an extra 3x3 stride-2 convolution while stage
//! 4 gets a 1x1 stride-1 convolution, then both are projected to `d`
//! channels. Template/search feature pairs are compared per stage with
//! grouped pixel-wise correlation followed by a 1x1 channel-normalizing conv.

use crate::error::{dim_err, Result};
use crate::layers::{conv_init, conv_layer};
use crate::tensor::{Graph, ParamStore, Scalar, Var};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct BackboneConfig {
    /// Channel width after normalization (192 at the `paper` preset, 32 at desk).
    pub d: usize,
    pub stage_channels: [usize; 4],
    /// Stage transition strides; the last must be 2 so the fixed alignment
    /// convolutions bring both taps to the same resolution.
    pub strides: [usize; 4],
    pub template_size: usize,
    pub search_size: usize,
    /// Channels consumed per correlation group; 1 is depth-wise.
    pub corr_group: usize,
}

impl BackboneConfig {
    /// Effective output stride of the aligned feature maps.
    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn template_grid(&self) -> usize {
        self.template_size / self.total_stride()
    }

    pub fn search_grid(&self) -> usize {
        self.search_size / self.total_stride()
    }

    pub fn corr_channels(&self) -> usize {
        self.d / self.corr_group
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.stage_channels.iter().any(|&c| c == 0) {
            return dim_err("backbone channel widths must be positive");
        }
        if self.strides[3] != 2 {
            return dim_err(format!(
                "stage-4 transition stride must be 2 for stage alignment, got {}",
                self.strides[3]
            ));
        }
        if self.strides.iter().any(|&s| s == 0) {
            return dim_err("backbone strides must be positive");
        }
        let ts = self.total_stride();
        if self.template_size % ts != 0 || self.search_size % ts != 0 {
            return dim_err(format!(
                "template/search sizes {}/{} must be multiples of the total stride {ts}",
                self.template_size, self.search_size
            ));
        }
        if self.template_size > self.search_size {
            return dim_err("template must not exceed the search region");
        }
        if self.corr_group == 0 || self.d % self.corr_group != 0 {
            return dim_err(format!(
                "correlation group {} must divide d = {}",
                self.corr_group, self.d
            ));
        }
        Ok(())
    }
}

/// Stage-3/stage-4 feature maps recorded in a graph, identical shapes.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVars {
    pub f3: Var,
    pub f4: Var,
}

pub fn init_params(store: &mut ParamStore<f32>, cfg: &BackboneConfig, rng: &mut impl Rng) -> Result<()> {
    cfg.validate()?;
    let ch = cfg.stage_channels;
    let mut prev = 3;
    for (k, &c) in ch.iter().enumerate() {
        conv_init(store, &format!("backbone.stage{}.a", k + 1), c, prev, 3, 3, rng)?;
        conv_init(store, &format!("backbone.stage{}.b", k + 1), c, c, 3, 3, rng)?;
        prev = c;
    }
    conv_init(store, "backbone.align3", ch[2], ch[2], 3, 3, rng)?;
    conv_init(store, "backbone.align4", ch[3], ch[3], 1, 1, rng)?;
    conv_init(store, "backbone.proj3", cfg.d, ch[2], 1, 1, rng)?;
    conv_init(store, "backbone.proj4", cfg.d, ch[3], 1, 1, rng)?;
    let cc = cfg.corr_channels();
    conv_init(store, "corr.c3", cfg.d, cc, 1, 1, rng)?;
    conv_init(store, "corr.c4", cfg.d, cc, 1, 1, rng)?;
    Ok(())
}

/// Run the extractor on one image `[3,H,W]`, producing aligned stage-3 and
/// stage-4 maps of `d` channels each.
pub fn extract<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    cfg: &BackboneConfig,
    image: Var,
) -> Result<FeatureVars> {
    let shape = g.value(image).shape().to_vec();
    if shape.len() != 3 || shape[0] != 3 {
        return dim_err(format!("extract wants an RGB image [3,H,W], got {shape:?}"));
    }
    let ts = cfg.total_stride();
    if shape[1] < ts || shape[2] < ts {
        return dim_err(format!(
            "image {}x{} smaller than total stride {ts}",
            shape[1], shape[2]
        ));
    }

    let mut x = image;
    let mut stage3 = None;
    for k in 0..4 {
        let a = conv_layer(g, store, &format!("backbone.stage{}.a", k + 1), x, cfg.strides[k], 1)?;
        let a = g.relu(a);
        let b = conv_layer(g, store, &format!("backbone.stage{}.b", k + 1), a, 1, 1)?;
        x = g.relu(b);
        if k == 2 {
            stage3 = Some(x);
        }
    }
    let s3 = stage3.expect("stage 3 recorded");
    let a3 = conv_layer(g, store, "backbone.align3", s3, 2, 1)?;
    let a4 = conv_layer(g, store, "backbone.align4", x, 1, 0)?;
    let f3 = conv_layer(g, store, "backbone.proj3", a3, 1, 0)?;
    let f4 = conv_layer(g, store, "backbone.proj4", a4, 1, 0)?;

    let (s3, s4) = (g.value(f3).shape().to_vec(), g.value(f4).shape().to_vec());
    if s3 != s4 {
        return dim_err(format!("stage alignment failed: {s3:?} vs {s4:?}"));
    }
    Ok(FeatureVars { f3, f4 })
}

/// Slide each template map over the matching search map (same-padding) and
/// normalize channels with the per-stage 1x1 conv.
pub fn correlate<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    cfg: &BackboneConfig,
    z: &FeatureVars,
    x: &FeatureVars,
) -> Result<(Var, Var)> {
    let r3 = g.corr_grouped(x.f3, z.f3, cfg.corr_group)?;
    let r4 = g.corr_grouped(x.f4, z.f4, cfg.corr_group)?;
    let m3 = conv_layer(g, store, "corr.c3", r3, 1, 0)?;
    let m4 = conv_layer(g, store, "corr.c4", r4, 1, 0)?;
    Ok((m3, m4))
}
