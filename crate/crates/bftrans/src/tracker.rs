//! Online tracking loop: template caching at init, per-frame search crops,
//! inference, and decode back to frame coordinates.

use crate::bbox::BBox;
use crate::data::{self, SequenceDataset};
use crate::error::{Error, Result};
use crate::heads::{self};
use crate::model::{self, ModelConfig};
use crate::tensor::{Graph, ParamStore, Tensor};
use std::path::Path;

/// Per-sequence state. Template features are computed once at init and never
/// refreshed.
pub struct TrackState {
    pub current: BBox,
    template_f3: Tensor,
    template_f4: Tensor,
    /// SiamFC context side of the current box.
    crop_side: f64,
}

fn clamp_center_into(frame_w: f64, frame_h: f64, b: BBox) -> BBox {
    let (cx, cy) = b.center();
    BBox::from_center(cx.clamp(0.0, frame_w), cy.clamp(0.0, frame_h), b.w, b.h)
}

/// Crop the template around `init_box`, run the backbone once, and cache the
/// feature pair.
pub fn init(
    frame: &Tensor,
    init_box: BBox,
    store: &ParamStore<f32>,
    cfg: &ModelConfig,
) -> Result<TrackState> {
    if !(init_box.w > 1.0 && init_box.h > 1.0) || !init_box.is_finite() {
        return Err(Error::Init(format!(
            "degenerate init box {}x{}",
            init_box.w, init_box.h
        )));
    }
    let (fh, fw) = (frame.shape()[1] as f64, frame.shape()[2] as f64);
    let b = clamp_center_into(fw, fh, init_box);
    let side = data::context_side(&b);
    let (cx, cy) = b.center();
    let template = data::crop_resize(frame, cx, cy, side, cfg.backbone.template_size);
    let mut g = Graph::<f32>::new();
    let t = g.input(template);
    let f = crate::backbone::extract(&mut g, store, &cfg.backbone, t)?;
    Ok(TrackState {
        current: b,
        template_f3: g.value(f.f3).clone(),
        template_f4: g.value(f.f4).clone(),
        crop_side: side,
    })
}

/// One tracking step: crop around the previous center, infer, decode, map
/// back, clamp so the box always intersects the frame.
pub fn update(
    state: &mut TrackState,
    frame: &Tensor,
    store: &ParamStore<f32>,
    cfg: &ModelConfig,
) -> Result<BBox> {
    let (fh, fw) = (frame.shape()[1] as f64, frame.shape()[2] as f64);
    let ratio = cfg.backbone.search_size as f64 / cfg.backbone.template_size as f64;
    let side_x = state.crop_side * ratio;
    let (pcx, pcy) = state.current.center();
    let search = data::crop_resize(frame, pcx, pcy, side_x, cfg.backbone.search_size);

    let mut g = Graph::<f32>::new();
    let pred_vars = model::forward_cached(
        &mut g,
        store,
        cfg,
        state.template_f3.clone(),
        state.template_f4.clone(),
        search,
    )?;
    let pred = heads::read_prediction(&g, &pred_vars);
    let grid = cfg.backbone.search_grid();
    let window = heads::cosine_window(grid, grid);
    let stride = cfg.backbone.search_size / grid;
    let in_crop = heads::decode(
        &pred,
        cfg.backbone.search_size,
        stride,
        Some(&window),
        cfg.heads.window_gamma,
    )?;

    // crop coordinates -> frame coordinates
    let scale = side_x / cfg.backbone.search_size as f64;
    let x0 = pcx - side_x / 2.0;
    let y0 = pcy - side_x / 2.0;
    let mapped = BBox::new(
        x0 + in_crop.x * scale,
        y0 + in_crop.y * scale,
        (in_crop.w * scale).max(2.0),
        (in_crop.h * scale).max(2.0),
    );
    let clamped = clamp_center_into(fw, fh, mapped);
    if !clamped.is_finite() {
        return Err(Error::NonFinite("tracker state".into()));
    }
    state.current = clamped;
    state.crop_side = data::context_side(&clamped);
    Ok(clamped)
}

/// Track a whole sequence. The first output echoes the init box; the file at
/// `out`, when given, holds one "x,y,w,h" line per frame.
pub fn track_sequence(
    ds: &SequenceDataset,
    store: &ParamStore<f32>,
    cfg: &ModelConfig,
    out: Option<&Path>,
) -> Result<Vec<BBox>> {
    if ds.is_empty() {
        return Err(Error::Data(format!("sequence '{}' has no frames", ds.name)));
    }
    let first = ds.load_frame(0)?;
    let mut state = init(&first, ds.boxes[0], store, cfg)?;
    let mut results = vec![ds.boxes[0]];
    for t in 1..ds.len() {
        let frame = ds.load_frame(t)?;
        results.push(update(&mut state, &frame, store, cfg)?);
    }
    if let Some(path) = out {
        write_results(path, &results)?;
    }
    Ok(results)
}

pub fn write_results(path: &Path, boxes: &[BBox]) -> Result<()> {
    let mut text = String::new();
    for b in boxes {
        text.push_str(&format!("{},{},{},{}\n", b.x, b.y, b.w, b.h));
    }
    std::fs::write(path, text)?;
    Ok(())
}
