//! Anchor-free state prediction and the training objective.
//!
//! Three conv stacks produce a foreground logit map plus normalized center
//! offsets and box extents. Classification reads the fused deep map, both
//! regression heads the fused shallow map. Training combines a
//! penalty-reduced Gaussian-heatmap focal loss, an l1 term at the positive
//! cell, and a GIoU term on the box decoded at that cell.

use crate::bbox::BBox;
use crate::error::{contract_err, dim_err, Result};
use crate::layers::{conv_init, conv_init_zero, conv_layer};
use crate::tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct HeadsConfig {
    /// 3x3 conv-ReLU layers per stack before the 1x1 output conv.
    pub depth: usize,
    /// Cosine-window blend weight at inference; 0 is pure argmax.
    pub window_gamma: f64,
}

#[derive(Clone, Debug)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Head outputs recorded in a graph.
#[derive(Clone, Copy, Debug)]
pub struct PredictionVars {
    pub cls: Var,
    pub offset: Var,
    pub size: Var,
}

/// Plain head outputs: `cls [1,h,w]` logits, `offset [2,h,w]` (x then y),
/// `size [2,h,w]` logits (w then h).
#[derive(Clone, Debug)]
pub struct Prediction {
    pub cls: Tensor,
    pub offset: Tensor,
    pub size: Tensor,
}

/// Supervision built from one ground-truth box on the response grid.
#[derive(Clone, Debug)]
pub struct TrainTarget {
    pub heatmap: Tensor,
    pub offset_gt: Tensor,
    pub size_gt: Tensor,
    pub mask: Tensor,
    pub cell: (usize, usize),
    /// Ground-truth box in units of the search-crop side (all fields in [0,1]).
    pub gt_norm: BBox,
}

pub fn init_params(
    store: &mut ParamStore<f32>,
    d: usize,
    cfg: &HeadsConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    if cfg.depth == 0 {
        return dim_err("heads.depth must be positive");
    }
    for (stack, out_c) in [("cls", 1), ("off", 2), ("size", 2)] {
        for i in 0..cfg.depth {
            conv_init(store, &format!("heads.{stack}.conv{i}"), d, d, 3, 3, rng)?;
        }
        conv_init_zero(store, &format!("heads.{stack}.final"), out_c, d, 1, 1)?;
    }
    Ok(())
}

fn stack<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    prefix: &str,
    mut x: Var,
    depth: usize,
) -> Result<Var> {
    for i in 0..depth {
        let c = conv_layer(g, store, &format!("{prefix}.conv{i}"), x, 1, 1)?;
        x = g.relu(c);
    }
    conv_layer(g, store, &format!("{prefix}.final"), x, 1, 0)
}

/// Run the heads: classification on the deep input, offset/size regression on
/// the shallow input.
pub fn predict<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    cfg: &HeadsConfig,
    cls_in: Var,
    reg_in: Var,
) -> Result<PredictionVars> {
    if g.value(cls_in).shape() != g.value(reg_in).shape() {
        return dim_err(format!(
            "head inputs differ: {:?} vs {:?}",
            g.value(cls_in).shape(),
            g.value(reg_in).shape()
        ));
    }
    let cls = stack(g, store, "heads.cls", cls_in, cfg.depth)?;
    let offset = stack(g, store, "heads.off", reg_in, cfg.depth)?;
    let size = stack(g, store, "heads.size", reg_in, cfg.depth)?;
    Ok(PredictionVars { cls, offset, size })
}

pub fn read_prediction(g: &Graph<f32>, p: &PredictionVars) -> Prediction {
    Prediction {
        cls: g.value(p.cls).clone(),
        offset: g.value(p.offset).clone(),
        size: g.value(p.size).clone(),
    }
}

/// Hann-product window over the grid, values in [0,1] peaking at the center.
pub fn cosine_window(h: usize, w: usize) -> Tensor {
    let hann = |i: usize, n: usize| -> f64 {
        if n <= 1 {
            1.0
        } else {
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        }
    };
    Tensor::from_fn(&[h, w], |idx| (hann(idx[0], h) * hann(idx[1], w)) as f32)
}

fn sigmoid64(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Decode the box from the score peak: optional cosine-window blend, argmax
/// with row-major tie-break, center from cell + offset, extents through a
/// sigmoid. Result is in search-crop pixels.
pub fn decode(
    pred: &Prediction,
    search_size: usize,
    stride: usize,
    window: Option<&Tensor>,
    gamma: f64,
) -> Result<BBox> {
    let (h, w) = (pred.cls.shape()[1], pred.cls.shape()[2]);
    if h * stride != search_size {
        return contract_err(format!(
            "decode: grid {h} x stride {stride} != search size {search_size}"
        ));
    }
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for idx in 0..h * w {
        let mut s = sigmoid64(pred.cls.data()[idx] as f64);
        if let Some(win) = window {
            s = (1.0 - gamma) * s + gamma * win.data()[idx] as f64;
        }
        if s > best_score {
            best_score = s;
            best = idx;
        }
    }
    let (i, j) = (best / w, best % w);
    let s = search_size as f64;
    let off_x = pred.offset.at(&[0, i, j]) as f64;
    let off_y = pred.offset.at(&[1, i, j]) as f64;
    let cx = ((j as f64 + 0.5) / w as f64 + off_x) * s;
    let cy = ((i as f64 + 0.5) / h as f64 + off_y) * s;
    let bw = sigmoid64(pred.size.at(&[0, i, j]) as f64) * s;
    let bh = sigmoid64(pred.size.at(&[1, i, j]) as f64) * s;
    Ok(BBox::from_center(cx, cy, bw, bh))
}

/// Build supervision on an `n x n` grid from a box in search-crop pixels.
/// The Gaussian radius follows max(1, round(min(w,h) / (2 stride))).
pub fn make_target(gt: &BBox, search_size: usize, grid: usize) -> Result<TrainTarget> {
    if grid == 0 || search_size % grid != 0 {
        return dim_err(format!("grid {grid} must divide search size {search_size}"));
    }
    let stride = (search_size / grid) as f64;
    let s = search_size as f64;
    let (cx, cy) = gt.center();
    let cj = ((cx / stride).floor() as isize).clamp(0, grid as isize - 1) as usize;
    let ci = ((cy / stride).floor() as isize).clamp(0, grid as isize - 1) as usize;
    let radius = ((gt.w.min(gt.h) / (2.0 * stride)).round() as isize).max(1) as f64;
    let sigma = (2.0 * radius + 1.0) / 6.0;
    let mut heatmap = Tensor::from_fn(&[1, grid, grid], |idx| {
        let (di, dj) = (idx[1] as f64 - ci as f64, idx[2] as f64 - cj as f64);
        ((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()) as f32
    });
    heatmap.set(&[0, ci, cj], 1.0);

    let mut offset_gt = Tensor::zeros(&[2, grid, grid]);
    offset_gt.set(&[0, ci, cj], (cx / s - (cj as f64 + 0.5) / grid as f64) as f32);
    offset_gt.set(&[1, ci, cj], (cy / s - (ci as f64 + 0.5) / grid as f64) as f32);

    let mut size_gt = Tensor::zeros(&[2, grid, grid]);
    size_gt.set(&[0, ci, cj], (gt.w / s).clamp(1e-4, 1.0 - 1e-4) as f32);
    size_gt.set(&[1, ci, cj], (gt.h / s).clamp(1e-4, 1.0 - 1e-4) as f32);

    let mut mask = Tensor::zeros(&[1, grid, grid]);
    mask.set(&[0, ci, cj], 1.0);

    Ok(TrainTarget {
        heatmap,
        offset_gt,
        size_gt,
        mask,
        cell: (ci, cj),
        gt_norm: BBox::new(gt.x / s, gt.y / s, gt.w / s, gt.h / s),
    })
}

/// Penalty-reduced pixel-wise focal loss on the Gaussian heatmap:
/// positives `-(1-p)^2 log p`, negatives `-(1-t)^4 p^2 log(1-p)`, averaged
/// over the positive count. `p` is clamped to [1e-6, 1-1e-6].
pub fn focal_loss<E: Scalar>(g: &mut Graph<E>, cls: Var, target: &TrainTarget) -> Result<Var> {
    let npos = target.mask.data().iter().filter(|&&v| v == 1.0).count();
    if npos == 0 {
        return contract_err("focal loss with empty positive set");
    }
    let mask = g.input(target.mask.cast::<E>());
    let neg_weight = Tensor::from_fn(target.heatmap.shape(), |idx| {
        let t = target.heatmap.at(idx) as f64;
        let m = target.mask.at(idx) as f64;
        ((1.0 - t).powi(4) * (1.0 - m)) as f32
    });
    let neg_w = g.input(neg_weight.cast::<E>());

    let p = g.sigmoid(cls);
    let p = g.clamp(p, 1e-6, 1.0 - 1e-6);
    let one_minus_p = {
        let n = g.scale_const(p, -1.0);
        g.add_const(n, 1.0)
    };

    let log_p = g.log(p);
    let om_sq = g.mul(one_minus_p, one_minus_p)?;
    let pos_terms = g.mul(om_sq, log_p)?;
    let pos_terms = g.mul(pos_terms, mask)?;
    let pos_sum = g.sum(pos_terms);

    let log_omp = g.log(one_minus_p);
    let p_sq = g.mul(p, p)?;
    let neg_terms = g.mul(p_sq, log_omp)?;
    let neg_terms = g.mul(neg_terms, neg_w)?;
    let neg_sum = g.sum(neg_terms);

    let total = g.add(pos_sum, neg_sum)?;
    Ok(g.scale_const(total, -1.0 / npos as f64))
}

// Extract the scalar at the positive cell of `map`'s channel `chan`.
fn at_positive<E: Scalar>(
    g: &mut Graph<E>,
    map: Var,
    chan: usize,
    mask: Var,
) -> Result<Var> {
    let ch = g.slice(map, 0, chan, 1)?;
    let sel = g.mul(ch, mask)?;
    Ok(g.sum(sel))
}

/// Mean absolute error of offset and size at the positive cell (four
/// components). Size logits go through a sigmoid before comparison.
pub fn l1_loss<E: Scalar>(
    g: &mut Graph<E>,
    offset: Var,
    size: Var,
    target: &TrainTarget,
) -> Result<Var> {
    let mask = g.input(target.mask.cast::<E>());
    let off_gt = g.input(target.offset_gt.cast::<E>());
    let size_gt = g.input(target.size_gt.cast::<E>());

    let mask2 = g.concat(mask, mask, 0)?; // [2,h,w]
    let off_diff = g.sub(offset, off_gt)?;
    let off_diff = g.mul(off_diff, mask2)?;
    let off_abs = g.abs(off_diff);
    let off_sum = g.sum(off_abs);

    let size_sig = g.sigmoid(size);
    let size_diff = g.sub(size_sig, size_gt)?;
    let size_diff = g.mul(size_diff, mask2)?;
    let size_abs = g.abs(size_diff);
    let size_sum = g.sum(size_abs);

    let total = g.add(off_sum, size_sum)?;
    Ok(g.scale_const(total, 0.25))
}

/// GIoU loss `1 - GIoU` of the box decoded at the positive cell against the
/// ground truth, in normalized search units; in [0, 2].
pub fn giou_loss<E: Scalar>(
    g: &mut Graph<E>,
    offset: Var,
    size: Var,
    target: &TrainTarget,
) -> Result<Var> {
    let grid = target.mask.shape()[1];
    let (ci, cj) = target.cell;
    let mask = g.input(target.mask.cast::<E>());

    let off_x = at_positive(g, offset, 0, mask)?;
    let off_y = at_positive(g, offset, 1, mask)?;
    let size_w = at_positive(g, size, 0, mask)?;
    let size_h = at_positive(g, size, 1, mask)?;
    let bw = g.sigmoid(size_w);
    let bh = g.sigmoid(size_h);

    let cx = g.add_const(off_x, (cj as f64 + 0.5) / grid as f64);
    let cy = g.add_const(off_y, (ci as f64 + 0.5) / grid as f64);
    let half_w = g.scale_const(bw, 0.5);
    let half_h = g.scale_const(bh, 0.5);
    let x1 = g.sub(cx, half_w)?;
    let x2 = g.add(cx, half_w)?;
    let y1 = g.sub(cy, half_h)?;
    let y2 = g.add(cy, half_h)?;

    let gt = target.gt_norm;
    let (gx1, gy1) = (gt.x, gt.y);
    let (gx2, gy2) = (gt.x + gt.w, gt.y + gt.h);
    let gt_area = (gt.w * gt.h).max(1e-9);

    let ix1 = g.max_const(x1, gx1);
    let ix2 = g.min_const(x2, gx2);
    let iy1 = g.max_const(y1, gy1);
    let iy2 = g.min_const(y2, gy2);
    let iw = g.sub(ix2, ix1)?;
    let iw = g.relu(iw);
    let ih = g.sub(iy2, iy1)?;
    let ih = g.relu(ih);
    let inter = g.mul(iw, ih)?;

    let area_pred = g.mul(bw, bh)?;
    let area_pred = g.max_const(area_pred, 1e-9);
    let union = g.sub(area_pred, inter)?;
    let union = g.add_const(union, gt_area);
    let union = g.max_const(union, 1e-9);
    let iou = g.div(inter, union)?;

    let ex1 = g.min_const(x1, gx1);
    let ex2 = g.max_const(x2, gx2);
    let ey1 = g.min_const(y1, gy1);
    let ey2 = g.max_const(y2, gy2);
    let ew = g.sub(ex2, ex1)?;
    let eh = g.sub(ey2, ey1)?;
    let enclose = g.mul(ew, eh)?;
    let enclose = g.max_const(enclose, 1e-9);
    let slack = g.sub(enclose, union)?;
    let penalty = g.div(slack, enclose)?;

    let giou = g.sub(iou, penalty)?;
    let neg = g.scale_const(giou, -1.0);
    Ok(g.add_const(neg, 1.0))
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub focal: Var,
    pub l1: Var,
    pub giou: Var,
}

/// `L = L_focal + lambda1 * L_l1 + lambda2 * L_GIoU`.
pub fn total_loss<E: Scalar>(
    g: &mut Graph<E>,
    pred: &PredictionVars,
    target: &TrainTarget,
    cfg: &LossConfig,
) -> Result<LossVars> {
    let focal = focal_loss(g, pred.cls, target)?;
    let l1 = l1_loss(g, pred.offset, pred.size, target)?;
    let giou = giou_loss(g, pred.offset, pred.size, target)?;
    let l1w = g.scale_const(l1, cfg.lambda1);
    let giw = g.scale_const(giou, cfg.lambda2);
    let t = g.add(focal, l1w)?;
    let total = g.add(t, giw)?;
    Ok(LossVars { total, focal, l1, giou })
}

/// The weighted composition on plain scalars, shared with tests.
pub fn combine_losses(focal: f64, l1: f64, giou: f64, lambda1: f64, lambda2: f64) -> f64 {
    focal + lambda1 * l1 + lambda2 * giou
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn hcfg() -> HeadsConfig {
        HeadsConfig { depth: 3, window_gamma: 0.3 }
    }

    fn lcfg() -> LossConfig {
        LossConfig { lambda1: 2.0, lambda2: 5.0 }
    }

    fn logit(p: f64) -> f32 {
        (p / (1.0 - p)).ln() as f32
    }

    #[test]
    fn predict_shapes_match_contract() {
        let mut store = ParamStore::new();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        init_params(&mut store, 32, &hcfg(), &mut rng).unwrap();
        let mut g = Graph::<f32>::new();
        let deep = g.input(Tensor::uniform(&[32, 8, 8], -1.0, 1.0, &mut rng));
        let shallow = g.input(Tensor::uniform(&[32, 8, 8], -1.0, 1.0, &mut rng));
        let p = predict(&mut g, &store, &hcfg(), deep, shallow).unwrap();
        assert_eq!(g.value(p.cls).shape(), &[1, 8, 8]);
        assert_eq!(g.value(p.offset).shape(), &[2, 8, 8]);
        assert_eq!(g.value(p.size).shape(), &[2, 8, 8]);
    }

    #[test]
    fn zero_final_convs_give_score_half_everywhere() {
        let mut store = ParamStore::new();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        init_params(&mut store, 16, &hcfg(), &mut rng).unwrap();
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::uniform(&[16, 4, 4], -1.0, 1.0, &mut rng));
        let p = predict(&mut g, &store, &hcfg(), x, x).unwrap();
        assert!(g.value(p.cls).data().iter().all(|&v| v == 0.0));
        let pred = read_prediction(&g, &p);
        let decoded = decode(&pred, 32, 8, None, 0.0).unwrap();
        // uniform scores: tie-break picks cell (0,0)
        let (cx, cy) = decoded.center();
        assert!((cx - 4.0).abs() < 1e-6 && (cy - 4.0).abs() < 1e-6);
    }

    #[test]
    fn decode_hand_case() {
        // peak at cell (3,4), zero offsets, size logits for (0.25, 0.25),
        // search 128, grid 8 -> center (72, 56), box 32x32
        let mut cls = Tensor::full(&[1, 8, 8], -10.0f32);
        cls.set(&[0, 3, 4], 10.0);
        let offset = Tensor::zeros(&[2, 8, 8]);
        let size = Tensor::full(&[2, 8, 8], logit(0.25));
        let pred = Prediction { cls, offset, size };
        let b = decode(&pred, 128, 16, None, 0.0).unwrap();
        let (cx, cy) = b.center();
        assert!((cx - 72.0).abs() < 1e-4);
        assert!((cy - 56.0).abs() < 1e-4);
        assert!((b.w - 32.0).abs() < 1e-3);
        assert!((b.h - 32.0).abs() < 1e-3);
    }

    #[test]
    fn decode_grid_stride_mismatch_is_contract_error() {
        let pred = Prediction {
            cls: Tensor::zeros(&[1, 8, 8]),
            offset: Tensor::zeros(&[2, 8, 8]),
            size: Tensor::zeros(&[2, 8, 8]),
        };
        assert!(decode(&pred, 128, 8, None, 0.0).is_err());
    }

    #[test]
    fn full_window_blend_overrides_scores() {
        let mut cls = Tensor::full(&[1, 8, 8], -10.0f32);
        cls.set(&[0, 0, 0], 10.0); // score peak at a corner
        let pred = Prediction {
            cls,
            offset: Tensor::zeros(&[2, 8, 8]),
            size: Tensor::zeros(&[2, 8, 8]),
        };
        let win = cosine_window(8, 8);
        let b = decode(&pred, 128, 16, Some(&win), 1.0).unwrap();
        let (cx, cy) = b.center();
        // window peaks in the grid middle, far from the cls peak
        assert!(cx > 48.0 && cx < 80.0, "cx {cx}");
        assert!(cy > 48.0 && cy < 80.0, "cy {cy}");
    }

    fn two_cell_target(neg_t: f32) -> TrainTarget {
        let mut heatmap = Tensor::zeros(&[1, 1, 2]);
        heatmap.set(&[0, 0, 0], 1.0);
        heatmap.set(&[0, 0, 1], neg_t);
        let mut mask = Tensor::zeros(&[1, 1, 2]);
        mask.set(&[0, 0, 0], 1.0);
        TrainTarget {
            heatmap,
            offset_gt: Tensor::zeros(&[2, 1, 2]),
            size_gt: Tensor::full(&[2, 1, 2], 0.5),
            mask,
            cell: (0, 0),
            gt_norm: BBox::new(0.25, 0.25, 0.5, 0.5),
        }
    }

    #[test]
    fn focal_loss_vanishes_for_perfect_prediction() {
        let target = two_cell_target(0.0);
        let mut g = Graph::<f32>::new();
        let mut cls = Tensor::zeros(&[1, 1, 2]);
        cls.set(&[0, 0, 0], 40.0);
        cls.set(&[0, 0, 1], -40.0);
        let c = g.input(cls);
        let l = focal_loss(&mut g, c, &target).unwrap();
        assert!(g.value(l).data()[0].abs() < 1e-9);
    }

    #[test]
    fn focal_loss_half_probability_matches_hand_value() {
        let target = two_cell_target(0.0);
        let mut g = Graph::<f32>::new();
        let c = g.input(Tensor::zeros(&[1, 1, 2])); // p = 0.5 everywhere
        let l = focal_loss(&mut g, c, &target).unwrap();
        // pos: -(0.5)^2 ln 0.5; neg: -(1-0)^4 (0.5)^2 ln 0.5
        let want = 2.0 * 0.25 * (2.0f64).ln();
        assert!((g.value(l).data()[0] as f64 - want).abs() < 1e-6);
    }

    #[test]
    fn doubling_negative_weight_doubles_that_contribution() {
        // choose t2 so (1-t2)^4 = 2 (1-t1)^4
        let t1 = 0.5f32;
        let t2 = 1.0 - (2.0f32).powf(0.25) * (1.0 - t1);
        let mut g = Graph::<f32>::new();
        let c = g.input(Tensor::zeros(&[1, 1, 2]));
        let base = {
            let l = focal_loss(&mut g, c, &two_cell_target(1.0)).unwrap();
            g.value(l).data()[0] as f64 // negative weight (1-1)^4 = 0: pure positive term
        };
        let l1 = focal_loss(&mut g, c, &two_cell_target(t1)).unwrap();
        let l1 = g.value(l1).data()[0] as f64;
        let l2 = focal_loss(&mut g, c, &two_cell_target(t2)).unwrap();
        let l2 = g.value(l2).data()[0] as f64;
        assert!(((l2 - base) - 2.0 * (l1 - base)).abs() < 1e-6);
    }

    #[test]
    fn focal_loss_monotone_in_score() {
        let target = two_cell_target(0.0);
        let eval = |pos_logit: f32, neg_logit: f32| {
            let mut g = Graph::<f32>::new();
            let mut cls = Tensor::zeros(&[1, 1, 2]);
            cls.set(&[0, 0, 0], pos_logit);
            cls.set(&[0, 0, 1], neg_logit);
            let c = g.input(cls);
            let l = focal_loss(&mut g, c, &target).unwrap();
            g.value(l).data()[0]
        };
        // decreasing in p at the positive cell
        assert!(eval(1.0, 0.0) < eval(0.0, 0.0));
        assert!(eval(0.0, 0.0) < eval(-1.0, 0.0));
        // increasing in p at a negative cell
        assert!(eval(0.0, 1.0) > eval(0.0, 0.0));
        assert!(eval(0.0, 0.0) > eval(0.0, -1.0));
    }

    #[test]
    fn focal_loss_requires_a_positive_cell() {
        let mut target = two_cell_target(0.0);
        target.mask = Tensor::zeros(&[1, 1, 2]);
        let mut g = Graph::<f32>::new();
        let c = g.input(Tensor::zeros(&[1, 1, 2]));
        assert!(focal_loss(&mut g, c, &target).is_err());
    }

    #[test]
    fn giou_loss_zero_for_exact_prediction() {
        let gt = BBox::new(40.0, 56.0, 32.0, 24.0);
        let target = make_target(&gt, 128, 8).unwrap();
        let mut g = Graph::<f32>::new();
        let offset = g.input(target.offset_gt.clone());
        // keep logits finite off the positive cell
        let size = g.input(target.size_gt.map(|v| if v == 0.0 { -40.0 } else { logit(v as f64) }));
        let l = giou_loss(&mut g, offset, size, &target).unwrap();
        assert!(g.value(l).data()[0].abs() < 1e-5);
    }

    #[test]
    fn giou_loss_disjoint_hand_geometry() {
        // grid 4 over a 4px crop: gt (2,0,1,1), prediction placed at (0,0,1,1)
        let gt = BBox::new(2.0, 0.0, 1.0, 1.0);
        let target = make_target(&gt, 4, 4).unwrap();
        let (ci, cj) = target.cell;
        let mut offset = Tensor::zeros(&[2, 4, 4]);
        // want pred center (0.5, 0.5)/4 normalized
        offset.set(&[0, ci, cj], (0.5 / 4.0 - (cj as f64 + 0.5) / 4.0) as f32);
        offset.set(&[1, ci, cj], (0.5 / 4.0 - (ci as f64 + 0.5) / 4.0) as f32);
        let size = Tensor::full(&[2, 4, 4], logit(0.25));
        let mut g = Graph::<f32>::new();
        let ov = g.input(offset);
        let sv = g.input(size);
        let l = giou_loss(&mut g, ov, sv, &target).unwrap();
        assert!((g.value(l).data()[0] as f64 - 4.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn giou_loss_stays_in_range() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        for _ in 0..50 {
            let gt = BBox::new(
                8.0 + 80.0 * rng.random::<f64>(),
                8.0 + 80.0 * rng.random::<f64>(),
                8.0 + 30.0 * rng.random::<f64>(),
                8.0 + 30.0 * rng.random::<f64>(),
            );
            let target = make_target(&gt, 128, 8).unwrap();
            let mut g = Graph::<f32>::new();
            let ov = g.input(Tensor::uniform(&[2, 8, 8], -0.3, 0.3, &mut rng));
            let sv = g.input(Tensor::uniform(&[2, 8, 8], -3.0, 3.0, &mut rng));
            let l = giou_loss(&mut g, ov, sv, &target).unwrap();
            let v = g.value(l).data()[0];
            assert!((0.0..=2.0).contains(&v), "giou loss {v}");
        }
    }

    #[test]
    fn total_loss_composes_with_default_weights() {
        assert_eq!(
            combine_losses(0.7, 0.1, 0.2, 2.0, 5.0),
            0.7 + 2.0 * 0.1 + 5.0 * 0.2
        );
        assert!((combine_losses(0.7, 0.1, 0.2, 2.0, 5.0) - 1.9).abs() < 1e-12);

        // graph composition agrees with its own components
        let gt = BBox::new(40.0, 40.0, 30.0, 20.0);
        let target = make_target(&gt, 128, 8).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(6);
        let mut g = Graph::<f32>::new();
        let pred = PredictionVars {
            cls: g.input(Tensor::uniform(&[1, 8, 8], -1.0, 1.0, &mut rng)),
            offset: g.input(Tensor::uniform(&[2, 8, 8], -0.2, 0.2, &mut rng)),
            size: g.input(Tensor::uniform(&[2, 8, 8], -2.0, 2.0, &mut rng)),
        };
        let lv = total_loss(&mut g, &pred, &target, &lcfg()).unwrap();
        let (t, f, l1, gi) = (
            g.value(lv.total).data()[0] as f64,
            g.value(lv.focal).data()[0] as f64,
            g.value(lv.l1).data()[0] as f64,
            g.value(lv.giou).data()[0] as f64,
        );
        assert!((t - combine_losses(f, l1, gi, 2.0, 5.0)).abs() < 1e-5);
    }

    #[test]
    fn perfect_prediction_drives_total_loss_to_zero() {
        let gt = BBox::new(48.0, 40.0, 24.0, 32.0);
        let target = make_target(&gt, 128, 8).unwrap();
        let mut g = Graph::<f32>::new();
        let mut cls = target.heatmap.map(|t| if t == 1.0 { 40.0 } else { -40.0 });
        // keep logits matching the mask's single positive
        cls = Tensor::new(vec![1, 8, 8], cls.data().to_vec()).unwrap();
        let pred = PredictionVars {
            cls: g.input(cls),
            offset: g.input(target.offset_gt.clone()),
            size: g.input(target.size_gt.map(|v| {
                if v == 0.0 { -40.0 } else { logit(v as f64) }
            })),
        };
        let lv = total_loss(&mut g, &pred, &target, &lcfg()).unwrap();
        assert!(g.value(lv.total).data()[0] < 1e-4);
    }

    #[test]
    fn decode_encode_consistency() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        for _ in 0..20 {
            let gt = BBox::new(
                10.0 + 70.0 * rng.random::<f64>(),
                10.0 + 70.0 * rng.random::<f64>(),
                10.0 + 30.0 * rng.random::<f64>(),
                10.0 + 30.0 * rng.random::<f64>(),
            );
            let target = make_target(&gt, 128, 16).unwrap();
            let (ci, cj) = target.cell;
            let mut cls = Tensor::full(&[1, 16, 16], -20.0f32);
            cls.set(&[0, ci, cj], 20.0);
            let mut offset = Tensor::zeros(&[2, 16, 16]);
            offset.set(&[0, ci, cj], target.offset_gt.at(&[0, ci, cj]));
            offset.set(&[1, ci, cj], target.offset_gt.at(&[1, ci, cj]));
            let mut size = Tensor::zeros(&[2, 16, 16]);
            size.set(&[0, ci, cj], logit(target.size_gt.at(&[0, ci, cj]) as f64));
            size.set(&[1, ci, cj], logit(target.size_gt.at(&[1, ci, cj]) as f64));
            let pred = Prediction { cls, offset, size };
            let b = decode(&pred, 128, 8, None, 0.0).unwrap();
            let (gcx, gcy) = gt.center();
            let (cx, cy) = b.center();
            assert!((cx - gcx).abs() <= 4.0 && (cy - gcy).abs() <= 4.0); // stride/2
            assert!((b.w - gt.w).abs() <= 1.0 && (b.h - gt.h).abs() <= 1.0);
        }
    }

    #[test]
    fn heatmap_has_exactly_one_peak_cell() {
        let gt = BBox::new(30.0, 40.0, 20.0, 26.0);
        let target = make_target(&gt, 128, 16).unwrap();
        let peaks = target.heatmap.data().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(peaks, 1);
        assert!(target.heatmap.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(target.mask.data().iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn heads_and_losses_pass_gradcheck() {
        let hc = HeadsConfig { depth: 2, window_gamma: 0.0 };
        let mut store32 = ParamStore::new();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        init_params(&mut store32, 6, &hc, &mut rng).unwrap();
        // move final convs off zero so every path carries gradient
        for name in ["heads.cls.final", "heads.off.final", "heads.size.final"] {
            let e = store32.get_mut(&format!("{name}.w")).unwrap();
            let fresh = Tensor::<f32>::uniform(e.value.shape(), -0.3, 0.3, &mut rng);
            e.value = fresh;
        }
        let mut store = store32.cast::<f64>();
        let gt = BBox::new(6.0, 9.0, 10.0, 12.0);
        let target = make_target(&gt, 32, 4).unwrap();
        let deep = Tensor::<f64>::uniform(&[6, 4, 4], -1.0, 1.0, &mut rng);
        let shallow = Tensor::<f64>::uniform(&[6, 4, 4], -1.0, 1.0, &mut rng);
        let lc = lcfg();
        let report = gradcheck(
            |g, store| {
                let dv = g.input(deep.clone());
                let sv = g.input(shallow.clone());
                let pred = predict(g, store, &hc, dv, sv)?;
                let lv = total_loss(g, &pred, &target, &lc)?;
                Ok(lv.total)
            },
            &mut store,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {:e} at {:?}", report.max_rel_err, report.worst);
    }
}
