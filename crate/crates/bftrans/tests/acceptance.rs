//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them). Heavy tests share a
//! lock so wall-clock gates are measured without interference.
//!
//! Oracles in this file are independent loop implementations; they never
//! call into the graph kernels they check.

use bftrans::bbox::{giou, BBox};
use bftrans::config::RunConfig;
use bftrans::heads;
use bftrans::model::{self, Variant};
use bftrans::tensor::{Graph, ParamStore, Tensor};
use bftrans::{ablate, data, eval, fusion, selftest, tape, tracker, train};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy_lock() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn tmp_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("bftrans-accept-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&d).ok();
    std::fs::create_dir_all(&d).unwrap();
    d
}

// ---------------------------------------------------------------------------
// Criterion 1: gradcheck --scope all passes at 1e-4 over >= 3 seeds, <= 5 min.
#[test]
fn criterion_1_gradient_correctness() {
    let _g = heavy_lock();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in [1u64, 2, 3] {
        let report = selftest::gradcheck_scope("all", seed, 1e-4).unwrap();
        worst = worst.max(report.max_rel_err);
        assert!(
            report.passed(),
            "seed {seed}: max rel err {:e} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed <= 300.0, "gradcheck took {elapsed:.0}s, budget 300s");
    println!(
        "ACCEPTANCE 1 gradient_correctness: PASS max_rel_err={worst:.3e} over 3 seeds in {elapsed:.1}s"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: matmul, conv2d, correlation, linear attention, and TAPE match
// independent loop oracles within 1e-5 on >= 50 random instances each.

fn oracle_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Tensor::from_fn(&[m, n], |i| {
        let mut acc = 0.0f32;
        for p in 0..k {
            acc += a.at(&[i[0], p]) * b.at(&[p, i[1]]);
        }
        acc
    })
}

fn oracle_conv(x: &Tensor, w: &Tensor, s: usize, p: usize) -> Tensor {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (wd + 2 * p - kw) / s + 1;
    Tensor::from_fn(&[o, oh, ow], |i| {
        let mut acc = 0.0f32;
        for ic in 0..c {
            for u in 0..kh {
                for v in 0..kw {
                    let yy = (i[1] * s + u) as isize - p as isize;
                    let xx = (i[2] * s + v) as isize - p as isize;
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < wd as isize {
                        acc += x.at(&[ic, yy as usize, xx as usize]) * w.at(&[i[0], ic, u, v]);
                    }
                }
            }
        }
        acc
    })
}

fn oracle_corr(x: &Tensor, z: &Tensor) -> Tensor {
    let (c, hx, wx) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (hz, wz) = (z.shape()[1], z.shape()[2]);
    let (pbh, pbw) = ((hz - 1) / 2, (wz - 1) / 2);
    Tensor::from_fn(&[c, hx, wx], |i| {
        let mut acc = 0.0f32;
        for u in 0..hz {
            for v in 0..wz {
                let yy = (i[1] + u) as isize - pbh as isize;
                let xx = (i[2] + v) as isize - pbw as isize;
                if yy >= 0 && yy < hx as isize && xx >= 0 && xx < wx as isize {
                    acc += x.at(&[i[0], yy as usize, xx as usize]) * z.at(&[i[0], u, v]);
                }
            }
        }
        acc
    })
}

// Direct evaluation of the separable attention formula in f64.
fn oracle_attention(x: &Tensor, store: &ParamStore<f32>, prefix: &str) -> Tensor {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let get = |name: &str| &store.get(&format!("{prefix}.{name}")).unwrap().value;
    let lin = |row: &[f64], w: &Tensor, b: &Tensor| -> Vec<f64> {
        let out_d = w.shape()[1];
        (0..out_d)
            .map(|j| {
                let mut acc = b.data()[j] as f64;
                for (c, &v) in row.iter().enumerate() {
                    acc += v * w.at(&[c, j]) as f64;
                }
                acc
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..d).map(|c| x.at(&[i, c]) as f64).collect())
        .collect();
    let scores: Vec<f64> = rows.iter().map(|r| lin(r, get("q.w"), get("q.b"))[0]).collect();
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let keys: Vec<Vec<f64>> = rows.iter().map(|r| lin(r, get("k.w"), get("k.b"))).collect();
    let mut ctx = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            ctx[j] += weights[i] * keys[i][j];
        }
    }
    let e = get("ffn.fc1.w").shape()[1];
    Tensor::from_fn(&[n, d], |idx| {
        let i = idx[0];
        let vals: Vec<f64> = lin(&rows[i], get("v.w"), get("v.b"))
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let gated: Vec<f64> = vals.iter().zip(&ctx).map(|(v, c)| v * c).collect();
        let att = lin(&gated, get("o.w"), get("o.b"));
        let res: Vec<f64> = rows[i].iter().zip(&att).map(|(a, b)| a + b).collect();
        let hid: Vec<f64> = lin(&res, get("ffn.fc1.w"), get("ffn.fc1.b"))
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let _ = e;
        let ff = lin(&hid, get("ffn.fc2.w"), get("ffn.fc2.b"));
        (res[idx[1]] + ff[idx[1]]) as f32
    })
}

fn oracle_tape(f: &Tensor, store: &ParamStore<f32>, prefix: &str, kernel: usize, mult: bool) -> Tensor {
    let (d, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let get = |name: &str| &store.get(&format!("{prefix}.{name}")).unwrap().value;
    let mut pooled = vec![0.0f64; d];
    for c in 0..d {
        let mut mx = f64::NEG_INFINITY;
        let mut s = 0.0;
        for i in 0..h {
            for j in 0..w {
                let v = f.at(&[c, i, j]) as f64;
                mx = mx.max(v);
                s += v;
            }
        }
        pooled[c] = mx + s / (h * w) as f64;
    }
    let (w1, b1, w2, b2) = (get("mlp.fc1.w"), get("mlp.fc1.b"), get("mlp.fc2.w"), get("mlp.fc2.b"));
    let hid = w1.shape()[1];
    let hvec: Vec<f64> = (0..hid)
        .map(|k| {
            let mut acc = b1.data()[k] as f64;
            for c in 0..d {
                acc += pooled[c] * w1.at(&[c, k]) as f64;
            }
            acc.max(0.0)
        })
        .collect();
    let wc: Vec<f64> = (0..d)
        .map(|c| {
            let mut acc = b2.data()[c] as f64;
            for k in 0..hid {
                acc += hvec[k] * w2.at(&[k, c]) as f64;
            }
            sig(acc)
        })
        .collect();
    let (cw, cb) = (get("conv.w"), get("conv.b").data()[0] as f64);
    let pad = (kernel - 1) / 2;
    let ws = Tensor::from_fn(&[h, w], |idx| {
        let mut acc = cb;
        for u in 0..kernel {
            for v in 0..kernel {
                let yy = (idx[0] + u) as isize - pad as isize;
                let xx = (idx[1] + v) as isize - pad as isize;
                if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                    continue;
                }
                let (yy, xx) = (yy as usize, xx as usize);
                let mut mx = f64::NEG_INFINITY;
                let mut s = 0.0;
                for c in 0..d {
                    let v2 = f.at(&[c, yy, xx]) as f64;
                    mx = mx.max(v2);
                    s += v2;
                }
                acc += mx * cw.at(&[0, 0, u, v]) as f64 + (s / d as f64) * cw.at(&[0, 1, u, v]) as f64;
            }
        }
        sig(acc) as f32
    });
    let alpha = get("alpha").data()[0] as f64;
    Tensor::from_fn(&[d, h, w], |idx| {
        let m = wc[idx[0]] * ws.at(&[idx[1], idx[2]]) as f64;
        let base = f.at(idx) as f64;
        let add = if mult { base * m } else { m };
        (base + alpha * add) as f32
    })
}

#[test]
fn criterion_2_oracle_equivalence() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(20);
    let mut worst = [0.0f64; 5];

    // 100 instances for the two core kernels, 50 for the composites
    for _ in 0..100 {
        let (m, k, n) = (
            1 + rng.random_range(0..9usize),
            1 + rng.random_range(0..9usize),
            1 + rng.random_range(0..9usize),
        );
        let a = Tensor::uniform(&[m, k], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[k, n], -1.0, 1.0, &mut rng);
        let want = oracle_matmul(&a, &b);
        let mut g = Graph::new();
        let av = g.input(a);
        let bv = g.input(b);
        let c = g.matmul(av, bv).unwrap();
        worst[0] = worst[0].max(g.value(c).max_abs_diff(&want));
    }

    for _ in 0..100 {
        let c = 1 + rng.random_range(0..3usize);
        let o = 1 + rng.random_range(0..3usize);
        let h = 5 + rng.random_range(0..7usize);
        let w = 5 + rng.random_range(0..7usize);
        let kk = [1, 3, 5][rng.random_range(0..3usize)];
        let s = 1 + rng.random_range(0..2usize);
        let p = rng.random_range(0..3usize);
        if h + 2 * p < kk || w + 2 * p < kk {
            continue;
        }
        let x = Tensor::uniform(&[c, h, w], -1.0, 1.0, &mut rng);
        let wt = Tensor::uniform(&[o, c, kk, kk], -1.0, 1.0, &mut rng);
        let want = oracle_conv(&x, &wt, s, p);
        let mut g = Graph::new();
        let xv = g.input(x);
        let wv = g.input(wt);
        let y = g.conv2d(xv, wv, s, p).unwrap();
        worst[1] = worst[1].max(g.value(y).max_abs_diff(&want));
    }

    for _ in 0..50 {
        let c = 1 + rng.random_range(0..4usize);
        let hx = 6 + rng.random_range(0..6usize);
        let wx = 6 + rng.random_range(0..6usize);
        let hz = 2 + rng.random_range(0..4usize);
        let wz = 2 + rng.random_range(0..4usize);
        let x = Tensor::uniform(&[c, hx, wx], -1.0, 1.0, &mut rng);
        let z = Tensor::uniform(&[c, hz, wz], -1.0, 1.0, &mut rng);
        let want = oracle_corr(&x, &z);
        let mut g = Graph::new();
        let xv = g.input(x);
        let zv = g.input(z);
        let y = g.corr_grouped(xv, zv, 1).unwrap();
        worst[2] = worst[2].max(g.value(y).max_abs_diff(&want));
    }

    for i in 0..50u64 {
        let d = 2 + rng.random_range(0..6usize);
        let n = 1 + rng.random_range(0..7usize);
        let mut store = ParamStore::new();
        let mut prng = Xoshiro256PlusPlus::seed_from_u64(500 + i);
        fusion::init_attention_params(&mut store, "blk", d, 2, &mut prng).unwrap();
        for j in 0..store.len() {
            let t = &mut store.entry_mut(j).value;
            *t = Tensor::uniform(t.shape(), -0.5, 0.5, &mut prng);
        }
        let x = Tensor::uniform(&[n, d], -1.0, 1.0, &mut rng);
        let want = oracle_attention(&x, &store, "blk");
        let mut g = Graph::new();
        let xv = g.input(x);
        let y = fusion::linear_self_attention(&mut g, &store, "blk", xv).unwrap();
        worst[3] = worst[3].max(g.value(y).max_abs_diff(&want));
    }

    for i in 0..50u64 {
        let d = [4, 8][rng.random_range(0..2usize)];
        let h = 2 + rng.random_range(0..5usize);
        let w = 2 + rng.random_range(0..5usize);
        let tcfg = tape::TapeConfig {
            enabled: true,
            ratio: 2,
            kernel: 3,
            multiplicative: i % 5 == 0,
            alpha_init: 0.6,
            in_self: false,
        };
        let mut store = ParamStore::new();
        let mut prng = Xoshiro256PlusPlus::seed_from_u64(900 + i);
        tape::init_params(&mut store, "t", d, &tcfg, &mut prng).unwrap();
        let f = Tensor::uniform(&[d, h, w], -1.5, 1.5, &mut rng);
        let want = oracle_tape(&f, &store, "t", tcfg.kernel, tcfg.multiplicative);
        let mut g = Graph::new();
        let fv = g.input(f);
        let y = tape::encode(&mut g, &store, "t", fv, &tcfg).unwrap();
        worst[4] = worst[4].max(g.value(y).max_abs_diff(&want));
    }

    for (name, w) in ["matmul", "conv2d", "correlation", "attention", "tape"]
        .iter()
        .zip(worst)
    {
        assert!(w < 1e-5, "{name} oracle max diff {w:e}");
    }
    println!(
        "ACCEPTANCE 2 oracle_equivalence: PASS matmul={:.1e} conv={:.1e} corr={:.1e} attn={:.1e} tape={:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: TAPE identity at alpha = 0 (bit-exact) and exactly-0.5 weights
// with zero parameters.
#[test]
fn criterion_3_tape_identity() {
    let tcfg = tape::TapeConfig {
        enabled: true,
        ratio: 4,
        kernel: 7,
        multiplicative: false,
        alpha_init: 0.0,
        in_self: false,
    };
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(30);
    let mut store = ParamStore::new();
    tape::init_params(&mut store, "t", 16, &tcfg, &mut rng).unwrap();
    let f = Tensor::uniform(&[16, 8, 8], -3.0, 3.0, &mut rng);
    let mut g = Graph::new();
    let fv = g.input(f.clone());
    let out = tape::encode(&mut g, &store, "t", fv, &tcfg).unwrap();
    assert!(
        g.value(out)
            .data()
            .iter()
            .zip(f.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()),
        "alpha = 0 is not a bit-exact identity"
    );

    for i in 0..store.len() {
        for v in store.entry_mut(i).value.data_mut() {
            *v = 0.0;
        }
    }
    let mut g = Graph::new();
    let fv = g.input(f);
    let wc = tape::channel_weights(&mut g, &store, "t", fv).unwrap();
    let ws = tape::spatial_weights(&mut g, &store, "t", fv, &tcfg).unwrap();
    assert!(g.value(wc).data().iter().all(|&v| v == 0.5));
    assert!(g.value(ws).data().iter().all(|&v| v == 0.5));
    println!("ACCEPTANCE 3 tape_identity: PASS bit-exact identity and exact 0.5 weights");
}

// ---------------------------------------------------------------------------
// Criterion 4: every context-weight softmax sums to 1 +- 1e-6 across 100
// random full-model forward passes.
#[test]
fn criterion_4_attention_normalization() {
    let rc = RunConfig::gradcheck_preset();
    let cfg = rc.model_config();
    let store = model::init_params(&cfg, 40).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(41);
    let mut worst = 0.0f64;
    let mut vectors = 0usize;
    for _ in 0..100 {
        let t = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let s = Tensor::uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let mut g = Graph::new();
        model::forward(&mut g, &store, &cfg, t, s).unwrap();
        let sums = g.softmax_lane_sums();
        assert!(!sums.is_empty());
        for v in sums {
            vectors += 1;
            worst = worst.max((v - 1.0).abs());
        }
    }
    assert!(worst <= 1e-6, "softmax sum deviation {worst:e}");
    println!(
        "ACCEPTANCE 4 attention_normalization: PASS {vectors} weight vectors, worst |sum-1|={worst:.2e}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: GIoU hand values and the exact loss composition.
#[test]
fn criterion_5_loss_sanity() {
    let a = BBox::new(3.0, 4.0, 10.0, 6.0);
    assert!((1.0 - giou(&a, &a)).abs() <= 1e-6);

    let b1 = BBox::new(0.0, 0.0, 1.0, 1.0);
    let b2 = BBox::new(2.0, 0.0, 1.0, 1.0);
    assert!(((1.0 - giou(&b1, &b2)) - 4.0 / 3.0).abs() <= 1e-6);

    // the same two values through the differentiable path
    let gt = BBox::new(2.0, 0.0, 1.0, 1.0);
    let target = heads::make_target(&gt, 4, 4).unwrap();
    let (ci, cj) = target.cell;
    let mut offset = Tensor::zeros(&[2, 4, 4]);
    offset.set(&[0, ci, cj], (0.5 / 4.0 - (cj as f64 + 0.5) / 4.0) as f32);
    offset.set(&[1, ci, cj], (0.5 / 4.0 - (ci as f64 + 0.5) / 4.0) as f32);
    let logit_quarter = (0.25f64 / 0.75).ln() as f32;
    let size = Tensor::full(&[2, 4, 4], logit_quarter);
    let mut g = Graph::<f32>::new();
    let ov = g.input(offset);
    let sv = g.input(size);
    let l = heads::giou_loss(&mut g, ov, sv, &target).unwrap();
    assert!((g.value(l).data()[0] as f64 - 4.0 / 3.0).abs() <= 1e-5);

    let total = heads::combine_losses(0.7, 0.1, 0.2, 2.0, 5.0);
    assert_eq!(total, 0.7 + 2.0 * 0.1 + 5.0 * 0.2);
    assert!((total - 1.9).abs() < 1e-12);
    println!("ACCEPTANCE 5 loss_sanity: PASS giou 0 / 4/3, composition 1.9 exact");
}

// ---------------------------------------------------------------------------
// Criterion 6: metric golden values.
#[test]
fn criterion_6_metric_goldens() {
    let gt: Vec<BBox> = (0..7)
        .map(|i| BBox::new(i as f64 * 3.0, 5.0, 12.0, 9.0))
        .collect();
    let s = eval::success_curve(&gt, &gt).unwrap();
    let p = eval::precision_curve(&gt, &gt).unwrap();
    assert_eq!(s.auc, 1.0, "perfect success AUC");
    assert_eq!(p.p20, Some(1.0), "perfect P@20");

    let off: Vec<BBox> = gt.iter().map(|b| BBox::new(b.x + 25.0, b.y, b.w, b.h)).collect();
    let p25 = eval::precision_curve(&off, &gt).unwrap();
    assert_eq!(p25.p20, Some(0.0), "25px offset P@20 must be exactly 0");
    println!("ACCEPTANCE 6 metric_goldens: PASS perfect=1.0/1.0, 25px offset P@20=0.0");
}

// ---------------------------------------------------------------------------
// Criterion 7: desk-scale end-to-end. Train the full variant (30 epochs x
// 500 pairs, batch 8, <= 60 min), then on 3 held-out sequences at least 80%
// of frames must reach IoU >= 0.5.
#[test]
fn criterion_7_desk_end_to_end() {
    let _g = heavy_lock();
    let dir = tmp_dir("e2e");
    let cfg = RunConfig::desk();
    let (train_set, test_set) = data::generate_suite(&dir, cfg.seed).unwrap();

    let mcfg = cfg.model_config();
    assert_eq!(mcfg.variant, Variant::Full);
    assert_eq!(cfg.train.epochs, 30);
    assert_eq!(cfg.train.pairs_per_epoch, 500);
    assert_eq!(cfg.train.batch_size, 8);

    let mut store = model::init_params(&mcfg, cfg.seed).unwrap();
    let start = Instant::now();
    let rows = train::train(&mut store, &mcfg, &train_set, &cfg.train, None, None).unwrap();
    let train_secs = start.elapsed().as_secs_f64();
    assert!(train_secs <= 3600.0, "training took {train_secs:.0}s, budget 3600s");

    // measured convergence gate: median loss of the last 50 iterations under
    // half the median of the first 50
    let median = |slice: &[train::LossRow]| {
        let mut v: Vec<f64> = slice.iter().map(|r| r.loss).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let first50 = median(&rows[..50]);
    let last50 = median(&rows[rows.len() - 50..]);
    assert!(
        last50 < 0.5 * first50,
        "convergence gate: last-50 median {last50:.3} vs first-50 median {first50:.3}"
    );

    let mut total = 0usize;
    let mut hits = 0usize;
    for seq in &test_set {
        let pred = tracker::track_sequence(seq, &store, &mcfg, None).unwrap();
        for (p, g) in pred.iter().zip(&seq.boxes) {
            total += 1;
            if bftrans::bbox::iou(p, g) >= 0.5 {
                hits += 1;
            }
        }
    }
    let frac = hits as f64 / total as f64;
    let final_loss = rows.last().unwrap().loss;

    // trained-model behavior on a static target: re-detecting the init frame
    // keeps IoU >= 0.5, and over 50 identical frames the per-frame center
    // drift stays within one stride
    let static_seq = data::SequenceDataset {
        name: "static".into(),
        frames: vec![test_set[0].frames[0].clone(); 50],
        boxes: vec![test_set[0].boxes[0]; 50],
        tags: vec![],
    };
    let static_pred = tracker::track_sequence(&static_seq, &store, &mcfg, None).unwrap();
    let reinit_iou = bftrans::bbox::iou(&static_pred[1], &static_seq.boxes[0]);
    assert!(reinit_iou >= 0.5, "re-detection IoU {reinit_iou:.3} on the init frame");
    let stride = (mcfg.backbone.search_size / mcfg.backbone.search_grid()) as f64;
    for w in static_pred.windows(2).skip(1) {
        let drift = w[0].center_distance(&w[1]);
        assert!(drift <= stride, "static-target drift {drift:.2}px exceeds stride {stride}");
    }

    std::fs::remove_dir_all(&dir).ok();
    assert!(
        frac >= 0.8,
        "IoU>=0.5 on {:.1}% of frames (need 80%), final loss {final_loss:.3}",
        frac * 100.0
    );
    println!(
        "ACCEPTANCE 7 desk_end_to_end: PASS IoU>=0.5 on {:.1}% of {total} held-out frames, trained {} iters in {train_secs:.0}s, final loss {final_loss:.3}, re-detect IoU {reinit_iou:.2}",
        frac * 100.0,
        rows.len()
    );
}

// ---------------------------------------------------------------------------
// Criterion 8 (soft gate): ablation ordering averaged over 3 seeds at a
// reduced training budget. A violated ordering is reported, not failed.
#[test]
fn criterion_8_ablation_direction() {
    let _g = heavy_lock();
    let dir = tmp_dir("ablation");
    let mut cfg = RunConfig::desk();
    // reduced budget so 15 trainings stay tractable; structure unchanged
    cfg.train.epochs = 8;
    cfg.train.pairs_per_epoch = 240;
    let (train_set, test_set) = data::generate_suite(&dir, 7).unwrap();

    let mut mean = std::collections::BTreeMap::new();
    for seed in [1u64, 2, 3] {
        cfg.set_seed(seed);
        for variant in Variant::ALL {
            let row = ablate::run_variant(&cfg, variant, &train_set, &test_set).unwrap();
            *mean.entry(variant.as_str()).or_insert(0.0) += row.success / 3.0;
        }
    }
    std::fs::remove_dir_all(&dir).ok();

    let s = |v: &str| mean[v];
    let tol = 0.01;
    let ok_full = s("full") >= s("bidir") - tol;
    let ok_bidir = s("bidir") >= s("ffm").max(s("bfm")) - tol;
    let ok_single = s("ffm").max(s("bfm")) >= s("baseline") - tol;
    let verdict = if ok_full && ok_bidir && ok_single { "PASS" } else { "SOFT-FAIL (reported, not blocking)" };
    println!(
        "ACCEPTANCE 8 ablation_direction: {verdict} success means: baseline={:.3} ffm={:.3} bfm={:.3} bidir={:.3} full={:.3}",
        s("baseline"), s("ffm"), s("bfm"), s("bidir"), s("full")
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: two `ablate` runs with identical seeds produce byte-identical
// tables (exercised through the real binary).
#[test]
fn criterion_9_ablate_determinism() {
    let _g = heavy_lock();
    let dir = tmp_dir("determinism");
    let suite = dir.join("suite");
    let (_, _) = data::generate_suite(&suite, 3).unwrap();
    let cfg_path = dir.join("micro.ini");
    std::fs::write(
        &cfg_path,
        "[run]\npreset = desk\nseed = 3\n\n[train]\nepochs = 1\npairs_per_epoch = 16\nbatch_size = 4\n",
    )
    .unwrap();

    let bin = env!("CARGO_BIN_EXE_bftrans");
    let run = |out: &std::path::Path| {
        let status = std::process::Command::new(bin)
            .args([
                "ablate",
                "--data",
                suite.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--config",
                cfg_path.to_str().unwrap(),
                "--seed",
                "3",
            ])
            .status()
            .unwrap();
        assert!(status.success(), "ablate exited nonzero");
        std::fs::read(out).unwrap()
    };
    let a = run(&dir.join("table_a.csv"));
    let b = run(&dir.join("table_b.csv"));
    assert!(!a.is_empty());
    assert_eq!(a, b, "ablation tables differ between identical runs");
    std::fs::remove_dir_all(&dir).ok();
    println!(
        "ACCEPTANCE 9 ablate_determinism: PASS byte-identical tables ({} bytes)",
        a.len()
    );
}
