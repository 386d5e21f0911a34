//! Dataset-free runtime verification: oracle comparisons, identity and
//! normalization checks, metric golden values, and the finite-difference
//! sweeps behind the `gradcheck` subcommand.

use crate::bbox::{giou, BBox};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::{self, FusionConfig};
use crate::heads;
use crate::model;
use crate::tape::{self, TapeConfig};
use crate::tensor::{gradcheck, Graph, GradcheckReport, ParamStore, PoolKind, Tensor};
use crate::{data, eval};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use std::time::Instant;

pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Result<String>,
}

fn ok(msg: impl Into<String>) -> Result<String> {
    Ok(msg.into())
}

fn expect(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Contract(msg.to_string()))
    }
}

// ---- independent oracles (loop implementations, no graph machinery) -------

fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Tensor::from_fn(&[m, n], |idx| {
        let mut acc = 0.0f32;
        for p in 0..k {
            acc += a.at(&[idx[0], p]) * b.at(&[p, idx[1]]);
        }
        acc
    })
}

fn conv_oracle(x: &Tensor, w: &Tensor, s: usize, p: usize) -> Tensor {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (wd + 2 * p - kw) / s + 1;
    Tensor::from_fn(&[o, oh, ow], |idx| {
        let mut acc = 0.0f32;
        for ic in 0..c {
            for u in 0..kh {
                for v in 0..kw {
                    let yy = (idx[1] * s + u) as isize - p as isize;
                    let xx = (idx[2] * s + v) as isize - p as isize;
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < wd as isize {
                        acc += x.at(&[ic, yy as usize, xx as usize]) * w.at(&[idx[0], ic, u, v]);
                    }
                }
            }
        }
        acc
    })
}

fn corr_oracle(x: &Tensor, z: &Tensor) -> Tensor {
    let (c, hx, wx) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (hz, wz) = (z.shape()[1], z.shape()[2]);
    let (pbh, pbw) = ((hz - 1) / 2, (wz - 1) / 2);
    Tensor::from_fn(&[c, hx, wx], |idx| {
        let mut acc = 0.0f32;
        for u in 0..hz {
            for v in 0..wz {
                let yy = (idx[1] + u) as isize - pbh as isize;
                let xx = (idx[2] + v) as isize - pbw as isize;
                if yy >= 0 && yy < hx as isize && xx >= 0 && xx < wx as isize {
                    acc += x.at(&[idx[0], yy as usize, xx as usize]) * z.at(&[idx[0], u, v]);
                }
            }
        }
        acc
    })
}

// ---- individual checks -----------------------------------------------------

fn check_matmul_oracle() -> Result<String> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = Tensor::uniform(&[7, 5], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let want = matmul_oracle(&a, &b);
        let mut g = Graph::new();
        let av = g.input(a);
        let bv = g.input(b);
        let c = g.matmul(av, bv)?;
        worst = worst.max(g.value(c).max_abs_diff(&want));
    }
    expect(worst < 1e-6, &format!("matmul oracle diff {worst:e}"))?;
    ok(format!("20 instances, max diff {worst:.2e}"))
}

fn check_conv_oracle() -> Result<String> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(102);
    let mut worst = 0.0f64;
    for (s, p) in [(1, 1), (2, 1), (1, 0), (2, 2)] {
        for _ in 0..3 {
            let x = Tensor::uniform(&[3, 9, 8], -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut rng);
            let want = conv_oracle(&x, &w, s, p);
            let mut g = Graph::new();
            let xv = g.input(x);
            let wv = g.input(w);
            let y = g.conv2d(xv, wv, s, p)?;
            worst = worst.max(g.value(y).max_abs_diff(&want));
        }
    }
    expect(worst < 1e-5, &format!("conv oracle diff {worst:e}"))?;
    ok(format!("12 instances, max diff {worst:.2e}"))
}

fn check_corr_oracle() -> Result<String> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(103);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x = Tensor::uniform(&[4, 12, 11], -1.0, 1.0, &mut rng);
        let z = Tensor::uniform(&[4, 5, 4], -1.0, 1.0, &mut rng);
        let want = corr_oracle(&x, &z);
        let mut g = Graph::new();
        let xv = g.input(x);
        let zv = g.input(z);
        let y = g.corr_grouped(xv, zv, 1)?;
        worst = worst.max(g.value(y).max_abs_diff(&want));
    }
    expect(worst < 1e-5, &format!("correlation oracle diff {worst:e}"))?;
    ok(format!("10 instances, max diff {worst:.2e}"))
}

fn check_softmax_normalization() -> Result<String> {
    let rc = RunConfig::gradcheck_preset();
    let fcfg = rc.fusion.clone();
    let tcfg = TapeConfig { alpha_init: 0.5, ..rc.tape.clone() };
    let mut store = ParamStore::new();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(104);
    fusion::init_params(&mut store, 8, &fcfg, &tcfg, true, (true, true), &mut rng)?;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut g = Graph::new();
        let m3 = g.input(Tensor::uniform(&[8, 4, 4], -1.0, 1.0, &mut rng));
        let m4 = g.input(Tensor::uniform(&[8, 4, 4], -1.0, 1.0, &mut rng));
        fusion::fuse(&mut g, &store, m3, m4, &fcfg, &tcfg, true)?;
        for s in g.softmax_lane_sums() {
            worst = worst.max((s - 1.0).abs());
        }
    }
    expect(worst <= 1e-6, &format!("softmax sum deviation {worst:e}"))?;
    ok(format!("20 passes, worst |sum-1| = {worst:.2e}"))
}

fn check_tape_identity() -> Result<String> {
    let tcfg = TapeConfig {
        enabled: true,
        ratio: 4,
        kernel: 7,
        multiplicative: false,
        alpha_init: 0.0,
        in_self: false,
    };
    let mut store = ParamStore::new();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(105);
    tape::init_params(&mut store, "t", 16, &tcfg, &mut rng)?;
    let f = Tensor::uniform(&[16, 6, 6], -2.0, 2.0, &mut rng);
    let mut g = Graph::new();
    let fv = g.input(f.clone());
    let out = tape::encode(&mut g, &store, "t", fv, &tcfg)?;
    let bit_exact = g
        .value(out)
        .data()
        .iter()
        .zip(f.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    expect(bit_exact, "alpha = 0 encode is not bit-exact identity")?;

    // zero parameters: both weight maps exactly 0.5
    for i in 0..store.len() {
        for v in store.entry_mut(i).value.data_mut() {
            *v = 0.0;
        }
    }
    let mut g = Graph::new();
    let fv = g.input(f);
    let wc = tape::channel_weights(&mut g, &store, "t", fv)?;
    let ws = tape::spatial_weights(&mut g, &store, "t", fv, &tcfg)?;
    let all_half = g
        .value(wc)
        .data()
        .iter()
        .chain(g.value(ws).data())
        .all(|&v| v == 0.5);
    expect(all_half, "zero-parameter weights are not exactly 0.5")?;
    ok("alpha-0 identity bit-exact; zero-param weights exactly 0.5")
}

fn check_attention_identity() -> Result<String> {
    let mut store = ParamStore::new();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(106);
    fusion::init_attention_params(&mut store, "blk", 6, 2, &mut rng)?;
    let v = Tensor::uniform(&[5, 6], -1.0, 1.0, &mut rng);
    let q = Tensor::uniform(&[5, 6], -1.0, 1.0, &mut rng);
    let mut g = Graph::new();
    let qv = g.input(q);
    let vv = g.input(v.clone());
    let y = fusion::linear_cross_attention(&mut g, &store, "blk", qv, vv, (1, 5), None)?;
    expect(
        g.value(y).data() == v.data(),
        "zero-initialized cross block is not the identity on values",
    )?;
    ok("zero-init blocks start as identity")
}

fn check_giou_cases() -> Result<String> {
    let a = BBox::new(3.0, 4.0, 10.0, 6.0);
    expect((1.0 - giou(&a, &a)).abs() < 1e-6, "identical boxes giou != 1")?;
    let b1 = BBox::new(0.0, 0.0, 1.0, 1.0);
    let b2 = BBox::new(2.0, 0.0, 1.0, 1.0);
    let loss = 1.0 - giou(&b1, &b2);
    expect((loss - 4.0 / 3.0).abs() < 1e-6, &format!("disjoint giou loss {loss}"))?;
    let far = BBox::new(1e9, 0.0, 1.0, 1.0);
    expect(1.0 - giou(&b1, &far) > 1.999, "far separation loss below 2 limit")?;
    ok("identity -> 0, hand case 4/3, limit -> 2")
}

fn check_loss_composition() -> Result<String> {
    let total = heads::combine_losses(0.7, 0.1, 0.2, 2.0, 5.0);
    expect((total - 1.9).abs() < 1e-12, &format!("composition gave {total}"))?;
    ok("0.7 + 2*0.1 + 5*0.2 = 1.9")
}

fn check_decode_hand_case() -> Result<String> {
    let mut cls = Tensor::full(&[1, 8, 8], -10.0f32);
    cls.set(&[0, 3, 4], 10.0);
    let logit_quarter = (0.25f64 / 0.75).ln() as f32;
    let pred = heads::Prediction {
        cls,
        offset: Tensor::zeros(&[2, 8, 8]),
        size: Tensor::full(&[2, 8, 8], logit_quarter),
    };
    let b = heads::decode(&pred, 128, 16, None, 0.0)?;
    let (cx, cy) = b.center();
    expect(
        (cx - 72.0).abs() < 1e-3 && (cy - 56.0).abs() < 1e-3 && (b.w - 32.0).abs() < 1e-2,
        &format!("decode gave center ({cx},{cy}) box {}x{}", b.w, b.h),
    )?;
    ok("peak (3,4) on search 128 grid 8 -> center (72,56), box 32x32")
}

fn check_metric_goldens() -> Result<String> {
    let gt = vec![BBox::new(0.0, 0.0, 10.0, 10.0); 5];
    let s = eval::success_curve(&gt, &gt)?;
    let p = eval::precision_curve(&gt, &gt)?;
    expect(s.auc == 1.0 && p.p20 == Some(1.0), "perfect tracking != 1.0")?;
    let off: Vec<BBox> = gt.iter().map(|b| BBox::new(b.x + 25.0, b.y, b.w, b.h)).collect();
    let p25 = eval::precision_curve(&off, &gt)?;
    expect(p25.p20 == Some(0.0), "25px offset P@20 != 0")?;
    let far: Vec<BBox> = gt.iter().map(|b| BBox::new(b.x + 500.0, b.y, b.w, b.h)).collect();
    let s0 = eval::success_curve(&far, &gt)?;
    expect((s0.auc - 1.0 / 21.0).abs() < 1e-12, "zero-IoU AUC != 1/21")?;
    ok("perfect -> 1.0; 25px -> P@20 0; zero-IoU AUC = 1/21")
}

fn check_backward_basics() -> Result<String> {
    let mut store = ParamStore::<f32>::new();
    store.insert("p", Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0])?)?;
    store.insert("unused", Tensor::scalar(5.0))?;
    let mut g = Graph::new();
    let p = g.param(&store, "p")?;
    let _n = g.param(&store, "unused")?;
    let sq = g.mul(p, p)?;
    let loss = g.sum(sq);
    g.backward(loss)?;
    g.accumulate_param_grads(&mut store)?;
    let grad = store.get("p").unwrap().grad.data();
    let want = [2.0f32, -4.0, 1.0, 6.0];
    expect(grad == want, "d sum(p^2)/dp != 2p")?;
    expect(
        store.get("unused").unwrap().grad.data() == [0.0],
        "unused parameter grad not exactly zero",
    )?;
    ok("sum-of-squares grad = 2p; unused param grad = 0")
}

fn check_linear_cost_scaling() -> Result<String> {
    // informational: one separable block should scale ~linearly in tokens
    let mut store = ParamStore::new();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(108);
    fusion::init_attention_params(&mut store, "blk", 32, 2, &mut rng)?;
    let time_n = |n: usize, rng: &mut Xoshiro256PlusPlus| -> Result<f64> {
        let x = Tensor::uniform(&[n, 32], -1.0, 1.0, rng);
        let reps = 20;
        let start = Instant::now();
        for _ in 0..reps {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            fusion::linear_self_attention(&mut g, &store, "blk", xv)?;
        }
        Ok(start.elapsed().as_secs_f64() / reps as f64)
    };
    let _ = time_n(256, &mut rng)?; // warmup
    let t1 = time_n(512, &mut rng)?;
    let t2 = time_n(1024, &mut rng)?;
    ok(format!(
        "informational: doubling tokens 512->1024 scales wall time x{:.2}",
        t2 / t1.max(1e-12)
    ))
}

fn check_checkpoint_roundtrip() -> Result<String> {
    let dir = std::env::temp_dir().join(format!("bftrans-selftest-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("ckpt.bft");
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(109);
    let mut store = ParamStore::new();
    store.insert("a.w", Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng))?;
    store.insert("a.b", Tensor::uniform(&[4], -1.0, 1.0, &mut rng))?;
    store.save(&path)?;
    let back = ParamStore::load(&path)?;
    expect(back.len() == 2, "entry count changed")?;
    expect(
        back.get("a.w").unwrap().value.data() == store.get("a.w").unwrap().value.data(),
        "payload bits changed",
    )?;
    std::fs::remove_dir_all(&dir).ok();
    ok("2 entries, bit-exact payload")
}

fn check_ppm_roundtrip() -> Result<String> {
    let dir = std::env::temp_dir().join(format!("bftrans-selftest-ppm-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("t.ppm");
    let rgb: Vec<u8> = (0..12 * 10 * 3).map(|i| (i * 7 % 256) as u8).collect();
    data::ppm::write(&path, 12, 10, &rgb)?;
    let (w, h, back) = data::ppm::read(&path)?;
    expect(w == 12 && h == 10 && back == rgb, "ppm roundtrip altered bytes")?;
    std::fs::remove_dir_all(&dir).ok();
    ok("12x10 frame, all bytes preserved")
}

fn check_pool_ops() -> Result<String> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(110);
    let x = Tensor::uniform(&[5, 4, 3], -1.0, 1.0, &mut rng);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let cm = g.pool_channel(xv, PoolKind::Max)?;
    for i in 0..4 {
        for j in 0..3 {
            let mut want = f32::NEG_INFINITY;
            for c in 0..5 {
                want = want.max(x.at(&[c, i, j]));
            }
            expect(g.value(cm).at(&[0, i, j]) == want, "channel max pool mismatch")?;
        }
    }
    let sm = g.softmax(xv, 0)?;
    for s in g.softmax_lane_sums() {
        expect((s - 1.0).abs() < 1e-6, "softmax lane sum off")?;
    }
    let _ = sm;
    ok("channel pooling equals loop maxima; softmax lanes normalized")
}

/// Run every dataset-free invariant check.
pub fn run_all() -> Vec<CheckResult> {
    let checks: Vec<(&'static str, fn() -> Result<String>)> = vec![
        ("matmul_oracle", check_matmul_oracle),
        ("conv2d_oracle", check_conv_oracle),
        ("correlation_oracle", check_corr_oracle),
        ("softmax_normalization", check_softmax_normalization),
        ("tape_identity", check_tape_identity),
        ("attention_zero_init_identity", check_attention_identity),
        ("giou_cases", check_giou_cases),
        ("loss_composition", check_loss_composition),
        ("decode_hand_case", check_decode_hand_case),
        ("metric_goldens", check_metric_goldens),
        ("backward_basics", check_backward_basics),
        ("pool_and_softmax_ops", check_pool_ops),
        ("checkpoint_roundtrip", check_checkpoint_roundtrip),
        ("ppm_roundtrip", check_ppm_roundtrip),
        ("gradcheck_tape", || {
            gradcheck_scope("tape", 1, 1e-4).map(|r| format!("max rel err {:.2e}", r.max_rel_err))
        }),
        ("linear_attention_cost", check_linear_cost_scaling),
    ];
    checks
        .into_iter()
        .map(|(name, f)| CheckResult { name, outcome: f() })
        .collect()
}

/// Finite-difference verification entry point shared by the CLI and the
/// acceptance suite. Scopes: tensor | tape | fusion | heads | all.
pub fn gradcheck_scope(scope: &str, seed: u64, tol: f64) -> Result<GradcheckReport> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    match scope {
        "tensor" => {
            let mut store = ParamStore::<f64>::new();
            store.insert("w", Tensor::uniform(&[2, 2, 3, 3], -0.5, 0.5, &mut rng))?;
            store.insert("m", Tensor::uniform(&[2, 5], -0.5, 0.5, &mut rng))?;
            store.insert("s", Tensor::uniform(&[1], 0.3, 0.9, &mut rng))?;
            let x = Tensor::<f64>::uniform(&[2, 6, 6], -1.0, 1.0, &mut rng);
            gradcheck(
                move |g, store| {
                    let xv = g.input(x.clone());
                    let w = g.param(store, "w")?;
                    let y = g.conv2d(xv, w, 1, 1)?;
                    let y = g.relu(y);
                    let flat = g.reshape(y, &[2, 36])?;
                    let tokens = g.transpose2(flat)?;
                    let (lo, hi) = g.split(tokens, 0, 20)?;
                    let sm = g.softmax(lo, 0)?;
                    let m = g.param(store, "m")?;
                    let (m4, _) = g.split(m, 1, 2)?;
                    let mm = g.matmul(sm, m4)?;
                    let sg = g.sigmoid(mm);
                    let s = g.param(store, "s")?;
                    let sc = g.scale(sg, s)?;
                    let hsum = g.sum(hi);
                    let total = g.sum(sc);
                    let t = g.add(total, hsum)?;
                    let t = g.abs(t);
                    Ok(g.clamp(t, 0.0, 1e9))
                },
                &mut store,
                1e-4,
                tol,
            )
        }
        "tape" => {
            let tcfg = TapeConfig {
                enabled: true,
                ratio: 2,
                kernel: 3,
                multiplicative: false,
                alpha_init: 0.4,
                in_self: false,
            };
            let mut store32 = ParamStore::new();
            tape::init_params(&mut store32, "t", 8, &tcfg, &mut rng)?;
            let mut store = store32.cast::<f64>();
            let f = Tensor::<f64>::uniform(&[8, 5, 5], -1.0, 1.0, &mut rng);
            gradcheck(
                move |g, store| {
                    let fv = g.input(f.clone());
                    let out = tape::encode(g, store, "t", fv, &tcfg)?;
                    let sq = g.mul(out, out)?;
                    Ok(g.sum(sq))
                },
                &mut store,
                1e-4,
                tol,
            )
        }
        "fusion" => {
            let fcfg = FusionConfig {
                depth: 1,
                ffn_expansion: 2,
                share_streams: false,
                share_self: false,
            };
            let tcfg = TapeConfig {
                enabled: true,
                ratio: 2,
                kernel: 3,
                multiplicative: false,
                alpha_init: 0.3,
                in_self: false,
            };
            let mut store32 = ParamStore::new();
            fusion::init_params(&mut store32, 6, &fcfg, &tcfg, true, (true, true), &mut rng)?;
            let mut store = store32.cast::<f64>();
            let m3 = Tensor::<f64>::uniform(&[6, 3, 3], -1.0, 1.0, &mut rng);
            let m4 = Tensor::<f64>::uniform(&[6, 3, 3], -1.0, 1.0, &mut rng);
            gradcheck(
                move |g, store| {
                    let a = g.input(m3.clone());
                    let b = g.input(m4.clone());
                    let (x, y) = fusion::fuse(g, store, a, b, &fcfg, &tcfg, true)?;
                    let xs = g.mul(x, x)?;
                    let ys = g.mul(y, y)?;
                    let sx = g.sum(xs);
                    let sy = g.sum(ys);
                    g.add(sx, sy)
                },
                &mut store,
                1e-4,
                tol,
            )
        }
        "heads" => {
            let hcfg = heads::HeadsConfig { depth: 2, window_gamma: 0.0 };
            let lcfg = heads::LossConfig { lambda1: 2.0, lambda2: 5.0 };
            let mut store32 = ParamStore::new();
            heads::init_params(&mut store32, 6, &hcfg, &mut rng)?;
            for name in ["heads.cls.final", "heads.off.final", "heads.size.final"] {
                let e = store32.get_mut(&format!("{name}.w")).unwrap();
                let shape = e.value.shape().to_vec();
                e.value = Tensor::uniform(&shape, -0.3, 0.3, &mut rng);
            }
            let mut store = store32.cast::<f64>();
            let gt = BBox::new(6.0, 9.0, 10.0, 12.0);
            let target = heads::make_target(&gt, 32, 4)?;
            let deep = Tensor::<f64>::uniform(&[6, 4, 4], -1.0, 1.0, &mut rng);
            let shallow = Tensor::<f64>::uniform(&[6, 4, 4], -1.0, 1.0, &mut rng);
            gradcheck(
                move |g, store| {
                    let dv = g.input(deep.clone());
                    let sv = g.input(shallow.clone());
                    let pred = heads::predict(g, store, &hcfg, dv, sv)?;
                    let lv = heads::total_loss(g, &pred, &target, &lcfg)?;
                    Ok(lv.total)
                },
                &mut store,
                1e-4,
                tol,
            )
        }
        "all" => {
            let rc = RunConfig::gradcheck_preset();
            let cfg = rc.model_config();
            let store32 = model::init_params(&cfg, seed)?;
            let mut store = store32.cast::<f64>();
            let ts = rc.backbone.template_size;
            let ss = rc.backbone.search_size;
            let template = Tensor::<f64>::uniform(&[3, ts, ts], 0.0, 1.0, &mut rng);
            let search = Tensor::<f64>::uniform(&[3, ss, ss], 0.0, 1.0, &mut rng);
            let gt = BBox::new(
                ss as f64 * (0.2 + 0.3 * rng.random::<f64>()),
                ss as f64 * (0.2 + 0.3 * rng.random::<f64>()),
                ss as f64 * 0.25,
                ss as f64 * 0.2,
            );
            let target = heads::make_target(&gt, ss, rc.backbone.search_grid())?;
            gradcheck(
                move |g, store| {
                    let lv =
                        model::training_loss(g, store, &cfg, template.clone(), search.clone(), &target)?;
                    Ok(lv.total)
                },
                &mut store,
                1e-4,
                tol,
            )
        }
        other => Err(Error::Config(format!(
            "unknown gradcheck scope '{other}' (expected tensor|tape|fusion|heads|all)"
        ))),
    }
}
