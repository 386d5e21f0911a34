//! Target-aware positional encoding.
//!
//! Channel weights come from spatially pooled features pushed through a
//! two-layer MLP; spatial weights from channel-pooled planes pushed through a
//! k x k convolution. Their broadcast product re-weights the feature map
//! through a residual scaled by the learnable `alpha`, which starts at zero
//! so the block begins as an exact identity.

use crate::error::{dim_err, Result};
use crate::layers::{conv_init, conv_layer, linear_init, linear_tokens};
use crate::tensor::{Graph, ParamStore, PoolKind, Scalar, Tensor, Var};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct TapeConfig {
    pub enabled: bool,
    /// MLP reduction ratio; hidden width is max(1, d / ratio).
    pub ratio: usize,
    /// Spatial conv kernel extent, odd.
    pub kernel: usize,
    /// Gate the features multiplicatively instead of adding the raw
    /// modulation map.
    pub multiplicative: bool,
    pub alpha_init: f64,
    /// Also encode keys inside the self-attention blocks.
    pub in_self: bool,
}

impl TapeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratio == 0 {
            return dim_err("tape.ratio must be positive");
        }
        if self.kernel % 2 == 0 {
            return dim_err(format!("tape.kernel must be odd, got {}", self.kernel));
        }
        Ok(())
    }

    pub fn hidden(&self, d: usize) -> usize {
        (d / self.ratio).max(1)
    }
}

pub fn init_params(
    store: &mut ParamStore<f32>,
    prefix: &str,
    d: usize,
    cfg: &TapeConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    cfg.validate()?;
    let hidden = cfg.hidden(d);
    linear_init(store, &format!("{prefix}.mlp.fc1"), d, hidden, rng)?;
    linear_init(store, &format!("{prefix}.mlp.fc2"), hidden, d, rng)?;
    conv_init(store, &format!("{prefix}.conv"), 1, 2, cfg.kernel, cfg.kernel, rng)?;
    store.insert(
        &format!("{prefix}.alpha"),
        Tensor::scalar(cfg.alpha_init as f32),
    )?;
    Ok(())
}

/// `W_c = sigmoid(MLP(maxpool_hw(F) + avgpool_hw(F)))`, shape `[d,1,1]`.
pub fn channel_weights<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    prefix: &str,
    f: Var,
) -> Result<Var> {
    let s = g.value(f).shape().to_vec();
    if s.len() != 3 {
        return dim_err(format!("channel_weights wants [d,h,w], got {s:?}"));
    }
    let d = s[0];
    let mx = g.pool_spatial(f, PoolKind::Max)?;
    let av = g.pool_spatial(f, PoolKind::Avg)?;
    let pooled = g.add(mx, av)?;
    let row = g.reshape(pooled, &[1, d])?;
    let h = linear_tokens(g, store, &format!("{prefix}.mlp.fc1"), row)?;
    let h = g.relu(h);
    let out = linear_tokens(g, store, &format!("{prefix}.mlp.fc2"), h)?;
    let out = g.sigmoid(out);
    g.reshape(out, &[d, 1, 1])
}

/// `W_s = sigmoid(Conv(concat(maxpool_c(F), avgpool_c(F))))`, shape `[1,h,w]`.
pub fn spatial_weights<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    prefix: &str,
    f: Var,
    cfg: &TapeConfig,
) -> Result<Var> {
    let s = g.value(f).shape().to_vec();
    if s.len() != 3 {
        return dim_err(format!("spatial_weights wants [d,h,w], got {s:?}"));
    }
    let cm = g.pool_channel(f, PoolKind::Max)?;
    let ca = g.pool_channel(f, PoolKind::Avg)?;
    let both = g.concat(cm, ca, 0)?;
    let conv = conv_layer(g, store, &format!("{prefix}.conv"), both, 1, (cfg.kernel - 1) / 2)?;
    Ok(g.sigmoid(conv))
}

/// `F' = F + alpha * (W_c (x) W_s)`; the broadcast outer product gives a
/// full `[d,h,w]` modulation map. The multiplicative variant gates F by the
/// map before the residual.
pub fn encode<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    prefix: &str,
    f: Var,
    cfg: &TapeConfig,
) -> Result<Var> {
    let s = g.value(f).shape().to_vec();
    let (d, h, w) = (s[0], s[1], s[2]);
    let wc = channel_weights(g, store, prefix, f)?;
    let ws = spatial_weights(g, store, prefix, f, cfg)?;
    let wc_col = g.reshape(wc, &[d, 1])?;
    let ws_row = g.reshape(ws, &[1, h * w])?;
    let outer = g.matmul(wc_col, ws_row)?;
    let modulation = g.reshape(outer, &[d, h, w])?;
    let addend = if cfg.multiplicative {
        g.mul(f, modulation)?
    } else {
        modulation
    };
    let alpha = g.param(store, &format!("{prefix}.alpha"))?;
    let scaled = g.scale(addend, alpha)?;
    g.add(f, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn cfg() -> TapeConfig {
        TapeConfig {
            enabled: true,
            ratio: 4,
            kernel: 7,
            multiplicative: false,
            alpha_init: 0.0,
            in_self: false,
        }
    }

    fn init(d: usize, seed: u64, c: &TapeConfig) -> ParamStore<f32> {
        let mut store = ParamStore::new();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        init_params(&mut store, "tape", d, c, &mut rng).unwrap();
        store
    }

    fn zero_store(d: usize, c: &TapeConfig) -> ParamStore<f32> {
        let mut store = init(d, 0, c);
        for i in 0..store.len() {
            let alpha = store.entry(i).name.ends_with(".alpha");
            for v in store.entry_mut(i).value.data_mut() {
                *v = 0.0;
            }
            if alpha {
                store.entry_mut(i).value.data_mut()[0] = 0.0;
            }
        }
        store
    }

    // Loop oracle: pools, dense layers, conv, sigmoid, broadcast combine.
    fn encode_oracle(f: &Tensor<f32>, store: &ParamStore<f32>, c: &TapeConfig) -> Tensor<f32> {
        let (d, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        // channel weights
        let mut pooled = vec![0.0f64; d];
        for ch in 0..d {
            let mut mx = f64::NEG_INFINITY;
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..w {
                    let v = f.at(&[ch, i, j]) as f64;
                    mx = mx.max(v);
                    s += v;
                }
            }
            pooled[ch] = mx + s / (h * w) as f64;
        }
        let w1 = &store.get("tape.mlp.fc1.w").unwrap().value;
        let b1 = &store.get("tape.mlp.fc1.b").unwrap().value;
        let w2 = &store.get("tape.mlp.fc2.w").unwrap().value;
        let b2 = &store.get("tape.mlp.fc2.b").unwrap().value;
        let hid = w1.shape()[1];
        let mut hvec = vec![0.0f64; hid];
        for k in 0..hid {
            let mut acc = b1.data()[k] as f64;
            for ch in 0..d {
                acc += pooled[ch] * w1.at(&[ch, k]) as f64;
            }
            hvec[k] = acc.max(0.0);
        }
        let mut wc = vec![0.0f64; d];
        for ch in 0..d {
            let mut acc = b2.data()[ch] as f64;
            for k in 0..hid {
                acc += hvec[k] * w2.at(&[k, ch]) as f64;
            }
            wc[ch] = sig(acc);
        }
        // spatial weights
        let cw = &store.get("tape.conv.w").unwrap().value;
        let cb = store.get("tape.conv.b").unwrap().value.data()[0] as f64;
        let k = c.kernel;
        let pad = (k - 1) / 2;
        let mut ws = Tensor::<f32>::zeros(&[h, w]);
        for i in 0..h {
            for j in 0..w {
                let mut acc = cb;
                for u in 0..k {
                    for v in 0..k {
                        let yy = (i + u) as isize - pad as isize;
                        let xx = (j + v) as isize - pad as isize;
                        if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let (yy, xx) = (yy as usize, xx as usize);
                        let mut mx = f64::NEG_INFINITY;
                        let mut s = 0.0;
                        for ch in 0..d {
                            let v2 = f.at(&[ch, yy, xx]) as f64;
                            mx = mx.max(v2);
                            s += v2;
                        }
                        acc += mx * cw.at(&[0, 0, u, v]) as f64;
                        acc += (s / d as f64) * cw.at(&[0, 1, u, v]) as f64;
                    }
                }
                ws.set(&[i, j], sig(acc) as f32);
            }
        }
        let alpha = store.get("tape.alpha").unwrap().value.data()[0] as f64;
        Tensor::from_fn(&[d, h, w], |idx| {
            let (ch, i, j) = (idx[0], idx[1], idx[2]);
            let m = wc[ch] * ws.at(&[i, j]) as f64;
            let base = f.at(&[ch, i, j]) as f64;
            let add = if c.multiplicative { base * m } else { m };
            (base + alpha * add) as f32
        })
    }

    #[test]
    fn zero_mlp_gives_half_channel_weights_exactly() {
        let c = cfg();
        let store = zero_store(8, &c);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let mut g = Graph::new();
        let f = g.input(Tensor::uniform(&[8, 5, 6], -2.0, 2.0, &mut rng));
        let wc = channel_weights(&mut g, &store, "tape", f).unwrap();
        assert_eq!(g.value(wc).shape(), &[8, 1, 1]);
        assert!(g.value(wc).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_conv_gives_half_spatial_weights_exactly() {
        let c = cfg();
        let store = zero_store(8, &c);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let mut g = Graph::new();
        let f = g.input(Tensor::uniform(&[8, 5, 6], -2.0, 2.0, &mut rng));
        let ws = spatial_weights(&mut g, &store, "tape", f, &c).unwrap();
        assert_eq!(g.value(ws).shape(), &[1, 5, 6]);
        assert!(g.value(ws).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_channel_pools_reproduce_the_plane() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let f = Tensor::<f32>::uniform(&[1, 4, 4], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let fv = g.input(f.clone());
        let mx = g.pool_channel(fv, PoolKind::Max).unwrap();
        let av = g.pool_channel(fv, PoolKind::Avg).unwrap();
        assert_eq!(g.value(mx).data(), f.data());
        assert_eq!(g.value(av).data(), f.data());
    }

    #[test]
    fn constant_map_pools_agree_and_oracle_matches() {
        let c = cfg();
        let store = init(8, 7, &c);
        let f = Tensor::<f32>::full(&[8, 4, 4], 0.75);
        let mut g = Graph::new();
        let fv = g.input(f.clone());
        let mx = g.pool_spatial(fv, PoolKind::Max).unwrap();
        let av = g.pool_spatial(fv, PoolKind::Avg).unwrap();
        assert_eq!(g.value(mx).data(), g.value(av).data());
        let out = encode(&mut g, &store, "tape", fv, &c).unwrap();
        let want = encode_oracle(&f, &store, &c);
        assert!(g.value(out).max_abs_diff(&want) < 1e-6);
    }

    #[test]
    fn alpha_zero_is_bit_exact_identity() {
        let c = cfg(); // alpha_init 0
        let store = init(16, 11, &c);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
        let f = Tensor::<f32>::uniform(&[16, 6, 5], -3.0, 3.0, &mut rng);
        let mut g = Graph::new();
        let fv = g.input(f.clone());
        let out = encode(&mut g, &store, "tape", fv, &c).unwrap();
        let same = g
            .value(out)
            .data()
            .iter()
            .zip(f.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }

    #[test]
    fn alpha_one_with_zero_params_adds_quarter() {
        let c = cfg();
        let mut store = zero_store(8, &c);
        store.get_mut("tape.alpha").unwrap().value.data_mut()[0] = 1.0;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(13);
        let f = Tensor::<f32>::uniform(&[8, 4, 4], -1.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let fv = g.input(f.clone());
        let out = encode(&mut g, &store, "tape", fv, &c).unwrap();
        for (o, i) in g.value(out).data().iter().zip(f.data()) {
            assert!((o - (i + 0.25)).abs() < 1e-7);
        }
    }

    #[test]
    fn random_instances_match_loop_oracle() {
        let c = cfg();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(21);
        for seed in 0..5u64 {
            let mut store = init(8, 100 + seed, &c);
            store.get_mut("tape.alpha").unwrap().value.data_mut()[0] = 0.7;
            let f = Tensor::<f32>::uniform(&[8, 6, 7], -1.5, 1.5, &mut rng);
            let mut g = Graph::new();
            let fv = g.input(f.clone());
            let out = encode(&mut g, &store, "tape", fv, &c).unwrap();
            let want = encode_oracle(&f, &store, &c);
            assert!(g.value(out).max_abs_diff(&want) < 1e-6);
        }
    }

    #[test]
    fn weights_stay_strictly_inside_unit_interval() {
        // typical feature magnitudes; f32 sigmoid saturates to exactly 0/1
        // once the pooled logits pass ~17, so the open-interval property is
        // checked where the arithmetic can express it
        let c = cfg();
        let store = init(8, 31, &c);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(32);
        for _ in 0..10 {
            let f = Tensor::<f32>::uniform(&[8, 5, 5], -3.0, 3.0, &mut rng);
            let mut g = Graph::new();
            let fv = g.input(f);
            let wc = channel_weights(&mut g, &store, "tape", fv).unwrap();
            let ws = spatial_weights(&mut g, &store, "tape", fv, &c).unwrap();
            for &v in g.value(wc).data().iter().chain(g.value(ws).data()) {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn residual_bounded_by_alpha() {
        let c = cfg();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(41);
        for seed in 0..5u64 {
            let mut store = init(4, 200 + seed, &c);
            let alpha = -1.5 + 3.0 * (seed as f32) / 4.0;
            store.get_mut("tape.alpha").unwrap().value.data_mut()[0] = alpha;
            let f = Tensor::<f32>::uniform(&[4, 5, 5], -2.0, 2.0, &mut rng);
            let mut g = Graph::new();
            let fv = g.input(f.clone());
            let out = encode(&mut g, &store, "tape", fv, &c).unwrap();
            assert!(g.value(out).max_abs_diff(&f) <= alpha.abs() as f64 + 1e-7);
        }
    }

    #[test]
    fn encode_passes_gradcheck() {
        let c = TapeConfig { alpha_init: 0.5, ..cfg() };
        let store32 = init(8, 51, &c);
        let mut store = store32.cast::<f64>();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(52);
        let f = Tensor::<f64>::uniform(&[8, 5, 5], -1.0, 1.0, &mut rng);
        let report = gradcheck(
            |g, store| {
                let fv = g.input(f.clone());
                let out = encode(g, store, "tape", fv, &c)?;
                let sq = g.mul(out, out)?;
                Ok(g.sum(sq))
            },
            &mut store,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {:e} at {:?}", report.max_rel_err, report.worst);
    }

    proptest::proptest! {
        // |F' - F| <= |alpha| for the additive form, any finite input
        #[test]
        fn residual_bound_property(
            vals in proptest::collection::vec(-5.0f32..5.0, 64),
            alpha in -2.0f32..2.0,
            seed in 0u64..1000,
        ) {
            let c = cfg();
            let mut store = init(4, seed, &c);
            store.get_mut("tape.alpha").unwrap().value.data_mut()[0] = alpha;
            let f = Tensor::new(vec![4, 4, 4], vals).unwrap();
            let mut g = Graph::new();
            let fv = g.input(f.clone());
            let out = encode(&mut g, &store, "tape", fv, &c).unwrap();
            proptest::prop_assert!(g.value(out).max_abs_diff(&f) <= alpha.abs() as f64 + 1e-6);
        }
    }

    #[test]
    fn multiplicative_variant_gates_features() {
        let c = TapeConfig { multiplicative: true, ..cfg() };
        let mut store = zero_store(4, &c);
        store.get_mut("tape.alpha").unwrap().value.data_mut()[0] = 1.0;
        let f = Tensor::full(&[4, 3, 3], 2.0f32);
        let mut g = Graph::new();
        let fv = g.input(f);
        let out = encode(&mut g, &store, "tape", fv, &c).unwrap();
        // F + 1.0 * (F * 0.25) = 2.5
        for &v in g.value(out).data() {
            assert!((v - 2.5).abs() < 1e-7);
        }
    }
}
