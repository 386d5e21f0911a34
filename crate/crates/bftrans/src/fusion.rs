//! Bidirectional fusion transformer.
//!
//! Each stream fine-tunes the two correlation maps with 1x1 convs, joins them
//! along the token axis, runs linear (separable) self-attention, splits, and
//! cross-attends: the forward stream lets shallow tokens adjust deep values,
//! the backward stream the reverse. Attention is O(n): one scalar score per
//! token, softmax over tokens, a single shared context vector, ReLU-gated
//! values. Output projections and second feed-forward layers start at zero so
//! every block begins as an identity.

use crate::error::{dim_err, Result};
use crate::layers::{conv_init, conv_layer, linear_init, linear_init_zero, linear_tokens, map_to_tokens, tokens_to_map};
use crate::tape::{self, TapeConfig};
use crate::tensor::{Graph, ParamStore, Scalar, Var};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct FusionConfig {
    /// Number of stacked self-attention blocks before the split and
    /// cross-attention blocks after it.
    pub depth: usize,
    pub ffn_expansion: usize,
    /// One parameter set serves both streams.
    pub share_streams: bool,
    /// Both streams reuse one self-attention stack.
    pub share_self: bool,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.ffn_expansion == 0 {
            return dim_err("fusion depth and ffn_expansion must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamDir {
    /// Shallow queries adjust deep values, emitting the fused deep map.
    Forward,
    /// Deep queries adjust shallow values, emitting the fused shallow map.
    Backward,
}

/// Parameter scopes for one stream, resolved from the sharing flags.
#[derive(Clone, Debug)]
pub struct StreamScope {
    pub base: String,
    pub self_base: String,
}

pub fn stream_scopes(cfg: &FusionConfig) -> (StreamScope, StreamScope) {
    let (fwd_base, bwd_base) = if cfg.share_streams {
        ("fusion.shared".to_string(), "fusion.shared".to_string())
    } else {
        ("fusion.fwd".to_string(), "fusion.bwd".to_string())
    };
    let (fwd_self, bwd_self) = if cfg.share_self {
        ("fusion.selfshared".to_string(), "fusion.selfshared".to_string())
    } else {
        (fwd_base.clone(), bwd_base.clone())
    };
    (
        StreamScope { base: fwd_base, self_base: fwd_self },
        StreamScope { base: bwd_base, self_base: bwd_self },
    )
}

/// Initialize one attention block: scalar score projection, key/value
/// projections, zero output projection, and the feed-forward pair.
pub fn init_attention_params(
    store: &mut ParamStore<f32>,
    prefix: &str,
    d: usize,
    expansion: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    linear_init(store, &format!("{prefix}.q"), d, 1, rng)?;
    linear_init(store, &format!("{prefix}.k"), d, d, rng)?;
    linear_init(store, &format!("{prefix}.v"), d, d, rng)?;
    linear_init_zero(store, &format!("{prefix}.o"), d, d)?;
    linear_init(store, &format!("{prefix}.ffn.fc1"), d, d * expansion, rng)?;
    linear_init_zero(store, &format!("{prefix}.ffn.fc2"), d * expansion, d)?;
    Ok(())
}

/// Initialize every parameter the configured streams need. `tape_cross` adds
/// per-cross-block encoders, `tape_cfg.in_self` per-self-block encoders.
pub fn init_params(
    store: &mut ParamStore<f32>,
    d: usize,
    fcfg: &FusionConfig,
    tape_cfg: &TapeConfig,
    tape_cross: bool,
    streams: (bool, bool),
    rng: &mut impl Rng,
) -> Result<()> {
    fcfg.validate()?;
    let (fwd, bwd) = stream_scopes(fcfg);
    let mut scopes: Vec<&StreamScope> = Vec::new();
    if streams.0 {
        scopes.push(&fwd);
    }
    if streams.1 {
        scopes.push(&bwd);
    }
    let mut done_pre: Vec<String> = Vec::new();
    let mut done_self: Vec<String> = Vec::new();
    let mut done_cross: Vec<String> = Vec::new();
    for sc in scopes {
        if !done_pre.contains(&sc.base) {
            conv_init(store, &format!("{}.pre3", sc.base), d, d, 1, 1, rng)?;
            conv_init(store, &format!("{}.pre4", sc.base), d, d, 1, 1, rng)?;
            done_pre.push(sc.base.clone());
        }
        if !done_self.contains(&sc.self_base) {
            for i in 0..fcfg.depth {
                let p = format!("{}.self{i}", sc.self_base);
                init_attention_params(store, &p, d, fcfg.ffn_expansion, rng)?;
                if tape_cfg.in_self {
                    tape::init_params(store, &format!("{p}.tape"), d, tape_cfg, rng)?;
                }
            }
            done_self.push(sc.self_base.clone());
        }
        if !done_cross.contains(&sc.base) {
            for i in 0..fcfg.depth {
                let p = format!("{}.cross{i}", sc.base);
                init_attention_params(store, &p, d, fcfg.ffn_expansion, rng)?;
                if tape_cross {
                    tape::init_params(store, &format!("{p}.tape"), d, tape_cfg, rng)?;
                }
            }
            done_cross.push(sc.base.clone());
        }
    }
    Ok(())
}

// Separable attention core. Scores come from the score source, the context
// vector from the key source, gating and residuals from the value source.
fn attention_block<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    prefix: &str,
    score_src: Var,
    key_src: Var,
    value_src: Var,
) -> Result<Var> {
    let n = g.value(score_src).shape()[0];
    if n == 0 {
        return dim_err("attention over zero tokens");
    }
    let scores = linear_tokens(g, store, &format!("{prefix}.q"), score_src)?; // [n,1]
    let weights = g.softmax(scores, 0)?;
    let keys = linear_tokens(g, store, &format!("{prefix}.k"), key_src)?; // [n,d]
    let wt = g.transpose2(weights)?; // [1,n]
    let ctx = g.matmul(wt, keys)?; // [1,d]
    let vals = linear_tokens(g, store, &format!("{prefix}.v"), value_src)?;
    let vals = g.relu(vals);
    let gated = g.mul_row(vals, ctx)?;
    let att = linear_tokens(g, store, &format!("{prefix}.o"), gated)?;
    let res = g.add(value_src, att)?;
    let h = linear_tokens(g, store, &format!("{prefix}.ffn.fc1"), res)?;
    let h = g.relu(h);
    let f = linear_tokens(g, store, &format!("{prefix}.ffn.fc2"), h)?;
    g.add(res, f)
}

/// Self-attention over a joint token matrix `[n,d]`.
pub fn linear_self_attention<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    prefix: &str,
    tokens: Var,
) -> Result<Var> {
    attention_block(g, store, prefix, tokens, tokens, tokens)
}

// Self-attention whose key tokens are TAPE-encoded per stage half before the
// joint concat. Only active behind `tape.in_self`.
fn self_attention_tape_keys<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    prefix: &str,
    tokens: Var,
    tape_cfg: &TapeConfig,
    h: usize,
    w: usize,
) -> Result<Var> {
    let hw = h * w;
    let (t3, t4) = g.split(tokens, 0, hw)?;
    let m3 = tokens_to_map(g, t3, h, w)?;
    let m4 = tokens_to_map(g, t4, h, w)?;
    let e3 = tape::encode(g, store, &format!("{prefix}.tape"), m3, tape_cfg)?;
    let e4 = tape::encode(g, store, &format!("{prefix}.tape"), m4, tape_cfg)?;
    let k3 = map_to_tokens(g, e3)?;
    let k4 = map_to_tokens(g, e4)?;
    let keys = g.concat(k3, k4, 0)?;
    attention_block(g, store, prefix, tokens, keys, tokens)
}

/// Cross-attention: scores and context come from `q_src` (keys TAPE-encoded
/// first when enabled), gating and residuals apply to `v_src`.
pub fn linear_cross_attention<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    prefix: &str,
    q_src: Var,
    v_src: Var,
    grid: (usize, usize),
    tape_cfg: Option<&TapeConfig>,
) -> Result<Var> {
    let (nq, nv) = (g.value(q_src).shape()[0], g.value(v_src).shape()[0]);
    if nq != nv {
        return dim_err(format!("cross-attention token counts differ: {nq} vs {nv}"));
    }
    let key_src = match tape_cfg {
        Some(tc) => {
            let (h, w) = grid;
            let m = tokens_to_map(g, q_src, h, w)?;
            let e = tape::encode(g, store, &format!("{prefix}.tape"), m, tc)?;
            map_to_tokens(g, e)?
        }
        None => q_src,
    };
    attention_block(g, store, prefix, q_src, key_src, v_src)
}

/// Run one fusion stream over correlation maps `[d,h,w]`, returning the
/// stream's fused map (deep for forward, shallow for backward).
#[allow(clippy::too_many_arguments)]
pub fn stream<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    scope: &StreamScope,
    dir: StreamDir,
    m3: Var,
    m4: Var,
    fcfg: &FusionConfig,
    tape_cfg: &TapeConfig,
    tape_cross: bool,
) -> Result<Var> {
    let s3 = g.value(m3).shape().to_vec();
    let s4 = g.value(m4).shape().to_vec();
    if s3 != s4 || s3.len() != 3 {
        return dim_err(format!("fusion stream wants equal [d,h,w] maps, got {s3:?}, {s4:?}"));
    }
    let (h, w) = (s3[1], s3[2]);
    let hw = h * w;

    let m3f = conv_layer(g, store, &format!("{}.pre3", scope.base), m3, 1, 0)?;
    let m4f = conv_layer(g, store, &format!("{}.pre4", scope.base), m4, 1, 0)?;
    let t3 = map_to_tokens(g, m3f)?;
    let t4 = map_to_tokens(g, m4f)?;
    let mut joint = g.concat(t3, t4, 0)?;
    for i in 0..fcfg.depth {
        let p = format!("{}.self{i}", scope.self_base);
        joint = if tape_cfg.in_self {
            self_attention_tape_keys(g, store, &p, joint, tape_cfg, h, w)?
        } else {
            linear_self_attention(g, store, &p, joint)?
        };
    }
    let (q3, q4) = g.split(joint, 0, hw)?;
    let (q_src, mut value) = match dir {
        StreamDir::Forward => (q3, q4),
        StreamDir::Backward => (q4, q3),
    };
    for i in 0..fcfg.depth {
        let p = format!("{}.cross{i}", scope.base);
        let tc = if tape_cross { Some(tape_cfg) } else { None };
        value = linear_cross_attention(g, store, &p, q_src, value, (h, w), tc)?;
    }
    tokens_to_map(g, value, h, w)
}

/// Both streams: returns (fused shallow, fused deep).
#[allow(clippy::too_many_arguments)]
pub fn fuse<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    m3: Var,
    m4: Var,
    fcfg: &FusionConfig,
    tape_cfg: &TapeConfig,
    tape_cross: bool,
) -> Result<(Var, Var)> {
    let (fwd, bwd) = stream_scopes(fcfg);
    let deep = stream(g, store, &fwd, StreamDir::Forward, m3, m4, fcfg, tape_cfg, tape_cross)?;
    let shallow = stream(g, store, &bwd, StreamDir::Backward, m3, m4, fcfg, tape_cfg, tape_cross)?;
    Ok((shallow, deep))
}
