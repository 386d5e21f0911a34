//! Small building blocks shared by the network modules: parameter
//! initialization and conv/linear layers with bias wired through the graph.

use crate::error::Result;
use crate::tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use rand::Rng;

/// Uniform Kaiming-style init, bound 1/sqrt(fan_in); bias starts at zero.
pub(crate) fn conv_init(
    store: &mut ParamStore<f32>,
    prefix: &str,
    out_c: usize,
    in_c: usize,
    kh: usize,
    kw: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let bound = 1.0 / ((in_c * kh * kw) as f64).sqrt();
    store.insert(
        &format!("{prefix}.w"),
        Tensor::uniform(&[out_c, in_c, kh, kw], -bound, bound, rng),
    )?;
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[out_c]))?;
    Ok(())
}

/// Zero-initialized conv so the layer starts as a no-op contribution.
pub(crate) fn conv_init_zero(
    store: &mut ParamStore<f32>,
    prefix: &str,
    out_c: usize,
    in_c: usize,
    kh: usize,
    kw: usize,
) -> Result<()> {
    store.insert(&format!("{prefix}.w"), Tensor::zeros(&[out_c, in_c, kh, kw]))?;
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[out_c]))?;
    Ok(())
}

pub(crate) fn linear_init(
    store: &mut ParamStore<f32>,
    prefix: &str,
    in_d: usize,
    out_d: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let bound = 1.0 / (in_d as f64).sqrt();
    store.insert(
        &format!("{prefix}.w"),
        Tensor::uniform(&[in_d, out_d], -bound, bound, rng),
    )?;
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[out_d]))?;
    Ok(())
}

pub(crate) fn linear_init_zero(
    store: &mut ParamStore<f32>,
    prefix: &str,
    in_d: usize,
    out_d: usize,
) -> Result<()> {
    store.insert(&format!("{prefix}.w"), Tensor::zeros(&[in_d, out_d]))?;
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[out_d]))?;
    Ok(())
}

/// `conv2d(x, {prefix}.w, stride, pad) + {prefix}.b`
pub(crate) fn conv_layer<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    prefix: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let y = g.conv2d(x, w, stride, pad)?;
    g.add_bias_chan(y, b)
}

/// `tokens[N,in] x {prefix}.w[in,out] + {prefix}.b[out]`
pub(crate) fn linear_tokens<E: Scalar>(
    g: &mut Graph<E>,
    store: &ParamStore<E>,
    prefix: &str,
    tokens: Var,
) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let y = g.matmul(tokens, w)?;
    g.add_bias_row(y, b)
}

/// `[d,h,w] -> [h*w, d]` token matrix.
pub(crate) fn map_to_tokens<E: Scalar>(g: &mut Graph<E>, x: Var) -> Result<Var> {
    let s = g.value(x).shape().to_vec();
    let flat = g.reshape(x, &[s[0], s[1] * s[2]])?;
    g.transpose2(flat)
}

/// `[h*w, d] -> [d,h,w]`.
pub(crate) fn tokens_to_map<E: Scalar>(g: &mut Graph<E>, tokens: Var, h: usize, w: usize) -> Result<Var> {
    let t = g.transpose2(tokens)?;
    let d = g.value(t).shape()[0];
    g.reshape(t, &[d, h, w])
}
