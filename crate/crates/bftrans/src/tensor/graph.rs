//! Recording graph for reverse-mode differentiation.
//!
//! Every forward operation appends one node holding its output value and the
//! identities of its inputs; `backward` walks the nodes in reverse and
//! dispatches per-op gradient transforms. A graph is single-threaded and
//! lives for exactly one forward/backward pass.

use super::store::ParamStore;
use super::{lane_dims, Scalar, Tensor};
use crate::error::{contract_err, dim_err, Error, Result};
use std::collections::HashMap;

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    /// Grouped pixel-wise correlation with same-padding; group size 1 is
    /// plain depth-wise correlation.
    CorrGrouped { x: Var, z: Var, group: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    AddBiasChan { x: Var, b: Var },
    AddBiasRow { x: Var, b: Var },
    MulRow { x: Var, v: Var },
    Scale { x: Var, s: Var },
    ScaleConst { x: Var, c: f64 },
    AddConst { x: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Log { x: Var },
    Abs { x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    MinConst { x: Var, c: f64 },
    MaxConst { x: Var, c: f64 },
    Softmax { x: Var, axis: usize },
    Sum { x: Var },
    Reshape { x: Var },
    Transpose2 { x: Var },
    Concat { a: Var, b: Var, axis: usize },
    Slice { x: Var, axis: usize, start: usize, len: usize },
    PoolSpatial { x: Var, kind: PoolKind },
    PoolChannel { x: Var, kind: PoolKind },
}

struct Node<E: Scalar> {
    op: Op,
    value: Tensor<E>,
}

pub struct Graph<E: Scalar> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Tensor<E>>>,
    params: Vec<(String, Var)>,
    param_lookup: HashMap<String, usize>,
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            param_lookup: HashMap::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor<E>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Record a constant or data input. Gradients flow into it but are only
    /// read back for bound parameters.
    pub fn input(&mut self, t: Tensor<E>) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Bind a named parameter from the store. Repeated binds of the same name
    /// return the same node so gradients from all uses accumulate in one
    /// place (required for weight sharing, e.g. the Siamese backbone).
    pub fn param(&mut self, store: &ParamStore<E>, name: &str) -> Result<Var> {
        if let Some(&i) = self.param_lookup.get(name) {
            return Ok(self.params[i].1);
        }
        let entry = store
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let v = self.push(Op::Leaf, entry.value.clone());
        self.param_lookup.insert(name.to_string(), self.params.len());
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    /// Gradient of a node after `backward`; `None` if the node is unreachable
    /// from the loss.
    pub fn grad(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Gradients of every bound parameter, in binding order. Parameters that
    /// do not reach the loss get exact zeros.
    pub fn param_grads(&self) -> Vec<(String, Tensor<E>)> {
        self.params
            .iter()
            .map(|(name, v)| {
                let g = match self.grad(*v) {
                    Some(g) => g.clone(),
                    None => Tensor::zeros(self.nodes[v.0].value.shape()),
                };
                (name.clone(), g)
            })
            .collect()
    }

    /// Add this graph's parameter gradients into the store's grad buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<E>) -> Result<()> {
        for (name, v) in &self.params {
            let entry = store
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if let Some(g) = self.grads.get(v.0).and_then(|g| g.as_ref()) {
                for (dst, src) in entry.grad.data_mut().iter_mut().zip(g.data()) {
                    *dst += *src;
                }
            }
        }
        Ok(())
    }

    /// Output values of every softmax node, in recording order.
    pub fn softmax_node_values(&self) -> Vec<Tensor<E>> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Softmax { .. }))
            .map(|n| n.value.clone())
            .collect()
    }

    /// Per-lane sums of every softmax output recorded in this graph, used to
    /// verify context-weight normalization.
    pub fn softmax_lane_sums(&self) -> Vec<f64> {
        let mut sums = Vec::new();
        for node in &self.nodes {
            if let Op::Softmax { axis, .. } = node.op {
                let shape = node.value.shape().to_vec();
                let (outer, len, inner) = lane_dims(&shape, axis).expect("recorded axis valid");
                let d = node.value.data();
                for o in 0..outer {
                    for n in 0..inner {
                        let mut s = 0.0;
                        for i in 0..len {
                            s += d[(o * len + i) * inner + n].as_f64();
                        }
                        sums.push(s);
                    }
                }
            }
        }
        sums
    }

    // ---- forward operations ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 {
            return dim_err(format!("matmul wants rank-2 operands, got {sa:?} x {sb:?}"));
        }
        let (m, k, k2, n) = (sa[0], sa[1], sb[0], sb[1]);
        if k != k2 {
            return dim_err(format!("matmul inner extents differ: {sa:?} x {sb:?}"));
        }
        let mut out = Tensor::zeros(&[m, n]);
        mm_nn(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            k,
            n,
        );
        Ok(self.push(Op::Matmul { a, b }, out))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        if sx.len() != 3 || sw.len() != 4 {
            return dim_err(format!("conv2d wants x[C,H,W], w[O,C,kh,kw]; got {sx:?}, {sw:?}"));
        }
        let (c, h, wd) = (sx[0], sx[1], sx[2]);
        let (o, cw, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if c != cw {
            return dim_err(format!("conv2d channel mismatch: x has {c}, w wants {cw}"));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return dim_err(format!("conv2d kernel extents must be odd, got {kh}x{kw}"));
        }
        if stride == 0 {
            return dim_err("conv2d stride must be positive".to_string());
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return dim_err(format!(
                "conv2d output would be empty: input {h}x{wd}, kernel {kh}x{kw}, pad {pad}"
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[o, oh, ow]);
        conv2d_fwd(
            self.value(x).data(),
            self.value(w).data(),
            out.data_mut(),
            ConvDims { c, h, w: wd, o, kh, kw, s: stride, p: pad, oh, ow },
        );
        Ok(self.push(Op::Conv2d { x, w, stride, pad }, out))
    }

    /// Pixel-wise correlation of template `z` slid over search map `x` with
    /// same-padding. Channels are consumed in groups of `group`; each group
    /// emits one output channel.
    pub fn corr_grouped(&mut self, x: Var, z: Var, group: usize) -> Result<Var> {
        let (sx, sz) = (self.value(x).shape(), self.value(z).shape());
        if sx.len() != 3 || sz.len() != 3 {
            return dim_err(format!("correlation wants rank-3 maps, got {sx:?}, {sz:?}"));
        }
        if sx[0] != sz[0] {
            return dim_err(format!("correlation channel mismatch: {} vs {}", sx[0], sz[0]));
        }
        if sz[1] > sx[1] || sz[2] > sx[2] {
            return dim_err(format!(
                "template {}x{} larger than search {}x{}",
                sz[1], sz[2], sx[1], sx[2]
            ));
        }
        if group == 0 || sx[0] % group != 0 {
            return dim_err(format!("group size {group} must divide channels {}", sx[0]));
        }
        let dims = CorrDims {
            c: sx[0],
            hx: sx[1],
            wx: sx[2],
            hz: sz[1],
            wz: sz[2],
            group,
        };
        let mut out = Tensor::zeros(&[dims.c / group, dims.hx, dims.wx]);
        corr_fwd(self.value(x).data(), self.value(z).data(), out.data_mut(), dims);
        Ok(self.push(Op::CorrGrouped { x, z, group }, out))
    }

    fn binary(&mut self, a: Var, b: Var, which: &str, f: impl Fn(E, E) -> E) -> Result<Tensor<E>> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let scalar_a = self.value(a).len() == 1;
        let scalar_b = self.value(b).len() == 1;
        if sa != sb && !scalar_a && !scalar_b {
            return dim_err(format!("{which}: shapes {sa:?} and {sb:?} incompatible"));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let out = if va.len() == vb.len() {
            Tensor::new(
                sa.to_vec(),
                va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect(),
            )?
        } else if scalar_b {
            let y = vb.data()[0];
            va.map(|x| f(x, y))
        } else {
            let x = va.data()[0];
            Tensor::new(sb.to_vec(), vb.data().iter().map(|&y| f(x, y)).collect())?
        };
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, out))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(Op::Div { a, b }, out))
    }

    /// `x[C,H,W] + b[C]`, bias broadcast over the spatial plane.
    pub fn add_bias_chan(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(b).shape());
        if sx.len() != 3 || sb != [sx[0]] {
            return dim_err(format!("add_bias_chan: x {sx:?} with bias {sb:?}"));
        }
        let plane = sx[1] * sx[2];
        let mut out = self.value(x).clone();
        for c in 0..sx[0] {
            let bv = self.nodes[b.0].value.data()[c];
            for v in &mut out.data_mut()[c * plane..(c + 1) * plane] {
                *v += bv;
            }
        }
        Ok(self.push(Op::AddBiasChan { x, b }, out))
    }

    /// `x[N,D] + b[D]`, bias broadcast over rows.
    pub fn add_bias_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(b).shape());
        if sx.len() != 2 || sb != [sx[1]] {
            return dim_err(format!("add_bias_row: x {sx:?} with bias {sb:?}"));
        }
        let d = sx[1];
        let mut out = self.value(x).clone();
        let bd = self.nodes[b.0].value.data().to_vec();
        for row in out.data_mut().chunks_mut(d) {
            for (v, bv) in row.iter_mut().zip(&bd) {
                *v += *bv;
            }
        }
        Ok(self.push(Op::AddBiasRow { x, b }, out))
    }

    /// `x[N,D] * v`, where `v` holds D values ([D] or [1,D]), broadcast over rows.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (sx, sv) = (self.value(x).shape(), self.value(v).shape());
        let d = if sx.len() == 2 { sx[1] } else { 0 };
        let v_ok = sv == [d] || sv == [1, d];
        if sx.len() != 2 || !v_ok {
            return dim_err(format!("mul_row: x {sx:?} with row vector {sv:?}"));
        }
        let mut out = self.value(x).clone();
        let vd = self.nodes[v.0].value.data().to_vec();
        for row in out.data_mut().chunks_mut(d) {
            for (o, vv) in row.iter_mut().zip(&vd) {
                *o *= *vv;
            }
        }
        Ok(self.push(Op::MulRow { x, v }, out))
    }

    /// Multiply a tensor by a learnable scalar node.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return dim_err(format!("scale factor must be scalar, got {:?}", self.value(s).shape()));
        }
        let sv = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * sv);
        Ok(self.push(Op::Scale { x, s }, out))
    }

    pub fn scale_const(&mut self, x: Var, c: f64) -> Var {
        let ce = E::from_f64(c);
        let out = self.value(x).map(|v| v * ce);
        self.push(Op::ScaleConst { x, c }, out)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let ce = E::from_f64(c);
        let out = self.value(x).map(|v| v + ce);
        self.push(Op::AddConst { x }, out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > E::zero() { v } else { E::zero() });
        self.push(Op::Relu { x }, out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid_scalar);
        self.push(Op::Sigmoid { x }, out)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.ln());
        self.push(Op::Log { x }, out)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.push(Op::Abs { x }, out)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (E::from_f64(lo), E::from_f64(hi));
        let out = self.value(x).map(|v| if v < l { l } else if v > h { h } else { v });
        self.push(Op::Clamp { x, lo, hi }, out)
    }

    pub fn min_const(&mut self, x: Var, c: f64) -> Var {
        let ce = E::from_f64(c);
        let out = self.value(x).map(|v| if v < ce { v } else { ce });
        self.push(Op::MinConst { x, c }, out)
    }

    pub fn max_const(&mut self, x: Var, c: f64) -> Var {
        let ce = E::from_f64(c);
        let out = self.value(x).map(|v| if v > ce { v } else { ce });
        self.push(Op::MaxConst { x, c }, out)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (outer, len, inner) = lane_dims(&shape, axis)?;
        let mut out = self.value(x).clone();
        let d = out.data_mut();
        for o in 0..outer {
            for n in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + n;
                let mut mx = d[idx(0)];
                for i in 1..len {
                    if d[idx(i)] > mx {
                        mx = d[idx(i)];
                    }
                }
                let mut sum = E::zero();
                for i in 0..len {
                    let e = (d[idx(i)] - mx).exp();
                    d[idx(i)] = e;
                    sum += e;
                }
                for i in 0..len {
                    d[idx(i)] = d[idx(i)] / sum;
                }
            }
        }
        Ok(self.push(Op::Softmax { x, axis }, out))
    }

    /// Reduce to a scalar `[1]` by summation.
    pub fn sum(&mut self, x: Var) -> Var {
        let mut s = E::zero();
        for &v in self.value(x).data() {
            s += v;
        }
        self.push(Op::Sum { x }, Tensor::scalar(s))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape { x }, out))
    }

    pub fn transpose2(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 2 {
            return dim_err(format!("transpose2 wants rank 2, got {s:?}"));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut data = vec![E::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let out = Tensor::new(vec![n, m], data)?;
        Ok(self.push(Op::Transpose2 { x }, out))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != sb.len() {
            return dim_err(format!("concat rank mismatch: {sa:?} vs {sb:?}"));
        }
        for (ax, (&ea, &eb)) in sa.iter().zip(&sb).enumerate() {
            if ax != axis && ea != eb {
                return dim_err(format!("concat: shapes {sa:?} and {sb:?} differ off axis {axis}"));
            }
        }
        let (outer, la, inner) = lane_dims(&sa, axis)?;
        let lb = sb[axis];
        let mut shape = sa.clone();
        shape[axis] = la + lb;
        let mut data = Vec::with_capacity(outer * (la + lb) * inner);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for o in 0..outer {
            data.extend_from_slice(&da[o * la * inner..(o + 1) * la * inner]);
            data.extend_from_slice(&db[o * lb * inner..(o + 1) * lb * inner]);
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(Op::Concat { a, b, axis }, out))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (outer, full, inner) = lane_dims(&shape, axis)?;
        if len == 0 || start + len > full {
            return dim_err(format!(
                "slice [{start}, {start}+{len}) out of range for axis {axis} of {shape:?}"
            ));
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(Op::Slice { x, axis, start, len }, out))
    }

    /// Split along `axis` at position `at`, returning the two halves.
    pub fn split(&mut self, x: Var, axis: usize, at: usize) -> Result<(Var, Var)> {
        let full = {
            let shape = self.value(x).shape();
            if axis >= shape.len() {
                return dim_err(format!("split axis {axis} out of range for {shape:?}"));
            }
            shape[axis]
        };
        if at == 0 || at >= full {
            return dim_err(format!("split at {at} must fall inside extent {full}"));
        }
        let lo = self.slice(x, axis, 0, at)?;
        let hi = self.slice(x, axis, at, full - at)?;
        Ok((lo, hi))
    }

    /// Global spatial pooling `[C,H,W] -> [C,1,1]`.
    pub fn pool_spatial(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 3 {
            return dim_err(format!("pool_spatial wants [C,H,W], got {s:?}"));
        }
        let (c, plane) = (s[0], s[1] * s[2]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(c);
        for ch in 0..c {
            let sl = &src[ch * plane..(ch + 1) * plane];
            data.push(match kind {
                PoolKind::Max => sl.iter().copied().fold(sl[0], |a, b| if b > a { b } else { a }),
                PoolKind::Avg => {
                    let mut acc = E::zero();
                    for &v in sl {
                        acc += v;
                    }
                    acc / E::from_f64(plane as f64)
                }
            });
        }
        let out = Tensor::new(vec![c, 1, 1], data)?;
        Ok(self.push(Op::PoolSpatial { x, kind }, out))
    }

    /// Pooling over the channel axis `[C,H,W] -> [1,H,W]`.
    pub fn pool_channel(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 3 {
            return dim_err(format!("pool_channel wants [C,H,W], got {s:?}"));
        }
        let (c, plane) = (s[0], s[1] * s[2]);
        let src = self.value(x).data();
        let mut data = vec![E::zero(); plane];
        for (n, out) in data.iter_mut().enumerate() {
            let mut best = src[n];
            let mut acc = E::zero();
            for ch in 0..c {
                let v = src[ch * plane + n];
                if v > best {
                    best = v;
                }
                acc += v;
            }
            *out = match kind {
                PoolKind::Max => best,
                PoolKind::Avg => acc / E::from_f64(c as f64),
            };
        }
        let out = Tensor::new(vec![1, s[1], s[2]], data)?;
        Ok(self.push(Op::PoolChannel { x, kind }, out))
    }

    // ---- backward ----------------------------------------------------------

    fn add_grad(&mut self, v: Var, contrib: Tensor<E>) {
        match &mut self.grads[v.0] {
            Some(g) => {
                for (dst, src) in g.data_mut().iter_mut().zip(contrib.data()) {
                    *dst += *src;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn add_grad_scalar_reduced(&mut self, v: Var, contrib: &Tensor<E>) {
        // Reduce a full-shape gradient onto a broadcast scalar operand.
        let mut s = E::zero();
        for &g in contrib.data() {
            s += g;
        }
        let shape = self.value(v).shape().to_vec();
        self.add_grad(v, Tensor::full(&shape, s));
    }

    /// Propagate gradients from a scalar loss node back to every reachable
    /// input and parameter.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return contract_err(format!(
                "backward wants a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::scalar(E::one()));

        for i in (0..=loss.0).rev() {
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let sa = self.value(a).shape().to_vec();
                    let sb = self.value(b).shape().to_vec();
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let mut da = Tensor::zeros(&sa);
                    mm_nt_add(g.data(), self.value(b).data(), da.data_mut(), m, n, k);
                    let mut db = Tensor::zeros(&sb);
                    mm_tn_add(self.value(a).data(), g.data(), db.data_mut(), m, k, n);
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::Conv2d { x, w, stride, pad } => {
                    let sx = self.value(x).shape().to_vec();
                    let sw = self.value(w).shape().to_vec();
                    let so = g.shape().to_vec();
                    let dims = ConvDims {
                        c: sx[0],
                        h: sx[1],
                        w: sx[2],
                        o: sw[0],
                        kh: sw[2],
                        kw: sw[3],
                        s: stride,
                        p: pad,
                        oh: so[1],
                        ow: so[2],
                    };
                    let mut dx = Tensor::zeros(&sx);
                    let mut dw = Tensor::zeros(&sw);
                    conv2d_bwd(
                        self.value(x).data(),
                        self.value(w).data(),
                        g.data(),
                        dx.data_mut(),
                        dw.data_mut(),
                        dims,
                    );
                    self.add_grad(x, dx);
                    self.add_grad(w, dw);
                }
                Op::CorrGrouped { x, z, group } => {
                    let sx = self.value(x).shape().to_vec();
                    let sz = self.value(z).shape().to_vec();
                    let dims = CorrDims {
                        c: sx[0],
                        hx: sx[1],
                        wx: sx[2],
                        hz: sz[1],
                        wz: sz[2],
                        group,
                    };
                    let mut dx = Tensor::zeros(&sx);
                    let mut dz = Tensor::zeros(&sz);
                    corr_bwd(
                        self.value(x).data(),
                        self.value(z).data(),
                        g.data(),
                        dx.data_mut(),
                        dz.data_mut(),
                        dims,
                    );
                    self.add_grad(x, dx);
                    self.add_grad(z, dz);
                }
                Op::Add { a, b } => {
                    self.reduce_into(a, g.clone());
                    self.reduce_into(b, g.clone());
                }
                Op::Sub { a, b } => {
                    self.reduce_into(a, g.clone());
                    self.reduce_into(b, g.map(|v| -v));
                }
                Op::Mul { a, b } => {
                    // d/da = g * b, d/db = g * a (with scalar broadcast)
                    let da = self.broadcast_apply(&g, b, |gv, bv| gv * bv);
                    let db = self.broadcast_apply(&g, a, |gv, av| gv * av);
                    self.reduce_into(a, da);
                    self.reduce_into(b, db);
                }
                Op::Div { a, b } => {
                    let da = self.broadcast_apply(&g, b, |gv, bv| gv / bv);
                    // d/db = -g * a / b^2
                    let mut db = self.broadcast_apply(&g, a, |gv, av| gv * av);
                    let vb = self.value(b).clone();
                    if vb.len() == db.len() {
                        for (d, &bv) in db.data_mut().iter_mut().zip(vb.data()) {
                            *d = -*d / (bv * bv);
                        }
                    } else {
                        let bv = vb.data()[0];
                        for d in db.data_mut() {
                            *d = -*d / (bv * bv);
                        }
                    }
                    self.reduce_into(a, da);
                    self.reduce_into(b, db);
                }
                Op::AddBiasChan { x, b } => {
                    let plane = g.shape()[1] * g.shape()[2];
                    let c = g.shape()[0];
                    let mut db = Tensor::zeros(&[c]);
                    for ch in 0..c {
                        let mut s = E::zero();
                        for &gv in &g.data()[ch * plane..(ch + 1) * plane] {
                            s += gv;
                        }
                        db.data_mut()[ch] = s;
                    }
                    self.add_grad(x, g.clone());
                    self.add_grad(b, db);
                }
                Op::AddBiasRow { x, b } => {
                    let d = g.shape()[1];
                    let mut db = Tensor::zeros(&[d]);
                    for row in g.data().chunks(d) {
                        for (acc, &gv) in db.data_mut().iter_mut().zip(row) {
                            *acc += gv;
                        }
                    }
                    self.add_grad(x, g.clone());
                    self.add_grad(b, db);
                }
                Op::MulRow { x, v } => {
                    let d = g.shape()[1];
                    let vx = self.value(x).clone();
                    let vv = self.value(v).clone();
                    let mut dx = g.clone();
                    for row in dx.data_mut().chunks_mut(d) {
                        for (o, &vvj) in row.iter_mut().zip(vv.data()) {
                            *o *= vvj;
                        }
                    }
                    let mut dv = Tensor::zeros(vv.shape());
                    for (grow, xrow) in g.data().chunks(d).zip(vx.data().chunks(d)) {
                        for ((acc, &gv), &xv) in dv.data_mut().iter_mut().zip(grow).zip(xrow) {
                            *acc += gv * xv;
                        }
                    }
                    self.add_grad(x, dx);
                    self.add_grad(v, dv);
                }
                Op::Scale { x, s } => {
                    let sv = self.value(s).data()[0];
                    let dx = g.map(|gv| gv * sv);
                    let vx = self.value(x).clone();
                    let mut ds = E::zero();
                    for (&gv, &xv) in g.data().iter().zip(vx.data()) {
                        ds += gv * xv;
                    }
                    self.add_grad(x, dx);
                    self.add_grad(s, Tensor::scalar(ds));
                }
                Op::ScaleConst { x, c } => {
                    let ce = E::from_f64(c);
                    self.add_grad(x, g.map(|gv| gv * ce));
                }
                Op::AddConst { x } => self.add_grad(x, g.clone()),
                Op::Relu { x } => {
                    let vx = self.value(x).clone();
                    let dx = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(vx.data())
                            .map(|(&gv, &xv)| if xv > E::zero() { gv } else { E::zero() })
                            .collect(),
                    )
                    .expect("relu grad shape");
                    self.add_grad(x, dx);
                }
                Op::Sigmoid { x } => {
                    let y = self.nodes[i].value.clone();
                    let dx = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(y.data())
                            .map(|(&gv, &yv)| gv * yv * (E::one() - yv))
                            .collect(),
                    )
                    .expect("sigmoid grad shape");
                    self.add_grad(x, dx);
                }
                Op::Log { x } => {
                    let vx = self.value(x).clone();
                    let dx = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(vx.data()).map(|(&gv, &xv)| gv / xv).collect(),
                    )
                    .expect("log grad shape");
                    self.add_grad(x, dx);
                }
                Op::Abs { x } => {
                    let vx = self.value(x).clone();
                    let dx = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(vx.data())
                            .map(|(&gv, &xv)| {
                                if xv > E::zero() {
                                    gv
                                } else if xv < E::zero() {
                                    -gv
                                } else {
                                    E::zero()
                                }
                            })
                            .collect(),
                    )
                    .expect("abs grad shape");
                    self.add_grad(x, dx);
                }
                Op::Clamp { x, lo, hi } => {
                    let (l, h) = (E::from_f64(lo), E::from_f64(hi));
                    let vx = self.value(x).clone();
                    let dx = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(vx.data())
                            .map(|(&gv, &xv)| if xv >= l && xv <= h { gv } else { E::zero() })
                            .collect(),
                    )
                    .expect("clamp grad shape");
                    self.add_grad(x, dx);
                }
                Op::MinConst { x, c } => {
                    let ce = E::from_f64(c);
                    let vx = self.value(x).clone();
                    let dx = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(vx.data())
                            .map(|(&gv, &xv)| if xv <= ce { gv } else { E::zero() })
                            .collect(),
                    )
                    .expect("min_const grad shape");
                    self.add_grad(x, dx);
                }
                Op::MaxConst { x, c } => {
                    let ce = E::from_f64(c);
                    let vx = self.value(x).clone();
                    let dx = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(vx.data())
                            .map(|(&gv, &xv)| if xv >= ce { gv } else { E::zero() })
                            .collect(),
                    )
                    .expect("max_const grad shape");
                    self.add_grad(x, dx);
                }
                Op::Softmax { x, axis } => {
                    let y = self.nodes[i].value.clone();
                    let (outer, len, inner) = lane_dims(y.shape(), axis)?;
                    let mut dx = Tensor::zeros(y.shape());
                    for o in 0..outer {
                        for n in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + n;
                            let mut dot = E::zero();
                            for k in 0..len {
                                dot += g.data()[idx(k)] * y.data()[idx(k)];
                            }
                            for k in 0..len {
                                let p = idx(k);
                                dx.data_mut()[p] = y.data()[p] * (g.data()[p] - dot);
                            }
                        }
                    }
                    self.add_grad(x, dx);
                }
                Op::Sum { x } => {
                    let g0 = g.data()[0];
                    let shape = self.value(x).shape().to_vec();
                    self.add_grad(x, Tensor::full(&shape, g0));
                }
                Op::Reshape { x } => {
                    let shape = self.value(x).shape().to_vec();
                    let dx = g.clone().reshaped(&shape).expect("reshape grad");
                    self.add_grad(x, dx);
                }
                Op::Transpose2 { x } => {
                    let (n, m) = (g.shape()[0], g.shape()[1]);
                    let mut data = vec![E::zero(); m * n];
                    for r in 0..n {
                        for cidx in 0..m {
                            data[cidx * n + r] = g.data()[r * m + cidx];
                        }
                    }
                    self.add_grad(x, Tensor::new(vec![m, n], data).expect("transpose grad"));
                }
                Op::Concat { a, b, axis } => {
                    let sa = self.value(a).shape().to_vec();
                    let sb = self.value(b).shape().to_vec();
                    let (outer, la, inner) = lane_dims(&sa, axis)?;
                    let lb = sb[axis];
                    let mut da = Tensor::zeros(&sa);
                    let mut db = Tensor::zeros(&sb);
                    for o in 0..outer {
                        let gbase = o * (la + lb) * inner;
                        da.data_mut()[o * la * inner..(o + 1) * la * inner]
                            .copy_from_slice(&g.data()[gbase..gbase + la * inner]);
                        db.data_mut()[o * lb * inner..(o + 1) * lb * inner]
                            .copy_from_slice(&g.data()[gbase + la * inner..gbase + (la + lb) * inner]);
                    }
                    self.add_grad(a, da);
                    self.add_grad(b, db);
                }
                Op::Slice { x, axis, start, len } => {
                    let shape = self.value(x).shape().to_vec();
                    let (outer, full, inner) = lane_dims(&shape, axis)?;
                    let mut dx = Tensor::zeros(&shape);
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        for k in 0..len * inner {
                            dx.data_mut()[dst + k] += g.data()[src + k];
                        }
                    }
                    self.add_grad(x, dx);
                }
                Op::PoolSpatial { x, kind } => {
                    let vx = self.value(x).clone();
                    let (c, plane) = (vx.shape()[0], vx.shape()[1] * vx.shape()[2]);
                    let mut dx = Tensor::zeros(vx.shape());
                    for ch in 0..c {
                        let gv = g.data()[ch];
                        match kind {
                            PoolKind::Avg => {
                                let share = gv / E::from_f64(plane as f64);
                                for v in &mut dx.data_mut()[ch * plane..(ch + 1) * plane] {
                                    *v += share;
                                }
                            }
                            PoolKind::Max => {
                                let sl = &vx.data()[ch * plane..(ch + 1) * plane];
                                let mut best = 0;
                                for (k, &v) in sl.iter().enumerate() {
                                    if v > sl[best] {
                                        best = k;
                                    }
                                }
                                dx.data_mut()[ch * plane + best] += gv;
                            }
                        }
                    }
                    self.add_grad(x, dx);
                }
                Op::PoolChannel { x, kind } => {
                    let vx = self.value(x).clone();
                    let (c, plane) = (vx.shape()[0], vx.shape()[1] * vx.shape()[2]);
                    let mut dx = Tensor::zeros(vx.shape());
                    for n in 0..plane {
                        let gv = g.data()[n];
                        match kind {
                            PoolKind::Avg => {
                                let share = gv / E::from_f64(c as f64);
                                for ch in 0..c {
                                    dx.data_mut()[ch * plane + n] += share;
                                }
                            }
                            PoolKind::Max => {
                                let mut best = 0;
                                for ch in 1..c {
                                    if vx.data()[ch * plane + n] > vx.data()[best * plane + n] {
                                        best = ch;
                                    }
                                }
                                dx.data_mut()[best * plane + n] += gv;
                            }
                        }
                    }
                    self.add_grad(x, dx);
                }
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    // Elementwise combine of gradient with the *other* operand's value,
    // respecting scalar broadcast on either side. Result has g's shape.
    fn broadcast_apply(&self, g: &Tensor<E>, other: Var, f: impl Fn(E, E) -> E) -> Tensor<E> {
        let vo = self.value(other);
        if vo.len() == g.len() {
            Tensor::new(
                g.shape().to_vec(),
                g.data().iter().zip(vo.data()).map(|(&gv, &ov)| f(gv, ov)).collect(),
            )
            .expect("broadcast grad shape")
        } else {
            let ov = vo.data()[0];
            g.map(|gv| f(gv, ov))
        }
    }

    // Deposit a full-shape contribution onto a node, reducing if it's scalar.
    fn reduce_into(&mut self, target: Var, contrib: Tensor<E>) {
        if self.value(target).len() == contrib.len() {
            let shape = self.value(target).shape().to_vec();
            let shaped = contrib.reshaped(&shape).expect("reduce_into reshape");
            self.add_grad(target, shaped);
        } else {
            self.add_grad_scalar_reduced(target, &contrib);
        }
    }
}

pub(crate) fn sigmoid_scalar<E: Scalar>(v: E) -> E {
    // Split by sign so exp never overflows.
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

// ---- raw kernels -----------------------------------------------------------

#[derive(Clone, Copy)]
struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
}

#[derive(Clone, Copy)]
struct CorrDims {
    c: usize,
    hx: usize,
    wx: usize,
    hz: usize,
    wz: usize,
    group: usize,
}

fn mm_nn<E: Scalar>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

// acc += A[m,n_g] * B^T where B is [k,n_g]: out[m,k]. Eight accumulator
// lanes keep the dot products vectorizable without reassociating a single
// serial sum.
fn mm_nt_add<E: Scalar>(g: &[E], b: &[E], out: &mut [E], m: usize, n: usize, k: usize) {
    let lanes = 8;
    let main = n - n % lanes;
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = [E::zero(); 8];
            let mut j = 0;
            while j < main {
                for l in 0..lanes {
                    acc[l] += grow[j + l] * brow[j + l];
                }
                j += lanes;
            }
            let mut tail = E::zero();
            for j in main..n {
                tail += grow[j] * brow[j];
            }
            let s01 = acc[0] + acc[1];
            let s23 = acc[2] + acc[3];
            let s45 = acc[4] + acc[5];
            let s67 = acc[6] + acc[7];
            orow[p] += ((s01 + s23) + (s45 + s67)) + tail;
        }
    }
}

// acc += A^T * G where A is [m,k], G is [m,n]: out[k,n]
fn mm_tn_add<E: Scalar>(a: &[E], g: &[E], out: &mut [E], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (ov, &gv) in orow.iter_mut().zip(grow) {
                *ov += av * gv;
            }
        }
    }
}

#[inline]
fn conv_col_bounds(d: ConvDims, v: usize) -> (usize, usize) {
    // valid j satisfy 0 <= j*s + v - p <= w-1
    let jlo = if v < d.p { (d.p - v).div_ceil(d.s) } else { 0 };
    let hi = d.w as isize - 1 + d.p as isize - v as isize;
    if hi < 0 {
        return (0, 0);
    }
    let jhi = (hi as usize / d.s + 1).min(d.ow);
    (jlo, jhi.max(jlo))
}

fn im2col<E: Scalar>(x: &[E], d: ConvDims) -> Vec<E> {
    let ohow = d.oh * d.ow;
    let mut cols = vec![E::zero(); d.c * d.kh * d.kw * ohow];
    let mut row = 0usize;
    for c in 0..d.c {
        for u in 0..d.kh {
            for v in 0..d.kw {
                let dst = &mut cols[row * ohow..(row + 1) * ohow];
                let (jlo, jhi) = conv_col_bounds(d, v);
                for i in 0..d.oh {
                    let yi = (i * d.s + u) as isize - d.p as isize;
                    if yi < 0 || yi >= d.h as isize {
                        continue;
                    }
                    let xrow = &x[(c * d.h + yi as usize) * d.w..];
                    let drow = &mut dst[i * d.ow..(i + 1) * d.ow];
                    if d.s == 1 {
                        let off = v as isize - d.p as isize;
                        for j in jlo..jhi {
                            drow[j] = xrow[(j as isize + off) as usize];
                        }
                    } else {
                        for j in jlo..jhi {
                            drow[j] = xrow[j * d.s + v - d.p];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im_add<E: Scalar>(cols: &[E], dx: &mut [E], d: ConvDims) {
    let ohow = d.oh * d.ow;
    let mut row = 0usize;
    for c in 0..d.c {
        for u in 0..d.kh {
            for v in 0..d.kw {
                let src = &cols[row * ohow..(row + 1) * ohow];
                let (jlo, jhi) = conv_col_bounds(d, v);
                for i in 0..d.oh {
                    let yi = (i * d.s + u) as isize - d.p as isize;
                    if yi < 0 || yi >= d.h as isize {
                        continue;
                    }
                    let xbase = (c * d.h + yi as usize) * d.w;
                    let srow = &src[i * d.ow..(i + 1) * d.ow];
                    if d.s == 1 {
                        let off = v as isize - d.p as isize;
                        for j in jlo..jhi {
                            dx[(xbase as isize + j as isize + off) as usize] += srow[j];
                        }
                    } else {
                        for j in jlo..jhi {
                            dx[xbase + j * d.s + v - d.p] += srow[j];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

// Convolution as im2col + GEMM; the matmul kernels carry the arithmetic.
fn conv2d_fwd<E: Scalar>(x: &[E], w: &[E], out: &mut [E], d: ConvDims) {
    let cols = im2col(x, d);
    mm_nn(w, &cols, out, d.o, d.c * d.kh * d.kw, d.oh * d.ow);
}

fn conv2d_bwd<E: Scalar>(x: &[E], w: &[E], g: &[E], dx: &mut [E], dw: &mut [E], d: ConvDims) {
    let ckk = d.c * d.kh * d.kw;
    let ohow = d.oh * d.ow;
    let cols = im2col(x, d);
    mm_nt_add(g, &cols, dw, d.o, ohow, ckk);
    let mut dcols = vec![E::zero(); ckk * ohow];
    mm_tn_add(w, g, &mut dcols, d.o, ckk, ohow);
    col2im_add(&dcols, dx, d);
}

fn corr_fwd<E: Scalar>(x: &[E], z: &[E], out: &mut [E], d: CorrDims) {
    let pbh = (d.hz - 1) / 2;
    let pbw = (d.wz - 1) / 2;
    let groups = d.c / d.group;
    for gi in 0..groups {
        for cc in 0..d.group {
            let c = gi * d.group + cc;
            for u in 0..d.hz {
                for v in 0..d.wz {
                    let zv = z[(c * d.hz + u) * d.wz + v];
                    if zv == E::zero() {
                        continue;
                    }
                    let jlo = pbw.saturating_sub(v);
                    let jhi = (d.wx + pbw - v).min(d.wx);
                    for i in 0..d.hx {
                        let yi = (i + u) as isize - pbh as isize;
                        if yi < 0 || yi >= d.hx as isize {
                            continue;
                        }
                        let xbase = (c * d.hx + yi as usize) * d.wx;
                        let obase = (gi * d.hx + i) * d.wx;
                        let off = v as isize - pbw as isize;
                        for j in jlo..jhi {
                            out[obase + j] += zv * x[xbase + (j as isize + off) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn corr_bwd<E: Scalar>(x: &[E], z: &[E], g: &[E], dx: &mut [E], dz: &mut [E], d: CorrDims) {
    let pbh = (d.hz - 1) / 2;
    let pbw = (d.wz - 1) / 2;
    let groups = d.c / d.group;
    for gi in 0..groups {
        for cc in 0..d.group {
            let c = gi * d.group + cc;
            for u in 0..d.hz {
                for v in 0..d.wz {
                    let zidx = (c * d.hz + u) * d.wz + v;
                    let zv = z[zidx];
                    let mut dzv = E::zero();
                    let jlo = pbw.saturating_sub(v);
                    let jhi = (d.wx + pbw - v).min(d.wx);
                    for i in 0..d.hx {
                        let yi = (i + u) as isize - pbh as isize;
                        if yi < 0 || yi >= d.hx as isize {
                            continue;
                        }
                        let xbase = (c * d.hx + yi as usize) * d.wx;
                        let obase = (gi * d.hx + i) * d.wx;
                        let off = v as isize - pbw as isize;
                        for j in jlo..jhi {
                            let gv = g[obase + j];
                            let xi = xbase + (j as isize + off) as usize;
                            dzv += gv * x[xi];
                            dx[xi] += gv * zv;
                        }
                    }
                    dz[zidx] += dzv;
                }
            }
        }
    }
}
