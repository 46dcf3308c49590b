//! A small reverse-mode tape over rank-3 feature maps.
//!
//! Every forward pass builds a fresh [`Graph`]; parameters enter as leaves keyed by
//! their index in the parameter store, so reusing a parameter twice shares a node.
//! [`Graph::backward`] accepts gradient seeds on any set of nodes, which lets the
//! loss functions live outside the tape and hand back `dL/dp` and `dL/df`.

pub mod kernels;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::Tensor;
use kernels::{ConvSpec, NormStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(usize),
    Conv { x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec },
    Depthwise { x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec },
    ConvTranspose { x: NodeId, w: NodeId, b: Option<NodeId>, factor: usize },
    GroupNorm { x: NodeId, gamma: NodeId, beta: NodeId, stats: NormStats<T> },
    Relu(NodeId),
    Sigmoid(NodeId),
    Add(NodeId, NodeId),
    MulBroadcast { a: NodeId, b: NodeId, strides: [usize; 3] },
    ScaleBy { x: NodeId, s: NodeId },
    Affine { x: NodeId, mul: T },
    Concat(Vec<NodeId>),
    AvgPool { x: NodeId, factor: usize },
    Upsample { x: NodeId, factor: usize },
    GlobalAvgPool(NodeId),
    L2Normalize { x: NodeId, norm: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<usize, NodeId>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf: no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Parameter leaf; repeated calls with the same index return the same node.
    pub fn param(&mut self, index: usize, value: &Tensor<T>) -> NodeId {
        if let Some(&id) = self.params.get(&index) {
            return id;
        }
        let id = self.push(value.clone(), Op::Param(index), true);
        self.params.insert(index, id);
        id
    }

    fn check_map(&self, id: NodeId, what: &str) -> Result<(usize, usize, usize)> {
        let s = self.value(id).shape();
        if s.len() != 3 {
            return Err(Error::Shape(format!("{what}: expected rank-3 map, got {s:?}")));
        }
        Ok((s[0], s[1], s[2]))
    }

    pub fn conv(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        let (h, wd, ci) = self.check_map(x, "conv input")?;
        let ws = self.value(w).shape();
        if ws.len() != 4 || ws[0] != spec.kernel || ws[1] != spec.kernel || ws[2] != ci {
            return Err(Error::Shape(format!(
                "conv weight {ws:?} incompatible with input {h}x{wd}x{ci} and kernel {}",
                spec.kernel
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [ws[3]] {
                return Err(Error::Shape(format!("conv bias shape {:?}", self.value(b).shape())));
            }
        }
        let out = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), spec);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(out, Op::Conv { x, w, b, spec }, rg))
    }

    pub fn depthwise(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        let (_, _, c) = self.check_map(x, "depthwise input")?;
        let ws = self.value(w).shape();
        if ws != [spec.kernel, spec.kernel, c] {
            return Err(Error::Shape(format!("depthwise weight {ws:?} for {c} channels")));
        }
        let out = kernels::depthwise(self.value(x), self.value(w), b.map(|b| self.value(b)), spec);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(out, Op::Depthwise { x, w, b, spec }, rg))
    }

    pub fn conv_transpose(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, factor: usize) -> Result<NodeId> {
        let (_, _, ci) = self.check_map(x, "transposed conv input")?;
        let ws = self.value(w).shape();
        if ws.len() != 4 || ws[0] != factor || ws[1] != factor || ws[2] != ci {
            return Err(Error::Shape(format!("transposed conv weight {ws:?}")));
        }
        let out = kernels::conv_transpose(self.value(x), self.value(w), b.map(|b| self.value(b)), factor);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(out, Op::ConvTranspose { x, w, b, factor }, rg))
    }

    pub fn group_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, groups: usize) -> Result<NodeId> {
        let (_, _, c) = self.check_map(x, "group norm input")?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::Shape(format!("{groups} groups do not divide {c} channels")));
        }
        let (out, stats) = kernels::group_norm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            groups,
            T::lit(1e-5),
        );
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(out, Op::GroupNorm { x, gamma, beta, stats }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// Sign of every ReLU input on the tape, in recording order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.value(x).data().iter().map(|&v| v > T::zero()));
            }
        }
        out
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `a ⊙ b` where each axis of `b` either matches `a` or is 1.
    pub fn mul_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let strides = kernels::broadcast_strides(self.value(a).shape(), self.value(b).shape())
            .ok_or_else(|| {
                Error::Shape(format!(
                    "cannot broadcast {:?} onto {:?}",
                    self.value(b).shape(),
                    self.value(a).shape()
                ))
            })?;
        let out = kernels::mul_broadcast(self.value(a), self.value(b), strides);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MulBroadcast { a, b, strides }, rg))
    }

    /// Multiplies every element of `x` by the single-element node `s`.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return Err(Error::Shape("scale_by expects a scalar node".into()));
        }
        let k = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * k);
        let rg = self.rg(&[x, s]);
        Ok(self.push(out, Op::ScaleBy { x, s }, rg))
    }

    /// `mul · x + add` with constant coefficients.
    pub fn affine(&mut self, x: NodeId, mul: T, add: T) -> NodeId {
        let out = self.value(x).map(|v| mul * v + add);
        let rg = self.rg(&[x]);
        self.push(out, Op::Affine { x, mul }, rg)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let (h, w, _) = self.check_map(parts[0], "concat")?;
        for &p in parts {
            let (ph, pw, _) = self.check_map(p, "concat")?;
            if (ph, pw) != (h, w) {
                return Err(Error::Shape(format!("concat spatial mismatch {ph}x{pw} vs {h}x{w}")));
            }
        }
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::concat_channels(&vals);
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    pub fn avg_pool(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let (h, w, _) = self.check_map(x, "avg pool")?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!("pool factor {factor} does not divide {h}x{w}")));
        }
        if factor == 1 {
            return Ok(x);
        }
        let out = kernels::avg_pool(self.value(x), factor);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::AvgPool { x, factor }, rg))
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        self.check_map(x, "upsample")?;
        if factor == 1 {
            return Ok(x);
        }
        let out = kernels::upsample_nearest(self.value(x), factor);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Upsample { x, factor }, rg))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_map(x, "global average pool")?;
        let out = kernels::global_avg_pool(self.value(x));
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    /// Scales `x` to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: NodeId) -> NodeId {
        let norm = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
            .max(T::lit(1e-12));
        let out = self.value(x).map(|v| v / norm);
        let rg = self.rg(&[x]);
        self.push(out, Op::L2Normalize { x, norm }, rg)
    }

    /// Back-propagates the given seeds and returns gradients keyed by parameter index.
    pub fn backward(&self, seeds: &[(NodeId, Tensor<T>)]) -> Result<Vec<(usize, Tensor<T>)>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            if g.shape() != self.value(*id).shape() {
                return Err(Error::Shape(format!(
                    "seed shape {:?} vs node {:?}",
                    g.shape(),
                    self.value(*id).shape()
                )));
            }
            accumulate(&mut grads, *id, g.clone());
        }
        let mut out = Vec::new();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut out);
        }
        out.sort_by_key(|(k, _)| *k);
        Ok(out)
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        out: &mut Vec<(usize, Tensor<T>)>,
    ) {
        match &node.op {
            Op::Input => {}
            Op::Param(idx) => out.push((*idx, g)),
            Op::Conv { x, w, b, spec } => {
                let want = (self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b)));
                let r = kernels::conv2d_backward(self.value(*x), self.value(*w), *spec, &g, want);
                push3(grads, *x, *w, *b, r);
            }
            Op::Depthwise { x, w, b, spec } => {
                let want = (self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b)));
                let r = kernels::depthwise_backward(self.value(*x), self.value(*w), *spec, &g, want);
                push3(grads, *x, *w, *b, r);
            }
            Op::ConvTranspose { x, w, b, factor } => {
                let want = (self.wants(*x), self.wants(*w), b.is_some_and(|b| self.wants(b)));
                let r = kernels::conv_transpose_backward(self.value(*x), self.value(*w), *factor, &g, want);
                push3(grads, *x, *w, *b, r);
            }
            Op::GroupNorm { x, gamma, beta, stats } => {
                let (dx, dg, db) =
                    kernels::group_norm_backward(self.value(*x), self.value(*gamma), stats, &g);
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, dg);
                accumulate(grads, *beta, db);
            }
            Op::Relu(x) => {
                let mut dx = g;
                for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    if y <= T::zero() {
                        *d = T::zero();
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let mut dx = g;
                for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= y * (T::one() - y);
                }
                accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                accumulate(grads, *b, g.clone());
                accumulate(grads, *a, g);
            }
            Op::MulBroadcast { a, b, strides } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*b) {
                    let (h, w, c) = av.hwc();
                    let mut db = Tensor::zeros(bv.shape());
                    let (ad, gd) = (av.data(), g.data());
                    let dd = db.data_mut();
                    let mut i = 0;
                    for y in 0..h {
                        for x in 0..w {
                            let base = y * strides[0] + x * strides[1];
                            for ch in 0..c {
                                dd[base + ch * strides[2]] += gd[i] * ad[i];
                                i += 1;
                            }
                        }
                    }
                    accumulate(grads, *b, db);
                }
                if self.wants(*a) {
                    let da = kernels::mul_broadcast(&g, bv, *strides);
                    accumulate(grads, *a, da);
                }
            }
            Op::ScaleBy { x, s } => {
                let k = self.value(*s).data()[0];
                if self.wants(*s) {
                    let ds: T = g
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&gv, &xv)| gv * xv)
                        .sum();
                    accumulate(grads, *s, Tensor::from_vec(self.value(*s).shape(), vec![ds]).unwrap());
                }
                let mut dx = g;
                dx.scale(k);
                accumulate(grads, *x, dx);
            }
            Op::Affine { x, mul } => {
                let mut dx = g;
                dx.scale(*mul);
                accumulate(grads, *x, dx);
            }
            Op::Concat(parts) => {
                let (h, w, c) = g.hwc();
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).hwc().2;
                    if self.wants(p) {
                        let dp = Tensor::from_fn(h, w, pc, |y, x, ch| g.data()[(y * w + x) * c + off + ch]);
                        accumulate(grads, p, dp);
                    }
                    off += pc;
                }
            }
            Op::AvgPool { x, factor } => {
                let dx = kernels::avg_pool_backward(self.value(*x).shape(), *factor, &g);
                accumulate(grads, *x, dx);
            }
            Op::Upsample { x, factor } => {
                let dx = kernels::upsample_nearest_backward(self.value(*x).shape(), *factor, &g);
                accumulate(grads, *x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let (h, w, c) = self.value(*x).hwc();
                let inv = T::one() / T::from_usize_lossy(h * w);
                let dx = Tensor::from_fn(h, w, c, |_, _, ch| g.data()[ch] * inv);
                accumulate(grads, *x, dx);
            }
            Op::L2Normalize { x, norm } => {
                let y = &node.value;
                let dot: T = y.data().iter().zip(g.data()).map(|(&a, &b)| a * b).sum();
                let mut dx = g;
                for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
                    *d = (*d - yv * dot) / *norm;
                }
                accumulate(grads, *x, dx);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn push3<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
    r: kernels::ConvGrads<T>,
) {
    if let Some(dx) = r.dx {
        accumulate(grads, x, dx);
    }
    if let Some(dw) = r.dw {
        accumulate(grads, w, dw);
    }
    if let (Some(b), Some(db)) = (b, r.db) {
        accumulate(grads, b, db);
    }
}
