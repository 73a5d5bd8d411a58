use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use crate::kernels::{
    broadcast_index, broadcast_shape, col2im_acc, gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, im2col,
    strides,
};
use crate::{Result, Tensor, TensorError};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Sum(usize),
    SumAxis { x: usize, axis: usize },
    Reshape(usize),
    Permute { x: usize, axes: Vec<usize> },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    IndexSelect { x: usize, axis: usize, indices: Vec<usize> },
    Matmul(usize, usize),
    Softmax(usize),
    Conv2d { x: usize, w: usize, b: usize },
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Matmul(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | Offset(a) | Relu(a) | Exp(a) | Log(a) | Sqrt(a) | Square(a)
            | Sum(a) | Reshape(a) | Softmax(a) => vec![*a],
            SumAxis { x, .. } | Permute { x, .. } | Slice { x, .. } | IndexSelect { x, .. } => vec![*x],
            Concat { parts, .. } => parts.clone(),
            Conv2d { x, w, b } => vec![*x, *w, *b],
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of recorded tensor operations.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order for the backward sweep. A graph supports exactly
/// one backward pass.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    differentiated: Cell<bool>,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            differentiated: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a value that gradients are not tracked for.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    /// Records a leaf that gradients are accumulated for.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.parents().iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.graph, self) {
            return Err(TensorError::Contract("loss belongs to a different graph".into()));
        }
        if self.differentiated.get() {
            return Err(TensorError::Contract(
                "backward already ran on this graph; build a new graph for another pass".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        self.differentiated.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if nodes[id].requires_grad {
                backprop_node(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| match g {
                Some(g) if n.requires_grad => Some(Tensor::from_raw(n.value.shape().to_vec(), g)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Batch normalization using statistics of the current batch.
    ///
    /// `x` is `[n, c]` or `[n, c, h, w]`; statistics are per channel `c`.
    /// Returns the normalized output together with the batch mean and the
    /// unbiased batch variance, for running-statistics tracking.
    pub fn batch_norm_train<'g>(
        &'g self,
        x: Var<'g>,
        gamma: Var<'g>,
        beta: Var<'g>,
        eps: f64,
    ) -> Result<(Var<'g>, Vec<f64>, Vec<f64>)> {
        let (shape, n, c, inner) = bn_layout(&x, &gamma, &beta)?;
        let xv = x.value();
        let m = (n * inner) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                mean[ch] += xv.data()[base..base + inner].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                var[ch] += xv.data()[base..base + inner]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / m).collect();
        let unbiased: Vec<f64> = if m > 1.0 {
            var.iter().map(|v| v / (m - 1.0)).collect()
        } else {
            vec![0.0; c]
        };
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        drop(xv);
        let out = self.bn_apply(x, gamma, beta, shape, n, c, inner, &mean, inv_std, true);
        Ok((out, mean, unbiased))
    }

    /// Batch normalization as a fixed affine map using running statistics.
    pub fn batch_norm_infer<'g>(
        &'g self,
        x: Var<'g>,
        gamma: Var<'g>,
        beta: Var<'g>,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var<'g>> {
        let (shape, n, c, inner) = bn_layout(&x, &gamma, &beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::shape("batch_norm running stats", &[c], &[running_mean.len()]));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        Ok(self.bn_apply(x, gamma, beta, shape, n, c, inner, running_mean, inv_std, false))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply<'g>(
        &'g self,
        x: Var<'g>,
        gamma: Var<'g>,
        beta: Var<'g>,
        shape: Vec<usize>,
        n: usize,
        c: usize,
        inner: usize,
        mean: &[f64],
        inv_std: Vec<f64>,
        train: bool,
    ) -> Var<'g> {
        let xv = x.value();
        let gv = gamma.value();
        let bv = beta.value();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                for i in base..base + inner {
                    let h = (xv.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gv.data()[ch] * h + bv.data()[ch];
                }
            }
        }
        drop((xv, gv, bv));
        self.push(
            Tensor::from_raw(shape, out),
            Op::BatchNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                train,
            },
        )
    }
}

fn bn_layout(x: &Var<'_>, gamma: &Var<'_>, beta: &Var<'_>) -> Result<(Vec<usize>, usize, usize, usize)> {
    let shape = x.shape();
    let (n, c, inner) = match shape.as_slice() {
        [n, c] => (*n, *c, 1),
        [n, c, h, w] => (*n, *c, h * w),
        _ => return Err(TensorError::shape("batch_norm (expects [n,c] or [n,c,h,w])", &shape, &[])),
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::shape("batch_norm affine", &shape, &gamma.shape()));
    }
    Ok((shape, n, c, inner))
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

/// Sums `g` (shaped `out_shape`) down onto an input of `in_shape`, scaling
/// each element by `factor(i)`.
fn reduce_into(
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    in_shape: &[usize],
    out_shape: &[usize],
    g: &[f64],
    factor: impl Fn(usize) -> f64,
) {
    let len: usize = in_shape.iter().product();
    let acc = accumulate(grads, id, len);
    if in_shape == out_shape {
        for (i, (a, gv)) in acc.iter_mut().zip(g).enumerate() {
            *a += gv * factor(i);
        }
    } else {
        let idx = broadcast_index(in_shape, out_shape);
        for (i, (&j, gv)) in idx.iter().zip(g).enumerate() {
            acc[j] += gv * factor(i);
        }
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out_shape = node.value.shape();
    let needs = |p: usize| nodes[p].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if needs(*a) {
                reduce_into(grads, *a, nodes[*a].value.shape(), out_shape, g, |_| 1.0);
            }
            if needs(*b) {
                reduce_into(grads, *b, nodes[*b].value.shape(), out_shape, g, |_| sign);
            }
        }
        Op::Mul(a, b) | Op::Div(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let ia = (av.shape() != out_shape).then(|| broadcast_index(av.shape(), out_shape));
            let ib = (bv.shape() != out_shape).then(|| broadcast_index(bv.shape(), out_shape));
            let at = |i: usize| av.data()[ia.as_ref().map_or(i, |v| v[i])];
            let bt = |i: usize| bv.data()[ib.as_ref().map_or(i, |v| v[i])];
            let div = matches!(node.op, Op::Div(..));
            if needs(*a) {
                if div {
                    reduce_into(grads, *a, av.shape(), out_shape, g, |i| 1.0 / bt(i));
                } else {
                    reduce_into(grads, *a, av.shape(), out_shape, g, bt);
                }
            }
            if needs(*b) {
                if div {
                    reduce_into(grads, *b, bv.shape(), out_shape, g, |i| -at(i) / (bt(i) * bt(i)));
                } else {
                    reduce_into(grads, *b, bv.shape(), out_shape, g, at);
                }
            }
        }
        Op::Neg(a) => unary(grads, *a, g, |_, gv| -gv),
        Op::Scale(a, c) => unary(grads, *a, g, |_, gv| gv * c),
        Op::Offset(a) => unary(grads, *a, g, |_, gv| gv),
        Op::Relu(a) => {
            let x = nodes[*a].value.data();
            unary(grads, *a, g, |i, gv| if x[i] > 0.0 { gv } else { 0.0 })
        }
        Op::Exp(a) => {
            let y = node.value.data();
            unary(grads, *a, g, |i, gv| gv * y[i])
        }
        Op::Log(a) => {
            let x = nodes[*a].value.data();
            unary(grads, *a, g, |i, gv| gv / x[i])
        }
        Op::Sqrt(a) => {
            let y = node.value.data();
            unary(grads, *a, g, |i, gv| 0.5 * gv / y[i])
        }
        Op::Square(a) => {
            let x = nodes[*a].value.data();
            unary(grads, *a, g, |i, gv| 2.0 * gv * x[i])
        }
        Op::Sum(a) => {
            let acc = accumulate(grads, *a, nodes[*a].value.len());
            acc.iter_mut().for_each(|v| *v += g[0]);
        }
        Op::SumAxis { x, axis } => {
            let shape = nodes[*x].value.shape();
            let (outer, n, inner) = split_axis(shape, *axis);
            let acc = accumulate(grads, *x, outer * n * inner);
            for o in 0..outer {
                for j in 0..n {
                    let dst = &mut acc[(o * n + j) * inner..(o * n + j + 1) * inner];
                    let src = &g[o * inner..(o + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
        }
        Op::Reshape(a) => unary(grads, *a, g, |_, gv| gv),
        Op::Permute { x, axes } => {
            let mut inverse = vec![0; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inverse[a] = i;
            }
            let back = permute_data(g, out_shape, &inverse);
            let acc = accumulate(grads, *x, back.len());
            acc.iter_mut().zip(&back).for_each(|(d, s)| *d += s);
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = split_axis(out_shape, *axis);
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p].value.shape()[*axis];
                if needs(p) {
                    let acc = accumulate(grads, p, outer * n * inner);
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                        let dst = &mut acc[o * n * inner..(o + 1) * n * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                offset += n;
            }
        }
        Op::Slice { x, axis, start } => {
            let in_shape = nodes[*x].value.shape();
            let (outer, total, inner) = split_axis(in_shape, *axis);
            let n = out_shape[*axis];
            let acc = accumulate(grads, *x, outer * total * inner);
            for o in 0..outer {
                let dst = &mut acc[(o * total + start) * inner..(o * total + start + n) * inner];
                let src = &g[o * n * inner..(o + 1) * n * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        Op::IndexSelect { x, axis, indices } => {
            let in_shape = nodes[*x].value.shape();
            let (outer, total, inner) = split_axis(in_shape, *axis);
            let n = indices.len();
            let acc = accumulate(grads, *x, outer * total * inner);
            for o in 0..outer {
                for (j, &src_j) in indices.iter().enumerate() {
                    let dst = &mut acc[(o * total + src_j) * inner..(o * total + src_j + 1) * inner];
                    let src = &g[(o * n + j) * inner..(o * n + j + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
        }
        Op::Matmul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (batch, m, k, n, b_batched) = matmul_dims(av.shape(), bv.shape()).expect("validated");
            if needs(*a) {
                let acc = accumulate(grads, *a, av.len());
                for t in 0..batch {
                    let bs = if b_batched { &bv.data()[t * k * n..(t + 1) * k * n] } else { bv.data() };
                    gemm_a_bt_acc(&g[t * m * n..(t + 1) * m * n], bs, &mut acc[t * m * k..(t + 1) * m * k], m, n, k);
                }
            }
            if needs(*b) {
                let acc = accumulate(grads, *b, bv.len());
                for t in 0..batch {
                    let dst = if b_batched { &mut acc[t * k * n..(t + 1) * k * n] } else { &mut acc[..] };
                    gemm_at_b_acc(&av.data()[t * m * k..(t + 1) * m * k], &g[t * m * n..(t + 1) * m * n], dst, m, k, n);
                }
            }
        }
        Op::Softmax(a) => {
            let y = node.value.data();
            let n = *out_shape.last().unwrap_or(&1);
            let acc = accumulate(grads, *a, y.len());
            for (r, (yr, gr)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    acc[r * n + j] += yr[j] * (gr[j] - dot);
                }
            }
        }
        Op::Conv2d { x, w, b } => {
            let (xv, wv) = (&nodes[*x].value, &nodes[*w].value);
            let (nb, c, h, wd) = dims4(xv.shape());
            let (o, _, kh, kw) = dims4(wv.shape());
            let hw = h * wd;
            let ckk = c * kh * kw;
            let mut cols = vec![0.0; ckk * hw];
            let mut dcols = vec![0.0; ckk * hw];
            let mut gw = vec![0.0; wv.len()];
            let mut gb = vec![0.0; o];
            let mut gx = needs(*x).then(|| vec![0.0; xv.len()]);
            for s in 0..nb {
                let gs = &g[s * o * hw..(s + 1) * o * hw];
                if needs(*w) {
                    im2col(&xv.data()[s * c * hw..(s + 1) * c * hw], c, h, wd, kh, kw, &mut cols);
                    gemm_a_bt_acc(gs, &cols, &mut gw, o, hw, ckk);
                }
                for (oc, row) in gs.chunks(hw).enumerate() {
                    gb[oc] += row.iter().sum::<f64>();
                }
                if let Some(gx) = gx.as_mut() {
                    dcols.iter_mut().for_each(|v| *v = 0.0);
                    gemm_at_b_acc(wv.data(), gs, &mut dcols, o, ckk, hw);
                    col2im_acc(&dcols, c, h, wd, kh, kw, &mut gx[s * c * hw..(s + 1) * c * hw]);
                }
            }
            if let Some(gx) = gx {
                add_into(accumulate(grads, *x, gx.len()), &gx);
            }
            if needs(*w) {
                add_into(accumulate(grads, *w, gw.len()), &gw);
            }
            if needs(*b) {
                add_into(accumulate(grads, *b, o), &gb);
            }
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
            let shape = nodes[*x].value.shape();
            let (n, c) = (shape[0], shape[1]);
            let inner: usize = shape[2..].iter().product();
            let gam = nodes[*gamma].value.data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for bi in 0..n {
                for ch in 0..c {
                    let base = (bi * c + ch) * inner;
                    for i in base..base + inner {
                        sum_g[ch] += g[i];
                        sum_gx[ch] += g[i] * xhat[i];
                    }
                }
            }
            if needs(*x) {
                let m = (n * inner) as f64;
                let acc = accumulate(grads, *x, g.len());
                for bi in 0..n {
                    for ch in 0..c {
                        let base = (bi * c + ch) * inner;
                        let k = gam[ch] * inv_std[ch];
                        for i in base..base + inner {
                            acc[i] += if *train {
                                k * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
            }
            if needs(*gamma) {
                add_into(accumulate(grads, *gamma, c), &sum_gx);
            }
            if needs(*beta) {
                add_into(accumulate(grads, *beta, c), &sum_g);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Elementwise gradient for single-input ops.
fn unary(grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64], f: impl Fn(usize, f64) -> f64) {
    let acc = accumulate(grads, id, g.len());
    for (i, (a, &gv)) in acc.iter_mut().zip(g).enumerate() {
        *a += f(i, gv);
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

/// `(batch, m, k, n, rhs_batched)` for supported matmul ranks.
fn matmul_dims(a: &[usize], b: &[usize]) -> Option<(usize, usize, usize, usize, bool)> {
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Some((1, *m, *k, *n, false)),
        ([t, m, k], [k2, n]) if k == k2 => Some((*t, *m, *k, *n, false)),
        ([t, m, k], [t2, k2, n]) if k == k2 && t == t2 => Some((*t, *m, *k, *n, true)),
        _ => None,
    }
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..rank).rev() {
            counter[d] += 1;
            offset += eff[d];
            if counter[d] < out_shape[d] {
                break;
            }
            offset -= eff[d] * counter[d];
            counter[d] = 0;
        }
    }
    out
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn same_graph(&self, other: &Var<'g>) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(TensorError::Contract("operands recorded on different graphs".into()))
        }
    }

    fn binary(self, rhs: Var<'g>, name: &'static str, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Result<Var<'g>> {
        self.same_graph(&rhs)?;
        let value = {
            let (a, b) = (self.value(), rhs.value());
            if a.shape() == b.shape() {
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::from_raw(a.shape().to_vec(), data)
            } else {
                let shape = broadcast_shape(a.shape(), b.shape())
                    .ok_or_else(|| TensorError::shape(name, a.shape(), b.shape()))?;
                let ia = broadcast_index(a.shape(), &shape);
                let ib = broadcast_index(b.shape(), &shape);
                let data = ia.iter().zip(&ib).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect();
                Tensor::from_raw(shape, data)
            }
        };
        Ok(self.graph.push(value, op(self.id, rhs.id)))
    }

    fn map(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'g> {
        let value = {
            let a = self.value();
            Tensor::from_raw(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
        };
        self.graph.push(value, op)
    }

    /// Elementwise sum with broadcasting.
    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn div(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, "div", |a, b| a / b, Op::Div)
    }

    pub fn neg(self) -> Var<'g> {
        self.map(|x| -x, Op::Neg(self.id))
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.map(|x| c * x, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.map(|x| x + c, Op::Offset(self.id))
    }

    pub fn relu(self) -> Var<'g> {
        self.map(|x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn exp(self) -> Var<'g> {
        self.map(f64::exp, Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'g> {
        self.map(f64::ln, Op::Log(self.id))
    }

    pub fn sqrt(self) -> Var<'g> {
        self.map(f64::sqrt, Op::Sqrt(self.id))
    }

    pub fn square(self) -> Var<'g> {
        self.map(|x| x * x, Op::Square(self.id))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Var<'g> {
        let s: f64 = self.value().data().iter().sum();
        self.graph.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axis`. With `keepdim` the axis stays with size 1.
    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let shape = a.shape();
            if axis >= shape.len() {
                return Err(TensorError::shape("sum_axis", shape, &[axis]));
            }
            let (outer, n, inner) = split_axis(shape, axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..n {
                    let src = &a.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                    add_into(&mut out[o * inner..(o + 1) * inner], src);
                }
            }
            let mut new_shape = shape.to_vec();
            if keepdim {
                new_shape[axis] = 1;
            } else {
                new_shape.remove(axis);
            }
            Tensor::from_raw(new_shape, out)
        };
        Ok(self.graph.push(value, Op::SumAxis { x: self.id, axis }))
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Result<Var<'g>> {
        let n = self.shape().get(axis).copied().unwrap_or(1) as f64;
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / n))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let value = self.value().clone().reshaped(shape)?;
        Ok(self.graph.push(value, Op::Reshape(self.id)))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let rank = a.rank();
            let mut seen = vec![false; rank];
            if axes.len() != rank || axes.iter().any(|&x| x >= rank || std::mem::replace(&mut seen[x], true)) {
                return Err(TensorError::shape("permute", a.shape(), axes));
            }
            let out_shape: Vec<usize> = axes.iter().map(|&x| a.shape()[x]).collect();
            Tensor::from_raw(out_shape, permute_data(a.data(), a.shape(), axes))
        };
        Ok(self.graph.push(value, Op::Permute { x: self.id, axes: axes.to_vec() }))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'g>> {
        let rank = self.value().rank();
        if rank < 2 {
            return Err(TensorError::shape("transpose", &self.shape(), &[]));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let shape = a.shape();
            if axis >= shape.len() || len == 0 || start + len > shape[axis] {
                return Err(TensorError::shape("slice", shape, &[axis, start, len]));
            }
            let (outer, total, inner) = split_axis(shape, axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                out.extend_from_slice(&a.data()[(o * total + start) * inner..(o * total + start + len) * inner]);
            }
            let mut new_shape = shape.to_vec();
            new_shape[axis] = len;
            Tensor::from_raw(new_shape, out)
        };
        Ok(self.graph.push(value, Op::Slice { x: self.id, axis, start }))
    }

    /// Gathers entries along `axis` (indices may repeat).
    pub fn index_select(self, axis: usize, indices: &[usize]) -> Result<Var<'g>> {
        let value = {
            let a = self.value();
            let shape = a.shape();
            if axis >= shape.len() || indices.is_empty() || indices.iter().any(|&i| i >= shape[axis]) {
                return Err(TensorError::shape("index_select", shape, indices));
            }
            let (outer, total, inner) = split_axis(shape, axis);
            let mut out = Vec::with_capacity(outer * indices.len() * inner);
            for o in 0..outer {
                for &j in indices {
                    out.extend_from_slice(&a.data()[(o * total + j) * inner..(o * total + j + 1) * inner]);
                }
            }
            let mut new_shape = shape.to_vec();
            new_shape[axis] = indices.len();
            Tensor::from_raw(new_shape, out)
        };
        Ok(self.graph.push(value, Op::IndexSelect { x: self.id, axis, indices: indices.to_vec() }))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts.first().ok_or_else(|| TensorError::Contract("concat of nothing".into()))?;
        let graph = first.graph;
        let value = {
            let values: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| p.value()).collect();
            let base = values[0].shape().to_vec();
            if axis >= base.len() {
                return Err(TensorError::shape("concat", &base, &[axis]));
            }
            let mut total = 0;
            for (p, v) in parts.iter().zip(&values) {
                first.same_graph(p)?;
                let s = v.shape();
                if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                    return Err(TensorError::shape("concat", &base, s));
                }
                total += s[axis];
            }
            let (outer, _, inner) = split_axis(&base, axis);
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for v in &values {
                    let n = v.shape()[axis];
                    out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
                }
            }
            let mut shape = base;
            shape[axis] = total;
            Tensor::from_raw(shape, out)
        };
        Ok(graph.push(value, Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis }))
    }

    /// Matrix product: `[m,k]·[k,n]`, `[t,m,k]·[k,n]` or `[t,m,k]·[t,k,n]`.
    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&rhs)?;
        let value = {
            let (a, b) = (self.value(), rhs.value());
            let (batch, m, k, n, b_batched) =
                matmul_dims(a.shape(), b.shape()).ok_or_else(|| TensorError::shape("matmul", a.shape(), b.shape()))?;
            let mut out = vec![0.0; batch * m * n];
            for t in 0..batch {
                let bs = if b_batched { &b.data()[t * k * n..(t + 1) * k * n] } else { b.data() };
                gemm_acc(&a.data()[t * m * k..(t + 1) * m * k], bs, &mut out[t * m * n..(t + 1) * m * n], m, k, n);
            }
            let mut shape = a.shape()[..a.rank() - 1].to_vec();
            shape.push(n);
            Tensor::from_raw(shape, out)
        };
        Ok(self.graph.push(value, Op::Matmul(self.id, rhs.id)))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(self) -> Var<'g> {
        let value = {
            let a = self.value();
            let n = *a.shape().last().unwrap_or(&1);
            let mut out = Vec::with_capacity(a.len());
            for row in a.data().chunks(n) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let start = out.len();
                out.extend(row.iter().map(|v| (v - max).exp()));
                let s: f64 = out[start..].iter().sum();
                out[start..].iter_mut().for_each(|v| *v /= s);
            }
            Tensor::from_raw(a.shape().to_vec(), out)
        };
        self.graph.push(value, Op::Softmax(self.id))
    }

    /// Stride-1 2-D convolution with "same" zero padding and odd kernels.
    /// `self` is `[n,c,h,w]`, `weight` is `[o,c,kh,kw]`, `bias` is `[o]`.
    pub fn conv2d(self, weight: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&weight)?;
        self.same_graph(&bias)?;
        let value = {
            let (x, w, b) = (self.value(), weight.value(), bias.value());
            let (xs, ws) = (x.shape(), w.shape());
            if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] % 2 == 0 || ws[3] % 2 == 0 {
                return Err(TensorError::shape("conv2d", xs, ws));
            }
            if b.shape() != [ws[0]] {
                return Err(TensorError::shape("conv2d bias", ws, b.shape()));
            }
            let (nb, c, h, wd) = dims4(xs);
            let (o, _, kh, kw) = dims4(ws);
            let hw = h * wd;
            let ckk = c * kh * kw;
            let mut cols = vec![0.0; ckk * hw];
            let mut out = vec![0.0; nb * o * hw];
            for s in 0..nb {
                im2col(&x.data()[s * c * hw..(s + 1) * c * hw], c, h, wd, kh, kw, &mut cols);
                let dst = &mut out[s * o * hw..(s + 1) * o * hw];
                for (oc, row) in dst.chunks_mut(hw).enumerate() {
                    row.iter_mut().for_each(|v| *v = b.data()[oc]);
                }
                gemm_acc(w.data(), &cols, dst, o, ckk, hw);
            }
            Tensor::from_raw(vec![nb, o, h, wd], out)
        };
        Ok(self.graph.push(value, Op::Conv2d { x: self.id, w: weight.id, b: bias.id }))
    }
}
