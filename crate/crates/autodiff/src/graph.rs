use std::fmt;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a user-defined op: `(inputs, output, grad_output) -> grad per input`.
pub type CustomBackward<F> = Arc<dyn Fn(&[&Tensor<F>], &Tensor<F>, &Tensor<F>) -> Vec<Tensor<F>> + Send + Sync>;

pub(crate) enum Op<F: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBcast(Var, Var),
    MulBcast(Var, Var),
    Maximum(Var, Var),
    Minimum(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Powf(Var, F),
    Clamp(Var, F, F),
    MatMul { a: Var, b: Var, trans_b: bool, batch: usize, m: usize, k: usize, n: usize, shared_b: bool },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm { x: Var, axis: usize, eps: F },
    Narrow { x: Var, axis: usize, start: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    RepeatAxis { x: Var, axis: usize },
    IndexSelect { x: Var, indices: Vec<usize> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, c_out: usize },
    UpsampleNearest { x: Var, factor: usize },
    UpsampleBilinear { x: Var, factor: usize },
    Custom { inputs: Vec<Var>, backward: CustomBackward<F> },
}

impl<F: Real> Op<F> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | AddBcast(a, b) | MulBcast(a, b) | Maximum(a, b) | Minimum(a, b) => vec![*a, *b],
            Scale(x, _)
            | AddScalar(x)
            | Relu(x)
            | Sigmoid(x)
            | Exp(x)
            | Log(x)
            | Abs(x)
            | Powf(x, _)
            | Clamp(x, _, _)
            | Permute(x, _)
            | Reshape(x)
            | Sum(x)
            | Mean(x)
            | SumAxis(x, _)
            | Softmax(x, _)
            | LogSoftmax(x, _) => vec![*x],
            MatMul { a, b, .. } => vec![*a, *b],
            LayerNorm { x, .. } | Narrow { x, .. } | RepeatAxis { x, .. } | IndexSelect { x, .. } => vec![*x],
            Concat { inputs, .. } | Custom { inputs, .. } => inputs.clone(),
            Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            UpsampleNearest { x, .. } | UpsampleBilinear { x, .. } => vec![*x],
        }
    }
}

pub(crate) struct Node<F: Real> {
    pub(crate) value: Tensor<F>,
    pub(crate) op: Op<F>,
    pub(crate) requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so insertion order
/// is a valid topological order and backward walks it in reverse exactly once.
pub struct Graph<F: Real> {
    pub(crate) nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> fmt::Debug for Graph<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.nodes.len()).finish()
    }
}

/// Gradients of a scalar with respect to every grad-tracking leaf.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, var: Var) -> Option<&Tensor<F>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }

    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it tracks gradients iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<F>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node { value: tensor, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<F>) -> Var {
        self.leaf(tensor.with_grad(false))
    }

    /// Leaf that always receives a gradient.
    pub fn param(&mut self, tensor: Tensor<F>) -> Var {
        self.leaf(tensor.with_grad(true))
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor<F>, op: Op<F>) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        // Nodes that cannot reach a tracked leaf keep no backward record.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value: value.with_grad(requires_grad), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers an op with a caller-supplied backward rule.
    pub fn custom(&mut self, name: &'static str, inputs: &[Var], value: Tensor<F>, backward: CustomBackward<F>) -> Result<Var> {
        self.push(name, value, Op::Custom { inputs: inputs.to_vec(), backward })
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalar { shape: loss_value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![F::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            let contributions = self.backward_node(node, &gout);
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (&node.op, node.requires_grad, g) {
                (Op::Leaf, true, Some(g)) => Some(Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape")),
                (Op::Leaf, true, None) => Some(Tensor::zeros(node.value.shape().to_vec())),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn val(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.data()
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<F>, gout: &[F]) -> Vec<(Var, Vec<F>)> {
        use Op::*;
        let out = node.value.data();
        let mut res = Vec::new();
        match &node.op {
            Leaf => {}
            Add(a, b) => {
                res.push((*a, gout.to_vec()));
                res.push((*b, gout.to_vec()));
            }
            Sub(a, b) => {
                res.push((*a, gout.to_vec()));
                res.push((*b, gout.iter().map(|&g| -g).collect()));
            }
            Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.tracks(*a) {
                    res.push((*a, gout.iter().zip(bv).map(|(&g, &y)| g * y).collect()));
                }
                if self.tracks(*b) {
                    res.push((*b, gout.iter().zip(av).map(|(&g, &x)| g * x).collect()));
                }
            }
            Div(a, b) => {
                let bv = self.val(*b);
                if self.tracks(*a) {
                    res.push((*a, gout.iter().zip(bv).map(|(&g, &y)| g / y).collect()));
                }
                if self.tracks(*b) {
                    let g: Vec<F> = gout.iter().zip(out.iter().zip(bv)).map(|(&g, (&q, &y))| -g * q / y).collect();
                    res.push((*b, g));
                }
            }
            AddBcast(a, b) => {
                let inner = self.val(*b).len();
                res.push((*a, gout.to_vec()));
                if self.tracks(*b) {
                    let mut gb = vec![F::zero(); inner];
                    for chunk in gout.chunks(inner) {
                        for (acc, &g) in gb.iter_mut().zip(chunk) {
                            *acc += g;
                        }
                    }
                    res.push((*b, gb));
                }
            }
            MulBcast(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let inner = bv.len();
                if self.tracks(*a) {
                    let g = gout.chunks(inner).flat_map(|chunk| chunk.iter().zip(bv).map(|(&g, &y)| g * y)).collect();
                    res.push((*a, g));
                }
                if self.tracks(*b) {
                    let mut gb = vec![F::zero(); inner];
                    for (gc, ac) in gout.chunks(inner).zip(av.chunks(inner)) {
                        for ((acc, &g), &x) in gb.iter_mut().zip(gc).zip(ac) {
                            *acc += g * x;
                        }
                    }
                    res.push((*b, gb));
                }
            }
            Maximum(a, b) | Minimum(a, b) => {
                let is_max = matches!(node.op, Maximum(..));
                let (av, bv) = (self.val(*a), self.val(*b));
                // Ties route the gradient to the first argument.
                let pick_a: Vec<bool> = av.iter().zip(bv).map(|(&x, &y)| if is_max { x >= y } else { x <= y }).collect();
                let ga = gout.iter().zip(&pick_a).map(|(&g, &p)| if p { g } else { F::zero() }).collect();
                let gb = gout.iter().zip(&pick_a).map(|(&g, &p)| if p { F::zero() } else { g }).collect();
                res.push((*a, ga));
                res.push((*b, gb));
            }
            Scale(x, s) => res.push((*x, gout.iter().map(|&g| g * *s).collect())),
            AddScalar(x) => res.push((*x, gout.to_vec())),
            Relu(x) => {
                let g = gout.iter().zip(out).map(|(&g, &y)| if y > F::zero() { g } else { F::zero() }).collect();
                res.push((*x, g));
            }
            Sigmoid(x) => {
                let g = gout.iter().zip(out).map(|(&g, &y)| g * y * (F::one() - y)).collect();
                res.push((*x, g));
            }
            Exp(x) => res.push((*x, gout.iter().zip(out).map(|(&g, &y)| g * y).collect())),
            Log(x) => {
                let xv = self.val(*x);
                res.push((*x, gout.iter().zip(xv).map(|(&g, &v)| g / v).collect()));
            }
            Abs(x) => {
                let xv = self.val(*x);
                let g = gout
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| {
                        if v > F::zero() {
                            g
                        } else if v < F::zero() {
                            -g
                        } else {
                            F::zero()
                        }
                    })
                    .collect();
                res.push((*x, g));
            }
            Powf(x, p) => {
                let xv = self.val(*x);
                let g = gout.iter().zip(xv).map(|(&g, &v)| if v == F::zero() && *p < F::one() { F::zero() } else { g * *p * v.powf(*p - F::one()) }).collect();
                res.push((*x, g));
            }
            Clamp(x, lo, hi) => {
                let xv = self.val(*x);
                let g = gout.iter().zip(xv).map(|(&g, &v)| if v < *lo || v > *hi { F::zero() } else { g }).collect();
                res.push((*x, g));
            }
            MatMul { a, b, trans_b, batch, m, k, n, shared_b } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k, n) = (*m, *k, *n);
                if self.tracks(*a) {
                    let mut ga = vec![F::zero(); av.len()];
                    for bi in 0..*batch {
                        let b_off = if *shared_b { 0 } else { bi * k * n };
                        let gc = &gout[bi * m * n..(bi + 1) * m * n];
                        let bb = &bv[b_off..b_off + k * n];
                        let dst = &mut ga[bi * m * k..(bi + 1) * m * k];
                        if *trans_b {
                            kernels::gemm_nn(gc, bb, dst, m, n, k);
                        } else {
                            kernels::gemm_nt(gc, bb, dst, m, n, k);
                        }
                    }
                    res.push((*a, ga));
                }
                if self.tracks(*b) {
                    let mut gb = vec![F::zero(); bv.len()];
                    for bi in 0..*batch {
                        let b_off = if *shared_b { 0 } else { bi * k * n };
                        let gc = &gout[bi * m * n..(bi + 1) * m * n];
                        let aa = &av[bi * m * k..(bi + 1) * m * k];
                        let dst = &mut gb[b_off..b_off + k * n];
                        if *trans_b {
                            kernels::gemm_tn(gc, aa, dst, m, n, k);
                        } else {
                            kernels::gemm_tn(aa, gc, dst, m, k, n);
                        }
                    }
                    res.push((*b, gb));
                }
            }
            Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                res.push((*x, kernels::permute(gout, node.value.shape(), &inv)));
            }
            Reshape(x) => res.push((*x, gout.to_vec())),
            Sum(x) => res.push((*x, vec![gout[0]; self.val(*x).len()])),
            Mean(x) => {
                let n = self.val(*x).len();
                res.push((*x, vec![gout[0] / F::of(n as f64); n]));
            }
            SumAxis(x, axis) => {
                let (outer, len, inner) = kernels::split_axis(self.nodes[x.0].value.shape(), *axis);
                let mut g = vec![F::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut g[(o * len + l) * inner..(o * len + l + 1) * inner];
                        dst.copy_from_slice(&gout[o * inner..(o + 1) * inner]);
                    }
                }
                res.push((*x, g));
            }
            Softmax(x, axis) => {
                let (outer, len, inner) = kernels::split_axis(node.value.shape(), *axis);
                let mut g = vec![F::zero(); out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dotp: F = (0..len).map(|l| gout[idx(l)] * out[idx(l)]).sum();
                        for l in 0..len {
                            g[idx(l)] = out[idx(l)] * (gout[idx(l)] - dotp);
                        }
                    }
                }
                res.push((*x, g));
            }
            LogSoftmax(x, axis) => {
                let (outer, len, inner) = kernels::split_axis(node.value.shape(), *axis);
                let mut g = vec![F::zero(); out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let total: F = (0..len).map(|l| gout[idx(l)]).sum();
                        for l in 0..len {
                            g[idx(l)] = gout[idx(l)] - out[idx(l)].exp() * total;
                        }
                    }
                }
                res.push((*x, g));
            }
            LayerNorm { x, axis, eps } => {
                let xv = self.val(*x);
                let (outer, len, inner) = kernels::split_axis(node.value.shape(), *axis);
                let nf = F::of(len as f64);
                let mut g = vec![F::zero(); out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let mean: F = (0..len).map(|l| xv[idx(l)]).sum::<F>() / nf;
                        let var: F = (0..len).map(|l| (xv[idx(l)] - mean).powi(2)).sum::<F>() / nf;
                        let inv_std = F::one() / (var + *eps).sqrt();
                        let mean_g: F = (0..len).map(|l| gout[idx(l)]).sum::<F>() / nf;
                        let mean_gy: F = (0..len).map(|l| gout[idx(l)] * out[idx(l)]).sum::<F>() / nf;
                        for l in 0..len {
                            g[idx(l)] = inv_std * (gout[idx(l)] - mean_g - out[idx(l)] * mean_gy);
                        }
                    }
                }
                res.push((*x, g));
            }
            Narrow { x, axis, start } => {
                let in_shape = self.nodes[x.0].value.shape();
                let (outer, len_in, inner) = kernels::split_axis(in_shape, *axis);
                let len_out = node.value.shape()[*axis];
                let mut g = vec![F::zero(); outer * len_in * inner];
                for o in 0..outer {
                    let src = &gout[o * len_out * inner..(o + 1) * len_out * inner];
                    let dst_off = (o * len_in + start) * inner;
                    g[dst_off..dst_off + len_out * inner].copy_from_slice(src);
                }
                res.push((*x, g));
            }
            Concat { inputs, axis } => {
                let (outer, len_out, inner) = kernels::split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.nodes[v.0].value.shape()[*axis];
                    if self.tracks(*v) {
                        let mut g = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let s = (o * len_out + offset) * inner;
                            g.extend_from_slice(&gout[s..s + len * inner]);
                        }
                        res.push((*v, g));
                    }
                    offset += len;
                }
            }
            RepeatAxis { x, axis } => {
                let (outer, times, inner) = kernels::split_axis(node.value.shape(), *axis);
                let mut g = vec![F::zero(); outer * inner];
                for o in 0..outer {
                    for t in 0..times {
                        let src = &gout[(o * times + t) * inner..(o * times + t + 1) * inner];
                        for (acc, &v) in g[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
                res.push((*x, g));
            }
            IndexSelect { x, indices } => {
                let xv = self.val(*x);
                let row = if indices.is_empty() { 0 } else { gout.len() / indices.len() };
                let mut g = vec![F::zero(); xv.len()];
                for (i, &r) in indices.iter().enumerate() {
                    for (acc, &v) in g[r * row..(r + 1) * row].iter_mut().zip(&gout[i * row..(i + 1) * row]) {
                        *acc += v;
                    }
                }
                res.push((*x, g));
            }
            Conv2d { x, w, b, geom, c_out } => {
                let positions = geom.positions();
                let patch = geom.patch_len();
                if self.tracks(*w) {
                    let cols = kernels::im2col(self.val(*x), geom);
                    let mut gw = vec![F::zero(); c_out * patch];
                    kernels::gemm_nt(gout, &cols, &mut gw, *c_out, positions, patch);
                    res.push((*w, gw));
                }
                if self.tracks(*x) {
                    let mut gcols = vec![F::zero(); patch * positions];
                    kernels::gemm_tn(self.val(*w), gout, &mut gcols, *c_out, patch, positions);
                    let mut gx = vec![F::zero(); self.val(*x).len()];
                    kernels::col2im(&gcols, geom, &mut gx);
                    res.push((*x, gx));
                }
                if let Some(b) = b {
                    let gb = gout.chunks(positions).map(|c| c.iter().copied().sum()).collect();
                    res.push((*b, gb));
                }
            }
            UpsampleNearest { x, factor } => {
                let s = self.nodes[x.0].value.shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let f = *factor;
                let mut g = vec![F::zero(); c * h * w];
                let wo = w * f;
                for ci in 0..c {
                    for oy in 0..h * f {
                        for ox in 0..wo {
                            g[(ci * h + oy / f) * w + ox / f] += gout[(ci * h * f + oy) * wo + ox];
                        }
                    }
                }
                res.push((*x, g));
            }
            UpsampleBilinear { x, factor } => {
                let s = self.nodes[x.0].value.shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let ty = kernels::bilinear_taps(h, *factor);
                let tx = kernels::bilinear_taps(w, *factor);
                let wo = tx.len();
                let mut g = vec![F::zero(); c * h * w];
                for ci in 0..c {
                    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                        let wy = F::of(wy);
                        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                            let wx = F::of(wx);
                            let go = gout[(ci * ty.len() + oy) * wo + ox];
                            let base = ci * h * w;
                            g[base + y0 * w + x0] += go * (F::one() - wy) * (F::one() - wx);
                            g[base + y0 * w + x1] += go * (F::one() - wy) * wx;
                            g[base + y1 * w + x0] += go * wy * (F::one() - wx);
                            g[base + y1 * w + x1] += go * wy * wx;
                        }
                    }
                }
                res.push((*x, g));
            }
            Custom { inputs, backward } => {
                let ins: Vec<&Tensor<F>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let gt = Tensor::new(node.value.shape().to_vec(), gout.to_vec()).expect("grad shape");
                let grads = backward(&ins, &node.value, &gt);
                for (v, g) in inputs.iter().zip(grads) {
                    res.push((*v, g.into_data()));
                }
            }
        }
        res
    }
}
