//! Forward definitions of every differentiable op. Backward rules live in `graph.rs`.

use crate::error::{shape_err, Result, TensorError};
use crate::graph::{Graph, Op, Var};
use crate::kernels::{self, ConvGeom};
use crate::real::Real;
use crate::tensor::Tensor;

fn same_shape<F: Real>(g: &Graph<F>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return shape_err(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b)));
    }
    Ok(())
}

fn check_axis(axis: usize, ndim: usize) -> Result<()> {
    if axis >= ndim {
        return Err(TensorError::Axis { axis, ndim });
    }
    Ok(())
}

impl<F: Real> Graph<F> {
    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Result<Var> {
        same_shape(self, name, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(name, value, op)
    }

    fn map(&mut self, name: &'static str, x: Var, op: Op<F>, f: impl Fn(F) -> F) -> Result<Var> {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("maximum", a, b, Op::Maximum(a, b), |x, y| if x >= y { x } else { y })
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("minimum", a, b, Op::Minimum(a, b), |x, y| if x <= y { x } else { y })
    }

    fn bcast(&mut self, name: &'static str, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return shape_err(name, format!("{:?} does not end with {:?}", sa, sb));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let inner = bv.numel().max(1);
        let data = av.data().chunks(inner).flat_map(|c| c.iter().zip(bv.data()).map(|(&x, &y)| f(x, y))).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(name, value, op)
    }

    /// `a + b` where `b`'s shape equals the trailing dimensions of `a`.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bcast("add_bcast", a, b, Op::AddBcast(a, b), |x, y| x + y)
    }

    /// `a * b` where `b`'s shape equals the trailing dimensions of `a`.
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bcast("mul_bcast", a, b, Op::MulBcast(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        self.map("scale", x, Op::Scale(x, s), |v| v * s)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -F::one())
    }

    pub fn add_scalar(&mut self, x: Var, s: F) -> Result<Var> {
        self.map("add_scalar", x, Op::AddScalar(x), |v| v + s)
    }

    /// `s - x`
    pub fn rsub_scalar(&mut self, s: F, x: Var) -> Result<Var> {
        let n = self.neg(x)?;
        self.add_scalar(n, s)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, Op::Relu(x), |v| if v > F::zero() { v } else { F::zero() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map("exp", x, Op::Exp(x), |v| v.exp())
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map("log", x, Op::Log(x), |v| v.ln())
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.map("abs", x, Op::Abs(x), |v| v.abs())
    }

    pub fn powf(&mut self, x: Var, p: F) -> Result<Var> {
        self.map("powf", x, Op::Powf(x, p), |v| v.powf(p))
    }

    pub fn clamp(&mut self, x: Var, lo: F, hi: F) -> Result<Var> {
        self.map("clamp", x, Op::Clamp(x, lo, hi), |v| v.max(lo).min(hi))
    }

    /// Matrix product over the last two axes.
    ///
    /// `a: [..., m, k]` with `b: [k, n]` shares `b` across the leading batch;
    /// `a: [B..., m, k]` with `b: [B..., k, n]` multiplies batch-wise.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` over the last two axes (`b: [..., n, k]`).
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let name = "matmul";
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return shape_err(name, format!("need rank >= 2, got {:?} and {:?}", sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b { (sb[sb.len() - 1], sb[sb.len() - 2]) } else { (sb[sb.len() - 2], sb[sb.len() - 1]) };
        if k != kb {
            return shape_err(name, format!("inner dims differ: {:?} x {:?}", sa, sb));
        }
        let shared_b = sb.len() == 2;
        let (batch, m_eff) = if shared_b {
            (1, sa[..sa.len() - 1].iter().product::<usize>())
        } else {
            if sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return shape_err(name, format!("batch dims differ: {:?} x {:?}", sa, sb));
            }
            (sa[..sa.len() - 2].iter().product::<usize>(), m)
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![F::zero(); batch * m_eff * n];
        for bi in 0..batch {
            let aa = &av[bi * m_eff * k..(bi + 1) * m_eff * k];
            let bb = &bv[bi * k * n..(bi + 1) * k * n];
            let cc = &mut out[bi * m_eff * n..(bi + 1) * m_eff * n];
            if trans_b {
                kernels::gemm_nt(aa, bb, cc, m_eff, k, n);
            } else {
                kernels::gemm_nn(aa, bb, cc, m_eff, k, n);
            }
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let value = Tensor::new(shape, out)?;
        self.push(name, value, Op::MatMul { a, b, trans_b, batch, m: m_eff, k, n, shared_b })
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err("permute", format!("invalid permutation {:?} for {:?}", perm, shape));
        }
        let data = kernels::permute(self.value(x).data(), &shape, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let value = Tensor::new(out_shape, data)?;
        self.push("permute", value, Op::Permute(x, perm.to_vec()))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return shape_err("transpose", format!("rank {r}"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: F = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return shape_err("mean", "empty tensor");
        }
        let s: F = xv.data().iter().copied().sum::<F>() / F::of(xv.numel() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean(x))
    }

    /// Sums out `axis` (the axis is removed).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis(axis, shape.len())?;
        let (outer, len, inner) = kernels::split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xv[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        self.push("sum_axis", value, Op::SumAxis(x, axis))
    }

    /// Averages out `axis` (the axis is removed).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = {
            let s = self.shape(x);
            check_axis(axis, s.len())?;
            s[axis]
        };
        if len == 0 {
            return shape_err("mean_axis", "empty axis");
        }
        let s = self.sum_axis(x, axis)?;
        self.scale(s, F::one() / F::of(len as f64))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let data = self.axis_normalize(x, axis, false)?;
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push("softmax", value, Op::Softmax(x, axis))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let data = self.axis_normalize(x, axis, true)?;
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push("log_softmax", value, Op::LogSoftmax(x, axis))
    }

    fn axis_normalize(&self, x: Var, axis: usize, log: bool) -> Result<Vec<F>> {
        let shape = self.shape(x);
        check_axis(axis, shape.len())?;
        let (outer, len, inner) = kernels::split_axis(shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![F::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| xv[idx(l)]).fold(F::neg_infinity(), F::max);
                let total: F = (0..len).map(|l| (xv[idx(l)] - max).exp()).sum();
                let log_total = total.ln();
                for l in 0..len {
                    let shifted = xv[idx(l)] - max;
                    out[idx(l)] = if log { shifted - log_total } else { shifted.exp() / total };
                }
            }
        }
        Ok(out)
    }

    /// Normalizes to zero mean and unit variance along `axis` (no affine terms).
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: F) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis(axis, shape.len())?;
        let (outer, len, inner) = kernels::split_axis(&shape, axis);
        let xv = self.value(x).data();
        let nf = F::of(len as f64);
        let mut out = vec![F::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let mean: F = (0..len).map(|l| xv[idx(l)]).sum::<F>() / nf;
                let var: F = (0..len).map(|l| (xv[idx(l)] - mean).powi(2)).sum::<F>() / nf;
                let inv_std = F::one() / (var + eps).sqrt();
                for l in 0..len {
                    out[idx(l)] = (xv[idx(l)] - mean) * inv_std;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("layer_norm", value, Op::LayerNorm { x, axis, eps })
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis(axis, shape.len())?;
        if start + len > shape[axis] {
            return shape_err("narrow", format!("[{start}, {}) exceeds axis of {}", start + len, shape[axis]));
        }
        let (outer, len_in, inner) = kernels::split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * len_in + start) * inner;
            out.extend_from_slice(&xv[s..s + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, out)?;
        self.push("narrow", value, Op::Narrow { x, axis, start })
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return shape_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        check_axis(axis, base.len())?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err("concat", format!("{:?} vs {:?} on axis {axis}", s, base));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push("concat", value, Op::Concat { inputs: inputs.to_vec(), axis })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        let mut expanded = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let mut s = vec![1];
            s.extend_from_slice(self.shape(v));
            expanded.push(self.reshape(v, &s)?);
        }
        self.concat(&expanded, 0)
    }

    /// Repeats a size-1 `axis` `times` times.
    pub fn repeat_axis(&mut self, x: Var, axis: usize, times: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis(axis, shape.len())?;
        if shape[axis] != 1 {
            return shape_err("repeat_axis", format!("axis {axis} of {:?} is not 1", shape));
        }
        let (outer, _, inner) = kernels::split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * times * inner);
        for o in 0..outer {
            for _ in 0..times {
                out.extend_from_slice(&xv[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = times;
        let value = Tensor::new(out_shape, out)?;
        self.push("repeat_axis", value, Op::RepeatAxis { x, axis })
    }

    /// Gathers rows (axis 0).
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return shape_err("index_select", "rank-0 input");
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[0]) {
            return shape_err("index_select", format!("index {bad} out of range for {} rows", shape[0]));
        }
        let row: usize = shape[1..].iter().product();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&xv[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        let value = Tensor::new(out_shape, out)?;
        self.push("index_select", value, Op::IndexSelect { x, indices: indices.to_vec() })
    }

    /// Single-image convolution: `x: [c_in, h, w]`, `w: [c_out, c_in, k, k]`, `b: [c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] {
            return shape_err("conv2d", format!("input {:?} kernels {:?}", sx, sw));
        }
        let c_out = sw[0];
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return shape_err("conv2d", format!("bias {:?} for {c_out} outputs", self.shape(b)));
            }
        }
        let geom = ConvGeom::new(sx[0], sx[1], sx[2], sw[2], stride, pad)
            .ok_or_else(|| TensorError::Shape { op: "conv2d", detail: format!("kernel {} too large for {:?}", sw[2], sx) })?;
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let positions = geom.positions();
        let mut out = vec![F::zero(); c_out * positions];
        if let Some(b) = b {
            for (row, &bv) in out.chunks_mut(positions).zip(self.value(b).data()) {
                row.fill(bv);
            }
        }
        kernels::gemm_nn(self.value(w).data(), &cols, &mut out, c_out, geom.patch_len(), positions);
        let value = Tensor::new(vec![c_out, geom.h_out, geom.w_out], out)?;
        self.push("conv2d", value, Op::Conv2d { x, w, b, geom, c_out })
    }

    /// Nearest-neighbour upsampling of `[c, h, w]` by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || factor == 0 {
            return shape_err("upsample_nearest", format!("{:?} by {factor}", s));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let xv = self.value(x).data();
        let (ho, wo) = (h * factor, w * factor);
        let mut out = Vec::with_capacity(c * ho * wo);
        for ci in 0..c {
            for oy in 0..ho {
                let row = &xv[(ci * h + oy / factor) * w..(ci * h + oy / factor + 1) * w];
                out.extend((0..wo).map(|ox| row[ox / factor]));
            }
        }
        let value = Tensor::new(vec![c, ho, wo], out)?;
        self.push("upsample_nearest", value, Op::UpsampleNearest { x, factor })
    }

    /// Half-pixel bilinear upsampling of `[c, h, w]` by an integer factor.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || factor == 0 {
            return shape_err("upsample_bilinear", format!("{:?} by {factor}", s));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let ty = kernels::bilinear_taps(h, factor);
        let tx = kernels::bilinear_taps(w, factor);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(c * ty.len() * tx.len());
        for ci in 0..c {
            let plane = &xv[ci * h * w..(ci + 1) * h * w];
            for &(y0, y1, wy) in &ty {
                let wy = F::of(wy);
                for &(x0, x1, wx) in &tx {
                    let wx = F::of(wx);
                    let top = plane[y0 * w + x0] * (F::one() - wx) + plane[y0 * w + x1] * wx;
                    let bot = plane[y1 * w + x0] * (F::one() - wx) + plane[y1 * w + x1] * wx;
                    out.push(top * (F::one() - wy) + bot * wy);
                }
            }
        }
        let value = Tensor::new(vec![c, ty.len(), tx.len()], out)?;
        self.push("upsample_bilinear", value, Op::UpsampleBilinear { x, factor })
    }
}

#[inline]
pub fn sigmoid<F: Real>(v: F) -> F {
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}
