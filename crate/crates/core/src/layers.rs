//! Parameterized building blocks. Activations are pixel- or token-major:
//! `[..., L, C]` with channels last.

use rvos_autodiff::{Graph, Real, Result, Var};

use crate::params::{Bound, Builder, ParamId};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(bld: &mut Builder, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        bld.scoped(name, |b| {
            let w = b.uniform("w", &[d_in, d_out], bound);
            let bias = bias.then(|| b.zeros("b", &[d_out]));
            Linear { w, b: bias, d_in, d_out }
        })
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p[self.w], self.b.map(|b| p[b]))
    }
}

/// Linear layers with ReLU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(bld: &mut Builder, name: &str, dims: &[usize]) -> Self {
        bld.scoped(name, |b| Mlp { layers: dims.windows(2).enumerate().map(|(i, d)| Linear::new(b, &format!("l{i}"), d[0], d[1], true)).collect() })
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        let layers: Vec<(Var, Var)> = self.layers.iter().map(|l| (p[l.w], p[l.b.expect("mlp layers have biases")])).collect();
        g.mlp_forward(x, &layers)
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("non-empty mlp")
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(bld: &mut Builder, name: &str, dim: usize, eps: f64) -> Self {
        bld.scoped(name, |b| LayerNorm { gamma: b.ones("gamma", &[dim]), beta: b.zeros("beta", &[dim]), eps })
    }

    /// Normalizes the last axis.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        let axis = g.shape(x).len() - 1;
        let n = g.layer_norm(x, axis, F::of(self.eps))?;
        let s = g.mul_bcast(n, p[self.gamma])?;
        g.add_bcast(s, p[self.beta])
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(bld: &mut Builder, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        let bound = (6.0 / (c_in * k * k) as f64).sqrt();
        bld.scoped(name, |b| Conv { w: b.uniform("w", &[c_out, c_in, k, k], bound), b: b.zeros("b", &[c_out]), stride, pad })
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p[self.w], Some(p[self.b]), self.stride, self.pad)
    }
}

/// Multi-head cross-attention: query, key and value projections to `width`,
/// scaled dot-product attention per head, and an output projection only when
/// the requested output width differs from `width`.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Option<Linear>,
    pub heads: usize,
    pub width: usize,
}

impl CrossAttention {
    pub fn new(bld: &mut Builder, name: &str, d_q: usize, d_kv: usize, width: usize, d_out: usize, heads: usize) -> Self {
        bld.scoped(name, |b| CrossAttention {
            q: Linear::new(b, "q", d_q, width, true),
            k: Linear::new(b, "k", d_kv, width, true),
            v: Linear::new(b, "v", d_kv, width, true),
            o: (d_out != width).then(|| Linear::new(b, "o", width, d_out, true)),
            heads,
            width,
        })
    }

    pub fn d_out(&self) -> usize {
        self.o.as_ref().map_or(self.width, |o| o.d_out)
    }

    /// `query: [B..., Lq, d_q]`, `key`/`value: [B..., Lk, d_kv]` with equal leading axes.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, query: Var, key: Var, value: Var) -> Result<Var> {
        let q = self.q.forward(g, p, query)?;
        let k = self.k.forward(g, p, key)?;
        let v = self.v.forward(g, p, value)?;
        let out = self.attend(g, q, k, v)?;
        match &self.o {
            Some(o) => o.forward(g, p, out),
            None => Ok(out),
        }
    }

    /// Attention on already projected `q`, `k`, `v`.
    pub fn attend<F: Real>(&self, g: &mut Graph<F>, q: Var, k: Var, v: Var) -> Result<Var> {
        if self.heads == 1 {
            return g.scaled_dot_attention(q, k, v);
        }
        let lead: Vec<usize> = g.shape(q)[..g.shape(q).len() - 2].to_vec();
        let batch: usize = lead.iter().product();
        let (h, d) = (self.heads, self.width / self.heads);
        let split = |g: &mut Graph<F>, x: Var| -> Result<Var> {
            let l = g.shape(x)[g.shape(x).len() - 2];
            let r = g.reshape(x, &[batch, l, h, d])?;
            g.permute(r, &[0, 2, 1, 3])
        };
        let (qs, ks, vs) = (split(g, q)?, split(g, k)?, split(g, v)?);
        let a = g.scaled_dot_attention(qs, ks, vs)?;
        let lq = g.shape(a)[2];
        let merged = g.permute(a, &[0, 2, 1, 3])?;
        let mut shape = lead;
        shape.extend([lq, self.width]);
        g.reshape(merged, &shape)
    }
}

/// `Linear → ReLU → Linear`.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub mlp: Mlp,
}

impl Ffn {
    pub fn new(bld: &mut Builder, name: &str, dim: usize, mult: usize) -> Self {
        Ffn { mlp: Mlp::new(bld, name, &[dim, dim * mult, dim]) }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        self.mlp.forward(g, p, x)
    }
}

/// Fixed sinusoidal encoding of `positions` into `dim` channels.
pub fn sinusoid(positions: &[f64], dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(positions.len() * dim);
    for &pos in positions {
        for c in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (c / 2)) as f64 / dim as f64);
            out.push(if c % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() });
        }
    }
    out
}

/// Row-major 2-D encoding `[h·w, dim]`: the first half of the channels encodes y, the second x.
pub fn sinusoid_2d(h: usize, w: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let ys = sinusoid(&(0..h).map(|y| y as f64).collect::<Vec<_>>(), half);
    let xs = sinusoid(&(0..w).map(|x| x as f64).collect::<Vec<_>>(), half);
    let mut out = Vec::with_capacity(h * w * dim);
    for y in 0..h {
        for x in 0..w {
            out.extend_from_slice(&ys[y * half..(y + 1) * half]);
            out.extend_from_slice(&xs[x * half..(x + 1) * half]);
        }
    }
    out
}
