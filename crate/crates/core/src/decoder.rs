//! Language queries, object-level aggregation, and the mask and box decoders.

use rvos_autodiff::{Graph, Real, Result, Tensor, TensorError, Var};

use crate::config::ModelConfig;
use crate::encoder::FeaturePyramid;
use crate::layers::{sinusoid_2d, CrossAttention, Linear, Mlp};
use crate::params::{Bound, Builder, ParamId};

/// Mean-pool the enhanced text, repeat per query, add learned offsets.
#[derive(Clone, Debug)]
pub struct QueryMaker {
    pub offsets: ParamId,
    pub num_queries: usize,
}

impl QueryMaker {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        QueryMaker { offsets: bld.uniform("queries.offsets", &[cfg.num_queries, cfg.c_t], 0.5), num_queries: cfg.num_queries }
    }

    /// `text: [L, C_t]` to `[N_q, C_t]`.
    pub fn make_queries<F: Real>(&self, g: &mut Graph<F>, p: &Bound, text: Var) -> Result<Var> {
        let c = g.shape(text)[1];
        let pooled = g.mean_axis(text, 0)?;
        let row = g.reshape(pooled, &[1, c])?;
        let rep = g.repeat_axis(row, 0, self.num_queries)?;
        g.add(rep, p[self.offsets])
    }
}

/// `f_obj = Attn(f_q, f_enh^N)`; keys and values carry a 2-D sinusoidal position code.
#[derive(Clone, Debug)]
pub struct Aggregator {
    pub attn: CrossAttention,
}

impl Aggregator {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        let c_n = *cfg.channels.last().expect("at least one scale");
        Aggregator { attn: CrossAttention::new(bld, "aggregate", cfg.c_t, c_n, cfg.c_t, cfg.c_t, cfg.num_heads) }
    }

    /// `f_q: [N_q, C_t]` and the coarsest enhanced scale to `[T, N_q, C_t]`.
    pub fn aggregate<F: Real>(&self, g: &mut Graph<F>, p: &Bound, f_q: Var, enhanced: &FeaturePyramid) -> Result<Var> {
        let n = enhanced.scales.len() - 1;
        let (c, h, w) = enhanced.dims[n];
        let pe = g.constant(Tensor::new(vec![h * w, c], sinusoid_2d(h, w, c).into_iter().map(F::of).collect())?);
        let kv = g.add_bcast(enhanced.scales[n], pe)?;
        let s = g.shape(f_q).to_vec();
        let q1 = g.reshape(f_q, &[1, s[0], s[1]])?;
        let q = g.repeat_axis(q1, 0, enhanced.t)?;
        self.attn.forward(g, p, q, kv, kv)
    }
}

/// Cross-modal FPN plus a dynamic 1×1 convolution head.
///
/// Mask features live at input resolution: the FPN output at the finest scale is
/// projected to `mask_dim`, bilinearly upsampled, summed with a projection of the
/// RGB frame, and extended with x, y and constant-one channels. Biases of the
/// dynamic layers are folded into their weights through those constant channels.
#[derive(Clone, Debug)]
pub struct MaskDecoder {
    pub lat_raw: Vec<Linear>,
    pub lat_enh: Vec<Linear>,
    pub to_mask: Linear,
    pub rgb: Linear,
    pub controller: Mlp,
    pub mask_dim: usize,
    pub hidden: usize,
}

impl MaskDecoder {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        bld.scoped("masks", |b| {
            let d = cfg.fpn_dim;
            MaskDecoder {
                lat_raw: cfg.channels.iter().enumerate().map(|(i, &c)| Linear::new(b, &format!("raw{i}"), c, d, true)).collect(),
                lat_enh: cfg.channels.iter().enumerate().map(|(i, &c)| Linear::new(b, &format!("enh{i}"), c, d, false)).collect(),
                to_mask: Linear::new(b, "to_mask", d, cfg.mask_dim, true),
                rgb: Linear::new(b, "rgb", 3, cfg.mask_dim, false),
                controller: Mlp::new(b, "controller", &[cfg.c_t, cfg.c_t, cfg.dyn_params()]),
                mask_dim: cfg.mask_dim,
                hidden: cfg.dyn_hidden,
            }
        })
    }

    /// Top-down fusion; returns `[T, H_1·W_1, fpn_dim]` at the finest scale.
    pub fn fpn<F: Real>(&self, g: &mut Graph<F>, p: &Bound, raw: &FeaturePyramid, enh: &FeaturePyramid) -> Result<Var> {
        if raw.scales.len() < 2 {
            return Err(TensorError::Shape { op: "fpn", detail: "need at least two scales".into() });
        }
        let mut top: Option<Var> = None;
        for i in (0..raw.scales.len()).rev() {
            let a = self.lat_raw[i].forward(g, p, raw.scales[i])?;
            let b = self.lat_enh[i].forward(g, p, enh.scales[i])?;
            let lat = g.add(a, b)?;
            top = Some(match top {
                None => lat,
                Some(x) => {
                    let (_, h, w) = raw.dims[i + 1];
                    let up = resample(g, x, h, w, 2, false)?;
                    g.add(lat, up)?
                }
            });
        }
        Ok(top.expect("non-empty pyramid"))
    }

    /// `[T, H·W, mask_dim + 3]`.
    pub fn mask_features<F: Real>(&self, g: &mut Graph<F>, p: &Bound, raw: &FeaturePyramid, enh: &FeaturePyramid, frames: Var) -> Result<Var> {
        let fused = self.fpn(g, p, raw, enh)?;
        let m = self.to_mask.forward(g, p, fused)?;
        let fs = g.shape(frames).to_vec();
        let (t, h, w) = (fs[0], fs[2], fs[3]);
        let (_, h1, w1) = raw.dims[0];
        let up = resample(g, m, h1, w1, h / h1, true)?;
        let rgb = g.reshape(frames, &[t, 3, h * w])?;
        let rgb = g.permute(rgb, &[0, 2, 1])?;
        let rgb = self.rgb.forward(g, p, rgb)?;
        let feats = g.add(up, rgb)?;
        let mut extra = Vec::with_capacity(t * h * w * 3);
        for _ in 0..t {
            for y in 0..h {
                for x in 0..w {
                    extra.extend([F::of(2.0 * (x as f64 + 0.5) / w as f64 - 1.0), F::of(2.0 * (y as f64 + 0.5) / h as f64 - 1.0), F::one()]);
                }
            }
        }
        let extra = g.constant(Tensor::new(vec![t, h * w, 3], extra)?);
        g.concat(&[feats, extra], 2)
    }

    /// `f_obj: [T, N_q, C_t]` to dynamic parameters `[T, N_q, P]`.
    pub fn dynamic_params<F: Real>(&self, g: &mut Graph<F>, p: &Bound, f_obj: Var) -> Result<Var> {
        self.controller.forward(g, p, f_obj)
    }

    /// Logits `[T, H, W]` for query `q`.
    pub fn decode<F: Real>(&self, g: &mut Graph<F>, feats: Var, params: Var, q: usize, h: usize, w: usize) -> Result<Var> {
        let ps = g.shape(params).to_vec();
        let (t, np) = (ps[0], ps[2]);
        let d_in = self.mask_dim + 3;
        let hid = self.hidden;
        let pq = g.narrow(params, 1, q, 1)?;
        let pq = g.reshape(pq, &[t, np])?;
        let sizes = [(d_in, hid), (hid + 1, hid), (hid + 1, 1)];
        let ones = g.constant(Tensor::ones(vec![t, h * w, 1]));
        let mut x = feats;
        let mut offset = 0;
        for (li, &(a, b)) in sizes.iter().enumerate() {
            let wl = g.narrow(pq, 1, offset, a * b)?;
            let wl = g.reshape(wl, &[t, a, b])?;
            offset += a * b;
            if li > 0 {
                let r = g.relu(x)?;
                x = g.concat(&[r, ones], 2)?;
            }
            x = g.matmul(x, wl)?;
        }
        g.reshape(x, &[t, h, w])
    }
}

/// `[T, h·w, C]` to `[T, (h·f)·(w·f), C]` by nearest or bilinear resampling.
fn resample<F: Real>(g: &mut Graph<F>, x: Var, h: usize, w: usize, factor: usize, bilinear: bool) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (t, c) = (s[0], s[2]);
    let chw = g.permute(x, &[0, 2, 1])?;
    let chw = g.reshape(chw, &[t * c, h, w])?;
    let up = if bilinear { g.upsample_bilinear(chw, factor)? } else { g.upsample_nearest(chw, factor)? };
    let up = g.reshape(up, &[t, c, h * w * factor * factor])?;
    g.permute(up, &[0, 2, 1])
}

/// MLP then sigmoid to normalized `(cx, cy, w, h)`.
#[derive(Clone, Debug)]
pub struct BoxHead {
    pub mlp: Mlp,
}

impl BoxHead {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        BoxHead { mlp: Mlp::new(bld, "boxes", &[cfg.c_t, cfg.c_t, 4]) }
    }

    pub fn decode_boxes<F: Real>(&self, g: &mut Graph<F>, p: &Bound, f_obj: Var) -> Result<Var> {
        let z = self.mlp.forward(g, p, f_obj)?;
        g.sigmoid(z)
    }
}
