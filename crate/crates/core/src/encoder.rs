//! Per-frame multi-scale visual encoding, query embedding, and the mutual
//! cross-attention that enhances both modalities.

use rvos_autodiff::{Graph, Real, Result, Tensor, TensorError, Var};

use crate::config::ModelConfig;
use crate::layers::{Conv, CrossAttention, Linear};
use crate::params::{Bound, Builder, ParamId};

/// Visual features of a clip, one `[T, H_i·W_i, C_i]` tensor per scale, finest first.
/// Spatial positions are flattened row-major.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub scales: Vec<Var>,
    /// `(C_i, H_i, W_i)` per scale.
    pub dims: Vec<(usize, usize, usize)>,
    pub t: usize,
}

#[derive(Clone, Debug)]
pub struct TextFeatures {
    /// `[L, C_t]`.
    pub tokens: Var,
    /// `[T, L, C_t]` after enhancement against each frame.
    pub enhanced: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct VisualEncoder {
    /// Per scale: downsampling conv then a 3×3 conv.
    pub blocks: Vec<(Conv, Conv)>,
}

impl VisualEncoder {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        bld.scoped("encoder", |b| {
            let mut blocks = Vec::new();
            let mut c_in = 3;
            for (i, &c) in cfg.channels.iter().enumerate() {
                let (k, s) = if i == 0 { (4, 4) } else { (2, 2) };
                let down = Conv::new(b, &format!("s{i}.down"), c_in, c, k, s, 0);
                let conv = Conv::new(b, &format!("s{i}.conv"), c, c, 3, 1, 1);
                blocks.push((down, conv));
                c_in = c;
            }
            VisualEncoder { blocks }
        })
    }

    /// One frame `[3, H, W]` to `[C_i, H_i, W_i]` per scale.
    pub fn encode_frame<F: Real>(&self, g: &mut Graph<F>, p: &Bound, frame: Var) -> Result<Vec<Var>> {
        let s = g.shape(frame).to_vec();
        let stride = 1usize << (self.blocks.len() + 1);
        if s.len() != 3 || s[0] != 3 || s[1] % stride != 0 || s[2] % stride != 0 {
            return Err(TensorError::Shape { op: "encode_frame", detail: format!("frame {:?} must be 3×H×W with H, W multiples of {stride}", s) });
        }
        let mut x = frame;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (down, conv) in &self.blocks {
            let d = down.forward(g, p, x)?;
            let d = g.relu(d)?;
            let c = conv.forward(g, p, d)?;
            x = g.relu(c)?;
            out.push(x);
        }
        Ok(out)
    }

    /// Clip `[T, 3, H, W]` to a pixel-major pyramid.
    pub fn encode<F: Real>(&self, g: &mut Graph<F>, p: &Bound, frames: Var) -> Result<FeaturePyramid> {
        let s = g.shape(frames).to_vec();
        if s.len() != 4 {
            return Err(TensorError::Shape { op: "encode", detail: format!("frames {:?}", s) });
        }
        let t = s[0];
        let mut per_scale: Vec<Vec<Var>> = vec![Vec::with_capacity(t); self.blocks.len()];
        let mut dims = Vec::new();
        for f in 0..t {
            let fr = g.narrow(frames, 0, f, 1)?;
            let fr = g.reshape(fr, &s[1..])?;
            let pyr = self.encode_frame(g, p, fr)?;
            for (i, v) in pyr.into_iter().enumerate() {
                let cs = g.shape(v).to_vec();
                if f == 0 {
                    dims.push((cs[0], cs[1], cs[2]));
                }
                let flat = g.reshape(v, &[cs[0], cs[1] * cs[2]])?;
                per_scale[i].push(g.transpose(flat)?);
            }
        }
        let scales = per_scale.iter().map(|vs| g.stack(vs)).collect::<Result<Vec<_>>>()?;
        Ok(FeaturePyramid { scales, dims, t })
    }
}

/// Learned token table plus learned positional offsets.
#[derive(Clone, Debug)]
pub struct TextEmbedder {
    pub table: ParamId,
    pub positions: ParamId,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl TextEmbedder {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        bld.scoped("text", |b| TextEmbedder {
            table: b.uniform("table", &[cfg.vocab_size, cfg.c_t], 1.0),
            positions: b.uniform("pos", &[cfg.max_text_len, cfg.c_t], 0.1),
            vocab_size: cfg.vocab_size,
            max_len: cfg.max_text_len,
        })
    }

    pub fn validate(&self, ids: &[usize]) -> std::result::Result<(), String> {
        if ids.is_empty() {
            return Err("empty query".into());
        }
        if ids.len() > self.max_len {
            return Err(format!("query of {} tokens exceeds {}", ids.len(), self.max_len));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(format!("token id {bad} outside vocabulary of {}", self.vocab_size));
        }
        Ok(())
    }

    /// `[L, C_t]`; ids must already be validated.
    pub fn embed<F: Real>(&self, g: &mut Graph<F>, p: &Bound, ids: &[usize]) -> Result<TextFeatures> {
        let e = g.index_select(p[self.table], ids)?;
        let pos = g.narrow(p[self.positions], 0, 0, ids.len())?;
        Ok(TextFeatures { tokens: g.add(e, pos)?, enhanced: None })
    }
}

/// `f_enh^i = Attn_i(f^i, e)`, `e^i = e^{i-1} + Attn'_i(e^{i-1}, f_enh^i)`.
#[derive(Clone, Debug)]
pub struct Enhancer {
    pub visual: Vec<CrossAttention>,
    /// Per-scale text updates, or one shared update after per-scale key maps.
    pub text: Vec<CrossAttention>,
    pub shared_maps: Vec<Linear>,
}

impl Enhancer {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        bld.scoped("enhance", |b| {
            let ct = cfg.c_t;
            let visual = cfg.channels.iter().enumerate().map(|(i, &c)| CrossAttention::new(b, &format!("vis{i}"), c, ct, ct, c, cfg.num_heads)).collect();
            let (text, shared_maps) = if cfg.shared_text_attn {
                let maps = cfg.channels.iter().enumerate().map(|(i, &c)| Linear::new(b, &format!("map{i}"), c, ct, true)).collect();
                (vec![CrossAttention::new(b, "txt", ct, ct, ct, ct, cfg.num_heads)], maps)
            } else {
                (cfg.channels.iter().enumerate().map(|(i, &c)| CrossAttention::new(b, &format!("txt{i}"), ct, c, ct, ct, cfg.num_heads)).collect(), Vec::new())
            };
            Enhancer { visual, text, shared_maps }
        })
    }

    pub fn enhance<F: Real>(&self, g: &mut Graph<F>, p: &Bound, pyr: &FeaturePyramid, text: &TextFeatures) -> Result<(FeaturePyramid, TextFeatures)> {
        let t = pyr.t;
        let mut one = vec![1];
        one.extend_from_slice(g.shape(text.tokens));
        let e0 = g.reshape(text.tokens, &one)?;
        let e_frames = g.repeat_axis(e0, 0, t)?;
        let mut e = e_frames;
        let mut scales = Vec::with_capacity(pyr.scales.len());
        for (i, &f) in pyr.scales.iter().enumerate() {
            let f_enh = self.visual[i].forward(g, p, f, e_frames, e_frames)?;
            let update = if self.shared_maps.is_empty() {
                self.text[i].forward(g, p, e, f_enh, f_enh)?
            } else {
                let kv = self.shared_maps[i].forward(g, p, f_enh)?;
                self.text[0].forward(g, p, e, kv, kv)?
            };
            e = g.add(e, update)?;
            scales.push(f_enh);
        }
        Ok((FeaturePyramid { scales, dims: pyr.dims.clone(), t }, TextFeatures { tokens: text.tokens, enhanced: Some(e) }))
    }
}

/// `[T, 3, H, W]` tensor from byte frames.
pub fn frames_tensor<F: Real>(frames: &rvos_data::Frames, range: std::ops::Range<usize>) -> Tensor<F> {
    let n = 3 * frames.h * frames.w;
    let mut data = Vec::with_capacity(range.len() * n);
    for f in range.clone() {
        data.extend(frames.frame(f).iter().map(|&v| F::of(v as f64 / 255.0)));
    }
    Tensor::new(vec![range.len(), 3, frames.h, frames.w], data).expect("frame tensor shape")
}
