//! Temporal encoding of object features, the sequence and relevance decoder,
//! the three prediction heads, and inference-time assembly.

use rvos_autodiff::{Graph, Real, Result, Tensor, TensorError, Var};
use rvos_data::Mask;
use rvos_eval::FinalOutput;

use crate::config::ModelConfig;
use crate::layers::{sinusoid, CrossAttention, Ffn, LayerNorm, Mlp};
use crate::params::{Bound, Builder};

/// Pre-norm attention block: `x + Attn(LN(x) + pos, kv)`, then `x + FFN(LN(x))`.
#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: CrossAttention,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
}

impl Block {
    pub fn new(bld: &mut Builder, name: &str, cfg: &ModelConfig) -> Self {
        let c = cfg.c_t;
        bld.scoped(name, |b| Block {
            norm1: LayerNorm::new(b, "ln1", c, cfg.layer_norm_eps),
            attn: CrossAttention::new(b, "attn", c, c, c, c, cfg.num_heads),
            norm2: LayerNorm::new(b, "ln2", c, cfg.layer_norm_eps),
            ffn: Ffn::new(b, "ffn", c, cfg.ffn_mult),
        })
    }

    /// Cross-attention from `x` to `kv`; `pos` (same shape as `x`) is added to the query.
    pub fn cross<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var, pos: Option<Var>, kv: Var) -> Result<Var> {
        let n = self.norm1.forward(g, p, x)?;
        let q = match pos {
            Some(pos) => g.add(n, pos)?,
            None => n,
        };
        let a = self.attn.forward(g, p, q, kv, kv)?;
        let x = g.add(x, a)?;
        self.feed_forward(g, p, x)
    }

    /// Self-attention; `pos` (broadcast over leading axes) goes to queries and keys only.
    pub fn self_attend<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var, pos: Option<Var>) -> Result<Var> {
        let n = self.norm1.forward(g, p, x)?;
        let qk = match pos {
            Some(pos) => g.add_bcast(n, pos)?,
            None => n,
        };
        let a = self.attn.forward(g, p, qk, qk, n)?;
        let x = g.add(x, a)?;
        self.feed_forward(g, p, x)
    }

    fn feed_forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var> {
        let n = self.norm2.forward(g, p, x)?;
        let f = self.ffn.forward(g, p, n)?;
        g.add(x, f)
    }
}

/// Self-attention over time, independently per query.
#[derive(Clone, Debug)]
pub struct TemporalEncoder {
    pub blocks: Vec<Block>,
    pub dim: usize,
}

impl TemporalEncoder {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        bld.scoped("temporal", |b| TemporalEncoder { blocks: (0..cfg.temporal_layers).map(|i| Block::new(b, &format!("b{i}"), cfg)).collect(), dim: cfg.c_t })
    }

    /// `f_obj: [N_q, T, C]` with absolute frame indices `frames` (length T).
    pub fn temporal_encode<F: Real>(&self, g: &mut Graph<F>, p: &Bound, f_obj: Var, frames: &[usize]) -> Result<Var> {
        let s = g.shape(f_obj).to_vec();
        if s.len() != 3 || s[1] != frames.len() || s[1] == 0 {
            return Err(TensorError::Shape { op: "temporal_encode", detail: format!("{:?} with {} frame indices", s, frames.len()) });
        }
        let pos: Vec<f64> = frames.iter().map(|&f| f as f64).collect();
        let pe = g.constant(Tensor::new(vec![frames.len(), self.dim], sinusoid(&pos, self.dim).into_iter().map(F::of).collect())?);
        let mut x = f_obj;
        for b in &self.blocks {
            x = b.self_attend(g, p, x, Some(pe))?;
        }
        Ok(x)
    }
}

/// Sequence-level and frame-level features, both `[N_q, T, C]`.
#[derive(Clone, Copy, Debug)]
pub struct TemporalFeatures {
    pub f_seq: Var,
    pub f_rel: Var,
}

#[derive(Clone, Debug)]
pub enum Srd {
    /// Two cross-attention branches to the text: one over temporally encoded
    /// features, one over raw per-frame object features.
    Decoupled { sequence: Vec<Block>, relevance: Vec<Block> },
    /// Joint self-attention over concatenated text and object tokens.
    Coupled { blocks: Vec<Block> },
}

impl Srd {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        bld.scoped("srd", |b| {
            let stack = |b: &mut Builder, name: &str| (0..cfg.srd_layers).map(|i| Block::new(b, &format!("{name}{i}"), cfg)).collect::<Vec<_>>();
            if cfg.coupled_srd {
                Srd::Coupled { blocks: stack(b, "joint") }
            } else {
                Srd::Decoupled { sequence: stack(b, "seq"), relevance: stack(b, "rel") }
            }
        })
    }

    /// `text: [L, C]`, `tenc`, `f_obj: [N_q, T, C]`, `f_q: [N_q, C]`.
    pub fn srd_decode<F: Real>(&self, g: &mut Graph<F>, p: &Bound, text: Var, tenc: Var, f_obj: Var, f_q: Var) -> Result<TemporalFeatures> {
        let s = g.shape(tenc).to_vec();
        if g.shape(f_obj) != s.as_slice() || g.shape(f_q) != [s[0], s[2]] || g.shape(text).len() != 2 || g.shape(text)[1] != s[2] {
            return Err(TensorError::Shape { op: "srd_decode", detail: format!("tenc {:?}, f_obj {:?}, f_q {:?}, text {:?}", s, g.shape(f_obj), g.shape(f_q), g.shape(text)) });
        }
        let (nq, t, c) = (s[0], s[1], s[2]);
        let l = g.shape(text)[0];
        let text1 = g.reshape(text, &[1, l, c])?;
        let text_q = g.repeat_axis(text1, 0, nq)?;
        let q1 = g.reshape(f_q, &[nq, 1, c])?;
        let pos = g.repeat_axis(q1, 1, t)?;
        match self {
            Srd::Decoupled { sequence, relevance } => {
                let mut f_seq = tenc;
                for b in sequence {
                    f_seq = b.cross(g, p, f_seq, Some(pos), text_q)?;
                }
                let mut f_rel = f_obj;
                for b in relevance {
                    f_rel = b.cross(g, p, f_rel, Some(pos), text_q)?;
                }
                Ok(TemporalFeatures { f_seq, f_rel })
            }
            Srd::Coupled { blocks } => {
                let obj = g.add(tenc, pos)?;
                let mut x = g.concat(&[text_q, obj], 1)?;
                for b in blocks {
                    x = b.self_attend(g, p, x, None)?;
                }
                let f = g.narrow(x, 1, l, t)?;
                Ok(TemporalFeatures { f_seq: f, f_rel: f })
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    /// `[N_q, T, 2]` start and end logits.
    pub span_logits: Var,
    /// `[N_q]` logits and probabilities.
    pub c_logits: Var,
    pub c: Var,
    /// `[N_q, T]` logits and probabilities.
    pub r_logits: Var,
    pub r: Var,
}

#[derive(Clone, Debug)]
pub struct Heads {
    pub span: Mlp,
    pub sequence: Mlp,
    pub relevance: Mlp,
}

impl Heads {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        let c = cfg.c_t;
        bld.scoped("heads", |b| Heads { span: Mlp::new(b, "span", &[c, c, 2]), sequence: Mlp::new(b, "seq", &[c, c, 1]), relevance: Mlp::new(b, "rel", &[c, c, 1]) })
    }

    pub fn span_head<F: Real>(&self, g: &mut Graph<F>, p: &Bound, f_seq: Var) -> Result<Var> {
        self.span.forward(g, p, f_seq)
    }

    pub fn sequence_head<F: Real>(&self, g: &mut Graph<F>, p: &Bound, f_seq: Var) -> Result<Var> {
        let nq = g.shape(f_seq)[0];
        let pooled = g.mean_axis(f_seq, 1)?;
        let z = self.sequence.forward(g, p, pooled)?;
        g.reshape(z, &[nq])
    }

    pub fn relevance_head<F: Real>(&self, g: &mut Graph<F>, p: &Bound, f_rel: Var) -> Result<Var> {
        let s = g.shape(f_rel).to_vec();
        let z = self.relevance.forward(g, p, f_rel)?;
        g.reshape(z, &s[..2])
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, tf: TemporalFeatures) -> Result<HeadOutputs> {
        let span_logits = self.span_head(g, p, tf.f_seq)?;
        let c_logits = self.sequence_head(g, p, tf.f_seq)?;
        let r_logits = self.relevance_head(g, p, tf.f_rel)?;
        Ok(HeadOutputs { span_logits, c_logits, c: g.sigmoid(c_logits)?, r_logits, r: g.sigmoid(r_logits)? })
    }
}

/// Numeric model outputs for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub nq: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    /// `[N_q]`.
    pub c: Vec<f64>,
    /// `[N_q, T]` each.
    pub tau_s: Vec<f64>,
    pub tau_e: Vec<f64>,
    pub r: Vec<f64>,
    /// `[N_q, T, 4]`.
    pub boxes: Vec<f64>,
    /// `[N_q, T, H, W]` logits.
    pub masks: Vec<f64>,
    /// When false the span is the whole clip.
    pub use_span: bool,
}

impl PredictionSet {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let (q, t, hw) = (self.nq, self.t, self.h * self.w);
        let lens = [(self.c.len(), q), (self.tau_s.len(), q * t), (self.tau_e.len(), q * t), (self.r.len(), q * t), (self.boxes.len(), q * t * 4), (self.masks.len(), q * t * hw)];
        if q == 0 || t == 0 || lens.iter().any(|(a, b)| a != b) {
            return Err(format!("inconsistent prediction set: nq={q} t={t} hw={hw} lengths {lens:?}"));
        }
        Ok(())
    }

    pub fn mask_logits(&self, q: usize, t: usize) -> &[f64] {
        let hw = self.h * self.w;
        let o = (q * self.t + t) * hw;
        &self.masks[o..o + hw]
    }

    pub fn box_of(&self, q: usize, t: usize) -> [f64; 4] {
        let o = (q * self.t + t) * 4;
        [self.boxes[o], self.boxes[o + 1], self.boxes[o + 2], self.boxes[o + 3]]
    }

    pub fn tau_s_row(&self, q: usize) -> &[f64] {
        &self.tau_s[q * self.t..(q + 1) * self.t]
    }

    pub fn tau_e_row(&self, q: usize) -> &[f64] {
        &self.tau_e[q * self.t..(q + 1) * self.t]
    }

    pub fn r_row(&self, q: usize) -> &[f64] {
        &self.r[q * self.t..(q + 1) * self.t]
    }
}

/// First index of the maximum; NaN never wins.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] || xs[best].is_nan() && !x.is_nan() {
            best = i;
        }
    }
    best
}

/// Select `j = argmax c`, gate its binarized masks to `[argmax τ_s, argmax τ_e]`.
pub fn assemble(pred: &PredictionSet) -> FinalOutput {
    let j = argmax(&pred.c);
    let span = if pred.use_span {
        let (s, e) = (argmax(pred.tau_s_row(j)), argmax(pred.tau_e_row(j)));
        (s <= e).then_some((s, e))
    } else {
        Some((0, pred.t - 1))
    };
    let masks = (0..pred.t)
        .map(|t| match span {
            Some((s, e)) if (s..=e).contains(&t) => {
                let logits = pred.mask_logits(j, t);
                Mask::from_fn(pred.h, pred.w, |y, x| rvos_autodiff::sigmoid(logits[y * pred.w + x]) > 0.5)
            }
            _ => Mask::empty(pred.h, pred.w),
        })
        .collect();
    FinalOutput { query: j, span, masks }
}
