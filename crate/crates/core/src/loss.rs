//! Training objective, span targets, and least-cost query selection.

use rvos_autodiff::{Graph, Real, Tensor, Var};
use rvos_data::Annotation;
use serde::{Deserialize, Serialize};

use crate::config::LossConfig;
use crate::error::{CoreError, Result};
use crate::model::ModelOutput;
use crate::temporal::PredictionSet;

/// Supervision for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    /// `[T, H, W]` in {0, 1}.
    pub masks: Vec<f64>,
    /// Normalized `(cx, cy, w, h)`; zero on frames without the target.
    pub boxes: Vec<[f64; 4]>,
    pub relevance: Vec<bool>,
    /// Inclusive envelope of the target's segments inside the clip.
    pub span: Option<(usize, usize)>,
    /// Start and end distributions over clip frames, present only when the
    /// video-level boundary falls inside the clip.
    pub tau_s: Option<Vec<f64>>,
    pub tau_e: Option<Vec<f64>>,
}

impl GroundTruth {
    /// Restricts `anno` to frames `range` (indices become clip-local).
    pub fn from_annotation(anno: &Annotation, range: std::ops::Range<usize>, sigma_frac: f64) -> Result<Self> {
        if range.end > anno.t() || range.is_empty() {
            return Err(CoreError::Config(format!("clip {:?} outside a {}-frame video", range, anno.t())));
        }
        let t = range.len();
        let (h, w) = (anno.masks[0].h(), anno.masks[0].w());
        let mut masks = Vec::with_capacity(t * h * w);
        let mut boxes = Vec::with_capacity(t);
        let mut relevance = Vec::with_capacity(t);
        for f in range.clone() {
            let m = &anno.masks[f];
            masks.extend(m.to_f64());
            let present = !m.is_empty();
            relevance.push(present);
            boxes.push(match (present, anno.boxes[f]) {
                (false, _) => [0.0; 4],
                (true, Some(b)) => b,
                (true, None) => {
                    let (x0, y0, x1, y1) = m.bbox().expect("non-empty mask");
                    let (bw, bh) = ((x1 + 1 - x0) as f64 / w as f64, (y1 + 1 - y0) as f64 / h as f64);
                    [x0 as f64 / w as f64 + bw / 2.0, y0 as f64 / h as f64 + bh / 2.0, bw, bh]
                }
            });
        }
        let clipped: Vec<(usize, usize)> = anno
            .segments
            .iter()
            .filter_map(|&(s, e)| {
                let (s, e) = (s.max(range.start), e.min(range.end));
                (s < e).then(|| (s - range.start, e - 1 - range.start))
            })
            .collect();
        let span = clipped.iter().map(|s| s.0).min().zip(clipped.iter().map(|s| s.1).max());
        // Boundaries are those of the whole video's envelope; a boundary outside
        // the clip is unobserved rather than moved to the clip edge.
        let (tau_s, tau_e) = match (span, anno.envelope()) {
            (Some(_), Some((vs, ve))) => {
                let sigma = (sigma_frac * (ve - vs + 1) as f64).max(1.0);
                let at = |f: usize| range.contains(&f).then(|| gaussian_table(f - range.start, t, sigma));
                (at(vs), at(ve))
            }
            _ => (None, None),
        };
        Ok(GroundTruth { t, h, w, masks, boxes, relevance, span, tau_s, tau_e })
    }

    pub fn fg_frames(&self) -> Vec<usize> {
        (0..self.t).filter(|&f| self.relevance[f]).collect()
    }

    pub fn present(&self) -> bool {
        self.relevance.iter().any(|&r| r)
    }
}

/// Discrete Gaussian over `0..t` centred at `center`, normalized to sum 1.
pub fn gaussian_table(center: usize, t: usize, sigma: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..t).map(|i| (-((i as f64 - center as f64).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = raw.iter().sum();
    if z > 0.0 && z.is_finite() {
        raw.into_iter().map(|v| v / z).collect()
    } else {
        (0..t).map(|i| if i == center { 1.0 } else { 0.0 }).collect()
    }
}

/// Start and end distributions with `σ = max(1, sigma_frac · span length)`.
pub fn gaussian_span_target(start: usize, end: usize, t: usize, sigma_frac: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if start > end {
        return Err(CoreError::InvalidSpan { start, end });
    }
    if end >= t {
        return Err(CoreError::Config(format!("span end {end} outside {t} frames")));
    }
    let sigma = (sigma_frac * (end - start + 1) as f64).max(1.0);
    Ok((gaussian_table(start, t, sigma), gaussian_table(end, t, sigma)))
}

fn constant<F: Real>(g: &mut Graph<F>, shape: &[usize], data: &[f64]) -> Result<Var> {
    Ok(g.constant(Tensor::from_f64(shape.to_vec(), data)?))
}

/// Mean of `−α_t (1 − p_t)^γ log p_t` with `p` clamped to `[eps, 1 − eps]`.
pub fn focal_loss<F: Real>(g: &mut Graph<F>, p: Var, y: &[f64], cfg: &LossConfig) -> Result<Var> {
    let shape = g.shape(p).to_vec();
    let pc = g.clamp(p, F::of(cfg.prob_eps), F::of(1.0 - cfg.prob_eps))?;
    let sign = constant(g, &shape, &y.iter().map(|&y| 2.0 * y - 1.0).collect::<Vec<_>>())?;
    let off = constant(g, &shape, &y.iter().map(|&y| 1.0 - y).collect::<Vec<_>>())?;
    let alpha = constant(g, &shape, &y.iter().map(|&y| -(cfg.focal_alpha * y + (1.0 - cfg.focal_alpha) * (1.0 - y))).collect::<Vec<_>>())?;
    let signed = g.mul(pc, sign)?;
    let pt = g.add(signed, off)?;
    let q = g.rsub_scalar(F::one(), pt)?;
    let modulator = g.powf(q, F::of(cfg.focal_gamma))?;
    let logp = g.log(pt)?;
    let a = g.mul(alpha, modulator)?;
    let l = g.mul(a, logp)?;
    Ok(g.mean(l)?)
}

/// Per-frame `1 − 2|P∩G| / (|P| + |G| + ε)` averaged over frames; `logits: [F, N]`.
pub fn dice_loss<F: Real>(g: &mut Graph<F>, logits: Var, target: &[f64], cfg: &LossConfig) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    let n = shape[1];
    let p = g.sigmoid(logits)?;
    let tv = constant(g, &shape, target)?;
    let inter = g.mul(p, tv)?;
    let inter = g.sum_axis(inter, 1)?;
    let sp = g.sum_axis(p, 1)?;
    let sg: Vec<f64> = target.chunks(n).map(|c| c.iter().sum::<f64>() + cfg.dice_eps).collect();
    let sg = constant(g, &[shape[0]], &sg)?;
    let denom = g.add(sp, sg)?;
    let ratio = g.div(inter, denom)?;
    let ratio = g.scale(ratio, F::of(2.0))?;
    let d = g.rsub_scalar(F::one(), ratio)?;
    Ok(g.mean(d)?)
}

/// Dice plus pixel focal loss; `logits: [F, N]`.
pub fn mask_loss<F: Real>(g: &mut Graph<F>, logits: Var, target: &[f64], cfg: &LossConfig) -> Result<Var> {
    let d = dice_loss(g, logits, target, cfg)?;
    let p = g.sigmoid(logits)?;
    let f = focal_loss(g, p, target, cfg)?;
    Ok(g.add(d, f)?)
}

/// Per frame, mean absolute coordinate error plus `1 − gIoU`, averaged; `pred: [F, 4]` cxcywh.
pub fn box_loss<F: Real>(g: &mut Graph<F>, pred: Var, target: &[[f64; 4]]) -> Result<Var> {
    let nf = target.len();
    let flat: Vec<f64> = target.iter().flatten().copied().collect();
    let tv = constant(g, &[nf, 4], &flat)?;
    let diff = g.sub(pred, tv)?;
    let ad = g.abs(diff)?;
    let l1 = g.mean_axis(ad, 1)?;

    let col = |g: &mut Graph<F>, i: usize| -> Result<Var> {
        let c = g.narrow(pred, 1, i, 1)?;
        Ok(g.reshape(c, &[nf])?)
    };
    let (cx, cy, w, h) = (col(g, 0)?, col(g, 1)?, col(g, 2)?, col(g, 3)?);
    let hw = g.scale(w, F::of(0.5))?;
    let hh = g.scale(h, F::of(0.5))?;
    let px0 = g.sub(cx, hw)?;
    let px1 = g.add(cx, hw)?;
    let py0 = g.sub(cy, hh)?;
    let py1 = g.add(cy, hh)?;
    let corner = |f: fn(&[f64; 4]) -> f64| target.iter().map(f).collect::<Vec<f64>>();
    let gx0 = constant(g, &[nf], &corner(|b| b[0] - b[2] / 2.0))?;
    let gx1 = constant(g, &[nf], &corner(|b| b[0] + b[2] / 2.0))?;
    let gy0 = constant(g, &[nf], &corner(|b| b[1] - b[3] / 2.0))?;
    let gy1 = constant(g, &[nf], &corner(|b| b[1] + b[3] / 2.0))?;
    let garea = constant(g, &[nf], &corner(|b| b[2] * b[3]))?;

    let ix1 = g.minimum(px1, gx1)?;
    let ix0 = g.maximum(px0, gx0)?;
    let iw = g.sub(ix1, ix0)?;
    let iw = g.relu(iw)?;
    let iy1 = g.minimum(py1, gy1)?;
    let iy0 = g.maximum(py0, gy0)?;
    let ih = g.sub(iy1, iy0)?;
    let ih = g.relu(ih)?;
    let inter = g.mul(iw, ih)?;
    let parea = g.mul(w, h)?;
    let sum = g.add(parea, garea)?;
    let union = g.sub(sum, inter)?;
    let iou = g.div(inter, union)?;
    let ex1 = g.maximum(px1, gx1)?;
    let ex0 = g.minimum(px0, gx0)?;
    let ew = g.sub(ex1, ex0)?;
    let ey1 = g.maximum(py1, gy1)?;
    let ey0 = g.minimum(py0, gy0)?;
    let eh = g.sub(ey1, ey0)?;
    let enclosing = g.mul(ew, eh)?;
    let slack = g.sub(enclosing, union)?;
    let penalty = g.div(slack, enclosing)?;
    let giou = g.sub(iou, penalty)?;
    let one_minus = g.rsub_scalar(F::one(), giou)?;
    let per_frame = g.add(l1, one_minus)?;
    Ok(g.mean(per_frame)?)
}

/// `KL(τ̂ ‖ softmax(z))` for column `col` of `logits: [T, 2]`.
pub fn kl_column<F: Real>(g: &mut Graph<F>, logits: Var, col: usize, tau: &[f64]) -> Result<Var> {
    let t = tau.len();
    let z = g.narrow(logits, 1, col, 1)?;
    let z = g.reshape(z, &[t])?;
    let logp = g.log_softmax(z, 0)?;
    let neg_entropy: f64 = tau.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum();
    let tv = constant(g, &[t], tau)?;
    let cross = g.mul(tv, logp)?;
    let cross = g.sum(cross)?;
    Ok(g.rsub_scalar(F::of(neg_entropy), cross)?)
}

/// `KL(τ̂_s ‖ softmax(z_s)) + KL(τ̂_e ‖ softmax(z_e))`; `logits: [T, 2]`.
pub fn kl_span_loss<F: Real>(g: &mut Graph<F>, logits: Var, tau_s: &[f64], tau_e: &[f64]) -> Result<Var> {
    let a = kl_column(g, logits, 0, tau_s)?;
    let b = kl_column(g, logits, 1, tau_e)?;
    Ok(g.add(a, b)?)
}

/// Box and mask terms on the target's frames; `boxes: [T, 4]`, `logits: [T, H, W]`.
fn box_mask_terms<F: Real>(g: &mut Graph<F>, boxes: Var, logits: Var, gt: &GroundTruth, cfg: &LossConfig) -> Result<(Var, Var)> {
    let fg = gt.fg_frames();
    let hw = gt.h * gt.w;
    let b = g.index_select(boxes, &fg)?;
    let b_target: Vec<[f64; 4]> = fg.iter().map(|&f| gt.boxes[f]).collect();
    let box_term = box_loss(g, b, &b_target)?;
    let m = g.index_select(logits, &fg)?;
    let m = g.reshape(m, &[fg.len(), hw])?;
    let m_target: Vec<f64> = fg.iter().flat_map(|&f| gt.masks[f * hw..(f + 1) * hw].iter().copied()).collect();
    let mask_term = mask_loss(g, m, &m_target, cfg)?;
    Ok((box_term, mask_term))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    #[serde(rename = "box")]
    pub box_: f64,
    pub mask: f64,
    pub span: f64,
    pub rel: f64,
    pub total: f64,
}

/// Weighted sum `w_cls·cls + w_box·box + w_mask·mask + w_span·span + w_rel·rel` on query `j`.
pub fn total_loss<F: Real>(g: &mut Graph<F>, out: &ModelOutput, gt: &GroundTruth, j: usize, cfg: &LossConfig) -> Result<(Var, LossBreakdown)> {
    let nq = out.mask_logits.len();
    let present = gt.present();
    let labels: Vec<f64> = (0..nq).map(|q| if present && q == j { 1.0 } else { 0.0 }).collect();
    let cls = focal_loss(g, out.heads.c, &labels, cfg)?;
    let (box_term, mask_term, span_term) = if present {
        let b = g.narrow(out.boxes, 1, j, 1)?;
        let b = g.reshape(b, &[gt.t, 4])?;
        let (bt, mt) = box_mask_terms(g, b, out.mask_logits[j], gt, cfg)?;
        let z = g.narrow(out.heads.span_logits, 0, j, 1)?;
        let z = g.reshape(z, &[gt.t, 2])?;
        let mut span = g.constant(Tensor::scalar(F::zero()));
        for (col, tau) in [&gt.tau_s, &gt.tau_e].into_iter().enumerate() {
            if let Some(tau) = tau {
                let k = kl_column(g, z, col, tau)?;
                span = g.add(span, k)?;
            }
        }
        (bt, mt, span)
    } else {
        let z = || Tensor::scalar(F::zero());
        (g.constant(z()), g.constant(z()), g.constant(z()))
    };
    let r = g.narrow(out.heads.r, 0, j, 1)?;
    let r = g.reshape(r, &[gt.t])?;
    let rel_target: Vec<f64> = gt.relevance.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let rel = focal_loss(g, r, &rel_target, cfg)?;
    let total = weighted_sum(g, &[(cls, cfg.w_cls), (box_term, cfg.w_box), (mask_term, cfg.w_mask), (span_term, cfg.w_span), (rel, cfg.w_rel)])?;
    let val = |v: Var| g.value(v).data()[0].as_f64();
    let breakdown = LossBreakdown { cls: val(cls), box_: val(box_term), mask: val(mask_term), span: val(span_term), rel: val(rel), total: val(total) };
    Ok((total, breakdown))
}

fn weighted_sum<F: Real>(g: &mut Graph<F>, terms: &[(Var, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        let s = g.scale(v, F::of(w))?;
        acc = Some(match acc {
            None => s,
            Some(a) => g.add(a, s)?,
        });
    }
    Ok(acc.expect("at least one term"))
}

/// Matching cost of every query: `w_cls·focal(c_q, 1) + w_box·box_q + w_mask·mask_q`,
/// classification only when the target is absent from the clip.
pub fn query_costs(pred: &PredictionSet, gt: &GroundTruth, cfg: &LossConfig) -> Result<Vec<f64>> {
    pred.validate().map_err(CoreError::Schema)?;
    if (pred.t, pred.h, pred.w) != (gt.t, gt.h, gt.w) {
        return Err(CoreError::Schema(format!("prediction {}×{}×{} vs ground truth {}×{}×{}", pred.t, pred.h, pred.w, gt.t, gt.h, gt.w)));
    }
    let present = gt.present();
    let hw = gt.h * gt.w;
    (0..pred.nq)
        .map(|q| {
            let mut g = Graph::<f64>::new();
            let c = constant(&mut g, &[1], &[pred.c[q]])?;
            let cls = focal_loss(&mut g, c, &[1.0], cfg)?;
            let mut terms = vec![(cls, cfg.w_cls)];
            if present {
                let b = constant(&mut g, &[gt.t, 4], &pred.boxes[q * gt.t * 4..(q + 1) * gt.t * 4])?;
                let m = constant(&mut g, &[gt.t, gt.h, gt.w], &pred.masks[q * gt.t * hw..(q + 1) * gt.t * hw])?;
                let (bt, mt) = box_mask_terms(&mut g, b, m, gt, cfg)?;
                terms.extend([(bt, cfg.w_box), (mt, cfg.w_mask)]);
            }
            let cost = weighted_sum(&mut g, &terms)?;
            Ok(g.value(cost).data()[0])
        })
        .collect()
}

/// Least-cost query, smallest index on ties.
pub fn argmin_cost(costs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &c) in costs.iter().enumerate() {
        if c < costs[best] || costs[best].is_nan() && !c.is_nan() {
            best = i;
        }
    }
    best
}

pub fn match_query(pred: &PredictionSet, gt: &GroundTruth, cfg: &LossConfig) -> Result<usize> {
    Ok(argmin_cost(&query_costs(pred, gt, cfg)?))
}
