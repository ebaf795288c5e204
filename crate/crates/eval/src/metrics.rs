use rvos_data::{Annotation, Mask};
use serde::{Deserialize, Serialize};

use crate::predictions::FinalOutput;

/// Pixel IoU. Two empty masks score 1.
pub fn region_j(p: &Mask, g: &Mask) -> f64 {
    let union = p.union(g);
    if union == 0 {
        return 1.0;
    }
    p.intersection(g) as f64 / union as f64
}

/// Foreground pixels with at least one background 4-neighbour; outside the image counts as background.
pub fn boundary(m: &Mask) -> Mask {
    let (h, w) = (m.h(), m.w());
    Mask::from_fn(h, w, |y, x| m.get(y, x) && (y == 0 || x == 0 || y + 1 == h || x + 1 == w || !m.get(y - 1, x) || !m.get(y + 1, x) || !m.get(y, x - 1) || !m.get(y, x + 1)))
}

/// `ceil(0.008 · diagonal)`.
pub fn default_radius(h: usize, w: usize) -> usize {
    (0.008 * ((h * h + w * w) as f64).sqrt()).ceil() as usize
}

/// Boundary F-measure with Euclidean matching tolerance `radius` pixels.
pub fn contour_f(p: &Mask, g: &Mask, radius: usize) -> f64 {
    let (bp, bg) = (boundary(p), boundary(g));
    let (np, ng) = (bp.area(), bg.area());
    match (np, ng) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let precision = matched(&bp, &bg, radius) as f64 / np as f64;
    let recall = matched(&bg, &bp, radius) as f64 / ng as f64;
    if precision + recall == 0.0 {
        return 0.0;
    }
    2.0 * precision * recall / (precision + recall)
}

/// Number of `from` pixels with some `to` pixel within `radius`.
fn matched(from: &Mask, to: &Mask, radius: usize) -> usize {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).filter(|(dy, dx)| dy * dy + dx * dx <= r * r).collect();
    let (h, w) = (from.h() as isize, from.w() as isize);
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            if !from.get(y as usize, x as usize) {
                continue;
            }
            let hit = offsets.iter().any(|&(dy, dx)| {
                let (yy, xx) = (y + dy, x + dx);
                yy >= 0 && xx >= 0 && yy < h && xx < w && to.get(yy as usize, xx as usize)
            });
            count += usize::from(hit);
        }
    }
    count
}

/// Frame-set IoU. Two empty sets score 1.
pub fn tiou(p: &[bool], g: &[bool]) -> f64 {
    assert_eq!(p.len(), g.len(), "span length mismatch");
    let inter = p.iter().zip(g).filter(|(a, b)| **a && **b).count();
    let union = p.iter().zip(g).filter(|(a, b)| **a || **b).count();
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

/// Fraction of frames without the target.
pub fn ti_rate(g: &[bool]) -> f64 {
    let absent = g.iter().filter(|&&b| !b).count();
    absent as f64 / g.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionMetrics {
    pub id: String,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub tiou: f64,
    pub ti: f64,
}

/// J and F are averaged over frames where the prediction or the ground truth is
/// nonempty; tIoU compares the predicted span with the frames showing the target.
pub fn evaluate_expression(id: &str, pred: &FinalOutput, gt: &Annotation) -> ExpressionMetrics {
    let t = gt.t();
    assert_eq!(pred.masks.len(), t, "{id}: prediction has {} frames, ground truth {t}", pred.masks.len());
    let radius = gt.masks.first().map_or(1, |m| default_radius(m.h(), m.w()));
    let (mut js, mut fs, mut n) = (0.0, 0.0, 0usize);
    for (p, g) in pred.masks.iter().zip(&gt.masks) {
        if p.is_empty() && g.is_empty() {
            continue;
        }
        js += region_j(p, g);
        fs += contour_f(p, g, radius);
        n += 1;
    }
    let (j, f) = if n == 0 { (1.0, 1.0) } else { (js / n as f64, fs / n as f64) };
    let g_s = gt.relevance();
    let p_s = pred.span_frames(t);
    ExpressionMetrics { id: id.to_string(), j, f, jf: (j + f) / 2.0, tiou: tiou(&p_s, &g_s), ti: ti_rate(&g_s) }
}
