mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvos_autodiff::{Graph, Tensor};
use rvos_core::*;
use rvos_data::{generate_sample, SynthConfig};

fn lc() -> LossConfig {
    LossConfig::default()
}

fn scalar(g: &Graph<f64>, v: rvos_autodiff::Var) -> f64 {
    g.value(v).data()[0]
}

fn focal_of(p: &[f64], y: &[f64], cfg: &LossConfig) -> f64 {
    let mut g = Graph::<f64>::new();
    let pv = g.constant(Tensor::new(vec![p.len()], p.to_vec()).unwrap());
    let l = focal_loss(&mut g, pv, y, cfg).unwrap();
    scalar(&g, l)
}

fn focal_oracle(p: &[f64], y: &[f64], cfg: &LossConfig) -> f64 {
    let e = cfg.prob_eps;
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(e, 1.0 - e);
            let (pt, at) = if y == 1.0 { (p, cfg.focal_alpha) } else { (1.0 - p, 1.0 - cfg.focal_alpha) };
            -at * (1.0 - pt).powf(cfg.focal_gamma) * pt.ln()
        })
        .sum::<f64>()
        / p.len() as f64
}

#[test]
fn focal_examples() {
    assert!(focal_of(&[1.0 - 1e-7], &[1.0], &lc()) < 1e-15);
    assert!((focal_of(&[0.5], &[1.0], &lc()) - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
    assert!((focal_of(&[0.5], &[1.0], &lc()) - 0.04332).abs() < 1e-5);
    let ce = LossConfig { focal_gamma: 0.0, focal_alpha: 0.5, ..lc() };
    let p: [f64; 4] = [0.1, 0.7, 0.35, 0.9];
    let y: [f64; 4] = [0.0, 1.0, 1.0, 0.0];
    let oracle = -0.5 * p.iter().zip(&y).map(|(p, y)| y * p.ln() + (1.0 - y) * (1.0 - p).ln()).sum::<f64>() / 4.0;
    assert!((focal_of(&p, &y, &ce) - oracle).abs() < 1e-12);
}

#[test]
fn focal_is_finite_at_the_extremes() {
    let v = focal_of(&[0.0, 1.0, 0.0, 1.0], &[1.0, 0.0, 0.0, 1.0], &lc());
    assert!(v.is_finite() && v > 0.0);
}

fn dice_of(logits: &[f64], target: &[f64], frames: usize) -> f64 {
    let mut g = Graph::<f64>::new();
    let n = logits.len() / frames;
    let x = g.constant(Tensor::new(vec![frames, n], logits.to_vec()).unwrap());
    let d = dice_loss(&mut g, x, target, &lc()).unwrap();
    scalar(&g, d)
}

fn to_logits(bits: &[f64]) -> Vec<f64> {
    bits.iter().map(|&b| if b > 0.5 { 40.0 } else { -40.0 }).collect()
}

#[test]
fn dice_examples() {
    let g: Vec<f64> = (0..16).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
    assert!(dice_of(&to_logits(&g), &g, 1) < 1e-6);
    let inv: Vec<f64> = g.iter().map(|v| 1.0 - v).collect();
    assert!((dice_of(&to_logits(&inv), &g, 1) - 1.0).abs() < 1e-6);
    // Two equal-area masks sharing half their pixels.
    let a: Vec<f64> = (0..16).map(|i| if i < 8 { 1.0 } else { 0.0 }).collect();
    let b: Vec<f64> = (0..16).map(|i| if (4..12).contains(&i) { 1.0 } else { 0.0 }).collect();
    assert!((dice_of(&to_logits(&a), &b, 1) - 0.5).abs() < 1e-6);
    // Averaged over frames.
    let two: Vec<f64> = g.iter().chain(&b).copied().collect();
    let pred: Vec<f64> = to_logits(&g).into_iter().chain(to_logits(&a)).collect();
    assert!((dice_of(&pred, &two, 2) - 0.25).abs() < 1e-6);
}

fn box_of(pred: &[[f64; 4]], target: &[[f64; 4]]) -> f64 {
    let mut g = Graph::<f64>::new();
    let flat: Vec<f64> = pred.iter().flatten().copied().collect();
    let x = g.constant(Tensor::new(vec![pred.len(), 4], flat).unwrap());
    let l = box_loss(&mut g, x, target).unwrap();
    scalar(&g, l)
}

fn raster_giou(a: [f64; 4], b: [f64; 4], n: usize) -> f64 {
    let corners = |b: [f64; 4]| (b[0] - b[2] / 2.0, b[1] - b[3] / 2.0, b[0] + b[2] / 2.0, b[1] + b[3] / 2.0);
    let (a, b) = (corners(a), corners(b));
    let (x0, y0, x1, y1) = (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3));
    let inside = |r: (f64, f64, f64, f64), x: f64, y: f64| x >= r.0 && x < r.2 && y >= r.1 && y < r.3;
    let (mut inter, mut uni) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            let x = x0 + (x1 - x0) * (i as f64 + 0.5) / n as f64;
            let y = y0 + (y1 - y0) * (j as f64 + 0.5) / n as f64;
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as usize;
            uni += (ia || ib) as usize;
        }
    }
    let total = (n * n) as f64;
    inter as f64 / uni as f64 - (total - uni as f64) / total
}

#[test]
fn box_examples() {
    let b = [0.4, 0.5, 0.2, 0.3];
    assert!(box_of(&[b], &[b]).abs() < 1e-15);
    // Unit squares touching at a corner: L1 term 0.5, gIoU −0.5.
    let l = box_of(&[[0.5, 0.5, 1.0, 1.0]], &[[1.5, 1.5, 1.0, 1.0]]);
    assert!((l - (0.5 + 1.5)).abs() < 1e-12);
    let (outer, inner) = ([0.5, 0.5, 0.6, 0.4], [0.5, 0.4, 0.6, 0.2]);
    let l1 = (0.0 + 0.1 + 0.0 + 0.2) / 4.0;
    let want = l1 + 1.0 - raster_giou(inner, outer, 1000);
    assert!((box_of(&[inner], &[outer]) - want).abs() < 1e-6);
    let (p, t) = ([0.3, 0.6, 0.3, 0.2], [0.45, 0.5, 0.2, 0.4]);
    let l1 = (0.15 + 0.1 + 0.1 + 0.2) / 4.0;
    assert!((box_of(&[p], &[t]) - (l1 + 1.0 - raster_giou(p, t, 2000))).abs() < 1e-3);
}

#[test]
fn gaussian_targets() {
    let t = gaussian_table(3, 8, 1e-3);
    assert_eq!(t, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let sym = gaussian_table(4, 9, 2.0);
    for i in 0..4 {
        assert!((sym[i] - sym[8 - i]).abs() < 1e-15);
    }
    let raw: Vec<f64> = (0..8).map(|i: i32| (-((i - 2) * (i - 2)) as f64 / 2.0).exp()).collect();
    let z: f64 = raw.iter().sum();
    let (s, e) = gaussian_span_target(2, 5, 8, 0.05).unwrap();
    for i in 0..8 {
        assert!((s[i] - raw[i] / z).abs() < 1e-15);
    }
    assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(argmax(&e), 5);
    // Long spans widen past the one-frame floor.
    let (wide, _) = gaussian_span_target(0, 59, 60, 0.05).unwrap();
    assert_eq!(wide, gaussian_table(0, 60, 3.0));
    assert!(matches!(gaussian_span_target(5, 2, 8, 0.05), Err(CoreError::InvalidSpan { start: 5, end: 2 })));
}

fn kl_of(logits: &[f64], s: &[f64], e: &[f64]) -> f64 {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(vec![s.len(), 2], logits.to_vec()).unwrap());
    let l = kl_span_loss(&mut g, x, s, e).unwrap();
    scalar(&g, l)
}

#[test]
fn kl_examples() {
    let (s, e) = gaussian_span_target(2, 6, 10, 0.05).unwrap();
    let logits: Vec<f64> = s.iter().zip(&e).flat_map(|(a, b)| [a.ln() + 1.0, b.ln() - 3.0]).collect();
    assert!(kl_of(&logits, &s, &e).abs() < 1e-12);
    let u = vec![0.1; 10];
    assert!(kl_of(&[0.0; 20], &u, &u).abs() < 1e-12);
    let one: Vec<f64> = (0..10).map(|i| if i == 4 { 1.0 } else { 0.0 }).collect();
    assert!((kl_of(&[0.0; 20], &one, &u) - 10f64.ln()).abs() < 1e-12);
    assert!((kl_of(&[0.0; 20], &one, &one) - 2.0 * 10f64.ln()).abs() < 1e-12);
}

fn gt_case(seed: u64) -> GroundTruth {
    let cfg = SynthConfig { t: 12, h: 32, w: 32, ..SynthConfig::default() };
    let s = (seed..).find_map(|k| generate_sample(k, &cfg).ok()).unwrap();
    GroundTruth::from_annotation(&s.gt, 0..12, 0.05).unwrap()
}

fn random_pred(gt: &GroundTruth, nq: usize, rng: &mut ChaCha8Rng) -> PredictionSet {
    let (t, h, w) = (gt.t, gt.h, gt.w);
    let mut u = |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
    PredictionSet {
        nq,
        t,
        h,
        w,
        c: u(nq, 0.0, 1.0),
        tau_s: u(nq * t, 0.0, 1.0),
        tau_e: u(nq * t, 0.0, 1.0),
        r: u(nq * t, 0.0, 1.0),
        boxes: u(nq * t * 4, 0.05, 0.95),
        masks: u(nq * t * h * w, -5.0, 5.0),
        use_span: true,
    }
}

/// Straight-line matching cost, independent of the graph code.
fn cost_oracle(p: &PredictionSet, gt: &GroundTruth, q: usize, cfg: &LossConfig) -> f64 {
    let cls = focal_oracle(&[p.c[q]], &[1.0], cfg);
    let fg = gt.fg_frames();
    if fg.is_empty() {
        return cfg.w_cls * cls;
    }
    let hw = gt.h * gt.w;
    let (mut dice, mut px_p, mut px_y, mut boxl) = (0.0, Vec::new(), Vec::new(), 0.0);
    for &f in &fg {
        let logits = p.mask_logits(q, f);
        let target = &gt.masks[f * hw..(f + 1) * hw];
        let probs: Vec<f64> = logits.iter().map(|&x| sigmoid(x)).collect();
        let inter: f64 = probs.iter().zip(target).map(|(a, b)| a * b).sum();
        dice += 1.0 - 2.0 * inter / (probs.iter().sum::<f64>() + target.iter().sum::<f64>() + cfg.dice_eps);
        px_p.extend(probs);
        px_y.extend_from_slice(target);
        let (a, b) = (p.box_of(q, f), gt.boxes[f]);
        let l1 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 4.0;
        let c = |b: [f64; 4]| (b[0] - b[2] / 2.0, b[1] - b[3] / 2.0, b[0] + b[2] / 2.0, b[1] + b[3] / 2.0);
        let (pa, ga) = (c(a), c(b));
        let iw = (pa.2.min(ga.2) - pa.0.max(ga.0)).max(0.0);
        let ih = (pa.3.min(ga.3) - pa.1.max(ga.1)).max(0.0);
        let inter = iw * ih;
        let union = a[2] * a[3] + b[2] * b[3] - inter;
        let enc = (pa.2.max(ga.2) - pa.0.min(ga.0)) * (pa.3.max(ga.3) - pa.1.min(ga.1));
        boxl += l1 + 1.0 - (inter / union - (enc - union) / enc);
    }
    let n = fg.len() as f64;
    let mask = dice / n + focal_oracle(&px_p, &px_y, cfg);
    cfg.w_cls * cls + cfg.w_box * boxl / n + cfg.w_mask * mask
}

#[test]
fn exact_query_wins_matching() {
    let gt = gt_case(3);
    assert!(gt.present());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = random_pred(&gt, 5, &mut rng);
    p.c = vec![0.5; 5];
    let hw = gt.h * gt.w;
    for f in 0..gt.t {
        for i in 0..hw {
            p.masks[(3 * gt.t + f) * hw + i] = if gt.masks[f * hw + i] > 0.5 { 30.0 } else { -30.0 };
        }
        if gt.relevance[f] {
            p.boxes[(3 * gt.t + f) * 4..(3 * gt.t + f + 1) * 4].copy_from_slice(&gt.boxes[f]);
        }
    }
    assert_eq!(match_query(&p, &gt, &lc()).unwrap(), 3);
}

#[test]
fn identical_queries_match_the_first() {
    let gt = gt_case(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let one = random_pred(&gt, 1, &mut rng);
    let rep = |v: &Vec<f64>| v.repeat(4);
    let p = PredictionSet { nq: 4, c: rep(&one.c), tau_s: rep(&one.tau_s), tau_e: rep(&one.tau_e), r: rep(&one.r), boxes: rep(&one.boxes), masks: rep(&one.masks), ..one };
    assert_eq!(match_query(&p, &gt, &lc()).unwrap(), 0);
}

#[test]
fn absent_target_matches_on_alignment_only() {
    let mut gt = gt_case(7);
    let n = gt.t;
    gt.relevance = vec![false; n];
    gt.masks.iter_mut().for_each(|v| *v = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = random_pred(&gt, 4, &mut rng);
    p.c = vec![0.1, 0.2, 0.9, 0.3];
    let costs = query_costs(&p, &gt, &lc()).unwrap();
    for q in 0..4 {
        assert!((costs[q] - 5.0 * focal_oracle(&[p.c[q]], &[1.0], &lc())).abs() < 1e-12);
    }
    assert_eq!(argmin_cost(&costs), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn matching_equals_exhaustive_enumeration(seed in 0u64..1000) {
        let gt = gt_case(seed % 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_pred(&gt, 5, &mut rng);
        let costs = query_costs(&p, &gt, &lc()).unwrap();
        let oracle: Vec<f64> = (0..5).map(|q| cost_oracle(&p, &gt, q, &lc())).collect();
        for q in 0..5 {
            prop_assert!((costs[q] - oracle[q]).abs() < 1e-9 * (1.0 + oracle[q]));
        }
        let best = (0..5).fold(0, |b, q| if oracle[q] < oracle[b] { q } else { b });
        prop_assert_eq!(match_query(&p, &gt, &lc()).unwrap(), best);
    }

    #[test]
    fn shifting_costs_keeps_the_match(costs in prop::collection::vec(0.0f64..10.0, 1..8), k in -5.0f64..5.0) {
        let shifted: Vec<f64> = costs.iter().map(|c| c + k).collect();
        prop_assert_eq!(argmin_cost(&costs), argmin_cost(&shifted));
    }
}

#[test]
fn ground_truth_from_clipped_annotation() {
    let cfg = SynthConfig { t: 30, h: 32, w: 32, num_segments: 2, ..SynthConfig::default() };
    let s = generate_sample(11, &cfg).unwrap();
    let (a, b) = (s.gt.segments[0], s.gt.segments[1]);
    let gt = GroundTruth::from_annotation(&s.gt, 0..30, 0.05).unwrap();
    assert_eq!(gt.span, Some((a.0, b.1 - 1)));
    let rel = s.gt.relevance();
    assert_eq!(gt.relevance, rel);
    for f in 0..30 {
        assert_eq!(gt.boxes[f] != [0.0; 4], rel[f]);
    }
    assert_eq!(argmax(gt.tau_s.as_ref().unwrap()), a.0);
    assert_eq!(argmax(gt.tau_e.as_ref().unwrap()), b.1 - 1);
    // Boundaries outside the clip are not supervised.
    let clip = GroundTruth::from_annotation(&s.gt, a.0 + 1..a.1, 0.05).unwrap();
    assert_eq!(clip.span, Some((0, a.1 - a.0 - 2)));
    assert_eq!((clip.tau_s.clone(), clip.tau_e.clone()), (None, None));
    let head = GroundTruth::from_annotation(&s.gt, 0..a.1, 0.05).unwrap();
    assert_eq!(argmax(head.tau_s.as_ref().unwrap()), a.0);
    assert!(head.tau_e.is_none());
    assert!(GroundTruth::from_annotation(&s.gt, 20..31, 0.05).is_err());
}

fn small_model() -> (Model, ParamStore<f64>) {
    let cfg = ModelConfig { channels: vec![4, 8, 8], c_t: 8, num_heads: 2, num_queries: 3, fpn_dim: 4, mask_dim: 4, dyn_hidden: 4, srd_layers: 1, ..ModelConfig::default() };
    Model::new(&cfg, 9).unwrap()
}

fn clip(seed: u64) -> (rvos_data::VideoSample, GroundTruth) {
    let cfg = SynthConfig { t: 8, h: 32, w: 32, ..SynthConfig::default() };
    let s = (seed..).find_map(|k| generate_sample(k, &cfg).ok()).unwrap();
    let gt = GroundTruth::from_annotation(&s.gt, 0..8, 0.05).unwrap();
    (s, gt)
}

#[test]
fn total_is_the_weighted_sum_and_matches_components() {
    let (m, p) = small_model();
    let (s, gt) = clip(12);
    assert!(gt.present());
    let mut g = Graph::<f64>::new();
    let b = p.bind(&mut g, false);
    let fr = g.constant(rvos_core::encoder::frames_tensor(&s.frames, 0..8));
    let out = m.forward(&mut g, &b, fr, &s.query.ids, &[0, 1, 2, 3, 4, 5, 6, 7]).unwrap();
    let pred = out.prediction_set(&g);
    let cfg = lc();
    for j in 0..3 {
        let (_, br) = total_loss(&mut g, &out, &gt, j, &cfg).unwrap();
        assert_eq!(br.total, 5.0 * br.cls + 5.0 * br.box_ + 2.0 * br.mask + 10.0 * br.span + 5.0 * br.rel);
        let labels: Vec<f64> = (0..3).map(|q| (q == j) as u8 as f64).collect();
        assert!((br.cls - focal_oracle(&pred.c, &labels, &cfg)).abs() < 1e-12);
        let det = cost_oracle(&pred, &gt, j, &cfg) - 5.0 * focal_oracle(&[pred.c[j]], &[1.0], &cfg);
        assert!((5.0 * br.box_ + 2.0 * br.mask - det).abs() < 1e-9);
        let rel: Vec<f64> = gt.relevance.iter().map(|&r| r as u8 as f64).collect();
        assert!((br.rel - focal_oracle(pred.r_row(j), &rel, &cfg)).abs() < 1e-12);
        let z = g.value(out.heads.span_logits).data()[j * 16..(j + 1) * 16].to_vec();
        let kl = |col: usize, tau: &[f64]| {
            let zs: Vec<f64> = (0..8).map(|t| z[t * 2 + col]).collect();
            let lse = zs.iter().map(|v| v.exp()).sum::<f64>().ln();
            tau.iter().zip(&zs).filter(|(a, _)| **a > 0.0).map(|(a, v)| a * (a.ln() - (v - lse))).sum::<f64>()
        };
        let want: f64 = [&gt.tau_s, &gt.tau_e].iter().enumerate().filter_map(|(c, t)| t.as_ref().map(|t| kl(c, t))).sum();
        assert!((br.span - want).abs() < 1e-10);
    }
    let only_cls = LossConfig { w_box: 0.0, w_mask: 0.0, w_span: 0.0, w_rel: 0.0, ..cfg };
    let (_, br) = total_loss(&mut g, &out, &gt, 1, &only_cls).unwrap();
    assert_eq!(br.total, 5.0 * br.cls);
}

#[test]
fn perfect_components_sum_to_zero() {
    let cfg = lc();
    let e = cfg.prob_eps;
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::new(vec![3], vec![e, 1.0 - e, e]).unwrap());
    let cls = focal_loss(&mut g, c, &[0.0, 1.0, 0.0], &cfg).unwrap();
    let target = [1.0, 0.0, 0.0, 1.0];
    let logits = g.constant(Tensor::new(vec![1, 4], to_logits(&target)).unwrap());
    let mask = mask_loss(&mut g, logits, &target, &cfg).unwrap();
    let bx = [[0.5, 0.5, 0.2, 0.2]];
    let bv = g.constant(Tensor::new(vec![1, 4], bx[0].to_vec()).unwrap());
    let boxl = box_loss(&mut g, bv, &bx).unwrap();
    let (ts, te) = gaussian_span_target(1, 3, 5, 0.05).unwrap();
    let z: Vec<f64> = ts.iter().zip(&te).flat_map(|(a, b)| [a.ln(), b.ln()]).collect();
    let zv = g.constant(Tensor::new(vec![5, 2], z).unwrap());
    let span = kl_span_loss(&mut g, zv, &ts, &te).unwrap();
    let total = 5.0 * scalar(&g, cls) + 5.0 * scalar(&g, boxl) + 2.0 * scalar(&g, mask) + 10.0 * scalar(&g, span);
    assert!(total.abs() < 1e-6, "{total}");
}

#[test]
fn absent_target_has_no_box_mask_or_span_terms() {
    let (m, p) = small_model();
    let (s, mut gt) = clip(13);
    let n = gt.t;
    gt.relevance = vec![false; n];
    gt.span = None;
    let mut g = Graph::<f64>::new();
    let b = p.bind(&mut g, false);
    let fr = g.constant(rvos_core::encoder::frames_tensor(&s.frames, 0..8));
    let out = m.forward(&mut g, &b, fr, &s.query.ids, &[0, 1, 2, 3, 4, 5, 6, 7]).unwrap();
    let pred = out.prediction_set(&g);
    let (_, br) = total_loss(&mut g, &out, &gt, 0, &lc()).unwrap();
    assert_eq!((br.box_, br.mask, br.span), (0.0, 0.0, 0.0));
    assert!((br.cls - focal_oracle(&pred.c, &[0.0; 3], &lc())).abs() < 1e-12);
}

#[test]
fn full_loss_gradient_check() {
    let (m, p) = small_model();
    let (s, gt) = clip(14);
    let names: Vec<&str> =
        ["heads.span.l1.w", "masks.controller.l1.b", "boxes.l0.w", "srd.seq0.attn.q.w", "enhance.vis2.k.w", "encoder.s0.down.w", "queries.offsets", "text.table"].to_vec();
    let idx: Vec<usize> = names.iter().map(|n| p.names().iter().position(|x| x == n).unwrap()).collect();
    let inputs: Vec<Tensor<f64>> = idx.iter().map(|&i| p.tensors()[i].clone()).collect();
    let r = rvos_autodiff::grad_check_many(
        |g, vars| {
            let mut b = p.bind(g, false);
            for (k, &i) in idx.iter().enumerate() {
                b.0[i] = vars[k];
            }
            let fr = g.constant(rvos_core::encoder::frames_tensor(&s.frames, 0..8));
            let out = m.forward(g, &b, fr, &s.query.ids, &[0, 1, 2, 3, 4, 5, 6, 7]).map_err(|e| match e {
                CoreError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            let (l, _) = total_loss(g, &out, &gt, 1, &lc()).map_err(|e| match e {
                CoreError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            Ok(l)
        },
        &inputs,
        1e-6,
        Some(6),
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-5, "{:?}", r);
}
