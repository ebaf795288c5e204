mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvos_autodiff::{Graph, Tensor};
use rvos_core::{argmax, assemble, Model, ModelConfig, ParamStore, PredictionSet};

const C: usize = 16;

fn cfg(coupled: bool) -> ModelConfig {
    ModelConfig { channels: vec![8, 12, 16], c_t: C, num_heads: 2, num_queries: 3, coupled_srd: coupled, ..ModelConfig::default() }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn rows_of(data: &[f64]) -> Rows {
    data.chunks(C).map(|r| r.to_vec()).collect()
}

fn block_oracle(p: &ParamStore<f64>, prefix: &str, x: &Rows, qpos: Option<&Rows>, kv: &Rows, self_pos: Option<&Rows>) -> Rows {
    let eps = 1e-5;
    let n = layer_norm(x, p, &format!("{prefix}.ln1"), eps);
    let a = match (qpos, self_pos) {
        (Some(pos), _) => attention(&add(&n, pos), kv, kv, p, &format!("{prefix}.attn"), 2),
        (None, Some(pos)) => {
            let qk = add(&n, pos);
            attention(&qk, &qk, &n, p, &format!("{prefix}.attn"), 2)
        }
        (None, None) => attention(&n, kv, kv, p, &format!("{prefix}.attn"), 2),
    };
    let x1 = add(x, &a);
    let n2 = layer_norm(&x1, p, &format!("{prefix}.ln2"), eps);
    add(&x1, &mlp(&n2, p, &format!("{prefix}.ffn"), 2))
}

#[test]
fn temporal_encoder_matches_loop_oracle() {
    let (m, p) = Model::new(&cfg(false), 1).unwrap();
    let x = random(&[3, 4, C], 2);
    let frames = [5, 6, 7, 8];
    let mut g = Graph::<f64>::new();
    let b = p.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let out = m.temporal.temporal_encode(&mut g, &b, xv, &frames).unwrap();
    let pe: Rows = frames.iter().map(|&f| sinusoid(f as f64, C)).collect();
    for q in 0..3 {
        let xs = rows_of(&x.data()[q * 4 * C..(q + 1) * 4 * C]);
        let want = flat(&block_oracle(&p, "temporal.b0", &xs, None, &xs, Some(&pe)));
        assert!(close(&g.value(out).data()[q * 4 * C..(q + 1) * 4 * C], &want, 1e-10));
    }
}

#[test]
fn single_frame_uses_residual_block_only() {
    let (m, p) = Model::new(&cfg(false), 3).unwrap();
    let x = random(&[3, 1, C], 4);
    let mut g = Graph::<f64>::new();
    let b = p.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let out = m.temporal.temporal_encode(&mut g, &b, xv, &[9]).unwrap();
    for q in 0..3 {
        let xs = rows_of(&x.data()[q * C..(q + 1) * C]);
        let n = layer_norm(&xs, &p, "temporal.b0.ln1", 1e-5);
        let x1 = add(&xs, &linear(&n, &p, "temporal.b0.attn.v"));
        let n2 = layer_norm(&x1, &p, "temporal.b0.ln2", 1e-5);
        let want = flat(&add(&x1, &mlp(&n2, &p, "temporal.b0.ffn", 2)));
        assert!(close(&g.value(out).data()[q * C..(q + 1) * C], &want, 1e-10));
    }
}

#[test]
fn time_constant_input_stays_time_constant() {
    let (m, p) = Model::new(&cfg(false), 5).unwrap();
    let row = random(&[3, 1, C], 6);
    let mut g = Graph::<f64>::new();
    let b = p.bind(&mut g, false);
    let r = g.constant(row);
    let x = g.repeat_axis(r, 1, 5).unwrap();
    let out = m.temporal.temporal_encode(&mut g, &b, x, &[0, 1, 2, 3, 4]).unwrap();
    let d = g.value(out).data();
    for q in 0..3 {
        for t in 1..5 {
            assert!(close(&d[(q * 5 + t) * C..(q * 5 + t + 1) * C], &d[q * 5 * C..(q * 5 + 1) * C], 1e-12));
        }
    }
}

#[test]
fn temporal_encoder_rejects_mismatched_indices() {
    let (m, p) = Model::new(&cfg(false), 7).unwrap();
    let mut g = Graph::<f64>::new();
    let b = p.bind(&mut g, false);
    let x = g.constant(random(&[3, 4, C], 8));
    assert!(m.temporal.temporal_encode(&mut g, &b, x, &[0, 1]).is_err());
}

struct SrdCase {
    text: Tensor<f64>,
    tenc: Tensor<f64>,
    fobj: Tensor<f64>,
    fq: Tensor<f64>,
}

fn srd_case(l: usize, t: usize, seed: u64) -> SrdCase {
    SrdCase { text: random(&[l, C], seed), tenc: random(&[3, t, C], seed + 1), fobj: random(&[3, t, C], seed + 2), fq: random(&[3, C], seed + 3) }
}

fn run_srd(m: &Model, p: &ParamStore<f64>, c: &SrdCase) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::<f64>::new();
    let b = p.bind(&mut g, false);
    let (text, tenc, fobj, fq) = (g.constant(c.text.clone()), g.constant(c.tenc.clone()), g.constant(c.fobj.clone()), g.constant(c.fq.clone()));
    let tf = m.srd.srd_decode(&mut g, &b, text, tenc, fobj, fq).unwrap();
    (g.value(tf.f_seq).data().to_vec(), g.value(tf.f_rel).data().to_vec())
}

#[test]
fn decoupled_srd_matches_two_branch_reference() {
    let (m, p) = Model::new(&cfg(false), 9).unwrap();
    let (t, l) = (4, 3);
    let c = srd_case(l, t, 10);
    let (seq, rel) = run_srd(&m, &p, &c);
    let text = rows_of(c.text.data());
    for q in 0..3 {
        let pos: Rows = vec![c.fq.data()[q * C..(q + 1) * C].to_vec(); t];
        let mut x = rows_of(&c.tenc.data()[q * t * C..(q + 1) * t * C]);
        let mut y = rows_of(&c.fobj.data()[q * t * C..(q + 1) * t * C]);
        for i in 0..2 {
            x = block_oracle(&p, &format!("srd.seq{i}"), &x, Some(&pos), &text, None);
            y = block_oracle(&p, &format!("srd.rel{i}"), &y, Some(&pos), &text, None);
        }
        assert!(close(&seq[q * t * C..(q + 1) * t * C], &flat(&x), 1e-10));
        assert!(close(&rel[q * t * C..(q + 1) * t * C], &flat(&y), 1e-10));
    }
}

#[test]
fn coupled_srd_matches_joint_reference() {
    let (m, p) = Model::new(&cfg(true), 11).unwrap();
    let (t, l) = (3, 2);
    let c = srd_case(l, t, 12);
    let (seq, rel) = run_srd(&m, &p, &c);
    assert_eq!(seq, rel);
    let text = rows_of(c.text.data());
    for q in 0..3 {
        let pos: Rows = vec![c.fq.data()[q * C..(q + 1) * C].to_vec(); t];
        let obj = add(&rows_of(&c.tenc.data()[q * t * C..(q + 1) * t * C]), &pos);
        let mut x: Rows = text.iter().chain(obj.iter()).cloned().collect();
        for i in 0..2 {
            let zeros: Rows = vec![vec![0.0; C]; x.len()];
            x = block_oracle(&p, &format!("srd.joint{i}"), &x.clone(), None, &x, Some(&zeros));
        }
        assert!(close(&seq[q * t * C..(q + 1) * t * C], &flat(&x[l..].to_vec()), 1e-10));
    }
}

#[test]
fn zeroed_srd_is_the_identity() {
    let (m, mut p) = Model::new(&cfg(false), 13).unwrap();
    p.zero_prefix("srd.seq0.attn");
    p.zero_prefix("srd.seq1.attn");
    p.zero_prefix("srd.rel0.attn");
    p.zero_prefix("srd.rel1.attn");
    for name in ["seq0", "seq1", "rel0", "rel1"] {
        p.zero_prefix(&format!("srd.{name}.ffn.l1"));
    }
    let c = srd_case(1, 4, 14);
    let (seq, rel) = run_srd(&m, &p, &c);
    assert_eq!(seq, c.tenc.data());
    assert_eq!(rel, c.fobj.data());
}

#[test]
fn single_token_collapses_to_value_broadcast() {
    let (m, mut p) = Model::new(&cfg(false), 15).unwrap();
    for name in ["seq0", "seq1", "rel0", "rel1"] {
        p.zero_prefix(&format!("srd.{name}.ffn.l1"));
    }
    p.zero_prefix("srd.seq1.attn");
    p.zero_prefix("srd.rel1.attn");
    let c = srd_case(1, 4, 16);
    let (seq, rel) = run_srd(&m, &p, &c);
    let vs = linear(&rows_of(c.text.data()), &p, "srd.seq0.attn.v");
    let vr = linear(&rows_of(c.text.data()), &p, "srd.rel0.attn.v");
    for (i, ((s, r), (a, b))) in seq.iter().zip(&rel).zip(c.tenc.data().iter().zip(c.fobj.data())).enumerate() {
        assert!((s - a - vs[0][i % C]).abs() < 1e-12);
        assert!((r - b - vr[0][i % C]).abs() < 1e-12);
    }
}

fn heads_out(m: &Model, p: &ParamStore<f64>, x: Tensor<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut g = Graph::<f64>::new();
    let b = p.bind(&mut g, false);
    let xv = g.constant(x);
    let s = m.heads.span_head(&mut g, &b, xv).unwrap();
    let s = g.sigmoid(s).unwrap();
    let c = m.heads.sequence_head(&mut g, &b, xv).unwrap();
    let c = g.sigmoid(c).unwrap();
    let r = m.heads.relevance_head(&mut g, &b, xv).unwrap();
    let r = g.sigmoid(r).unwrap();
    (g.value(s).data().to_vec(), g.value(c).data().to_vec(), g.value(r).data().to_vec())
}

#[test]
fn zero_heads_give_one_half() {
    let (m, mut p) = Model::new(&cfg(false), 17).unwrap();
    p.zero_prefix("heads.");
    let (s, c, r) = heads_out(&m, &p, random(&[3, 5, C], 18));
    assert_eq!(s.len(), 30);
    assert_eq!(c.len(), 3);
    assert_eq!(r.len(), 15);
    assert!(s.iter().chain(&c).chain(&r).all(|&v| v == 0.5));
}

#[test]
fn time_constant_features_give_time_constant_heads() {
    let (m, p) = Model::new(&cfg(false), 19).unwrap();
    let row = random(&[3, 1, C], 20);
    let mut data = Vec::new();
    for q in 0..3 {
        for _ in 0..4 {
            data.extend_from_slice(&row.data()[q * C..(q + 1) * C]);
        }
    }
    let (s, _, r) = heads_out(&m, &p, Tensor::new(vec![3, 4, C], data).unwrap());
    for q in 0..3 {
        for t in 1..4 {
            assert_eq!(r[q * 4 + t], r[q * 4]);
            assert_eq!(s[(q * 4 + t) * 2], s[q * 4 * 2]);
            assert_eq!(s[(q * 4 + t) * 2 + 1], s[q * 4 * 2 + 1]);
        }
    }
}

#[test]
fn identical_queries_get_identical_alignment() {
    let (m, p) = Model::new(&cfg(false), 21).unwrap();
    let row = random(&[1, 4, C], 22);
    let data = row.data().repeat(3);
    let (_, c, _) = heads_out(&m, &p, Tensor::new(vec![3, 4, C], data).unwrap());
    assert_eq!(c[0], c[1]);
    assert_eq!(c[1], c[2]);
}

#[test]
fn head_outputs_stay_in_unit_interval() {
    let (m, p) = Model::new(&cfg(false), 23).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x = Tensor::from_fn(vec![3, 500, C], |_| rng.gen_range(-20.0..20.0));
    let (s, c, r) = heads_out(&m, &p, x);
    assert!(s.iter().chain(&c).chain(&r).all(|v| (0.0..=1.0).contains(v)));
}

fn pred_set(nq: usize, t: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> PredictionSet {
    let mut u = |n: usize| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<f64>>();
    let (c, tau_s, tau_e, r, boxes) = (u(nq), u(nq * t), u(nq * t), u(nq * t), u(nq * t * 4));
    let masks = u(nq * t * h * w).into_iter().map(|v| 8.0 * v - 4.0).collect();
    PredictionSet { nq, t, h, w, c, tau_s, tau_e, r, boxes, masks, use_span: true }
}

#[test]
fn worked_assembly_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut p = pred_set(4, 10, 4, 4, &mut rng);
    p.c = vec![0.0, 0.0, 1.0, 0.0];
    for q in 0..4 {
        for t in 0..10 {
            p.tau_s[q * 10 + t] = if t == 3 { 0.9 } else { 0.1 };
            p.tau_e[q * 10 + t] = if t == 7 { 0.9 } else { 0.1 };
        }
    }
    p.masks.iter_mut().for_each(|v| *v = 1.0);
    let out = assemble(&p);
    assert_eq!(out.query, 2);
    assert_eq!(out.span, Some((3, 7)));
    for t in 0..10 {
        assert_eq!(out.masks[t].area(), if (3..=7).contains(&t) { 16 } else { 0 });
    }
}

#[test]
fn reversed_span_is_empty() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let mut p = pred_set(2, 6, 4, 4, &mut rng);
    p.masks.iter_mut().for_each(|v| *v = 3.0);
    let j = argmax(&p.c);
    for t in 0..6 {
        p.tau_s[j * 6 + t] = if t == 4 { 1.0 } else { 0.0 };
        p.tau_e[j * 6 + t] = if t == 1 { 1.0 } else { 0.0 };
    }
    let out = assemble(&p);
    assert_eq!(out.span, None);
    assert!(out.masks.iter().all(|m| m.is_empty()));
}

#[test]
fn disabled_span_keeps_every_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let mut p = pred_set(2, 6, 4, 4, &mut rng);
    p.use_span = false;
    assert_eq!(assemble(&p).span, Some((0, 5)));
}

#[test]
fn argmax_prefers_first_maximum() {
    assert_eq!(argmax(&[0.2, 0.7, 0.7, 0.1]), 1);
    assert_eq!(argmax(&[f64::NAN, 0.3]), 1);
}

proptest! {
    #[test]
    fn assemble_equals_indicator_evaluation(seed in 0u64..10_000, nq in 1usize..5, t in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = pred_set(nq, t, 3, 3, &mut rng);
        let out = assemble(&p);
        let j = (0..nq).fold(0, |b, q| if p.c[q] > p.c[b] { q } else { b });
        let s = (0..t).fold(0, |b, i| if p.tau_s[j * t + i] > p.tau_s[j * t + b] { i } else { b });
        let e = (0..t).fold(0, |b, i| if p.tau_e[j * t + i] > p.tau_e[j * t + b] { i } else { b });
        prop_assert_eq!(out.query, j);
        for f in 0..t {
            for px in 0..9 {
                let inside = s <= f && f <= e;
                let want = inside && sigmoid(p.masks[(j * t + f) * 9 + px]) > 0.5;
                prop_assert_eq!(out.masks[f].bits()[px], want);
            }
        }
    }

    #[test]
    fn scaling_alignment_keeps_selection(seed in 0u64..10_000, k in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = pred_set(5, 4, 2, 2, &mut rng);
        let mut q = p.clone();
        q.c.iter_mut().for_each(|v| *v *= k);
        prop_assert_eq!(assemble(&p).query, assemble(&q).query);
    }
}
