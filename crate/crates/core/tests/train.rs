use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvos_core::*;
use rvos_data::{generate_sample, SynthConfig, VideoSample};

fn tiny(steps: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig { channels: vec![4, 8, 8], c_t: 8, num_heads: 2, num_queries: 3, fpn_dim: 4, mask_dim: 4, dyn_hidden: 4, srd_layers: 1, ..ModelConfig::default() };
    cfg.synth = SynthConfig { t: 8, h: 32, w: 32, num_distractors: 1, ..SynthConfig::default() };
    cfg.train.steps = steps;
    cfg.train.t_train = 8;
    cfg.train.lr = 3e-3;
    cfg.precision = Precision::F64;
    cfg
}

fn samples(cfg: &RunConfig, n: usize) -> Vec<VideoSample> {
    (0u64..).filter_map(|s| generate_sample(s, &cfg.synth).ok()).take(n).collect()
}

#[test]
fn zero_steps_checkpoint_is_the_initialization() {
    let cfg = tiny(0);
    let data = samples(&cfg, 1);
    let mut tr = Trainer::<f64>::new(&cfg).unwrap();
    assert!(tr.train(&data, None).unwrap().is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&path, &cfg, &tr.params, tr.step).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    let (_, init) = Model::new(&cfg.model, cfg.seed).unwrap();
    assert_eq!(ck.params, init);
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.step, 0);
    ck.check_against(&init).unwrap();
}

#[test]
fn f32_checkpoints_round_trip_exactly() {
    let cfg = RunConfig { precision: Precision::F32, ..tiny(0) };
    let (_, init) = Model::new(&cfg.model, 3).unwrap();
    let p32: ParamStore<f32> = init.cast();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&path, &cfg, &p32, 7).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.params.cast::<f32>(), p32);
    assert_eq!(ck.step, 7);
}

#[test]
fn checkpoint_for_another_architecture_is_rejected() {
    let cfg = tiny(0);
    let (_, init) = Model::new(&cfg.model, 0).unwrap();
    let mut other = cfg.model.clone();
    other.c_t = 16;
    let (_, wider) = Model::new(&other, 0).unwrap();
    let ck = Checkpoint { config: cfg.clone(), step: 0, params: wider };
    assert!(matches!(ck.check_against(&init), Err(CoreError::Schema(_))));
}

#[test]
fn same_seed_gives_identical_curves() {
    let cfg = tiny(4);
    let data = samples(&cfg, 3);
    let run = || {
        let mut tr = Trainer::<f64>::new(&cfg).unwrap();
        (tr.train(&data, None).unwrap(), tr.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    let other = RunConfig { seed: 1, ..cfg.clone() };
    let mut tr = Trainer::<f64>::new(&other).unwrap();
    assert_ne!(tr.train(&data, None).unwrap(), a);
}

#[test]
fn overfitting_one_sample_cuts_the_loss_tenfold() {
    let cfg = tiny(400);
    let data = samples(&cfg, 1);
    let mut tr = Trainer::<f32>::new(&cfg).unwrap();
    let curve = tr.train(&data, None).unwrap();
    let (first, last) = (curve[0].loss.total, curve.last().unwrap().loss.total);
    assert!(last < 0.1 * first, "initial {first}, final {last}");
}

#[test]
fn hook_sees_the_least_cost_query() {
    let cfg = tiny(5);
    let data = samples(&cfg, 2);
    let mut tr = Trainer::<f64>::new(&cfg).unwrap();
    let mut seen = 0;
    let mut hook = |info: &StepInfo| {
        assert_eq!(info.matched, argmin_cost(info.costs));
        assert_eq!(info.costs.len(), 3);
        assert_eq!(info.gt.t, info.window.len());
        seen += 1;
    };
    tr.train(&data, Some(&mut hook)).unwrap();
    assert_eq!(seen, 5);
}

#[test]
fn sgd_runs_and_respects_the_schedule() {
    let mut cfg = tiny(4);
    cfg.train.optimizer = Optimizer::Sgd { momentum: 0.9 };
    cfg.train.decay_at = 0.5;
    let data = samples(&cfg, 1);
    let mut tr = Trainer::<f64>::new(&cfg).unwrap();
    let curve = tr.train(&data, None).unwrap();
    let lrs: Vec<f64> = curve.iter().map(|r| r.lr).collect();
    assert_eq!(&lrs[..2], &[3e-3, 3e-3]);
    assert!(lrs[2..].iter().all(|&l| (l - 3e-4).abs() < 1e-15));
    let csv = loss_curve_csv(&curve);
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn non_finite_weights_abort_with_the_step() {
    let cfg = tiny(3);
    let data = samples(&cfg, 1);
    let mut tr = Trainer::<f64>::new(&cfg).unwrap();
    tr.train_step(&data, None).unwrap();
    tr.params.by_name_mut("heads.seq.l0.w").unwrap().data_mut()[0] = f64::INFINITY;
    match tr.train_step(&data, None) {
        Err(CoreError::NonFinite { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected a numeric failure, got {other:?}"),
    }
}

#[test]
fn inference_is_deterministic_and_consistent() {
    let cfg = tiny(0);
    let data = samples(&cfg, 3);
    let (m, p) = Model::new(&cfg.model, 5).unwrap();
    let a = infer_all(&m, &p, &data).unwrap();
    let b = infer_all(&m, &p, &data).unwrap();
    assert_eq!(a, b);
    for (pred, s) in a.iter().zip(&data) {
        assert_eq!(pred.id, s.id);
        assert_eq!(pred.output.masks.len(), s.t());
        let set = predict_sample(&m, &p, s).unwrap();
        assert_eq!(pred.output, assemble(&set));
        assert_eq!(pred.scores.c, set.c);
        assert_eq!(pred.scores.tau_s, set.tau_s_row(pred.output.query));
    }
}

#[test]
fn unknown_tokens_are_rejected() {
    let cfg = tiny(0);
    let mut data = samples(&cfg, 1);
    data[0].query.ids = vec![999];
    let (m, p) = Model::new(&cfg.model, 0).unwrap();
    assert!(matches!(predict_sample(&m, &p, &data[0]), Err(CoreError::Vocab(_))));
}

#[test]
fn config_round_trip_and_toggles() {
    let mut cfg = tiny(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    cfg.save(&path).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    cfg.apply(Toggles { no_span: true, no_rel: true, coupled_srd: true });
    assert!(!cfg.model.use_span && cfg.model.coupled_srd);
    assert_eq!((cfg.loss.w_span, cfg.loss.w_rel), (0.0, 0.0));
    let mut bad = tiny(3);
    bad.model.c_t = 7;
    assert!(matches!(bad.validate(), Err(CoreError::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn windows_contain_the_target(seed in 0u64..500, t_train in 1usize..40) {
        let synth = SynthConfig { t: 30, h: 32, w: 32, num_distractors: 0, ti: Some(0.8), ..SynthConfig::default() };
        let s = generate_sample(seed, &synth).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = sample_window(&s, t_train, &mut rng);
        prop_assert_eq!(w.len(), t_train.min(30));
        prop_assert!(w.end <= 30);
        let rel = s.gt.relevance();
        prop_assert!(w.clone().any(|f| rel[f]));
    }
}
