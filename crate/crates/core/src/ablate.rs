//! Train-then-evaluate runs under ablation toggles, with a comparison table.

use rvos_autodiff::Real;
use rvos_data::VideoSample;
use rvos_eval::{evaluate_all, grouped_report, MetricsReport};
use serde::{Deserialize, Serialize};

use crate::config::{Precision, RunConfig, Toggles};
use crate::error::Result;
use crate::infer::infer_all;
use crate::params::ParamStore;
use crate::train::{LossRecord, Trainer};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub toggles: Toggles,
    /// Overrides `train.t_train` when set.
    pub t_train: Option<usize>,
}

impl Variant {
    pub fn new(name: &str, toggles: Toggles) -> Self {
        Variant { name: name.to_string(), toggles, t_train: None }
    }

    pub fn config(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.apply(self.toggles);
        if let Some(t) = self.t_train {
            cfg.train.t_train = t;
        }
        cfg
    }
}

/// Full model, no span head, no relevance loss, coupled SRD.
pub fn standard_variants() -> Vec<Variant> {
    vec![
        Variant::new("full", Toggles::default()),
        Variant::new("no-span", Toggles { no_span: true, ..Default::default() }),
        Variant::new("no-rel", Toggles { no_rel: true, ..Default::default() }),
        Variant::new("coupled-srd", Toggles { coupled_srd: true, ..Default::default() }),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub config: RunConfig,
    pub final_loss: f64,
    pub report: MetricsReport,
}

/// Trained parameters, loss curve, and report on `eval` for one configuration.
pub fn train_and_evaluate(cfg: &RunConfig, train: &[VideoSample], eval: &[VideoSample]) -> Result<(ParamStore<f64>, Vec<LossRecord>, MetricsReport)> {
    fn run<F: Real>(cfg: &RunConfig, train: &[VideoSample], eval: &[VideoSample]) -> Result<(ParamStore<f64>, Vec<LossRecord>, MetricsReport)> {
        let mut trainer = Trainer::<F>::new(cfg)?;
        let curve = trainer.train(train, None)?;
        let preds = infer_all(&trainer.model, &trainer.params, eval)?;
        let report = grouped_report(&evaluate_all(&preds, eval)?);
        Ok((trainer.params.cast(), curve, report))
    }
    match cfg.precision {
        Precision::F32 => run::<f32>(cfg, train, eval),
        Precision::F64 => run::<f64>(cfg, train, eval),
    }
}

pub fn run_ablation(base: &RunConfig, variants: &[Variant], train: &[VideoSample], eval: &[VideoSample]) -> Result<Vec<RunResult>> {
    variants
        .iter()
        .map(|v| {
            let cfg = v.config(base);
            log::info!("ablation variant {}", v.name);
            let (_, curve, report) = train_and_evaluate(&cfg, train, eval)?;
            Ok(RunResult { name: v.name.clone(), config: cfg, final_loss: curve.last().map_or(f64::NAN, |r| r.loss.total), report })
        })
        .collect()
}

/// One row per variant with overall J&F, J, F and tIoU in percent.
pub fn ablation_table(results: &[RunResult]) -> String {
    let mut s = format!("{:<16} {:>8} {:>8} {:>8} {:>8} {:>10}\n", "variant", "J&F", "J", "F", "tIoU", "loss");
    for r in results {
        let o = &r.report.overall;
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        s.push_str(&format!("{:<16} {:>8} {:>8} {:>8} {:>8} {:>10.4}\n", r.name, pct(o.jf), pct(o.j), pct(o.f), pct(o.tiou), r.final_loss));
    }
    s
}
