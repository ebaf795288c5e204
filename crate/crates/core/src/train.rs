//! Clip sampling, the optimizer, and the training loop.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvos_autodiff::{Graph, Real, TensorError};
use rvos_data::VideoSample;
use serde::{Deserialize, Serialize};

use crate::config::{Optimizer, RunConfig};
use crate::encoder::frames_tensor;
use crate::error::{CoreError, Result};
use crate::loss::{argmin_cost, query_costs, total_loss, GroundTruth, LossBreakdown};
use crate::model::Model;
use crate::params::ParamStore;
use crate::temporal::PredictionSet;

/// Everything a step hook can inspect.
pub struct StepInfo<'a> {
    pub step: usize,
    pub sample: usize,
    pub window: Range<usize>,
    pub pred: &'a PredictionSet,
    pub gt: &'a GroundTruth,
    pub costs: &'a [f64],
    pub matched: usize,
    pub loss: LossBreakdown,
}

pub type StepHook<'h> = dyn FnMut(&StepInfo) + 'h;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub sample: usize,
    pub start: usize,
    pub lr: f64,
    pub matched: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// A uniformly drawn window of `min(t_train, T)` frames; when the target is in
/// the video, only windows that contain at least one target frame qualify.
pub fn sample_window(sample: &VideoSample, t_train: usize, rng: &mut ChaCha8Rng) -> Range<usize> {
    let t = sample.t();
    let len = t_train.min(t);
    let rel = sample.gt.relevance();
    let valid: Vec<usize> = (0..=t - len).filter(|&s| !rel.iter().any(|&r| r) || rel[s..s + len].iter().any(|&r| r)).collect();
    let s = valid[rng.gen_range(0..valid.len())];
    s..s + len
}

struct Moments {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

pub struct Trainer<F: Real> {
    pub cfg: RunConfig,
    pub model: Model,
    pub params: ParamStore<F>,
    pub step: usize,
    rng: ChaCha8Rng,
    moments: Moments,
}

impl<F: Real> Trainer<F> {
    /// Fresh model initialized from `cfg.seed`.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let (model, params) = Model::new(&cfg.model, cfg.seed)?;
        Ok(Self::with_params(cfg, model, params.cast()))
    }

    pub fn with_params(cfg: &RunConfig, model: Model, params: ParamStore<F>) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Trainer { cfg: cfg.clone(), model, step: 0, rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_c11b), moments: Moments { m: zeros(), v: zeros() }, params }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let t = &self.cfg.train;
        if (step as f64) < t.decay_at * t.steps as f64 {
            t.lr
        } else {
            t.lr * t.decay_factor
        }
    }

    /// One optimization step on a randomly drawn sample and window.
    pub fn train_step(&mut self, samples: &[VideoSample], hook: Option<&mut StepHook>) -> Result<LossRecord> {
        if samples.is_empty() {
            return Err(CoreError::Config("no training samples".into()));
        }
        let step = self.step;
        let idx = self.rng.gen_range(0..samples.len());
        let sample = &samples[idx];
        let window = sample_window(sample, self.cfg.train.t_train, &mut self.rng);
        let numeric = |e: TensorError| match e {
            TensorError::NonFinite { op } => CoreError::NonFinite { step, detail: format!("{op} on sample {}", sample.id) },
            other => CoreError::Tensor(other),
        };

        let gt = GroundTruth::from_annotation(&sample.gt, window.clone(), self.cfg.loss.sigma_frac)?;
        let mut g = Graph::<F>::new();
        let p = self.params.bind(&mut g, true);
        let frames = g.constant(frames_tensor(&sample.frames, window.clone()));
        let index: Vec<usize> = window.clone().collect();
        let out = self.model.forward(&mut g, &p, frames, &sample.query.ids, &index).map_err(|e| match e {
            CoreError::Tensor(t) => numeric(t),
            other => other,
        })?;
        let pred = out.prediction_set(&g);
        let costs = query_costs(&pred, &gt, &self.cfg.loss)?;
        let j = argmin_cost(&costs);
        let (loss, breakdown) = total_loss(&mut g, &out, &gt, j, &self.cfg.loss).map_err(|e| match e {
            CoreError::Tensor(t) => numeric(t),
            other => other,
        })?;
        if !breakdown.total.is_finite() {
            return Err(CoreError::NonFinite { step, detail: format!("loss {:?}", breakdown) });
        }
        if let Some(h) = hook {
            h(&StepInfo { step, sample: idx, window: window.clone(), pred: &pred, gt: &gt, costs: &costs, matched: j, loss: breakdown });
        }
        let grads = g.backward(loss).map_err(numeric)?;
        let mut gs: Vec<Vec<f64>> = p.0.iter().zip(self.params.tensors()).map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.numel()], |g| g.to_f64_vec())).collect();
        let norm = gs.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(CoreError::NonFinite { step, detail: "gradient norm".into() });
        }
        let clip = self.cfg.train.grad_clip;
        if clip > 0.0 && norm > clip {
            let s = clip / norm;
            gs.iter_mut().flatten().for_each(|x| *x *= s);
        }
        let lr = self.lr_at(step);
        self.apply(&gs, lr);
        self.step += 1;
        Ok(LossRecord { step, sample: idx, start: window.start, lr, matched: j, loss: breakdown })
    }

    fn apply(&mut self, grads: &[Vec<f64>], lr: f64) {
        let t = (self.step + 1) as i32;
        let opt = self.cfg.train.optimizer.clone();
        for (i, tensor) in self.params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.moments.m[i], &mut self.moments.v[i]);
            for (k, x) in tensor.data_mut().iter_mut().enumerate() {
                let gk = grads[i][k];
                let delta = match opt {
                    Optimizer::Adam { beta1, beta2, eps } => {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                        let mh = m[k] / (1.0 - beta1.powi(t));
                        let vh = v[k] / (1.0 - beta2.powi(t));
                        lr * mh / (vh.sqrt() + eps)
                    }
                    Optimizer::Sgd { momentum } => {
                        m[k] = momentum * m[k] + gk;
                        lr * m[k]
                    }
                };
                *x = F::of(x.as_f64() - delta);
            }
        }
    }

    /// Runs the configured number of steps.
    pub fn train(&mut self, samples: &[VideoSample], mut hook: Option<&mut StepHook>) -> Result<Vec<LossRecord>> {
        let mut curve = Vec::with_capacity(self.cfg.train.steps);
        while self.step < self.cfg.train.steps {
            let rec = self.train_step(samples, hook.as_deref_mut())?;
            let every = self.cfg.train.log_every.max(1);
            if rec.step % every == 0 || rec.step + 1 == self.cfg.train.steps {
                log::info!(
                    "step {} lr {:.2e} loss {:.4} (cls {:.4} box {:.4} mask {:.4} span {:.4} rel {:.4}) q{}",
                    rec.step,
                    rec.lr,
                    rec.loss.total,
                    rec.loss.cls,
                    rec.loss.box_,
                    rec.loss.mask,
                    rec.loss.span,
                    rec.loss.rel,
                    rec.matched
                );
            }
            curve.push(rec);
        }
        Ok(curve)
    }
}

/// CSV with one row per step.
pub fn loss_curve_csv(curve: &[LossRecord]) -> String {
    let mut s = String::from("step,sample,start,lr,matched,total,cls,box,mask,span,rel\n");
    for r in curve {
        let l = &r.loss;
        s.push_str(&format!("{},{},{},{},{},{},{},{},{},{},{}\n", r.step, r.sample, r.start, r.lr, r.matched, l.total, l.cls, l.box_, l.mask, l.span, l.rel));
    }
    s
}
