use std::path::Path;

use rvos_data::{read_json, write_json, SynthConfig, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_scales: usize,
    /// Visual channels per scale, finest first.
    pub channels: Vec<usize>,
    pub c_t: usize,
    pub num_heads: usize,
    pub num_queries: usize,
    pub fpn_dim: usize,
    pub mask_dim: usize,
    pub dyn_hidden: usize,
    pub temporal_layers: usize,
    pub srd_layers: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    /// One text-update attention shared by all scales instead of one per scale.
    pub shared_text_attn: bool,
    pub coupled_srd: bool,
    /// Without the span head every frame is predicted as target-present.
    pub use_span: bool,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_scales: 3,
            channels: vec![16, 32, 64],
            c_t: 64,
            num_heads: 2,
            num_queries: 5,
            fpn_dim: 16,
            mask_dim: 8,
            dyn_hidden: 8,
            temporal_layers: 1,
            srd_layers: 2,
            ffn_mult: 2,
            vocab_size: Vocabulary::default().len(),
            max_text_len: 16,
            shared_text_attn: false,
            coupled_srd: false,
            use_span: true,
            layer_norm_eps: rvos_autodiff::LAYER_NORM_EPS,
        }
    }
}

impl ModelConfig {
    /// Input features of the dynamic mask head: mask features, x, y, and a constant 1.
    pub fn dyn_in(&self) -> usize {
        self.mask_dim + 3
    }

    /// Controller outputs: three 1×1 layers with biases folded in as an extra input row.
    pub fn dyn_params(&self) -> usize {
        let h = self.dyn_hidden;
        self.dyn_in() * h + (h + 1) * h + (h + 1)
    }

    /// Total downsampling of the coarsest scale.
    pub fn stride(&self) -> usize {
        1 << (self.num_scales + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.num_scales < 2 {
            return bad(format!("num_scales = {} (need >= 2)", self.num_scales));
        }
        if self.channels.len() != self.num_scales {
            return bad(format!("{} channel widths for {} scales", self.channels.len(), self.num_scales));
        }
        if self.num_heads == 0 || self.c_t % self.num_heads != 0 {
            return bad(format!("c_t = {} not divisible by {} heads", self.c_t, self.num_heads));
        }
        if self.c_t % 2 != 0 || self.channels.iter().any(|&c| c % 4 != 0) {
            return bad("position encodings need even c_t and channels divisible by 4".into());
        }
        if self.num_queries == 0 || self.vocab_size == 0 || self.max_text_len == 0 {
            return bad("num_queries, vocab_size and max_text_len must be positive".into());
        }
        if self.mask_dim == 0 || self.dyn_hidden == 0 || self.fpn_dim == 0 || self.ffn_mult == 0 {
            return bad("mask_dim, dyn_hidden, fpn_dim and ffn_mult must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub w_cls: f64,
    pub w_box: f64,
    pub w_mask: f64,
    pub w_span: f64,
    pub w_rel: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub sigma_frac: f64,
    /// Probabilities are clamped to `[prob_eps, 1 - prob_eps]` before logs.
    pub prob_eps: f64,
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { w_cls: 5.0, w_box: 5.0, w_mask: 2.0, w_span: 10.0, w_rel: 5.0, focal_alpha: 0.25, focal_gamma: 2.0, sigma_frac: 0.05, prob_eps: 1e-7, dice_eps: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Fraction of `steps` after which the learning rate is multiplied by `decay_factor`.
    pub decay_at: f64,
    pub decay_factor: f64,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub t_train: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            lr: 1e-4,
            decay_at: 0.6,
            decay_factor: 0.1,
            optimizer: Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            grad_clip: 1.0,
            t_train: 24,
            log_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub scene_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { scene_threshold: rvos_eval::SCENE_THRESHOLD }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Number of samples `gen` writes.
    pub num_samples: usize,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::F32,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            num_samples: 16,
            eval: EvalConfig::default(),
        }
    }
}

/// Ablation switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub no_span: bool,
    pub no_rel: bool,
    pub coupled_srd: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_json(path).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(write_json(path, self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if t.t_train == 0 {
            return Err(CoreError::Config("t_train must be positive".into()));
        }
        if !(t.lr > 0.0) || !(0.0..=1.0).contains(&t.decay_at) || t.grad_clip < 0.0 {
            return Err(CoreError::Config(format!("bad optimizer settings lr={} decay_at={} clip={}", t.lr, t.decay_at, t.grad_clip)));
        }
        let l = &self.loss;
        if [l.w_cls, l.w_box, l.w_mask, l.w_span, l.w_rel].iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CoreError::Config("loss weights must be finite and non-negative".into()));
        }
        if !(l.prob_eps > 0.0 && l.prob_eps < 0.5) {
            return Err(CoreError::Config(format!("prob_eps = {}", l.prob_eps)));
        }
        Ok(())
    }

    pub fn apply(&mut self, toggles: Toggles) {
        if toggles.no_span {
            self.model.use_span = false;
            self.loss.w_span = 0.0;
        }
        if toggles.no_rel {
            self.loss.w_rel = 0.0;
        }
        if toggles.coupled_srd {
            self.model.coupled_srd = true;
        }
    }
}
