//! Object-level referring segmentation for untrimmed videos.
//!
//! Frames pass through a small convolutional pyramid; text and vision enhance
//! each other with cross-attention; language queries gather object features per
//! frame and decode masks with dynamic convolution. A temporal encoder and a
//! two-branch sequence/relevance decoder feed span, sequence and relevance heads,
//! and inference keeps the best query's masks only inside its predicted span.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod infer;
pub mod layers;
pub mod loss;
pub mod model;
pub mod params;
pub mod temporal;
pub mod train;

pub use ablate::{ablation_table, run_ablation, standard_variants, train_and_evaluate, RunResult, Variant};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{EvalConfig, LossConfig, ModelConfig, Optimizer, Precision, RunConfig, Toggles, TrainConfig};
pub use error::{CoreError, Result};
pub use infer::{infer_all, predict_sample, to_prediction};
pub use loss::{
    argmin_cost, box_loss, dice_loss, focal_loss, gaussian_span_target, gaussian_table, kl_column, kl_span_loss, mask_loss, match_query, query_costs, total_loss, GroundTruth,
    LossBreakdown,
};
pub use model::{Model, ModelOutput};
pub use params::{Bound, Builder, ParamId, ParamStore};
pub use temporal::{argmax, assemble, PredictionSet};
pub use train::{loss_curve_csv, sample_window, LossRecord, StepInfo, Trainer};
