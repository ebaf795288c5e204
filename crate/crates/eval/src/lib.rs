//! Evaluation protocol for referring segmentation in untrimmed videos.
//!
//! Per expression: region similarity J and contour accuracy F averaged over
//! frames where prediction or ground truth is nonempty, plus temporal IoU
//! between the predicted span and the frames showing the target. Reports group
//! expressions by their target-irrelevant (TI) rate.

mod metrics;
mod predictions;
mod report;
mod stats;

pub use metrics::{boundary, contour_f, default_radius, evaluate_expression, region_j, ti_rate, tiou, ExpressionMetrics};
pub use predictions::{read_predictions, write_predictions, FinalOutput, Prediction, Scores, PREDICTIONS_VERSION};
pub use report::{bucket_of, evaluate_all, grouped_report, Aggregate, Bucket, MetricsReport, BUCKET_EDGES, BUCKET_LABELS};
pub use stats::{dataset_stats, detect_scenes, frame_difference, scene_cuts, DatasetStats, ExpressionStats, SCENE_THRESHOLD};
