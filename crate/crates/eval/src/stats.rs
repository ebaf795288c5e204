use rvos_data::{Frames, VideoSample};
use serde::{Deserialize, Serialize};

/// Mean absolute pixel change, in `[0, 1]` units, above which a frame starts a new scene.
pub const SCENE_THRESHOLD: f64 = 0.3;

pub fn frame_difference(frames: &Frames, t: usize) -> f64 {
    let (a, b) = (frames.frame(t - 1), frames.frame(t));
    let total: u64 = a.iter().zip(b).map(|(&x, &y)| (x as i32 - y as i32).unsigned_abs() as u64).sum();
    total as f64 / (255.0 * a.len() as f64)
}

/// Frames starting a new scene.
pub fn scene_cuts(frames: &Frames, threshold: f64) -> Vec<usize> {
    (1..frames.t).filter(|&t| frame_difference(frames, t) > threshold).collect()
}

pub fn detect_scenes(frames: &Frames, threshold: f64) -> usize {
    scene_cuts(frames, threshold).len() + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionStats {
    pub id: String,
    pub scenes: usize,
    /// Frames showing the target.
    pub dur_e: usize,
    /// Video length in frames.
    pub dur_v: usize,
    pub ti: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub videos: usize,
    pub objects: usize,
    pub expressions: usize,
    pub mean_scenes: f64,
    pub mean_dur_e: f64,
    pub mean_dur_v: f64,
    pub mean_ti: f64,
    pub per_expression: Vec<ExpressionStats>,
}

/// Every synthetic video carries exactly one referring expression.
pub fn dataset_stats(samples: &[VideoSample], threshold: f64) -> DatasetStats {
    let per_expression: Vec<ExpressionStats> = samples
        .iter()
        .map(|s| ExpressionStats { id: s.id.clone(), scenes: detect_scenes(&s.frames, threshold), dur_e: s.gt.present_frames(), dur_v: s.t(), ti: s.ti_rate() })
        .collect();
    let n = samples.len().max(1) as f64;
    DatasetStats {
        videos: samples.len(),
        objects: samples.iter().map(|s| s.objects.len()).sum(),
        expressions: samples.len(),
        mean_scenes: per_expression.iter().map(|e| e.scenes as f64).sum::<f64>() / n,
        mean_dur_e: per_expression.iter().map(|e| e.dur_e as f64).sum::<f64>() / n,
        mean_dur_v: per_expression.iter().map(|e| e.dur_v as f64).sum::<f64>() / n,
        mean_ti: per_expression.iter().map(|e| e.ti).sum::<f64>() / n,
        per_expression,
    }
}
