//! Serialized predictions: per expression the selected query, the span, RLE
//! masks and the head scores. Evaluation reads nothing else from the model.

use std::path::Path;

use rvos_data::{read_json, rle, write_json, DataError, Mask, Result};
use serde::{Deserialize, Serialize};

pub const PREDICTIONS_VERSION: u32 = 1;

/// Final per-expression output: masks are empty outside `span` (inclusive).
#[derive(Clone, Debug, PartialEq)]
pub struct FinalOutput {
    pub query: usize,
    pub span: Option<(usize, usize)>,
    pub masks: Vec<Mask>,
}

impl FinalOutput {
    pub fn span_frames(&self, t: usize) -> Vec<bool> {
        (0..t).map(|f| self.span.is_some_and(|(s, e)| s <= f && f <= e)).collect()
    }
}

/// Head outputs kept for third-party scoring; `tau_s`, `tau_e` and `r` belong to the selected query.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub c: Vec<f64>,
    pub tau_s: Vec<f64>,
    pub tau_e: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub output: FinalOutput,
    pub scores: Scores,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    t: usize,
    h: usize,
    w: usize,
    query: usize,
    span: Option<(usize, usize)>,
    masks: Vec<Vec<u32>>,
    scores: Scores,
}

#[derive(Serialize, Deserialize)]
struct PredictionsFile {
    version: u32,
    predictions: Vec<PredictionRecord>,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let predictions = preds
        .iter()
        .map(|p| {
            let (h, w) = p.output.masks.first().map_or((0, 0), |m| (m.h(), m.w()));
            PredictionRecord {
                id: p.id.clone(),
                t: p.output.masks.len(),
                h,
                w,
                query: p.output.query,
                span: p.output.span,
                masks: p.output.masks.iter().map(rle::encode).collect(),
                scores: p.scores.clone(),
            }
        })
        .collect();
    write_json(path, &PredictionsFile { version: PREDICTIONS_VERSION, predictions })
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let file: PredictionsFile = read_json(path)?;
    if file.version != PREDICTIONS_VERSION {
        return Err(DataError::Schema(format!("predictions version {}, expected {PREDICTIONS_VERSION}", file.version)));
    }
    file.predictions
        .into_iter()
        .map(|r| {
            if r.masks.len() != r.t {
                return Err(DataError::Schema(format!("{}: {} masks for {} frames", r.id, r.masks.len(), r.t)));
            }
            let masks = r.masks.iter().map(|c| rle::decode(r.h, r.w, c)).collect::<Result<Vec<_>>>()?;
            Ok(Prediction { id: r.id, output: FinalOutput { query: r.query, span: r.span, masks }, scores: r.scores })
        })
        .collect()
}
