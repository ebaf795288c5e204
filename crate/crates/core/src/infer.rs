//! Whole-video inference and conversion to serialized predictions.

use rayon::prelude::*;
use rvos_autodiff::{Graph, Real};
use rvos_data::VideoSample;
use rvos_eval::{Prediction, Scores};

use crate::encoder::frames_tensor;
use crate::error::Result;
use crate::model::Model;
use crate::params::ParamStore;
use crate::temporal::{assemble, PredictionSet};

/// Forward pass over every frame with frozen parameters.
pub fn predict_sample<F: Real>(model: &Model, params: &ParamStore<F>, sample: &VideoSample) -> Result<PredictionSet> {
    let mut g = Graph::<F>::new();
    let p = params.bind(&mut g, false);
    let t = sample.t();
    let frames = g.constant(frames_tensor(&sample.frames, 0..t));
    let index: Vec<usize> = (0..t).collect();
    let out = model.forward(&mut g, &p, frames, &sample.query.ids, &index)?;
    Ok(out.prediction_set(&g))
}

pub fn to_prediction(id: &str, pred: &PredictionSet) -> Prediction {
    let output = assemble(pred);
    let j = output.query;
    let scores = Scores { c: pred.c.clone(), tau_s: pred.tau_s_row(j).to_vec(), tau_e: pred.tau_e_row(j).to_vec(), r: pred.r_row(j).to_vec() };
    Prediction { id: id.to_string(), output, scores }
}

/// Predictions for every sample, computed in parallel, in input order.
pub fn infer_all<F: Real>(model: &Model, params: &ParamStore<F>, samples: &[VideoSample]) -> Result<Vec<Prediction>> {
    samples.par_iter().map(|s| Ok(to_prediction(&s.id, &predict_sample(model, params, s)?))).collect()
}
