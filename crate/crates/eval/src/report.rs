use std::collections::HashMap;
use std::fmt::Write;

use rayon::prelude::*;
use rvos_data::{DataError, Result, VideoSample};
use serde::{Deserialize, Serialize};

use crate::metrics::{evaluate_expression, ExpressionMetrics};
use crate::predictions::Prediction;

/// Upper bounds (inclusive) of the TI groups `[0, .33]`, `(.33, .66]`, `(.66, 1]`.
pub const BUCKET_EDGES: [f64; 3] = [0.33, 0.66, 1.0];
pub const BUCKET_LABELS: [&str; 3] = ["0%-33%", "33%-66%", "66%-100%"];

pub fn bucket_of(ti: f64) -> usize {
    BUCKET_EDGES.iter().position(|&e| ti <= e).unwrap_or(BUCKET_EDGES.len() - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub j: Option<f64>,
    pub f: Option<f64>,
    pub jf: Option<f64>,
    pub tiou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub range: String,
    #[serde(flatten)]
    pub stats: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: Aggregate,
    pub buckets: Vec<Bucket>,
    pub per_expression: Vec<ExpressionMetrics>,
}

fn aggregate(items: &[&ExpressionMetrics]) -> Aggregate {
    let n = items.len();
    let mean = |f: fn(&ExpressionMetrics) -> f64| (n > 0).then(|| items.iter().map(|m| f(m)).sum::<f64>() / n as f64);
    Aggregate { count: n, j: mean(|m| m.j), f: mean(|m| m.f), jf: mean(|m| m.jf), tiou: mean(|m| m.tiou) }
}

/// Means per TI bucket and overall. Empty buckets keep `count = 0` and no metrics.
pub fn grouped_report(metrics: &[ExpressionMetrics]) -> MetricsReport {
    let all: Vec<&ExpressionMetrics> = metrics.iter().collect();
    let buckets = BUCKET_LABELS
        .iter()
        .enumerate()
        .map(|(b, label)| {
            let members: Vec<&ExpressionMetrics> = metrics.iter().filter(|m| bucket_of(m.ti) == b).collect();
            Bucket { range: label.to_string(), stats: aggregate(&members) }
        })
        .collect();
    MetricsReport { overall: aggregate(&all), buckets, per_expression: metrics.to_vec() }
}

/// Scores every sample against the prediction with the same id, in parallel.
pub fn evaluate_all(preds: &[Prediction], samples: &[VideoSample]) -> Result<Vec<ExpressionMetrics>> {
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    samples
        .par_iter()
        .map(|s| {
            let p = by_id.get(s.id.as_str()).ok_or_else(|| DataError::Schema(format!("no prediction for {}", s.id)))?;
            if p.output.masks.len() != s.t() || p.output.masks.iter().any(|m| (m.h(), m.w()) != (s.frames.h, s.frames.w)) {
                return Err(DataError::Schema(format!("{}: prediction shape differs from the video", s.id)));
            }
            Ok(evaluate_expression(&s.id, &p.output, &s.gt))
        })
        .collect()
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Rows are metrics, columns the overall score and each TI group, in percent.
    pub fn to_table(&self) -> String {
        let mut cols = vec![("Overall".to_string(), &self.overall)];
        cols.extend(self.buckets.iter().map(|b| (b.range.clone(), &b.stats)));
        let headers: Vec<String> = cols.iter().map(|(name, a)| format!("{name} ({})", a.count)).collect();
        let width = headers.iter().map(|h| h.len()).max().unwrap_or(8).max(8);
        let mut out = String::new();
        write!(out, "{:<6}", "").unwrap();
        for h in &headers {
            write!(out, " | {h:>width$}").unwrap();
        }
        out.push('\n');
        out.push_str(&"-".repeat(6 + headers.len() * (width + 3)));
        out.push('\n');
        let rows: [(&str, fn(&Aggregate) -> Option<f64>); 4] = [("J&F", |a| a.jf), ("J", |a| a.j), ("F", |a| a.f), ("tIoU", |a| a.tiou)];
        for (name, get) in rows {
            write!(out, "{name:<6}").unwrap();
            for (_, a) in &cols {
                match get(a) {
                    Some(v) => write!(out, " | {:>width$.1}", 100.0 * v).unwrap(),
                    None => write!(out, " | {:>width$}", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }
}
