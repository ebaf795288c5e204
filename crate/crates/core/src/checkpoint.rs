//! Weights plus the run configuration, as JSON with base64 little-endian payloads.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rvos_autodiff::{DType, Real, Tensor};
use rvos_data::{read_json, write_json};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CoreError, Result};
use crate::params::ParamStore;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct File {
    version: u32,
    step: usize,
    config: RunConfig,
    params: Vec<Entry>,
}

/// Parameters are held at `f64`; an `f32` store survives the round trip exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: usize,
    pub params: ParamStore<f64>,
}

fn encode<F: Real>(t: &Tensor<F>) -> (String, String) {
    let mut bytes = Vec::with_capacity(t.numel() * 8);
    match F::DTYPE {
        DType::F32 => t.data().iter().for_each(|v| bytes.extend((v.as_f64() as f32).to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|v| bytes.extend(v.as_f64().to_le_bytes())),
    }
    let dtype = if F::DTYPE == DType::F32 { "f32" } else { "f64" };
    (dtype.to_string(), STANDARD.encode(bytes))
}

fn decode(e: &Entry) -> Result<Tensor<f64>> {
    let bytes = STANDARD.decode(&e.data).map_err(|err| CoreError::Schema(format!("{}: {err}", e.name)))?;
    let values: Vec<f64> = match e.dtype.as_str() {
        "f32" => bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect(),
        "f64" => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
        other => return Err(CoreError::Schema(format!("{}: unknown dtype {other}", e.name))),
    };
    Tensor::new(e.shape.clone(), values).map_err(|err| CoreError::Schema(format!("{}: {err}", e.name)))
}

pub fn save_checkpoint<F: Real>(path: &Path, config: &RunConfig, params: &ParamStore<F>, step: usize) -> Result<()> {
    let params = params
        .names()
        .iter()
        .zip(params.tensors())
        .map(|(n, t)| {
            let (dtype, data) = encode(t);
            Entry { name: n.clone(), dtype, shape: t.shape().to_vec(), data }
        })
        .collect();
    Ok(write_json(path, &File { version: CHECKPOINT_VERSION, step, config: config.clone(), params })?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f: File = read_json(path)?;
    if f.version != CHECKPOINT_VERSION {
        return Err(CoreError::Schema(format!("checkpoint version {} (expected {CHECKPOINT_VERSION})", f.version)));
    }
    f.config.validate()?;
    let names = f.params.iter().map(|e| e.name.clone()).collect();
    let tensors = f.params.iter().map(decode).collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint { config: f.config, step: f.step, params: ParamStore::from_parts(names, tensors) })
}

impl Checkpoint {
    /// Checks names and shapes against a freshly built architecture.
    pub fn check_against(&self, reference: &ParamStore<f64>) -> Result<()> {
        if self.params.names() != reference.names() {
            return Err(CoreError::Schema("checkpoint parameter names do not match the architecture".into()));
        }
        for ((n, a), b) in reference.names().iter().zip(reference.tensors()).zip(self.params.tensors()) {
            if a.shape() != b.shape() {
                return Err(CoreError::Schema(format!("{n}: shape {:?} vs {:?}", b.shape(), a.shape())));
            }
        }
        Ok(())
    }
}
