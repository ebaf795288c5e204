//! Binary masks, run-length encoding, a procedural generator of untrimmed
//! moving-shape videos, and the dataset directory format.

mod dataset;
mod error;
mod mask;
pub mod rle;
mod synth;
mod vocab;

pub use dataset::{
    decode_raw, encode_raw, read_dataset, read_json, read_manifest, write_dataset, write_json, Dataset, DatasetManifest, FrameFormat, SampleRecord, DATASET_VERSION,
};
pub use error::{DataError, Result};
pub use mask::Mask;
pub use synth::{generate_sample, generate_samples, make_ti_suite, ti_suite, Annotation, Frames, ObjectSpec, Query, SynthConfig, VideoSample};
pub use vocab::{Color, Motion, Shape, Size, Vocabulary};
