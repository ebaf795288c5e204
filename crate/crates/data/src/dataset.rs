//! On-disk dataset layout:
//!
//! ```text
//! manifest.json
//! samples/<id>/frames/NNN.bin | NNN.png
//! samples/<id>/masks.rle
//! samples/<id>/anno.json
//! ```
//!
//! Raw frame blobs: `b"RVFR"`, ndim, dims, dtype code (0 = u8), then the
//! payload. Header integers are u32 little-endian.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{schema, DataError, Result};
use crate::rle;
use crate::synth::{Annotation, Frames, ObjectSpec, Query, VideoSample};
use crate::vocab::Vocabulary;

pub const DATASET_VERSION: u32 = 1;
const FRAME_MAGIC: &[u8; 4] = b"RVFR";
const DTYPE_U8: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    Bin,
    Png,
}

impl FrameFormat {
    fn ext(self) -> &'static str {
        match self {
            FrameFormat::Bin => "bin",
            FrameFormat::Png => "png",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub path: String,
    pub frame_format: FrameFormat,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub query: Vec<String>,
    pub segments: Vec<(usize, usize)>,
    pub ti: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub vocabulary: Vec<String>,
    pub samples: Vec<SampleRecord>,
}

#[derive(Serialize, Deserialize)]
struct AnnoFile {
    id: String,
    seed: u64,
    t: usize,
    h: usize,
    w: usize,
    query: Query,
    segments: Vec<(usize, usize)>,
    boxes: Vec<Option<[f64; 4]>>,
    scene_cuts: Vec<usize>,
    objects: Vec<ObjectSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocabulary: Vocabulary,
    pub samples: Vec<VideoSample>,
}

pub fn write_dataset(samples: &[VideoSample], dir: &Path, format: FrameFormat) -> Result<DatasetManifest> {
    let vocab = Vocabulary::default();
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = format!("samples/{}", s.id);
        let root = dir.join(&rel);
        let frames_dir = root.join("frames");
        create_dir(&frames_dir)?;
        let (t, h, w) = (s.frames.t, s.frames.h, s.frames.w);
        for f in 0..t {
            let path = frames_dir.join(format!("{f:03}.{}", format.ext()));
            let bytes = match format {
                FrameFormat::Bin => encode_raw(s.frames.frame(f), h, w),
                FrameFormat::Png => encode_png(s.frames.frame(f), h, w)?,
            };
            write(&path, &bytes)?;
        }
        write(&root.join("masks.rle"), &rle::write_masks(&s.gt.masks, h, w))?;
        let anno = AnnoFile {
            id: s.id.clone(),
            seed: s.seed,
            t,
            h,
            w,
            query: s.query.clone(),
            segments: s.gt.segments.clone(),
            boxes: s.gt.boxes.clone(),
            scene_cuts: s.scene_cuts.clone(),
            objects: s.objects.clone(),
        };
        write_json(&root.join("anno.json"), &anno)?;
        records.push(SampleRecord { id: s.id.clone(), path: rel, frame_format: format, t, h, w, query: s.query.words.clone(), segments: s.gt.segments.clone(), ti: s.ti_rate() });
    }
    let manifest = DatasetManifest { version: DATASET_VERSION, vocabulary: vocab.tokens, samples: records };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return schema(format!("missing {}", path.display()));
    }
    let manifest: DatasetManifest = read_json(&path)?;
    if manifest.version != DATASET_VERSION {
        return schema(format!("dataset version {}, expected {DATASET_VERSION}", manifest.version));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let vocabulary = Vocabulary { tokens: manifest.vocabulary.clone() };
    let samples = manifest.samples.iter().map(|r| read_sample(dir, r)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset { vocabulary, samples })
}

fn read_sample(dir: &Path, rec: &SampleRecord) -> Result<VideoSample> {
    let root = dir.join(&rec.path);
    let anno_path = root.join("anno.json");
    let rle_path = root.join("masks.rle");
    for p in [&anno_path, &rle_path] {
        if !p.is_file() {
            return schema(format!("missing {}", p.display()));
        }
    }
    let anno: AnnoFile = read_json(&anno_path)?;
    let (t, h, w) = (anno.t, anno.h, anno.w);
    if (t, h, w) != (rec.t, rec.h, rec.w) || anno.id != rec.id || anno.segments != rec.segments {
        return schema(format!("{}: anno.json disagrees with manifest", rec.id));
    }
    if anno.segments.iter().any(|&(s, e)| s >= e || e > t) {
        return schema(format!("{}: segment outside [0, {t})", rec.id));
    }
    if anno.boxes.len() != t {
        return schema(format!("{}: {} boxes for {t} frames", rec.id, anno.boxes.len()));
    }
    let (masks, mh, mw) = rle::read_masks(&read(&rle_path)?)?;
    if masks.len() != t || (mh, mw) != (h, w) {
        return schema(format!("{}: masks.rle has {} frames of {mh}x{mw}", rec.id, masks.len()));
    }
    let mut data = Vec::with_capacity(t * 3 * h * w);
    for f in 0..t {
        let path = root.join("frames").join(format!("{f:03}.{}", rec.frame_format.ext()));
        if !path.is_file() {
            return schema(format!("missing {}", path.display()));
        }
        let bytes = read(&path)?;
        let pixels = match rec.frame_format {
            FrameFormat::Bin => decode_raw(&bytes, h, w)?,
            FrameFormat::Png => decode_png(&bytes, h, w)?,
        };
        data.extend_from_slice(&pixels);
    }
    Ok(VideoSample {
        id: anno.id,
        seed: anno.seed,
        frames: Frames { t, h, w, data },
        query: anno.query,
        gt: Annotation { segments: anno.segments, masks, boxes: anno.boxes },
        scene_cuts: anno.scene_cuts,
        objects: anno.objects,
    })
}

pub fn encode_raw(chw: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + chw.len());
    out.extend_from_slice(FRAME_MAGIC);
    for v in [3u32, 3, h as u32, w as u32, DTYPE_U8] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(chw);
    out
}

pub fn decode_raw(bytes: &[u8], h: usize, w: usize) -> Result<Vec<u8>> {
    let word = |i: usize| -> Result<u32> {
        bytes.get(4 + 4 * i..8 + 4 * i).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]])).ok_or_else(|| DataError::Schema("truncated frame header".into()))
    };
    if bytes.len() < 4 || &bytes[..4] != FRAME_MAGIC {
        return schema("bad frame magic");
    }
    let ndim = word(0)? as usize;
    let dims = (0..ndim).map(|i| word(1 + i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let dtype = word(1 + ndim)?;
    if dims != [3, h, w] || dtype != DTYPE_U8 {
        return schema(format!("frame header dims {dims:?} dtype {dtype}, expected [3, {h}, {w}] u8"));
    }
    let payload = &bytes[12 + 4 * ndim..];
    if payload.len() != 3 * h * w {
        return schema(format!("frame payload {} bytes, expected {}", payload.len(), 3 * h * w));
    }
    Ok(payload.to_vec())
}

fn encode_png(chw: &[u8], h: usize, w: usize) -> Result<Vec<u8>> {
    let plane = h * w;
    let mut rgb = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        rgb.extend_from_slice(&[chw[p], chw[plane + p], chw[2 * plane + p]]);
    }
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| DataError::Schema(format!("png encode: {e}"));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&rgb).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(out)
}

fn decode_png(bytes: &[u8], h: usize, w: usize) -> Result<Vec<u8>> {
    let png_err = |e: png::DecodingError| DataError::Schema(format!("png decode: {e}"));
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(png_err)?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight || (info.height as usize, info.width as usize) != (h, w) {
        return schema(format!("png is {:?}/{:?} {}x{}, expected 8-bit rgb {h}x{w}", info.color_type, info.bit_depth, info.height, info.width));
    }
    let plane = h * w;
    let mut chw = vec![0u8; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            chw[c * plane + p] = buf[3 * p + c];
        }
    }
    Ok(chw)
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

fn create_dir(path: &PathBuf) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| DataError::Json { path: path.display().to_string(), source: e })?;
    write(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| DataError::Json { path: path.display().to_string(), source: e })
}
