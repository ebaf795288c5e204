//! Procedural untrimmed videos of moving coloured shapes.
//!
//! Objects move linearly for the whole video; the target is only drawn during
//! its segments. Distractors copy the target but change its colour or its
//! shape, so the query always needs both words. Backgrounds alternate between
//! dark and light at every hard cut.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::mask::Mask;
use crate::vocab::{Color, Motion, Shape, Size, Vocabulary};

const PLACEMENT_TRIES: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub num_distractors: usize,
    pub num_segments: usize,
    pub scene_cuts: usize,
    /// Requested target-irrelevant rate; random when `None`.
    pub ti: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { t: 48, h: 64, w: 64, num_distractors: 2, num_segments: 1, scene_cuts: 1, ti: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub color: Color,
    pub shape: Shape,
    pub size: Size,
    pub motion: Motion,
    /// Centre at frame 0, pixels.
    pub start: (f64, f64),
    /// Displacement per frame, pixels.
    pub velocity: (f64, f64),
    pub radius: f64,
}

impl ObjectSpec {
    pub fn center(&self, t: usize) -> (f64, f64) {
        (self.start.0 + self.velocity.0 * t as f64, self.start.1 + self.velocity.1 * t as f64)
    }

    /// Half extents along x and y.
    pub fn half_extent(&self) -> (f64, f64) {
        match self.shape {
            Shape::Bar => (self.radius, 0.4 * self.radius),
            _ => (self.radius, self.radius),
        }
    }

    /// Analytic membership of the point `(px, py)` at frame `t`.
    pub fn contains(&self, px: f64, py: f64, t: usize) -> bool {
        let (cx, cy) = self.center(t);
        let (dx, dy) = (px - cx, py - cy);
        let r = self.radius;
        match self.shape {
            Shape::Circle => dx * dx + dy * dy <= r * r,
            Shape::Square => dx.abs() <= r && dy.abs() <= r,
            Shape::Diamond => dx.abs() + dy.abs() <= r,
            Shape::Bar => dx.abs() <= r && dy.abs() <= 0.4 * r,
            // Apex up at cy - r, base of width 2r at cy + r.
            Shape::Triangle => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0,
        }
    }

    /// Mask sampled at pixel centres.
    pub fn rasterize(&self, t: usize, h: usize, w: usize) -> Mask {
        Mask::from_fn(h, w, |y, x| self.contains(x as f64 + 0.5, y as f64 + 0.5, t))
    }

    /// Normalized `(cx, cy, w, h)` of the analytic extent.
    pub fn box_cxcywh(&self, t: usize, h: usize, w: usize) -> [f64; 4] {
        let (cx, cy) = self.center(t);
        let (ex, ey) = self.half_extent();
        [cx / w as f64, cy / h as f64, 2.0 * ex / w as f64, 2.0 * ey / h as f64]
    }

    fn attributes(&self) -> (Size, Color, Shape, Motion) {
        (self.size, self.color, self.shape, self.motion)
    }
}

/// Row-major `T×3×H×W` pixels; value `k` stands for `k/255`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frames {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Frames {
    pub fn frame(&self, t: usize) -> &[u8] {
        let n = 3 * self.h * self.w;
        &self.data[t * n..(t + 1) * n]
    }

    /// Frame `t` as `3×H×W` values in `[0, 1]`.
    pub fn frame_f64(&self, t: usize) -> Vec<f64> {
        self.frame(t).iter().map(|&v| v as f64 / 255.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub words: Vec<String>,
    pub ids: Vec<usize>,
    pub size: Option<Size>,
    pub color: Color,
    pub shape: Shape,
    pub motion: Option<Motion>,
}

impl Query {
    pub fn matches(&self, obj: &ObjectSpec) -> bool {
        self.size.is_none_or(|s| s == obj.size) && self.color == obj.color && self.shape == obj.shape && self.motion.is_none_or(|m| m == obj.motion)
    }
}

/// Per-frame target annotation. Segments are half-open `[start, end)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub segments: Vec<(usize, usize)>,
    pub masks: Vec<Mask>,
    pub boxes: Vec<Option<[f64; 4]>>,
}

impl Annotation {
    pub fn t(&self) -> usize {
        self.masks.len()
    }

    /// Frame-level relevance: the target is visible.
    pub fn relevance(&self) -> Vec<bool> {
        self.masks.iter().map(|m| !m.is_empty()).collect()
    }

    pub fn present_frames(&self) -> usize {
        self.segments.iter().map(|(s, e)| e - s).sum()
    }

    pub fn ti_rate(&self) -> f64 {
        1.0 - self.present_frames() as f64 / self.t() as f64
    }

    /// First start and last end, inclusive, or `None` when absent.
    pub fn envelope(&self) -> Option<(usize, usize)> {
        let s = self.segments.iter().map(|s| s.0).min()?;
        let e = self.segments.iter().map(|s| s.1).max()?;
        Some((s, e - 1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub seed: u64,
    pub frames: Frames,
    pub query: Query,
    pub gt: Annotation,
    /// Frames whose background differs from the previous frame's.
    pub scene_cuts: Vec<usize>,
    /// Target first, then distractors.
    pub objects: Vec<ObjectSpec>,
}

impl VideoSample {
    pub fn t(&self) -> usize {
        self.frames.t
    }

    pub fn ti_rate(&self) -> f64 {
        self.gt.ti_rate()
    }
}

pub fn generate_sample(seed: u64, cfg: &SynthConfig) -> Result<VideoSample> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = Vocabulary::default();
    let (t, h, w) = (cfg.t, cfg.h, cfg.w);

    let segments = place_segments(&mut rng, cfg)?;
    let mut scene_cuts: Vec<usize> = sample(&mut rng, t - 1, cfg.scene_cuts).into_iter().map(|i| i + 1).collect();
    scene_cuts.sort_unstable();

    let target_attrs = (pick(&mut rng, &Size::ALL), pick(&mut rng, &Color::ALL), pick(&mut rng, &Shape::ALL), pick(&mut rng, &Motion::ALL));
    let objects = place_objects(&mut rng, cfg, target_attrs)?;
    let query = make_query(&mut rng, &vocab, &objects[0])?;
    let matching = objects.iter().filter(|o| query.matches(o)).count();
    if matching != 1 {
        return Err(DataError::Config(format!("query matches {matching} objects")));
    }

    let present: Vec<bool> = (0..t).map(|f| segments.iter().any(|&(s, e)| f >= s && f < e)).collect();
    let mut backgrounds = Vec::with_capacity(cfg.scene_cuts + 1);
    for k in 0..=cfg.scene_cuts {
        let base: i32 = if k % 2 == 0 { 30 } else { 215 };
        let mut c = [0u8; 3];
        for v in c.iter_mut() {
            *v = (base + rng.gen_range(-15..=15)) as u8;
        }
        backgrounds.push(c);
    }

    let plane = h * w;
    let mut data = vec![0u8; t * 3 * plane];
    let mut masks = Vec::with_capacity(t);
    let mut boxes = Vec::with_capacity(t);
    for f in 0..t {
        let scene = scene_cuts.iter().filter(|&&c| c <= f).count();
        let frame = &mut data[f * 3 * plane..(f + 1) * 3 * plane];
        for ch in 0..3 {
            frame[ch * plane..(ch + 1) * plane].fill(backgrounds[scene][ch]);
        }
        for (i, obj) in objects.iter().enumerate() {
            if i == 0 && !present[f] {
                continue;
            }
            let m = obj.rasterize(f, h, w);
            let rgb = obj.color.rgb();
            for (p, _) in m.bits().iter().enumerate().filter(|(_, &b)| b) {
                for ch in 0..3 {
                    frame[ch * plane + p] = rgb[ch];
                }
            }
        }
        if present[f] {
            masks.push(objects[0].rasterize(f, h, w));
            boxes.push(Some(objects[0].box_cxcywh(f, h, w)));
        } else {
            masks.push(Mask::empty(h, w));
            boxes.push(None);
        }
    }

    Ok(VideoSample { id: format!("seed{seed}"), seed, frames: Frames { t, h, w, data }, query, gt: Annotation { segments, masks, boxes }, scene_cuts, objects })
}

/// One sample per requested TI rate, seeded by the matching entry of `seeds`.
pub fn make_ti_suite(seeds: &[u64], ti_targets: &[f64], base: &SynthConfig) -> Result<Vec<VideoSample>> {
    if seeds.len() != ti_targets.len() {
        return Err(DataError::Config(format!("{} seeds for {} TI targets", seeds.len(), ti_targets.len())));
    }
    seeds
        .iter()
        .zip(ti_targets)
        .enumerate()
        .map(|(i, (&seed, &ti))| {
            let cfg = SynthConfig { ti: Some(ti), num_segments: base.num_segments.max(1), ..base.clone() };
            let mut s = generate_sample(seed, &cfg)?;
            s.id = format!("ti{i:03}_seed{seed}");
            Ok(s)
        })
        .collect()
}

/// Attempts per sample before a layout search gives up.
const SEED_ATTEMPTS: u64 = 100;

/// `count` samples from consecutive seeds starting at `first_seed`; seeds whose
/// objects cannot be placed are skipped.
pub fn generate_samples(first_seed: u64, count: usize, cfg: &SynthConfig) -> Result<Vec<VideoSample>> {
    validate(cfg)?;
    let mut out = Vec::with_capacity(count);
    let mut seed = first_seed;
    while out.len() < count {
        let mut last = None;
        for _ in 0..SEED_ATTEMPTS {
            let s = seed;
            seed += 1;
            match generate_sample(s, cfg) {
                Ok(v) => {
                    out.push(v);
                    last = None;
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        if let Some(e) = last {
            return Err(e);
        }
    }
    Ok(out)
}

/// A TI suite whose seeds are searched upward from `first_seed + 1000·i` for target `i`.
pub fn ti_suite(first_seed: u64, ti_targets: &[f64], base: &SynthConfig) -> Result<Vec<VideoSample>> {
    let seeds = ti_targets
        .iter()
        .enumerate()
        .map(|(i, &ti)| {
            let cfg = SynthConfig { ti: Some(ti), num_segments: base.num_segments.max(1), ..base.clone() };
            let from = first_seed + 1000 * i as u64;
            generate_samples(from, 1, &cfg).map(|v| v[0].seed)
        })
        .collect::<Result<Vec<_>>>()?;
    make_ti_suite(&seeds, ti_targets, base)
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    if cfg.t < 8 {
        return Err(DataError::Config(format!("T = {} < 8", cfg.t)));
    }
    if cfg.h < 16 || cfg.w < 16 {
        return Err(DataError::Config(format!("canvas {}x{} too small", cfg.h, cfg.w)));
    }
    if cfg.scene_cuts >= cfg.t {
        return Err(DataError::Config(format!("{} scene cuts in {} frames", cfg.scene_cuts, cfg.t)));
    }
    if let Some(ti) = cfg.ti {
        if !(0.0..=1.0).contains(&ti) {
            return Err(DataError::Config(format!("TI rate {ti} outside [0, 1]")));
        }
    }
    Ok(())
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.gen_range(0..xs.len())]
}

/// Splits `n` into `k` positive parts.
fn positive_parts(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k >= 1 && n >= k);
    let mut cuts: Vec<usize> = sample(rng, n - 1, k - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut parts = Vec::with_capacity(k);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(n)) {
        parts.push(c - prev);
        prev = c;
    }
    parts
}

fn place_segments(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<Vec<(usize, usize)>> {
    let t = cfg.t;
    let present = match cfg.ti {
        Some(ti) => ((1.0 - ti) * t as f64).round() as usize,
        None if cfg.num_segments == 0 => 0,
        None => {
            let k = cfg.num_segments.min(t / 2);
            rng.gen_range(k.max(t / 5)..=t - (k - 1))
        }
    };
    if present == 0 {
        return Ok(Vec::new());
    }
    let k = cfg.num_segments.max(1).min(present).min(t - present + 1);
    let lengths = positive_parts(rng, present, k);
    // k+1 gaps; interior ones need at least one absent frame.
    let spare = t - present - (k - 1);
    let gaps: Vec<usize> = positive_parts(rng, spare + k + 1, k + 1).into_iter().map(|g| g - 1).collect();
    let mut segments = Vec::with_capacity(k);
    let mut cursor = gaps[0];
    for i in 0..k {
        segments.push((cursor, cursor + lengths[i]));
        cursor += lengths[i] + gaps[i + 1] + usize::from(i + 1 < k);
    }
    Ok(segments)
}

fn radius(size: Size, cfg: &SynthConfig) -> f64 {
    let side = cfg.h.min(cfg.w) as f64;
    match size {
        Size::Small => 0.09 * side,
        Size::Big => 0.15 * side,
    }
}

fn place_object(rng: &mut ChaCha8Rng, cfg: &SynthConfig, attrs: (Size, Color, Shape, Motion)) -> Option<ObjectSpec> {
    let (size, color, shape, motion) = attrs;
    let mut obj = ObjectSpec { color, shape, size, motion, start: (0.0, 0.0), velocity: (0.0, 0.0), radius: radius(size, cfg) };
    let (ex, ey) = obj.half_extent();
    let (dx, dy) = motion.direction();
    let span = (cfg.t - 1) as f64;
    let total = (dx * 0.35 * cfg.w as f64, dy * 0.35 * cfg.h as f64);
    obj.velocity = (total.0 / span, total.1 / span);
    let x_lo = ex + 1.0 + (-total.0).max(0.0);
    let x_hi = cfg.w as f64 - ex - 1.0 - total.0.max(0.0);
    let y_lo = ey + 1.0 + (-total.1).max(0.0);
    let y_hi = cfg.h as f64 - ey - 1.0 - total.1.max(0.0);
    if x_lo >= x_hi || y_lo >= y_hi {
        return None;
    }
    obj.start = (rng.gen_range(x_lo..x_hi), rng.gen_range(y_lo..y_hi));
    Some(obj)
}

/// Axis-aligned extents, padded by one pixel, never touch at any frame.
fn separated(a: &ObjectSpec, b: &ObjectSpec, t: usize) -> bool {
    let (aex, aey) = a.half_extent();
    let (bex, bey) = b.half_extent();
    (0..t).all(|f| {
        let (ac, bc) = (a.center(f), b.center(f));
        (ac.0 - bc.0).abs() > aex + bex + 2.0 || (ac.1 - bc.1).abs() > aey + bey + 2.0
    })
}

fn place_objects(rng: &mut ChaCha8Rng, cfg: &SynthConfig, target: (Size, Color, Shape, Motion)) -> Result<Vec<ObjectSpec>> {
    let fail = || DataError::Config(format!("cannot fit target and {} distractors on {}x{}", cfg.num_distractors, cfg.h, cfg.w));
    let mut objects = vec![(0..PLACEMENT_TRIES).find_map(|_| place_object(rng, cfg, target)).ok_or_else(fail)?];
    for _ in 0..cfg.num_distractors {
        let (_, color, shape, _) = target;
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let attrs = if rng.gen_bool(0.5) {
                (pick(rng, &Size::ALL), other(rng, &Color::ALL, color), shape, pick(rng, &Motion::ALL))
            } else {
                (pick(rng, &Size::ALL), color, other(rng, &Shape::ALL, shape), pick(rng, &Motion::ALL))
            };
            if let Some(o) = place_object(rng, cfg, attrs) {
                if objects.iter().all(|p| separated(p, &o, cfg.t)) {
                    placed = Some(o);
                    break;
                }
            }
        }
        objects.push(placed.ok_or_else(fail)?);
    }
    debug_assert!(objects.iter().skip(1).all(|o| o.attributes() != objects[0].attributes()));
    Ok(objects)
}

fn other<T: Copy + PartialEq>(rng: &mut ChaCha8Rng, xs: &[T], not: T) -> T {
    loop {
        let v = pick(rng, xs);
        if v != not {
            return v;
        }
    }
}

fn make_query(rng: &mut ChaCha8Rng, vocab: &Vocabulary, target: &ObjectSpec) -> Result<Query> {
    let size = rng.gen_bool(0.5).then_some(target.size);
    let motion = rng.gen_bool(0.5).then_some(target.motion);
    let mut words = vec!["the"];
    if let Some(s) = size {
        words.push(s.word());
    }
    words.push(target.color.word());
    words.push(target.shape.word());
    if let Some(m) = motion {
        words.extend(["that", "is"]);
        words.extend(m.words());
    }
    let ids = vocab.encode(&words)?;
    Ok(Query { words: words.iter().map(|w| w.to_string()).collect(), ids, size, color: target.color, shape: target.shape, motion })
}
