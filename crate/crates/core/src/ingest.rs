//! Frame sources: a JSON Lines manifest reader and a seeded synthetic
//! scenario generator.
//!
//! Manifest records, one per line:
//!
//! ```json
//! {"stream_id": 0, "ts_ms": 0, "iframe": true, "width": 1920, "height": 1080,
//!  "pixels_file": "f0000.rgb", "histogram": [..],
//!  "annotations": [{"label": "car", "score": 0.8, "bbox": [x, y, w, h]}]}
//! ```
//!
//! `stream_id` defaults to 0. Each record needs `pixels_file` (raw RGB8,
//! resolved against the manifest's directory) or `histogram`, or both.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::HistogramConfig;
use crate::types::{Annotation, BBox, Frame, Histogram, Resolution, TypeError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp {ts_ms} is not after {prev_ms}")]
    NonMonotonicTimestamp { line: usize, ts_ms: u64, prev_ms: u64 },
    #[error("line {line}: record has neither pixels_file nor histogram")]
    MissingPayload { line: usize },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: TypeError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

pub trait FrameSource {
    /// Next frame in timestamp order; `Ok(None)` at end of stream, and on
    /// every call after that.
    fn next_frame(&mut self) -> Result<Option<Frame>, IngestError>;

    /// Best-effort frame count, if known up front.
    fn len_hint(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestAnnotation {
    pub label: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    #[serde(default)]
    pub stream_id: u64,
    pub ts_ms: u64,
    #[serde(default)]
    pub iframe: bool,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Vec<f64>>,
    #[serde(default)]
    pub annotations: Vec<ManifestAnnotation>,
}

pub struct ManifestStream {
    path: PathBuf,
    base_dir: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    prev_ts: Option<u64>,
    done: bool,
}

impl ManifestStream {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|source| IngestError::Io { path: path.clone(), source })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { path, base_dir, lines: BufReader::new(file).lines(), line_no: 0, prev_ts: None, done: false })
    }

    fn to_frame(&self, rec: ManifestRecord) -> Result<Frame, IngestError> {
        let line = self.line_no;
        if rec.pixels_file.is_none() && rec.histogram.is_none() {
            return Err(IngestError::MissingPayload { line });
        }
        let pixels = match &rec.pixels_file {
            Some(rel) => {
                let p = self.base_dir.join(rel);
                Some(std::fs::read(&p).map_err(|source| IngestError::Io { path: p, source })?)
            }
            None => None,
        };
        let invalid = |source| IngestError::Invalid { line, source };
        let histogram = rec.histogram.map(Histogram::new).transpose().map_err(invalid)?;
        let annotations = rec
            .annotations
            .into_iter()
            .map(|a| Annotation::new(a.label, a.score, a.bbox.map(|[x, y, w, h]| BBox::new(x, y, w, h))))
            .collect::<Result<Vec<_>, _>>()
            .map_err(invalid)?;
        Frame::new(rec.stream_id, rec.ts_ms, rec.width, rec.height, pixels, histogram, rec.iframe, annotations).map_err(invalid)
    }
}

impl FrameSource for ManifestStream {
    fn next_frame(&mut self) -> Result<Option<Frame>, IngestError> {
        if self.done {
            return Ok(None);
        }
        loop {
            let Some(line) = self.lines.next() else {
                self.done = true;
                return Ok(None);
            };
            self.line_no += 1;
            let line = line.map_err(|source| IngestError::Io { path: self.path.clone(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord =
                serde_json::from_str(&line).map_err(|e| IngestError::Parse { line: self.line_no, message: e.to_string() })?;
            if let Some(prev) = self.prev_ts {
                if rec.ts_ms <= prev {
                    return Err(IngestError::NonMonotonicTimestamp { line: self.line_no, ts_ms: rec.ts_ms, prev_ms: prev });
                }
            }
            self.prev_ts = Some(rec.ts_ms);
            return self.to_frame(rec).map(Some);
        }
    }
}

/// Writes `frames` as a manifest at `path`. Pixel buffers go to
/// `f{index:06}.rgb` files beside it.
pub fn write_manifest(path: impl AsRef<Path>, frames: &[Frame]) -> Result<(), IngestError> {
    let path = path.as_ref();
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| IngestError::Io { path: p, source }
    };
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = BufWriter::new(File::create(path).map_err(io(path))?);
    for (i, f) in frames.iter().enumerate() {
        let pixels_file = match f.pixels() {
            Some(px) => {
                let name = format!("f{i:06}.rgb");
                let p = dir.join(&name);
                std::fs::write(&p, px).map_err(io(&p))?;
                Some(name)
            }
            None => None,
        };
        let rec = ManifestRecord {
            stream_id: f.stream_id(),
            ts_ms: f.ts_ms(),
            iframe: f.iframe(),
            width: f.width(),
            height: f.height(),
            pixels_file,
            histogram: f.histogram().map(|h| h.bins().to_vec()),
            annotations: f
                .annotations()
                .iter()
                .map(|a| ManifestAnnotation { label: a.label.clone(), score: a.base_score, bbox: a.bbox.map(|b| [b.x, b.y, b.w, b.h]) })
                .collect(),
        };
        let line = serde_json::to_string(&rec).expect("manifest records always serialize");
        writeln!(out, "{line}").map_err(io(path))?;
    }
    out.flush().map_err(io(path))
}

/// How fast scene content drifts from frame to frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionProfile {
    /// Every frame identical.
    Static,
    #[default]
    Slow,
    Continuous,
    /// Slow at the start, continuous by the end.
    Increasing,
    /// Continuous at the start, slow by the end.
    Decreasing,
}

const SLOW_SIGMA: f64 = 0.1;
const FAST_SIGMA: f64 = 3.0;

impl MotionProfile {
    /// Histogram random-walk step size at fraction `t` of the scenario.
    pub fn sigma(self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match self {
            MotionProfile::Static => 0.0,
            MotionProfile::Slow => SLOW_SIGMA,
            MotionProfile::Continuous => FAST_SIGMA,
            MotionProfile::Increasing => SLOW_SIGMA + (FAST_SIGMA - SLOW_SIGMA) * t,
            MotionProfile::Decreasing => FAST_SIGMA - (FAST_SIGMA - SLOW_SIGMA) * t,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MotionProfile::Static => "static",
            MotionProfile::Slow => "slow",
            MotionProfile::Continuous => "continuous",
            MotionProfile::Increasing => "increasing",
            MotionProfile::Decreasing => "decreasing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub const ALL: [MotionProfile; 5] =
        [MotionProfile::Static, MotionProfile::Slow, MotionProfile::Continuous, MotionProfile::Increasing, MotionProfile::Decreasing];
}

/// One object's presence in the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTimeline {
    pub label: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub score: f64,
    /// Per-frame uniform jitter applied to `score`.
    #[serde(default)]
    pub score_jitter: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub stream_id: u64,
    pub duration_s: f64,
    pub fps: u32,
    pub resolution: Resolution,
    pub motion: MotionProfile,
    /// Frames between I-frames; `None` disables them.
    pub iframe_interval: Option<u32>,
    /// Render RGB pixels instead of carrying only a histogram.
    pub render_pixels: bool,
    pub histogram: HistogramConfig,
    pub objects: Vec<ObjectTimeline>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            stream_id: 0,
            duration_s: 10.0,
            fps: 30,
            resolution: Resolution::new(1920, 1080),
            motion: MotionProfile::Slow,
            iframe_interval: None,
            render_pixels: false,
            histogram: HistogramConfig::default(),
            objects: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::Scenario(m.to_string()));
        if self.fps == 0 || self.fps > 1000 {
            return bad("fps must be between 1 and 1000");
        }
        if self.duration_s.is_nan() || self.duration_s <= 0.0 {
            return bad("duration_s must be positive");
        }
        if self.resolution.width == 0 || self.resolution.height == 0 {
            return bad("resolution must be non-zero");
        }
        if self.iframe_interval == Some(0) {
            return bad("iframe_interval must be positive");
        }
        for o in &self.objects {
            if o.end_ms < o.start_ms || !(0.0..=1.0).contains(&o.score) {
                return bad("object timelines need start_ms <= end_ms and score in [0, 1]");
            }
        }
        Ok(())
    }

    /// A random but reproducible scenario: random motion, I-frame cadence,
    /// and a handful of car/person appearances.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7_a110);
        let motion = MotionProfile::ALL[rng.random_range(1..MotionProfile::ALL.len())];
        let iframe_interval = if rng.random_bool(0.5) { Some(rng.random_range(30..=150)) } else { None };
        let duration_s = 10.0;
        let span = (duration_s * 1000.0) as u64;
        let resolution = Resolution::new(1920, 1080);
        let objects = (0..rng.random_range(2..=6))
            .map(|_| {
                let label = if rng.random_bool(0.5) { "car" } else { "person" };
                let start_ms = rng.random_range(0..span - 500);
                let end_ms = (start_ms + rng.random_range(300..3000)).min(span);
                let (w, h) = (rng.random_range(50.0..600.0), rng.random_range(50.0..400.0));
                let bbox = BBox::new(
                    rng.random_range(0.0..resolution.width as f64 - w),
                    rng.random_range(0.0..resolution.height as f64 - h),
                    w,
                    h,
                );
                ObjectTimeline {
                    label: label.to_string(),
                    start_ms,
                    end_ms,
                    score: rng.random_range(0.3..0.95),
                    score_jitter: 0.05,
                    bbox: Some(bbox),
                }
            })
            .collect();
        Self { duration_s, motion, iframe_interval, objects, ..Self::default() }
    }
}

pub struct SyntheticStream {
    cfg: ScenarioConfig,
    rng: ChaCha8Rng,
    bins: Vec<f64>,
    phase: f64,
    index: usize,
    total: usize,
}

impl SyntheticStream {
    pub fn new(cfg: ScenarioConfig, seed: u64) -> Result<Self, IngestError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bins = (0..cfg.histogram.bin_count()).map(|_| rng.random_range(0.0..100.0)).collect();
        let total = cfg.frame_count();
        Ok(Self { cfg, rng, bins, phase: 0.0, index: 0, total })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    /// Collects the whole stream.
    pub fn frames(cfg: ScenarioConfig, seed: u64) -> Result<Vec<Frame>, IngestError> {
        let mut s = Self::new(cfg, seed)?;
        let mut out = Vec::with_capacity(s.total);
        while let Some(f) = s.next_frame()? {
            out.push(f);
        }
        Ok(out)
    }

    fn render(&self, annotations: &[Annotation]) -> Vec<u8> {
        let (w, h) = (self.cfg.resolution.width as usize, self.cfg.resolution.height as usize);
        let mut px = vec![0u8; w * h * 3];
        let shift = self.phase.rem_euclid(256.0);
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) * 3;
                px[i] = ((x * 255 / w.max(1)) as f64 + shift) as u64 as u8;
                px[i + 1] = ((y * 255 / h.max(1)) as f64 + shift * 0.5) as u64 as u8;
                px[i + 2] = (128.0 + shift * 0.25) as u64 as u8;
            }
        }
        for a in annotations {
            let Some(b) = a.bbox else { continue };
            let colour = label_colour(&a.label);
            let (x0, y0) = (b.x as usize, b.y as usize);
            let (x1, y1) = (((b.x + b.w) as usize).min(w), ((b.y + b.h) as usize).min(h));
            for y in y0..y1 {
                for x in x0..x1 {
                    px[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&colour);
                }
            }
        }
        px
    }
}

fn label_colour(label: &str) -> [u8; 3] {
    let h = label.bytes().fold(2166136261u32, |h, b| (h ^ b as u32).wrapping_mul(16777619));
    [h as u8, (h >> 8) as u8, (h >> 16) as u8]
}

impl FrameSource for SyntheticStream {
    fn next_frame(&mut self) -> Result<Option<Frame>, IngestError> {
        if self.index >= self.total {
            return Ok(None);
        }
        let i = self.index;
        self.index += 1;
        let ts_ms = i as u64 * 1000 / self.cfg.fps as u64;
        let sigma = self.cfg.motion.sigma(i as f64 / self.total.max(1) as f64);
        if i > 0 && sigma > 0.0 {
            let step = Normal::new(0.0, sigma).expect("sigma is finite and positive");
            for b in &mut self.bins {
                *b = (*b + step.sample(&mut self.rng)).max(0.0);
            }
            self.phase += step.sample(&mut self.rng);
        }
        let iframe = self.cfg.iframe_interval.is_some_and(|n| i.is_multiple_of(n as usize));
        let mut annotations = Vec::new();
        for o in &self.cfg.objects {
            if ts_ms < o.start_ms || ts_ms >= o.end_ms {
                continue;
            }
            let jitter = if o.score_jitter > 0.0 { self.rng.random_range(-o.score_jitter..=o.score_jitter) } else { 0.0 };
            let bbox = o.bbox.map(|b| {
                let (w, h) = (self.cfg.resolution.width as f64, self.cfg.resolution.height as f64);
                let x = b.x.clamp(0.0, w);
                let y = b.y.clamp(0.0, h);
                BBox::new(x, y, b.w.min(w - x), b.h.min(h - y))
            });
            let a = Annotation::new(o.label.clone(), (o.score + jitter).clamp(0.0, 1.0), bbox)
                .map_err(|e| IngestError::Scenario(e.to_string()))?;
            annotations.push(a);
        }
        let res = self.cfg.resolution;
        let frame = if self.cfg.render_pixels {
            let px = self.render(&annotations);
            Frame::new(self.cfg.stream_id, ts_ms, res.width, res.height, Some(px), None, iframe, annotations)
        } else {
            let hist = Histogram::new(self.bins.clone()).expect("walk keeps bins non-negative");
            Frame::surrogate(self.cfg.stream_id, ts_ms, res, hist, iframe, annotations)
        }
        .map_err(|e| IngestError::Scenario(e.to_string()))?;
        Ok(Some(frame))
    }

    fn len_hint(&self) -> Option<usize> {
        Some(self.total)
    }
}
