//! Value types shared by every stage of the pipeline.
//!
//! All of these are immutable once built; constructors check the invariants
//! and hand back a [`TypeError`] when they do not hold.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("pixel buffer has {actual} bytes, expected {expected} for {width}x{height} RGB8")]
    PixelLength { width: u32, height: u32, expected: usize, actual: usize },
    #[error("frame carries neither pixels nor a histogram")]
    MissingPayload,
    #[error("frame dimensions must be non-zero")]
    ZeroDimension,
    #[error("annotation score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("bounding box {0:?} lies outside a {1}x{2} frame")]
    BBoxOutOfBounds(BBox, u32, u32),
    #[error("histogram bins must be finite and non-negative")]
    InvalidHistogram,
    #[error("window range {range_ms} ms is shorter than slide {slide_ms} ms")]
    SamplingWindow { range_ms: u64, slide_ms: u64 },
    #[error("window slide must be positive")]
    ZeroSlide,
    #[error("micro-batch must hold between 1 and {max} frames, got {len}")]
    BatchSize { len: usize, max: usize },
    #[error("micro-batch timestamps are not strictly increasing")]
    BatchOrder,
    #[error("top-k must be at least 1")]
    ZeroTopK,
}

/// Axis-aligned box in pixel coordinates of the frame that carries it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        ok(self.x)
            && ok(self.y)
            && ok(self.w)
            && ok(self.h)
            && self.x + self.w <= width as f64 + 1e-9
            && self.y + self.h <= height as f64 + 1e-9
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self { x: self.x * sx, y: self.y * sy, w: self.w * sx, h: self.h * sy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub base_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

impl Annotation {
    pub fn new(label: impl Into<String>, base_score: f64, bbox: Option<BBox>) -> Result<Self, TypeError> {
        if !(0.0..=1.0).contains(&base_score) {
            return Err(TypeError::ScoreOutOfRange(base_score));
        }
        Ok(Self { label: label.into(), base_score, bbox })
    }
}

/// Colour histogram; the default layout is hue bins followed by saturation bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Histogram {
    bins: Vec<f64>,
}

impl Histogram {
    pub fn new(bins: Vec<f64>) -> Result<Self, TypeError> {
        if bins.is_empty() || bins.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(TypeError::InvalidHistogram);
        }
        Ok(Self { bins })
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }
}

impl TryFrom<Vec<f64>> for Histogram {
    type Error = TypeError;

    fn try_from(bins: Vec<f64>) -> Result<Self, Self::Error> {
        Histogram::new(bins)
    }
}

impl From<Histogram> for Vec<f64> {
    fn from(h: Histogram) -> Self {
        h.bins
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn pixels(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn rgb_bytes(&self) -> u64 {
        self.pixels() * 3
    }

    pub fn is_16_9(&self) -> bool {
        self.width as u64 * 9 == self.height as u64 * 16
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// One timestamped video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    stream_id: u64,
    ts_ms: u64,
    width: u32,
    height: u32,
    pixels: Option<Vec<u8>>,
    histogram: Option<Histogram>,
    iframe: bool,
    annotations: Vec<Annotation>,
}

impl Frame {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        stream_id: u64,
        ts_ms: u64,
        width: u32,
        height: u32,
        pixels: Option<Vec<u8>>,
        histogram: Option<Histogram>,
        iframe: bool,
        annotations: Vec<Annotation>,
    ) -> Result<Self, TypeError> {
        if width == 0 || height == 0 {
            return Err(TypeError::ZeroDimension);
        }
        if pixels.is_none() && histogram.is_none() {
            return Err(TypeError::MissingPayload);
        }
        if let Some(p) = &pixels {
            let expected = width as usize * height as usize * 3;
            if p.len() != expected {
                return Err(TypeError::PixelLength { width, height, expected, actual: p.len() });
            }
        }
        for a in &annotations {
            if !(0.0..=1.0).contains(&a.base_score) {
                return Err(TypeError::ScoreOutOfRange(a.base_score));
            }
            if let Some(b) = a.bbox {
                if !b.fits_within(width, height) {
                    return Err(TypeError::BBoxOutOfBounds(b, width, height));
                }
            }
        }
        Ok(Self { stream_id, ts_ms, width, height, pixels, histogram, iframe, annotations })
    }

    /// Frame backed only by a histogram surrogate.
    pub fn surrogate(
        stream_id: u64,
        ts_ms: u64,
        res: Resolution,
        histogram: Histogram,
        iframe: bool,
        annotations: Vec<Annotation>,
    ) -> Result<Self, TypeError> {
        Self::new(stream_id, ts_ms, res.width, res.height, None, Some(histogram), iframe, annotations)
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn ts_ms(&self) -> u64 {
        self.ts_ms
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.width, self.height)
    }

    pub fn pixels(&self) -> Option<&[u8]> {
        self.pixels.as_deref()
    }

    pub fn histogram(&self) -> Option<&Histogram> {
        self.histogram.as_ref()
    }

    pub fn iframe(&self) -> bool {
        self.iframe
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    /// Bytes this frame occupies in edge memory: the pixel buffer, or the
    /// nominal RGB8 size for surrogate frames.
    pub fn footprint_bytes(&self) -> u64 {
        self.resolution().rgb_bytes()
    }

    pub(crate) fn with_payload(
        &self,
        res: Resolution,
        pixels: Option<Vec<u8>>,
        histogram: Option<Histogram>,
        annotations: Vec<Annotation>,
    ) -> Self {
        Self {
            stream_id: self.stream_id,
            ts_ms: self.ts_ms,
            width: res.width,
            height: res.height,
            pixels,
            histogram,
            iframe: self.iframe,
            annotations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitReason {
    SlideEnd,
    Iframe,
    SimilarityBreak,
    MaxSize,
}

impl SplitReason {
    pub fn code(self) -> u8 {
        match self {
            SplitReason::SlideEnd => 0,
            SplitReason::Iframe => 1,
            SplitReason::SimilarityBreak => 2,
            SplitReason::MaxSize => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SplitReason::SlideEnd,
            1 => SplitReason::Iframe,
            2 => SplitReason::SimilarityBreak,
            3 => SplitReason::MaxSize,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitReason::SlideEnd => "slide_end",
            SplitReason::Iframe => "iframe",
            SplitReason::SimilarityBreak => "similarity_break",
            SplitReason::MaxSize => "max_size",
        }
    }
}

/// A contiguous run of similar frames; `frames[0]` is the keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroBatch {
    pub batch_id: u64,
    pub stream_id: u64,
    pub unit_id: u64,
    frames: Vec<Frame>,
    pub resolution: Resolution,
    pub split_reason: SplitReason,
}

impl MicroBatch {
    pub fn new(
        batch_id: u64,
        stream_id: u64,
        unit_id: u64,
        frames: Vec<Frame>,
        split_reason: SplitReason,
        mb_max: usize,
    ) -> Result<Self, TypeError> {
        if frames.is_empty() || frames.len() > mb_max {
            return Err(TypeError::BatchSize { len: frames.len(), max: mb_max });
        }
        if frames.windows(2).any(|w| w[0].ts_ms >= w[1].ts_ms) {
            return Err(TypeError::BatchOrder);
        }
        let resolution = frames[0].resolution();
        Ok(Self { batch_id, stream_id, unit_id, frames, resolution, split_reason })
    }

    /// Rebuilds a batch from parts already known to be valid (decoder, resizer).
    pub(crate) fn from_parts(
        batch_id: u64,
        stream_id: u64,
        unit_id: u64,
        frames: Vec<Frame>,
        resolution: Resolution,
        split_reason: SplitReason,
    ) -> Self {
        Self { batch_id, stream_id, unit_id, frames, resolution, split_reason }
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn keyframe(&self) -> &Frame {
        &self.frames[0]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first_ts(&self) -> u64 {
        self.frames[0].ts_ms
    }

    pub fn last_ts(&self) -> u64 {
        self.frames[self.frames.len() - 1].ts_ms
    }

    pub fn footprint_bytes(&self) -> u64 {
        self.frames.iter().map(Frame::footprint_bytes).sum()
    }

    /// Keeps the first `keep` frames. `keep` is clamped to `1..=len`.
    pub fn truncated(&self, keep: usize) -> MicroBatch {
        let keep = keep.clamp(1, self.frames.len());
        let mut out = self.clone();
        out.frames.truncate(keep);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKind {
    Sliding,
    Tumbling,
}

/// Time-based window. Stored in integer milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    range_ms: u64,
    slide_ms: u64,
}

impl WindowSpec {
    pub fn from_millis(range_ms: u64, slide_ms: u64) -> Result<Self, TypeError> {
        if slide_ms == 0 {
            return Err(TypeError::ZeroSlide);
        }
        if range_ms < slide_ms {
            return Err(TypeError::SamplingWindow { range_ms, slide_ms });
        }
        Ok(Self { range_ms, slide_ms })
    }

    pub fn from_secs(range_s: u64, slide_s: u64) -> Result<Self, TypeError> {
        Self::from_millis(range_s.saturating_mul(1000), slide_s.saturating_mul(1000))
    }

    pub fn range_ms(&self) -> u64 {
        self.range_ms
    }

    pub fn slide_ms(&self) -> u64 {
        self.slide_ms
    }

    pub fn kind(&self) -> WindowKind {
        if self.range_ms > self.slide_ms {
            WindowKind::Sliding
        } else {
            WindowKind::Tumbling
        }
    }

    /// End (exclusive) of processing unit `unit` for a stream anchored at
    /// `origin_ms`: the first unit spans RANGE, every later one SLIDE.
    pub fn unit_end(&self, origin_ms: u64, unit: u64) -> u64 {
        origin_ms + self.range_ms + unit * self.slide_ms
    }

    pub fn unit_start(&self, origin_ms: u64, unit: u64) -> u64 {
        if unit == 0 {
            origin_ms
        } else {
            self.unit_end(origin_ms, unit - 1)
        }
    }

    /// Processing unit containing `ts_ms`.
    pub fn unit_of(&self, origin_ms: u64, ts_ms: u64) -> u64 {
        let first_end = origin_ms + self.range_ms;
        if ts_ms < first_end {
            0
        } else {
            (ts_ms - first_end) / self.slide_ms + 1
        }
    }

    /// Bounds `[start, end)` of the full window evaluated at the end of `unit`.
    pub fn window_bounds(&self, origin_ms: u64, unit: u64) -> (u64, u64) {
        let start = origin_ms + unit * self.slide_ms;
        (start, start + self.range_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    Object(String),
    Conj(String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub pattern: Pattern,
    pub top_k: usize,
    pub window: WindowSpec,
    pub cpu_bound_pct: Option<f64>,
    pub mem_bound_pct: Option<f64>,
}

impl Query {
    pub fn new(pattern: Pattern, top_k: usize, window: WindowSpec) -> Result<Self, TypeError> {
        if top_k == 0 {
            return Err(TypeError::ZeroTopK);
        }
        Ok(Self { pattern, top_k, window, cpu_bound_pct: None, mem_bound_pct: None })
    }

    pub fn with_bounds(mut self, cpu_pct: Option<f64>, mem_pct: Option<f64>) -> Self {
        self.cpu_bound_pct = cpu_pct;
        self.mem_bound_pct = mem_pct;
        self
    }

    /// Distinct query objects, sorted.
    pub fn objects(&self) -> BTreeSet<&str> {
        match &self.pattern {
            Pattern::Object(l) => [l.as_str()].into_iter().collect(),
            Pattern::Conj(a, b) => [a.as_str(), b.as_str()].into_iter().collect(),
        }
    }

    pub fn has_object(&self, label: &str) -> bool {
        match &self.pattern {
            Pattern::Object(l) => l == label,
            Pattern::Conj(a, b) => a == label || b == label,
        }
    }

    pub fn has_resource_bounds(&self) -> bool {
        self.cpu_bound_pct.is_some() || self.mem_bound_pct.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub score: f64,
    pub rank: usize,
}

/// Classifier output ranked by descending score, ties by label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedScores(Vec<ClassScore>);

impl RankedScores {
    /// Ranks `(label, score)` pairs. Duplicate labels keep their best score.
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut best: std::collections::BTreeMap<String, f64> = Default::default();
        for (label, score) in pairs {
            let e = best.entry(label.into()).or_insert(f64::NEG_INFINITY);
            if score > *e {
                *e = score;
            }
        }
        let mut v: Vec<(String, f64)> = best.into_iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        RankedScores(v.into_iter().enumerate().map(|(i, (label, score))| ClassScore { label, score, rank: i + 1 }).collect())
    }

    pub fn as_slice(&self) -> &[ClassScore] {
        &self.0
    }

    pub fn get(&self, label: &str) -> Option<&ClassScore> {
        self.0.iter().find(|c| c.label == label)
    }

    pub fn in_top_k(&self, label: &str, k: usize) -> bool {
        self.get(label).is_some_and(|c| c.rank <= k)
    }

    /// Query objects that rank within the query's top-k, in rank order.
    pub fn query_hits<'a>(&'a self, q: &'a Query) -> impl Iterator<Item = &'a ClassScore> + 'a {
        self.0.iter().filter(move |c| c.rank <= q.top_k && q.has_object(&c.label))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    pub bbox: Option<BBox>,
    pub ts_ms: u64,
}
