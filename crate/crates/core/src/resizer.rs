//! Query-aware keyframe resolution selection and whole-batch resizing.
//!
//! The selector looks for the smallest candidate resolution at which every
//! query object the classifier finds at the largest candidate still ranks in
//! the query's top-k. The first keyframe (and any keyframe whose predecessor
//! landed in the upper half of the candidate list) is searched by bisection;
//! otherwise the search walks from the previous keyframe's resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::EdgeClassifier;
use crate::par::{self, Parallelism};
use crate::types::{Annotation, Frame, MicroBatch, Query, RankedScores, Resolution};

pub const GUARD_THRESHOLD: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolutionSetError {
    #[error("candidate resolution set is empty")]
    Empty,
    #[error("candidate {0} is not 16:9")]
    AspectRatio(Resolution),
    #[error("candidate pixel counts must strictly increase")]
    NotIncreasing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Resolution>", into = "Vec<Resolution>")]
pub struct CandidateResolutions(Vec<Resolution>);

impl CandidateResolutions {
    pub fn new(list: Vec<Resolution>) -> Result<Self, ResolutionSetError> {
        if list.is_empty() {
            return Err(ResolutionSetError::Empty);
        }
        if let Some(r) = list.iter().find(|r| !r.is_16_9() || r.width == 0) {
            return Err(ResolutionSetError::AspectRatio(*r));
        }
        if list.windows(2).any(|w| w[0].pixels() >= w[1].pixels()) {
            return Err(ResolutionSetError::NotIncreasing);
        }
        Ok(Self(list))
    }

    pub fn as_slice(&self) -> &[Resolution] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> Resolution {
        self.0[0]
    }

    pub fn max(&self) -> Resolution {
        self.0[self.0.len() - 1]
    }

    /// Drops candidates larger than `native` in either dimension. If nothing
    /// is left the smallest candidate is kept.
    pub fn capped_at(&self, native: Resolution) -> Self {
        let kept: Vec<_> = self.0.iter().copied().filter(|r| r.width <= native.width && r.height <= native.height).collect();
        if kept.is_empty() {
            Self(vec![self.0[0]])
        } else {
            Self(kept)
        }
    }
}

impl Default for CandidateResolutions {
    fn default() -> Self {
        Self(vec![
            Resolution::new(288, 162),
            Resolution::new(320, 180),
            Resolution::new(480, 270),
            Resolution::new(640, 360),
            Resolution::new(960, 540),
        ])
    }
}

impl TryFrom<Vec<Resolution>> for CandidateResolutions {
    type Error = ResolutionSetError;

    fn try_from(v: Vec<Resolution>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<CandidateResolutions> for Vec<Resolution> {
    fn from(c: CandidateResolutions) -> Self {
        c.0
    }
}

/// True when the query objects inside top-k sum to at least the threshold and
/// each consecutive score ratio (lower rank over higher rank) is at least the
/// threshold too.
pub fn multi_object_guard(scores: &RankedScores, q: &Query) -> bool {
    guard_with(scores, q, GUARD_THRESHOLD)
}

pub fn guard_with(scores: &RankedScores, q: &Query, threshold: f64) -> bool {
    let hits: Vec<f64> = scores.query_hits(q).map(|c| c.score).collect();
    let sum: f64 = hits.iter().sum();
    sum >= threshold
        && hits.windows(2).all(|w| {
            let ratio = if w[0] > 0.0 { w[1] / w[0] } else { 0.0 };
            ratio >= threshold
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub resolution: Resolution,
    pub index: usize,
    /// Classifier output on the keyframe at the chosen resolution.
    pub scores: RankedScores,
    pub probes: usize,
}

/// Stateful selector that remembers the previous keyframe's resolution.
#[derive(Debug, Clone)]
pub struct Resizer {
    crs: CandidateResolutions,
    guard_threshold: f64,
    prev: Option<usize>,
    total_probes: u64,
}

impl Resizer {
    pub fn new(crs: CandidateResolutions) -> Self {
        Self { crs, guard_threshold: GUARD_THRESHOLD, prev: None, total_probes: 0 }
    }

    pub fn with_guard_threshold(mut self, t: f64) -> Self {
        self.guard_threshold = t;
        self
    }

    pub fn candidates(&self) -> &CandidateResolutions {
        &self.crs
    }

    pub fn total_probes(&self) -> u64 {
        self.total_probes
    }

    pub fn select(&mut self, keyframe: &Frame, q: &Query, cls: &dyn EdgeClassifier) -> Selection {
        let list = self.crs.as_slice();
        let n = list.len();
        let mut memo: Vec<Option<RankedScores>> = vec![None; n];
        let mut probes = 0usize;
        let mut probe = |i: usize, memo: &mut Vec<Option<RankedScores>>| {
            if memo[i].is_none() {
                probes += 1;
                memo[i] = Some(cls.classify(keyframe, list[i]));
            }
        };

        probe(n - 1, &mut memo);
        let present: Vec<String> = memo[n - 1].as_ref().unwrap().query_hits(q).map(|c| c.label.clone()).collect();

        let threshold = self.guard_threshold;
        let satisfied =
            |s: &RankedScores| present.iter().all(|l| s.in_top_k(l, q.top_k)) && (present.len() < 2 || guard_with(s, q, threshold));

        let chosen = if present.is_empty() {
            0
        } else if !satisfied(memo[n - 1].as_ref().unwrap()) {
            n - 1
        } else {
            let mut sat = |i: usize, memo: &mut Vec<Option<RankedScores>>| {
                probe(i, memo);
                satisfied(memo[i].as_ref().unwrap())
            };
            match self.prev {
                Some(p) if p < n.div_ceil(2) => {
                    if sat(p, &mut memo) {
                        let mut i = p;
                        while i > 0 && sat(i - 1, &mut memo) {
                            i -= 1;
                        }
                        i
                    } else {
                        let mut i = p + 1;
                        while !sat(i, &mut memo) {
                            i += 1;
                        }
                        i
                    }
                }
                _ => {
                    let (mut lo, mut hi) = (0, n - 1);
                    while lo < hi {
                        let mid = (lo + hi) / 2;
                        if sat(mid, &mut memo) {
                            hi = mid;
                        } else {
                            lo = mid + 1;
                        }
                    }
                    hi
                }
            }
        };
        if memo[chosen].is_none() {
            probe(chosen, &mut memo);
        }
        self.prev = Some(chosen);
        self.total_probes += probes as u64;
        Selection { resolution: list[chosen], index: chosen, scores: memo[chosen].take().unwrap(), probes }
    }
}

/// One-shot selection with no history (bisection bootstrap).
pub fn select_resolution(keyframe: &Frame, q: &Query, crs: &CandidateResolutions, cls: &dyn EdgeClassifier) -> Resolution {
    Resizer::new(crs.clone()).select(keyframe, q, cls).resolution
}

fn bilinear(src: &[u8], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<u8> {
    let mut out = vec![0u8; dw * dh * 3];
    let (sx, sy) = (sw as f64 / dw as f64, sh as f64 / dh as f64);
    let axis = |d: usize, scale: f64, len: usize| {
        let f = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (f.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, f - i0 as f64)
    };
    let cols: Vec<_> = (0..dw).map(|x| axis(x, sx, sw)).collect();
    for y in 0..dh {
        let (y0, y1, wy) = axis(y, sy, sh);
        for (x, &(x0, x1, wx)) in cols.iter().enumerate() {
            for c in 0..3 {
                let p = |yy: usize, xx: usize| src[(yy * sw + xx) * 3 + c] as f64;
                let top = p(y0, x0) * (1.0 - wx) + p(y0, x1) * wx;
                let bot = p(y1, x0) * (1.0 - wx) + p(y1, x1) * wx;
                out[(y * dw + x) * 3 + c] = (top * (1.0 - wy) + bot * wy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Rescales one frame. Pixel buffers are resampled bilinearly; surrogate
/// frames only change their dimensions. Boxes are scaled to the new size.
pub fn resize_frame(frame: &Frame, res: Resolution) -> Frame {
    if frame.resolution() == res {
        return frame.clone();
    }
    let sx = res.width as f64 / frame.width() as f64;
    let sy = res.height as f64 / frame.height() as f64;
    let annotations: Vec<Annotation> = frame
        .annotations()
        .iter()
        .map(|a| {
            let bbox = a.bbox.map(|b| {
                let mut s = b.scaled(sx, sy);
                s.w = s.w.min(res.width as f64 - s.x).max(0.0);
                s.h = s.h.min(res.height as f64 - s.y).max(0.0);
                s
            });
            Annotation { label: a.label.clone(), base_score: a.base_score, bbox }
        })
        .collect();
    match frame.pixels() {
        Some(px) => {
            let out = bilinear(px, frame.width() as usize, frame.height() as usize, res.width as usize, res.height as usize);
            frame.with_payload(res, Some(out), None, annotations)
        }
        None => frame.with_payload(res, None, frame.histogram().cloned(), annotations),
    }
}

pub fn resize_batch(mb: &MicroBatch, res: Resolution) -> MicroBatch {
    resize_batch_with(mb, res, Parallelism::default())
}

pub fn resize_batch_with(mb: &MicroBatch, res: Resolution, mode: Parallelism) -> MicroBatch {
    if mb.resolution == res && mb.frames().iter().all(|f| f.resolution() == res) {
        return mb.clone();
    }
    let frames = par::map(mode, mb.frames(), |f| resize_frame(f, res));
    MicroBatch::from_parts(mb.batch_id, mb.stream_id, mb.unit_id, frames, res, mb.split_reason)
}
