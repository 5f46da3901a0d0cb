//! Edge-side window: RANGE accumulation on the first unit, SLIDE-sized units
//! afterwards, adaptive micro-batching inside each unit, and the eager filter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::{correlation, hsv_histogram, HistogramConfig, SimilarityError};
use crate::types::{Frame, Histogram, MicroBatch, SplitReason, WindowSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EdgeError {
    #[error("frame at {ts_ms} ms arrived after {last_ms} ms")]
    OutOfOrderFrame { ts_ms: u64, last_ms: u64 },
    #[error("frame belongs to stream {got}, window serves stream {expected}")]
    WrongStream { expected: u64, got: u64 },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchingConfig {
    pub mb_max: usize,
    pub similarity_threshold: f64,
    pub fps: u32,
    pub histogram: HistogramConfig,
}

impl Default for BatchingConfig {
    fn default() -> Self {
        Self { mb_max: 70, similarity_threshold: 0.98, fps: 30, histogram: HistogramConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Initializing,
    Sliding,
}

/// A micro-batch plus the window bookkeeping the utility score needs.
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedBatch {
    pub batch: MicroBatch,
    /// Frames of the unit ingested before this batch's keyframe.
    pub frames_before: usize,
    /// Frame budget of the unit (unit length x fps).
    pub window_size_frames: usize,
    pub unit_start_ms: u64,
    pub unit_end_ms: u64,
    /// Virtual time the batch was closed.
    pub emitted_at_ms: u64,
}

impl EmittedBatch {
    pub fn window_remaining(&self) -> usize {
        self.window_size_frames.saturating_sub(self.frames_before)
    }
}

#[derive(Debug, Clone)]
pub struct EdgeWindow {
    spec: WindowSpec,
    cfg: BatchingConfig,
    stream_id: Option<u64>,
    origin_ms: Option<u64>,
    unit_id: u64,
    last_ts: Option<u64>,
    frames_processed: usize,
    open: Vec<Frame>,
    open_started_at: usize,
    reference: Option<Histogram>,
    next_batch_id: u64,
}

impl EdgeWindow {
    pub fn new(spec: WindowSpec, cfg: BatchingConfig) -> Self {
        Self {
            spec,
            cfg,
            stream_id: None,
            origin_ms: None,
            unit_id: 0,
            last_ts: None,
            frames_processed: 0,
            open: Vec::new(),
            open_started_at: 0,
            reference: None,
            next_batch_id: 0,
        }
    }

    /// Pins the unit schedule to `origin_ms` instead of the first frame's timestamp.
    pub fn anchored(mut self, origin_ms: u64) -> Self {
        self.origin_ms = Some(origin_ms);
        self
    }

    pub fn phase(&self) -> Phase {
        if self.unit_id == 0 {
            Phase::Initializing
        } else {
            Phase::Sliding
        }
    }

    pub fn unit_id(&self) -> u64 {
        self.unit_id
    }

    pub fn origin_ms(&self) -> Option<u64> {
        self.origin_ms
    }

    pub fn unit_end_ms(&self) -> Option<u64> {
        self.origin_ms.map(|o| self.spec.unit_end(o, self.unit_id))
    }

    pub fn frames_processed_in_window(&self) -> usize {
        self.frames_processed
    }

    pub fn open_len(&self) -> usize {
        self.open.len()
    }

    pub fn window_size_frames(&self) -> usize {
        let len_ms = if self.unit_id == 0 { self.spec.range_ms() } else { self.spec.slide_ms() };
        (len_ms * self.cfg.fps as u64).div_ceil(1000) as usize
    }

    fn emit(&mut self, reason: SplitReason, at_ms: u64) -> Option<EmittedBatch> {
        if self.open.is_empty() {
            return None;
        }
        let frames = std::mem::take(&mut self.open);
        let origin = self.origin_ms.unwrap_or(frames[0].ts_ms());
        let batch = MicroBatch::new(self.next_batch_id, self.stream_id.unwrap_or(0), self.unit_id, frames, reason, self.cfg.mb_max)
            .expect("open batch respects size and ordering invariants");
        self.next_batch_id += 1;
        self.reference = None;
        let window_size_frames = self.window_size_frames().max(self.frames_processed);
        Some(EmittedBatch {
            batch,
            frames_before: self.open_started_at,
            window_size_frames,
            unit_start_ms: self.spec.unit_start(origin, self.unit_id),
            unit_end_ms: self.spec.unit_end(origin, self.unit_id),
            emitted_at_ms: at_ms,
        })
    }

    /// Closes the current unit if `now_ms` has reached its end. The open batch
    /// is flushed with [`SplitReason::SlideEnd`]; an empty one emits nothing.
    pub fn slide_boundary(&mut self, now_ms: u64) -> Option<EmittedBatch> {
        let end = self.unit_end_ms()?;
        if now_ms < end {
            return None;
        }
        let out = self.emit(SplitReason::SlideEnd, end);
        self.unit_id += 1;
        self.frames_processed = 0;
        out
    }

    /// Ingests one frame. Any unit boundaries the frame has crossed are closed
    /// first, then the batching rule runs against the open batch's reference.
    pub fn advance(&mut self, frame: Frame) -> Result<Vec<EmittedBatch>, EdgeError> {
        if let Some(last) = self.last_ts {
            if frame.ts_ms() <= last {
                return Err(EdgeError::OutOfOrderFrame { ts_ms: frame.ts_ms(), last_ms: last });
            }
        }
        match self.stream_id {
            Some(s) if s != frame.stream_id() => return Err(EdgeError::WrongStream { expected: s, got: frame.stream_id() }),
            _ => self.stream_id = Some(frame.stream_id()),
        }
        let hist = hsv_histogram(&frame, self.cfg.histogram)?;
        self.last_ts = Some(frame.ts_ms());
        self.origin_ms.get_or_insert(frame.ts_ms());

        let mut out = Vec::new();
        while let Some(end) = self.unit_end_ms() {
            if frame.ts_ms() < end {
                break;
            }
            out.extend(self.slide_boundary(end));
        }

        if let Some(reference) = &self.reference {
            let reason = if frame.iframe() {
                Some(SplitReason::Iframe)
            } else if correlation(reference, &hist)? <= self.cfg.similarity_threshold {
                Some(SplitReason::SimilarityBreak)
            } else {
                None
            };
            if let Some(r) = reason {
                out.extend(self.emit(r, frame.ts_ms()));
            }
        }
        if self.open.is_empty() {
            self.reference = Some(hist);
            self.open_started_at = self.frames_processed;
        }
        let ts = frame.ts_ms();
        self.open.push(frame);
        self.frames_processed += 1;
        if self.open.len() >= self.cfg.mb_max {
            out.extend(self.emit(SplitReason::MaxSize, ts));
        }
        Ok(out)
    }

    /// Flushes whatever is open at end of stream.
    pub fn finish(&mut self) -> Option<EmittedBatch> {
        let at = self.last_ts.unwrap_or(0);
        self.emit(SplitReason::SlideEnd, at)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Forward,
    Drop,
}

/// Drops consecutive max-size batches after the first one in a run.
#[derive(Debug, Clone, Default)]
pub struct EagerFilter {
    mb_max: usize,
    consecutive_max_batches: usize,
}

impl EagerFilter {
    pub fn new(mb_max: usize) -> Self {
        Self { mb_max, consecutive_max_batches: 0 }
    }

    pub fn consecutive_max_batches(&self) -> usize {
        self.consecutive_max_batches
    }

    pub fn decide(&mut self, batch: &MicroBatch) -> Decision {
        if batch.len() == self.mb_max && batch.split_reason == SplitReason::MaxSize {
            self.consecutive_max_batches += 1;
            if self.consecutive_max_batches == 1 {
                Decision::Forward
            } else {
                Decision::Drop
            }
        } else {
            self.consecutive_max_batches = 0;
            Decision::Forward
        }
    }
}
