//! Lazy filtering: the per-window partial-match cache, the micro-batch
//! utility score, and dual-bound resource-aware frame dropping.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edge::{Decision, EmittedBatch};
use crate::types::{MicroBatch, Query, RankedScores};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterError {
    #[error("remaining window size is zero")]
    ZeroRemaining,
    #[error("window size is zero")]
    ZeroWindow,
}

/// Best accuracy seen per query object in the current window unit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialMatchCache {
    unit_id: Option<u64>,
    best: BTreeMap<String, f64>,
}

impl PartialMatchCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clears the cache when `unit_id` differs from the unit it was filled in.
    pub fn begin_window(&mut self, unit_id: u64) {
        if self.unit_id != Some(unit_id) {
            self.best.clear();
            self.unit_id = Some(unit_id);
        }
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.best.get(label).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> {
        self.best.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn is_empty(&self) -> bool {
        self.best.is_empty()
    }
}

/// Drops batches whose keyframe shows no query object in top-k, or whose
/// query objects do not beat what this window has already forwarded.
/// Only slots that improve are updated.
pub fn cache_filter(mb: &MicroBatch, scores: &RankedScores, cache: &mut PartialMatchCache, q: &Query) -> Decision {
    cache.begin_window(mb.unit_id);
    let mut forward = false;
    let mut any = false;
    for hit in scores.query_hits(q) {
        any = true;
        let improved = match cache.best.get(&hit.label) {
            None => true,
            Some(&prev) => hit.score > prev,
        };
        if improved {
            cache.best.insert(hit.label.clone(), hit.score);
            forward = true;
        }
    }
    if any && forward {
        Decision::Forward
    } else {
        Decision::Drop
    }
}

/// Sum of score / rank over the query objects inside top-k.
pub fn mb_accuracy(scores: &RankedScores, q: &Query) -> f64 {
    scores.query_hits(q).fold(0.0, |acc, c| acc + c.score / c.rank as f64)
}

/// `1 - frames_processed / window_size`, clamped to [0, 1].
pub fn mb_rpi(frames_processed: usize, window_size: usize) -> Result<f64, FilterError> {
    if window_size == 0 {
        return Err(FilterError::ZeroWindow);
    }
    Ok((1.0 - frames_processed as f64 / window_size as f64).clamp(0.0, 1.0))
}

/// `1 - mb_size / window_remaining`, clamped to [0, 1].
pub fn mb_win_remain(mb_size: usize, window_remaining: usize) -> Result<f64, FilterError> {
    if window_remaining == 0 {
        return Err(FilterError::ZeroRemaining);
    }
    Ok((1.0 - mb_size as f64 / window_remaining as f64).clamp(0.0, 1.0))
}

/// Normalized Shannon entropy (bits) of `(a, b) / (a + b)`. Zero when either
/// side is non-positive.
pub fn entropy_combine(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let p = a / (a + b);
    let q = b / (a + b);
    (-(p * p.log2() + q * q.log2())).clamp(0.0, 1.0)
}

/// The combination as literally printed: `(a·(-log2 a) + b·(-log2 b)) /
/// ((-log2 a) + (-log2 b))`. Kept for comparison with [`entropy_combine`].
pub fn literal_combine(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let (wa, wb) = (-a.log2(), -b.log2());
    if wa + wb <= 0.0 {
        return 1.0;
    }
    ((a * wa + b * wb) / (wa + wb)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMode {
    #[default]
    Entropy,
    Literal,
}

impl UtilityMode {
    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            UtilityMode::Entropy => entropy_combine(a, b),
            UtilityMode::Literal => literal_combine(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilityBreakdown {
    pub mb_accuracy: f64,
    pub omega_t: f64,
    pub mb_rpi: f64,
    pub mb_win_remain: f64,
    pub mb_position_size: f64,
    pub mb_utility: f64,
}

/// Where a batch sits inside its window unit, in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPosition {
    pub frames_before: usize,
    pub window_size: usize,
    pub batch_len: usize,
}

impl From<&EmittedBatch> for WindowPosition {
    fn from(e: &EmittedBatch) -> Self {
        Self { frames_before: e.frames_before, window_size: e.window_size_frames, batch_len: e.batch.len() }
    }
}

pub fn mb_utility(pos: WindowPosition, scores: &RankedScores, q: &Query, mode: UtilityMode) -> Result<UtilityBreakdown, FilterError> {
    let rpi = mb_rpi(pos.frames_before, pos.window_size)?;
    let remaining = pos.window_size.saturating_sub(pos.frames_before);
    let win_remain = mb_win_remain(pos.batch_len, remaining)?;
    let accuracy = mb_accuracy(scores, q).min(1.0);
    let position_size = mode.combine(rpi, win_remain);
    Ok(UtilityBreakdown {
        mb_accuracy: accuracy,
        omega_t: (pos.frames_before as f64 / pos.window_size as f64).min(1.0),
        mb_rpi: rpi,
        mb_win_remain: win_remain,
        mb_position_size: position_size,
        mb_utility: mode.combine(accuracy, position_size),
    })
}

/// Simulated edge resources. Memory counts live buffered frame bytes; CPU
/// sums stage costs over a rolling one-second window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceMeters {
    pub mem_bytes_live: u64,
    pub mem_capacity: u64,
    pub cpu_capacity_ms: f64,
    /// CPU time a frame would still cost downstream; dropping it saves this.
    pub per_frame_cpu_ms: f64,
    now_ms: u64,
    cpu_events: VecDeque<(u64, f64)>,
}

pub const CPU_WINDOW_MS: u64 = 1000;

impl ResourceMeters {
    pub fn new(mem_capacity: u64, cores: u32) -> Self {
        Self {
            mem_bytes_live: 0,
            mem_capacity,
            cpu_capacity_ms: 1000.0 * cores.max(1) as f64,
            per_frame_cpu_ms: 0.0,
            now_ms: 0,
            cpu_events: VecDeque::new(),
        }
    }

    pub fn with_per_frame_cpu_ms(mut self, ms: f64) -> Self {
        self.per_frame_cpu_ms = ms;
        self
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn cpu_busy_ms_window(&self) -> f64 {
        self.cpu_events.iter().map(|(_, c)| c).sum()
    }

    pub fn mem_util(&self) -> f64 {
        if self.mem_capacity == 0 {
            return 1.0;
        }
        (self.mem_bytes_live as f64 / self.mem_capacity as f64).clamp(0.0, 1.0)
    }

    pub fn cpu_util(&self) -> f64 {
        if self.cpu_capacity_ms <= 0.0 {
            return 1.0;
        }
        (self.cpu_busy_ms_window() / self.cpu_capacity_ms).clamp(0.0, 1.0)
    }

    fn advance_to(&mut self, at_ms: u64) {
        self.now_ms = self.now_ms.max(at_ms);
        while self.cpu_events.front().is_some_and(|(t, _)| t + CPU_WINDOW_MS <= self.now_ms) {
            self.cpu_events.pop_front();
        }
    }

    pub fn apply(&mut self, ev: MeterEvent) {
        self.advance_to(ev.at_ms);
        self.mem_bytes_live = (self.mem_bytes_live + ev.enqueue_bytes).saturating_sub(ev.dequeue_bytes);
        if ev.stage_cost_ms > 0.0 {
            self.cpu_events.push_back((self.now_ms, ev.stage_cost_ms));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeterEvent {
    pub at_ms: u64,
    pub enqueue_bytes: u64,
    pub dequeue_bytes: u64,
    pub stage_cost_ms: f64,
}

impl MeterEvent {
    pub fn enqueue(at_ms: u64, bytes: u64) -> Self {
        Self { at_ms, enqueue_bytes: bytes, ..Self::default() }
    }

    pub fn dequeue(at_ms: u64, bytes: u64) -> Self {
        Self { at_ms, dequeue_bytes: bytes, ..Self::default() }
    }

    pub fn cost(at_ms: u64, ms: f64) -> Self {
        Self { at_ms, stage_cost_ms: ms.max(0.0), ..Self::default() }
    }
}

pub fn update_meters(mut meters: ResourceMeters, event: MeterEvent) -> ResourceMeters {
    meters.apply(event);
    meters
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceOutcome {
    pub batch: MicroBatch,
    pub dropped_frames: usize,
}

/// Smallest number of frames the resource filter must keep.
pub fn keep_floor(utility: f64, len: usize) -> usize {
    let need = exact_ceil_mul(utility.clamp(0.0, 1.0), len as f64) as usize;
    need.clamp(1, len.max(1))
}

/// `ceil(a * b)` of the exact product. The rounded product can land on the
/// wrong side of an integer, so the fused remainder picks the neighbour.
fn exact_ceil_mul(a: f64, b: f64) -> f64 {
    let c = (a * b).ceil();
    if a.mul_add(b, -c) > 0.0 {
        c + 1.0
    } else if a.mul_add(b, -(c - 1.0)) <= 0.0 {
        c - 1.0
    } else {
        c
    }
}

/// Forwards the batch untouched if any configured bound is met. Otherwise
/// drops tail frames until the projected meters meet every configured bound
/// or the utility floor is reached. The keyframe is never dropped.
pub fn resource_filter(mb: &MicroBatch, utility: &UtilityBreakdown, q: &Query, meters: &ResourceMeters) -> ResourceOutcome {
    let unchanged = || ResourceOutcome { batch: mb.clone(), dropped_frames: 0 };
    let mem_bound = q.mem_bound_pct.map(|p| p / 100.0);
    let cpu_bound = q.cpu_bound_pct.map(|p| p / 100.0);
    if mem_bound.is_none() && cpu_bound.is_none() {
        return unchanged();
    }
    let mem_ok = |u: f64| mem_bound.is_none_or(|b| u <= b);
    let cpu_ok = |u: f64| cpu_bound.is_none_or(|b| u <= b);
    let (mem0, cpu0) = (meters.mem_util(), meters.cpu_util());
    if (mem_bound.is_some() && mem_ok(mem0)) || (cpu_bound.is_some() && cpu_ok(cpu0)) {
        return unchanged();
    }

    let floor = keep_floor(utility.mb_utility, mb.len());
    let mut kept = mb.len();
    let mut live = meters.mem_bytes_live as f64;
    let mut busy = meters.cpu_busy_ms_window();
    let project = |live: f64, busy: f64| {
        let m = if meters.mem_capacity == 0 { 1.0 } else { (live / meters.mem_capacity as f64).clamp(0.0, 1.0) };
        let c = if meters.cpu_capacity_ms <= 0.0 { 1.0 } else { (busy / meters.cpu_capacity_ms).clamp(0.0, 1.0) };
        mem_ok(m) && cpu_ok(c)
    };
    while kept > floor && !project(live, busy) {
        kept -= 1;
        live -= mb.frames()[kept].footprint_bytes() as f64;
        busy -= meters.per_frame_cpu_ms;
    }
    ResourceOutcome { batch: mb.truncated(kept), dropped_frames: mb.len() - kept }
}
