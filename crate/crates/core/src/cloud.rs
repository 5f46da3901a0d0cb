//! Cloud-side window state, the CEP matcher, and the spatial mapper.
//!
//! The cloud window keeps its own copy of stream state: detections are pushed
//! back as they arrive and popped from the front when the window slides, so
//! frames the edge filtered out simply leave gaps in an otherwise intact
//! window.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::edge::Phase;
use crate::types::{BBox, Detection, Pattern, Query, RankedScores, Resolution, WindowSpec};

#[derive(Debug, Clone)]
pub struct CloudWindow {
    spec: WindowSpec,
    origin_ms: Option<u64>,
    unit_id: u64,
    buffer: BTreeMap<u64, Vec<Detection>>,
    pending: BTreeMap<u64, Vec<Detection>>,
    stale: u64,
}

impl CloudWindow {
    pub fn new(spec: WindowSpec) -> Self {
        Self { spec, origin_ms: None, unit_id: 0, buffer: BTreeMap::new(), pending: BTreeMap::new(), stale: 0 }
    }

    pub fn anchored(mut self, origin_ms: u64) -> Self {
        self.origin_ms = Some(origin_ms);
        self
    }

    pub fn spec(&self) -> WindowSpec {
        self.spec
    }

    pub fn unit_id(&self) -> u64 {
        self.unit_id
    }

    pub fn phase(&self) -> Phase {
        if self.unit_id == 0 {
            Phase::Initializing
        } else {
            Phase::Sliding
        }
    }

    /// Current `[start, end)` bounds, once the origin is known.
    pub fn bounds(&self) -> Option<(u64, u64)> {
        self.origin_ms.map(|o| self.spec.window_bounds(o, self.unit_id))
    }

    /// Detections that arrived behind the window start and were discarded.
    pub fn stale_count(&self) -> u64 {
        self.stale
    }

    /// Admits detections. Timestamps before the window start are counted as
    /// stale; timestamps past its end wait for a later slide.
    pub fn ingest<I: IntoIterator<Item = Detection>>(&mut self, detections: I) {
        for d in detections {
            let origin = *self.origin_ms.get_or_insert(d.ts_ms);
            let (start, end) = self.spec.window_bounds(origin, self.unit_id);
            if d.ts_ms < start {
                self.stale += 1;
            } else if d.ts_ms < end {
                self.buffer.entry(d.ts_ms).or_default().push(d);
            } else {
                self.pending.entry(d.ts_ms).or_default().push(d);
            }
        }
    }

    /// Advances by one SLIDE: popfront evicts what fell out, pushback admits
    /// pending detections now inside the window.
    pub fn slide(&mut self) {
        self.unit_id += 1;
        let Some((start, end)) = self.bounds() else {
            return;
        };
        self.buffer = self.buffer.split_off(&start);
        let later = self.pending.split_off(&end);
        for (ts, dets) in std::mem::replace(&mut self.pending, later) {
            if ts < start {
                self.stale += dets.len() as u64;
            } else {
                self.buffer.entry(ts).or_default().extend(dets);
            }
        }
    }

    /// Buffered detections in timestamp order.
    pub fn state(&self) -> impl Iterator<Item = &Detection> {
        self.buffer.values().flatten()
    }

    /// Distinct timestamps currently held.
    pub fn timestamps(&self) -> Vec<u64> {
        self.buffer.keys().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contributor {
    pub label: String,
    pub ts_ms: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMatch {
    pub query: String,
    pub window_unit: u64,
    pub match_ts: u64,
    pub contributors: Vec<Contributor>,
}

impl EventMatch {
    /// `(label, ts)` pairs, which identify the match independent of scores.
    pub fn key(&self) -> Vec<(String, u64)> {
        self.contributors.iter().map(|c| (c.label.clone(), c.ts_ms)).collect()
    }
}

/// Detections that name a query object and rank inside top-k among the
/// detections of their own frame, in `(ts, label)` order.
pub fn qualifying<'a, I>(detections: I, q: &Query) -> Vec<Detection>
where
    I: IntoIterator<Item = &'a Detection>,
{
    let mut by_ts: BTreeMap<u64, Vec<&Detection>> = BTreeMap::new();
    for d in detections {
        by_ts.entry(d.ts_ms).or_default().push(d);
    }
    let mut out = Vec::new();
    for dets in by_ts.values() {
        let ranked = RankedScores::from_pairs(dets.iter().map(|d| (d.label.clone(), d.score)));
        let mut seen = BTreeSet::new();
        let mut frame: Vec<Detection> = dets
            .iter()
            .filter(|d| q.has_object(&d.label) && ranked.in_top_k(&d.label, q.top_k))
            .filter(|d| ranked.get(&d.label).is_some_and(|c| c.score == d.score))
            .filter(|d| seen.insert(d.label.clone()))
            .map(|d| (*d).clone())
            .collect();
        frame.sort_by(|a, b| a.label.cmp(&b.label));
        out.extend(frame);
    }
    out
}

/// First-selection, consumed-consumption matcher. The consumed set outlives
/// individual windows, so overlapping windows never report the same
/// detection twice.
#[derive(Debug, Clone)]
pub struct Matcher {
    query: Query,
    query_id: String,
    consumed: HashSet<(u64, String)>,
}

impl Matcher {
    pub fn new(query: Query, query_id: impl Into<String>) -> Self {
        Self { query, query_id: query_id.into(), consumed: HashSet::new() }
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn evaluate(&mut self, window: &CloudWindow) -> Vec<EventMatch> {
        self.evaluate_detections(window.state(), window.unit_id())
    }

    pub fn evaluate_detections<'a, I>(&mut self, detections: I, window_unit: u64) -> Vec<EventMatch>
    where
        I: IntoIterator<Item = &'a Detection>,
    {
        let fresh: Vec<Detection> =
            qualifying(detections, &self.query).into_iter().filter(|d| !self.consumed.contains(&(d.ts_ms, d.label.clone()))).collect();
        let contributor = |d: &Detection| Contributor { label: d.label.clone(), ts_ms: d.ts_ms, score: d.score };
        let mut out = Vec::new();
        match self.query.pattern.clone() {
            Pattern::Object(_) => {
                if let Some(d) = fresh.first() {
                    self.consumed.insert((d.ts_ms, d.label.clone()));
                    out.push(EventMatch {
                        query: self.query_id.clone(),
                        window_unit,
                        match_ts: d.ts_ms,
                        contributors: vec![contributor(d)],
                    });
                }
            }
            Pattern::Conj(a, b) => {
                let mut waiting: [VecDeque<&Detection>; 2] = [VecDeque::new(), VecDeque::new()];
                for d in &fresh {
                    let side = usize::from(d.label != a);
                    debug_assert!(d.label == a || d.label == b);
                    if let Some(partner) = waiting[1 - side].pop_front() {
                        self.consumed.insert((partner.ts_ms, partner.label.clone()));
                        self.consumed.insert((d.ts_ms, d.label.clone()));
                        out.push(EventMatch {
                            query: self.query_id.clone(),
                            window_unit,
                            match_ts: d.ts_ms,
                            contributors: vec![contributor(partner), contributor(d)],
                        });
                    } else {
                        waiting[side].push_back(d);
                    }
                }
            }
        }
        out
    }
}

/// Learned region of interest per query label, in unit-square coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoiState {
    regions: BTreeMap<String, (Rect, u64)>,
}

/// Corner form, so repeated unions only ever move edges outward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn union(self, o: Rect) -> Rect {
        Rect { x0: self.x0.min(o.x0), y0: self.y0.min(o.y0), x1: self.x1.max(o.x1), y1: self.y1.max(o.y1) }
    }

    fn bbox(self) -> BBox {
        BBox::new(self.x0, self.y0, self.x1 - self.x0, self.y1 - self.y0)
    }
}

impl RoiState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn region(&self, label: &str) -> Option<BBox> {
        self.regions.get(label).map(|(r, _)| r.bbox())
    }

    pub fn observations(&self, label: &str) -> u64 {
        self.regions.get(label).map_or(0, |(_, n)| *n)
    }

    pub fn total_observations(&self) -> u64 {
        self.regions.values().map(|(_, n)| n).sum()
    }

    /// Bounding rectangle of every learned region.
    pub fn union(&self) -> Option<BBox> {
        self.regions.values().map(|(r, _)| *r).reduce(Rect::union).map(Rect::bbox)
    }

    /// Area fraction of [`RoiState::union`] once `warmup` boxes have been
    /// seen; `None` before that.
    pub fn feedback(&self, warmup: u64) -> Option<f64> {
        if self.total_observations() < warmup.max(1) {
            return None;
        }
        self.union().map(|b| (b.w * b.h).clamp(0.0, 1.0))
    }
}

/// Grows each query label's region by the boxes in `detections`, which are in
/// `res` pixel coordinates.
pub fn spatial_map_update(roi: &mut RoiState, detections: &[Detection], res: Resolution, q: &Query) {
    if res.width == 0 || res.height == 0 {
        return;
    }
    let (w, h) = (res.width as f64, res.height as f64);
    for d in detections.iter().filter(|d| q.has_object(&d.label)) {
        let Some(b) = d.bbox else { continue };
        let x0 = (b.x / w).clamp(0.0, 1.0);
        let y0 = (b.y / h).clamp(0.0, 1.0);
        let x1 = ((b.x + b.w) / w).clamp(x0, 1.0);
        let y1 = ((b.y + b.h) / h).clamp(y0, 1.0);
        let norm = Rect { x0, y0, x1, y1 };
        roi.regions
            .entry(d.label.clone())
            .and_modify(|(r, n)| {
                *r = r.union(norm);
                *n += 1;
            })
            .or_insert((norm, 1));
    }
}

pub const EVENT_ALPHA: f64 = 0.9;
pub const EVENT_BETA: f64 = 0.1;

/// `alpha·EO + beta·EX`: EO is whether any event was found, EX how many of
/// the extra ground-truth events were found.
pub fn event_accuracy(detected: usize, ground_truth: usize, alpha: f64, beta: f64) -> f64 {
    if detected == 0 {
        return 0.0;
    }
    let ex = if ground_truth > 1 { ((detected as f64 - 1.0) / (ground_truth as f64 - 1.0)).clamp(0.0, 1.0) } else { 1.0 };
    alpha + beta * ex
}
