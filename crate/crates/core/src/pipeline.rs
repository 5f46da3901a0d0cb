//! End-to-end pipeline on a virtual clock.
//!
//! Frames are pulled in timestamp order. Each stage charges its configured
//! cost against the edge or cloud timeline and the link model adds transfer
//! time, so every latency and throughput number is a pure function of the
//! config and seed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::classifier::CloudDetector;
use crate::cloud::{event_accuracy, spatial_map_update, CloudWindow, EventMatch, Matcher, RoiState, EVENT_ALPHA, EVENT_BETA};
use crate::config::{Config, ConfigError, Mode, TransportUnit};
use crate::edge::{Decision, EagerFilter, EdgeError, EdgeWindow, EmittedBatch};
use crate::filtering::{
    cache_filter, mb_utility, resource_filter, FilterError, MeterEvent, PartialMatchCache, ResourceMeters, UtilityBreakdown, WindowPosition,
};
use crate::ingest::{FrameSource, IngestError, ManifestStream, SyntheticStream};
use crate::metrics::{
    bandwidth_saving, weighted_batch_latency, write_batches_csv, BatchRecord, FilterAttribution, FilterStage, MetricsError, SummaryReport,
};
use crate::par;
use crate::query::render_query;
use crate::resizer::{resize_batch_with, Resizer};
use crate::transport::{decode_batch, encode_batch_with, raw_frame_len, EncodeOptions, LinkModel, TransportError, WireMessage};
use crate::types::{Detection, Frame, MicroBatch, Query, SplitReason};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("input stream is empty")]
    EmptyInput,
}

/// Per-window comparison of the run's matches against the reference
/// matches on unfiltered, unattenuated annotations.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct WindowAccuracy {
    pub window_unit: u64,
    pub detected: usize,
    pub ground_truth: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: SummaryReport,
    pub batches: Vec<BatchRecord>,
    pub matches: Vec<EventMatch>,
    pub windows: Vec<WindowAccuracy>,
    /// Timestamps of every frame the cloud detector processed, in order.
    pub detected_ts: Vec<u64>,
}

pub const BATCHES_CSV: &str = "batches.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MATCHES_JSONL: &str = "matches.jsonl";
pub const WINDOWS_JSONL: &str = "windows.jsonl";

impl RunOutput {
    /// Writes the per-batch CSV, the JSON summary, and one JSON line per
    /// match and per scored window into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<(), MetricsError> {
        std::fs::create_dir_all(dir)?;
        write_batches_csv(BufWriter::new(File::create(dir.join(BATCHES_CSV))?), &self.batches)?;
        let mut summary = BufWriter::new(File::create(dir.join(SUMMARY_JSON))?);
        self.summary.write_json(&mut summary)?;
        writeln!(summary)?;
        summary.flush()?;
        write_jsonl(&dir.join(MATCHES_JSONL), &self.matches)?;
        write_jsonl(&dir.join(WINDOWS_JSONL), &self.windows)
    }
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<(), MetricsError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Opens the configured input: the manifest if one is set, otherwise the
/// synthetic scenario seeded with `cfg.seed`.
pub fn open_source(cfg: &Config) -> Result<Box<dyn FrameSource>, RunError> {
    Ok(match &cfg.input.manifest {
        Some(path) => Box::new(ManifestStream::open(path)?),
        None => Box::new(SyntheticStream::new(cfg.scenario(), cfg.seed)?),
    })
}

pub fn run(cfg: &Config) -> Result<RunOutput, RunError> {
    let q = cfg.validate()?;
    let mut source = open_source(cfg)?;
    Engine::new(cfg, q).run(source.as_mut())
}

pub fn run_with_source(cfg: &Config, source: &mut dyn FrameSource) -> Result<RunOutput, RunError> {
    let q = cfg.validate()?;
    Engine::new(cfg, q).run(source)
}

/// Runs independent configs, in parallel when the mode allows it.
pub fn run_many(cfgs: &[Config], mode: par::Parallelism) -> Vec<Result<RunOutput, RunError>> {
    par::map(mode, cfgs, run)
}

/// A delivered message and where it sat on the timelines.
struct Sent {
    frames: Vec<Frame>,
    arrival_ms: f64,
    wire_bytes: u64,
    payload_bytes: u64,
}

struct Engine<'a> {
    cfg: &'a Config,
    q: Query,
    edge: EdgeWindow,
    eager: EagerFilter,
    cache: PartialMatchCache,
    resizer: Option<Resizer>,
    cloud_batcher: Option<EdgeWindow>,
    meters: ResourceMeters,
    link: LinkModel,
    edge_busy: f64,
    cloud_busy: f64,
    cloud: Option<CloudWindow>,
    matcher: Matcher,
    roi: RoiState,
    origin: Option<u64>,
    last_ts: u64,
    last_done: f64,
    /// Content mode: per-frame (send, arrival, wire bytes, payload bytes).
    content_sends: BTreeMap<u64, (f64, f64, u64, u64)>,
    gt: Vec<Detection>,
    records: Vec<BatchRecord>,
    matches: Vec<EventMatch>,
    attribution: FilterAttribution,
    frames_ingested: u64,
    frames_forwarded: u64,
    batches_emitted: u64,
    batches_forwarded: u64,
    bytes_raw: u64,
    probes: u64,
    detected_ts: Vec<u64>,
    windows_evaluated: u64,
    next_frame_batch: u64,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a Config, q: Query) -> Self {
        let per_frame_cpu = cfg.costs.resize_per_frame + cfg.costs.encode_per_frame;
        Self {
            edge: EdgeWindow::new(q.window, cfg.batching),
            eager: EagerFilter::new(cfg.batching.mb_max),
            cache: PartialMatchCache::new(),
            resizer: None,
            cloud_batcher: (cfg.mode == Mode::Content).then(|| EdgeWindow::new(q.window, cfg.batching)),
            meters: ResourceMeters::new(cfg.resources.mem_capacity_bytes, cfg.resources.cores).with_per_frame_cpu_ms(per_frame_cpu),
            link: LinkModel::new(cfg.link),
            edge_busy: 0.0,
            cloud_busy: 0.0,
            cloud: None,
            matcher: Matcher::new(q.clone(), cfg.query_id.clone()),
            roi: RoiState::new(),
            origin: None,
            last_ts: 0,
            last_done: 0.0,
            content_sends: BTreeMap::new(),
            gt: Vec::new(),
            records: Vec::new(),
            matches: Vec::new(),
            attribution: FilterAttribution::default(),
            frames_ingested: 0,
            frames_forwarded: 0,
            batches_emitted: 0,
            batches_forwarded: 0,
            bytes_raw: 0,
            probes: 0,
            detected_ts: Vec::new(),
            windows_evaluated: 0,
            next_frame_batch: 0,
            cfg,
            q,
        }
    }

    fn mode(&self) -> Mode {
        self.cfg.mode
    }

    fn filters_on(&self) -> bool {
        self.mode() == Mode::Vidwin
    }

    fn run(mut self, source: &mut dyn FrameSource) -> Result<RunOutput, RunError> {
        while let Some(frame) = source.next_frame()? {
            self.ingest(frame)?;
        }
        if self.origin.is_none() {
            return Err(RunError::EmptyInput);
        }
        if let Some(eb) = self.edge.finish() {
            self.edge_batch(eb)?;
        }
        if let Some(eb) = self.cloud_batcher.as_mut().and_then(EdgeWindow::finish) {
            self.content_batch(eb)?;
        }
        while self.cloud.as_ref().and_then(CloudWindow::bounds).is_some_and(|(start, _)| start <= self.last_ts) {
            self.evaluate();
        }
        Ok(self.finish())
    }

    fn ingest(&mut self, frame: Frame) -> Result<(), RunError> {
        let ts = frame.ts_ms();
        let origin = *self.origin.get_or_insert(ts);
        if self.cloud.is_none() {
            self.cloud = Some(CloudWindow::new(self.q.window).anchored(origin));
        }
        self.last_ts = ts;
        self.frames_ingested += 1;
        self.bytes_raw += raw_frame_len(&frame) as u64;
        self.gt.extend(frame.annotations().iter().map(|a| Detection {
            label: a.label.clone(),
            score: a.base_score,
            bbox: a.bbox,
            ts_ms: ts,
        }));

        match self.mode() {
            Mode::Vanilla | Mode::Content => self.send_raw_frame(frame)?,
            Mode::Edge | Mode::Vidwin => {
                self.meters.apply(MeterEvent::enqueue(ts, frame.footprint_bytes()));
                self.meters.apply(MeterEvent::cost(ts, self.cfg.costs.histogram_per_frame));
                self.edge_busy = self.edge_busy.max(ts as f64) + self.cfg.costs.histogram_per_frame;
                for eb in self.edge.advance(frame)? {
                    self.edge_batch(eb)?;
                }
            }
        }

        while self.cloud.as_ref().and_then(CloudWindow::bounds).is_some_and(|(_, end)| ts >= end) {
            self.evaluate();
        }
        Ok(())
    }

    fn evaluate(&mut self) {
        let cloud = self.cloud.as_mut().expect("cloud window exists once a frame arrived");
        self.matches.extend(self.matcher.evaluate(cloud));
        cloud.slide();
        self.windows_evaluated += 1;
    }

    fn resizer_for(&mut self, frame: &Frame) -> &mut Resizer {
        let cfg = &self.cfg.resizer;
        self.resizer
            .get_or_insert_with(|| Resizer::new(cfg.candidates.capped_at(frame.resolution())).with_guard_threshold(cfg.guard_threshold))
    }

    fn send(&mut self, mb: &MicroBatch, opts: EncodeOptions, send_ms: f64) -> Result<Sent, RunError> {
        let msg = encode_batch_with(mb, opts, self.cfg.parallelism)?;
        let mut wire_bytes = msg.len() as u64;
        if self.mode() == Mode::Vidwin && self.cfg.roi.enabled {
            if let Some(frac) = self.roi.feedback(self.cfg.roi.warmup) {
                wire_bytes = msg.header_len() as u64 + (msg.payload_len() as f64 * frac).ceil() as u64;
            }
        }
        let d = self.link.send(send_ms, wire_bytes);
        let decoded = decode_batch(&WireMessage::from_bytes(msg.as_bytes().to_vec())?)?;
        Ok(Sent { frames: decoded.frames().to_vec(), arrival_ms: d.arrival_ms, wire_bytes, payload_bytes: msg.payload_len() as u64 })
    }

    /// Runs the cloud detector over `frames` once they are available at
    /// `ready_ms`. Returns the completion time.
    fn detect(&mut self, frames: &[Frame], ready_ms: f64) -> f64 {
        let start = ready_ms.max(self.cloud_busy);
        let mut cost = 0.0;
        let detector = &self.cfg.detector;
        let cloud = self.cloud.as_mut().expect("cloud window exists once a frame arrived");
        for f in frames {
            cost += self.cfg.costs.decode_per_frame + self.cfg.costs.detect(f.resolution().pixels());
            let dets = detector.detect(f);
            if self.cfg.roi.enabled {
                spatial_map_update(&mut self.roi, &dets, f.resolution(), &self.q);
            }
            cloud.ingest(dets);
            self.detected_ts.push(f.ts_ms());
        }
        self.cloud_busy = start + cost;
        self.last_done = self.last_done.max(self.cloud_busy);
        self.cloud_busy
    }

    fn base_record(&self, mb: &MicroBatch) -> BatchRecord {
        BatchRecord {
            stream_id: mb.stream_id,
            unit_id: mb.unit_id,
            batch_id: mb.batch_id,
            first_ts_ms: mb.first_ts(),
            last_ts_ms: mb.last_ts(),
            split_reason: mb.split_reason.as_str().to_string(),
            frames_in: mb.len(),
            frames_out: 0,
            width: mb.resolution.width,
            height: mb.resolution.height,
            resize_probes: 0,
            mb_accuracy: 0.0,
            mb_utility: 0.0,
            dropped_by: String::new(),
            messages: 0,
            wire_bytes: 0,
            payload_bytes: 0,
            raw_bytes: mb.frames().iter().map(|f| raw_frame_len(f) as u64).sum(),
            l_batch_ms: 0.0,
            l_transfer_ms: 0.0,
            l_dnn_ms: 0.0,
            latency_ms: 0.0,
        }
    }

    fn fill_latency(rec: &mut BatchRecord, send_ms: f64, arrival_ms: f64, done_ms: f64) {
        let first = rec.first_ts_ms as f64;
        rec.l_batch_ms = send_ms - first;
        rec.l_transfer_ms = arrival_ms - send_ms;
        rec.l_dnn_ms = done_ms - arrival_ms;
        rec.latency_ms = rec.l_batch_ms + rec.l_transfer_ms + rec.l_dnn_ms;
    }

    /// Vanilla and content modes: every frame leaves the edge on its own,
    /// raw and full size.
    fn send_raw_frame(&mut self, frame: Frame) -> Result<(), RunError> {
        let ts = frame.ts_ms();
        let origin = self.origin.unwrap_or(ts);
        let unit = self.q.window.unit_of(origin, ts);
        let mb = MicroBatch::new(self.next_frame_batch, frame.stream_id(), unit, vec![frame], SplitReason::SlideEnd, 1)
            .expect("single frame batch is valid");
        self.next_frame_batch += 1;
        let send_ms = (ts as f64).max(self.edge_busy) + self.cfg.costs.encode_per_frame;
        self.edge_busy = send_ms;
        let sent = self.send(&mb, EncodeOptions::RAW, send_ms)?;
        self.frames_forwarded += 1;

        if self.mode() == Mode::Vanilla {
            self.batches_emitted += 1;
            self.batches_forwarded += 1;
            let done = self.detect(&sent.frames, sent.arrival_ms);
            let mut rec = self.base_record(&mb);
            rec.frames_out = 1;
            rec.messages = 1;
            rec.wire_bytes = sent.wire_bytes;
            rec.payload_bytes = sent.payload_bytes;
            Self::fill_latency(&mut rec, send_ms, sent.arrival_ms, done);
            self.records.push(rec);
            return Ok(());
        }

        self.content_sends.insert(ts, (send_ms, sent.arrival_ms, sent.wire_bytes, sent.payload_bytes));
        let batcher = self.cloud_batcher.as_mut().expect("content mode has a cloud batcher");
        let mut emitted = Vec::new();
        for f in sent.frames {
            emitted.extend(batcher.advance(f)?);
        }
        for eb in emitted {
            self.content_batch(eb)?;
        }
        Ok(())
    }

    /// Content mode: batching and resizing happen after the link.
    fn content_batch(&mut self, eb: EmittedBatch) -> Result<(), RunError> {
        let mb = eb.batch;
        self.batches_emitted += 1;
        self.batches_forwarded += 1;
        let mut rec = self.base_record(&mb);
        let (mut last_send, mut ready) = (0.0f64, 0.0f64);
        for f in mb.frames() {
            let (s, a, w, p) = self.content_sends.remove(&f.ts_ms()).expect("every frame was sent first");
            last_send = last_send.max(s);
            ready = ready.max(a);
            rec.wire_bytes += w;
            rec.payload_bytes += p;
            rec.messages += 1;
        }
        let cls = &self.cfg.classifier;
        let q = self.q.clone();
        let sel = self.resizer_for(mb.keyframe()).select(mb.keyframe(), &q, cls);
        self.probes += sel.probes as u64;
        let resized = resize_batch_with(&mb, sel.resolution, self.cfg.parallelism);
        let c = &self.cfg.costs;
        let prep = mb.len() as f64 * (c.histogram_per_frame + c.resize_per_frame) + sel.probes as f64 * c.classify_per_probe;
        let start = ready.max(self.cloud_busy);
        self.cloud_busy = start + prep;
        let done = self.detect(resized.frames(), self.cloud_busy);

        rec.frames_out = mb.len();
        rec.width = sel.resolution.width;
        rec.height = sel.resolution.height;
        rec.resize_probes = sel.probes;
        Self::fill_latency(&mut rec, last_send, ready, done);
        self.records.push(rec);
        Ok(())
    }

    /// Edge and vidwin modes: filter, resize, encode and ship one batch.
    fn edge_batch(&mut self, eb: EmittedBatch) -> Result<(), RunError> {
        self.batches_emitted += 1;
        let mb = &eb.batch;
        let mut rec = self.base_record(mb);
        let start = (eb.emitted_at_ms as f64).max(self.edge_busy);
        let at = start as u64;
        let filters = if self.filters_on() { self.cfg.filters } else { crate::config::FilterToggles::NONE };

        if filters.eager && self.eager.decide(mb) == Decision::Drop {
            self.drop_batch(&mut rec, mb, FilterStage::Eager, at);
            return Ok(());
        }

        let cls = &self.cfg.classifier;
        let q = self.q.clone();
        let sel = self.resizer_for(mb.keyframe()).select(mb.keyframe(), &q, cls);
        self.probes += sel.probes as u64;
        rec.resize_probes = sel.probes;
        let utility: UtilityBreakdown = mb_utility(WindowPosition::from(&eb), &sel.scores, &self.q, self.cfg.utility_mode)?;
        rec.mb_accuracy = utility.mb_accuracy;
        rec.mb_utility = utility.mb_utility;
        let c = self.cfg.costs;
        let probe_cost = sel.probes as f64 * c.classify_per_probe;
        self.meters.apply(MeterEvent::cost(at, probe_cost));

        if filters.cache && cache_filter(mb, &sel.scores, &mut self.cache, &self.q) == Decision::Drop {
            self.edge_busy = start + probe_cost;
            self.drop_batch(&mut rec, mb, FilterStage::Cache, at);
            return Ok(());
        }

        let kept = if filters.utility {
            let out = resource_filter(mb, &utility, &self.q, &self.meters);
            if out.dropped_frames > 0 {
                self.attribution.record(FilterStage::Utility, out.dropped_frames as u64);
                let freed: u64 = mb.frames()[out.batch.len()..].iter().map(Frame::footprint_bytes).sum();
                self.meters.apply(MeterEvent::dequeue(at, freed));
                rec.dropped_by = FilterStage::Utility.as_str().to_string();
            }
            out.batch
        } else {
            mb.clone()
        };

        let resized = resize_batch_with(&kept, sel.resolution, self.cfg.parallelism);
        let n = resized.len();
        let work = n as f64 * (c.resize_per_frame + c.encode_per_frame);
        let send_ms = start + probe_cost + work;
        self.edge_busy = send_ms;
        self.meters.apply(MeterEvent::cost(at, work));

        let opts = if self.mode() == Mode::Vidwin { self.cfg.encoding } else { EncodeOptions::RAW };
        let unit = if self.mode() == Mode::Vidwin { self.cfg.transport_unit } else { TransportUnit::Batch };
        let pieces: Vec<MicroBatch> = match unit {
            TransportUnit::Batch => vec![resized.clone()],
            TransportUnit::PerFrame => resized
                .frames()
                .iter()
                .map(|f| {
                    MicroBatch::new(resized.batch_id, resized.stream_id, resized.unit_id, vec![f.clone()], resized.split_reason, 1)
                        .expect("single frame batch is valid")
                })
                .collect(),
        };
        let (mut last_arrival, mut done) = (send_ms, send_ms);
        for piece in &pieces {
            let sent = self.send(piece, opts, send_ms)?;
            rec.messages += 1;
            rec.wire_bytes += sent.wire_bytes;
            rec.payload_bytes += sent.payload_bytes;
            last_arrival = last_arrival.max(sent.arrival_ms);
            done = self.detect(&sent.frames, sent.arrival_ms);
        }
        self.meters.apply(MeterEvent::dequeue(send_ms as u64, kept.footprint_bytes()));

        self.batches_forwarded += 1;
        self.frames_forwarded += n as u64;
        rec.frames_out = n;
        rec.width = resized.resolution.width;
        rec.height = resized.resolution.height;
        Self::fill_latency(&mut rec, send_ms, last_arrival, done);
        self.records.push(rec);
        Ok(())
    }

    fn drop_batch(&mut self, rec: &mut BatchRecord, mb: &MicroBatch, stage: FilterStage, at: u64) {
        self.attribution.record(stage, mb.len() as u64);
        self.meters.apply(MeterEvent::dequeue(at, mb.footprint_bytes()));
        rec.dropped_by = stage.as_str().to_string();
        self.records.push(rec.clone());
    }

    fn ground_truth(&self) -> Vec<usize> {
        let origin = self.origin.expect("run saw at least one frame");
        let mut window = CloudWindow::new(self.q.window).anchored(origin);
        window.ingest(self.gt.iter().cloned());
        let mut reference = Matcher::new(self.q.clone(), self.cfg.query_id.clone());
        (0..self.windows_evaluated)
            .map(|_| {
                let n = reference.evaluate(&window).len();
                window.slide();
                n
            })
            .collect()
    }

    fn finish(self) -> RunOutput {
        let gt = self.ground_truth();
        let mut detected = vec![0usize; gt.len()];
        for m in &self.matches {
            if let Some(d) = detected.get_mut(m.window_unit as usize) {
                *d += 1;
            }
        }
        let windows: Vec<WindowAccuracy> = gt
            .iter()
            .zip(&detected)
            .enumerate()
            .filter(|(_, (g, _))| **g > 0)
            .map(|(unit, (&g, &d))| WindowAccuracy {
                window_unit: unit as u64,
                detected: d,
                ground_truth: g,
                accuracy: event_accuracy(d, g, EVENT_ALPHA, EVENT_BETA),
            })
            .collect();
        let event_accuracy_mean = (!windows.is_empty()).then(|| windows.iter().map(|w| w.accuracy).sum::<f64>() / windows.len() as f64);

        let (lat, sizes): (Vec<f64>, Vec<usize>) =
            self.records.iter().filter(|r| r.frames_out > 0).map(|r| (r.latency_ms, r.frames_out)).unzip();
        let origin = self.origin.unwrap_or(0) as f64;
        let sim_duration_ms = (self.last_done - origin).max(0.0);
        let frames_detected = self.detected_ts.len() as u64;
        let summary = SummaryReport {
            mode: self.cfg.mode.as_str().to_string(),
            seed: self.cfg.seed,
            query: render_query(&self.q),
            frames_ingested: self.frames_ingested,
            frames_forwarded: self.frames_forwarded,
            frames_detected,
            batches_emitted: self.batches_emitted,
            batches_forwarded: self.batches_forwarded,
            messages_sent: self.link.messages_sent(),
            bytes_sent: self.link.bytes_sent(),
            bytes_raw: self.bytes_raw,
            bandwidth_saving: bandwidth_saving(self.link.bytes_sent(), self.bytes_raw),
            sim_duration_ms,
            throughput_fps: if sim_duration_ms > 0.0 { frames_detected as f64 * 1000.0 / sim_duration_ms } else { 0.0 },
            weighted_batch_latency_ms: weighted_batch_latency(&lat, &sizes).unwrap_or(0.0),
            filtering: self.attribution.fractions(self.frames_ingested),
            resize_probes: self.probes,
            windows_evaluated: self.windows_evaluated,
            matches: self.matches.len() as u64,
            ground_truth_matches: gt.iter().sum::<usize>() as u64,
            event_accuracy_mean,
            stale_detections: self.cloud.as_ref().map_or(0, CloudWindow::stale_count),
            roi_area_fraction: if self.cfg.roi.enabled { self.roi.feedback(self.cfg.roi.warmup) } else { None },
        };
        RunOutput { summary, batches: self.records, matches: self.matches, windows, detected_ts: self.detected_ts }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("compare needs at least two configs")]
    TooFew,
    #[error("config {index} differs from the first in {what}")]
    MismatchedInputs { index: usize, what: &'static str },
}

#[derive(Debug, Error)]
pub enum CompareRunError {
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error(transparent)]
    Run(#[from] RunError),
}

/// One column of a comparison, with deltas against the first config.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub summary: SummaryReport,
    pub delta_bytes_sent: i64,
    pub delta_messages: i64,
    pub delta_throughput_fps: f64,
    pub delta_latency_ms: f64,
    pub delta_matches: i64,
}

/// Checks that configs share their input and seed.
pub fn check_comparable(cfgs: &[Config]) -> Result<(), CompareError> {
    if cfgs.len() < 2 {
        return Err(CompareError::TooFew);
    }
    let first = &cfgs[0];
    for (i, c) in cfgs.iter().enumerate().skip(1) {
        if c.seed != first.seed {
            return Err(CompareError::MismatchedInputs { index: i, what: "seed" });
        }
        if c.input != first.input {
            return Err(CompareError::MismatchedInputs { index: i, what: "input" });
        }
    }
    Ok(())
}

pub fn compare(cfgs: &[Config], mode: par::Parallelism) -> Result<Vec<ComparisonRow>, CompareRunError> {
    check_comparable(cfgs)?;
    let outs = run_many(cfgs, mode).into_iter().collect::<Result<Vec<_>, _>>()?;
    let base = outs[0].summary.clone();
    Ok(cfgs
        .iter()
        .zip(outs)
        .map(|(c, o)| {
            let s = o.summary;
            ComparisonRow {
                label: c.mode.as_str().to_string(),
                delta_bytes_sent: s.bytes_sent as i64 - base.bytes_sent as i64,
                delta_messages: s.messages_sent as i64 - base.messages_sent as i64,
                delta_throughput_fps: s.throughput_fps - base.throughput_fps,
                delta_latency_ms: s.weighted_batch_latency_ms - base.weighted_batch_latency_ms,
                delta_matches: s.matches as i64 - base.matches as i64,
                summary: s,
            }
        })
        .collect())
}

/// Plain-text side-by-side table of a comparison.
pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:<10} {:>12} {:>14} {:>9} {:>10} {:>12} {:>8} {:>9}\n",
        "mode", "bytes_sent", "delta_bytes", "messages", "fps", "latency_ms", "matches", "saving"
    );
    for r in rows {
        let s = &r.summary;
        out.push_str(&format!(
            "{:<10} {:>12} {:>+14} {:>9} {:>10.2} {:>12.1} {:>8} {:>8.1}%\n",
            r.label,
            s.bytes_sent,
            r.delta_bytes_sent,
            s.messages_sent,
            s.throughput_fps,
            s.weighted_batch_latency_ms,
            s.matches,
            s.bandwidth_saving * 100.0
        ));
    }
    out
}
