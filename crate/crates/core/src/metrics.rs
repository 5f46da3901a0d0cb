//! Latency, bandwidth and filtering accounting, plus the per-batch CSV and
//! JSON summary writers.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{latencies} latencies but {sizes} batch sizes")]
    LengthMismatch { latencies: usize, sizes: usize },
    #[error("batch sizes sum to zero")]
    ZeroWeight,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Batching wait plus transfer plus detection time.
pub fn batch_latency(l_b: f64, l_t: f64, l_dnn: f64) -> f64 {
    l_b + l_t + l_dnn
}

/// Mean latency weighted by batch size.
pub fn weighted_batch_latency(latencies: &[f64], sizes: &[usize]) -> Result<f64, MetricsError> {
    if latencies.len() != sizes.len() {
        return Err(MetricsError::LengthMismatch { latencies: latencies.len(), sizes: sizes.len() });
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(MetricsError::ZeroWeight);
    }
    let num: f64 = latencies.iter().zip(sizes).map(|(l, b)| l * *b as f64).sum();
    Ok(num / total as f64)
}

/// `1 - sent / raw`; zero when nothing would have been sent raw.
pub fn bandwidth_saving(bytes_sent: u64, bytes_raw: u64) -> f64 {
    if bytes_raw == 0 {
        return 0.0;
    }
    1.0 - bytes_sent as f64 / bytes_raw as f64
}

/// Filter stages in the order they run; a dropped frame is attributed to the
/// first stage that dropped it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStage {
    Eager,
    Cache,
    Utility,
}

impl FilterStage {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterStage::Eager => "eager",
            FilterStage::Cache => "cache",
            FilterStage::Utility => "utility",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterAttribution {
    pub eager_frames: u64,
    pub cache_frames: u64,
    pub utility_frames: u64,
}

impl FilterAttribution {
    pub fn record(&mut self, stage: FilterStage, frames: u64) {
        match stage {
            FilterStage::Eager => self.eager_frames += frames,
            FilterStage::Cache => self.cache_frames += frames,
            FilterStage::Utility => self.utility_frames += frames,
        }
    }

    pub fn total(&self) -> u64 {
        self.eager_frames + self.cache_frames + self.utility_frames
    }

    pub fn fractions(&self, ingested: u64) -> FilteringFractions {
        let f = |n: u64| if ingested == 0 { 0.0 } else { n as f64 / ingested as f64 };
        FilteringFractions {
            eager: f(self.eager_frames),
            cache: f(self.cache_frames),
            utility: f(self.utility_frames),
            total: f(self.total()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FilteringFractions {
    pub eager: f64,
    pub cache: f64,
    pub utility: f64,
    pub total: f64,
}

/// One CSV row per emitted micro-batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub stream_id: u64,
    pub unit_id: u64,
    pub batch_id: u64,
    pub first_ts_ms: u64,
    pub last_ts_ms: u64,
    pub split_reason: String,
    pub frames_in: usize,
    pub frames_out: usize,
    pub width: u32,
    pub height: u32,
    pub resize_probes: usize,
    pub mb_accuracy: f64,
    pub mb_utility: f64,
    /// Empty when forwarded, otherwise the stage that dropped frames.
    pub dropped_by: String,
    pub messages: u64,
    pub wire_bytes: u64,
    pub payload_bytes: u64,
    pub raw_bytes: u64,
    pub l_batch_ms: f64,
    pub l_transfer_ms: f64,
    pub l_dnn_ms: f64,
    pub latency_ms: f64,
}

pub fn write_batches_csv<W: Write>(out: W, rows: &[BatchRecord]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub mode: String,
    pub seed: u64,
    pub query: String,
    pub frames_ingested: u64,
    pub frames_forwarded: u64,
    pub frames_detected: u64,
    pub batches_emitted: u64,
    pub batches_forwarded: u64,
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub bytes_raw: u64,
    pub bandwidth_saving: f64,
    pub sim_duration_ms: f64,
    pub throughput_fps: f64,
    pub weighted_batch_latency_ms: f64,
    pub filtering: FilteringFractions,
    pub resize_probes: u64,
    pub windows_evaluated: u64,
    pub matches: u64,
    pub ground_truth_matches: u64,
    /// Mean over windows with at least one ground-truth match.
    pub event_accuracy_mean: Option<f64>,
    pub stale_detections: u64,
    pub roi_area_fraction: Option<f64>,
}

impl SummaryReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}
