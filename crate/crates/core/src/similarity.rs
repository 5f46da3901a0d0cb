//! HSV colour histograms and correlation-based frame similarity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Parallelism};
use crate::types::{Frame, Histogram};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimilarityError {
    #[error("frame has neither pixels nor a surrogate histogram")]
    NoPayload,
    #[error("histograms have {0} and {1} bins")]
    BinMismatch(usize, usize),
}

/// Hue and saturation bin counts; value is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub hue_bins: usize,
    pub sat_bins: usize,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self { hue_bins: 50, sat_bins: 50 }
    }
}

impl HistogramConfig {
    pub fn bin_count(&self) -> usize {
        self.hue_bins + self.sat_bins
    }
}

/// RGB8 to (hue in degrees [0, 360), saturation [0, 1]).
pub fn rgb_to_hs(r: u8, g: u8, b: u8) -> (f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return (0.0, s);
    }
    let h = if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (if h < 0.0 { h + 360.0 } else { h }, s)
}

fn bin_of(v: f64, span: f64, bins: usize) -> usize {
    ((v / span * bins as f64) as usize).min(bins - 1)
}

/// Histogram of the frame's pixels, or its stored surrogate when it has none.
pub fn hsv_histogram(frame: &Frame, cfg: HistogramConfig) -> Result<Histogram, SimilarityError> {
    hsv_histogram_with(frame, cfg, Parallelism::default())
}

pub fn hsv_histogram_with(frame: &Frame, cfg: HistogramConfig, mode: Parallelism) -> Result<Histogram, SimilarityError> {
    match frame.pixels() {
        Some(px) => Ok(pixel_histogram(px, cfg, mode)),
        None => frame.histogram().cloned().ok_or(SimilarityError::NoPayload),
    }
}

/// Hue counts in the first `hue_bins` slots, saturation counts after; each
/// half sums to the pixel count.
pub fn pixel_histogram(rgb: &[u8], cfg: HistogramConfig, mode: Parallelism) -> Histogram {
    let (hb, sb) = (cfg.hue_bins.max(1), cfg.sat_bins.max(1));
    let count = |chunk: &[u8]| {
        let mut c = vec![0u64; hb + sb];
        for p in chunk.chunks_exact(3) {
            let (h, s) = rgb_to_hs(p[0], p[1], p[2]);
            c[bin_of(h, 360.0, hb)] += 1;
            c[hb + bin_of(s, 1.0, sb)] += 1;
        }
        c
    };
    // 16K pixels per task; integer counts make the merge order irrelevant.
    let counts = par::chunked_reduce(mode, rgb, 3 * 16 * 1024, count, |mut a, b| {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        a
    })
    .unwrap_or_else(|| vec![0; hb + sb]);
    Histogram::new(counts.into_iter().map(|c| c as f64).collect()).expect("counts are non-negative")
}

/// Pearson correlation between two histograms, in [-1, 1].
///
/// A constant histogram has zero variance; two constant histograms with equal
/// bins score 1.0, any other pairing with a constant side scores 0.0.
pub fn correlation(h1: &Histogram, h2: &Histogram) -> Result<f64, SimilarityError> {
    let (a, b) = (h1.bins(), h2.bins());
    if a.len() != b.len() {
        return Err(SimilarityError::BinMismatch(a.len(), b.len()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut num, mut va, mut vb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        num += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(if va == 0.0 && vb == 0.0 && a == b { 1.0 } else { 0.0 });
    }
    Ok((num / (va * vb).sqrt()).clamp(-1.0, 1.0))
}
