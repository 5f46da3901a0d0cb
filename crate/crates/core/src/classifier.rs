//! Classifier contracts and the deterministic synthetic stand-in.
//!
//! The synthetic models read ground-truth annotations off the frame and scale
//! their scores by a resolution-dependent attenuation, so lower resolutions
//! never score higher than higher ones.

use serde::{Deserialize, Serialize};

use crate::types::{Detection, Frame, RankedScores, Resolution};

/// Lightweight edge model: ranked class scores for a frame probed at `res`.
pub trait EdgeClassifier: Send + Sync {
    fn classify(&self, frame: &Frame, res: Resolution) -> RankedScores;
}

/// Heavy cloud model: object detections at the frame's received resolution.
pub trait CloudDetector: Send + Sync {
    fn detect(&self, frame: &Frame) -> Vec<Detection>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttenuationParams {
    pub gamma: f64,
    pub floor: f64,
    pub reference_resolution: Resolution,
}

impl Default for AttenuationParams {
    fn default() -> Self {
        Self { gamma: 0.15, floor: 0.5, reference_resolution: Resolution::new(1920, 1080) }
    }
}

/// `max(floor, (pixels / reference_pixels)^gamma)`, capped at 1.
pub fn attenuation(res: Resolution, p: &AttenuationParams) -> f64 {
    if p.gamma == 0.0 {
        return 1.0;
    }
    let ratio = (res.pixels() as f64 / p.reference_resolution.pixels().max(1) as f64).min(1.0);
    ratio.powf(p.gamma).max(p.floor).min(1.0)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Uniform value in [0, 1) derived from `(seed, ts, label)`.
fn unit_hash(seed: u64, ts_ms: u64, label: &str) -> f64 {
    let h = splitmix64(seed ^ splitmix64(ts_ms ^ label_hash(label).rotate_left(17)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticClassifier {
    pub attenuation: AttenuationParams,
    /// Labels that get a small per-frame score independent of resolution.
    pub distractors: Vec<String>,
    pub distractor_max_score: f64,
    /// Probability that the edge model misses an annotated object.
    pub miss_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticClassifier {
    fn default() -> Self {
        Self {
            attenuation: AttenuationParams::default(),
            distractors: vec!["bicycle".into(), "bus".into(), "dog".into()],
            distractor_max_score: 0.35,
            miss_rate: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticClassifier {
    pub fn plain(attenuation: AttenuationParams) -> Self {
        Self { attenuation, distractors: Vec::new(), distractor_max_score: 0.0, miss_rate: 0.0, seed: 0 }
    }
}

impl EdgeClassifier for SyntheticClassifier {
    fn classify(&self, frame: &Frame, res: Resolution) -> RankedScores {
        let att = attenuation(res, &self.attenuation);
        let objects = frame
            .annotations()
            .iter()
            .filter(|a| self.miss_rate <= 0.0 || unit_hash(self.seed ^ 0x55, frame.ts_ms(), &a.label) >= self.miss_rate)
            .map(|a| (a.label.clone(), a.base_score * att));
        let distractors = self.distractors.iter().map(|d| (d.clone(), unit_hash(self.seed, frame.ts_ms(), d) * self.distractor_max_score));
        RankedScores::from_pairs(objects.chain(distractors))
    }
}

/// Cloud detector that reports annotations with attenuation at the frame's
/// own resolution. Bounding boxes are already in that frame's coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SyntheticDetector {
    pub attenuation: AttenuationParams,
}

impl CloudDetector for SyntheticDetector {
    fn detect(&self, frame: &Frame) -> Vec<Detection> {
        let att = attenuation(frame.resolution(), &self.attenuation);
        frame
            .annotations()
            .iter()
            .map(|a| Detection { label: a.label.clone(), score: a.base_score * att, bbox: a.bbox, ts_ms: frame.ts_ms() })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resizer::resize_frame;
    use crate::types::{Annotation, BBox, Histogram};

    fn car_frame(score: f64) -> Frame {
        Frame::surrogate(
            0,
            40,
            Resolution::new(1920, 1080),
            Histogram::new(vec![1.0, 2.0]).unwrap(),
            false,
            vec![Annotation::new("car", score, Some(BBox::new(100.0, 200.0, 300.0, 400.0))).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn attenuation_examples() {
        let p = AttenuationParams::default();
        assert_eq!(attenuation(p.reference_resolution, &p), 1.0);
        // 1/64 of the reference pixels: 64^-0.15
        let r = attenuation(Resolution::new(240, 135), &p);
        assert!((r - 0.535_886_731_268_146_6).abs() < 1e-12, "{r}");
        let flat = AttenuationParams { gamma: 0.0, ..p };
        assert_eq!(attenuation(Resolution::new(1, 1), &flat), 1.0);
    }

    #[test]
    fn classify_at_reference_and_low_res() {
        let c = SyntheticClassifier::plain(AttenuationParams::default());
        let f = car_frame(0.8);
        let full = c.classify(&f, Resolution::new(1920, 1080));
        assert_eq!(full.as_slice()[0].label, "car");
        assert_eq!(full.as_slice()[0].score, 0.8);
        assert_eq!(full.as_slice()[0].rank, 1);
        // (288*162 / 1920*1080)^0.15 = 0.0225^0.15 = 0.566014...
        let low = c.classify(&f, Resolution::new(288, 162));
        assert!((low.as_slice()[0].score - 0.452_811_413_109_647_2).abs() < 1e-12);
    }

    #[test]
    fn unannotated_frame_has_only_distractors() {
        let f = Frame::surrogate(0, 0, Resolution::new(16, 9), Histogram::new(vec![1.0]).unwrap(), false, vec![]).unwrap();
        assert!(SyntheticClassifier::plain(AttenuationParams::default()).classify(&f, Resolution::new(16, 9)).is_empty());
        let with = SyntheticClassifier::default().classify(&f, Resolution::new(16, 9));
        assert_eq!(with.len(), 3);
        assert!(with.as_slice().iter().all(|c| c.score < 0.35));
    }

    #[test]
    fn deterministic_and_monotone() {
        let c = SyntheticClassifier::default();
        let f = car_frame(0.6);
        let lo = c.classify(&f, Resolution::new(320, 180));
        let hi = c.classify(&f, Resolution::new(960, 540));
        assert_eq!(lo, c.classify(&f, Resolution::new(320, 180)));
        for s in lo.as_slice() {
            assert!(s.score <= hi.get(&s.label).unwrap().score);
        }
    }

    #[test]
    fn detect_full_and_half_res() {
        let d = SyntheticDetector::default();
        let f = car_frame(0.8);
        let full = d.detect(&f);
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].score, 0.8);
        assert_eq!(full[0].bbox, f.annotations()[0].bbox);
        let half = resize_frame(&f, Resolution::new(960, 540));
        assert_eq!(d.detect(&half)[0].bbox, Some(BBox::new(50.0, 100.0, 150.0, 200.0)));
        let empty = Frame::surrogate(0, 0, Resolution::new(16, 9), Histogram::new(vec![1.0]).unwrap(), false, vec![]).unwrap();
        assert!(d.detect(&empty).is_empty());
    }

    #[test]
    fn miss_rate_one_hides_everything() {
        let c = SyntheticClassifier { miss_rate: 1.0, ..SyntheticClassifier::plain(AttenuationParams::default()) };
        assert!(c.classify(&car_frame(0.9), Resolution::new(1920, 1080)).is_empty());
    }
}
