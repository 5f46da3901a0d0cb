//! Brute-force oracles and input generators shared by the property suites
//! and the acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use vidwin::classifier::EdgeClassifier;
use vidwin::edge::{BatchingConfig, EdgeWindow, EmittedBatch};
use vidwin::query::parse_query;
use vidwin::resizer::GUARD_THRESHOLD;
use vidwin::types::{
    Annotation, BBox, Detection, Frame, Histogram, MicroBatch, Pattern, Query, RankedScores, Resolution, SplitReason, WindowSpec,
};

/// Pearson correlation through the pairwise form
/// `Σ_i Σ_j (x_i - x_j)(y_i - y_j)`, which never computes a mean.
pub fn pairwise_correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in 0..x.len() {
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn histogram_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=96).prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n), prop::collection::vec(0.0f64..1.0, n)))
}

/// Query labels inside top-k, highest score first, ties by label.
pub fn top_k_hits(pairs: &[(String, f64)], q: &Query) -> Vec<(String, f64)> {
    let mut v = pairs.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    v.into_iter().take(q.top_k).filter(|(l, _)| q.has_object(l)).collect()
}

pub fn query(pattern: &str, k: usize) -> Query {
    parse_query(&format!("MATCH {pattern} WITHIN WINDOW(5,5) ACCURACY TOP-{k}")).unwrap()
}

/// Scores for one keyframe: query objects scale with a shared non-decreasing
/// attenuation per candidate, distractors stay fixed.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub objects: Vec<(String, f64)>,
    pub distractors: Vec<(String, f64)>,
    pub attenuation: Vec<f64>,
    pub candidates: Vec<Resolution>,
}

impl ScoreTable {
    pub fn scores_at(&self, i: usize) -> Vec<(String, f64)> {
        let a = self.attenuation[i];
        self.objects.iter().map(|(l, s)| (l.clone(), s * a)).chain(self.distractors.iter().cloned()).collect()
    }
}

impl EdgeClassifier for ScoreTable {
    fn classify(&self, _frame: &Frame, res: Resolution) -> RankedScores {
        let i = self.candidates.iter().position(|c| *c == res).expect("probe at a candidate");
        RankedScores::from_pairs(self.scores_at(i))
    }
}

/// Smallest candidate index that keeps every object present at the largest
/// candidate inside top-k (plus the score guard for several objects).
pub fn linear_scan(t: &ScoreTable, q: &Query) -> usize {
    let n = t.candidates.len();
    let present: Vec<String> = top_k_hits(&t.scores_at(n - 1), q).into_iter().map(|(l, _)| l).collect();
    if present.is_empty() {
        return 0;
    }
    let satisfied = |i: usize| {
        let h = top_k_hits(&t.scores_at(i), q);
        let all_in = present.iter().all(|p| h.iter().any(|(l, _)| l == p));
        let guard = present.len() < 2 || {
            let sum: f64 = h.iter().map(|(_, s)| s).sum();
            sum >= GUARD_THRESHOLD && h.windows(2).all(|w| w[0].1 > 0.0 && w[1].1 / w[0].1 >= GUARD_THRESHOLD)
        };
        all_in && guard
    };
    (0..n).find(|&i| satisfied(i)).unwrap_or(n - 1)
}

fn candidates() -> impl Strategy<Value = Vec<Resolution>> {
    prop::collection::btree_set(1u32..=120, 1..=8).prop_map(|ks| ks.into_iter().map(|k| Resolution::new(16 * k, 9 * k)).collect())
}

fn score_table(cands: Vec<Resolution>) -> impl Strategy<Value = ScoreTable> {
    let n = cands.len();
    (
        prop::option::of(0.05f64..1.0),
        prop::option::of(0.05f64..1.0),
        prop::collection::vec(0.0f64..0.9, 0..=4),
        prop::collection::vec(0.05f64..=1.0, n),
    )
        .prop_map(move |(car, person, distractors, mut attenuation)| {
            attenuation.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let objects = [("car", car), ("person", person)].into_iter().filter_map(|(l, s)| s.map(|s| (l.to_string(), s))).collect();
            let names = ["bus", "dog", "tree", "bike"];
            ScoreTable {
                objects,
                distractors: distractors.into_iter().enumerate().map(|(i, s)| (names[i].to_string(), s)).collect(),
                attenuation,
                candidates: cands.clone(),
            }
        })
}

/// A run of keyframes sharing one candidate set, and the query they serve.
pub fn resize_scenario() -> impl Strategy<Value = (Vec<ScoreTable>, Query)> {
    let q = (0usize..3, 1usize..=4).prop_map(|(p, k)| query(["OBJECT(car)", "OBJECT(person)", "CONJ(car, person)"][p], k));
    candidates().prop_flat_map(move |c| (prop::collection::vec(score_table(c), 1..=6), q.clone()))
}

pub const CACHE_LABELS: [&str; 4] = ["bus", "car", "dog", "person"];

/// Classifier output for one keyframe, with scores on a coarse grid so ties
/// occur.
pub fn score_set() -> impl Strategy<Value = Vec<(String, f64)>> {
    prop::collection::btree_map(0usize..4, 1u32..10, 0..=4)
        .prop_map(|m| m.into_iter().map(|(l, s)| (CACHE_LABELS[l].to_string(), s as f64 / 10.0)).collect())
}

/// Batches as `(starts a new window unit, keyframe scores)`.
pub fn cache_steps() -> impl Strategy<Value = Vec<(bool, Vec<(String, f64)>)>> {
    prop::collection::vec((prop::bool::weighted(0.2), score_set()), 1..40)
}

/// Replays every earlier keyframe in the same window unit and forwards iff
/// some query object in top-k beats all of its earlier top-k scores.
#[derive(Debug, Default)]
pub struct CacheReplay {
    history: Vec<(u64, Vec<(String, f64)>)>,
}

impl CacheReplay {
    pub fn forward(&mut self, unit: u64, pairs: &[(String, f64)], q: &Query) -> bool {
        let h = top_k_hits(pairs, q);
        let improves = h.iter().any(|(label, score)| {
            let best = self
                .history
                .iter()
                .filter(|(u, _)| *u == unit)
                .flat_map(|(_, prev)| prev.iter())
                .filter(|(l, _)| l == label)
                .map(|(_, s)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            *score > best
        });
        self.history.push((unit, h));
        improves
    }
}

pub const DET_LABELS: [&str; 3] = ["car", "dog", "person"];

/// At most one detection per `(ts, label)`, scores on a coarse grid.
pub fn detections(max_ts: u64, max_len: usize) -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::btree_map((0..max_ts, 0usize..3), 1u32..6, 0..=max_len).prop_map(|m| {
        m.into_iter()
            .map(|((ts, l), s)| Detection { label: DET_LABELS[l].to_string(), score: s as f64 / 5.0, bbox: None, ts_ms: ts })
            .collect()
    })
}

pub fn windowed_query(pattern: &str, k: usize, range_ms: u64, slide_ms: u64) -> Query {
    let mut q = query(pattern, k);
    q.window = WindowSpec::from_millis(range_ms, slide_ms).unwrap();
    q
}

/// Query detections ranked inside top-k among their own frame, ordered by
/// `(ts, label)`.
pub fn eligible(dets: &[Detection], q: &Query) -> Vec<(u64, String)> {
    let stamps: BTreeSet<u64> = dets.iter().map(|d| d.ts_ms).collect();
    let mut out = Vec::new();
    for ts in stamps {
        let pairs: Vec<(String, f64)> = dets.iter().filter(|d| d.ts_ms == ts).map(|d| (d.label.clone(), d.score)).collect();
        let mut keep: Vec<String> = top_k_hits(&pairs, q).into_iter().map(|(l, _)| l).collect();
        keep.sort();
        out.extend(keep.into_iter().map(|l| (ts, l)));
    }
    out
}

/// First selection with consumption by exhaustive search: repeatedly take the
/// pair that completes earliest, breaking ties by the earliest partner.
pub fn first_consumed(cands: &[(u64, String)], q: &Query, consumed: &mut BTreeSet<(u64, String)>) -> Vec<Vec<(u64, String)>> {
    let free: Vec<&(u64, String)> = cands.iter().filter(|c| !consumed.contains(*c)).collect();
    match &q.pattern {
        Pattern::Object(_) => free
            .first()
            .map(|c| {
                consumed.insert((*c).clone());
                vec![vec![(*c).clone()]]
            })
            .unwrap_or_default(),
        Pattern::Conj(a, b) => {
            let mut out = Vec::new();
            let mut used: BTreeSet<usize> = BTreeSet::new();
            loop {
                let mut best: Option<(usize, usize)> = None;
                for (j, y) in free.iter().enumerate() {
                    for (i, x) in free.iter().enumerate().take(j) {
                        let pair = (x.1 == *a && y.1 == *b) || (x.1 == *b && y.1 == *a);
                        if !pair || used.contains(&i) || used.contains(&j) {
                            continue;
                        }
                        if best.is_none_or(|(bi, bj)| (j, i) < (bj, bi)) {
                            best = Some((i, j));
                        }
                    }
                }
                let Some((i, j)) = best else { break };
                used.insert(i);
                used.insert(j);
                consumed.insert(free[i].clone());
                consumed.insert(free[j].clone());
                out.push(vec![free[i].clone(), free[j].clone()]);
            }
            out
        }
    }
}

pub fn match_keys(m: &vidwin::cloud::EventMatch) -> Vec<(u64, String)> {
    m.contributors.iter().map(|c| (c.ts_ms, c.label.clone())).collect()
}

/// `ceil(u * n)` on the exact binary value of `u`, for `u` in [0, 1].
pub fn exact_ceil(u: f64, n: usize) -> usize {
    if u == 0.0 {
        return 0;
    }
    let bits = u.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = (bits & ((1 << 52) - 1)) | (1 << 52);
    let shift = (1075 - exp) as u32;
    (mantissa as u128 * n as u128).div_ceil(1u128 << shift) as usize
}

const CLUSTERS: [[f64; 6]; 3] = [[9.0, 1.0, 1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 9.0, 1.0, 2.0, 1.0], [1.0, 2.0, 1.0, 1.0, 1.0, 9.0]];

#[derive(Debug, Clone)]
pub struct Step {
    pub gap_ms: u64,
    pub cluster: usize,
    pub jitter: f64,
    pub iframe: bool,
}

fn step() -> impl Strategy<Value = Step> {
    (1u64..120, 0usize..3, 0.0f64..0.6, prop::bool::weighted(0.08)).prop_map(|(gap_ms, cluster, jitter, iframe)| Step {
        gap_ms,
        cluster,
        jitter,
        iframe,
    })
}

/// Surrogate frames whose histograms cluster around three scenes.
pub fn edge_frames(steps: &[Step]) -> Vec<Frame> {
    let mut ts = 1_000;
    steps
        .iter()
        .map(|s| {
            ts += s.gap_ms;
            let mut bins = CLUSTERS[s.cluster].to_vec();
            bins[1] += s.jitter;
            Frame::surrogate(0, ts, Resolution::new(32, 18), Histogram::new(bins).unwrap(), s.iframe, vec![]).unwrap()
        })
        .collect()
}

pub fn edge_window() -> impl Strategy<Value = (WindowSpec, usize)> {
    (100u64..1500, 1u64..=100, 1usize..12).prop_map(|(range, slide_pct, mb_max)| {
        let slide = (range * slide_pct / 100).max(1);
        (WindowSpec::from_millis(range, slide).unwrap(), mb_max)
    })
}

pub fn batch_all(frames: &[Frame], spec: WindowSpec, mb_max: usize) -> Vec<EmittedBatch> {
    let cfg = BatchingConfig { mb_max, ..BatchingConfig::default() };
    let mut w = EdgeWindow::new(spec, cfg);
    let mut out = Vec::new();
    for f in frames {
        out.extend(w.advance(f.clone()).unwrap());
    }
    out.extend(w.finish());
    out
}

pub fn edge_steps() -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec(step(), 1..300)
}

const REASONS: [SplitReason; 4] = [SplitReason::MaxSize, SplitReason::SimilarityBreak, SplitReason::Iframe, SplitReason::SlideEnd];

/// Label, score, and a box given as fractions of the frame.
pub type AnnSpec = (String, f64, Option<(f64, f64, f64, f64)>);

fn annotation() -> impl Strategy<Value = AnnSpec> {
    ("[a-z]{1,8}", 0.0f64..=1.0, prop::option::of((0.0f64..0.5, 0.0f64..0.5, 0.0f64..0.5, 0.0f64..0.5)))
}

fn realize(a: &AnnSpec, w: u32, h: u32) -> Annotation {
    let (w, h) = (w as f64, h as f64);
    let bbox = a.2.map(|(x, y, bw, bh)| BBox::new(x * w, y * h, bw * w, bh * h));
    Annotation::new(a.0.clone(), a.1, bbox).unwrap()
}

#[derive(Debug, Clone)]
pub struct WireSpec {
    pub w: u32,
    pub h: u32,
    pub pixels: bool,
    pub gaps: Vec<u64>,
    pub anns: Vec<Vec<AnnSpec>>,
    pub hists: Vec<Option<Vec<f64>>>,
    pub iframe_first: bool,
    pub copy_key: Vec<bool>,
    pub seed: Vec<u8>,
    pub reason: usize,
}

pub fn wire_spec() -> impl Strategy<Value = WireSpec> {
    (1u32..24, 1u32..16, any::<bool>(), 1usize..8).prop_flat_map(|(w, h, pixels, n)| {
        (
            prop::collection::vec(1u64..5000, n),
            prop::collection::vec(prop::collection::vec(annotation(), 0..3), n),
            prop::collection::vec(prop::option::of(prop::collection::vec(0.0f64..100.0, 1..12)), n),
            any::<bool>(),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<u8>(), (w * h * 3) as usize),
            0usize..4,
        )
            .prop_map(move |(gaps, anns, hists, iframe_first, copy_key, seed, reason)| WireSpec {
                w,
                h,
                pixels,
                gaps,
                anns,
                hists,
                iframe_first,
                copy_key,
                seed,
                reason,
            })
    })
}

/// Builds the batch; frames flagged in `copy_key` repeat the keyframe pixels.
pub fn wire_batch(s: &WireSpec) -> MicroBatch {
    let mut ts = 10_000;
    let frames =
        (0..s.gaps.len())
            .map(|i| {
                ts += s.gaps[i];
                let hist = s.hists[i].clone().map(|b| Histogram::new(b).unwrap());
                let px = s.pixels.then(|| {
                    if s.copy_key[i] {
                        s.seed.clone()
                    } else {
                        s.seed.iter().map(|b| b.wrapping_add(i as u8 * 37)).collect()
                    }
                });
                let hist = if px.is_none() && hist.is_none() { Some(Histogram::new(vec![1.0]).unwrap()) } else { hist };
                Frame::new(3, ts, s.w, s.h, px, hist, i == 0 && s.iframe_first, s.anns[i].iter().map(|a| realize(a, s.w, s.h)).collect())
                    .unwrap()
            })
            .collect();
    MicroBatch::new(42, 3, 7, frames, REASONS[s.reason], 70).unwrap()
}
