//! Speech-region splitting, change-point cutting with a minimum segment
//! duration, a feature-distance change detector, and uniform
//! subsegmentation with overlapping windows.

use log::warn;
use serde::{Deserialize, Serialize};

pub use crate::annotation::TimedLabeling;
use crate::annotation::{merge_intervals, Interval};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scalar::Scalar;

/// Minimum segment duration used for clustering, in seconds.
pub const MIN_SEGMENT_DURATION: f64 = 0.5;
/// Non-maximum-suppression radius for change-point peaks, in seconds.
pub const PEAK_SUPPRESSION_RADIUS: f64 = 0.25;

const EPS: f64 = 1e-9;

/// Labels that mark non-speech turns in a SAD labeling.
const NON_SPEECH: &[&str] = &["non-speech", "nonspeech", "non_speech", "sil", "silence", "ns"];

/// Probability of a speaker change sampled on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeScoreTrack {
    pub scores: Vec<f64>,
    /// Seconds between consecutive scores.
    pub step: f64,
    /// Time of the first score.
    pub offset: f64,
}

impl ChangeScoreTrack {
    pub fn new(scores: Vec<f64>, step: f64, offset: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::Config(format!("score step must be positive, got {step}")));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Config(format!("change score {bad} outside [0, 1]")));
        }
        Ok(Self {
            scores,
            step,
            offset,
        })
    }

    pub fn empty(step: f64) -> Self {
        Self {
            scores: Vec::new(),
            step,
            offset: 0.0,
        }
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.offset + i as f64 * self.step
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn covers(&self, iv: &Interval) -> bool {
        !self.scores.is_empty()
            && self.offset <= iv.start + self.step + EPS
            && self.time(self.scores.len() - 1) >= iv.end - self.step - EPS
    }
}

/// One clustering unit, inside SAD region `parent_region`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub onset: f64,
    pub duration: f64,
    pub parent_region: usize,
}

impl Segment {
    #[inline]
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.onset, self.end())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentList {
    pub uri: String,
    pub segments: Vec<Segment>,
    /// Pieces too short to cluster; resegmentation labels them.
    pub short_leftovers: Vec<Interval>,
}

impl SegmentList {
    pub fn spans(&self) -> Vec<Interval> {
        self.segments.iter().map(Segment::interval).collect()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

fn is_speech(label: &str) -> bool {
    !NON_SPEECH.iter().any(|n| n.eq_ignore_ascii_case(label))
}

/// Merged speech timeline of a SAD labeling.
pub fn speech_timeline(sad: &TimedLabeling) -> Vec<Interval> {
    merge_intervals(
        sad.turns
            .iter()
            .filter(|t| is_speech(&t.label))
            .map(|t| t.interval())
            .collect(),
    )
}

/// One segment per maximal speech region.
pub fn speech_regions(sad: &TimedLabeling) -> SegmentList {
    SegmentList {
        uri: sad.uri.clone(),
        segments: speech_timeline(sad)
            .into_iter()
            .enumerate()
            .map(|(i, iv)| Segment {
                onset: iv.start,
                duration: iv.duration(),
                parent_region: i,
            })
            .collect(),
        short_leftovers: Vec::new(),
    }
}

/// Change points of one region: local maxima above `threshold`, strongest
/// first, suppressing anything within the suppression radius of a kept peak.
fn pick_peaks(region: &Interval, scores: &ChangeScoreTrack, threshold: f64) -> Vec<f64> {
    let n = scores.scores.len();
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for i in 0..n {
        let t = scores.time(i);
        if t <= region.start + EPS || t >= region.end - EPS {
            continue;
        }
        let s = scores.scores[i];
        let left = if i > 0 { scores.scores[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < n { scores.scores[i + 1] } else { f64::NEG_INFINITY };
        // plateaus keep their first sample
        if s > threshold && s > left && s >= right {
            candidates.push((s, t));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
    let mut kept: Vec<f64> = Vec::new();
    for (_, t) in candidates {
        if kept
            .iter()
            .all(|&k| (k - t).abs() > PEAK_SUPPRESSION_RADIUS - EPS)
        {
            kept.push(t);
        }
    }
    kept.sort_by(f64::total_cmp);
    kept
}

/// Splits regions at change-score peaks; pieces shorter than `min_duration`
/// move to `short_leftovers`.
pub fn cut_at_changes(
    regions: &SegmentList,
    scores: &ChangeScoreTrack,
    threshold: f64,
    min_duration: f64,
) -> Result<SegmentList> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold {threshold} outside [0, 1]")));
    }
    if !(min_duration > 0.0) {
        return Err(Error::Config(format!(
            "min_duration must be positive, got {min_duration}"
        )));
    }
    let mut out = SegmentList {
        uri: regions.uri.clone(),
        segments: Vec::new(),
        short_leftovers: regions.short_leftovers.clone(),
    };
    for seg in &regions.segments {
        let iv = seg.interval();
        let cuts = if scores.covers(&iv) {
            pick_peaks(&iv, scores, threshold)
        } else {
            warn!(
                "{}: change scores do not cover region [{:.3}, {:.3}), left uncut",
                regions.uri, iv.start, iv.end
            );
            Vec::new()
        };
        let mut bounds = Vec::with_capacity(cuts.len() + 2);
        bounds.push(iv.start);
        bounds.extend(cuts);
        bounds.push(iv.end);
        for w in bounds.windows(2) {
            let piece = Interval::new(w[0], w[1]);
            if piece.duration() + EPS < min_duration {
                out.short_leftovers.push(piece);
            } else {
                out.segments.push(Segment {
                    onset: piece.start,
                    duration: piece.duration(),
                    parent_region: seg.parent_region,
                });
            }
        }
    }
    Ok(out)
}

/// Moves segments shorter than `min_duration` into `short_leftovers`.
pub fn drop_short(segments: &SegmentList, min_duration: f64) -> SegmentList {
    let mut out = SegmentList {
        uri: segments.uri.clone(),
        segments: Vec::new(),
        short_leftovers: segments.short_leftovers.clone(),
    };
    for s in &segments.segments {
        if s.duration + EPS < min_duration {
            out.short_leftovers.push(s.interval());
        } else {
            out.segments.push(*s);
        }
    }
    out
}

/// Change scores from the symmetric divergence between diagonal Gaussians
/// fitted to the `window` seconds left and right of every frame boundary,
/// mapped to `[0, 1)` as `1 - exp(-divergence / dim)`.
pub fn fallback_change_scores<T: Scalar>(features: &FeatureMatrix<T>, window: f64) -> ChangeScoreTrack {
    let shift = features.frame_shift;
    let n = features.frames.rows();
    let dim = features.frames.cols();
    let w = (window / shift).round().max(1.0) as usize;
    if n < 2 * w || dim == 0 {
        warn!("fallback change detector: {n} frames is shorter than two windows of {w}");
        return ChangeScoreTrack::empty(shift);
    }
    // prefix sums make every window statistic O(dim)
    let mut sum = vec![0.0f64; (n + 1) * dim];
    let mut sq = vec![0.0f64; (n + 1) * dim];
    for t in 0..n {
        let row = features.frames.row(t);
        for d in 0..dim {
            let x = row[d].as_f64();
            sum[(t + 1) * dim + d] = sum[t * dim + d] + x;
            sq[(t + 1) * dim + d] = sq[t * dim + d] + x * x;
        }
    }
    let stats = |a: usize, b: usize, d: usize| {
        let len = (b - a) as f64;
        let m = (sum[b * dim + d] - sum[a * dim + d]) / len;
        let v = ((sq[b * dim + d] - sq[a * dim + d]) / len - m * m).max(0.0);
        (m, v)
    };
    let floor = 1e-6;
    let mut scores = Vec::with_capacity(n - 2 * w + 1);
    for t in w..=(n - w) {
        let mut div = 0.0;
        for d in 0..dim {
            let (ml, vl) = stats(t - w, t, d);
            let (mr, vr) = stats(t, t + w, d);
            let (vl, vr) = (vl.max(floor), vr.max(floor));
            let diff = ml - mr;
            div += 0.5 * (vl / vr + vr / vl - 2.0 + diff * diff * (1.0 / vl + 1.0 / vr));
        }
        scores.push((1.0 - (-div / dim as f64).exp()).clamp(0.0, 1.0));
    }
    // boundary between frames t-1 and t sits half a shift before frame t's centre
    let offset = features.frame_time(w) - 0.5 * shift;
    ChangeScoreTrack {
        scores,
        step: shift,
        offset,
    }
}

/// Replaces segments longer than `max_len` by windows of `max_len` seconds
/// starting every `max_len - overlap` seconds. A final window shorter than
/// `min_len` is shifted left to end at the segment end.
pub fn uniform_subsegment(
    segments: &SegmentList,
    max_len: f64,
    overlap: f64,
    min_len: f64,
) -> Result<SegmentList> {
    if !(overlap >= 0.0 && overlap < max_len) || !(min_len > 0.0 && min_len <= max_len) {
        return Err(Error::Config(format!(
            "invalid subsegment geometry: max_len {max_len}, overlap {overlap}, min_len {min_len}"
        )));
    }
    let hop = max_len - overlap;
    let mut out = SegmentList {
        uri: segments.uri.clone(),
        segments: Vec::new(),
        short_leftovers: segments.short_leftovers.clone(),
    };
    for seg in &segments.segments {
        let (start, end) = (seg.onset, seg.end());
        if seg.duration <= max_len + EPS {
            out.segments.push(*seg);
            continue;
        }
        let mut k = 0usize;
        loop {
            let s = start + k as f64 * hop;
            if s + max_len < end - EPS {
                out.segments.push(Segment {
                    onset: s,
                    duration: max_len,
                    parent_region: seg.parent_region,
                });
                k += 1;
                continue;
            }
            let tail = end - s;
            let onset = if tail + EPS < min_len { end - max_len } else { s };
            out.segments.push(Segment {
                onset,
                duration: end - onset,
                parent_region: seg.parent_region,
            });
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureKind, FeatureMatrix};
    use crate::linalg::Matrix;
    use proptest::prelude::*;

    fn sad(spans: &[(f64, f64)]) -> TimedLabeling {
        let mut l = TimedLabeling::new("u");
        for &(s, e) in spans {
            l.push(s, e - s, "speech");
        }
        l
    }

    fn spans(list: &SegmentList) -> Vec<(f64, f64)> {
        list.segments
            .iter()
            .map(|s| ((s.onset * 1e6).round() / 1e6, (s.end() * 1e6).round() / 1e6))
            .collect()
    }

    fn one_region(start: f64, end: f64) -> SegmentList {
        speech_regions(&sad(&[(start, end)]))
    }

    fn peak_track(len: f64, peak_t: f64, peak: f64) -> ChangeScoreTrack {
        let step = 0.01;
        let n = (len / step).round() as usize + 1;
        let scores = (0..n)
            .map(|i| {
                let t = i as f64 * step;
                if (t - peak_t).abs() < step / 2.0 {
                    peak
                } else {
                    0.1
                }
            })
            .collect();
        ChangeScoreTrack::new(scores, step, 0.0).unwrap()
    }

    #[test]
    fn adjacent_speech_merges() {
        assert_eq!(spans(&speech_regions(&sad(&[(0.0, 5.0), (5.0, 7.0)]))), vec![(0.0, 7.0)]);
        assert_eq!(
            spans(&speech_regions(&sad(&[(0.0, 2.0), (3.0, 4.0)]))),
            vec![(0.0, 2.0), (3.0, 4.0)]
        );
        assert!(speech_regions(&TimedLabeling::new("u")).is_empty());
    }

    #[test]
    fn non_speech_turns_ignored() {
        let mut l = sad(&[(0.0, 2.0)]);
        l.push(2.0, 1.0, "non-speech");
        assert_eq!(spans(&speech_regions(&l)), vec![(0.0, 2.0)]);
    }

    #[test]
    fn single_cut() {
        let r = one_region(0.0, 4.0);
        let cut = cut_at_changes(&r, &peak_track(4.0, 2.0, 0.9), 0.5, 0.5).unwrap();
        assert_eq!(spans(&cut), vec![(0.0, 2.0), (2.0, 4.0)]);
        let uncut = cut_at_changes(&r, &peak_track(4.0, 2.0, 0.9), 0.95, 0.5).unwrap();
        assert_eq!(spans(&uncut), vec![(0.0, 4.0)]);
    }

    #[test]
    fn short_piece_goes_to_leftovers() {
        let r = one_region(0.0, 1.2);
        let cut = cut_at_changes(&r, &peak_track(1.2, 0.3, 0.9), 0.5, 0.5).unwrap();
        assert_eq!(spans(&cut), vec![(0.3, 1.2)]);
        assert_eq!(cut.short_leftovers.len(), 1);
        assert!((cut.short_leftovers[0].end - 0.3).abs() < 1e-9);
    }

    #[test]
    fn uncovered_region_stays_whole() {
        let r = one_region(10.0, 14.0);
        let cut = cut_at_changes(&r, &peak_track(4.0, 2.0, 0.9), 0.5, 0.5).unwrap();
        assert_eq!(spans(&cut), vec![(10.0, 14.0)]);
    }

    #[test]
    fn suppression_keeps_strongest() {
        let mut tr = peak_track(4.0, 2.0, 0.9);
        tr.scores[210] = 0.8; // 2.1 s, inside the radius
        tr.scores[300] = 0.7; // 3.0 s, outside
        let cut = cut_at_changes(&one_region(0.0, 4.0), &tr, 0.5, 0.5).unwrap();
        assert_eq!(spans(&cut), vec![(0.0, 2.0), (2.0, 3.0), (3.0, 4.0)]);
    }

    #[test]
    fn bad_parameters() {
        let r = one_region(0.0, 4.0);
        let tr = peak_track(4.0, 2.0, 0.9);
        assert!(cut_at_changes(&r, &tr, 1.5, 0.5).is_err());
        assert!(cut_at_changes(&r, &tr, 0.5, 0.0).is_err());
        assert!(uniform_subsegment(&r, 2.0, 2.0, 0.5).is_err());
        assert!(uniform_subsegment(&r, 2.0, 1.0, 3.0).is_err());
        assert!(ChangeScoreTrack::new(vec![1.2], 0.01, 0.0).is_err());
    }

    #[test]
    fn subsegment_fixtures() {
        let two = uniform_subsegment(&one_region(0.0, 5.0), 2.0, 1.0, 0.5).unwrap();
        assert_eq!(spans(&two), vec![(0.0, 2.0), (1.0, 3.0), (2.0, 4.0), (3.0, 5.0)]);
        let pass = uniform_subsegment(&one_region(0.0, 1.5), 2.0, 1.0, 0.5).unwrap();
        assert_eq!(spans(&pass), vec![(0.0, 1.5)]);
        let kaldi = uniform_subsegment(&one_region(0.0, 1.6), 1.5, 0.75, 0.5).unwrap();
        assert_eq!(spans(&kaldi), vec![(0.0, 1.5), (0.75, 1.6)]);
    }

    #[test]
    fn short_tail_shifts_left() {
        let out = uniform_subsegment(&one_region(0.0, 2.1), 2.0, 0.0, 0.5).unwrap();
        assert_eq!(spans(&out), vec![(0.0, 2.0), (0.1, 2.1)]);
    }

    fn feats(rows: Vec<Vec<f64>>) -> FeatureMatrix<f64> {
        FeatureMatrix {
            frames: Matrix::from_rows(&rows),
            frame_shift: 0.01,
            frame_length: 0.025,
            kind: FeatureKind::LfccCmn,
        }
    }

    #[test]
    fn fallback_constant_is_zero() {
        let f = feats(vec![vec![1.0, 2.0]; 400]);
        let tr = fallback_change_scores(&f, 1.0);
        assert!(!tr.is_empty());
        assert!(tr.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn fallback_too_short_is_empty() {
        let f = feats(vec![vec![1.0]; 150]);
        assert!(fallback_change_scores(&f, 1.0).is_empty());
    }

    proptest! {
        #[test]
        fn cut_pieces_respect_min_duration(
            len in 0.2f64..20.0,
            raw in proptest::collection::vec(0.0f64..1.0, 10..200),
            threshold in 0.0f64..1.0,
        ) {
            let r = one_region(0.0, len);
            let step = len / (raw.len() - 1) as f64;
            let tr = ChangeScoreTrack::new(raw, step, 0.0).unwrap();
            let cut = cut_at_changes(&r, &tr, threshold, MIN_SEGMENT_DURATION).unwrap();
            for s in &cut.segments {
                prop_assert!(s.duration >= MIN_SEGMENT_DURATION - 1e-9);
            }
            for l in &cut.short_leftovers {
                prop_assert!(l.duration() < MIN_SEGMENT_DURATION);
            }
            let total: f64 = cut.segments.iter().map(|s| s.duration).sum::<f64>()
                + cut.short_leftovers.iter().map(Interval::duration).sum::<f64>();
            prop_assert!((total - len).abs() < 1e-9);
        }
    }
}
