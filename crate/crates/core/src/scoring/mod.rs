//! Diarization scoring: DER with optimal one-to-one speaker mapping (no
//! collar, overlapped speech included), JER, and segment coverage/purity.
//!
//! All times are handled with exact interval-boundary arithmetic: the
//! union of every reference, hypothesis and UEM boundary splits the
//! timeline into elementary segments whose speaker sets are constant.

mod assignment;

use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

pub use assignment::max_weight_assignment;

use crate::annotation::{intersection_length, merge_intervals, Interval, TimedLabeling, Uem};
use crate::error::{Error, Result};

/// Scores of one conversation. Rates are percentages of scored reference
/// speaker time (overlapped speech counted once per speaker).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileScore {
    pub uri: String,
    pub der: f64,
    pub miss: f64,
    pub falarm: f64,
    pub spkerr: f64,
    pub jer: f64,
    pub ref_time: f64,
    pub miss_time: f64,
    pub falarm_time: f64,
    pub spkerr_time: f64,
    /// Reference ↔ hypothesis speaker pairs with positive mapped overlap.
    pub mapping: Vec<(String, String)>,
    pub coverage: Option<f64>,
    pub purity: Option<f64>,
}

/// Aggregate over files. `pooled` sums error times before dividing;
/// `file_mean` averages the per-file percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub der: f64,
    pub miss: f64,
    pub falarm: f64,
    pub spkerr: f64,
    pub jer: f64,
    pub coverage: Option<f64>,
    pub purity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub files: Vec<FileScore>,
    pub pooled: Aggregate,
    pub file_mean: Aggregate,
}

/// Per-speaker merged timelines restricted to the scored regions.
struct Speakers {
    names: Vec<String>,
    timelines: Vec<Vec<Interval>>,
}

impl Speakers {
    fn from_labeling(lab: &TimedLabeling, uem: Option<&[Interval]>) -> Self {
        let mut names = lab.labels();
        names.sort();
        let timelines = names
            .iter()
            .map(|n| {
                let tl = lab.timeline_of(n);
                match uem {
                    Some(u) => clip(&tl, u),
                    None => tl,
                }
            })
            .collect();
        Self { names, timelines }
    }

    fn active_at(&self, t: f64) -> Vec<usize> {
        self.timelines
            .iter()
            .enumerate()
            .filter(|(_, tl)| covers(tl, t))
            .map(|(i, _)| i)
            .collect()
    }
}

fn covers(merged: &[Interval], t: f64) -> bool {
    let idx = merged.partition_point(|iv| iv.end <= t);
    idx < merged.len() && merged[idx].start <= t
}

fn clip(timeline: &[Interval], regions: &[Interval]) -> Vec<Interval> {
    let mut out = Vec::new();
    for a in timeline {
        for r in regions {
            let s = a.start.max(r.start);
            let e = a.end.min(r.end);
            if e > s {
                out.push(Interval::new(s, e));
            }
        }
    }
    merge_intervals(out)
}

fn length(tl: &[Interval]) -> f64 {
    tl.iter().map(Interval::duration).sum()
}

/// Elementary segments `(duration, active refs, active hyps)`.
fn lattice(
    refs: &Speakers,
    hyps: &Speakers,
    uem: Option<&[Interval]>,
) -> Vec<(f64, Vec<usize>, Vec<usize>)> {
    let mut bounds: Vec<f64> = Vec::new();
    for tl in refs.timelines.iter().chain(&hyps.timelines) {
        for iv in tl {
            bounds.push(iv.start);
            bounds.push(iv.end);
        }
    }
    if let Some(u) = uem {
        for iv in u {
            bounds.push(iv.start);
            bounds.push(iv.end);
        }
    }
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    let mut out = Vec::with_capacity(bounds.len());
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        if uem.is_some_and(|u| !covers(u, mid)) {
            continue;
        }
        let r = refs.active_at(mid);
        let h = hyps.active_at(mid);
        if r.is_empty() && h.is_empty() {
            continue;
        }
        out.push((b - a, r, h));
    }
    out
}

fn uem_regions<'a>(uem: Option<&'a Uem>, uri: &str) -> Option<&'a [Interval]> {
    uem.filter(|u| u.uri == uri).map(|u| u.regions.as_slice())
}

/// Optimal speaker mapping maximizing total co-active time.
fn optimal_mapping(
    refs: &Speakers,
    hyps: &Speakers,
    segs: &[(f64, Vec<usize>, Vec<usize>)],
) -> Vec<Option<usize>> {
    let mut overlap = vec![vec![0.0; hyps.names.len()]; refs.names.len()];
    for (d, r, h) in segs {
        for &ri in r {
            for &hi in h {
                overlap[ri][hi] += d;
            }
        }
    }
    max_weight_assignment(&overlap)
        .into_iter()
        .enumerate()
        .map(|(ri, m)| m.filter(|&hi| overlap[ri][hi] > 0.0))
        .collect()
}

/// DER and JER of one hypothesis against its reference.
///
/// A UEM whose URI differs from the reference is ignored.
pub fn der(reference: &TimedLabeling, hypothesis: &TimedLabeling, uem: Option<&Uem>) -> Result<FileScore> {
    let regions = uem_regions(uem, &reference.uri);
    let refs = Speakers::from_labeling(reference, regions);
    let hyps = Speakers::from_labeling(hypothesis, regions);
    let segs = lattice(&refs, &hyps, regions);

    let ref_time: f64 = segs.iter().map(|(d, r, _)| d * r.len() as f64).sum();
    if ref_time <= 0.0 {
        return Err(Error::Undefined(format!(
            "no reference speech in `{}`",
            reference.uri
        )));
    }
    let mapping = optimal_mapping(&refs, &hyps, &segs);

    let (mut miss, mut fa, mut conf) = (0.0, 0.0, 0.0);
    for (d, r, h) in &segs {
        let n_ref = r.len();
        let n_hyp = h.len();
        let correct = r
            .iter()
            .filter(|&&ri| mapping[ri].is_some_and(|hi| h.contains(&hi)))
            .count();
        miss += d * n_ref.saturating_sub(n_hyp) as f64;
        fa += d * n_hyp.saturating_sub(n_ref) as f64;
        conf += d * (n_ref.min(n_hyp) - correct) as f64;
    }

    let jer = jaccard_error(&refs, &hyps, &mapping);
    let pct = |x: f64| 100.0 * x / ref_time;
    Ok(FileScore {
        uri: reference.uri.clone(),
        der: pct(miss) + pct(fa) + pct(conf),
        miss: pct(miss),
        falarm: pct(fa),
        spkerr: pct(conf),
        jer,
        ref_time,
        miss_time: miss,
        falarm_time: fa,
        spkerr_time: conf,
        mapping: mapping
            .iter()
            .enumerate()
            .filter_map(|(ri, m)| m.map(|hi| (refs.names[ri].clone(), hyps.names[hi].clone())))
            .collect(),
        coverage: None,
        purity: None,
    })
}

fn jaccard_error(refs: &Speakers, hyps: &Speakers, mapping: &[Option<usize>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (ri, tl) in refs.timelines.iter().enumerate() {
        let ref_len = length(tl);
        if ref_len <= 0.0 {
            continue;
        }
        count += 1;
        total += match mapping[ri] {
            Some(hi) => {
                let htl = &hyps.timelines[hi];
                let inter = intersection_length(tl, htl);
                let union = ref_len + length(htl) - inter;
                1.0 - inter / union
            }
            None => 1.0,
        };
    }
    if count == 0 {
        0.0
    } else {
        100.0 * total / count as f64
    }
}

/// JER (percent) using the DER-optimal mapping.
pub fn jer(reference: &TimedLabeling, hypothesis: &TimedLabeling, uem: Option<&Uem>) -> Result<f64> {
    der(reference, hypothesis, uem).map(|s| s.jer)
}

/// Segment coverage and purity of `segments` against reference turns.
///
/// Empty `segments` give `(0, 1)`.
pub fn coverage_purity(reference: &TimedLabeling, segments: &[Interval]) -> Result<(f64, f64)> {
    let turn_time: f64 = reference.turns.iter().map(|t| t.duration).sum();
    if turn_time <= 0.0 {
        return Err(Error::Undefined(format!(
            "no reference turns in `{}`",
            reference.uri
        )));
    }
    let seg_time: f64 = segments.iter().map(Interval::duration).sum();
    if segments.is_empty() || seg_time <= 0.0 {
        warn!("coverage/purity of `{}`: no segments, purity set to 1", reference.uri);
        return Ok((0.0, 1.0));
    }
    let coverage = reference
        .turns
        .iter()
        .map(|t| {
            let iv = t.interval();
            segments.iter().map(|s| s.overlap(&iv)).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / turn_time;

    let timelines: Vec<Vec<Interval>> = reference
        .labels()
        .iter()
        .map(|l| reference.timeline_of(l))
        .collect();
    let purity = segments
        .iter()
        .map(|s| {
            timelines
                .iter()
                .map(|tl| intersection_length(tl, std::slice::from_ref(s)))
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / seg_time;
    Ok((coverage.clamp(0.0, 1.0), purity.clamp(0.0, 1.0)))
}

impl ScoreReport {
    pub fn from_files(files: Vec<FileScore>) -> Self {
        let ref_time: f64 = files.iter().map(|f| f.ref_time).sum();
        let pct = |x: f64| if ref_time > 0.0 { 100.0 * x / ref_time } else { 0.0 };
        let miss = pct(files.iter().map(|f| f.miss_time).sum());
        let falarm = pct(files.iter().map(|f| f.falarm_time).sum());
        let spkerr = pct(files.iter().map(|f| f.spkerr_time).sum());
        let n = files.len().max(1) as f64;
        let mean = |g: fn(&FileScore) -> f64| files.iter().map(g).sum::<f64>() / n;
        let mean_opt = |g: fn(&FileScore) -> Option<f64>| {
            let v: Vec<f64> = files.iter().filter_map(g).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let cov = mean_opt(|f| f.coverage);
        let pur = mean_opt(|f| f.purity);
        let pooled = Aggregate {
            der: miss + falarm + spkerr,
            miss,
            falarm,
            spkerr,
            // JER has no pooled form; it is a mean over speakers per file
            jer: mean(|f| f.jer),
            coverage: cov,
            purity: pur,
        };
        let file_mean = Aggregate {
            der: mean(|f| f.der),
            miss: mean(|f| f.miss),
            falarm: mean(|f| f.falarm),
            spkerr: mean(|f| f.spkerr),
            jer: mean(|f| f.jer),
            coverage: cov,
            purity: pur,
        };
        Self {
            files,
            pooled,
            file_mean,
        }
    }

    /// Fixed-width text table with per-file rows and aggregate footers.
    pub fn to_table(&self) -> String {
        let width = self
            .files
            .iter()
            .map(|f| f.uri.len())
            .max()
            .unwrap_or(0)
            .max(16);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}",
            "uri", "DER", "MISS", "FA", "SPKERR", "JER", "COV", "PUR"
        );
        let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        for f in &self.files {
            let _ = writeln!(
                s,
                "{:<width$} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>6} {:>6}",
                f.uri,
                f.der,
                f.miss,
                f.falarm,
                f.spkerr,
                f.jer,
                opt(f.coverage),
                opt(f.purity)
            );
        }
        for (name, a) in [("*** POOLED ***", &self.pooled), ("*** FILE MEAN ***", &self.file_mean)] {
            let _ = writeln!(
                s,
                "{:<width$} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>6} {:>6}",
                name,
                a.der,
                a.miss,
                a.falarm,
                a.spkerr,
                a.jer,
                opt(a.coverage),
                opt(a.purity)
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("score report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab(uri: &str, turns: &[(f64, f64, &str)]) -> TimedLabeling {
        let mut l = TimedLabeling::new(uri);
        for &(s, e, n) in turns {
            l.push(s, e - s, n);
        }
        l
    }

    #[test]
    fn identity_is_zero() {
        let r = lab("u", &[(0.0, 3.0, "a"), (2.0, 5.0, "b"), (6.0, 7.5, "a")]);
        let s = der(&r, &r, None).unwrap();
        assert_eq!(s.der, 0.0);
        assert_eq!(s.jer, 0.0);
    }

    #[test]
    fn split_hypothesis_fixture() {
        let r = lab("u", &[(0.0, 10.0, "A")]);
        let h = lab("u", &[(0.0, 8.0, "X"), (8.0, 10.0, "Y")]);
        let s = der(&r, &h, None).unwrap();
        assert!((s.der - 20.0).abs() < 1e-6);
        assert!((s.spkerr - 20.0).abs() < 1e-6);
        assert_eq!(s.mapping, vec![("A".to_string(), "X".to_string())]);
    }

    #[test]
    fn overlap_multiplicity_fixture() {
        let r = lab("u", &[(0.0, 10.0, "A"), (0.0, 10.0, "B")]);
        let h = lab("u", &[(0.0, 10.0, "X")]);
        let s = der(&r, &h, None).unwrap();
        assert!((s.ref_time - 20.0).abs() < 1e-12);
        assert!((s.miss_time - 10.0).abs() < 1e-12);
        assert!((s.der - 50.0).abs() < 1e-6);
        // one mapped speaker with Jaccard error 0, one unmapped
        assert!((s.jer - 50.0).abs() < 1e-6);
    }

    #[test]
    fn jaccard_half() {
        let r = lab("u", &[(0.0, 10.0, "A")]);
        let h = lab("u", &[(0.0, 5.0, "X")]);
        assert!((jer(&r, &h, None).unwrap() - 50.0).abs() < 1e-6);
    }

    #[test]
    fn uem_restricts_scoring() {
        let r = lab("u", &[(0.0, 10.0, "A")]);
        let h = lab("u", &[(0.0, 5.0, "X")]);
        let uem = Uem {
            uri: "u".into(),
            regions: vec![Interval::new(0.0, 5.0)],
        };
        let s = der(&r, &h, Some(&uem)).unwrap();
        assert_eq!(s.der, 0.0);
        assert!((s.ref_time - 5.0).abs() < 1e-12);
    }

    #[test]
    fn false_alarm_counts() {
        let r = lab("u", &[(0.0, 4.0, "A")]);
        let h = lab("u", &[(0.0, 6.0, "X")]);
        let s = der(&r, &h, None).unwrap();
        assert!((s.falarm - 50.0).abs() < 1e-9);
    }

    #[test]
    fn empty_reference_is_undefined() {
        let r = TimedLabeling::new("u");
        let h = lab("u", &[(0.0, 1.0, "X")]);
        assert!(matches!(der(&r, &h, None), Err(Error::Undefined(_))));
    }

    #[test]
    fn coverage_purity_fixtures() {
        let r = lab("u", &[(0.0, 5.0, "A"), (5.0, 10.0, "B")]);
        let exact = [Interval::new(0.0, 5.0), Interval::new(5.0, 10.0)];
        assert_eq!(coverage_purity(&r, &exact).unwrap(), (1.0, 1.0));
        let (_, p) = coverage_purity(&r, &[Interval::new(0.0, 10.0)]).unwrap();
        assert!((p - 0.5).abs() < 1e-12);

        let one = lab("u", &[(0.0, 10.0, "A")]);
        let (c, _) = coverage_purity(&one, &[Interval::new(0.0, 6.0), Interval::new(6.0, 10.0)]).unwrap();
        assert!((c - 0.6).abs() < 1e-12);
        assert_eq!(coverage_purity(&one, &[]).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn report_aggregates() {
        let r = lab("u", &[(0.0, 10.0, "A")]);
        let h = lab("u", &[(0.0, 8.0, "X"), (8.0, 10.0, "Y")]);
        let r2 = lab("v", &[(0.0, 30.0, "A")]);
        let files = vec![der(&r, &h, None).unwrap(), der(&r2, &r2, None).unwrap()];
        let rep = ScoreReport::from_files(files);
        assert!((rep.file_mean.der - 10.0).abs() < 1e-9);
        assert!((rep.pooled.der - 5.0).abs() < 1e-9);
        assert!(rep.to_table().contains("*** POOLED ***"));
        let back: ScoreReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
    }
}
