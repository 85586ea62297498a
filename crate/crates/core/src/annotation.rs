//! Timed speaker/speech annotations and their text formats (RTTM, UEM,
//! `<onset> <end>` label files).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open time interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    #[inline]
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    pub fn contains(&self, other: &Interval, tol: f64) -> bool {
        other.start >= self.start - tol && other.end <= self.end + tol
    }
}

/// Sorts and merges touching or overlapping intervals.
pub fn merge_intervals(mut intervals: Vec<Interval>) -> Vec<Interval> {
    intervals.retain(|iv| iv.end > iv.start);
    intervals.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    let mut out: Vec<Interval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match out.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => out.push(iv),
        }
    }
    out
}

/// Total length of the intersection of two merged interval lists.
pub fn intersection_length(a: &[Interval], b: &[Interval]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        total += a[i].overlap(&b[j]);
        if a[i].end < b[j].end {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// One labeled span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub onset: f64,
    pub duration: f64,
    pub label: String,
}

impl Turn {
    pub fn new(onset: f64, duration: f64, label: impl Into<String>) -> Self {
        Self {
            onset,
            duration,
            label: label.into(),
        }
    }

    #[inline]
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.onset, self.end())
    }
}

/// Labeled turns of one conversation: SAD input, hypothesis or reference.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimedLabeling {
    pub uri: String,
    pub turns: Vec<Turn>,
}

impl TimedLabeling {
    pub fn new(uri: impl Into<String>) -> Self {
        Self {
            uri: uri.into(),
            turns: Vec::new(),
        }
    }

    pub fn with_turns(uri: impl Into<String>, turns: Vec<Turn>) -> Result<Self> {
        let lab = Self {
            uri: uri.into(),
            turns,
        };
        lab.validate()?;
        Ok(lab)
    }

    pub fn push(&mut self, onset: f64, duration: f64, label: impl Into<String>) {
        self.turns.push(Turn::new(onset, duration, label));
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.turns.iter().enumerate() {
            if !(t.onset.is_finite() && t.onset >= 0.0) {
                return Err(Error::format(
                    format!("turn {i} of {}", self.uri),
                    format!("onset {} must be finite and non-negative", t.onset),
                ));
            }
            if !(t.duration.is_finite() && t.duration > 0.0) {
                return Err(Error::format(
                    format!("turn {i} of {}", self.uri),
                    format!("duration {} must be positive", t.duration),
                ));
            }
        }
        Ok(())
    }

    /// Sorts turns by onset, then duration, then label.
    pub fn sort(&mut self) {
        self.turns.sort_by(|a, b| {
            a.onset
                .total_cmp(&b.onset)
                .then(a.duration.total_cmp(&b.duration))
                .then_with(|| a.label.cmp(&b.label))
        });
    }

    /// Distinct labels in first-seen order.
    pub fn labels(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for t in &self.turns {
            if !seen.iter().any(|l| l == &t.label) {
                seen.push(t.label.clone());
            }
        }
        seen
    }

    /// Merged timeline of the turns carrying `label`.
    pub fn timeline_of(&self, label: &str) -> Vec<Interval> {
        merge_intervals(
            self.turns
                .iter()
                .filter(|t| t.label == label)
                .map(Turn::interval)
                .collect(),
        )
    }

    /// Merged timeline of all turns regardless of label.
    pub fn timeline(&self) -> Vec<Interval> {
        merge_intervals(self.turns.iter().map(Turn::interval).collect())
    }

    /// Parses RTTM `SPEAKER` lines; other record types are skipped.
    /// Lines for other URIs are kept only when `uri` is `None`.
    pub fn parse_rttm(text: &str, uri: Option<&str>) -> Result<Vec<TimedLabeling>> {
        let mut by_uri: Vec<TimedLabeling> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f[0] != "SPEAKER" {
                continue;
            }
            if f.len() < 8 {
                return Err(Error::format(
                    format!("rttm line {}", lineno + 1),
                    "expected at least 8 fields",
                ));
            }
            if uri.is_some_and(|u| u != f[1]) {
                continue;
            }
            let onset = parse_f64(f[3], lineno)?;
            let dur = parse_f64(f[4], lineno)?;
            if dur <= 0.0 {
                continue;
            }
            let turn = Turn::new(onset, dur, f[7]);
            match by_uri.iter_mut().find(|l| l.uri == f[1]) {
                Some(l) => l.turns.push(turn),
                None => by_uri.push(TimedLabeling {
                    uri: f[1].to_string(),
                    turns: vec![turn],
                }),
            }
        }
        for l in &by_uri {
            l.validate()?;
        }
        Ok(by_uri)
    }

    /// Reads one conversation from an RTTM file; missing URI yields an empty labeling.
    pub fn read_rttm(path: &Path, uri: &str) -> Result<Self> {
        let text = read_text(path)?;
        Ok(Self::parse_rttm(&text, Some(uri))?
            .into_iter()
            .next()
            .unwrap_or_else(|| TimedLabeling::new(uri)))
    }

    /// RTTM text, turns in stored order, onset/duration to 3 decimals.
    pub fn to_rttm(&self) -> String {
        let mut s = String::new();
        for t in &self.turns {
            let _ = writeln!(
                s,
                "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
                self.uri, t.onset, t.duration, t.label
            );
        }
        s
    }

    /// Parses a label file of `<onset> <end> [label]` lines; the label defaults to `speech`.
    pub fn parse_lab(text: &str, uri: &str) -> Result<Self> {
        let mut lab = TimedLabeling::new(uri);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 2 {
                return Err(Error::format(
                    format!("label line {}", lineno + 1),
                    "expected `<onset> <end>`",
                ));
            }
            let onset = parse_f64(f[0], lineno)?;
            let end = parse_f64(f[1], lineno)?;
            let label = f.get(2).copied().unwrap_or("speech");
            if end > onset {
                lab.push(onset, end - onset, label);
            }
        }
        lab.validate()?;
        Ok(lab)
    }

    pub fn to_lab(&self) -> String {
        let mut s = String::new();
        for t in &self.turns {
            let _ = writeln!(s, "{:.3} {:.3} {}", t.onset, t.end(), t.label);
        }
        s
    }

    /// Reads SAD from RTTM (by extension) or a label file.
    pub fn read_sad(path: &Path, uri: &str) -> Result<Self> {
        let text = read_text(path)?;
        if path.extension().is_some_and(|e| e == "rttm") {
            Ok(Self::parse_rttm(&text, Some(uri))?
                .into_iter()
                .next()
                .unwrap_or_else(|| TimedLabeling::new(uri)))
        } else {
            Self::parse_lab(&text, uri)
        }
    }
}

/// Scored regions of one conversation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Uem {
    pub uri: String,
    pub regions: Vec<Interval>,
}

impl Uem {
    /// Parses `<uri> <channel> <onset> <end>` lines.
    pub fn parse(text: &str) -> Result<Vec<Uem>> {
        let mut out: Vec<Uem> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 4 {
                return Err(Error::format(
                    format!("uem line {}", lineno + 1),
                    "expected `<uri> 1 <onset> <end>`",
                ));
            }
            let iv = Interval::new(parse_f64(f[2], lineno)?, parse_f64(f[3], lineno)?);
            match out.iter_mut().find(|u| u.uri == f[0]) {
                Some(u) => u.regions.push(iv),
                None => out.push(Uem {
                    uri: f[0].to_string(),
                    regions: vec![iv],
                }),
            }
        }
        for u in &mut out {
            u.regions = merge_intervals(std::mem::take(&mut u.regions));
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.regions {
            let _ = writeln!(s, "{} 1 {:.3} {:.3}", self.uri, r.start, r.end);
        }
        s
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_f64(s: &str, lineno: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::format(format!("line {}", lineno + 1), format!("bad number `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::format(
            format!("line {}", lineno + 1),
            format!("non-finite number `{s}`"),
        ));
    }
    Ok(v)
}
