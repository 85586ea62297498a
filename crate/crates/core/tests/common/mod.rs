//! Independent reference implementations and random fixtures shared by the
//! integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use xidiar::annotation::{Interval, TimedLabeling};

/// Random labeling on a millisecond grid: turns may overlap.
pub fn random_labeling(rng: &mut ChaCha8Rng, uri: &str, speakers: usize, span_ms: u32, turns: usize, prefix: &str) -> TimedLabeling {
    let mut l = TimedLabeling::new(uri);
    for _ in 0..turns {
        let a = rng.random_range(0..span_ms - 1);
        let b = rng.random_range(a + 1..=span_ms.min(a + span_ms / 3 + 1));
        let s = rng.random_range(0..speakers);
        l.push(a as f64 / 1000.0, (b - a) as f64 / 1000.0, format!("{prefix}{s}"));
    }
    l
}

/// Speaker names and per-millisecond activity of a labeling.
pub fn raster(l: &TimedLabeling, span_ms: usize) -> (Vec<String>, Vec<Vec<bool>>) {
    let names = l.labels();
    let mut act = vec![vec![false; span_ms]; names.len()];
    for t in &l.turns {
        let s = names.iter().position(|n| *n == t.label).unwrap();
        let a = (t.onset * 1000.0).round() as usize;
        let b = ((t.end()) * 1000.0).round() as usize;
        for f in act[s].iter_mut().take(b.min(span_ms)).skip(a) {
            *f = true;
        }
    }
    (names, act)
}

fn injective_maps(n_ref: usize, n_hyp: usize) -> Vec<Vec<Option<usize>>> {
    // every partial injective map ref -> hyp
    let mut out = Vec::new();
    let mut cur = vec![None; n_ref];
    fn rec(i: usize, n_hyp: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        cur[i] = None;
        rec(i + 1, n_hyp, used, cur, out);
        for h in 0..n_hyp {
            if !used[h] {
                used[h] = true;
                cur[i] = Some(h);
                rec(i + 1, n_hyp, used, cur, out);
                used[h] = false;
            }
        }
        cur[i] = None;
    }
    rec(0, n_hyp, &mut vec![false; n_hyp], &mut cur, &mut out);
    out
}

#[derive(Debug, Clone)]
pub struct RasterScore {
    pub der: f64,
    pub miss: f64,
    pub falarm: f64,
    pub spkerr: f64,
    /// JER of every DER-optimal mapping.
    pub jers: Vec<f64>,
}

/// DER and JER by frame counting with an exhaustively searched mapping.
pub fn raster_score(reference: &TimedLabeling, hyp: &TimedLabeling, span_ms: usize) -> RasterScore {
    let (_, r) = raster(reference, span_ms);
    let (_, h) = raster(hyp, span_ms);
    let count = |v: &Vec<bool>| v.iter().filter(|&&b| b).count();
    let both = |a: &Vec<bool>, b: &Vec<bool>| a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let overlap: Vec<Vec<usize>> = r.iter().map(|rs| h.iter().map(|hs| both(rs, hs)).collect()).collect();
    let maps = injective_maps(r.len(), h.len());
    let value = |m: &Vec<Option<usize>>| -> usize { m.iter().enumerate().filter_map(|(i, o)| o.map(|j| overlap[i][j])).sum() };
    let best = maps.iter().map(value).max().unwrap_or(0);

    let mut miss = 0usize;
    let mut fa = 0usize;
    let mut total = 0usize;
    let mut matched_any = 0usize;
    for f in 0..span_ms {
        let nr = r.iter().filter(|s| s[f]).count();
        let nh = h.iter().filter(|s| s[f]).count();
        total += nr;
        miss += nr.saturating_sub(nh);
        fa += nh.saturating_sub(nr);
        matched_any += nr.min(nh);
    }
    // confusion = frames where both sides speak minus correctly mapped time
    let err = matched_any - best;
    let pct = |x: usize| 100.0 * x as f64 / total as f64;

    let jers = maps
        .iter()
        .filter(|m| value(m) == best)
        .map(|m| {
            let per: Vec<f64> = m
                .iter()
                .enumerate()
                .map(|(i, o)| match o {
                    Some(j) if overlap[i][*j] > 0 => {
                        let inter = overlap[i][*j] as f64;
                        let union = (count(&r[i]) + count(&h[*j])) as f64 - inter;
                        1.0 - inter / union
                    }
                    _ => 1.0,
                })
                .collect();
            100.0 * per.iter().sum::<f64>() / per.len() as f64
        })
        .collect();
    RasterScore {
        der: pct(miss + fa + err),
        miss: pct(miss),
        falarm: pct(fa),
        spkerr: pct(err),
        jers,
    }
}

/// Average-linkage AHC that recomputes every linkage from the original
/// distances. Clusters are identified by their smallest member.
pub fn naive_ahc(d: &[Vec<f64>], threshold: f64, k_min: usize, k_max: usize) -> (Vec<usize>, Vec<(usize, usize, f64)>) {
    let n = d.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut trace = Vec::new();
    let k_min = k_min.min(n);
    while clusters.len() > k_min {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let mut s = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        s += d[i][j];
                    }
                }
                let link = s / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(bd, _, _)| link < bd) {
                    best = Some((link, a, b));
                }
            }
        }
        let (link, a, b) = best.unwrap();
        if clusters.len() <= k_max && link > threshold {
            break;
        }
        let moved = clusters.remove(b);
        trace.push((clusters[a][0], moved[0], link));
        clusters[a].extend(moved);
        clusters[a].sort();
        clusters.sort_by_key(|c| c[0]);
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if labels[i] == usize::MAX {
            let c = clusters.iter().find(|c| c.contains(&i)).unwrap();
            for &j in c {
                labels[j] = next;
            }
            next += 1;
        }
    }
    (labels, trace)
}

/// Lowest total distance-to-medoid over all medoid sets of size `k`.
pub fn exhaustive_medoid_cost(d: &[Vec<f64>], k: usize) -> f64 {
    fn rec(d: &[Vec<f64>], k: usize, from: usize, chosen: &mut Vec<usize>, best: &mut f64) {
        if chosen.len() == k {
            let cost: f64 = (0..d.len()).map(|i| chosen.iter().map(|&m| d[i][m]).fold(f64::INFINITY, f64::min)).sum();
            *best = best.min(cost);
            return;
        }
        for m in from..d.len() {
            chosen.push(m);
            rec(d, k, m + 1, chosen, best);
            chosen.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(d, k, 0, &mut Vec::new(), &mut best);
    best
}

pub fn euclidean_matrix(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            points
                .iter()
                .map(|q| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect()
}

/// Millisecond frames covered by a set of intervals.
pub fn raster_intervals(ivs: &[Interval], span_ms: usize) -> Vec<bool> {
    let mut v = vec![false; span_ms];
    for iv in ivs {
        // frame f covers [f, f+1) ms; count it when its centre is inside
        let a = (iv.start * 1000.0 - 0.5).ceil().max(0.0) as usize;
        let b = ((iv.end * 1000.0 - 0.5).ceil().max(0.0) as usize).min(span_ms);
        for f in v.iter_mut().take(b).skip(a) {
            *f = true;
        }
    }
    v
}

/// Dense layer oracle: `act(W x + b)` with plain loops.
pub fn dense(weights: &[Vec<f64>], bias: &[f64], x: &[f64], act: &str) -> Vec<f64> {
    let z: Vec<f64> = weights
        .iter()
        .zip(bias)
        .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
        .collect();
    match act {
        "tanh" => z.iter().map(|v| v.tanh()).collect(),
        "sigmoid" => z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
        "softmax" => {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        }
        _ => z,
    }
}
