use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xidiar::features::{apply_cmn, extract_lfcc, AudioBuffer, LfccConfig};

/// LFCC by direct DFT, with no shared code.
fn naive_lfcc(x: &[f64], rate: f64, cfg: &LfccConfig) -> Vec<Vec<f64>> {
    let len = (cfg.frame_length * rate).round() as usize;
    let shift = (cfg.frame_shift * rate).round() as usize;
    let fft = len.next_power_of_two();
    let bins = fft / 2 + 1;
    let nyq = rate / 2.0;
    let hi = cfg.high_freq.unwrap_or(nyq).min(nyq);
    let lo = cfg.low_freq;
    let m = cfg.num_filters;
    let tri = |j: usize, f: f64| {
        let step = (hi - lo) / (m + 1) as f64;
        let (l, c, r) = (lo + step * j as f64, lo + step * (j + 1) as f64, lo + step * (j + 2) as f64);
        if f > l && f <= c {
            (f - l) / (c - l)
        } else if f > c && f < r {
            (r - f) / (r - c)
        } else {
            0.0
        }
    };
    let y: Vec<f64> = (0..x.len()).map(|i| x[i] - cfg.preemphasis * if i > 0 { x[i - 1] } else { 0.0 }).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= x.len() {
        let frame: Vec<f64> = (0..len).map(|i| y[start + i] * (0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())).collect();
        let mag: Vec<f64> = (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / fft as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect();
        let logs: Vec<f64> = (0..m)
            .map(|j| {
                let e: f64 = (0..bins).map(|k| tri(j, k as f64 * rate / fft as f64) * mag[k]).sum();
                e.max(cfg.log_floor).ln()
            })
            .collect();
        out.push(
            (0..cfg.num_ceps)
                .map(|c| {
                    let s = if c == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
                    s * logs.iter().enumerate().map(|(j, l)| l * (PI * c as f64 * (j as f64 + 0.5) / m as f64).cos()).sum::<f64>()
                })
                .collect(),
        );
        start += shift;
    }
    out
}

#[test]
fn lfcc_matches_direct_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (rate, n, cfg) in [
        (8000u32, 1200usize, LfccConfig::default()),
        (
            16000,
            2000,
            LfccConfig {
                num_filters: 24,
                num_ceps: 13,
                low_freq: 100.0,
                high_freq: Some(7000.0),
                ..LfccConfig::default()
            },
        ),
    ] {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let got = extract_lfcc::<f64>(&AudioBuffer::new(x.clone(), rate).unwrap(), &cfg).unwrap();
        let want = naive_lfcc(&x, f64::from(rate), &cfg);
        assert_eq!(got.num_frames(), want.len());
        for (t, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let d = (got.frames[(t, c)] - v).abs();
                assert!(d < 1e-8, "rate {rate} frame {t} coef {c}: {d}");
            }
        }
    }
}

#[test]
fn cmn_removes_column_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.07).sin() + rng.random_range(-0.1..0.1)).collect();
    let f = apply_cmn(&extract_lfcc::<f64>(&AudioBuffer::new(x, 8000).unwrap(), &LfccConfig::default()).unwrap());
    for m in f.frames.column_means() {
        assert!(m.abs() < 1e-10, "{m}");
    }
}
