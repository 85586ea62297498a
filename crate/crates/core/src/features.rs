//! LFCC extraction (pre-emphasis, Hamming window, magnitude spectrum,
//! linear triangular filterbank, log, DCT-II) and conversation-level
//! cepstral mean normalization.

use std::path::Path;

use log::warn;
use rustfft::{num_complex::Complex, FftNum, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Mono PCM audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Reads 16-bit linear PCM mono WAV.
    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::format(
                path.display().to_string(),
                format!(
                    "expected 16-bit PCM mono, got {} channel(s), {} bits",
                    spec.channels, spec.bits_per_sample
                ),
            ));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        Self::new(samples, spec.sample_rate)
    }

    /// Writes 16-bit linear PCM mono WAV; samples are clipped to `[-1, 1]`.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let fmt_err = |e: hound::Error| Error::format(path.display().to_string(), e.to_string());
        let mut w = hound::WavWriter::create(path, spec).map_err(fmt_err)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            w.write_sample(v).map_err(fmt_err)?;
        }
        w.finalize().map_err(fmt_err)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Lfcc,
    LfccCmn,
}

/// `T × D` cepstral frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    pub frames: Matrix<T>,
    /// Effective frame shift in seconds (whole samples).
    pub frame_shift: f64,
    /// Effective frame length in seconds (whole samples).
    pub frame_length: f64,
    pub kind: FeatureKind,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// Centre time of frame `i`.
    #[inline]
    pub fn frame_time(&self, i: usize) -> f64 {
        i as f64 * self.frame_shift + 0.5 * self.frame_length
    }

    /// Index of the frame whose centre is nearest to `t`, clamped to range.
    pub fn frame_at(&self, t: f64) -> usize {
        let idx = ((t - 0.5 * self.frame_length) / self.frame_shift).round();
        (idx.max(0.0) as usize).min(self.num_frames().saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfccConfig {
    pub frame_length: f64,
    pub frame_shift: f64,
    pub num_filters: usize,
    pub num_ceps: usize,
    pub log_floor: f64,
    pub preemphasis: f64,
    pub low_freq: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub high_freq: Option<f64>,
}

impl Default for LfccConfig {
    fn default() -> Self {
        Self {
            frame_length: 0.025,
            frame_shift: 0.010,
            num_filters: 30,
            num_ceps: 20,
            log_floor: 1e-10,
            preemphasis: 0.97,
            low_freq: 0.0,
            high_freq: None,
        }
    }
}

/// Frame geometry in samples: `(length, shift, fft size)`.
pub(crate) fn frame_geometry(config: &LfccConfig, rate: u32) -> Result<(usize, usize, usize)> {
    if rate == 0 {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    let len = (config.frame_length * f64::from(rate)).round() as usize;
    let shift = (config.frame_shift * f64::from(rate)).round() as usize;
    if len == 0 || shift == 0 {
        return Err(Error::Config(format!(
            "frame length/shift round to zero samples at {rate} Hz"
        )));
    }
    if config.num_filters == 0 || config.num_ceps == 0 || config.num_ceps > config.num_filters {
        return Err(Error::Config(format!(
            "need 0 < num_ceps ({}) <= num_filters ({})",
            config.num_ceps, config.num_filters
        )));
    }
    Ok((len, shift, len.next_power_of_two()))
}

/// Triangular filters with centres linearly spaced between the band edges,
/// evaluated on the `fft/2 + 1` spectrum bins.
pub(crate) fn linear_filterbank(config: &LfccConfig, rate: u32, fft: usize) -> Result<Vec<Vec<f64>>> {
    let nyquist = f64::from(rate) / 2.0;
    let high = config.high_freq.unwrap_or(nyquist).min(nyquist);
    let low = config.low_freq.max(0.0);
    if !(high > low) {
        return Err(Error::Config(format!("empty filterbank band [{low}, {high}]")));
    }
    let m = config.num_filters;
    let edges: Vec<f64> = (0..m + 2)
        .map(|i| low + (high - low) * i as f64 / (m + 1) as f64)
        .collect();
    let bins = fft / 2 + 1;
    let bin_hz = f64::from(rate) / fft as f64;
    Ok((0..m)
        .map(|j| {
            let (l, c, r) = (edges[j], edges[j + 1], edges[j + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= l || f >= r {
                        0.0
                    } else if f <= c {
                        (f - l) / (c - l)
                    } else {
                        (r - f) / (r - c)
                    }
                })
                .collect()
        })
        .collect())
}

/// Extracts LFCC frames from `audio`.
pub fn extract_lfcc<T: Scalar + FftNum>(audio: &AudioBuffer, config: &LfccConfig) -> Result<FeatureMatrix<T>> {
    let rate = audio.sample_rate;
    let (len, shift, fft) = frame_geometry(config, rate)?;
    let n = audio.samples.len();
    if n < len {
        return Err(Error::Empty(format!(
            "audio has {n} samples, shorter than one {len}-sample frame"
        )));
    }
    let num_frames = (n - len) / shift + 1;
    let bank: Vec<Vec<T>> = linear_filterbank(config, rate, fft)?
        .into_iter()
        .map(|f| f.into_iter().map(T::lit).collect())
        .collect();
    let window: Vec<T> = (0..len)
        .map(|i| {
            let denom = (len.max(2) - 1) as f64;
            T::lit(0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        })
        .collect();
    let dct = dct_matrix::<T>(config.num_ceps, config.num_filters);

    let pre = T::lit(config.preemphasis);
    let signal: Vec<T> = audio
        .samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let prev = if i > 0 { audio.samples[i - 1] } else { 0.0 };
            T::lit(x) - pre * T::lit(prev)
        })
        .collect();

    let plan = FftPlanner::<T>::new().plan_fft_forward(fft);
    let floor = T::lit(config.log_floor);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); fft];
    let mut mag = vec![T::zero(); fft / 2 + 1];
    let mut logs = vec![T::zero(); config.num_filters];
    let mut frames = Matrix::zeros(num_frames, config.num_ceps);
    for t in 0..num_frames {
        let start = t * shift;
        for (i, b) in buf.iter_mut().enumerate() {
            let v = if i < len { signal[start + i] * window[i] } else { T::zero() };
            *b = Complex::new(v, T::zero());
        }
        plan.process(&mut buf);
        for (m, b) in mag.iter_mut().zip(&buf) {
            *m = b.norm();
        }
        for (l, filt) in logs.iter_mut().zip(&bank) {
            let e = filt.iter().zip(&mag).fold(T::zero(), |s, (&w, &x)| s + w * x);
            *l = e.max(floor).ln();
        }
        let row = frames.row_mut(t);
        for (c, out) in row.iter_mut().enumerate() {
            *out = crate::scalar::dot(dct.row(c), &logs);
        }
    }
    Ok(FeatureMatrix {
        frames,
        frame_shift: shift as f64 / f64::from(rate),
        frame_length: len as f64 / f64::from(rate),
        kind: FeatureKind::Lfcc,
    })
}

/// Orthonormal DCT-II basis, `ceps × filters`.
fn dct_matrix<T: Scalar>(ceps: usize, filters: usize) -> Matrix<T> {
    let m = filters as f64;
    let mut d = Matrix::zeros(ceps, filters);
    for k in 0..ceps {
        let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
        for j in 0..filters {
            let v = scale * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / m).cos();
            d[(k, j)] = T::lit(v);
        }
    }
    d
}

/// Subtracts the whole-conversation mean of every coefficient.
pub fn apply_cmn<T: Scalar>(features: &FeatureMatrix<T>) -> FeatureMatrix<T> {
    let mut out = features.clone();
    out.kind = FeatureKind::LfccCmn;
    if features.frames.rows() == 0 {
        warn!("cmn: empty feature matrix, nothing to normalize");
        return out;
    }
    if features.kind == FeatureKind::LfccCmn {
        warn!("cmn: features already normalized");
    }
    let mean = features.frames.column_means();
    for t in 0..out.frames.rows() {
        for (x, &m) in out.frames.row_mut(t).iter_mut().zip(&mean) {
            *x = *x - m;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wrap(rows: &[[f64; 2]]) -> FeatureMatrix<f64> {
        FeatureMatrix {
            frames: Matrix::from_rows(rows),
            frame_shift: 0.01,
            frame_length: 0.025,
            kind: FeatureKind::Lfcc,
        }
    }

    #[test]
    fn cmn_examples() {
        let out = apply_cmn(&wrap(&[[1.0, 2.0], [3.0, 4.0]]));
        assert_eq!(out.frames, Matrix::from_rows(&[[-1.0, -1.0], [1.0, 1.0]]));
        assert_eq!(out.kind, FeatureKind::LfccCmn);
        let single = apply_cmn(&wrap(&[[5.0, 7.0]]));
        assert_eq!(single.frames, Matrix::from_rows(&[[0.0, 0.0]]));
        let empty: FeatureMatrix<f64> = FeatureMatrix {
            frames: Matrix::zeros(0, 2),
            frame_shift: 0.01,
            frame_length: 0.025,
            kind: FeatureKind::Lfcc,
        };
        assert_eq!(apply_cmn(&empty).frames.rows(), 0);
    }

    #[test]
    fn silence_gives_constant_frames() {
        let audio = AudioBuffer::new(vec![0.0; 16000], 16000).unwrap();
        let cfg = LfccConfig::default();
        let f: FeatureMatrix<f64> = extract_lfcc(&audio, &cfg).unwrap();
        let first = f.frames.row(0).to_vec();
        for r in f.frames.row_iter() {
            assert_eq!(r, &first[..]);
        }
        let expected_c0 = (cfg.num_filters as f64).sqrt() * cfg.log_floor.ln();
        assert!((first[0] - expected_c0).abs() < 1e-9);
        assert!(first[1..].iter().all(|c| c.abs() < 1e-9));
    }

    #[test]
    fn sine_is_stationary() {
        let rate = 16000;
        let samples = (0..rate)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / rate as f64).sin())
            .collect();
        let audio = AudioBuffer::new(samples, rate as u32).unwrap();
        let f: FeatureMatrix<f64> = extract_lfcc(&audio, &LfccConfig::default()).unwrap();
        let n = f.num_frames();
        let reference = f.frames.row(1).to_vec();
        for t in 1..n - 1 {
            for (a, b) in f.frames.row(t).iter().zip(&reference) {
                assert!((a - b).abs() < 1e-6, "frame {t} differs");
            }
        }
    }

    #[test]
    fn default_geometry_echo() {
        let audio = AudioBuffer::new(vec![0.1; 8000], 16000).unwrap();
        let f: FeatureMatrix<f64> = extract_lfcc(&audio, &LfccConfig::default()).unwrap();
        assert_eq!(f.dim(), 20);
        assert_eq!(f.frame_shift, 0.010);
        assert_eq!(f.num_frames(), (8000 - 400) / 160 + 1);
    }

    #[test]
    fn errors() {
        assert!(AudioBuffer::new(vec![0.0; 10], 0).is_err());
        let short = AudioBuffer::new(vec![0.0; 100], 16000).unwrap();
        assert!(matches!(
            extract_lfcc::<f64>(&short, &LfccConfig::default()),
            Err(Error::Empty(_))
        ));
        let bad = LfccConfig {
            num_ceps: 40,
            ..LfccConfig::default()
        };
        let ok = AudioBuffer::new(vec![0.0; 1000], 16000).unwrap();
        assert!(extract_lfcc::<f64>(&ok, &bad).is_err());
    }

    #[test]
    fn f32_matches_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f64> = (0..4000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let audio = AudioBuffer::new(samples, 8000).unwrap();
        let a: FeatureMatrix<f64> = extract_lfcc(&audio, &LfccConfig::default()).unwrap();
        let b: FeatureMatrix<f32> = extract_lfcc(&audio, &LfccConfig::default()).unwrap();
        for (x, y) in a.frames.as_slice().iter().zip(b.frames.as_slice()) {
            assert!((x - f64::from(*y)).abs() < 1e-3);
        }
    }

    #[test]
    fn wav_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let audio = AudioBuffer::new(vec![0.0, 0.5, -0.5, 0.25], 8000).unwrap();
        audio.write_wav(&path).unwrap();
        let back = AudioBuffer::read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 8000);
        for (a, b) in audio.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn frame_count_formula(rate in 4000u32..48000, extra in 0usize..3000) {
            let cfg = LfccConfig { num_filters: 4, num_ceps: 2, ..LfccConfig::default() };
            let (len, _, _) = frame_geometry(&cfg, rate).unwrap();
            let n = len + extra;
            let audio = AudioBuffer::new(vec![0.0; n], rate).unwrap();
            let f: FeatureMatrix<f32> = extract_lfcc(&audio, &cfg).unwrap();
            let fl = (f.frame_length * f64::from(rate)).round();
            let fs = (f.frame_shift * f64::from(rate)).round();
            let expected = ((n as f64 - fl) / fs).floor() as usize + 1;
            prop_assert_eq!(f.num_frames(), expected);
        }

        #[test]
        fn cmn_zero_mean(rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 1..50)) {
            let f = FeatureMatrix {
                frames: Matrix::from_rows(&rows),
                frame_shift: 0.01,
                frame_length: 0.025,
                kind: FeatureKind::Lfcc,
            };
            for m in apply_cmn(&f).frames.column_means() {
                prop_assert!(m.abs() < 1e-9);
            }
        }
    }
}
