//! Frame-level refinement of a clustering: one diagonal GMM per speaker,
//! Gaussian-smoothed log-likelihood tracks and per-frame reassignment.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{Interval, TimedLabeling};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::Matrix;
use crate::scalar::{log_sum_exp, Scalar};
use crate::segmentation::speech_timeline;

pub const MAX_COMPONENTS: usize = 64;
/// Floor on track values so every entry stays finite.
pub const LOG_LIKELIHOOD_FLOOR: f64 = -1e9;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel<T> {
    pub weights: Vec<T>,
    pub means: Matrix<T>,
    pub variances: Matrix<T>,
}

impl<T: Scalar> GmmModel<T> {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    fn log_norms(&self) -> Vec<T> {
        let half_log_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        (0..self.components())
            .map(|j| {
                let lv: T = self.variances.row(j).iter().map(|v| v.ln()).sum();
                self.weights[j].ln() - T::from_count(self.dim()) * half_log_2pi - T::lit(0.5) * lv
            })
            .collect()
    }

    fn precisions(&self) -> Matrix<T> {
        let (c, d) = (self.components(), self.dim());
        Matrix::from_vec(c, d, self.variances.as_slice().iter().map(|&v| T::one() / v).collect())
    }

    fn component_scores(&self, norms: &[T], prec: &Matrix<T>, x: &[T], out: &mut [T]) {
        for j in 0..self.components() {
            let (m, p) = (self.means.row(j), prec.row(j));
            let q: T = x
                .iter()
                .zip(m)
                .zip(p)
                .map(|((&xi, &mi), &pi)| (xi - mi) * (xi - mi) * pi)
                .sum();
            out[j] = norms[j] - T::lit(0.5) * q;
        }
    }

    /// Log-likelihood of every row of `frames`.
    pub fn log_likelihoods(&self, frames: &Matrix<T>) -> Vec<T> {
        let norms = self.log_norms();
        let prec = self.precisions();
        let mut buf = vec![T::zero(); self.components()];
        frames
            .row_iter()
            .map(|x| {
                self.component_scores(&norms, &prec, x, &mut buf);
                log_sum_exp(&buf)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmConfig {
    pub max_iter: usize,
    /// Stop once the mean per-frame log-likelihood gains less than this.
    pub tol: f64,
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-4,
            variance_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit<T> {
    pub model: GmmModel<T>,
    /// Mean per-frame log-likelihood before every M-step and after the last.
    pub log_likelihoods: Vec<f64>,
}

/// Mixture size for `n_frames` of speaker data: doubles with every doubling
/// of data, one component below 200 frames, capped at 64.
pub fn component_count(n_frames: usize) -> usize {
    if n_frames < 200 {
        return 1;
    }
    let ratio = n_frames / 100;
    let pow = usize::BITS - 1 - ratio.leading_zeros();
    (1usize << pow.min(6)).clamp(1, MAX_COMPONENTS)
}

/// k-means++ style seeding: first seed uniform, the rest proportional to the
/// squared distance to the nearest seed chosen so far.
fn seed_means<T: Scalar>(frames: &Matrix<T>, c: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = frames.rows();
    let mut seeds = vec![rng.random_range(0..n)];
    let sq = |a: &[T], b: &[T]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| ((x - y) * (x - y)).as_f64())
            .sum()
    };
    let mut d2: Vec<f64> = (0..n).map(|i| sq(frames.row(i), frames.row(seeds[0]))).collect();
    while seeds.len() < c {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            // all frames coincide with a seed; any unused index will do
            (0..n).find(|i| !seeds.contains(i)).unwrap_or(0)
        };
        seeds.push(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq(frames.row(i), frames.row(pick)));
        }
    }
    seeds
}

fn initial_model<T: Scalar>(frames: &Matrix<T>, seeds: &[usize], floor: T) -> GmmModel<T> {
    let (n, d, c) = (frames.rows(), frames.cols(), seeds.len());
    let global_mean = frames.column_means();
    let global_var: Vec<T> = frames
        .covariance(&global_mean)
        .row_iter()
        .enumerate()
        .map(|(i, r)| r[i].max(floor))
        .collect();
    let mut counts = vec![0usize; c];
    let mut sums = Matrix::<T>::zeros(c, d);
    let mut sq = Matrix::<T>::zeros(c, d);
    for x in frames.row_iter() {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (j, &s) in seeds.iter().enumerate() {
            let dist: T = x.iter().zip(frames.row(s)).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if dist < best_d {
                best_d = dist;
                best = j;
            }
        }
        counts[best] += 1;
        for k in 0..d {
            sums.row_mut(best)[k] = sums.row(best)[k] + x[k];
            sq.row_mut(best)[k] = sq.row(best)[k] + x[k] * x[k];
        }
    }
    let mut weights = Vec::with_capacity(c);
    let mut means = Matrix::zeros(c, d);
    let mut vars = Matrix::zeros(c, d);
    for j in 0..c {
        if counts[j] == 0 {
            weights.push(T::one() / T::from_count(n));
            means.row_mut(j).copy_from_slice(frames.row(seeds[j]));
            vars.row_mut(j).copy_from_slice(&global_var);
            continue;
        }
        let cnt = T::from_count(counts[j]);
        weights.push(cnt / T::from_count(n));
        for k in 0..d {
            let m = sums.row(j)[k] / cnt;
            means.row_mut(j)[k] = m;
            vars.row_mut(j)[k] = (sq.row(j)[k] / cnt - m * m).max(floor);
        }
    }
    let total: T = weights.iter().copied().sum();
    for w in weights.iter_mut() {
        *w = *w / total;
    }
    GmmModel {
        weights,
        means,
        variances: vars,
    }
}

/// EM training of a diagonal GMM on the rows of `frames`.
///
/// Asking for more components than frames reduces `c` to the frame count.
pub fn fit_gmm<T: Scalar>(frames: &Matrix<T>, c: usize, config: &GmmConfig) -> Result<GmmFit<T>> {
    let (n, d) = (frames.rows(), frames.cols());
    if n == 0 || d == 0 {
        return Err(Error::Empty("GMM training needs at least one frame".into()));
    }
    if c == 0 {
        return Err(Error::Config("GMM needs at least one component".into()));
    }
    if !frames.is_finite() {
        return Err(Error::format("GMM training data", "non-finite feature value"));
    }
    let c = if c > n {
        warn!("GMM: {n} frames for {c} components, using {n}");
        n
    } else {
        c
    };
    let floor = T::lit(config.variance_floor);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds = seed_means(frames, c, &mut rng);
    let mut model = initial_model(frames, &seeds, floor);

    let mut history: Vec<f64> = Vec::new();
    let mut resp = Matrix::zeros(n, c);
    let mut buf = vec![T::zero(); c];
    for iter in 0..=config.max_iter {
        // E-step
        let norms = model.log_norms();
        let prec = model.precisions();
        let mut ll = 0.0;
        for (i, x) in frames.row_iter().enumerate() {
            model.component_scores(&norms, &prec, x, &mut buf);
            let lse = log_sum_exp(&buf);
            ll += lse.as_f64();
            let r = resp.row_mut(i);
            for j in 0..c {
                r[j] = (buf[j] - lse).exp();
            }
        }
        let ll = ll / n as f64;
        let converged = history.last().is_some_and(|&prev| ll - prev < config.tol);
        history.push(ll);
        if converged || iter == config.max_iter {
            break;
        }
        // M-step
        let mut nk = vec![T::zero(); c];
        let mut sums = Matrix::<T>::zeros(c, d);
        for (i, x) in frames.row_iter().enumerate() {
            let r = resp.row(i);
            for j in 0..c {
                let w = r[j];
                if w == T::zero() {
                    continue;
                }
                nk[j] = nk[j] + w;
                let acc = sums.row_mut(j);
                for k in 0..d {
                    acc[k] = acc[k] + w * x[k];
                }
            }
        }
        for j in 0..c {
            model.weights[j] = nk[j] / T::from_count(n);
            if nk[j] <= T::zero() {
                continue;
            }
            for k in 0..d {
                model.means.row_mut(j)[k] = sums.row(j)[k] / nk[j];
            }
        }
        // variances from a second pass around the new means
        let mut var_acc = Matrix::<T>::zeros(c, d);
        for (i, x) in frames.row_iter().enumerate() {
            let r = resp.row(i);
            for j in 0..c {
                let w = r[j];
                if w == T::zero() {
                    continue;
                }
                let m = model.means.row(j);
                let acc = var_acc.row_mut(j);
                for k in 0..d {
                    let e = x[k] - m[k];
                    acc[k] = acc[k] + w * e * e;
                }
            }
        }
        for j in 0..c {
            if nk[j] <= T::zero() {
                continue;
            }
            for k in 0..d {
                model.variances.row_mut(j)[k] = (var_acc.row(j)[k] / nk[j]).max(floor);
            }
        }
    }
    debug!("GMM c={c}: {} iterations, final ll {:.4}", history.len(), history.last().copied().unwrap_or(f64::NAN));
    Ok(GmmFit {
        model,
        log_likelihoods: history,
    })
}

/// Per-speaker frame log-likelihoods on a common frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTracks<T> {
    pub labels: Vec<String>,
    /// One track per label, all of equal length.
    pub tracks: Vec<Vec<T>>,
    pub frame_shift: f64,
    /// Time of the first frame.
    pub offset: f64,
}

impl<T: Scalar> LikelihoodTracks<T> {
    pub fn new(labels: Vec<String>, tracks: Vec<Vec<T>>, frame_shift: f64, offset: f64) -> Result<Self> {
        if labels.len() != tracks.len() {
            return Err(Error::DimMismatch {
                expected: labels.len(),
                got: tracks.len(),
            });
        }
        if let Some(first) = tracks.first() {
            if let Some(bad) = tracks.iter().find(|t| t.len() != first.len()) {
                return Err(Error::DimMismatch {
                    expected: first.len(),
                    got: bad.len(),
                });
            }
        }
        if !(frame_shift > 0.0 && frame_shift.is_finite()) {
            return Err(Error::Config(format!("frame shift {frame_shift} must be positive")));
        }
        let floor = T::lit(LOG_LIKELIHOOD_FLOOR);
        let tracks = tracks
            .into_iter()
            .map(|t: Vec<T>| t.into_iter().map(|v| if v.is_nan() { floor } else { v.max(floor).min(T::max_value()) }).collect())
            .collect();
        Ok(Self {
            labels,
            tracks,
            frame_shift,
            offset,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.tracks.first().map_or(0, Vec::len)
    }

    pub fn num_speakers(&self) -> usize {
        self.tracks.len()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.offset + i as f64 * self.frame_shift
    }

    /// Frames whose times fall in `[iv.start, iv.end)`.
    fn frames_in(&self, iv: &Interval) -> std::ops::Range<usize> {
        let n = self.num_frames();
        let first = ((iv.start - self.offset) / self.frame_shift - 1e-9).ceil().max(0.0) as usize;
        let mut last = ((iv.end - self.offset) / self.frame_shift - 1e-9).ceil().max(0.0) as usize;
        last = last.min(n);
        first.min(last)..last
    }

    fn ranked(&self, i: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.num_speakers()).collect();
        idx.sort_by(|&a, &b| {
            self.tracks[b][i]
                .partial_cmp(&self.tracks[a][i])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }
}

/// Evaluates every speaker model on every frame.
pub fn compute_tracks<T: Scalar>(features: &FeatureMatrix<T>, models: &[(String, GmmModel<T>)]) -> Result<LikelihoodTracks<T>> {
    for (label, m) in models {
        if m.dim() != features.dim() {
            return Err(Error::Stage {
                stage: "resegmentation",
                source: Box::new(Error::format(
                    format!("GMM for {label}"),
                    format!("dimension {} against {} feature coefficients", m.dim(), features.dim()),
                )),
            });
        }
    }
    let tracks: Vec<Vec<T>> = models
        .par_iter()
        .map(|(_, m)| m.log_likelihoods(&features.frames))
        .collect();
    LikelihoodTracks::new(
        models.iter().map(|(l, _)| l.clone()).collect(),
        tracks,
        features.frame_shift,
        features.frame_time(0),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Gaussian window length in seconds.
    pub window: f64,
    /// Spacing of the smoothing anchors in seconds.
    pub hop: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            window: 0.075,
            hop: 0.05,
        }
    }
}

/// Gaussian smoothing evaluated at anchors `hop` apart (sigma = window / 4,
/// weights normalised over the frames inside the window); every frame takes
/// the value of its nearest anchor, ties to the earlier one.
pub fn smooth_tracks<T: Scalar>(tracks: &LikelihoodTracks<T>, config: &SmoothingConfig) -> Result<LikelihoodTracks<T>> {
    let shift = tracks.frame_shift;
    if !(config.window > shift) || !(config.hop > 0.0) {
        return Err(Error::Config(format!(
            "smoothing window {} must exceed the frame shift {shift} and hop {} must be positive",
            config.window, config.hop
        )));
    }
    let n = tracks.num_frames();
    if n == 0 || (n as f64) * shift < config.window {
        warn!("likelihood track of {n} frames is shorter than the smoothing window, left unchanged");
        return Ok(tracks.clone());
    }
    let half = 0.5 * config.window;
    let sigma = config.window / 4.0;
    let nearest_anchor = |i: usize| -> usize {
        let pos = (i as f64 * shift) / config.hop;
        ((pos - 0.5 - 1e-9).ceil()).max(0.0) as usize
    };
    let anchors = nearest_anchor(n - 1) + 1;
    // per anchor: frame range and normalised weights
    let kernels: Vec<(usize, Vec<T>)> = (0..anchors)
        .map(|m| {
            let a = m as f64 * config.hop;
            let lo = (((a - half) / shift) - 1e-9).ceil().max(0.0) as usize;
            let hi = ((((a + half) / shift) + 1e-9).floor() as usize).min(n - 1);
            let w: Vec<f64> = (lo..=hi)
                .map(|i| {
                    let z = (i as f64 * shift - a) / sigma;
                    (-0.5 * z * z).exp()
                })
                .collect();
            let s: f64 = w.iter().sum();
            (lo, w.into_iter().map(|v| T::lit(v / s)).collect())
        })
        .collect();
    let smoothed = tracks
        .tracks
        .iter()
        .map(|track| {
            let at_anchor: Vec<T> = kernels
                .iter()
                .map(|(lo, w)| w.iter().enumerate().map(|(k, &wk)| wk * track[lo + k]).sum())
                .collect();
            (0..n).map(|i| at_anchor[nearest_anchor(i)]).collect()
        })
        .collect();
    LikelihoodTracks::new(tracks.labels.clone(), smoothed, shift, tracks.offset)
}

/// Labels runs of frames inside `region` by `pick(frame)` and closes the
/// turns at midpoints between differing neighbours.
fn label_region<T: Scalar>(
    tracks: &LikelihoodTracks<T>,
    region: &Interval,
    mut pick: impl FnMut(usize) -> Option<usize>,
    out: &mut TimedLabeling,
) {
    let mut range = tracks.frames_in(region);
    if range.is_empty() {
        let mid = 0.5 * (region.start + region.end);
        let i = (((mid - tracks.offset) / tracks.frame_shift).round().max(0.0) as usize).min(tracks.num_frames() - 1);
        range = i..i + 1;
    }
    let mut start = region.start;
    let mut current: Option<usize> = None;
    for i in range.clone() {
        let s = pick(i);
        if i == range.start {
            current = s;
            continue;
        }
        if s != current {
            let boundary = (tracks.time(i) - 0.5 * tracks.frame_shift).clamp(region.start, region.end);
            if let Some(c) = current {
                if boundary > start {
                    out.push(start, boundary - start, tracks.labels[c].clone());
                }
            }
            start = boundary;
            current = s;
        }
    }
    if let Some(c) = current {
        if region.end > start {
            out.push(start, region.end - start, tracks.labels[c].clone());
        }
    }
}

/// Relabels every speech frame by its most likely speaker (ties to the lower
/// speaker index). Output turns tile the SAD speech timeline.
pub fn reassign_frames<T: Scalar>(tracks: &LikelihoodTracks<T>, sad: &TimedLabeling) -> Result<TimedLabeling> {
    if tracks.num_speakers() == 0 || tracks.num_frames() == 0 {
        return Err(Error::Empty("no likelihood tracks to reassign from".into()));
    }
    let mut out = TimedLabeling::new(sad.uri.clone());
    for region in speech_timeline(sad) {
        label_region(tracks, &region, |i| Some(tracks.ranked(i)[0]), &mut out);
    }
    Ok(out)
}

/// Adds a second speaker inside `overlap_regions`: per frame the most likely
/// speaker other than the primary one there. Primary turns are kept as is.
pub fn add_overlap_second<T: Scalar>(
    tracks: &LikelihoodTracks<T>,
    overlap_regions: &TimedLabeling,
    primary: &TimedLabeling,
) -> TimedLabeling {
    let mut out = primary.clone();
    if overlap_regions.is_empty() {
        return out;
    }
    if tracks.num_speakers() < 2 || tracks.num_frames() == 0 {
        warn!("overlap assignment needs at least two speakers, skipped");
        return out;
    }
    let primary_at = |t: f64| -> Option<&str> {
        primary
            .turns
            .iter()
            .find(|turn| turn.onset <= t && t < turn.end())
            .map(|turn| turn.label.as_str())
    };
    for region in overlap_regions.timeline() {
        label_region(
            tracks,
            &region,
            |i| {
                let ranked = tracks.ranked(i);
                match primary_at(tracks.time(i)) {
                    Some(p) => ranked.into_iter().find(|&s| tracks.labels[s] != p),
                    None => Some(ranked[1]),
                }
            },
            &mut out,
        );
    }
    out.sort();
    out
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResegConfig {
    pub gmm: GmmConfig,
    pub smoothing: SmoothingConfig,
}

/// Fits per-speaker GMMs on the frames of `clustering`, smooths their tracks
/// and reassigns the speech frames of `sad`. Speakers without any frame are
/// dropped; with no usable speaker the clustering is returned unchanged.
pub fn resegment<T: Scalar>(
    features: &FeatureMatrix<T>,
    clustering: &TimedLabeling,
    sad: &TimedLabeling,
    config: &ResegConfig,
) -> Result<TimedLabeling> {
    let labels = clustering.labels();
    let per_speaker: Vec<(String, Vec<usize>)> = labels
        .iter()
        .map(|l| {
            let tl = clustering.timeline_of(l);
            let idx = (0..features.num_frames())
                .filter(|&i| {
                    let t = features.frame_time(i);
                    tl.iter().any(|iv| iv.start <= t && t < iv.end)
                })
                .collect();
            (l.clone(), idx)
        })
        .filter(|(l, idx): &(String, Vec<usize>)| {
            if idx.is_empty() {
                warn!("speaker {l} covers no feature frame, dropped from resegmentation");
            }
            !idx.is_empty()
        })
        .collect();
    if per_speaker.is_empty() {
        warn!("{}: nothing to resegment, clustering passed through", clustering.uri);
        return Ok(clustering.clone());
    }
    let models: Vec<(String, GmmModel<T>)> = per_speaker
        .par_iter()
        .map(|(l, idx)| {
            let mut data = Vec::with_capacity(idx.len() * features.dim());
            for &i in idx {
                data.extend_from_slice(features.frames.row(i));
            }
            let frames = Matrix::from_vec(idx.len(), features.dim(), data);
            fit_gmm(&frames, component_count(idx.len()), &config.gmm).map(|f| (l.clone(), f.model))
        })
        .collect::<Result<_>>()?;
    let tracks = compute_tracks(features, &models)?;
    let smoothed = smooth_tracks(&tracks, &config.smoothing)?;
    match reassign_frames(&smoothed, sad) {
        Ok(out) => Ok(out),
        Err(Error::Empty(_)) => Ok(clustering.clone()),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand_distr::{Distribution, Normal};

    fn tracks(v: Vec<Vec<f64>>) -> LikelihoodTracks<f64> {
        let labels = (0..v.len()).map(|i| format!("s{i}")).collect();
        LikelihoodTracks::new(labels, v, 0.01, 0.0).unwrap()
    }

    fn sad(regions: &[(f64, f64)]) -> TimedLabeling {
        let mut s = TimedLabeling::new("u");
        for &(a, b) in regions {
            s.push(a, b - a, "speech");
        }
        s
    }

    #[test]
    fn component_counts() {
        assert_eq!(component_count(1), 1);
        assert_eq!(component_count(150), 1);
        assert_eq!(component_count(199), 1);
        assert_eq!(component_count(200), 2);
        assert_eq!(component_count(1600), 16);
        assert_eq!(component_count(3199), 16);
        assert_eq!(component_count(6400), 64);
        assert_eq!(component_count(1_000_000), 64);
    }

    #[test]
    fn single_component_is_sample_moments() {
        let data = Matrix::<f64>::from_rows(&[[1.0, 2.0], [3.0, -1.0], [4.0, 0.5], [0.0, 0.0]]);
        let fit = fit_gmm(&data, 1, &GmmConfig::default()).unwrap();
        let mean = data.column_means();
        let cov = data.covariance(&mean);
        for k in 0..2 {
            assert!((fit.model.means.row(0)[k] - mean[k]).abs() < 1e-12);
            assert!((fit.model.variances.row(0)[k] - cov[(k, k)]).abs() < 1e-12);
        }
        assert_eq!(fit.model.weights, vec![1.0]);
    }

    #[test]
    fn two_blobs_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let data: Vec<f64> = (0..400)
            .map(|i| if i % 2 == 0 { -5.0 } else { 5.0 } + noise.sample(&mut rng))
            .collect();
        let m = Matrix::from_vec(400, 1, data);
        let fit = fit_gmm(&m, 2, &GmmConfig::default()).unwrap();
        let mut means = [fit.model.means[(0, 0)], fit.model.means[(1, 0)]];
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 5.0).abs() < 0.1, "{means:?}");
        assert!((means[1] - 5.0).abs() < 0.1, "{means:?}");
        assert!((fit.model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fewer_frames_than_components() {
        let m = Matrix::from_rows(&[[0.0], [1.0], [2.0]]);
        let fit = fit_gmm(&m, 8, &GmmConfig::default()).unwrap();
        assert_eq!(fit.model.components(), 3);
        assert!(fit.model.variances.as_slice().iter().all(|&v| v >= 1e-6));
        assert!(fit_gmm(&Matrix::<f64>::zeros(0, 2), 1, &GmmConfig::default()).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..600).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = Matrix::from_vec(300, 2, data);
        let a = fit_gmm(&m, 4, &GmmConfig::default()).unwrap();
        let b = fit_gmm(&m, 4, &GmmConfig::default()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log_likelihoods, b.log_likelihoods);
    }

    #[test]
    fn em_monotone_on_fuzzed_data() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(20..200);
            let d = rng.random_range(1..4);
            let c = rng.random_range(1..6);
            let centres: Vec<f64> = (0..c * d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let data: Vec<f64> = (0..n)
                .flat_map(|_| {
                    let j = rng.random_range(0..c);
                    (0..d).map(|k| centres[j * d + k] + rng.random_range(-1.0..1.0)).collect::<Vec<_>>()
                })
                .collect();
            let m = Matrix::from_vec(n, d, data);
            let fit = fit_gmm(&m, c, &GmmConfig { seed, ..GmmConfig::default() }).unwrap();
            for w in fit.log_likelihoods.windows(2) {
                assert!(w[1] >= w[0] - 1e-6, "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn constant_track_unchanged() {
        let t = tracks(vec![vec![-3.25; 200]]);
        let s = smooth_tracks(&t, &SmoothingConfig::default()).unwrap();
        assert_eq!(s.num_frames(), 200);
        assert!(s.tracks[0].iter().all(|&v| (v + 3.25).abs() < 1e-12));
    }

    #[test]
    fn spike_spreads_but_stays_put() {
        for pos in 40..60 {
            let mut v = vec![0.0; 100];
            v[pos] = 100.0;
            let s = smooth_tracks(&tracks(vec![v]), &SmoothingConfig::default()).unwrap();
            let out = &s.tracks[0];
            let peak = out.iter().copied().fold(f64::MIN, f64::max);
            assert!(peak < 100.0);
            let mass: f64 = out.iter().sum();
            let centre = out.iter().enumerate().map(|(i, &x)| i as f64 * x).sum::<f64>() / mass;
            assert!((centre - pos as f64).abs() <= 1.0 + 1e-9, "spike {pos}: centre {centre}");
            assert!(out[pos - 1] > 0.0 || out[pos + 1] > 0.0);
        }
    }

    #[test]
    fn smoothing_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..73).map(|_| rng.random_range(-10.0..0.0)).collect();
        let s = smooth_tracks(&tracks(vec![v.clone()]), &SmoothingConfig::default()).unwrap();
        for i in 0..v.len() {
            // anchors every 5 frames; window covers 3 frames either side
            let a = ((i as f64 / 5.0) - 0.5 - 1e-9).ceil().max(0.0) as i64 * 5;
            let (mut num, mut den) = (0.0, 0.0);
            for j in (a - 3).max(0)..=(a + 3).min(72) {
                let z = (j - a) as f64 * 0.01 / (0.075 / 4.0);
                let w = (-0.5 * z * z).exp();
                num += w * v[j as usize];
                den += w;
            }
            assert!((s.tracks[0][i] - num / den).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_crossover_preserved() {
        let a: Vec<f64> = (0..100).map(|i| -(i as f64) * 0.1).collect();
        let b: Vec<f64> = (0..100).map(|i| -(99.0 - i as f64) * 0.1).collect();
        let s = smooth_tracks(&tracks(vec![a, b]), &SmoothingConfig::default()).unwrap();
        let cross = (0..100).find(|&i| s.tracks[1][i] > s.tracks[0][i]).unwrap();
        assert!((cross as i64 - 50).abs() <= 1 || (cross as i64 - 49).abs() <= 1, "{cross}");
    }

    #[test]
    fn short_track_left_alone() {
        let t = tracks(vec![vec![1.0, 5.0, 2.0]]);
        assert_eq!(smooth_tracks(&t, &SmoothingConfig::default()).unwrap(), t);
        let bad = SmoothingConfig { window: 0.005, hop: 0.05 };
        assert!(smooth_tracks(&t, &bad).is_err());
    }

    #[test]
    fn dominant_speaker_everywhere() {
        let t = tracks(vec![vec![0.0; 1000], vec![-1.0; 1000]]);
        let out = reassign_frames(&t, &sad(&[(0.5, 2.0), (3.0, 4.25)])).unwrap();
        assert_eq!(out.turns.len(), 2);
        assert!(out.turns.iter().all(|t| t.label == "s0"));
        assert_eq!(out.turns[0].onset, 0.5);
        assert!((out.turns[1].end() - 4.25).abs() < 1e-12);
    }

    #[test]
    fn boundary_at_switch() {
        let a: Vec<f64> = (0..1000).map(|i| if i < 500 { 0.0 } else { -1.0 }).collect();
        let b: Vec<f64> = a.iter().map(|v| -1.0 - v).collect();
        let out = reassign_frames(&tracks(vec![a, b]), &sad(&[(0.0, 10.0)])).unwrap();
        assert_eq!(out.turns.len(), 2);
        assert!((out.turns[0].end() - 5.0).abs() <= 0.01);
        assert_eq!(out.turns[1].label, "s1");
    }

    #[test]
    fn ties_go_to_lower_index() {
        let out = reassign_frames(&tracks(vec![vec![-2.0; 50], vec![-2.0; 50]]), &sad(&[(0.0, 0.5)])).unwrap();
        assert_eq!(out.turns.len(), 1);
        assert_eq!(out.turns[0].label, "s0");
    }

    #[test]
    fn non_speech_never_labeled() {
        let mut s = sad(&[(1.0, 2.0)]);
        s.push(2.0, 1.0, "non-speech");
        let out = reassign_frames(&tracks(vec![vec![0.0; 400]]), &s).unwrap();
        assert_eq!(out.timeline(), vec![Interval::new(1.0, 2.0)]);
        assert!(reassign_frames(&tracks(vec![]), &s).is_err());
    }

    #[test]
    fn overlap_second_speaker() {
        let t = tracks(vec![vec![-1.0; 500], vec![-2.0; 500], vec![-3.0; 500]]);
        let primary = reassign_frames(&t, &sad(&[(0.0, 5.0)])).unwrap();
        let ov = sad(&[(1.0, 2.0)]);
        let out = add_overlap_second(&t, &ov, &primary);
        assert_eq!(out.turns.len(), 2);
        let extra = out.turns.iter().find(|t| t.label != "s0").unwrap();
        assert_eq!(extra.label, "s1");
        assert_eq!((extra.onset, extra.end()), (1.0, 2.0));
        assert_eq!(add_overlap_second(&t, &TimedLabeling::new("u"), &primary), primary);
        let single = tracks(vec![vec![0.0; 500]]);
        assert_eq!(add_overlap_second(&single, &ov, &primary), primary);
    }

    #[test]
    fn two_speakers_both_in_overlap() {
        let t = tracks(vec![vec![-2.0; 300], vec![-1.0; 300]]);
        let primary = reassign_frames(&t, &sad(&[(0.0, 3.0)])).unwrap();
        let out = add_overlap_second(&t, &sad(&[(0.5, 1.5)]), &primary);
        let mut labels = out.labels();
        labels.sort();
        assert_eq!(labels, vec!["s0", "s1"]);
    }

    #[test]
    fn resegment_recovers_two_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let n = 1000;
        let data: Vec<f64> = (0..n)
            .flat_map(|i| {
                let c = if i < 600 { -3.0 } else { 3.0 };
                [c + noise.sample(&mut rng), -c + noise.sample(&mut rng)]
            })
            .collect();
        let feats = FeatureMatrix {
            frames: Matrix::from_vec(n, 2, data),
            frame_shift: 0.01,
            frame_length: 0.025,
            kind: FeatureKind::LfccCmn,
        };
        // rough clustering with a misplaced boundary
        let mut hyp = TimedLabeling::new("u");
        hyp.push(0.0, 5.0, "A");
        hyp.push(5.0, 5.1, "B");
        let out = resegment(&feats, &hyp, &sad(&[(0.0, 10.1)]), &ResegConfig::default()).unwrap();
        let a_end = out.timeline_of("A").last().unwrap().end;
        assert!((a_end - 6.0).abs() < 0.1, "{a_end}");
        assert_eq!(out.timeline(), vec![Interval::new(0.0, 10.1)]);
    }

    proptest! {
        #[test]
        fn output_tiles_speech(
            regions in proptest::collection::vec((0.0f64..20.0, 0.02f64..3.0), 1..6),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2500;
            let t = tracks((0..3).map(|_| (0..n).map(|_| rng.random_range(-5.0..0.0)).collect()).collect());
            let mut s = TimedLabeling::new("u");
            for (a, d) in &regions {
                s.push(*a, *d, "speech");
            }
            let out = reassign_frames(&t, &s).unwrap();
            let want = speech_timeline(&s);
            let got = out.timeline();
            prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g.start - w.start).abs() < 1e-9 && (g.end - w.end).abs() < 1e-9);
            }
            let total: f64 = out.turns.iter().map(|t| t.duration).sum();
            let speech: f64 = want.iter().map(|i| i.duration()).sum();
            prop_assert!((total - speech).abs() < 1e-9);
            prop_assert!(out.turns.iter().all(|t| ["s0", "s1", "s2"].contains(&t.label.as_str())));
        }
    }
}
