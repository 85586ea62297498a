use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::annotation::{intersection_length, Interval, TimedLabeling};
use crate::clustering::{ahc, fit_plda, k_medoids, DistanceMatrix, PldaModel, PldaTrainConfig};
use crate::domain::{ClusteringSpec, DomainLabel, DomainProfile, DomainRegistry, Engine};
use crate::embeddings::{apply_pca, apply_whiten, fit_conversation_pca, fit_whiten, fuse_xi, EmbeddingKind, EmbeddingSet, WhitenModel, WhitenStrategy};
use crate::error::{Error, Result, StageContext};
use crate::features::{apply_cmn, extract_lfcc, AudioBuffer, FeatureMatrix, LfccConfig};
use crate::linalg::Matrix;
use crate::resegmentation::{resegment, ResegConfig};
use crate::segmentation::{
    cut_at_changes, drop_short, fallback_change_scores, speech_regions, speech_timeline, uniform_subsegment, ChangeScoreTrack, SegmentList,
    MIN_SEGMENT_DURATION,
};

/// Window geometry for uniform subsegmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub max_len: f64,
    pub overlap: f64,
    pub min_len: f64,
}

impl Geometry {
    pub const SD: Geometry = Geometry {
        max_len: 2.0,
        overlap: 1.0,
        min_len: MIN_SEGMENT_DURATION,
    };
    pub const KALDI: Geometry = Geometry {
        max_len: 1.5,
        overlap: 0.75,
        min_len: MIN_SEGMENT_DURATION,
    };
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SdSettings {
    pub geometry: Geometry,
    pub min_duration: f64,
    /// Half-window of the feature-based change detector used without a track.
    pub fallback_window: f64,
    pub lfcc: LfccConfig,
    pub resegment: bool,
    pub reseg: ResegConfig,
}

impl Default for SdSettings {
    fn default() -> Self {
        Self {
            geometry: Geometry::SD,
            min_duration: MIN_SEGMENT_DURATION,
            fallback_window: 1.0,
            lfcc: LfccConfig::default(),
            resegment: true,
            reseg: ResegConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KaldiSettings {
    pub geometry: Geometry,
    pub min_duration: f64,
    /// Stopping threshold on negated PLDA scores, shared by all conversations.
    pub threshold: f64,
}

impl Default for KaldiSettings {
    fn default() -> Self {
        Self {
            geometry: Geometry::KALDI,
            min_duration: MIN_SEGMENT_DURATION,
            threshold: 0.0,
        }
    }
}

/// Everything one conversation brings to an engine besides embeddings.
#[derive(Debug, Clone)]
pub struct ConversationInputs {
    pub uri: String,
    pub sad: TimedLabeling,
    pub audio: Option<AudioBuffer>,
    pub change_scores: Option<ChangeScoreTrack>,
}

/// Provides i-vectors and x-vectors for a list of subsegment spans.
pub trait EmbeddingSource: Sync {
    fn embeddings(&self, uri: &str, engine: Engine, spans: &[Interval]) -> Result<(EmbeddingSet<f64>, EmbeddingSet<f64>)>;
}

/// Labeled development vectors for one engine.
#[derive(Debug, Clone)]
pub struct DevSet {
    pub ivecs: Matrix<f64>,
    pub xvecs: Matrix<f64>,
    pub labels: Vec<usize>,
}

impl DevSet {
    fn xi(&self) -> Result<EmbeddingSet<f64>> {
        if self.ivecs.rows() != self.xvecs.rows() || self.labels.len() != self.ivecs.rows() {
            return Err(Error::Alignment {
                index: self.ivecs.rows().min(self.xvecs.rows()).min(self.labels.len()),
            });
        }
        let spans: Vec<Interval> = (0..self.labels.len()).map(|i| Interval::new(i as f64, i as f64 + 1.0)).collect();
        let iv = EmbeddingSet::from_matrix("dev", EmbeddingKind::Ivec, &spans, &self.ivecs)?;
        let xv = EmbeddingSet::from_matrix("dev", EmbeddingKind::Xvec, &spans, &self.xvecs)?;
        fuse_xi(&iv, &xv)
    }
}

/// Whitening and PLDA for one engine, estimated once per corpus.
#[derive(Debug, Clone)]
pub struct EngineModels {
    pub whiten: WhitenModel<f64>,
    pub plda: Option<PldaModel<f64>>,
}

impl EngineModels {
    /// Mean-only whitening (SD) or per-block projections (Kaldi style), and a
    /// PLDA model on the whitened development vectors when labels allow one.
    pub fn fit(engine: Engine, dev: &DevSet) -> Result<Self> {
        let xi = dev.xi()?;
        let strategy = match engine {
            Engine::Sd => WhitenStrategy::GlobalMean,
            Engine::Kaldi => WhitenStrategy::BlockConcat {
                block_dims: vec![dev.xvecs.cols(), dev.ivecs.cols()],
            },
        };
        let whiten = fit_whiten(&xi, &strategy).stage("whitening")?;
        let white = apply_whiten(&xi, &whiten)?.to_matrix();
        let plda = match fit_plda(&white, &dev.labels, &PldaTrainConfig::default()) {
            Ok(fit) => Some(fit.model),
            Err(e) if engine == Engine::Sd => {
                warn!("no PLDA model for the SD engine: {e}");
                None
            }
            Err(e) => return Err(e).stage("plda training"),
        };
        Ok(Self { whiten, plda })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub profile: String,
    pub clusters: usize,
    pub subsegments: usize,
    pub short_leftovers: usize,
    pub ahc_threshold: Option<f64>,
    pub corridor: Option<(usize, usize)>,
    pub pca_dim: Option<usize>,
    /// `file`, `fallback` or `none`.
    pub change_scores: String,
    pub resegmented: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineResult {
    pub uri: String,
    pub engine: Engine,
    pub hypothesis: TimedLabeling,
    pub diagnostics: Diagnostics,
}

pub fn speaker_name(cluster: usize) -> String {
    format!("spk{:02}", cluster + 1)
}

fn features_of(audio: &AudioBuffer, lfcc: &LfccConfig) -> Result<FeatureMatrix<f64>> {
    Ok(apply_cmn(&extract_lfcc::<f64>(audio, lfcc)?))
}

/// Segments the SD engine clusters: speech regions cut at change-score peaks
/// (from the track, else from the features), then uniform windows.
pub fn plan_sd_segments(
    inputs: &ConversationInputs,
    features: Option<&FeatureMatrix<f64>>,
    change_threshold: f64,
    settings: &SdSettings,
) -> Result<(SegmentList, &'static str)> {
    let regions = speech_regions(&inputs.sad);
    let fallback;
    let (track, source) = match (&inputs.change_scores, features) {
        (Some(t), _) => (Some(t), "file"),
        (None, Some(f)) => {
            fallback = fallback_change_scores(f, settings.fallback_window);
            (Some(&fallback), "fallback")
        }
        (None, None) => (None, "none"),
    };
    let cut = match track {
        Some(t) if !t.is_empty() => cut_at_changes(&regions, t, change_threshold, settings.min_duration)?,
        _ => drop_short(&regions, settings.min_duration),
    };
    let g = settings.geometry;
    Ok((uniform_subsegment(&cut, g.max_len, g.overlap, g.min_len)?, source))
}

/// Segments of the Kaldi-style engine: speech regions without short ones,
/// then uniform windows.
pub fn plan_kaldi_segments(sad: &TimedLabeling, settings: &KaldiSettings) -> Result<SegmentList> {
    let regions = drop_short(&speech_regions(sad), settings.min_duration);
    let g = settings.geometry;
    uniform_subsegment(&regions, g.max_len, g.overlap, g.min_len)
}

/// Turns from labeled windows: overlapping neighbours split halfway between
/// their centres. With `fill`, leftover pieces take the label of the nearest
/// turn. Touching turns of one speaker are merged.
pub fn windows_to_turns(uri: &str, windows: &[(Interval, usize)], leftovers: &[Interval], fill: bool) -> TimedLabeling {
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by(|&a, &b| windows[a].0.start.total_cmp(&windows[b].0.start).then(a.cmp(&b)));
    let mut pieces: Vec<(Interval, usize)> = Vec::with_capacity(windows.len() + leftovers.len());
    for (pos, &w) in order.iter().enumerate() {
        let (iv, label) = windows[w];
        let mut start = iv.start;
        let mut end = iv.end;
        if pos > 0 {
            let prev = windows[order[pos - 1]].0;
            if prev.end > iv.start {
                let mid = 0.5 * (0.5 * (prev.start + prev.end) + 0.5 * (iv.start + iv.end));
                start = mid.clamp(iv.start, prev.end);
            }
        }
        if pos + 1 < order.len() {
            let next = windows[order[pos + 1]].0;
            if iv.end > next.start {
                let mid = 0.5 * (0.5 * (iv.start + iv.end) + 0.5 * (next.start + next.end));
                end = mid.clamp(next.start, iv.end);
            }
        }
        if end > start {
            pieces.push((Interval::new(start, end), label));
        }
    }
    if fill && !leftovers.is_empty() {
        let owned = pieces.clone();
        for lo in leftovers {
            let label = owned
                .iter()
                .map(|(iv, l)| {
                    let gap = if iv.end <= lo.start {
                        lo.start - iv.end
                    } else if iv.start >= lo.end {
                        iv.start - lo.end
                    } else {
                        0.0
                    };
                    (gap, *l)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map_or(0, |(_, l)| l);
            pieces.push((*lo, label));
        }
    }
    pieces.sort_by(|a, b| a.0.start.total_cmp(&b.0.start));
    let mut out = TimedLabeling::new(uri);
    let mut current: Option<(Interval, usize)> = None;
    for (iv, l) in pieces {
        match current {
            Some((ref mut c, cl)) if cl == l && iv.start <= c.end + 1e-9 => c.end = c.end.max(iv.end),
            _ => {
                if let Some((c, cl)) = current.take() {
                    out.push(c.start, c.duration(), speaker_name(cl));
                }
                current = Some((iv, l));
            }
        }
    }
    if let Some((c, cl)) = current {
        out.push(c.start, c.duration(), speaker_name(cl));
    }
    out
}

/// SAD speech relabeled as a single speaker.
fn single_speaker(sad: &TimedLabeling) -> TimedLabeling {
    let mut out = TimedLabeling::new(sad.uri.clone());
    for iv in speech_timeline(sad) {
        out.push(iv.start, iv.duration(), speaker_name(0));
    }
    out
}

/// Turns rounded to whole milliseconds and cut to SAD speech, whose bounds are
/// rounded inward. The result survives a round trip through RTTM text.
pub fn snap_to_speech(hyp: &TimedLabeling, sad: &TimedLabeling) -> TimedLabeling {
    let ms = |t: f64| (t * 1000.0).round();
    let speech: Vec<(f64, f64)> = speech_timeline(sad)
        .iter()
        .map(|iv| ((iv.start * 1000.0 - 1e-6).ceil(), (iv.end * 1000.0 + 1e-6).floor()))
        .filter(|(a, b)| b > a)
        .collect();
    let mut out = TimedLabeling::new(hyp.uri.clone());
    for t in &hyp.turns {
        let (a, b) = (ms(t.onset), ms(t.end()));
        for &(s, e) in &speech {
            let (lo, hi) = (a.max(s), b.min(e));
            if hi > lo {
                out.push(lo / 1000.0, (hi - lo) / 1000.0, t.label.clone());
            }
        }
    }
    out
}

/// The profile-driven diarization engine.
pub fn run_sd(
    inputs: &ConversationInputs,
    embeddings: &dyn EmbeddingSource,
    models: &EngineModels,
    profile: &DomainProfile,
    settings: &SdSettings,
) -> Result<EngineResult> {
    let uri = inputs.uri.as_str();
    let mut diag = Diagnostics {
        profile: profile.name.clone(),
        ..Diagnostics::default()
    };
    if profile.clustering == ClusteringSpec::None {
        let hyp = snap_to_speech(&single_speaker(&inputs.sad), &inputs.sad);
        diag.clusters = usize::from(!hyp.is_empty());
        diag.change_scores = "none".into();
        return Ok(EngineResult {
            uri: uri.into(),
            engine: Engine::Sd,
            hypothesis: hyp,
            diagnostics: diag,
        });
    }

    let features = match &inputs.audio {
        Some(a) => Some(features_of(a, &settings.lfcc).stage("features")?),
        None => {
            warn!("{uri}: no audio, skipping feature-based steps");
            None
        }
    };
    let (segments, source) = plan_sd_segments(inputs, features.as_ref(), profile.change_threshold, settings).stage("segmentation")?;
    diag.change_scores = source.into();
    diag.subsegments = segments.len();
    diag.short_leftovers = segments.short_leftovers.len();

    let spans = segments.spans();
    let labels: Vec<usize> = if spans.len() < 2 {
        vec![0; spans.len()]
    } else {
        let (iv, xv) = embeddings.embeddings(uri, Engine::Sd, &spans).stage("embeddings")?;
        let xi = apply_whiten(&fuse_xi(&iv, &xv)?, &models.whiten).stage("embeddings")?;
        match profile.clustering {
            ClusteringSpec::Ahc { k_min, k_max, threshold } => {
                let reduced = match profile.pca_dim {
                    Some(k) => {
                        let pca = fit_conversation_pca(&xi, k).stage("pca")?;
                        diag.pca_dim = Some(pca.k());
                        apply_pca(&xi, &pca)?
                    }
                    None => xi,
                };
                let vectors: Vec<Vec<f64>> = reduced.entries.into_iter().map(|e| e.vector).collect();
                let dist = DistanceMatrix::cosine(&vectors);
                diag.ahc_threshold = Some(threshold);
                diag.corridor = Some((k_min, k_max));
                ahc(&dist, threshold, k_min, k_max).stage("clustering")?.labels
            }
            ClusteringSpec::Kmedoids { k } => {
                let plda = models.plda.as_ref().ok_or_else(|| Error::Stage {
                    stage: "clustering",
                    source: Box::new(Error::Config("k-medoids profile needs a PLDA model".into())),
                })?;
                let scorer = plda.scorer().stage("clustering")?;
                let vectors: Vec<Vec<f64>> = xi.entries.into_iter().map(|e| e.vector).collect();
                let dist = DistanceMatrix::neg_plda_shifted(&scorer, &vectors);
                let k_used = if k > vectors.len() {
                    warn!("{uri}: k-medoids k={k} with {} subsegments", vectors.len());
                    vectors.len()
                } else {
                    k
                };
                k_medoids(&dist, k_used).stage("clustering")?.0.labels
            }
            ClusteringSpec::None => unreachable!("handled above"),
        }
    };
    diag.clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let windows: Vec<(Interval, usize)> = spans.iter().copied().zip(labels).collect();
    let mut hyp = windows_to_turns(uri, &windows, &segments.short_leftovers, true);
    if windows.is_empty() && !segments.short_leftovers.is_empty() {
        hyp = single_speaker(&inputs.sad);
        diag.clusters = 1;
    }

    if settings.resegment && diag.clusters > 1 {
        if let Some(f) = &features {
            let mut cfg = settings.reseg.clone();
            cfg.gmm.seed ^= crate::pipeline::uri_seed(uri);
            hyp = resegment(f, &hyp, &inputs.sad, &cfg).stage("resegmentation")?;
            diag.resegmented = true;
        }
    }
    debug!("{uri}: SD engine found {} clusters", diag.clusters);
    Ok(EngineResult {
        uri: uri.into(),
        engine: Engine::Sd,
        hypothesis: snap_to_speech(&hyp, &inputs.sad),
        diagnostics: diag,
    })
}

/// Domain-independent engine: uniform windows, per-block whitening, PLDA
/// average-linkage clustering with one global threshold, no resegmentation.
pub fn run_kaldi_style(
    inputs: &ConversationInputs,
    embeddings: &dyn EmbeddingSource,
    models: &EngineModels,
    settings: &KaldiSettings,
) -> Result<EngineResult> {
    let uri = inputs.uri.as_str();
    let segments = plan_kaldi_segments(&inputs.sad, settings).stage("segmentation")?;
    let spans = segments.spans();
    let mut diag = Diagnostics {
        profile: "global".into(),
        subsegments: spans.len(),
        short_leftovers: segments.short_leftovers.len(),
        ahc_threshold: Some(settings.threshold),
        corridor: Some((1, spans.len().max(1))),
        change_scores: "none".into(),
        ..Diagnostics::default()
    };
    let labels = if spans.len() < 2 {
        vec![0; spans.len()]
    } else {
        let plda = models.plda.as_ref().ok_or_else(|| Error::Stage {
            stage: "clustering",
            source: Box::new(Error::Config("Kaldi-style engine needs a PLDA model".into())),
        })?;
        let (iv, xv) = embeddings.embeddings(uri, Engine::Kaldi, &spans).stage("embeddings")?;
        let xi = apply_whiten(&fuse_xi(&iv, &xv)?, &models.whiten).stage("embeddings")?;
        let scorer = plda.scorer().stage("clustering")?;
        let vectors: Vec<Vec<f64>> = xi.entries.into_iter().map(|e| e.vector).collect();
        let dist = DistanceMatrix::neg_plda(&scorer, &vectors);
        ahc(&dist, settings.threshold, 1, vectors.len()).stage("clustering")?.labels
    };
    diag.clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let windows: Vec<(Interval, usize)> = spans.into_iter().zip(labels).collect();
    Ok(EngineResult {
        uri: uri.into(),
        engine: Engine::Kaldi,
        hypothesis: snap_to_speech(&windows_to_turns(uri, &windows, &segments.short_leftovers, false), &inputs.sad),
        diagnostics: diag,
    })
}

/// Late combination: keeps the engine the registry assigns to the label.
pub fn combine(label: &DomainLabel, registry: &DomainRegistry, sd: Option<&EngineResult>, kaldi: Option<&EngineResult>) -> Result<EngineResult> {
    let engine = registry.profile_for(label)?.engine;
    let chosen = match engine {
        Engine::Sd => sd,
        Engine::Kaldi => kaldi,
    };
    match chosen {
        Some(r) => {
            info!("{}: {label} -> {engine} engine", r.uri);
            Ok(r.clone())
        }
        None => Err(Error::Undefined(format!("label {label} selects the {engine} engine, which did not run"))),
    }
}

/// Checks that every turn lies inside SAD speech.
pub fn check_within_sad(hyp: &TimedLabeling, sad: &TimedLabeling) -> Result<()> {
    let speech = speech_timeline(sad);
    for (i, t) in hyp.turns.iter().enumerate() {
        let inside = intersection_length(&[t.interval()], &speech);
        if inside < t.duration - 1e-6 {
            return Err(Error::format(
                format!("hypothesis {}", hyp.uri),
                format!("turn {i} [{:.3}, {:.3}) leaves SAD speech", t.onset, t.end()),
            ));
        }
    }
    Ok(())
}
