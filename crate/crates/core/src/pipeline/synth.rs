//! Synthetic conversations with known truth: scripted turns, harmonic
//! per-speaker audio, change-score peaks at speaker changes and embeddings
//! drawn around per-speaker means.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::engines::{plan_kaldi_segments, plan_sd_segments, ConversationInputs, DevSet, EmbeddingSource, KaldiSettings, SdSettings};
use super::formats::{labels_to_text, spans_to_text, write_matrix, write_text, write_track};
use super::run::{DomainSource, EnginePolicy, RunConfig};
use super::{mix_seed, uri_seed};
use crate::annotation::{Interval, TimedLabeling};
use crate::domain::{DomainLabel, DomainRegistry, Engine};
use crate::embeddings::{EmbeddingEntry, EmbeddingKind, EmbeddingSet};
use crate::error::{Error, Result};
use crate::features::AudioBuffer;
use crate::linalg::Matrix;
use crate::segmentation::{speech_timeline, ChangeScoreTrack};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub duration: f64,
    pub speakers: usize,
    /// Smallest distance between two speaker means, in units of `sigma`,
    /// enforced separately for the i-vector and x-vector blocks.
    pub separation: f64,
    /// Per-coordinate standard deviation of embedding noise.
    pub sigma: f64,
    pub ivec_dim: usize,
    pub xvec_dim: usize,
    pub sample_rate: u32,
    pub turn_min: f64,
    pub turn_max: f64,
    pub gap_prob: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    pub overlap_prob: f64,
    pub overlap_max: f64,
    pub lead_silence: f64,
    pub noise_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration: 300.0,
            speakers: 3,
            separation: 6.0,
            sigma: 1.0,
            ivec_dim: 32,
            xvec_dim: 32,
            sample_rate: 16000,
            turn_min: 2.0,
            turn_max: 8.0,
            gap_prob: 0.3,
            gap_min: 0.2,
            gap_max: 1.0,
            overlap_prob: 0.0,
            overlap_max: 0.8,
            lead_silence: 0.5,
            noise_level: 0.01,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.duration > self.lead_silence + self.turn_min
            && self.speakers >= 1
            && self.sigma > 0.0
            && self.separation >= 0.0
            && self.ivec_dim > 0
            && self.xvec_dim > 0
            && self.turn_min > 0.0
            && self.turn_max >= self.turn_min
            && self.gap_max >= self.gap_min
            && self.gap_min >= 0.0
            && (0.0..=1.0).contains(&self.gap_prob)
            && (0.0..=1.0).contains(&self.overlap_prob)
            && self.sample_rate >= 8000;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent synthetic conversation settings: {self:?}")))
        }
    }

    /// Spread of speaker means so two random means sit about `separation`
    /// sigmas apart.
    fn mean_spread(&self, dim: usize) -> f64 {
        (self.separation.max(1.0) * self.sigma) / (2.0 * dim as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpeaker {
    pub label: String,
    pub ivec_mean: Vec<f64>,
    pub xvec_mean: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthConversation {
    pub uri: String,
    pub reference: TimedLabeling,
    pub sad: TimedLabeling,
    pub audio: AudioBuffer,
    pub change_scores: ChangeScoreTrack,
    pub speakers: Vec<SynthSpeaker>,
}

impl SynthConversation {
    pub fn inputs(&self) -> ConversationInputs {
        ConversationInputs {
            uri: self.uri.clone(),
            sad: self.sad.clone(),
            audio: Some(self.audio.clone()),
            change_scores: Some(self.change_scores.clone()),
        }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Rescales means about their centroid so the closest pair is exactly
/// `target` apart.
fn set_min_distance(means: &mut [Vec<f64>], target: f64) {
    if means.len() < 2 {
        return;
    }
    let dim = means[0].len();
    let centroid: Vec<f64> = (0..dim).map(|k| means.iter().map(|m| m[k]).sum::<f64>() / means.len() as f64).collect();
    let mut min = f64::INFINITY;
    for i in 0..means.len() {
        for j in (i + 1)..means.len() {
            min = min.min(dist(&means[i], &means[j]));
        }
    }
    if min <= 0.0 {
        return;
    }
    let s = target / min;
    for m in means.iter_mut() {
        for (v, c) in m.iter_mut().zip(&centroid) {
            *v = c + (*v - c) * s;
        }
    }
}

fn speaker_means(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<SynthSpeaker> {
    let mut iv: Vec<Vec<f64>> = (0..cfg.speakers).map(|_| gaussian_vec(rng, cfg.ivec_dim, cfg.mean_spread(cfg.ivec_dim))).collect();
    let mut xv: Vec<Vec<f64>> = (0..cfg.speakers).map(|_| gaussian_vec(rng, cfg.xvec_dim, cfg.mean_spread(cfg.xvec_dim))).collect();
    set_min_distance(&mut iv, cfg.separation * cfg.sigma);
    set_min_distance(&mut xv, cfg.separation * cfg.sigma);
    iv.into_iter()
        .zip(xv)
        .enumerate()
        .map(|(s, (i, x))| SynthSpeaker {
            label: format!("S{}", s + 1),
            ivec_mean: i,
            xvec_mean: x,
        })
        .collect()
}

/// Rounds to the millisecond grid of RTTM and lab files.
fn ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// Scripted turn timeline: every speaker talks once before random order
/// takes over; no speaker follows themself.
fn script_turns(uri: &str, cfg: &SynthConfig, speakers: &[SynthSpeaker], rng: &mut ChaCha8Rng) -> TimedLabeling {
    let mut order: Vec<usize> = (0..cfg.speakers).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut out = TimedLabeling::new(uri);
    let mut t = ms(cfg.lead_silence);
    let mut prev: Option<usize> = None;
    let mut n = 0usize;
    while cfg.duration - t >= cfg.turn_min.min(1.0) {
        let spk = if n < order.len() {
            order[n]
        } else if cfg.speakers == 1 {
            0
        } else {
            let mut s = rng.random_range(0..cfg.speakers - 1);
            if Some(s) >= prev {
                s += 1;
            }
            s
        };
        let d = ms(rng.random_range(cfg.turn_min..=cfg.turn_max).min(cfg.duration - t));
        out.push(t, d, speakers[spk].label.clone());
        let end = t + d;
        t = ms(if cfg.speakers > 1 && rng.random::<f64>() < cfg.overlap_prob {
            (end - rng.random_range(0.2..cfg.overlap_max.max(0.21))).max(t + 0.5 * d)
        } else if rng.random::<f64>() < cfg.gap_prob {
            end + rng.random_range(cfg.gap_min..=cfg.gap_max)
        } else {
            end
        });
        prev = Some(spk);
        n += 1;
    }
    out
}

struct Voice {
    table: Vec<f64>,
    rate: f64,
    phase: f64,
}

fn voice(index: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Voice {
    let sr = sample_rate as f64;
    let f0 = 95.0 + 55.0 * index as f64 + rng.random_range(0.0..15.0);
    let period = (sr / f0).round() as usize;
    let f0 = sr / period as f64;
    let f1 = rng.random_range(400.0..900.0);
    let f2 = rng.random_range(1200.0..2600.0);
    let harmonics = ((0.45 * sr) / f0) as usize;
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let amp = |f: f64| (-(f - f1).powi(2) / (2.0 * 300f64.powi(2))).exp() + 0.6 * (-(f - f2).powi(2) / (2.0 * 400f64.powi(2))).exp() + 0.05;
    let mut table: Vec<f64> = (0..period)
        .map(|n| {
            (1..=harmonics)
                .map(|h| amp(h as f64 * f0) * (std::f64::consts::TAU * h as f64 * n as f64 / period as f64 + phases[h - 1]).sin())
                .sum()
        })
        .collect();
    let peak = table.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    table.iter_mut().for_each(|v| *v /= peak);
    Voice {
        table,
        rate: rng.random_range(3.0..5.0),
        phase: rng.random_range(0.0..std::f64::consts::TAU),
    }
}

fn render_audio(cfg: &SynthConfig, reference: &TimedLabeling, speakers: &[SynthSpeaker], rng: &mut ChaCha8Rng) -> Result<AudioBuffer> {
    let sr = cfg.sample_rate as f64;
    let n = (cfg.duration * sr).round() as usize;
    let voices: Vec<Voice> = (0..speakers.len()).map(|i| voice(i, cfg.sample_rate, rng)).collect();
    let mut samples: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * cfg.noise_level
        })
        .collect();
    for turn in &reference.turns {
        let s = speakers
            .iter()
            .position(|sp| sp.label == turn.label)
            .expect("turn labels come from the speaker list");
        let v = &voices[s];
        let a = (turn.onset * sr).round() as usize;
        let b = ((turn.end() * sr).round() as usize).min(n);
        for (i, x) in samples.iter_mut().enumerate().take(b).skip(a) {
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * (std::f64::consts::TAU * v.rate * t + v.phase).sin();
            *x += 0.3 * env * v.table[i % v.table.len()];
        }
    }
    for x in samples.iter_mut() {
        *x = x.clamp(-1.0, 1.0);
    }
    AudioBuffer::new(samples, cfg.sample_rate)
}

/// Speaker-change times: every turn onset or end that touches or cuts into
/// another speaker's speech.
fn change_times(reference: &TimedLabeling) -> Vec<f64> {
    let mut times = Vec::new();
    for t in &reference.turns {
        for edge in [t.onset, t.end()] {
            let other = reference.turns.iter().any(|o| {
                o.label != t.label && o.onset - 1e-9 <= edge && edge <= o.end() + 1e-9
            });
            if other {
                times.push(edge);
            }
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    times
}

fn change_track(cfg: &SynthConfig, reference: &TimedLabeling, rng: &mut ChaCha8Rng) -> Result<ChangeScoreTrack> {
    let step = 0.01;
    let n = (cfg.duration / step).round() as usize + 1;
    let mut scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.15)).collect();
    for c in change_times(reference) {
        let centre = (c / step).round() as i64;
        for k in -10..=10i64 {
            let i = centre + k;
            if i < 0 || i as usize >= n {
                continue;
            }
            let z = (i as f64 * step - c) / 0.03;
            let bump = 0.9 * (-0.5 * z * z).exp();
            scores[i as usize] = scores[i as usize].max(bump);
        }
    }
    ChangeScoreTrack::new(scores, step, 0.0)
}

/// Generates one conversation; identical `(uri, config, seed)` give identical output.
pub fn synth_conversation(uri: &str, cfg: &SynthConfig, seed: u64) -> Result<SynthConversation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, uri_seed(uri)));
    let speakers = speaker_means(cfg, &mut rng);
    let reference = script_turns(uri, cfg, &speakers, &mut rng);
    let mut sad = TimedLabeling::new(uri);
    for iv in speech_timeline(&reference) {
        sad.push(iv.start, iv.duration(), "speech");
    }
    let audio = render_audio(cfg, &reference, &speakers, &mut rng)?;
    let change_scores = change_track(cfg, &reference, &mut rng)?;
    Ok(SynthConversation {
        uri: uri.into(),
        reference,
        sad,
        audio,
        change_scores,
        speakers,
    })
}

/// Embeddings from the generating truth: each span's vector is the mean of
/// the speakers talking in it, weighted by their share of the span's speech,
/// plus isotropic noise. Noise is seeded by uri, engine, kind and position.
#[derive(Debug, Clone)]
pub struct SynthEmbedder {
    pub sigma: f64,
    pub seed: u64,
    conversations: HashMap<String, (TimedLabeling, Vec<SynthSpeaker>)>,
}

impl SynthEmbedder {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            seed,
            conversations: HashMap::new(),
        }
    }

    pub fn add(&mut self, conv: &SynthConversation) {
        self.conversations.insert(conv.uri.clone(), (conv.reference.clone(), conv.speakers.clone()));
    }

    fn vectors(&self, uri: &str, engine: Engine, kind: EmbeddingKind, spans: &[Interval]) -> Result<EmbeddingSet<f64>> {
        let (reference, speakers) = self
            .conversations
            .get(uri)
            .ok_or_else(|| Error::UnknownLabel(format!("no synthetic conversation {uri}")))?;
        let pick = |s: &SynthSpeaker| -> Vec<f64> {
            match kind {
                EmbeddingKind::Ivec => s.ivec_mean.clone(),
                _ => s.xvec_mean.clone(),
            }
        };
        let dim = pick(&speakers[0]).len();
        let timelines: Vec<Vec<Interval>> = speakers.iter().map(|s| reference.timeline_of(&s.label)).collect();
        let stream = mix_seed(
            mix_seed(self.seed, uri_seed(uri)),
            (engine as u64) << 8 | kind as u64,
        );
        let entries = spans
            .iter()
            .enumerate()
            .map(|(i, span)| {
                let shares: Vec<f64> = timelines
                    .iter()
                    .map(|tl| tl.iter().map(|iv| iv.overlap(span)).sum())
                    .collect();
                let total: f64 = shares.iter().sum();
                let mut v = vec![0.0; dim];
                if total > 0.0 {
                    for (s, &w) in speakers.iter().zip(&shares) {
                        for (dst, m) in v.iter_mut().zip(pick(s)) {
                            *dst += w / total * m;
                        }
                    }
                }
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(stream, i as u64));
                for (dst, z) in v.iter_mut().zip(gaussian_vec(&mut rng, dim, self.sigma)) {
                    *dst += z;
                }
                EmbeddingEntry { span: *span, vector: v }
            })
            .collect();
        EmbeddingSet::new(uri, kind, dim, entries)
    }
}

impl EmbeddingSource for SynthEmbedder {
    fn embeddings(&self, uri: &str, engine: Engine, spans: &[Interval]) -> Result<(EmbeddingSet<f64>, EmbeddingSet<f64>)> {
        Ok((
            self.vectors(uri, engine, EmbeddingKind::Ivec, spans)?,
            self.vectors(uri, engine, EmbeddingKind::Xvec, spans)?,
        ))
    }
}

/// Labeled development vectors from the same generative model.
pub fn synth_dev_set(cfg: &SynthConfig, speakers: usize, per_speaker: usize, seed: u64) -> DevSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (di, dx) = (cfg.ivec_dim, cfg.xvec_dim);
    let mut ivecs = Vec::with_capacity(speakers * per_speaker * di);
    let mut xvecs = Vec::with_capacity(speakers * per_speaker * dx);
    let mut labels = Vec::with_capacity(speakers * per_speaker);
    for s in 0..speakers {
        let mi = gaussian_vec(&mut rng, di, cfg.mean_spread(di));
        let mx = gaussian_vec(&mut rng, dx, cfg.mean_spread(dx));
        for _ in 0..per_speaker {
            ivecs.extend(mi.iter().zip(gaussian_vec(&mut rng, di, cfg.sigma)).map(|(m, z)| m + z));
            xvecs.extend(mx.iter().zip(gaussian_vec(&mut rng, dx, cfg.sigma)).map(|(m, z)| m + z));
            labels.push(s);
        }
    }
    DevSet {
        ivecs: Matrix::from_vec(labels.len(), di, ivecs),
        xvecs: Matrix::from_vec(labels.len(), dx, xvecs),
        labels,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCorpusConfig {
    pub conversations: usize,
    pub seed: u64,
    pub conversation: SynthConfig,
    /// Domain label every conversation is routed with.
    pub domain: String,
    pub dev_speakers: usize,
    pub dev_per_speaker: usize,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            conversations: 2,
            seed: 7,
            conversation: SynthConfig::default(),
            domain: "SLX".into(),
            dev_speakers: 24,
            dev_per_speaker: 20,
        }
    }
}

/// Writes a corpus tree under `dir` and returns a run configuration for it.
///
/// Embedding files are computed for the subsegments each engine will ask
/// for, so the written corpus runs without the generator.
pub fn write_synth_corpus(dir: &Path, cfg: &SynthCorpusConfig) -> Result<RunConfig> {
    let registry = DomainRegistry::default();
    let profile = registry.profile_for(&DomainLabel::parse(&cfg.domain))?.clone();
    let sd = SdSettings::default();
    let kaldi = KaldiSettings::default();
    let mut embedder = SynthEmbedder::new(cfg.conversation.sigma, cfg.seed);
    let uris: Vec<String> = (0..cfg.conversations).map(|i| format!("synth_{i:03}")).collect();
    for uri in &uris {
        let conv = synth_conversation(uri, &cfg.conversation, cfg.seed)?;
        embedder.add(&conv);
        let audio_dir = dir.join("audio");
        std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
        conv.audio.write_wav(&audio_dir.join(format!("{uri}.wav")))?;
        write_text(&dir.join("sad").join(format!("{uri}.lab")), &conv.sad.to_lab())?;
        write_text(&dir.join("ref").join(format!("{uri}.rttm")), &conv.reference.to_rttm())?;
        write_track(&dir.join("scd").join(format!("{uri}.trk")), &conv.change_scores)?;

        // plan from the SAD as the runner will read it back
        let mut inputs = conv.inputs();
        inputs.sad = TimedLabeling::parse_lab(&conv.sad.to_lab(), uri)?;
        let (sd_segments, _) = plan_sd_segments(&inputs, None, profile.change_threshold, &sd)?;
        let kaldi_segments = plan_kaldi_segments(&inputs.sad, &kaldi)?;
        for (engine, spans) in [(Engine::Sd, sd_segments.spans()), (Engine::Kaldi, kaldi_segments.spans())] {
            let (iv, xv) = embedder.embeddings(uri, engine, &spans)?;
            let stem = dir.join("emb").join(format!("{uri}.{engine}"));
            write_matrix(&with_suffix(&stem, ".ivec.mat"), &iv.to_matrix())?;
            write_matrix(&with_suffix(&stem, ".xvec.mat"), &xv.to_matrix())?;
            write_text(&with_suffix(&stem, ".spans"), &spans_to_text(&spans))?;
        }
    }
    for (k, engine) in [Engine::Sd, Engine::Kaldi].into_iter().enumerate() {
        let dev = synth_dev_set(&cfg.conversation, cfg.dev_speakers, cfg.dev_per_speaker, mix_seed(cfg.seed, 1000 + k as u64));
        let stem = dir.join("dev").join(engine.to_string());
        write_matrix(&with_suffix(&stem, ".ivec.mat"), &dev.ivecs)?;
        write_matrix(&with_suffix(&stem, ".xvec.mat"), &dev.xvecs)?;
        write_text(&with_suffix(&stem, ".labels"), &labels_to_text(&dev.labels))?;
    }
    let run = RunConfig {
        corpus: dir.to_path_buf(),
        uris: Some(uris),
        output: dir.join("out"),
        registry: None,
        domain: DomainSource::Fixed { label: cfg.domain.clone() },
        engines: EnginePolicy::Both,
        sd,
        kaldi,
        threads: None,
        seed: cfg.seed,
        profile_override: None,
        threshold_override: None,
    };
    write_text(&dir.join("run.json"), &run.to_json_relative(dir))?;
    Ok(run)
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
