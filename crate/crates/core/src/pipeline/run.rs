//! Corpus runs: configuration, file-backed inputs, worker pool and output tree.
//!
//! Corpus layout (only `sad/` is mandatory):
//!
//! ```text
//! sad/<uri>.lab | sad/<uri>.rttm     speech activity
//! audio/<uri>.wav                    16-bit mono audio
//! scd/<uri>.trk                      speaker-change scores
//! emb/<uri>.<engine>.ivec.mat        per-subsegment embeddings, with
//! emb/<uri>.<engine>.xvec.mat        emb/<uri>.<engine>.spans listing spans
//! dev/<engine>.{ivec,xvec}.mat       development vectors and
//! dev/<engine>.labels                their speaker indices
//! conv/<uri>.mat                     1-row domain classifier input
//! ref/<uri>.rttm                     reference, enables scoring
//! all.uem                            scoring regions
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engines::{
    check_within_sad, combine, run_kaldi_style, run_sd, ConversationInputs, DevSet, EmbeddingSource, EngineModels, EngineResult, KaldiSettings,
    SdSettings,
};
use super::formats::{read_labels, read_matrix, read_mlp, read_spans, read_track, write_text};
use crate::annotation::{Interval, TimedLabeling, Uem};
use crate::domain::{classify_domain, ClusteringSpec, DomainDecision, DomainLabel, DomainProfile, DomainRegistry, Engine, MlpModel, DETECTION_THRESHOLD};
use crate::embeddings::{fuse_xi, EmbeddingKind, EmbeddingSet};
use crate::error::{Error, Result, StageContext};
use crate::features::AudioBuffer;
use crate::scoring::{coverage_purity, der, ScoreReport};

const SPAN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DomainSource {
    /// Every conversation gets this label.
    Fixed { label: String },
    /// Two-stage MLP classifier over `conv/<uri>.mat`.
    Classifier {
        stage1: PathBuf,
        stage2: PathBuf,
        #[serde(default = "default_detection_threshold")]
        threshold: f64,
    },
}

fn default_detection_threshold() -> f64 {
    DETECTION_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnginePolicy {
    /// Run both engines and keep the one the registry selects.
    Both,
    Sd,
    Kaldi,
}

impl EnginePolicy {
    fn runs(self, engine: Engine) -> bool {
        match self {
            EnginePolicy::Both => true,
            EnginePolicy::Sd => engine == Engine::Sd,
            EnginePolicy::Kaldi => engine == Engine::Kaldi,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// Conversations to process; all of `sad/` when absent.
    #[serde(default)]
    pub uris: Option<Vec<String>>,
    pub output: PathBuf,
    /// Domain registry file; the built-in table when absent.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    pub domain: DomainSource,
    #[serde(default = "default_policy")]
    pub engines: EnginePolicy,
    #[serde(default)]
    pub sd: SdSettings,
    #[serde(default)]
    pub kaldi: KaldiSettings,
    /// Worker threads; rayon's default when absent.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Registry row the SD engine uses regardless of the domain label.
    #[serde(default)]
    pub profile_override: Option<String>,
    /// Replaces the AHC stopping threshold of both engines.
    #[serde(default)]
    pub threshold_override: Option<f64>,
}

fn default_policy() -> EnginePolicy {
    EnginePolicy::Both
}

impl RunConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.corpus);
        resolve(&mut cfg.output);
        if let Some(r) = cfg.registry.as_mut() {
            resolve(r);
        }
        if let DomainSource::Classifier { stage1, stage2, .. } = &mut cfg.domain {
            resolve(stage1);
            resolve(stage2);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// JSON with paths under `base` written relative to it.
    pub fn to_json_relative(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).map(|r| if r.as_os_str().is_empty() { PathBuf::from(".") } else { r.to_path_buf() }).unwrap_or_else(|_| p.to_path_buf());
        let mut c = self.clone();
        c.corpus = rel(&self.corpus);
        c.output = rel(&self.output);
        c.registry = self.registry.as_deref().map(rel);
        if let DomainSource::Classifier { stage1, stage2, .. } = &mut c.domain {
            *stage1 = rel(stage1);
            *stage2 = rel(stage2);
        }
        let mut s = serde_json::to_string_pretty(&c).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} {} does not exist", p.display())))
            }
        };
        must_exist(&self.corpus.join("sad"), "SAD directory")?;
        if let Some(r) = &self.registry {
            must_exist(r, "registry")?;
        }
        if let DomainSource::Classifier { stage1, stage2, threshold } = &self.domain {
            must_exist(stage1, "stage-1 classifier")?;
            must_exist(stage2, "stage-2 classifier")?;
            if !(0.0..=1.0).contains(threshold) {
                return Err(Error::Config(format!("detection threshold {threshold} outside [0, 1]")));
            }
        }
        for engine in [Engine::Sd, Engine::Kaldi] {
            if self.engines.runs(engine) {
                for suffix in ["ivec.mat", "xvec.mat", "labels"] {
                    must_exist(&self.corpus.join("dev").join(format!("{engine}.{suffix}")), "development file")?;
                }
            }
        }
        for g in [self.sd.geometry, self.kaldi.geometry] {
            if !(g.max_len > 0.0 && g.overlap >= 0.0 && g.overlap < g.max_len && g.min_len >= 0.0) {
                return Err(Error::Config(format!("bad subsegment geometry {g:?}")));
            }
        }
        if let Some(uris) = &self.uris {
            for u in uris {
                sad_path(&self.corpus, u)?;
            }
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<DomainRegistry> {
        match &self.registry {
            Some(p) => DomainRegistry::load(p),
            None => Ok(DomainRegistry::default()),
        }
    }

    /// Listed URIs, or every SAD file stem in sorted order.
    pub fn resolve_uris(&self) -> Result<Vec<String>> {
        if let Some(u) = &self.uris {
            return Ok(u.clone());
        }
        let dir = self.corpus.join("sad");
        let mut uris: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "lab" || x == "rttm"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        uris.sort();
        uris.dedup();
        Ok(uris)
    }
}

fn sad_path(corpus: &Path, uri: &str) -> Result<PathBuf> {
    ["lab", "rttm"]
        .iter()
        .map(|ext| corpus.join("sad").join(format!("{uri}.{ext}")))
        .find(|p| p.exists())
        .ok_or_else(|| Error::Config(format!("no SAD file for {uri}")))
}

fn optional<T>(path: PathBuf, read: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        read(&path).map(Some)
    } else {
        Ok(None)
    }
}

/// Loads a conversation's SAD, audio and change scores from the corpus.
pub fn load_inputs(corpus: &Path, uri: &str) -> Result<ConversationInputs> {
    Ok(ConversationInputs {
        uri: uri.into(),
        sad: TimedLabeling::read_sad(&sad_path(corpus, uri)?, uri)?,
        audio: optional(corpus.join("audio").join(format!("{uri}.wav")), AudioBuffer::read_wav)?,
        change_scores: optional(corpus.join("scd").join(format!("{uri}.trk")), read_track)?,
    })
}

pub fn load_dev(corpus: &Path, engine: Engine) -> Result<DevSet> {
    let dir = corpus.join("dev");
    Ok(DevSet {
        ivecs: read_matrix(&dir.join(format!("{engine}.ivec.mat")))?,
        xvecs: read_matrix(&dir.join(format!("{engine}.xvec.mat")))?,
        labels: read_labels(&dir.join(format!("{engine}.labels")))?,
    })
}

/// Precomputed embeddings under `emb/`; requested spans must match the
/// stored ones.
#[derive(Debug, Clone)]
pub struct FileEmbeddings {
    dir: PathBuf,
}

impl FileEmbeddings {
    pub fn new(corpus: &Path) -> Self {
        Self { dir: corpus.join("emb") }
    }

    fn path(&self, uri: &str, engine: Engine, suffix: &str) -> PathBuf {
        self.dir.join(format!("{uri}.{engine}.{suffix}"))
    }
}

impl EmbeddingSource for FileEmbeddings {
    fn embeddings(&self, uri: &str, engine: Engine, spans: &[Interval]) -> Result<(EmbeddingSet<f64>, EmbeddingSet<f64>)> {
        let stored = read_spans(&self.path(uri, engine, "spans"))?;
        if let Some(index) = (0..spans.len().max(stored.len())).find(|&i| match (spans.get(i), stored.get(i)) {
            (Some(a), Some(b)) => (a.start - b.start).abs() > SPAN_TOL || (a.end - b.end).abs() > SPAN_TOL,
            _ => true,
        }) {
            return Err(Error::Alignment { index });
        }
        let iv = EmbeddingSet::from_matrix(uri, EmbeddingKind::Ivec, spans, &read_matrix(&self.path(uri, engine, "ivec.mat"))?)?;
        let xv = EmbeddingSet::from_matrix(uri, EmbeddingKind::Xvec, spans, &read_matrix(&self.path(uri, engine, "xvec.mat"))?)?;
        Ok((iv, xv))
    }
}

struct Classifier {
    stage1: MlpModel<f64>,
    stage2: MlpModel<f64>,
    threshold: f64,
}

impl Classifier {
    fn input(&self, corpus: &Path, uri: &str, embeddings: &dyn EmbeddingSource) -> Result<Vec<f64>> {
        let path = corpus.join("conv").join(format!("{uri}.mat"));
        if path.exists() {
            let m = read_matrix(&path)?;
            if m.rows() != 1 {
                return Err(Error::format(path.display().to_string(), "classifier input must have one row"));
            }
            return Ok(m.row(0).to_vec());
        }
        warn!("{uri}: no classifier input, using the mean SD xi-vector");
        let spans = read_spans(&corpus.join("emb").join(format!("{uri}.sd.spans")))?;
        let (iv, xv) = embeddings.embeddings(uri, Engine::Sd, &spans)?;
        Ok(fuse_xi(&iv, &xv)?.mean())
    }
}

/// Outcome of one conversation.
#[derive(Debug, Clone, Serialize)]
pub struct ConversationOutcome {
    pub uri: String,
    pub decision: Option<DomainDecision>,
    pub label: String,
    pub sd: Option<EngineResult>,
    pub kaldi: Option<EngineResult>,
    pub combined: EngineResult,
}

/// Everything a run needs, loaded once and shared by the workers.
pub struct Runner<'a> {
    pub config: RunConfig,
    pub registry: DomainRegistry,
    pub embeddings: &'a dyn EmbeddingSource,
    sd_models: Option<EngineModels>,
    kaldi_models: Option<EngineModels>,
    classifier: Option<Classifier>,
}

impl<'a> Runner<'a> {
    pub fn new(config: RunConfig, embeddings: &'a dyn EmbeddingSource) -> Result<Self> {
        config.validate()?;
        let registry = config.registry()?;
        let fit = |engine: Engine| -> Result<Option<EngineModels>> {
            if config.engines.runs(engine) {
                Ok(Some(EngineModels::fit(engine, &load_dev(&config.corpus, engine)?).stage("model training")?))
            } else {
                Ok(None)
            }
        };
        let sd_models = fit(Engine::Sd)?;
        let kaldi_models = fit(Engine::Kaldi)?;
        let classifier = match &config.domain {
            DomainSource::Fixed { .. } => None,
            DomainSource::Classifier { stage1, stage2, threshold } => Some(Classifier {
                stage1: read_mlp(stage1)?,
                stage2: read_mlp(stage2)?,
                threshold: *threshold,
            }),
        };
        if let Some(p) = &config.profile_override {
            registry.get(p).ok_or_else(|| Error::UnknownLabel(p.clone()))?;
        }
        Ok(Self {
            config,
            registry,
            embeddings,
            sd_models,
            kaldi_models,
            classifier,
        })
    }

    fn sd_profile(&self, label: &DomainLabel) -> Result<DomainProfile> {
        let mut profile = match &self.config.profile_override {
            Some(name) => self.registry.get(name).ok_or_else(|| Error::UnknownLabel(name.clone()))?.clone(),
            None => self.registry.profile_for(label)?.clone(),
        };
        if let (Some(t), ClusteringSpec::Ahc { threshold, .. }) = (self.config.threshold_override, &mut profile.clustering) {
            *threshold = t;
        }
        Ok(profile)
    }

    pub fn run_one(&self, uri: &str) -> Result<ConversationOutcome> {
        let inputs = load_inputs(&self.config.corpus, uri).stage("inputs")?;
        let (decision, label) = match (&self.config.domain, &self.classifier) {
            (_, Some(c)) => {
                let x = c.input(&self.config.corpus, uri, self.embeddings).stage("domain")?;
                let d = classify_domain(&c.stage1, &c.stage2, &x, c.threshold).stage("domain")?;
                let l = d.label.clone();
                (Some(d), l)
            }
            (DomainSource::Fixed { label }, None) => (None, DomainLabel::parse(label)),
            (DomainSource::Classifier { .. }, None) => unreachable!("classifier loaded in Runner::new"),
        };

        let sd = match &self.sd_models {
            Some(models) => {
                let mut settings = self.config.sd.clone();
                settings.reseg.gmm.seed = self.config.seed;
                Some(run_sd(&inputs, self.embeddings, models, &self.sd_profile(&label)?, &settings)?)
            }
            None => None,
        };
        let kaldi = match &self.kaldi_models {
            Some(models) => {
                let mut settings = self.config.kaldi.clone();
                if let Some(t) = self.config.threshold_override {
                    settings.threshold = t;
                }
                Some(run_kaldi_style(&inputs, self.embeddings, models, &settings)?)
            }
            None => None,
        };
        let combined = match self.config.engines {
            EnginePolicy::Both => combine(&label, &self.registry, sd.as_ref(), kaldi.as_ref())?,
            EnginePolicy::Sd => sd.clone().expect("sd ran"),
            EnginePolicy::Kaldi => kaldi.clone().expect("kaldi ran"),
        };
        for r in sd.iter().chain(kaldi.iter()) {
            check_within_sad(&r.hypothesis, &inputs.sad)?;
        }
        Ok(ConversationOutcome {
            uri: uri.into(),
            decision,
            label: label.to_string(),
            sd,
            kaldi,
            combined,
        })
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub outcomes: Vec<ConversationOutcome>,
    pub score: Option<ScoreReport>,
}

/// Processes every conversation on a worker pool, then writes
/// `<output>/{sd,kaldi,combined}/<uri>.rttm`, `<output>/diagnostics/<uri>.json`
/// and, when references exist, `<output>/score.{txt,json}`.
pub fn run_corpus(config: &RunConfig, embeddings: &dyn EmbeddingSource) -> Result<RunSummary> {
    let uris = config.resolve_uris()?;
    info!("running {} conversations", uris.len());
    let runner = Runner::new(config.clone(), embeddings)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<ConversationOutcome>> = pool.install(|| uris.par_iter().map(|u| runner.run_one(u)).collect());
    let outcomes = results
        .into_iter()
        .zip(&uris)
        .map(|(r, u)| r.map_err(|e| Error::format(format!("conversation {u}"), e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    write_outputs(&config.output, &outcomes)?;
    let score = score_outputs(config, &outcomes)?;
    Ok(RunSummary { outcomes, score })
}

fn write_outputs(out: &Path, outcomes: &[ConversationOutcome]) -> Result<()> {
    for o in outcomes {
        for (dir, r) in [("sd", o.sd.as_ref()), ("kaldi", o.kaldi.as_ref()), ("combined", Some(&o.combined))] {
            if let Some(r) = r {
                write_text(&out.join(dir).join(format!("{}.rttm", o.uri)), &r.hypothesis.to_rttm())?;
            }
        }
        let diag = serde_json::json!({
            "uri": o.uri,
            "label": o.label,
            "decision": o.decision,
            "engine": o.combined.engine,
            "sd": o.sd.as_ref().map(|r| &r.diagnostics),
            "kaldi": o.kaldi.as_ref().map(|r| &r.diagnostics),
        });
        let mut text = serde_json::to_string_pretty(&diag).expect("diagnostics serialize");
        text.push('\n');
        write_text(&out.join("diagnostics").join(format!("{}.json", o.uri)), &text)?;
    }
    Ok(())
}

fn score_outputs(config: &RunConfig, outcomes: &[ConversationOutcome]) -> Result<Option<ScoreReport>> {
    let ref_dir = config.corpus.join("ref");
    if !ref_dir.is_dir() {
        return Ok(None);
    }
    let uem_path = config.corpus.join("all.uem");
    let uems: BTreeMap<String, Uem> = if uem_path.exists() {
        let text = fs::read_to_string(&uem_path).map_err(|e| Error::io(&uem_path, e))?;
        Uem::parse(&text)?.into_iter().map(|u| (u.uri.clone(), u)).collect()
    } else {
        BTreeMap::new()
    };
    let mut files = Vec::new();
    for o in outcomes {
        let path = ref_dir.join(format!("{}.rttm", o.uri));
        if !path.exists() {
            warn!("{}: no reference, not scored", o.uri);
            continue;
        }
        let reference = TimedLabeling::read_rttm(&path, &o.uri)?;
        let mut f = der(&reference, &o.combined.hypothesis, uems.get(&o.uri))?;
        let segments: Vec<Interval> = o.combined.hypothesis.turns.iter().map(|t| t.interval()).collect();
        if let Ok((c, p)) = coverage_purity(&reference, &segments) {
            f.coverage = Some(c);
            f.purity = Some(p);
        }
        files.push(f);
    }
    if files.is_empty() {
        return Ok(None);
    }
    let report = ScoreReport::from_files(files);
    write_text(&config.output.join("score.txt"), &report.to_table())?;
    write_text(&config.output.join("score.json"), &report.to_json())?;
    Ok(Some(report))
}
