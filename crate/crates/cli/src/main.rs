use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use xidiar::annotation::{TimedLabeling, Uem};
use xidiar::domain::{classify_domain, DomainLabel, DomainRegistry};
use xidiar::features::{apply_cmn, extract_lfcc, AudioBuffer};
use xidiar::pipeline::formats::{read_matrix, read_mlp, spans_to_text, write_text};
use xidiar::pipeline::run::{load_inputs, Runner};
use xidiar::pipeline::{
    engines::{plan_kaldi_segments, plan_sd_segments},
    run_corpus, write_synth_corpus, EnginePolicy, FileEmbeddings, RunConfig, SynthConfig, SynthCorpusConfig,
};
use xidiar::resegmentation::{resegment, ResegConfig};
use xidiar::scoring::{coverage_purity, der, ScoreReport};

#[derive(Parser)]
#[command(name = "xidiar", version, about = "Speaker diarization with domain-routed clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Both,
    Sd,
    Kaldi,
}

impl From<EngineArg> for EnginePolicy {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Both => EnginePolicy::Both,
            EngineArg::Sd => EnginePolicy::Sd,
            EngineArg::Kaldi => EnginePolicy::Kaldi,
        }
    }
}

#[derive(clap::Args)]
struct Overrides {
    /// Engine(s) to run.
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Registry row the SD engine uses for every conversation.
    #[arg(long)]
    profile: Option<String>,
    /// AHC stopping threshold for both engines.
    #[arg(long)]
    threshold: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(e) = self.engine {
            cfg.engines = e.into();
        }
        if self.profile.is_some() {
            cfg.profile_override = self.profile.clone();
        }
        if self.threshold.is_some() {
            cfg.threshold_override = self.threshold;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline over a corpus described by a JSON run config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// DER, JER, coverage and purity of hypothesis RTTM against reference RTTM.
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        uem: Option<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Subsegment spans one engine would embed for a conversation.
    Segment {
        config: PathBuf,
        uri: String,
        #[arg(long, value_enum, default_value = "sd")]
        engine: EngineArg,
        /// Change-score peak threshold (SD engine).
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Clustering without resegmentation for one conversation.
    Cluster {
        config: PathBuf,
        uri: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// GMM resegmentation of an initial labeling.
    Reseg {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        rttm: PathBuf,
        #[arg(long)]
        sad: PathBuf,
        #[arg(long)]
        uri: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Domain label for each row of an input matrix.
    ClassifyDomain {
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = xidiar::domain::DETECTION_THRESHOLD)]
        threshold: f64,
        /// Also print the registry row and engine each label routes to.
        #[arg(long)]
        route: bool,
    },
    /// Writes a synthetic corpus with references and a run config.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        conversations: usize,
        #[arg(long, default_value_t = 3)]
        speakers: usize,
        #[arg(long, default_value_t = 300.0)]
        duration: f64,
        /// Minimum speaker-mean distance in noise standard deviations.
        #[arg(long, default_value_t = 6.0)]
        separation: f64,
        #[arg(long, default_value = "SLX")]
        domain: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn by_uri(path: &Path) -> Result<BTreeMap<String, TimedLabeling>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TimedLabeling::parse_rttm(&text, None)?.into_iter().map(|l| (l.uri.clone(), l)).collect())
}

fn score(reference: &Path, hyp: &Path, uem: Option<&Path>, json: bool) -> Result<()> {
    let refs = by_uri(reference)?;
    let hyps = by_uri(hyp)?;
    let uems: BTreeMap<String, Uem> = match uem {
        Some(p) => Uem::parse(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?
            .into_iter()
            .map(|u| (u.uri.clone(), u))
            .collect(),
        None => BTreeMap::new(),
    };
    let mut files = Vec::new();
    for (uri, r) in &refs {
        let h = hyps.get(uri).cloned().unwrap_or_else(|| TimedLabeling::new(uri.as_str()));
        let mut f = der(r, &h, uems.get(uri))?;
        let segments: Vec<_> = h.turns.iter().map(|t| t.interval()).collect();
        if let Ok((c, p)) = coverage_purity(r, &segments) {
            f.coverage = Some(c);
            f.purity = Some(p);
        }
        files.push(f);
    }
    if files.is_empty() {
        bail!("no reference conversations in {}", reference.display());
    }
    let report = ScoreReport::from_files(files);
    println!("{}", if json { report.to_json() } else { report.to_table() });
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let embeddings = FileEmbeddings::new(&cfg.corpus);
            let summary = run_corpus(&cfg, &embeddings)?;
            info!("wrote {} conversations to {}", summary.outcomes.len(), cfg.output.display());
            if let Some(report) = summary.score {
                println!("{}", report.to_table());
            }
        }
        Command::Score { reference, hyp, uem, json } => score(&reference, &hyp, uem.as_deref(), json)?,
        Command::Segment { config, uri, engine, threshold, out } => {
            let cfg = RunConfig::load(&config)?;
            let inputs = load_inputs(&cfg.corpus, &uri)?;
            let spans = match engine {
                EngineArg::Kaldi => plan_kaldi_segments(&inputs.sad, &cfg.kaldi)?.spans(),
                _ => {
                    let features = match &inputs.audio {
                        Some(a) if inputs.change_scores.is_none() => Some(apply_cmn(&extract_lfcc::<f64>(a, &cfg.sd.lfcc)?)),
                        _ => None,
                    };
                    plan_sd_segments(&inputs, features.as_ref(), threshold, &cfg.sd)?.0.spans()
                }
            };
            emit(out.as_deref(), &spans_to_text(&spans))?;
        }
        Command::Cluster { config, uri, overrides } => {
            let mut cfg = load_config(&config, &overrides)?;
            cfg.sd.resegment = false;
            let embeddings = FileEmbeddings::new(&cfg.corpus);
            let runner = Runner::new(cfg, &embeddings)?;
            let outcome = runner.run_one(&uri)?;
            emit(overrides.out.as_deref().map(|d| d.join(format!("{uri}.rttm"))).as_deref(), &outcome.combined.hypothesis.to_rttm())?;
        }
        Command::Reseg { audio, rttm, sad, uri, seed, out } => {
            let audio = AudioBuffer::read_wav(&audio)?;
            let init = TimedLabeling::read_rttm(&rttm, &uri)?;
            let sad = TimedLabeling::read_sad(&sad, &uri)?;
            let features = apply_cmn(&extract_lfcc::<f64>(&audio, &Default::default())?);
            let mut cfg = ResegConfig::default();
            cfg.gmm.seed = seed;
            let hyp = resegment(&features, &init, &sad, &cfg)?;
            emit(out.as_deref(), &hyp.to_rttm())?;
        }
        Command::ClassifyDomain { stage1, stage2, input, threshold, route } => {
            let s1 = read_mlp(&stage1)?;
            let s2 = read_mlp(&stage2)?;
            let x = read_matrix(&input)?;
            let registry = DomainRegistry::default();
            for row in x.row_iter() {
                let d = classify_domain(&s1, &s2, row, threshold)?;
                if route {
                    let p = registry.profile_for(&d.label)?;
                    println!("{}\t{}\t{}", d.label, p.name, p.engine);
                } else {
                    println!("{}", d.label);
                }
            }
        }
        Command::GenSynth { out, conversations, speakers, duration, separation, domain, seed } => {
            DomainRegistry::default().profile_for(&DomainLabel::parse(&domain))?;
            let cfg = SynthCorpusConfig {
                conversations,
                seed,
                conversation: SynthConfig {
                    duration,
                    speakers,
                    separation,
                    ..SynthConfig::default()
                },
                domain,
                ..SynthCorpusConfig::default()
            };
            write_synth_corpus(&out, &cfg)?;
            println!("{}", out.join("run.json").display());
        }
    }
    Ok(())
}
