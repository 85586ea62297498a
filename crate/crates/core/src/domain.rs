//! Two-stage domain classification of a conversation vector and the
//! per-domain settings registry that routes clustering and engine choice.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Detection threshold shared by both classifier stages.
pub const DETECTION_THRESHOLD: f64 = 0.6;

/// Stage-2 output classes in network order.
pub const DOMAIN_CLASSES: [&str; 11] = [
    "LibriVox",
    "SEEDLingS",
    "CIR",
    "ADOS",
    "SCOTUS",
    "DCIEM",
    "RT-04S",
    "SLX",
    "MIXER6",
    "VAST",
    "YouthPoint",
];

/// Registry row used for conversations no stage-2 class claims.
pub const FALLBACK_PROFILE: &str = "other";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::format("MLP activation", format!("unknown tag {other:?}"))),
        }
    }

    fn apply<T: Scalar>(self, v: &mut [T]) {
        match self {
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Sigmoid => v.iter_mut().for_each(|x| *x = T::one() / (T::one() + (-*x).exp())),
            Activation::Identity => {}
            Activation::Softmax => {
                let max = v.iter().copied().fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for x in v.iter_mut() {
                    *x = (*x - max).exp();
                    s = s + *x;
                }
                v.iter_mut().for_each(|x| *x = *x / s);
            }
        }
    }
}

/// Affine layer `act(W x + b)` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

/// Feed-forward classifier. Inference only.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    pub layers: Vec<MlpLayer<T>>,
    /// For a one-output first stage: whether the neuron scores "single speaker".
    pub positive_is_single: bool,
}

impl<T: Scalar> MlpModel<T> {
    pub fn new(layers: Vec<MlpLayer<T>>, positive_is_single: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.rows() {
                return Err(Error::DimMismatch {
                    expected: l.weights.rows(),
                    got: l.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].weights.rows() != l.weights.cols() {
                return Err(Error::DimMismatch {
                    expected: layers[i - 1].weights.rows(),
                    got: l.weights.cols(),
                });
            }
            if !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::format(format!("MLP layer {i}"), "non-finite weight"));
            }
        }
        Ok(Self {
            layers,
            positive_is_single,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.rows())
    }
}

/// Runs `x` through every layer.
pub fn mlp_forward<T: Scalar>(model: &MlpModel<T>, x: &[T]) -> Result<Vec<T>> {
    if x.len() != model.input_dim() {
        return Err(Error::DimMismatch {
            expected: model.input_dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("MLP input", "non-finite value"));
    }
    let mut h = x.to_vec();
    for layer in &model.layers {
        let mut out = layer.weights.matvec(&h);
        for (o, &b) in out.iter_mut().zip(&layer.bias) {
            *o = *o + b;
        }
        layer.activation.apply(&mut out);
        h = out;
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainLabel {
    Domain(String),
    SingleSpeaker,
    Unknown,
}

impl fmt::Display for DomainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainLabel::Domain(d) => f.write_str(d),
            DomainLabel::SingleSpeaker => f.write_str("SINGLE_SPEAKER"),
            DomainLabel::Unknown => f.write_str("UNKNOWN"),
        }
    }
}

impl DomainLabel {
    pub fn parse(s: &str) -> Self {
        match s {
            "SINGLE_SPEAKER" => DomainLabel::SingleSpeaker,
            "UNKNOWN" => DomainLabel::Unknown,
            other => DomainLabel::Domain(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDecision {
    /// Probability that the conversation has a single speaker.
    pub stage1_prob: f64,
    /// Stage-2 class posteriors; absent when stage 1 fired.
    pub stage2_posteriors: Option<Vec<f64>>,
    pub label: DomainLabel,
}

/// Classifies with the standard 11 stage-2 classes.
pub fn classify_domain<T: Scalar>(stage1: &MlpModel<T>, stage2: &MlpModel<T>, x: &[T], threshold: f64) -> Result<DomainDecision> {
    classify_domain_with(stage1, stage2, x, threshold, &DOMAIN_CLASSES)
}

/// Stage 1 at or above `threshold` gives `SingleSpeaker`; otherwise the top
/// stage-2 class wins if its posterior reaches `threshold` (ties to the lower
/// class index), else `Unknown`.
pub fn classify_domain_with<T: Scalar, S: AsRef<str>>(
    stage1: &MlpModel<T>,
    stage2: &MlpModel<T>,
    x: &[T],
    threshold: f64,
    classes: &[S],
) -> Result<DomainDecision> {
    if stage1.output_dim() != 1 {
        return Err(Error::DimMismatch {
            expected: 1,
            got: stage1.output_dim(),
        });
    }
    if stage2.output_dim() != classes.len() {
        return Err(Error::DimMismatch {
            expected: classes.len(),
            got: stage2.output_dim(),
        });
    }
    let p = mlp_forward(stage1, x)?[0].as_f64();
    let single = if stage1.positive_is_single { p } else { 1.0 - p };
    if single >= threshold {
        return Ok(DomainDecision {
            stage1_prob: single,
            stage2_posteriors: None,
            label: DomainLabel::SingleSpeaker,
        });
    }
    let post: Vec<f64> = mlp_forward(stage2, x)?.into_iter().map(Scalar::as_f64).collect();
    let mut best = 0;
    for (i, &q) in post.iter().enumerate() {
        if q > post[best] {
            best = i;
        }
    }
    let label = if post[best] >= threshold {
        DomainLabel::Domain(classes[best].as_ref().to_string())
    } else {
        DomainLabel::Unknown
    };
    Ok(DomainDecision {
        stage1_prob: single,
        stage2_posteriors: Some(post),
        label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Engine {
    Sd,
    Kaldi,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Sd => "sd",
            Engine::Kaldi => "kaldi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClusteringSpec {
    /// One speaker, no clustering.
    None,
    Ahc { k_min: usize, k_max: usize, threshold: f64 },
    Kmedoids { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainProfile {
    pub name: String,
    pub clustering: ClusteringSpec,
    /// Conversation PCA size; `None` keeps the whitened vectors as they are.
    pub pca_dim: Option<usize>,
    /// Engine whose output late combination keeps for this domain.
    pub engine: Engine,
    /// Change-score peak threshold for cutting speech regions.
    #[serde(default = "default_change_threshold")]
    pub change_threshold: f64,
}

pub const DEFAULT_CHANGE_THRESHOLD: f64 = 0.5;

fn default_change_threshold() -> f64 {
    DEFAULT_CHANGE_THRESHOLD
}

impl DomainProfile {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("profile {}: {m}", self.name)));
        match self.clustering {
            ClusteringSpec::None => {}
            ClusteringSpec::Ahc { k_min, k_max, threshold } => {
                if k_min == 0 || k_min > k_max {
                    return bad(format!("invalid corridor {k_min}-{k_max}"));
                }
                if !threshold.is_finite() {
                    return bad("non-finite AHC threshold".into());
                }
            }
            ClusteringSpec::Kmedoids { k } => {
                if k == 0 {
                    return bad("k-medoids needs k >= 1".into());
                }
            }
        }
        if !(0.0..=1.0).contains(&self.change_threshold) {
            return bad(format!("change threshold {} outside [0, 1]", self.change_threshold));
        }
        if self.pca_dim == Some(0) {
            return bad("PCA dimension 0".into());
        }
        Ok(())
    }
}

/// Per-domain settings, one row per stage-2 class plus the fallback row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRegistry {
    pub profiles: Vec<DomainProfile>,
}

fn ahc(name: &str, k_min: usize, k_max: usize, threshold: f64, pca: Option<usize>, engine: Engine) -> DomainProfile {
    DomainProfile {
        name: name.into(),
        clustering: ClusteringSpec::Ahc { k_min, k_max, threshold },
        pca_dim: pca,
        engine,
        change_threshold: DEFAULT_CHANGE_THRESHOLD,
    }
}

fn kmed(name: &str, k: usize) -> DomainProfile {
    DomainProfile {
        name: name.into(),
        clustering: ClusteringSpec::Kmedoids { k },
        pca_dim: None,
        engine: Engine::Sd,
        change_threshold: DEFAULT_CHANGE_THRESHOLD,
    }
}

impl Default for DomainRegistry {
    fn default() -> Self {
        use Engine::{Kaldi, Sd};
        Self {
            profiles: vec![
                DomainProfile {
                    name: "LibriVox".into(),
                    clustering: ClusteringSpec::None,
                    pca_dim: None,
                    engine: Sd,
                    change_threshold: DEFAULT_CHANGE_THRESHOLD,
                },
                ahc("SEEDLingS", 2, 3, 0.62, Some(6), Kaldi),
                kmed("CIR", 4),
                kmed("ADOS", 2),
                ahc("SCOTUS", 5, 10, 0.46, Some(12), Sd),
                kmed("DCIEM", 2),
                ahc("RT-04S", 3, 10, 0.46, Some(6), Sd),
                ahc("SLX", 2, 6, 0.762, Some(6), Sd),
                kmed("MIXER6", 2),
                ahc("VAST", 1, 9, 0.58, Some(3), Kaldi),
                ahc("YouthPoint", 3, 5, 0.54, Some(9), Sd),
                ahc(FALLBACK_PROFILE, 2, 6, 0.1, None, Kaldi),
            ],
        }
    }
}

impl DomainRegistry {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.profiles.iter().enumerate() {
            p.validate()?;
            if self.profiles[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!("profile {} listed twice", p.name)));
            }
        }
        if self.get(FALLBACK_PROFILE).is_none() {
            return Err(Error::Config(format!("registry lacks the {FALLBACK_PROFILE:?} profile")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&DomainProfile> {
        self.profiles.iter().find(|p| p.name == name)
    }

    /// Row for a classifier label: single speaker maps to the clustering-free
    /// row, unknown to the fallback row.
    pub fn profile_for(&self, label: &DomainLabel) -> Result<&DomainProfile> {
        let found = match label {
            DomainLabel::Domain(name) => self.get(name),
            DomainLabel::Unknown => self.get(FALLBACK_PROFILE),
            DomainLabel::SingleSpeaker => self
                .profiles
                .iter()
                .find(|p| p.clustering == ClusteringSpec::None),
        };
        found.ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let reg: Self = serde_json::from_str(text).map_err(|e| Error::format("domain registry", e.to_string()))?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&crate::annotation::read_text(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(rows: &[&[f64]], bias: &[f64], act: Activation) -> MlpLayer<f64> {
        MlpLayer {
            weights: Matrix::from_rows(rows),
            bias: bias.to_vec(),
            activation: act,
        }
    }

    /// One-input stage 1 emitting sigmoid(w·x).
    fn stage1(w: f64) -> MlpModel<f64> {
        MlpModel::new(vec![layer(&[&[w]], &[0.0], Activation::Sigmoid)], true).unwrap()
    }

    /// Stage 2 whose logits put `logit` on class `c` and 0 elsewhere.
    fn stage2(c: usize, logit: f64) -> MlpModel<f64> {
        let rows: Vec<Vec<f64>> = (0..11).map(|i| vec![if i == c { logit } else { 0.0 }]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        MlpModel::new(vec![layer(&refs, &[0.0; 11], Activation::Softmax)], true).unwrap()
    }

    fn logit_for(p: f64) -> f64 {
        // softmax with 10 zero logits: p = e^l / (e^l + 10)
        (10.0 * p / (1.0 - p)).ln()
    }

    #[test]
    fn identity_and_sigmoid() {
        let id = MlpModel::new(vec![layer(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], Activation::Identity)], true).unwrap();
        assert_eq!(mlp_forward(&id, &[3.5, -2.0]).unwrap(), vec![3.5, -2.0]);
        let z = MlpModel::new(vec![layer(&[&[0.0, 0.0]], &[0.0], Activation::Sigmoid)], true).unwrap();
        assert_eq!(mlp_forward(&z, &[9.0, 1.0]).unwrap(), vec![0.5]);
        assert!(mlp_forward(&z, &[1.0]).is_err());
    }

    #[test]
    fn rejects_broken_models() {
        let a = layer(&[&[1.0, 2.0]], &[0.0], Activation::Tanh);
        let b = layer(&[&[1.0, 2.0]], &[0.0], Activation::Tanh);
        assert!(MlpModel::new(vec![a.clone(), b], true).is_err());
        let nan = layer(&[&[f64::NAN]], &[0.0], Activation::Tanh);
        assert!(MlpModel::new(vec![nan], true).is_err());
        let short_bias = layer(&[&[1.0], &[1.0]], &[0.0], Activation::Tanh);
        assert!(MlpModel::new(vec![short_bias], true).is_err());
        assert!(MlpModel::<f64>::new(vec![], true).is_err());
    }

    #[test]
    fn single_speaker_short_circuit() {
        let s1 = stage1((0.95f64 / 0.05).ln());
        let d = classify_domain(&s1, &stage2(4, 10.0), &[1.0], DETECTION_THRESHOLD).unwrap();
        assert_eq!(d.label, DomainLabel::SingleSpeaker);
        assert!(d.stage2_posteriors.is_none());
        assert!((d.stage1_prob - 0.95).abs() < 1e-12);
    }

    #[test]
    fn inverted_stage1_orientation() {
        let mut s1 = stage1((0.95f64 / 0.05).ln());
        s1.positive_is_single = false;
        let d = classify_domain(&s1, &stage2(4, logit_for(0.9)), &[1.0], DETECTION_THRESHOLD).unwrap();
        assert_eq!(d.label, DomainLabel::Domain("SCOTUS".into()));
    }

    #[test]
    fn stage2_threshold() {
        let s1 = stage1(-3.0);
        let d = classify_domain(&s1, &stage2(4, logit_for(0.9)), &[1.0], DETECTION_THRESHOLD).unwrap();
        assert_eq!(d.label, DomainLabel::Domain("SCOTUS".into()));
        let post = d.stage2_posteriors.unwrap();
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((post[4] - 0.9).abs() < 1e-12);

        let d = classify_domain(&s1, &stage2(4, logit_for(0.55)), &[1.0], DETECTION_THRESHOLD).unwrap();
        assert_eq!(d.label, DomainLabel::Unknown);
    }

    #[test]
    fn default_registry_rows() {
        let r = DomainRegistry::default();
        r.validate().unwrap();
        let p = r.profile_for(&DomainLabel::Domain("SCOTUS".into())).unwrap();
        assert_eq!(p.clustering, ClusteringSpec::Ahc { k_min: 5, k_max: 10, threshold: 0.46 });
        assert_eq!(p.pca_dim, Some(12));
        let p = r.profile_for(&DomainLabel::Domain("MIXER6".into())).unwrap();
        assert_eq!(p.clustering, ClusteringSpec::Kmedoids { k: 2 });
        let p = r.profile_for(&DomainLabel::Unknown).unwrap();
        assert_eq!(p.clustering, ClusteringSpec::Ahc { k_min: 2, k_max: 6, threshold: 0.1 });
        assert_eq!(p.pca_dim, None);
        assert_eq!(r.profile_for(&DomainLabel::SingleSpeaker).unwrap().name, "LibriVox");
        assert!(r.profile_for(&DomainLabel::Domain("CALLHOME".into())).is_err());
        for c in DOMAIN_CLASSES {
            assert!(r.get(c).is_some(), "{c}");
        }
    }

    #[test]
    fn registry_json_round_trip() {
        let r = DomainRegistry::default();
        let text = r.to_json();
        let back = DomainRegistry::from_json(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), text);
        assert!(DomainRegistry::from_json("{\"profiles\": []}").is_err());
    }

    #[test]
    fn label_text() {
        for l in [DomainLabel::SingleSpeaker, DomainLabel::Unknown, DomainLabel::Domain("VAST".into())] {
            assert_eq!(DomainLabel::parse(&l.to_string()), l);
        }
    }
}
