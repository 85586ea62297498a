//! Segment embeddings: xi-vector fusion, development-set whitening and
//! conversation-dependent PCA.

use std::ops::Range;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::annotation::Interval;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Latent dimension of the i-vector extractor the embeddings come from.
pub const IVECTOR_DIM: usize = 128;
/// Dimension of the x-vector embedding layer.
pub const XVECTOR_DIM: usize = 128;
/// UBM size of the i-vector extractor (metadata only).
pub const IVECTOR_UBM_COMPONENTS: usize = 2048;

const SPAN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingKind {
    Ivec,
    Xvec,
    Xi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingEntry<T> {
    pub span: Interval,
    pub vector: Vec<T>,
}

/// Fixed-dimension vectors, one per subsegment.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    pub uri: String,
    pub kind: EmbeddingKind,
    pub dim: usize,
    pub entries: Vec<EmbeddingEntry<T>>,
}

impl<T: Scalar> EmbeddingSet<T> {
    pub fn new(uri: impl Into<String>, kind: EmbeddingKind, dim: usize, entries: Vec<EmbeddingEntry<T>>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if e.vector.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: e.vector.len(),
                });
            }
            if e.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::format("embedding set", format!("entry {i} is not finite")));
            }
        }
        Ok(Self {
            uri: uri.into(),
            kind,
            dim,
            entries,
        })
    }

    /// Builds a set from spans and row vectors of a matrix.
    pub fn from_matrix(uri: impl Into<String>, kind: EmbeddingKind, spans: &[Interval], rows: &Matrix<T>) -> Result<Self> {
        if spans.len() != rows.rows() {
            return Err(Error::Alignment {
                index: spans.len().min(rows.rows()),
            });
        }
        let entries = spans
            .iter()
            .zip(rows.row_iter())
            .map(|(&span, r)| EmbeddingEntry {
                span,
                vector: r.to_vec(),
            })
            .collect();
        Self::new(uri, kind, rows.cols(), entries)
    }

    /// Checks the dimension against the extractor metadata for i-/x-vectors.
    pub fn check_extractor_dim(&self, declared: usize) -> Result<()> {
        if self.kind != EmbeddingKind::Xi && self.dim != declared {
            return Err(Error::DimMismatch {
                expected: declared,
                got: self.dim,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        let mut data = Vec::with_capacity(self.len() * self.dim);
        for e in &self.entries {
            data.extend_from_slice(&e.vector);
        }
        Matrix::from_vec(self.len(), self.dim, data)
    }

    pub fn spans(&self) -> Vec<Interval> {
        self.entries.iter().map(|e| e.span).collect()
    }

    /// Copies coordinates `range` of every vector into a new set.
    pub fn slice(&self, range: Range<usize>, kind: EmbeddingKind) -> Self {
        Self {
            uri: self.uri.clone(),
            kind,
            dim: range.len(),
            entries: self
                .entries
                .iter()
                .map(|e| EmbeddingEntry {
                    span: e.span,
                    vector: e.vector[range.clone()].to_vec(),
                })
                .collect(),
        }
    }

    /// Replaces every vector by `f(vector)`; all outputs must share a length.
    fn map_vectors(&self, kind: EmbeddingKind, dim: usize, f: impl Fn(&[T]) -> Vec<T>) -> Self {
        Self {
            uri: self.uri.clone(),
            kind,
            dim,
            entries: self
                .entries
                .iter()
                .map(|e| EmbeddingEntry {
                    span: e.span,
                    vector: f(&e.vector),
                })
                .collect(),
        }
    }

    /// Per-conversation mean vector.
    pub fn mean(&self) -> Vec<T> {
        self.to_matrix().column_means()
    }
}

/// Concatenates each segment's x-vector and i-vector (x first).
pub fn fuse_xi<T: Scalar>(ivecs: &EmbeddingSet<T>, xvecs: &EmbeddingSet<T>) -> Result<EmbeddingSet<T>> {
    if ivecs.uri != xvecs.uri {
        return Err(Error::format(
            "fuse_xi",
            format!("uri mismatch: `{}` vs `{}`", ivecs.uri, xvecs.uri),
        ));
    }
    let n = ivecs.len().min(xvecs.len());
    for i in 0..n {
        let (a, b) = (ivecs.entries[i].span, xvecs.entries[i].span);
        if (a.start - b.start).abs() > SPAN_TOL || (a.end - b.end).abs() > SPAN_TOL {
            return Err(Error::Alignment { index: i });
        }
    }
    if ivecs.len() != xvecs.len() {
        return Err(Error::Alignment { index: n });
    }
    let entries = xvecs
        .entries
        .iter()
        .zip(&ivecs.entries)
        .map(|(x, i)| {
            let mut v = Vec::with_capacity(x.vector.len() + i.vector.len());
            v.extend_from_slice(&x.vector);
            v.extend_from_slice(&i.vector);
            EmbeddingEntry {
                span: x.span,
                vector: v,
            }
        })
        .collect();
    Ok(EmbeddingSet {
        uri: xvecs.uri.clone(),
        kind: EmbeddingKind::Xi,
        dim: xvecs.dim + ivecs.dim,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WhitenStrategy {
    /// Subtract the development-set mean.
    GlobalMean,
    /// Independent mean + projection per sub-vector, concatenated. Block
    /// sizes partition the vector in order (x-block first for xi-vectors).
    BlockConcat { block_dims: Vec<usize> },
}

/// Mean and projection of one sub-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenBlock<T> {
    pub mean: Vec<T>,
    /// `out × in` projection.
    pub projection: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhitenModel<T> {
    pub strategy: WhitenStrategy,
    pub mean: Vec<T>,
    pub blocks: Option<Vec<WhitenBlock<T>>>,
}

impl<T: Scalar> WhitenModel<T> {
    /// Mean-only model.
    pub fn global_mean(mean: Vec<T>) -> Self {
        Self {
            strategy: WhitenStrategy::GlobalMean,
            mean,
            blocks: None,
        }
    }

    /// Block model from externally supplied per-block means and projections
    /// (PCA, LDA or anything else).
    pub fn block_concat(blocks: Vec<WhitenBlock<T>>) -> Result<Self> {
        for b in &blocks {
            if b.projection.cols() != b.mean.len() {
                return Err(Error::DimMismatch {
                    expected: b.mean.len(),
                    got: b.projection.cols(),
                });
            }
        }
        let block_dims = blocks.iter().map(|b| b.mean.len()).collect();
        let mean = blocks.iter().flat_map(|b| b.mean.iter().copied()).collect();
        Ok(Self {
            strategy: WhitenStrategy::BlockConcat { block_dims },
            mean,
            blocks: Some(blocks),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        match &self.blocks {
            Some(b) => b.iter().map(|b| b.projection.rows()).sum(),
            None => self.mean.len(),
        }
    }
}

/// Fits a whitening model on development embeddings.
///
/// For `BlockConcat` each block gets its own mean and a PCA whitening
/// projection `Λ^{-1/2} Vᵀ` (near-null directions dropped).
pub fn fit_whiten<T: Scalar>(dev: &EmbeddingSet<T>, strategy: &WhitenStrategy) -> Result<WhitenModel<T>> {
    if dev.is_empty() {
        return Err(Error::Empty("whitening needs development embeddings".into()));
    }
    match strategy {
        WhitenStrategy::GlobalMean => Ok(WhitenModel::global_mean(dev.mean())),
        WhitenStrategy::BlockConcat { block_dims } => {
            let total: usize = block_dims.iter().sum();
            if total != dev.dim {
                return Err(Error::DimMismatch {
                    expected: dev.dim,
                    got: total,
                });
            }
            let mut offset = 0;
            let mut blocks = Vec::with_capacity(block_dims.len());
            for &d in block_dims {
                let sub = dev.slice(offset..offset + d, dev.kind).to_matrix();
                offset += d;
                let mean = sub.column_means();
                let eig = sub.covariance(&mean).symmetric_eigen();
                let top = eig.values.first().copied().unwrap_or_else(T::zero);
                let keep: Vec<usize> = (0..d)
                    .filter(|&i| eig.values[i] > top * T::lit(1e-10) && eig.values[i] > T::zero())
                    .collect();
                let mut proj = Matrix::zeros(keep.len(), d);
                for (r, &i) in keep.iter().enumerate() {
                    let s = T::one() / eig.values[i].sqrt();
                    let v = canonical_sign(eig.vectors.row(i));
                    for (dst, &x) in proj.row_mut(r).iter_mut().zip(&v) {
                        *dst = x * s;
                    }
                }
                blocks.push(WhitenBlock {
                    mean,
                    projection: proj,
                });
            }
            WhitenModel::block_concat(blocks)
        }
    }
}

pub fn apply_whiten<T: Scalar>(set: &EmbeddingSet<T>, model: &WhitenModel<T>) -> Result<EmbeddingSet<T>> {
    if set.dim != model.input_dim() {
        return Err(Error::DimMismatch {
            expected: model.input_dim(),
            got: set.dim,
        });
    }
    Ok(match &model.blocks {
        None => set.map_vectors(set.kind, set.dim, |v| {
            v.iter().zip(&model.mean).map(|(&x, &m)| x - m).collect()
        }),
        Some(blocks) => set.map_vectors(set.kind, model.output_dim(), |v| {
            let mut out = Vec::with_capacity(model.output_dim());
            let mut offset = 0;
            for b in blocks {
                let d = b.mean.len();
                let centered: Vec<T> = v[offset..offset + d]
                    .iter()
                    .zip(&b.mean)
                    .map(|(&x, &m)| x - m)
                    .collect();
                out.extend(b.projection.matvec(&centered));
                offset += d;
            }
            out
        }),
    })
}

/// First non-negligible entry made non-negative.
fn canonical_sign<T: Scalar>(v: &[T]) -> Vec<T> {
    let tiny = T::lit(1e-12);
    let flip = v.iter().find(|x| x.abs() > tiny).is_some_and(|&x| x < T::zero());
    if flip {
        v.iter().map(|&x| -x).collect()
    } else {
        v.to_vec()
    }
}

/// Conversation PCA: `k × dim` orthonormal components, descending variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Vec<T>,
    pub components: Matrix<T>,
    /// Variances along each kept component.
    pub variances: Vec<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn k(&self) -> usize {
        self.components.rows()
    }
}

/// Fits PCA on the conversation's own embeddings, centred on their mean.
///
/// With fewer entries than `k`, `k` falls back to `entries - 1` (at least 1).
pub fn fit_conversation_pca<T: Scalar>(set: &EmbeddingSet<T>, k: usize) -> Result<PcaModel<T>> {
    if set.is_empty() {
        return Err(Error::Empty(format!("no embeddings in `{}` for PCA", set.uri)));
    }
    if k == 0 {
        return Err(Error::Config("PCA dimension must be positive".into()));
    }
    let mut k = k;
    if set.len() < k {
        let fallback = set.len().saturating_sub(1).max(1);
        warn!(
            "{}: {} embeddings for PCA dim {k}, using {fallback}",
            set.uri,
            set.len()
        );
        k = fallback;
    }
    k = k.min(set.dim);
    let data = set.to_matrix();
    let mean = data.column_means();
    let eig = data.covariance(&mean).symmetric_eigen();
    let mut components = Matrix::zeros(k, set.dim);
    for r in 0..k {
        components
            .row_mut(r)
            .copy_from_slice(&canonical_sign(eig.vectors.row(r)));
    }
    Ok(PcaModel {
        mean,
        components,
        variances: eig.values[..k].iter().map(|&v| v.max(T::zero())).collect(),
    })
}

pub fn apply_pca<T: Scalar>(set: &EmbeddingSet<T>, model: &PcaModel<T>) -> Result<EmbeddingSet<T>> {
    if set.dim != model.mean.len() {
        return Err(Error::DimMismatch {
            expected: model.mean.len(),
            got: set.dim,
        });
    }
    Ok(set.map_vectors(set.kind, model.k(), |v| {
        let centered: Vec<T> = v.iter().zip(&model.mean).map(|(&x, &m)| x - m).collect();
        model.components.matvec(&centered)
    }))
}
