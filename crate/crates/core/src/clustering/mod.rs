//! Speaker clustering of subsegment embeddings.
//!
//! Two routes: average-linkage AHC over cosine distances stopped by a
//! distance threshold inside a `[k_min, k_max]` cluster-count corridor, and
//! PAM k-medoids with a fixed `k` over PLDA log-likelihood-ratio scores.

mod ahc;
mod kmedoids;
mod plda;

use log::warn;
use serde::{Deserialize, Serialize};

pub use ahc::ahc;
pub use kmedoids::{k_medoids, medoid_cost, pam, EXACT_SEARCH_LIMIT};
pub use plda::{fit_plda, plda_score, PldaFit, PldaModel, PldaScorer, PldaTrainConfig};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Cosine,
    NegPlda,
    /// Caller-supplied dissimilarities (tests, debugging dumps).
    Custom,
}

/// Symmetric pairwise dissimilarities.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    pub values: Matrix<T>,
    pub metric: Metric,
}

impl<T: Scalar> DistanceMatrix<T> {
    pub fn new(values: Matrix<T>, metric: Metric) -> Result<Self> {
        let n = values.rows();
        if values.cols() != n {
            return Err(Error::DimMismatch {
                expected: n,
                got: values.cols(),
            });
        }
        if !values.is_finite() {
            return Err(Error::format("distance matrix", "non-finite entry"));
        }
        let tol = T::lit(1e-9);
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if (a - b).abs() > tol * T::one().max(a.abs()) {
                    return Err(Error::format(
                        "distance matrix",
                        format!("asymmetric at ({i}, {j})"),
                    ));
                }
            }
        }
        Ok(Self { values, metric })
    }

    /// Distances `|x_i - x_j|` of scalar points; handy for tests.
    pub fn from_points_1d(points: &[T]) -> Self {
        let n = points.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = (points[i] - points[j]).abs();
            }
        }
        Self {
            values: m,
            metric: Metric::Custom,
        }
    }

    /// Pairwise cosine distances.
    pub fn cosine(vectors: &[Vec<T>]) -> Self {
        let n = vectors.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = cosine_distance(&vectors[i], &vectors[j]);
                m[(i, j)] = d;
                m[(j, i)] = d;
            }
        }
        Self {
            values: m,
            metric: Metric::Cosine,
        }
    }

    /// Raw negated PLDA scores `-LLR(i, j)`, diagonal included.
    pub fn neg_plda(scorer: &PldaScorer<T>, vectors: &[Vec<T>]) -> Self {
        let n = vectors.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let d = -scorer.score(&vectors[i], &vectors[j]);
                m[(i, j)] = d;
                m[(j, i)] = d;
            }
        }
        Self {
            values: m,
            metric: Metric::NegPlda,
        }
    }

    /// `-LLR` shifted so the smallest off-diagonal entry is 0, zero diagonal.
    pub fn neg_plda_shifted(scorer: &PldaScorer<T>, vectors: &[Vec<T>]) -> Self {
        let mut d = Self::neg_plda(scorer, vectors);
        let n = d.n();
        let mut min = T::infinity();
        for i in 0..n {
            for j in (i + 1)..n {
                min = min.min(d.values[(i, j)]);
            }
        }
        if !min.is_finite() {
            min = T::zero();
        }
        for i in 0..n {
            for j in 0..n {
                d.values[(i, j)] = if i == j { T::zero() } else { d.values[(i, j)] - min };
            }
        }
        d
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[(i, j)]
    }
}

/// `1 - cos(u, v)`; a zero vector gives 1.
pub fn cosine_distance<T: Scalar>(u: &[T], v: &[T]) -> T {
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == T::zero() || nv == T::zero() {
        warn!("cosine distance with a zero vector, using 1");
        return T::one();
    }
    let c = (dot(u, v) / (nu * nv)).max(-T::one()).min(T::one());
    T::one() - c
}

/// One AHC merge: slots `a < b` joined at `distance`; the result keeps slot `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge<T> {
    pub a: usize,
    pub b: usize,
    pub distance: T,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment<T> {
    /// Cluster per item, numbered by first appearance.
    pub labels: Vec<usize>,
    pub k: usize,
    /// AHC merge history, empty for k-medoids.
    pub linkage_trace: Vec<Merge<T>>,
    /// Medoid item per cluster, empty for AHC.
    pub medoids: Vec<usize>,
}

impl<T> ClusterAssignment<T> {
    /// Members of every cluster in label order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Renumbers labels by first appearance.
pub(crate) fn canonical_labels(raw: &[usize]) -> (Vec<usize>, usize) {
    let mut map: Vec<(usize, usize)> = Vec::new();
    let labels = raw
        .iter()
        .map(|&r| match map.iter().find(|(k, _)| *k == r) {
            Some(&(_, v)) => v,
            None => {
                let v = map.len();
                map.push((r, v));
                v
            }
        })
        .collect();
    (labels, map.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert!(cosine_distance(&[1.0f64, 2.0], &[1.0, 2.0]).abs() < 1e-15);
        assert!((cosine_distance(&[1.0f64, 0.0], &[0.0, 3.0]) - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[1.0, 1.0]) - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!((cosine_distance(&[1.0f64, 0.0], &[1.0, 1.0]) - 0.29289).abs() < 1e-5);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 1.0]), 1.0);
        assert!((cosine_distance(&[1.0f32, 0.0], &[-1.0, 0.0]) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn cosine_matrix_has_zero_diagonal() {
        let v = vec![vec![1.0, 0.5], vec![0.2, 1.0], vec![-1.0, 0.1]];
        let d = DistanceMatrix::cosine(&v);
        for i in 0..3 {
            assert_eq!(d.get(i, i), 0.0);
        }
        assert!(DistanceMatrix::new(d.values.clone(), Metric::Cosine).is_ok());
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Matrix::from_rows(&[[0.0, 1.0], [2.0, 0.0]]);
        assert!(DistanceMatrix::new(m, Metric::Custom).is_err());
    }

    #[test]
    fn canonical_numbering() {
        assert_eq!(canonical_labels(&[5, 5, 2, 9, 2]), (vec![0, 0, 1, 2, 1], 3));
    }
}
