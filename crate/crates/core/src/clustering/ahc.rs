use log::warn;

use super::{canonical_labels, ClusterAssignment, DistanceMatrix, Merge};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Average-linkage agglomerative clustering.
///
/// Merges the closest pair of clusters (ties: lowest slot pair) while the
/// cluster count exceeds `k_max`, or while the closest pair is within
/// `threshold` and the count exceeds `k_min`. Linkage distances are kept
/// exact with the Lance–Williams update for average linkage.
pub fn ahc<T: Scalar>(dist: &DistanceMatrix<T>, threshold: T, k_min: usize, k_max: usize) -> Result<ClusterAssignment<T>> {
    let n = dist.n();
    if n == 0 {
        return Err(Error::Empty("AHC needs at least one item".into()));
    }
    if k_min == 0 || k_min > k_max {
        return Err(Error::Config(format!(
            "invalid cluster corridor [{k_min}, {k_max}]"
        )));
    }
    let mut k_min = k_min;
    if k_min > n {
        warn!("AHC: k_min {k_min} exceeds {n} items, clamped");
        k_min = n;
    }

    let mut d = dist.values.clone();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut trace = Vec::new();
    let mut k = n;

    while k > k_min {
        let mut best: Option<(usize, usize, T)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !active[j] {
                    continue;
                }
                let v = d[(i, j)];
                if best.is_none_or(|(_, _, b)| v < b) {
                    best = Some((i, j, v));
                }
            }
        }
        let (a, b, v) = best.expect("at least two active clusters");
        if k <= k_max && v > threshold {
            break;
        }
        let (na, nb) = (T::from_count(size[a]), T::from_count(size[b]));
        for c in 0..n {
            if !active[c] || c == a || c == b {
                continue;
            }
            let merged = (na * d[(a, c)] + nb * d[(b, c)]) / (na + nb);
            d[(a, c)] = merged;
            d[(c, a)] = merged;
        }
        size[a] += size[b];
        active[b] = false;
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        trace.push(Merge {
            a,
            b,
            distance: v,
            size: size[a],
        });
        k -= 1;
    }

    let (labels, k) = canonical_labels(&owner);
    Ok(ClusterAssignment {
        labels,
        k,
        linkage_trace: trace,
        medoids: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{DistanceMatrix, Metric};
    use proptest::prelude::*;

    #[test]
    fn line_points_two_groups() {
        let d = DistanceMatrix::from_points_1d(&[0.0, 0.1, 10.0, 10.1]);
        let a = ahc(&d, 1.0, 1, 4).unwrap();
        assert_eq!(a.labels, vec![0, 0, 1, 1]);
        assert_eq!(a.linkage_trace.len(), 2);
    }

    #[test]
    fn corridor_extremes() {
        let d = DistanceMatrix::from_points_1d(&[0.0, 0.1, 10.0, 10.1, 3.0]);
        assert_eq!(ahc(&d, 0.0, 5, 5).unwrap().k, 5);
        let one = ahc(&d, f64::INFINITY, 1, 1).unwrap();
        assert_eq!(one.k, 1);
        assert!(one.labels.iter().all(|&l| l == 0));
        // threshold would keep 3 groups; k_max forces 2
        assert_eq!(ahc(&d, 1.0, 1, 2).unwrap().k, 2);
        // threshold would merge everything; k_min keeps 4
        assert_eq!(ahc(&d, 100.0, 4, 5).unwrap().k, 4);
    }

    #[test]
    fn errors_and_clamping() {
        let empty = DistanceMatrix::<f64>::from_points_1d(&[]);
        assert!(ahc(&empty, 1.0, 1, 1).is_err());
        let d = DistanceMatrix::from_points_1d(&[0.0, 1.0]);
        assert!(ahc(&d, 1.0, 0, 1).is_err());
        assert!(ahc(&d, 1.0, 3, 2).is_err());
        assert_eq!(ahc(&d, 0.0, 5, 6).unwrap().k, 2);
    }

    #[test]
    fn merge_distances_monotone_on_cosine() {
        let v: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.5).cos(), 1.0])
            .collect();
        let d = DistanceMatrix::cosine(&v);
        let a = ahc(&d, 10.0, 1, 12).unwrap();
        assert!(a
            .linkage_trace
            .windows(2)
            .all(|w| w[1].distance >= w[0].distance - 1e-12));
    }

    #[test]
    fn works_in_f32() {
        let d = DistanceMatrix::from_points_1d(&[0.0f32, 0.1, 10.0, 10.1]);
        assert_eq!(ahc(&d, 1.0f32, 1, 4).unwrap().k, 2);
    }

    proptest! {
        #[test]
        fn fixed_corridor_gives_exact_k(points in proptest::collection::vec(-50.0f64..50.0, 1..25), k in 1usize..25, thr in 0.0f64..100.0) {
            let k = k.min(points.len());
            let d = DistanceMatrix::from_points_1d(&points);
            let a = ahc(&d, thr, k, k).unwrap();
            prop_assert_eq!(a.k, k);
            prop_assert!(a.labels.iter().all(|&l| l < k));
            let m = DistanceMatrix::new(d.values.clone(), Metric::Custom).unwrap();
            prop_assert_eq!(ahc(&m, thr, k, k).unwrap().labels, a.labels);
        }
    }
}
