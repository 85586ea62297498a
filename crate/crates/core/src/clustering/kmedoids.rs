use super::{canonical_labels, ClusterAssignment, DistanceMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Total distance of every item to its nearest medoid.
pub fn medoid_cost<T: Scalar>(dist: &DistanceMatrix<T>, medoids: &[usize]) -> T {
    (0..dist.n())
        .map(|i| {
            medoids
                .iter()
                .map(|&m| dist.get(i, m))
                .fold(T::infinity(), T::min)
        })
        .sum()
}

/// Medoid-set count up to which [`k_medoids`] checks every set after SWAP.
pub const EXACT_SEARCH_LIMIT: usize = 50_000;

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut c: usize = 1;
    for i in 0..k {
        c = match c.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return usize::MAX,
        };
    }
    c
}

/// Cheapest medoid set by enumeration, replacing `medoids` only on a strict
/// improvement. Sets are visited in lexicographic order.
fn exhaustive_polish<T: Scalar>(dist: &DistanceMatrix<T>, medoids: &mut Vec<usize>, current: T, eps: T) -> Option<T> {
    let (n, k) = (dist.n(), medoids.len());
    let mut best: Option<(Vec<usize>, T)> = None;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let c = medoid_cost(dist, &idx);
        let bar = best.as_ref().map_or(current - eps * current.abs().max(T::one()), |(_, b)| *b);
        if c < bar {
            best = Some((idx.clone(), c));
        }
        // advance to the next combination
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            break;
        };
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
    best.map(|(set, c)| {
        *medoids = set;
        c
    })
}

/// PAM k-medoids: greedy BUILD, then the best improving SWAP until none
/// remains. Ties go to the lowest medoid position and item index. SWAP can
/// stop in a local optimum, so when there are at most
/// [`EXACT_SEARCH_LIMIT`] medoid sets they are all checked afterwards.
///
/// Returns the assignment and the cost after BUILD, after every swap and
/// after an improving exhaustive check.
pub fn k_medoids<T: Scalar>(dist: &DistanceMatrix<T>, k: usize) -> Result<(ClusterAssignment<T>, Vec<T>)> {
    let n = dist.n();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k-medoids needs 1 <= k <= n, got k={k}, n={n}")));
    }
    let (mut medoids, mut costs) = pam(dist, k);
    if binomial(n, k) <= EXACT_SEARCH_LIMIT {
        let eps = T::epsilon() * T::lit(16.0);
        let current = *costs.last().expect("build cost recorded");
        if let Some(c) = exhaustive_polish(dist, &mut medoids, current, eps) {
            costs.push(c);
        }
    }
    Ok((assign(dist, medoids), costs))
}

/// BUILD and SWAP only; medoids in discovery order and the cost history.
pub fn pam<T: Scalar>(dist: &DistanceMatrix<T>, k: usize) -> (Vec<usize>, Vec<T>) {
    let n = dist.n();

    // BUILD
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let mut nearest = vec![T::infinity(); n];
    for _ in 0..k {
        let mut best: Option<(usize, T)> = None;
        for c in 0..n {
            if medoids.contains(&c) {
                continue;
            }
            let cost: T = (0..n).map(|i| nearest[i].min(dist.get(i, c))).sum();
            if best.is_none_or(|(_, b)| cost < b) {
                best = Some((c, cost));
            }
        }
        let (c, _) = best.expect("k <= n leaves a candidate");
        medoids.push(c);
        for (i, v) in nearest.iter_mut().enumerate() {
            *v = v.min(dist.get(i, c));
        }
    }

    let mut costs = vec![medoid_cost(dist, &medoids)];
    // SWAP
    let eps = T::epsilon() * T::lit(16.0);
    loop {
        let current = *costs.last().expect("build cost recorded");
        let mut best: Option<(usize, usize, T)> = None;
        for pos in 0..k {
            for o in 0..n {
                if medoids.contains(&o) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[pos] = o;
                let c = medoid_cost(dist, &trial);
                if best.is_none_or(|(_, _, b)| c < b) {
                    best = Some((pos, o, c));
                }
            }
        }
        match best {
            Some((pos, o, c)) if c < current - eps * current.abs().max(T::one()) => {
                medoids[pos] = o;
                costs.push(c);
            }
            _ => break,
        }
    }
    (medoids, costs)
}

fn assign<T: Scalar>(dist: &DistanceMatrix<T>, mut medoids: Vec<usize>) -> ClusterAssignment<T> {
    let n = dist.n();
    medoids.sort_unstable();
    let raw: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = 0;
            for (m, &med) in medoids.iter().enumerate() {
                if i == med {
                    best = m;
                    break;
                }
                if dist.get(i, med) < dist.get(i, medoids[best]) {
                    best = m;
                }
            }
            best
        })
        .collect();
    let (labels, k_found) = canonical_labels(&raw);
    // canonical order follows first appearance; reorder medoids to match
    let mut ordered = vec![0usize; k_found];
    for (i, &r) in raw.iter().enumerate() {
        ordered[labels[i]] = medoids[r];
    }
    ClusterAssignment {
        labels,
        k: k_found,
        linkage_trace: Vec::new(),
        medoids: ordered,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exhaustive_check_leaves_swap_local_optimum() {
        let d = DistanceMatrix::<f64>::from_points_1d(&[-4.29, 1.64, -2.16, -0.05]);
        let (medoids, swap_costs) = pam(&d, 2);
        let (a, costs) = k_medoids(&d, 2).unwrap();
        let best = *costs.last().unwrap();
        assert!((medoid_cost(&d, &a.medoids) - best).abs() < 1e-12);
        assert!(best <= *swap_costs.last().unwrap());
        assert!(best <= medoid_cost(&d, &medoids));
        assert!((best - 3.80).abs() < 1e-9, "{best}");
    }

    #[test]
    fn every_point_its_own_medoid() {
        let d = DistanceMatrix::from_points_1d(&[0.0, 1.0, 5.0, 9.0]);
        let (a, costs) = k_medoids(&d, 4).unwrap();
        assert_eq!(a.k, 4);
        assert_eq!(*costs.last().unwrap(), 0.0);
    }

    #[test]
    fn two_groups() {
        let d = DistanceMatrix::from_points_1d(&[0.0, 0.1, 10.0, 10.1]);
        let (a, costs) = k_medoids(&d, 2).unwrap();
        assert_eq!(a.labels, vec![0, 0, 1, 1]);
        assert!((*costs.last().unwrap() - 0.2f64).abs() < 1e-12);
        assert_eq!(a.medoids.len(), 2);
    }

    #[test]
    fn rejects_bad_k() {
        let d = DistanceMatrix::from_points_1d(&[0.0, 1.0]);
        assert!(k_medoids(&d, 3).is_err());
        assert!(k_medoids(&d, 0).is_err());
    }

    #[test]
    fn medoid_labels_consistent() {
        let d = DistanceMatrix::from_points_1d(&[10.0, 0.0, 10.2, 0.3, 5.0]);
        let (a, _) = k_medoids(&d, 2).unwrap();
        for (i, &l) in a.labels.iter().enumerate() {
            assert_eq!(a.labels[a.medoids[l]], l, "medoid of item {i} is in its own cluster");
        }
    }

    proptest! {
        #[test]
        fn cost_never_increases(points in proptest::collection::vec(-20.0f64..20.0, 2..30), k in 1usize..6) {
            let k = k.min(points.len());
            let d = DistanceMatrix::from_points_1d(&points);
            let (a, costs) = k_medoids(&d, k).unwrap();
            prop_assert!(costs.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(a.labels.iter().all(|&l| l < a.k));
            prop_assert!((medoid_cost(&d, &a.medoids) - costs.last().unwrap()).abs() < 1e-9);
        }
    }
}
