//! Two-covariance PLDA: speaker variable `y ~ N(mu, B)`, observation
//! `x = y + e` with `e ~ N(0, W)`. Between-class covariance is full rank.

use crate::error::{Error, Result};
use crate::linalg::{add_outer, Matrix};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel<T> {
    pub mu: Vec<T>,
    pub between_cov: Matrix<T>,
    pub within_cov: Matrix<T>,
}

fn condition_of<T: Scalar>(m: &Matrix<T>) -> f64 {
    m.symmetric_eigen().condition_number().as_f64()
}

impl<T: Scalar> PldaModel<T> {
    pub fn new(mu: Vec<T>, between_cov: Matrix<T>, within_cov: Matrix<T>) -> Result<Self> {
        let d = mu.len();
        for m in [&between_cov, &within_cov] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: m.rows(),
                });
            }
        }
        let model = Self {
            mu,
            between_cov,
            within_cov,
        };
        if model.within_cov.cholesky().is_none() {
            return Err(Error::Numerical {
                what: "within-class covariance is not positive definite".into(),
                condition: condition_of(&model.within_cov),
            });
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Precomputes the quadratic forms used for pairwise scoring.
    pub fn scorer(&self) -> Result<PldaScorer<T>> {
        PldaScorer::new(self)
    }
}

/// Pairwise LLR in closed form:
/// `LLR(u, v) = c + ½ (uᵀΛu + vᵀΛv) − ½ (uᵀQv + vᵀQu)` on centred vectors,
/// where `[[P, Q], [Q, P]]` is the inverse joint same-speaker covariance
/// and `Λ = (B + W)⁻¹ − P`.
#[derive(Debug, Clone)]
pub struct PldaScorer<T> {
    mu: Vec<T>,
    lambda: Matrix<T>,
    cross: Matrix<T>,
    constant: T,
}

impl<T: Scalar> PldaScorer<T> {
    pub fn new(model: &PldaModel<T>) -> Result<Self> {
        let d = model.dim();
        let total = model.between_cov.add(&model.within_cov);
        let total_ch = total.cholesky().ok_or_else(|| Error::Numerical {
            what: "total covariance is not positive definite".into(),
            condition: condition_of(&total),
        })?;
        let mut joint = Matrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                joint[(i, j)] = total[(i, j)];
                joint[(i + d, j + d)] = total[(i, j)];
                joint[(i, j + d)] = model.between_cov[(i, j)];
                joint[(i + d, j)] = model.between_cov[(j, i)];
            }
        }
        let joint_ch = joint.cholesky().ok_or_else(|| Error::Numerical {
            what: "joint same-speaker covariance is not positive definite".into(),
            condition: condition_of(&model.within_cov),
        })?;
        let inv = joint_ch.inverse();
        let total_inv = total_ch.inverse();
        let half = T::lit(0.5);
        let mut lambda = Matrix::zeros(d, d);
        let mut cross = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let p = half * (inv[(i, j)] + inv[(i + d, j + d)]);
                lambda[(i, j)] = total_inv[(i, j)] - p;
                cross[(i, j)] = half * (inv[(i, j + d)] + inv[(j + d, i)]);
            }
        }
        lambda.symmetrize();
        cross.symmetrize();
        Ok(Self {
            mu: model.mu.clone(),
            lambda,
            cross,
            constant: total_ch.log_det() - half * joint_ch.log_det(),
        })
    }

    /// Log-likelihood ratio same-speaker vs. different-speaker; symmetric
    /// in its arguments bit for bit.
    pub fn score(&self, u: &[T], v: &[T]) -> T {
        assert_eq!(u.len(), self.mu.len(), "vector dimension differs from model");
        assert_eq!(v.len(), self.mu.len(), "vector dimension differs from model");
        let cu: Vec<T> = u.iter().zip(&self.mu).map(|(&x, &m)| x - m).collect();
        let cv: Vec<T> = v.iter().zip(&self.mu).map(|(&x, &m)| x - m).collect();
        let self_terms = quad(&self.lambda, &cu, &cu) + quad(&self.lambda, &cv, &cv);
        let cross_terms = quad(&self.cross, &cu, &cv) + quad(&self.cross, &cv, &cu);
        let half = T::lit(0.5);
        self.constant + half * self_terms - half * cross_terms
    }
}

fn quad<T: Scalar>(m: &Matrix<T>, a: &[T], b: &[T]) -> T {
    dot(a, &m.matvec(b))
}

/// One-off pairwise score; prefer [`PldaScorer`] for many pairs.
pub fn plda_score<T: Scalar>(model: &PldaModel<T>, u: &[T], v: &[T]) -> Result<T> {
    if u.len() != model.dim() || v.len() != model.dim() {
        return Err(Error::DimMismatch {
            expected: model.dim(),
            got: if u.len() != model.dim() { u.len() } else { v.len() },
        });
    }
    Ok(model.scorer()?.score(u, v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PldaTrainConfig {
    pub max_iter: usize,
    /// Stop once the log-likelihood gain falls below this.
    pub tol: f64,
}

impl Default for PldaTrainConfig {
    fn default() -> Self {
        Self {
            max_iter: 20,
            tol: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PldaFit<T> {
    pub model: PldaModel<T>,
    /// Training log-likelihood before each EM iteration and after the last.
    pub log_likelihoods: Vec<f64>,
}

struct ClassStats<T> {
    n: usize,
    mean: Vec<T>,
    /// `Σ (x − x̄)(x − x̄)ᵀ`
    scatter: Matrix<T>,
}

/// EM training of the two-covariance model from labelled vectors.
///
/// Starts from the closed-form scatter estimates (class-mean covariance and
/// pooled within-class covariance) and runs exact EM, whose training
/// log-likelihood never decreases.
pub fn fit_plda<T: Scalar>(data: &Matrix<T>, labels: &[usize], config: &PldaTrainConfig) -> Result<PldaFit<T>> {
    if data.rows() != labels.len() {
        return Err(Error::DimMismatch {
            expected: data.rows(),
            got: labels.len(),
        });
    }
    let d = data.cols();
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Config(
            "PLDA needs at least two classes; between-class covariance is undefined".into(),
        ));
    }
    let classes: Vec<ClassStats<T>> = ids
        .iter()
        .map(|&c| {
            let rows: Vec<&[T]> = labels
                .iter()
                .zip(data.row_iter())
                .filter(|(&l, _)| l == c)
                .map(|(_, r)| r)
                .collect();
            let m = Matrix::from_rows(&rows);
            let mean = m.column_means();
            let scatter = m.covariance(&mean).scale(T::from_count(rows.len()));
            ClassStats {
                n: rows.len(),
                mean,
                scatter,
            }
        })
        .collect();
    if classes.iter().all(|c| c.n < 2) {
        return Err(Error::Config(
            "PLDA needs a class with at least two samples".into(),
        ));
    }
    let total_n = data.rows();
    let s = T::from_count(classes.len());
    let nf = T::from_count(total_n);

    let mut mu = data.column_means();
    let mut within = Matrix::zeros(d, d);
    for c in &classes {
        within = within.add(&c.scatter);
    }
    within = within.scale(T::one() / nf);
    let mut between = Matrix::zeros(d, d);
    for c in &classes {
        let dm: Vec<T> = c.mean.iter().zip(&mu).map(|(&a, &b)| a - b).collect();
        add_outer(&mut between, &dm, &dm, T::one() / s);
    }
    between.symmetrize();

    let mut lls = Vec::with_capacity(config.max_iter + 1);
    for iter in 0..=config.max_iter {
        let (ll, posteriors) = e_step(&classes, &mu, &between, &within)?;
        lls.push(ll);
        if iter == config.max_iter {
            break;
        }
        if iter > 0 && ll - lls[iter - 1] < config.tol {
            break;
        }
        // M-step
        let mut new_mu = vec![T::zero(); d];
        for (m, _) in &posteriors {
            for (a, &b) in new_mu.iter_mut().zip(m) {
                *a = *a + b;
            }
        }
        new_mu.iter_mut().for_each(|x| *x = *x / s);
        let mut new_b = Matrix::zeros(d, d);
        let mut new_w = Matrix::zeros(d, d);
        for (c, (m, cov)) in classes.iter().zip(&posteriors) {
            let dm: Vec<T> = m.iter().zip(&new_mu).map(|(&a, &b)| a - b).collect();
            new_b = new_b.add(cov);
            add_outer(&mut new_b, &dm, &dm, T::one());
            let nc = T::from_count(c.n);
            let off: Vec<T> = c.mean.iter().zip(m).map(|(&a, &b)| a - b).collect();
            new_w = new_w.add(&c.scatter).add(&cov.scale(nc));
            add_outer(&mut new_w, &off, &off, nc);
        }
        new_b = new_b.scale(T::one() / s);
        new_w = new_w.scale(T::one() / nf);
        new_b.symmetrize();
        new_w.symmetrize();
        mu = new_mu;
        between = new_b;
        within = new_w;
    }
    Ok(PldaFit {
        model: PldaModel::new(mu, between, within)?,
        log_likelihoods: lls,
    })
}

/// Marginal log-likelihood of the data and per-class posteriors of `y`.
#[allow(clippy::type_complexity)]
fn e_step<T: Scalar>(
    classes: &[ClassStats<T>],
    mu: &[T],
    between: &Matrix<T>,
    within: &Matrix<T>,
) -> Result<(f64, Vec<(Vec<T>, Matrix<T>)>)> {
    let d = mu.len();
    let w_ch = within.cholesky().ok_or_else(|| Error::Numerical {
        what: "within-class covariance became singular during PLDA training".into(),
        condition: condition_of(within),
    })?;
    let w_logdet = w_ch.log_det().as_f64();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut ll = 0.0;
    let mut post = Vec::with_capacity(classes.len());
    for c in classes {
        let nc = T::from_count(c.n);
        // S = B + W/n ; posterior cov C = B − B S⁻¹ B ; posterior mean mu + B S⁻¹ (x̄ − mu)
        let sm = between.add(&within.scale(T::one() / nc));
        let s_ch = sm.cholesky().ok_or_else(|| Error::Numerical {
            what: "PLDA class covariance is not positive definite".into(),
            condition: condition_of(&sm),
        })?;
        let dm: Vec<T> = c.mean.iter().zip(mu).map(|(&a, &b)| a - b).collect();
        let g = s_ch.solve(&dm);
        let bg = between.matvec(&g);
        let mean: Vec<T> = mu.iter().zip(&bg).map(|(&a, &b)| a + b).collect();
        let bsb = between.matmul(&s_ch.inverse()).matmul(between);
        let mut cov = between.sub(&bsb);
        cov.symmetrize();
        post.push((mean, cov));

        // log N(X_s) with Σ = I⊗W + 11ᵀ⊗B:
        //   log|Σ| = (n−1) log|W| + log|W + nB|, with |W + nB| = nᵈ |S|
        //   quad  = Σ (x_i − mu)ᵀW⁻¹(x_i − mu) − n² (x̄ − mu)ᵀ W⁻¹ C W⁻¹ (x̄ − mu)
        // and Σ (x_i − mu)ᵀW⁻¹(x_i − mu) = tr(W⁻¹ scatter) + n (x̄ − mu)ᵀW⁻¹(x̄ − mu).
        let n_f = c.n as f64;
        let log_det = (n_f - 1.0) * w_logdet + d as f64 * n_f.ln() + s_ch.log_det().as_f64();
        let w_inv = w_ch.inverse();
        let mut trace = T::zero();
        for i in 0..d {
            for j in 0..d {
                trace = trace + w_inv[(i, j)] * c.scatter[(j, i)];
            }
        }
        let wdm = w_ch.solve(&dm);
        let mean_term = nc * dot(&dm, &wdm);
        let cw = post.last().expect("just pushed").1.matvec(&wdm);
        let corr = nc * nc * dot(&wdm, &cw);
        let quad = (trace + mean_term - corr).as_f64();
        ll += -0.5 * (n_f * d as f64 * ln2pi + log_det + quad);
    }
    Ok((ll, post))
}
