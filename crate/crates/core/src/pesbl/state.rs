//! Sequential sparse Bayesian learning state and its fast marginal-likelihood updates.
//!
//! Everything is expressed through the Gram matrix `ΦᵀΦ` and `Φᵀt`, so the
//! cost per iteration depends on the library size only.

use crate::error::{Error, Result};
use crate::linalg::{dot, gram, Cholesky, SquareMatrix};
use crate::scalar::Real;

/// Magnitude below which a denominator disqualifies a candidate for one iteration.
pub const DENOMINATOR_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Reestimate,
    Add,
    Delete,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Action::Reestimate => "re-estimate",
            Action::Add => "add",
            Action::Delete => "delete",
        })
    }
}

/// Learner state for one regression problem.
#[derive(Debug, Clone)]
pub struct SblState<T> {
    pub(crate) gram: SquareMatrix<T>,
    pub(crate) projection: Vec<T>,
    pub(crate) target_energy: T,
    pub(crate) rows: usize,
    /// Prior precision per term; `None` marks an inactive term.
    pub alpha: Vec<Option<T>>,
    pub sigma2: T,
    /// Active library positions in insertion order.
    pub active: Vec<usize>,
    /// Posterior covariance over `active`.
    pub sigma: SquareMatrix<T>,
    /// Posterior mean over `active`.
    pub mu: Vec<T>,
    pub sparsity: Vec<T>,
    pub quality: Vec<T>,
    /// Log-likelihood after each accepted action, starting from the empty model.
    pub log_likelihood: Vec<T>,
}

/// Per-term statistics of one iteration.
#[derive(Debug, Clone)]
pub struct Candidates<T> {
    pub s: Vec<T>,
    pub q: Vec<T>,
    pub theta: Vec<T>,
    /// Move available for each term, if any.
    pub action: Vec<Option<Action>>,
}

impl<T: Real> Candidates<T> {
    pub fn indices(&self, action: Action) -> Vec<usize> {
        (0..self.action.len())
            .filter(|&m| self.action[m] == Some(action))
            .collect()
    }
}

/// Potential log-likelihood and complexity changes of every candidate move.
#[derive(Debug, Clone)]
pub struct Deltas<T> {
    /// `None` for terms with no admissible move this iteration.
    pub log_likelihood: Vec<Option<T>>,
    pub complexity: Vec<f64>,
}

impl<T: Real> Deltas<T> {
    /// `ΔC − 2ΔL`, or `None` for inadmissible terms.
    pub fn criterion(&self, m: usize) -> Option<f64> {
        self.log_likelihood[m].map(|dl| self.complexity[m] - 2.0 * dl.as_f64())
    }
}

/// Direct evaluation of the posterior and factors for the current precisions.
#[derive(Debug, Clone)]
pub struct DirectEvaluation<T> {
    pub sigma: SquareMatrix<T>,
    pub mu: Vec<T>,
    pub sparsity: Vec<T>,
    pub quality: Vec<T>,
    pub log_likelihood: T,
}

fn variance<T: Real>(v: &[T]) -> T {
    let n = T::of(v.len() as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n
}

impl<T: Real> SblState<T> {
    /// Empty model with `σ² = var(t)`.
    pub fn new(columns: &[Vec<T>], target: &[T]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Config("empty library".into()));
        }
        if columns.iter().any(|c| c.len() != target.len()) {
            return Err(Error::Config(
                "library columns and target differ in length".into(),
            ));
        }
        if columns
            .iter()
            .flatten()
            .chain(target)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numerical(
                "non-finite entry in regression system".into(),
            ));
        }
        let sigma2 = variance(target);
        // Rounding leaves a tiny positive variance for constant targets.
        let energy = dot(target, target) / T::of(target.len() as f64);
        if !(sigma2 > T::of(1e-13) * energy) {
            return Err(Error::DegenerateTarget("target has zero variance".into()));
        }
        let gram = gram(columns);
        let projection: Vec<T> = columns.iter().map(|c| dot(c, target)).collect();
        Self::from_gram(gram, projection, dot(target, target), target.len(), sigma2)
    }

    pub(crate) fn from_gram(
        gram: SquareMatrix<T>,
        projection: Vec<T>,
        target_energy: T,
        rows: usize,
        sigma2: T,
    ) -> Result<Self> {
        let m = gram.n;
        let mut state = SblState {
            gram,
            projection,
            target_energy,
            rows,
            alpha: vec![None; m],
            sigma2,
            active: Vec::new(),
            sigma: SquareMatrix::zeros(0),
            mu: Vec::new(),
            sparsity: vec![T::zero(); m],
            quality: vec![T::zero(); m],
            log_likelihood: Vec::new(),
        };
        let direct = state.direct()?;
        state.sparsity = direct.sparsity;
        state.quality = direct.quality;
        state.log_likelihood.push(direct.log_likelihood);
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    fn beta(&self) -> T {
        T::one() / self.sigma2
    }

    pub fn current_log_likelihood(&self) -> T {
        *self.log_likelihood.last().expect("initialized")
    }

    fn position(&self, m: usize) -> Option<usize> {
        self.active.iter().position(|&a| a == m)
    }

    /// `s`, `q`, `θ = q² − s` and the move available to each term.
    pub fn candidate_stats(&self) -> Candidates<T> {
        let m = self.len();
        let mut s = self.sparsity.clone();
        let mut q = self.quality.clone();
        let mut action = vec![None; m];
        let guard = T::of(DENOMINATOR_GUARD);
        let mut singular = vec![false; m];
        for &i in &self.active {
            let a = self.alpha[i].expect("active term has finite precision");
            let d = a - self.sparsity[i];
            if d.abs() < guard {
                singular[i] = true;
                continue;
            }
            s[i] = a * self.sparsity[i] / d;
            q[i] = a * self.quality[i] / d;
        }
        let theta: Vec<T> = (0..m).map(|i| q[i] * q[i] - s[i]).collect();
        for i in 0..m {
            if singular[i] {
                continue;
            }
            let positive = theta[i] > T::zero();
            action[i] = match (self.alpha[i].is_some(), positive) {
                (true, true) => Some(Action::Reestimate),
                (false, true) => Some(Action::Add),
                (true, false) => Some(Action::Delete),
                (false, false) => None,
            };
        }
        Candidates {
            s,
            q,
            theta,
            action,
        }
    }

    /// Change of the log-likelihood for each candidate move, and the complexity
    /// change computed from 1-based `complexity_index` values.
    pub fn action_deltas(
        &self,
        cand: &Candidates<T>,
        complexity_index: &[usize],
        penalty: bool,
    ) -> Deltas<T> {
        let m = self.len();
        let guard = T::of(DENOMINATOR_GUARD);
        let half = T::of(0.5);
        let mut dl = vec![None; m];
        let mut dc = vec![0.0; m];
        let step =
            |i: usize| 2.0 * (complexity_index[i] * complexity_index[i]) as f64 / m as f64 + 2.0;
        for i in 0..m {
            let (big_s, big_q) = (self.sparsity[i], self.quality[i]);
            let value = match cand.action[i] {
                None => None,
                Some(Action::Reestimate) => {
                    let a = self.alpha[i].expect("active");
                    let a_new = cand.s[i] * cand.s[i] / cand.theta[i];
                    let d_alpha = T::one() / a_new - T::one() / a;
                    // Q²/(S + 1/dα) rewritten without dividing by dα.
                    let denom = T::one() + big_s * d_alpha;
                    if denom.abs() < guard || !(denom > T::zero()) {
                        None
                    } else {
                        Some(half * (big_q * big_q * d_alpha / denom - denom.ln()))
                    }
                }
                Some(Action::Add) => {
                    if !(big_s.abs() >= guard) || !(big_q * big_q > T::zero()) {
                        None
                    } else {
                        let ratio = big_q * big_q / big_s;
                        Some(half * (ratio - T::one() - ratio.ln()))
                    }
                }
                Some(Action::Delete) => {
                    let a = self.alpha[i].expect("active");
                    let denom = big_s - a;
                    let arg = T::one() - big_s / a;
                    if denom.abs() < guard || !(arg > T::zero()) {
                        None
                    } else {
                        Some(half * (big_q * big_q / denom - arg.ln()))
                    }
                }
            };
            dl[i] = value.filter(|v: &T| v.is_finite());
            if penalty {
                dc[i] = match cand.action[i] {
                    Some(Action::Add) => step(i),
                    Some(Action::Delete) => -step(i),
                    _ => 0.0,
                };
            }
        }
        Deltas {
            log_likelihood: dl,
            complexity: dc,
        }
    }

    /// `Σ_a Φ_aᵀ φ_m` for every library term `m`: column `m` of `Σ G_{a,·}`.
    fn sigma_times_gram(&self) -> Vec<Vec<T>> {
        let k = self.active.len();
        (0..self.len())
            .map(|m| {
                (0..k)
                    .map(|r| {
                        (0..k)
                            .map(|c| self.sigma[(r, c)] * self.gram[(self.active[c], m)])
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// Applies one move with rank-one updates of Σ, μ, S and Q.
    ///
    /// Falls back to a direct recomputation when the update loses positive
    /// definiteness.
    pub fn apply(
        &mut self,
        index: usize,
        action: Action,
        cand: &Candidates<T>,
        delta_l: T,
    ) -> Result<()> {
        let beta = self.beta();
        let m = self.len();
        let new_alpha = || cand.s[index] * cand.s[index] / cand.theta[index];
        let healthy = match action {
            Action::Reestimate => {
                let j = self.position(index).expect("re-estimated term is active");
                let a_old = self.alpha[index].expect("active");
                let a_new = new_alpha();
                self.alpha[index] = Some(a_new);
                let sj: Vec<T> = self.sigma.row(j).to_vec();
                let inv = T::one() / (a_new - a_old);
                let kappa = T::one() / (sj[j] + inv);
                let k = self.active.len();
                for r in 0..k {
                    for c in 0..k {
                        self.sigma[(r, c)] = self.sigma[(r, c)] - kappa * sj[r] * sj[c];
                    }
                }
                let mu_j = self.mu[j];
                for r in 0..k {
                    self.mu[r] = self.mu[r] - kappa * mu_j * sj[r];
                }
                for i in 0..m {
                    let proj: T = (0..k)
                        .map(|c| sj[c] * self.gram[(self.active[c], i)])
                        .sum::<T>()
                        * beta;
                    self.sparsity[i] = self.sparsity[i] + kappa * proj * proj;
                    self.quality[i] = self.quality[i] + kappa * mu_j * proj;
                }
                kappa.is_finite() && (0..k).all(|r| self.sigma[(r, r)] > T::zero())
            }
            Action::Add => {
                let a_new = new_alpha();
                let sig_ii = T::one() / (a_new + self.sparsity[index]);
                let mu_i = sig_ii * self.quality[index];
                let k = self.active.len();
                let sg = self.sigma_times_gram();
                let v = &sg[index];
                // φ_mᵀ e_i = G_mi − β G_{m,a} Σ G_{a,i}.
                let proj: Vec<T> = (0..m)
                    .map(|i| {
                        let cross: T = (0..k).map(|c| self.gram[(i, self.active[c])] * v[c]).sum();
                        beta * (self.gram[(i, index)] - beta * cross)
                    })
                    .collect();
                let mut sigma = SquareMatrix::zeros(k + 1);
                let b2 = beta * beta * sig_ii;
                for r in 0..k {
                    for c in 0..k {
                        sigma[(r, c)] = self.sigma[(r, c)] + b2 * v[r] * v[c];
                    }
                    sigma[(r, k)] = -beta * sig_ii * v[r];
                    sigma[(k, r)] = -beta * sig_ii * v[r];
                }
                sigma[(k, k)] = sig_ii;
                let mut mu: Vec<T> = (0..k).map(|r| self.mu[r] - mu_i * beta * v[r]).collect();
                mu.push(mu_i);
                for i in 0..m {
                    self.sparsity[i] = self.sparsity[i] - sig_ii * proj[i] * proj[i];
                    self.quality[i] = self.quality[i] - mu_i * proj[i];
                }
                self.sigma = sigma;
                self.mu = mu;
                self.active.push(index);
                self.alpha[index] = Some(a_new);
                sig_ii > T::zero() && sig_ii.is_finite()
            }
            Action::Delete => {
                let j = self.position(index).expect("deleted term is active");
                let k = self.active.len();
                let sj: Vec<T> = self.sigma.row(j).to_vec();
                let sjj = sj[j];
                let mu_j = self.mu[j];
                for i in 0..m {
                    let proj: T = (0..k)
                        .map(|c| sj[c] * self.gram[(self.active[c], i)])
                        .sum::<T>()
                        * beta;
                    self.sparsity[i] = self.sparsity[i] + proj * proj / sjj;
                    self.quality[i] = self.quality[i] + mu_j / sjj * proj;
                }
                let keep: Vec<usize> = (0..k).filter(|&r| r != j).collect();
                let sigma = SquareMatrix::from_fn(k - 1, |r, c| {
                    let (r, c) = (keep[r], keep[c]);
                    self.sigma[(r, c)] - sj[r] * sj[c] / sjj
                });
                self.mu = keep
                    .iter()
                    .map(|&r| self.mu[r] - mu_j * sj[r] / sjj)
                    .collect();
                self.sigma = sigma;
                self.active.remove(j);
                self.alpha[index] = None;
                sjj > T::zero()
            }
        };
        let last = self.current_log_likelihood();
        self.log_likelihood.push(last + delta_l);
        if !healthy {
            log::warn!("fast update lost positive definiteness; recomputing directly");
            self.refresh()?;
        }
        Ok(())
    }

    /// Recomputes Σ, μ, S and Q from scratch and replaces the stored values.
    pub fn refresh(&mut self) -> Result<()> {
        let d = self.direct()?;
        self.sigma = d.sigma;
        self.mu = d.mu;
        self.sparsity = d.sparsity;
        self.quality = d.quality;
        if let Some(last) = self.log_likelihood.last_mut() {
            *last = d.log_likelihood;
        }
        Ok(())
    }

    /// Posterior, factors and marginal log-likelihood evaluated directly.
    pub fn direct(&self) -> Result<DirectEvaluation<T>> {
        let beta = self.beta();
        let k = self.active.len();
        let m = self.len();
        let mut precision =
            SquareMatrix::from_fn(k, |r, c| beta * self.gram[(self.active[r], self.active[c])]);
        for r in 0..k {
            precision[(r, r)] = precision[(r, r)] + self.alpha[self.active[r]].expect("active");
        }
        let chol = Cholesky::new(&precision).ok_or_else(|| {
            Error::Numerical("posterior precision is not positive definite".into())
        })?;
        let sigma = chol.inverse();
        let b_a: Vec<T> = self.active.iter().map(|&a| self.projection[a]).collect();
        let mu: Vec<T> = sigma.mul_vec(&b_a).into_iter().map(|v| v * beta).collect();
        let mut sparsity = Vec::with_capacity(m);
        let mut quality = Vec::with_capacity(m);
        for i in 0..m {
            let g_ia: Vec<T> = self.active.iter().map(|&a| self.gram[(i, a)]).collect();
            let sg = sigma.mul_vec(&g_ia);
            sparsity.push(beta * self.gram[(i, i)] - beta * beta * dot(&g_ia, &sg));
            quality.push(beta * self.projection[i] - beta * dot(&g_ia, &mu));
        }
        let n = T::of(self.rows as f64);
        let log_alpha: T = self
            .active
            .iter()
            .map(|&a| self.alpha[a].expect("active").ln())
            .sum();
        // log|Σ| = −log|Σ⁻¹|.
        let log_det_sigma = -chol.log_det();
        let fit = beta * self.target_energy - beta * dot(&b_a, &mu);
        let two_pi = T::of(2.0 * std::f64::consts::PI);
        let log_likelihood = -T::of(0.5)
            * (n * two_pi.ln() + n * self.sigma2.ln() - log_det_sigma - log_alpha + fit);
        Ok(DirectEvaluation {
            sigma,
            mu,
            sparsity,
            quality,
            log_likelihood,
        })
    }

    /// Largest discrepancy between the stored and directly recomputed quantities,
    /// each measured relative to the magnitude of the quantity.
    pub fn update_error(&self) -> Result<f64> {
        let d = self.direct()?;
        let rel = |a: &[T], b: &[T]| -> f64 {
            let scale = b.iter().map(|v| v.abs().as_f64()).fold(1.0, f64::max);
            a.iter()
                .zip(b)
                .map(|(x, y)| (*x - *y).abs().as_f64())
                .fold(0.0, f64::max)
                / scale
        };
        let mut err = rel(&self.sigma.data, &d.sigma.data);
        err = err.max(rel(&self.mu, &d.mu));
        err = err.max(rel(&self.sparsity, &d.sparsity));
        err = err.max(rel(&self.quality, &d.quality));
        err = err.max(rel(&[self.current_log_likelihood()], &[d.log_likelihood]));
        Ok(err)
    }

    /// Re-estimates σ² from the current residual and recomputes everything.
    pub fn update_noise(&mut self) -> Result<()> {
        let k = self.active.len();
        let b_a: Vec<T> = self.active.iter().map(|&a| self.projection[a]).collect();
        let g = self.gram.select(&self.active);
        let residual = self.target_energy - T::of(2.0) * dot(&b_a, &self.mu)
            + dot(&self.mu, &g.mul_vec(&self.mu));
        let gamma: T = (0..k)
            .map(|r| T::one() - self.alpha[self.active[r]].expect("active") * self.sigma[(r, r)])
            .sum();
        let dof = T::of(self.rows as f64) - gamma;
        if dof > T::zero() && residual > T::zero() {
            self.sigma2 = residual / dof;
        }
        self.refresh()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_system(m: usize, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = crate::rng::seeded(seed);
        let mut cols: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        for c in &mut cols {
            let norm = dot(c, c).sqrt();
            c.iter_mut().for_each(|v| *v /= norm);
        }
        let mut t: Vec<f64> = (0..n)
            .map(|r| 3.0 * cols[1][r] - 0.5 * cols[6][r] + 0.01 * rng.gen_range(-1.0..1.0))
            .collect();
        let norm = dot(&t, &t).sqrt();
        t.iter_mut().for_each(|v| *v /= norm);
        (cols, t)
    }

    #[test]
    fn each_move_matches_direct_recomputation() {
        let (cols, t) = random_system(8, 40, 3);
        let mut st = SblState::new(&cols, &t).unwrap();
        for _ in 0..8 {
            let cand = st.candidate_stats();
            let deltas = st.action_deltas(&cand, &[1, 2, 3, 4, 5, 6, 7, 8], true);
            let Some(i) = (0..8)
                .filter(|&i| deltas.log_likelihood[i].is_some())
                .max_by(|&a, &b| {
                    deltas.log_likelihood[a]
                        .partial_cmp(&deltas.log_likelihood[b])
                        .unwrap()
                })
            else {
                break;
            };
            let action = cand.action[i].unwrap();
            st.apply(i, action, &cand, deltas.log_likelihood[i].unwrap())
                .unwrap();
            let d = st.direct().unwrap();
            assert!(st.sigma.max_abs_diff(&d.sigma) < 1e-9, "{action} {i} sigma");
            for (a, b) in st.mu.iter().zip(&d.mu) {
                assert!((a - b).abs() < 1e-9, "{action} {i} mu");
            }
            for (a, b) in st.sparsity.iter().zip(&d.sparsity) {
                assert!(
                    (a - b).abs() < 1e-9 * b.abs().max(1.0),
                    "{action} {i} S {a} {b}"
                );
            }
            for (a, b) in st.quality.iter().zip(&d.quality) {
                assert!(
                    (a - b).abs() < 1e-9 * b.abs().max(1.0),
                    "{action} {i} Q {a} {b}"
                );
            }
            let l = st.current_log_likelihood();
            assert!(
                (l - d.log_likelihood).abs() < 1e-9 * l.abs().max(1.0),
                "{action} {i} L {l} {}",
                d.log_likelihood
            );
        }
    }
}
