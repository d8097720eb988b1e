//! Parsimony-enhanced sequential sparse Bayesian regression.
//!
//! Each iteration scores every admissible move (re-estimate, add or delete a
//! term) by its log-likelihood gain and the change of a complexity penalty that
//! grows with the squared library index, and applies the best one.

mod state;

use serde::{Deserialize, Serialize};

pub use state::{Action, Candidates, Deltas, DirectEvaluation, SblState, DENOMINATOR_GUARD};

use crate::error::{Error, Result};
use crate::library::TermSpec;
use crate::preprocess::NormalizedSystem;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PesblConfig {
    pub max_iters: usize,
    /// Stop once the chosen move gains less log-likelihood than this.
    pub tol1: f64,
    /// Additions gaining less than `tol2·|L₁|` are set aside in favour of
    /// moves on already-selected terms.
    pub tol2: f64,
    /// Setting this to false drops the complexity term from the selection criterion.
    pub complexity_penalty: bool,
    /// Setting this to false disables the `tol2` test on additions.
    pub addition_gate: bool,
    /// Re-estimate the noise variance after every move instead of holding `var(t)`.
    pub update_noise: bool,
    /// Compare the fast updates with a direct recomputation after every move.
    pub verify: bool,
}

impl Default for PesblConfig {
    fn default() -> Self {
        PesblConfig {
            max_iters: 1000,
            tol1: 1e-4,
            tol2: 1e-2,
            complexity_penalty: true,
            addition_gate: true,
            update_noise: false,
            verify: false,
        }
    }
}

impl PesblConfig {
    /// Standard sequential SBL: no complexity penalty and no addition gate.
    pub fn plain_sbl() -> Self {
        PesblConfig {
            complexity_penalty: false,
            addition_gate: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol1 > 0.0) || !(self.tol2 > 0.0) {
            return Err(Error::Config(format!(
                "tol1 = {} and tol2 = {} must both be positive",
                self.tol1, self.tol2
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of scoring the candidate moves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection<T> {
    Move {
        index: usize,
        action: Action,
        delta_l: T,
        /// Whether the addition gate redirected the choice.
        gated: bool,
    },
    Converged,
}

/// Picks the move minimizing `ΔC − 2ΔL`; ties go to the lowest index.
///
/// `first_log_likelihood` is the log-likelihood after the first accepted move,
/// or `None` before it.
pub fn select_action<T: Real>(
    deltas: &Deltas<T>,
    cand: &Candidates<T>,
    first_log_likelihood: Option<T>,
    cfg: &PesblConfig,
) -> Selection<T> {
    let argmin = |filter: &dyn Fn(usize) -> bool| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for m in 0..cand.action.len() {
            if !filter(m) {
                continue;
            }
            if let Some(c) = deltas.criterion(m) {
                if best.map_or(true, |(_, b)| c < b) {
                    best = Some((m, c));
                }
            }
        }
        best.map(|(m, _)| m)
    };
    let Some(mut winner) = argmin(&|_| true) else {
        return Selection::Converged;
    };
    let mut gated = false;
    if let Some(first) = first_log_likelihood.filter(|_| cfg.addition_gate) {
        let gain = deltas.log_likelihood[winner].expect("admissible").as_f64();
        if cand.action[winner] == Some(Action::Add) && gain < cfg.tol2 * first.as_f64().abs() {
            gated = true;
            match argmin(&|m| matches!(cand.action[m], Some(Action::Reestimate | Action::Delete))) {
                Some(m) => winner = m,
                None => return Selection::Converged,
            }
        }
    }
    let delta_l = deltas.log_likelihood[winner].expect("admissible");
    if delta_l.as_f64() < cfg.tol1 {
        return Selection::Converged;
    }
    Selection::Move {
        index: winner,
        action: cand.action[winner].expect("admissible"),
        delta_l,
        gated,
    }
}

/// One applied move, kept for reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub index: usize,
    pub action: Action,
    pub delta_l: f64,
    pub gated: bool,
}

/// A learned sparse model in physical units.
#[derive(Debug, Clone)]
pub struct SparseModel<T> {
    /// Selected terms, sorted by library position.
    pub terms: Vec<TermSpec>,
    /// Library positions (0-based) of `terms`.
    pub positions: Vec<usize>,
    pub mean: Vec<T>,
    /// Standard deviation implied by the learned prior precision, `scale/√α`.
    pub std: Vec<T>,
    /// Standard deviation from the diagonal of the posterior covariance.
    pub posterior_std: Vec<T>,
    /// Learned precisions in normalized units.
    pub precision: Vec<T>,
    pub log_likelihood: T,
    /// Log-likelihood after every accepted move, starting from the empty model.
    pub trace: Vec<T>,
    pub steps: Vec<Step>,
    pub iterations: usize,
    pub converged: bool,
    pub noise_variance: T,
    /// Largest relative fast-versus-direct discrepancy when verification is on.
    pub update_error: Option<f64>,
}

impl<T: Real> SparseModel<T> {
    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<T> {
        self.terms
            .iter()
            .position(|t| t.name == name)
            .map(|i| self.mean[i])
    }

    /// Number of times the addition gate redirected the choice.
    pub fn gate_count(&self) -> usize {
        self.steps.iter().filter(|s| s.gated).count()
    }
}

/// Runs the learner on a column-normalized system.
pub fn run<T: Real>(system: &NormalizedSystem<T>, cfg: &PesblConfig) -> Result<SparseModel<T>> {
    cfg.validate()?;
    let reg = &system.system;
    let complexity: Vec<usize> = reg.terms.iter().map(|t| t.index).collect();
    let mut state = SblState::new(&reg.columns, &reg.target)?;
    let mut steps = Vec::new();
    let mut converged = false;
    let mut update_error: Option<f64> = None;
    let mut first: Option<T> = None;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let cand = state.candidate_stats();
        let deltas = state.action_deltas(&cand, &complexity, cfg.complexity_penalty);
        match select_action(&deltas, &cand, first, cfg) {
            Selection::Converged => {
                converged = true;
                break;
            }
            Selection::Move {
                index,
                action,
                delta_l,
                gated,
            } => {
                log::debug!(
                    "{action} {} (ΔL = {:.4e})",
                    reg.terms[index].name,
                    delta_l.as_f64()
                );
                state.apply(index, action, &cand, delta_l)?;
                if cfg.update_noise {
                    state.update_noise()?;
                }
                if first.is_none() {
                    first = Some(state.current_log_likelihood());
                }
                if cfg.verify {
                    let e = state.update_error()?;
                    update_error = Some(update_error.map_or(e, |u| u.max(e)));
                }
                steps.push(Step {
                    index,
                    action,
                    delta_l: delta_l.as_f64(),
                    gated,
                });
            }
        }
    }
    if !converged {
        log::warn!(
            "sparse regression stopped after {} iterations without converging",
            cfg.max_iters
        );
    }
    Ok(summarize(
        system,
        &state,
        steps,
        iterations,
        converged,
        update_error,
    ))
}

fn summarize<T: Real>(
    system: &NormalizedSystem<T>,
    state: &SblState<T>,
    steps: Vec<Step>,
    iterations: usize,
    converged: bool,
    update_error: Option<f64>,
) -> SparseModel<T> {
    let mut order: Vec<usize> = (0..state.active.len()).collect();
    order.sort_by_key(|&r| state.active[r]);
    let positions: Vec<usize> = order.iter().map(|&r| state.active[r]).collect();
    let mut model = SparseModel {
        terms: positions
            .iter()
            .map(|&p| system.system.terms[p].clone())
            .collect(),
        positions: positions.clone(),
        mean: Vec::new(),
        std: Vec::new(),
        posterior_std: Vec::new(),
        precision: Vec::new(),
        log_likelihood: state.current_log_likelihood(),
        trace: state.log_likelihood.clone(),
        steps,
        iterations,
        converged,
        noise_variance: state.sigma2,
        update_error,
    };
    for (&r, &p) in order.iter().zip(&positions) {
        let scale = system.scale(p);
        let alpha = state.alpha[p].expect("active");
        model.mean.push(state.mu[r] * scale);
        model.std.push(scale / alpha.sqrt());
        model.posterior_std.push(state.sigma[(r, r)].sqrt() * scale);
        model.precision.push(alpha);
    }
    model
}
