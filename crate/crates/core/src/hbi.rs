//! Hierarchical inference over a population of datasets: each test has its
//! own coefficient vector drawn from a Gaussian hyper-distribution whose mean
//! and variance are sampled along with the shared error model.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bmu::{BmuConfig, ChainState, CoefficientPrior, ForwardModel, PdeSimulator};
use crate::dynamics::{PdeModel, System};
use crate::error::{Error, Result};
use crate::pesbl::SparseModel;
use crate::rng;
use crate::stats::{self, ErrorSums};
use crate::Field;

/// Priors of the hyper-distribution: `μ_ξi ~ U(lower_i, upper_i)` and
/// `σ_ξi² ~ IG(shape, scale)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbiPriors {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub shape: f64,
    pub scale: f64,
}

impl HbiPriors {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, shape: f64, scale: f64) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config(
                "hypermean limits must have equal non-zero length".into(),
            ));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::Config(format!(
                "hypermean limits ({}, {}) of coefficient {i} are not increasing",
                lower[i], upper[i]
            )));
        }
        if !(shape > 0.0 && scale > 0.0) {
            return Err(Error::Config(
                "hypervariance prior must have positive shape and scale".into(),
            ));
        }
        Ok(HbiPriors {
            lower,
            upper,
            shape,
            scale,
        })
    }

    /// Limits `m ± factor·|m|` around a point estimate.
    pub fn around(estimate: &[f64], factor: f64, shape: f64, scale: f64) -> Result<Self> {
        let lower = estimate.iter().map(|m| m - factor * m.abs()).collect();
        let upper = estimate.iter().map(|m| m + factor * m.abs()).collect();
        Self::new(lower, upper, shape, scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbiConfig {
    /// Chain layout, proposal tuning, error prior and evidence settings.
    pub sampler: BmuConfig,
    /// Hypermean limits are the single-dataset estimate ± this factor times its magnitude.
    pub limit_factor: f64,
    pub hyper_shape: f64,
    pub hyper_scale: f64,
    /// Hold the hypervariances fixed instead of sampling them.
    pub fixed_hyper_variance: Option<Vec<f64>>,
}

impl Default for HbiConfig {
    fn default() -> Self {
        HbiConfig {
            sampler: BmuConfig {
                steps: 2500,
                ..BmuConfig::default()
            },
            limit_factor: 5.0,
            hyper_shape: 1.0,
            hyper_scale: 2.0,
            fixed_hyper_variance: None,
        }
    }
}

/// Conditional of a hypermean: `N(mean(ξ_i·), σ_ξi²/N_t)` truncated to the limits.
pub fn gibbs_mu_xi<R: Rng + ?Sized>(
    rng: &mut R,
    row: &[f64],
    sigma_xi2: f64,
    lower: f64,
    upper: f64,
) -> Result<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    stats::truncated_normal(rng, mean, sigma_xi2 / n, lower, upper)
}

/// Shape and scale of the inverse-gamma conditional of a hypervariance.
pub fn hyper_variance_conditional(row: &[f64], mu_xi: f64, shape: f64, scale: f64) -> (f64, f64) {
    let scatter: f64 = row.iter().map(|x| (x - mu_xi).powi(2)).sum();
    (row.len() as f64 / 2.0 + shape, 0.5 * scatter + scale)
}

pub fn gibbs_sigma_xi2<R: Rng + ?Sized>(
    rng: &mut R,
    row: &[f64],
    mu_xi: f64,
    shape: f64,
    scale: f64,
) -> f64 {
    let (a, b) = hyper_variance_conditional(row, mu_xi, shape, scale);
    stats::inverse_gamma(rng, a, b)
}

/// Current sample of one hierarchical chain.
#[derive(Debug, Clone)]
pub struct HbiState {
    /// Per-test samplers; their error parameters mirror the shared ones.
    pub tests: Vec<ChainState>,
    pub mu_xi: Vec<f64>,
    pub sigma_xi2: Vec<f64>,
    pub mu_e: f64,
    pub sigma_e2: f64,
}

impl HbiState {
    /// Coefficient `i` across all tests.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.tests.iter().map(|s| s.xi[i]).collect()
    }

    /// Error sums pooled over every test.
    pub fn pooled_sums(&self) -> ErrorSums {
        self.tests
            .iter()
            .map(|s| s.sums)
            .fold(ErrorSums::default(), |a, b| a + b)
    }

    fn hyper_prior(&self, names: &[String]) -> CoefficientPrior {
        CoefficientPrior {
            names: names.to_vec(),
            mean: self.mu_xi.clone(),
            std: self.sigma_xi2.iter().map(|v| v.sqrt()).collect(),
        }
    }
}

/// Post-burn-in samples of one hierarchical chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HbiTrace {
    /// `xi[k][t][i]`: sample `k`, test `t`, coefficient `i`.
    pub xi: Vec<Vec<Vec<f64>>>,
    pub mu_xi: Vec<Vec<f64>>,
    pub sigma_xi2: Vec<Vec<f64>>,
    pub mu_e: Vec<f64>,
    pub sigma_e2: Vec<f64>,
    /// Acceptance rate per test and coefficient.
    pub acceptance: Vec<Vec<f64>>,
}

/// Gaussian fit of one sampled quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub mean: f64,
    pub std: f64,
    pub gelman_rubin: f64,
}

impl ParameterSummary {
    fn of(chains: Vec<Vec<f64>>) -> Self {
        let (mean, std) = stats::mean_std(&chains.concat());
        ParameterSummary {
            mean,
            std,
            gelman_rubin: stats::gelman_rubin(&chains),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub coefficients: Vec<ParameterSummary>,
    pub acceptance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbiSummary {
    pub terms: Vec<String>,
    pub tests: Vec<TestSummary>,
    pub hyper_mean: Vec<ParameterSummary>,
    /// Samples of `σ_ξi` (the square root of the hypervariance).
    pub hyper_std: Vec<ParameterSummary>,
    pub error_mean: ParameterSummary,
    pub error_variance: ParameterSummary,
    pub priors: HbiPriors,
    pub chains: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct HbiPosterior {
    pub summary: HbiSummary,
    pub traces: Vec<HbiTrace>,
}

fn test_stream(seed: u64, chain: usize, test: usize) -> rng::Rng {
    rng::stream(seed, ((chain as u64) << 32) | (test as u64 + 1))
}

fn start_state<F: ForwardModel>(
    forwards: &[F],
    init: &CoefficientPrior,
    priors: &HbiPriors,
    cfg: &HbiConfig,
    chain: usize,
    rng: &mut rng::Rng,
) -> Result<HbiState> {
    const ATTEMPTS: usize = 100;
    let s = &cfg.sampler;
    let tests = forwards
        .par_iter()
        .enumerate()
        .map(|(t, f)| {
            let mut r = test_stream(s.seed, chain, t);
            let mut last = None;
            for attempt in 0..ATTEMPTS {
                let spread = s.dispersion * (1.0 - attempt as f64 / ATTEMPTS as f64);
                let xi: Vec<f64> = init
                    .mean
                    .iter()
                    .zip(&init.std)
                    .map(|(m, sd)| stats::normal(&mut r, *m, (spread * sd).powi(2)))
                    .collect();
                match f.errors(&xi) {
                    Ok(e) => {
                        let scales = init.std.iter().map(|sd| s.initial_scale * sd).collect();
                        return Ok(ChainState::new(xi, ErrorSums::of(&e), 0.0, 1.0, scales));
                    }
                    Err(e) if e.is_unstable() => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last.unwrap_or_else(|| Error::Numerical("no stable chain start".into())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mu_xi = init
        .mean
        .iter()
        .enumerate()
        .map(|(i, m)| m.clamp(priors.lower[i], priors.upper[i]))
        .collect();
    let sigma_xi2 = match &cfg.fixed_hyper_variance {
        Some(v) => v.clone(),
        None => init.std.iter().map(|sd| sd * sd).collect(),
    };
    let mut state = HbiState {
        tests,
        mu_xi,
        sigma_xi2,
        mu_e: 0.0,
        sigma_e2: 1.0,
    };
    match s.fixed_error {
        Some([mu, var]) => {
            state.mu_e = mu;
            state.sigma_e2 = var;
        }
        None => {
            state.sigma_e2 =
                stats::sample_error_variance(rng, &state.pooled_sums(), 0.0, &s.error_prior);
        }
    }
    Ok(state)
}

/// One full sweep: per-test coefficients (in parallel), then hypermeans,
/// hypervariances and the shared error model.
fn sweep<F: ForwardModel>(
    state: &mut HbiState,
    forwards: &[F],
    names: &[String],
    priors: &HbiPriors,
    cfg: &HbiConfig,
    rngs: &mut [rng::Rng],
    hyper_rng: &mut rng::Rng,
) -> Result<()> {
    let prior = state.hyper_prior(names);
    let (mu_e, sigma_e2) = (state.mu_e, state.sigma_e2);
    state
        .tests
        .par_iter_mut()
        .zip(forwards.par_iter())
        .zip(rngs.par_iter_mut())
        .try_for_each(|((test, f), r)| -> Result<()> {
            test.mu_e = mu_e;
            test.sigma_e2 = sigma_e2;
            for i in 0..prior.len() {
                test.mh_step(i, f, &prior, r)?;
            }
            Ok(())
        })?;
    for i in 0..names.len() {
        let row = state.row(i);
        state.mu_xi[i] = gibbs_mu_xi(
            hyper_rng,
            &row,
            state.sigma_xi2[i],
            priors.lower[i],
            priors.upper[i],
        )?;
        if cfg.fixed_hyper_variance.is_none() {
            state.sigma_xi2[i] =
                gibbs_sigma_xi2(hyper_rng, &row, state.mu_xi[i], priors.shape, priors.scale);
        }
    }
    if cfg.sampler.fixed_error.is_none() {
        let sums = state.pooled_sums();
        let p = &cfg.sampler.error_prior;
        state.mu_e = stats::sample_error_mean(hyper_rng, &sums, state.sigma_e2, p);
        state.sigma_e2 = stats::sample_error_variance(hyper_rng, &sums, state.mu_e, p);
    }
    Ok(())
}

fn run_chain<F: ForwardModel>(
    forwards: &[F],
    init: &CoefficientPrior,
    priors: &HbiPriors,
    cfg: &HbiConfig,
    chain: usize,
) -> Result<HbiTrace> {
    let s = &cfg.sampler;
    let mut hyper_rng = rng::stream(s.seed, (chain as u64) << 32);
    let mut state = start_state(forwards, init, priors, cfg, chain, &mut hyper_rng)?;
    let mut rngs: Vec<rng::Rng> = (0..forwards.len())
        .map(|t| {
            // Offset from the start streams so starts and moves stay independent.
            test_stream(s.seed ^ 0x9e37_79b9_7f4a_7c15, chain, t)
        })
        .collect();
    let burn = s.burn_in_steps();
    let mut trace = HbiTrace::default();
    for step in 0..s.steps {
        sweep(
            &mut state,
            forwards,
            &init.names,
            priors,
            cfg,
            &mut rngs,
            &mut hyper_rng,
        )?;
        if step < burn {
            if (step + 1) % s.adapt_window == 0 {
                state
                    .tests
                    .iter_mut()
                    .for_each(|t| t.adapt(s.acceptance_range));
            }
            if step + 1 == burn {
                for t in &mut state.tests {
                    t.accepted.iter_mut().for_each(|a| *a = 0);
                    t.proposed.iter_mut().for_each(|p| *p = 0);
                }
            }
        } else {
            trace
                .xi
                .push(state.tests.iter().map(|t| t.xi.clone()).collect());
            trace.mu_xi.push(state.mu_xi.clone());
            trace.sigma_xi2.push(state.sigma_xi2.clone());
            trace.mu_e.push(state.mu_e);
            trace.sigma_e2.push(state.sigma_e2);
        }
    }
    trace.acceptance = state
        .tests
        .iter()
        .map(|t| (0..init.len()).map(|i| t.acceptance_rate(i)).collect())
        .collect();
    Ok(trace)
}

/// Runs hierarchical chains over one forward model per test.
///
/// `init` supplies the term names, the chain starting point and the initial
/// proposal scales; the hyper-distribution replaces it as the coefficient prior.
pub fn run<F: ForwardModel>(
    forwards: &[F],
    init: &CoefficientPrior,
    priors: &HbiPriors,
    cfg: &HbiConfig,
) -> Result<HbiPosterior> {
    cfg.sampler.validate()?;
    let m = init.len();
    if forwards.is_empty() {
        return Err(Error::Config(
            "hierarchical inference needs at least one dataset".into(),
        ));
    }
    if priors.lower.len() != m {
        return Err(Error::Config(format!(
            "{} hypermean limits for {m} coefficients",
            priors.lower.len()
        )));
    }
    if let Some(v) = &cfg.fixed_hyper_variance {
        if v.len() != m || v.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::Config(
                "fixed hypervariances must be positive, one per coefficient".into(),
            ));
        }
    }
    let traces = (0..cfg.sampler.chains)
        .into_par_iter()
        .map(|c| run_chain(forwards, init, priors, cfg, c))
        .collect::<Result<Vec<_>>>()?;

    let per_chain =
        |f: &dyn Fn(&HbiTrace) -> Vec<f64>| -> Vec<Vec<f64>> { traces.iter().map(f).collect() };
    let tests: Vec<TestSummary> = (0..forwards.len())
        .map(|t| TestSummary {
            coefficients: (0..m)
                .map(|i| {
                    ParameterSummary::of(per_chain(&|tr| tr.xi.iter().map(|x| x[t][i]).collect()))
                })
                .collect(),
            acceptance: (0..m)
                .map(|i| {
                    traces.iter().map(|tr| tr.acceptance[t][i]).sum::<f64>() / traces.len() as f64
                })
                .collect(),
        })
        .collect();
    let hyper_mean: Vec<ParameterSummary> = (0..m)
        .map(|i| ParameterSummary::of(per_chain(&|tr| tr.mu_xi.iter().map(|v| v[i]).collect())))
        .collect();
    let hyper_std: Vec<ParameterSummary> = (0..m)
        .map(|i| {
            ParameterSummary::of(per_chain(&|tr| {
                tr.sigma_xi2.iter().map(|v| v[i].sqrt()).collect()
            }))
        })
        .collect();
    let error_mean = ParameterSummary::of(per_chain(&|tr| tr.mu_e.clone()));
    let error_variance = ParameterSummary::of(per_chain(&|tr| tr.sigma_e2.clone()));

    let mut ratios: Vec<f64> = tests
        .iter()
        .flat_map(|t| t.coefficients.iter().map(|c| c.gelman_rubin))
        .chain(hyper_mean.iter().map(|h| h.gelman_rubin))
        .collect();
    if cfg.fixed_hyper_variance.is_none() {
        ratios.extend(hyper_std.iter().map(|h| h.gelman_rubin));
    }
    if cfg.sampler.fixed_error.is_none() {
        ratios.extend([error_mean.gelman_rubin, error_variance.gelman_rubin]);
    }
    let converged = ratios.iter().all(|r| *r < cfg.sampler.gr_threshold);
    if !converged {
        let worst = ratios.iter().cloned().fold(f64::NAN, f64::max);
        log::warn!("hierarchical chains did not converge: largest Gelman-Rubin ratio {worst}");
    }
    let summary = HbiSummary {
        terms: init.names.clone(),
        tests,
        hyper_mean,
        hyper_std,
        error_mean,
        error_variance,
        priors: priors.clone(),
        chains: cfg.sampler.chains,
        steps: cfg.sampler.steps,
        burn_in: cfg.sampler.burn_in_steps(),
        samples: traces.iter().map(|t| t.xi.len()).sum(),
        converged,
    };
    Ok(HbiPosterior { summary, traces })
}

/// Hierarchical inference of a learned model form over a population of raw
/// datasets, one forward simulator per dataset.
pub fn run_hbi(
    datasets: &[Field],
    model: &SparseModel<f64>,
    cfg: &HbiConfig,
) -> Result<HbiPosterior> {
    let form = PdeModel::new(model.terms.clone(), model.mean.clone(), System::Generic)?;
    run_population(datasets, &form, &CoefficientPrior::from_model(model)?, cfg)
}

/// As [`run_hbi`], with the model form and starting estimate given directly.
pub fn run_population(
    datasets: &[Field],
    form: &PdeModel,
    init: &CoefficientPrior,
    cfg: &HbiConfig,
) -> Result<HbiPosterior> {
    if datasets.len() < 2 {
        return Err(Error::Config(format!(
            "hierarchical inference needs at least two datasets, got {}",
            datasets.len()
        )));
    }
    let priors = HbiPriors::around(
        &init.mean,
        cfg.limit_factor,
        cfg.hyper_shape,
        cfg.hyper_scale,
    )?;
    let simulators = datasets
        .iter()
        .map(|d| PdeSimulator::new(form.clone(), d, &cfg.sampler.evidence))
        .collect::<Result<Vec<_>>>()?;
    run(&simulators, init, &priors, cfg)
}
