//! Bayesian model updating: refines the coefficients of a learned model
//! against the raw measurements with Metropolis-within-Gibbs sampling, using
//! forward solves of the model as the simulator inside the likelihood.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    burgers_1d_ic, burgers_2d_ic, kdv_ic, solve_generic, BoundaryValues, InitialCondition,
    PdeModel, SolverConfig, System,
};
use crate::error::{Error, Result};
use crate::field::{Boundary, GridSpec};
use crate::pesbl::SparseModel;
use crate::rng;
use crate::stats::{self, ErrorPrior, ErrorSums};
use crate::Field;

/// `(ũ − u)/‖ũ‖`, flattened in storage order.
pub fn error_vector(measured: &Field, simulated: &Field) -> Result<Vec<f64>> {
    measured.same_grid(simulated)?;
    let norm = measured.l2_norm();
    if !(norm > 0.0) {
        return Err(Error::DegenerateMeasurement(
            "measured field has zero norm".into(),
        ));
    }
    Ok(measured
        .values
        .iter()
        .zip(&simulated.values)
        .map(|(m, s)| (m - s) / norm)
        .collect())
}

/// Maps a coefficient vector to the normalized error vector of the evidence.
pub trait ForwardModel: Sync {
    /// Length of the error vector.
    fn evidence_len(&self) -> usize;

    /// Errors for `coefficients`; an unstable solve is reported through
    /// [`Error::is_unstable`] and turns into a rejected proposal.
    fn errors(&self, coefficients: &[f64]) -> Result<Vec<f64>>;
}

/// Centred moving average; closed ends shrink the window, periodic ends wrap.
pub fn moving_average(v: &[f64], width: usize, periodic: bool) -> Vec<f64> {
    let n = v.len();
    let h = (width / 2) as isize;
    if h == 0 || n == 0 {
        return v.to_vec();
    }
    (0..n as isize)
        .map(|i| {
            let (mut sum, mut count) = (0.0, 0.0);
            for j in i - h..=i + h {
                let k = if periodic {
                    j.rem_euclid(n as isize)
                } else if j < 0 || j >= n as isize {
                    continue;
                } else {
                    j
                };
                sum += v[k as usize];
                count += 1.0;
            }
            sum / count
        })
        .collect()
}

fn smooth_slice(slice: &[f64], grid: &GridSpec, width: usize) -> Vec<f64> {
    let periodic = grid.boundary == Boundary::Periodic;
    let (nx, ny) = (grid.x.n, grid.ny());
    let mut out: Vec<f64> = slice
        .chunks(nx)
        .flat_map(|row| moving_average(row, width, periodic))
        .collect();
    if ny > 1 {
        for ix in 0..nx {
            let col: Vec<f64> = (0..ny).map(|iy| out[iy * nx + ix]).collect();
            for (iy, v) in moving_average(&col, width, periodic)
                .into_iter()
                .enumerate()
            {
                out[iy * nx + ix] = v;
            }
        }
    }
    out
}

/// How the raw field is turned into evidence and forward-solve conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvidenceConfig {
    /// Spatial stride of the evidence grid; by default 2 on periodic grids
    /// when it divides the axes, else 1.
    pub stride_space: Option<usize>,
    /// Temporal stride, defaulting like `stride_space`.
    pub stride_time: Option<usize>,
    /// Width of the moving average applied to the extracted conditions.
    pub smoothing_width: usize,
    /// Solver refinement; 2 on closed grids and 1 on periodic ones by default.
    pub refine: Option<usize>,
    pub safety: f64,
    pub conditions: ConditionSource,
}

/// Where the forward map takes its initial and boundary data from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionSource {
    /// Smoothed first slice and edges of the raw measurements.
    #[default]
    Measured,
    /// The generating conditions of a benchmark system (zero Dirichlet edges).
    Benchmark(System),
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        EvidenceConfig {
            stride_space: None,
            stride_time: None,
            smoothing_width: 5,
            refine: None,
            safety: 0.5,
            conditions: ConditionSource::Measured,
        }
    }
}

impl EvidenceConfig {
    /// Space and time strides applied to `grid`.
    pub fn strides(&self, grid: &GridSpec) -> (usize, usize) {
        let periodic = grid.boundary == Boundary::Periodic;
        let space = self.stride_space.unwrap_or_else(|| {
            let fits = grid.x.n % 2 == 0 && grid.y.map_or(true, |a| a.n % 2 == 0);
            if periodic && fits && grid.subsampled(2, 1).is_ok() {
                2
            } else {
                1
            }
        });
        let time = self.stride_time.unwrap_or_else(|| {
            if periodic && (grid.t.n - 1) % 2 == 0 && grid.subsampled(1, 2).is_ok() {
                2
            } else {
                1
            }
        });
        (space, time)
    }

    pub fn solver(&self, grid: &GridSpec) -> SolverConfig {
        let refine = self.refine.unwrap_or(match grid.boundary {
            Boundary::Dirichlet => 2,
            Boundary::Periodic => 1,
        });
        SolverConfig {
            refine,
            safety: self.safety,
            ..SolverConfig::default()
        }
    }
}

/// Forward map of a fixed model form, with initial and boundary data read
/// from the raw measurements.
#[derive(Debug, Clone)]
pub struct PdeSimulator {
    model: PdeModel,
    evidence: Field,
    norm: f64,
    initial: InitialCondition<f64>,
    /// Time-smoothed slices at every raw time, on the evidence spatial grid.
    boundary: Option<(Vec<f64>, Vec<Vec<f64>>)>,
    solver: SolverConfig,
}

impl PdeSimulator {
    pub fn new(model: PdeModel, raw: &Field, cfg: &EvidenceConfig) -> Result<Self> {
        let (space, time) = cfg.strides(&raw.grid);
        let evidence = raw.subsample(space, time)?;
        let norm = evidence.l2_norm();
        if !(norm > 0.0) {
            return Err(Error::DegenerateMeasurement(
                "measured field has zero norm".into(),
            ));
        }
        let spatial = raw.grid.subsampled(space, 1)?;
        let thin = |slice: &[f64]| -> Vec<f64> {
            let nx = raw.grid.x.n;
            (0..spatial.ny())
                .flat_map(|iy| (0..spatial.x.n).map(move |ix| (iy, ix)))
                .map(|(iy, ix)| slice[iy * space * nx + ix * space])
                .collect()
        };
        let initial = match cfg.conditions {
            ConditionSource::Measured => InitialCondition::Samples(thin(&smooth_slice(
                raw.slice(0),
                &raw.grid,
                cfg.smoothing_width,
            ))),
            ConditionSource::Benchmark(System::Burgers1d) => burgers_1d_ic(),
            ConditionSource::Benchmark(System::Kdv) => kdv_ic(),
            ConditionSource::Benchmark(System::Burgers2d) => burgers_2d_ic(),
            ConditionSource::Benchmark(System::Generic) => {
                return Err(Error::Config(
                    "generic models have no benchmark conditions".into(),
                ))
            }
        };
        let boundary = match (raw.grid.boundary, cfg.conditions) {
            (Boundary::Periodic, _) | (_, ConditionSource::Benchmark(_)) => None,
            (Boundary::Dirichlet, ConditionSource::Measured) => {
                let nt = raw.grid.t.n;
                let slices: Vec<Vec<f64>> = (0..nt).map(|k| thin(raw.slice(k))).collect();
                let len = spatial.slice_len();
                let mut smoothed = vec![vec![0.0; len]; nt];
                for i in 0..len {
                    let series: Vec<f64> = slices.iter().map(|s| s[i]).collect();
                    for (k, v) in moving_average(&series, cfg.smoothing_width, false)
                        .into_iter()
                        .enumerate()
                    {
                        smoothed[k][i] = v;
                    }
                }
                Some((raw.grid.t_coords(), smoothed))
            }
        };
        let solver = cfg.solver(&evidence.grid);
        Ok(PdeSimulator {
            model,
            evidence,
            norm,
            initial,
            boundary,
            solver,
        })
    }

    pub fn model(&self) -> &PdeModel {
        &self.model
    }

    pub fn evidence(&self) -> &Field {
        &self.evidence
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    /// Solves the model on the evidence grid.
    pub fn simulate(&self, coefficients: &[f64]) -> Result<Field> {
        self.solve_on(coefficients, &self.evidence.grid)
    }

    /// Solves the model on `grid`, which must share the evidence grid's
    /// spatial axes and start time but may extend past its last time.
    /// Boundary data beyond the measured window are held at their last value.
    pub fn solve_on(&self, coefficients: &[f64], grid: &GridSpec) -> Result<Field> {
        let e = &self.evidence.grid;
        if grid.x != e.x || grid.y != e.y || grid.boundary != e.boundary || grid.t.min != e.t.min {
            return Err(Error::Config(
                "forward grid must share the evidence grid's space axes and start time".into(),
            ));
        }
        let model = self.model.with_coefficients(coefficients);
        let bc = match &self.boundary {
            None => BoundaryValues::Zero,
            Some((times, slices)) => BoundaryValues::Slices(
                grid.t_coords()
                    .iter()
                    .map(|&t| interpolate_slices(times, slices, t))
                    .collect(),
            ),
        };
        solve_generic(&model, grid, &self.initial, &bc, &self.solver)
    }
}

fn interpolate_slices(times: &[f64], slices: &[Vec<f64>], t: f64) -> Vec<f64> {
    let last = times.len() - 1;
    if t <= times[0] {
        return slices[0].clone();
    }
    if t >= times[last] {
        return slices[last].clone();
    }
    let k = times.partition_point(|&s| s <= t).min(last).max(1) - 1;
    let w = (t - times[k]) / (times[k + 1] - times[k]);
    slices[k]
        .iter()
        .zip(&slices[k + 1])
        .map(|(a, b)| a + w * (b - a))
        .collect()
}

impl ForwardModel for PdeSimulator {
    fn evidence_len(&self) -> usize {
        self.evidence.values.len()
    }

    fn errors(&self, coefficients: &[f64]) -> Result<Vec<f64>> {
        let sim = self.simulate(coefficients)?;
        Ok(self
            .evidence
            .values
            .iter()
            .zip(&sim.values)
            .map(|(m, s)| (m - s) / self.norm)
            .collect())
    }
}

/// Independent Gaussian priors on the coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPrior {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl CoefficientPrior {
    pub fn new(names: Vec<String>, mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if names.len() != mean.len() || mean.len() != std.len() || mean.is_empty() {
            return Err(Error::Config(
                "prior names, means and standard deviations must have equal non-zero length".into(),
            ));
        }
        if let Some(s) = std.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!(
                "prior standard deviation {s} must be positive"
            )));
        }
        Ok(CoefficientPrior { names, mean, std })
    }

    pub fn from_model(model: &SparseModel<f64>) -> Result<Self> {
        Self::new(model.names(), model.mean.clone(), model.std.clone())
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Log full conditional of one coefficient, up to a constant:
/// `−½Σ(e−μ_e)²/σ_e² − ½((ξ−m)/s)²`.
pub fn log_conditional(
    sums: &ErrorSums,
    mu_e: f64,
    sigma_e2: f64,
    value: f64,
    prior_mean: f64,
    prior_std: f64,
) -> f64 {
    let z = (value - prior_mean) / prior_std;
    -0.5 * sums.scatter(mu_e) / sigma_e2 - 0.5 * z * z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmuConfig {
    pub chains: usize,
    /// Sweeps per chain; one sweep updates every coefficient and the error model.
    pub steps: usize,
    /// Leading fraction of each chain discarded and used for proposal tuning.
    pub burn_in: f64,
    /// Sweeps between proposal-scale adjustments during burn-in.
    pub adapt_window: usize,
    pub acceptance_range: [f64; 2],
    /// Initial proposal scale as a fraction of the prior standard deviation.
    pub initial_scale: f64,
    /// Chain starts are drawn from `N(m, (dispersion·s)²)` around the prior.
    pub dispersion: f64,
    pub gr_threshold: f64,
    pub error_prior: ErrorPrior,
    /// Hold `(μ_e, σ_e²)` fixed instead of sampling them.
    pub fixed_error: Option<[f64; 2]>,
    pub evidence: EvidenceConfig,
    pub seed: u64,
}

impl Default for BmuConfig {
    fn default() -> Self {
        BmuConfig {
            chains: 2,
            steps: 10_000,
            burn_in: 0.25,
            adapt_window: 50,
            acceptance_range: [0.2, 0.5],
            initial_scale: 0.05,
            dispersion: 0.05,
            gr_threshold: 1.1,
            error_prior: ErrorPrior::default(),
            fixed_error: None,
            evidence: EvidenceConfig::default(),
            seed: 0,
        }
    }
}

impl BmuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::Config("at least two chains are needed".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::Config(format!(
                "burn-in fraction {} outside [0, 1)",
                self.burn_in
            )));
        }
        let kept = self.steps - self.burn_in_steps();
        if kept < 2 {
            return Err(Error::Config(format!(
                "{} steps leave fewer than two samples after burn-in",
                self.steps
            )));
        }
        let [lo, hi] = self.acceptance_range;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "acceptance range [{lo}, {hi}] must satisfy 0 < lo < hi < 1"
            )));
        }
        if self.adapt_window == 0 || !(self.initial_scale > 0.0) || !(self.dispersion >= 0.0) {
            return Err(Error::Config(
                "adapt_window, initial_scale and dispersion must be positive".into(),
            ));
        }
        let p = &self.error_prior;
        if !(p.mean_var > 0.0 && p.shape > 0.0 && p.scale > 0.0) {
            return Err(Error::Config("error hyperpriors must be positive".into()));
        }
        if let Some([_, v]) = self.fixed_error {
            if !(v > 0.0) {
                return Err(Error::Config(
                    "fixed error variance must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn burn_in_steps(&self) -> usize {
        (self.steps as f64 * self.burn_in).floor() as usize
    }
}

/// Current sample and sampler bookkeeping of one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub xi: Vec<f64>,
    pub mu_e: f64,
    pub sigma_e2: f64,
    pub iteration: usize,
    pub accepted: Vec<usize>,
    pub proposed: Vec<usize>,
    pub scales: Vec<f64>,
    /// Sums of the error vector at `xi`.
    pub sums: ErrorSums,
    window_accepted: Vec<usize>,
    window_proposed: Vec<usize>,
}

impl ChainState {
    pub fn new(xi: Vec<f64>, sums: ErrorSums, mu_e: f64, sigma_e2: f64, scales: Vec<f64>) -> Self {
        let m = xi.len();
        ChainState {
            xi,
            mu_e,
            sigma_e2,
            iteration: 0,
            accepted: vec![0; m],
            proposed: vec![0; m],
            scales,
            sums,
            window_accepted: vec![0; m],
            window_proposed: vec![0; m],
        }
    }

    pub fn acceptance_rate(&self, i: usize) -> f64 {
        if self.proposed[i] == 0 {
            0.0
        } else {
            self.accepted[i] as f64 / self.proposed[i] as f64
        }
    }

    /// Random-walk Metropolis update of coefficient `i`; returns whether the
    /// proposal was accepted.
    pub fn mh_step<F: ForwardModel + ?Sized, R: Rng + ?Sized>(
        &mut self,
        i: usize,
        forward: &F,
        prior: &CoefficientPrior,
        rng: &mut R,
    ) -> Result<bool> {
        let z: f64 = StandardNormal.sample(rng);
        let proposal = self.xi[i] + self.scales[i] * z;
        let (m, s) = (prior.mean[i], prior.std[i]);
        let current = log_conditional(&self.sums, self.mu_e, self.sigma_e2, self.xi[i], m, s);
        let mut xi = self.xi.clone();
        xi[i] = proposal;
        let candidate = match forward.errors(&xi) {
            Ok(e) => {
                let sums = ErrorSums::of(&e);
                let lp = log_conditional(&sums, self.mu_e, self.sigma_e2, proposal, m, s);
                lp.is_finite().then_some((lp, sums))
            }
            Err(e) if e.is_unstable() => None,
            Err(e) => return Err(e),
        };
        self.proposed[i] += 1;
        self.window_proposed[i] += 1;
        let u: f64 = rng.gen();
        let accept = match candidate {
            Some((lp, sums)) if u.ln() < lp - current => {
                self.xi = xi;
                self.sums = sums;
                true
            }
            _ => false,
        };
        if accept {
            self.accepted[i] += 1;
            self.window_accepted[i] += 1;
        }
        Ok(accept)
    }

    /// Rescales proposals whose acceptance over the last window left `range`.
    pub fn adapt(&mut self, range: [f64; 2]) {
        let target = 0.5 * (range[0] + range[1]);
        for i in 0..self.xi.len() {
            if self.window_proposed[i] == 0 {
                continue;
            }
            let rate = self.window_accepted[i] as f64 / self.window_proposed[i] as f64;
            if rate < range[0] {
                self.scales[i] *= (rate / target).max(0.2);
            } else if rate > range[1] {
                self.scales[i] *= (rate / target).min(3.0);
            }
            self.window_accepted[i] = 0;
            self.window_proposed[i] = 0;
        }
    }

    /// Gibbs updates of the error mean and variance.
    pub fn update_error<R: Rng + ?Sized>(&mut self, prior: &ErrorPrior, rng: &mut R) {
        self.mu_e = stats::sample_error_mean(rng, &self.sums, self.sigma_e2, prior);
        self.sigma_e2 = stats::sample_error_variance(rng, &self.sums, self.mu_e, prior);
    }
}

/// Post-burn-in samples of one chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainTrace {
    /// One coefficient vector per kept sweep.
    pub xi: Vec<Vec<f64>>,
    pub mu_e: Vec<f64>,
    pub sigma_e2: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub scales: Vec<f64>,
}

impl ChainTrace {
    pub fn coefficient(&self, i: usize) -> Vec<f64> {
        self.xi.iter().map(|x| x[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub terms: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub prior_mean: Vec<f64>,
    pub prior_std: Vec<f64>,
    /// Gelman–Rubin ratio per coefficient.
    pub gelman_rubin: Vec<f64>,
    /// Gelman–Rubin ratio of `μ_e` and `σ_e²` (1 when they are held fixed).
    pub error_gelman_rubin: [f64; 2],
    pub error_mean: f64,
    pub error_variance: f64,
    /// Mean acceptance rate per coefficient over all chains.
    pub acceptance: Vec<f64>,
    pub chains: usize,
    pub steps: usize,
    pub burn_in: usize,
    /// Pooled post-burn-in sample count.
    pub samples: usize,
    pub converged: bool,
}

impl PosteriorSummary {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        self.terms
            .iter()
            .position(|t| t == name)
            .map(|i| (self.mean[i], self.std[i]))
    }
}

#[derive(Debug, Clone)]
pub struct Posterior {
    pub summary: PosteriorSummary,
    pub traces: Vec<ChainTrace>,
}

impl Posterior {
    /// `n` coefficient vectors spread evenly over the pooled chains.
    pub fn draws(&self, n: usize) -> Vec<Vec<f64>> {
        let pooled: Vec<Vec<f64>> = self.traces.iter().flat_map(|t| t.xi.clone()).collect();
        spread_draws(&pooled, n)
    }

    /// One CSV row per kept sample: chain, sample, coefficients, `μ_e`, `σ_e²`.
    pub fn write_trace_csv(&self, mut w: impl Write) -> Result<()> {
        write!(w, "chain,sample")?;
        for t in &self.summary.terms {
            write!(w, ",{t}")?;
        }
        writeln!(w, ",mu_e,sigma_e2")?;
        for (c, trace) in self.traces.iter().enumerate() {
            for (k, xi) in trace.xi.iter().enumerate() {
                write!(w, "{c},{k}")?;
                for v in xi {
                    write!(w, ",{v:e}")?;
                }
                writeln!(w, ",{:e},{:e}", trace.mu_e[k], trace.sigma_e2[k])?;
            }
        }
        Ok(())
    }
}

/// Reads the coefficient columns of a trace written by
/// [`Posterior::write_trace_csv`]: term names and one row per sample.
pub fn read_trace_csv(r: impl BufRead) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse("trace", "empty file"))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[0] != "chain" || cols[1] != "sample" {
        return Err(Error::parse("trace", "header must start with chain,sample"));
    }
    let terms: Vec<String> = cols[2..cols.len() - 2]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::parse(
                "trace",
                format!("row {} has {} columns", k + 1, fields.len()),
            ));
        }
        let row = fields[2..2 + terms.len()]
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse("trace", format!("row {}: {e}", k + 1)))?;
        rows.push(row);
    }
    Ok((terms, rows))
}

/// `n` rows spread evenly over `rows`.
pub fn spread_draws(rows: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    if n == 0 || rows.is_empty() {
        return Vec::new();
    }
    let step = rows.len() as f64 / n as f64;
    (0..n)
        .map(|k| rows[((k as f64 + 0.5) * step) as usize % rows.len()].clone())
        .collect()
}

fn start_state<F: ForwardModel + ?Sized>(
    forward: &F,
    prior: &CoefficientPrior,
    cfg: &BmuConfig,
    rng: &mut rng::Rng,
) -> Result<ChainState> {
    const ATTEMPTS: usize = 100;
    let mut last = None;
    for attempt in 0..ATTEMPTS {
        // Fall back towards the prior mean when dispersed starts are unstable.
        let spread = cfg.dispersion * (1.0 - attempt as f64 / ATTEMPTS as f64);
        let xi: Vec<f64> = prior
            .mean
            .iter()
            .zip(&prior.std)
            .map(|(m, s)| stats::normal(rng, *m, (spread * s).powi(2)))
            .collect();
        match forward.errors(&xi) {
            Ok(e) => {
                let sums = ErrorSums::of(&e);
                let scales = prior.std.iter().map(|s| cfg.initial_scale * s).collect();
                let mut state = ChainState::new(xi, sums, 0.0, 1.0, scales);
                match cfg.fixed_error {
                    Some([mu, var]) => {
                        state.mu_e = mu;
                        state.sigma_e2 = var;
                    }
                    None => {
                        state.sigma_e2 =
                            stats::sample_error_variance(rng, &sums, 0.0, &cfg.error_prior);
                    }
                }
                return Ok(state);
            }
            Err(e) if e.is_unstable() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Numerical("no stable chain start".into())))
}

fn run_chain<F: ForwardModel + ?Sized>(
    forward: &F,
    prior: &CoefficientPrior,
    cfg: &BmuConfig,
    chain: usize,
) -> Result<ChainTrace> {
    let mut rng = rng::stream(cfg.seed, chain as u64);
    let mut state = start_state(forward, prior, cfg, &mut rng)?;
    let burn = cfg.burn_in_steps();
    let mut trace = ChainTrace::default();
    for step in 0..cfg.steps {
        for i in 0..prior.len() {
            state.mh_step(i, forward, prior, &mut rng)?;
        }
        if cfg.fixed_error.is_none() {
            state.update_error(&cfg.error_prior, &mut rng);
        }
        state.iteration += 1;
        if step < burn {
            if (step + 1) % cfg.adapt_window == 0 {
                state.adapt(cfg.acceptance_range);
            }
            if step + 1 == burn {
                state.accepted.iter_mut().for_each(|a| *a = 0);
                state.proposed.iter_mut().for_each(|p| *p = 0);
            }
        } else {
            trace.xi.push(state.xi.clone());
            trace.mu_e.push(state.mu_e);
            trace.sigma_e2.push(state.sigma_e2);
        }
    }
    trace.acceptance = (0..prior.len()).map(|i| state.acceptance_rate(i)).collect();
    trace.scales = state.scales.clone();
    Ok(trace)
}

/// Runs independent chains in parallel and pools their post-burn-in samples.
pub fn run<F: ForwardModel + ?Sized>(
    forward: &F,
    prior: &CoefficientPrior,
    cfg: &BmuConfig,
) -> Result<Posterior> {
    cfg.validate()?;
    let traces = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(forward, prior, cfg, c))
        .collect::<Result<Vec<_>>>()?;
    let m = prior.len();
    let mut mean = Vec::with_capacity(m);
    let mut std = Vec::with_capacity(m);
    let mut gelman_rubin = Vec::with_capacity(m);
    for i in 0..m {
        let chains: Vec<Vec<f64>> = traces.iter().map(|t| t.coefficient(i)).collect();
        let pooled: Vec<f64> = chains.concat();
        let (mu, sd) = stats::mean_std(&pooled);
        mean.push(mu);
        std.push(sd);
        gelman_rubin.push(stats::gelman_rubin(&chains));
    }
    let mu_chains: Vec<Vec<f64>> = traces.iter().map(|t| t.mu_e.clone()).collect();
    let var_chains: Vec<Vec<f64>> = traces.iter().map(|t| t.sigma_e2.clone()).collect();
    let error_gelman_rubin = [
        stats::gelman_rubin(&mu_chains),
        stats::gelman_rubin(&var_chains),
    ];
    let converged = gelman_rubin
        .iter()
        .chain(&error_gelman_rubin)
        .all(|r| *r < cfg.gr_threshold);
    if !converged {
        log::warn!("chains did not converge: Gelman-Rubin {gelman_rubin:?} {error_gelman_rubin:?}");
    }
    let acceptance = (0..m)
        .map(|i| traces.iter().map(|t| t.acceptance[i]).sum::<f64>() / traces.len() as f64)
        .collect();
    let samples = traces.iter().map(|t| t.xi.len()).sum();
    let summary = PosteriorSummary {
        terms: prior.names.clone(),
        mean,
        std,
        prior_mean: prior.mean.clone(),
        prior_std: prior.std.clone(),
        gelman_rubin,
        error_gelman_rubin,
        error_mean: stats::mean_std(&mu_chains.concat()).0,
        error_variance: stats::mean_std(&var_chains.concat()).0,
        acceptance,
        chains: cfg.chains,
        steps: cfg.steps,
        burn_in: cfg.burn_in_steps(),
        samples,
        converged,
    };
    Ok(Posterior { summary, traces })
}

/// Updates a learned model against raw measurements.
pub fn run_bmu(
    model: &SparseModel<f64>,
    raw: &Field,
    cfg: &BmuConfig,
) -> Result<(Posterior, PdeSimulator)> {
    let prior = CoefficientPrior::from_model(model)?;
    let form = PdeModel::new(model.terms.clone(), model.mean.clone(), System::Generic)?;
    let simulator = PdeSimulator::new(form, raw, &cfg.evidence)?;
    let posterior = run(&simulator, &prior, cfg)?;
    Ok((posterior, simulator))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_wraps_or_shrinks() {
        let v = [0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(moving_average(&v, 5, false)[0], 5.0 / 3.0);
        let p = moving_average(&[5.0, 0.0, 0.0, 0.0, 0.0, 0.0], 5, true);
        assert_eq!(p[5], 1.0);
        assert_eq!(p[3], 0.0);
    }

    #[test]
    fn slices_interpolate_and_hold() {
        let times = [0.0, 1.0];
        let slices = vec![vec![0.0, 2.0], vec![1.0, 4.0]];
        assert_eq!(interpolate_slices(&times, &slices, 0.25), vec![0.25, 2.5]);
        assert_eq!(interpolate_slices(&times, &slices, 3.0), vec![1.0, 4.0]);
    }
}
