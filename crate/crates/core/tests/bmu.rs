use std::f64::consts::PI;

use pesbl_core::bmu::*;
use pesbl_core::dynamics::{add_noise, solve_burgers_1d, PdeModel, SolverConfig, System};
use pesbl_core::rng::seeded;
use pesbl_core::stats::{ErrorPrior, ErrorSums};
use pesbl_core::{Boundary, Error, Field, FieldSeries, GridSpec, Provenance, Result};
use statrs::distribution::{ContinuousCDF, Normal};

/// `e = (y − Aξ)/‖y‖` with an optional instability region `ξ₀ > limit`.
struct Linear {
    rows: Vec<Vec<f64>>,
    y: Vec<f64>,
    norm: f64,
    unstable_above: Option<f64>,
}

impl Linear {
    fn new(m: usize, n: usize, truth: &[f64], noise: f64, seed: u64) -> Self {
        let mut r = seeded(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| pesbl_core::stats::normal(&mut r, 0.0, 1.0))
                    .collect()
            })
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|a| {
                a.iter().zip(truth).map(|(x, t)| x * t).sum::<f64>()
                    + pesbl_core::stats::normal(&mut r, 0.0, noise * noise)
            })
            .collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        Linear {
            rows,
            y,
            norm,
            unstable_above: None,
        }
    }

    /// Posterior mean and covariance for fixed `μ_e = 0` and `σ_e²`.
    fn posterior(&self, sigma_e2: f64, prior: &CoefficientPrior) -> (Vec<f64>, Vec<Vec<f64>>) {
        let m = prior.len();
        let w = 1.0 / (self.norm * self.norm * sigma_e2);
        let mut p = vec![vec![0.0; m]; m];
        let mut b = vec![0.0; m];
        for (a, y) in self.rows.iter().zip(&self.y) {
            for i in 0..m {
                b[i] += w * a[i] * y;
                for j in 0..m {
                    p[i][j] += w * a[i] * a[j];
                }
            }
        }
        for i in 0..m {
            p[i][i] += 1.0 / prior.std[i].powi(2);
            b[i] += prior.mean[i] / prior.std[i].powi(2);
        }
        assert_eq!(m, 2, "closed-form inverse is written for two coefficients");
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let cov = vec![
            vec![p[1][1] / det, -p[0][1] / det],
            vec![-p[1][0] / det, p[0][0] / det],
        ];
        let mean = (0..2)
            .map(|i| cov[i][0] * b[0] + cov[i][1] * b[1])
            .collect();
        (mean, cov)
    }
}

impl ForwardModel for Linear {
    fn evidence_len(&self) -> usize {
        self.y.len()
    }

    fn errors(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if let Some(limit) = self.unstable_above {
            if xi[0] > limit {
                return Err(Error::Unstable {
                    time: 0.0,
                    detail: "toy instability".into(),
                });
            }
        }
        Ok(self
            .rows
            .iter()
            .zip(&self.y)
            .map(|(a, y)| (y - a.iter().zip(xi).map(|(x, c)| x * c).sum::<f64>()) / self.norm)
            .collect())
    }
}

fn prior2(mean: [f64; 2], std: [f64; 2]) -> CoefficientPrior {
    CoefficientPrior::new(vec!["a".into(), "b".into()], mean.to_vec(), std.to_vec()).unwrap()
}

fn burgers_grid() -> GridSpec {
    GridSpec::new_1d((-1.0, 1.0, 64), (0.0, 0.5, 26), Boundary::Dirichlet).unwrap()
}

#[test]
fn identical_fields_give_zero_errors() {
    let g = burgers_grid();
    let u: Field = FieldSeries::from_fn(g, Provenance::Noisy, |t, _, x| x * (1.0 - t));
    assert!(error_vector(&u, &u).unwrap().iter().all(|&e| e == 0.0));
}

#[test]
fn zero_simulation_gives_unit_error_norm() {
    let g = burgers_grid();
    let u: Field = FieldSeries::from_fn(g, Provenance::Noisy, |t, _, x| (3.0 * x).sin() + t);
    let zero = FieldSeries::zeros(g, Provenance::Simulated);
    let e = error_vector(&u, &zero).unwrap();
    assert_eq!(e.len(), g.len());
    let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
    assert!(matches!(
        error_vector(&zero, &u),
        Err(Error::DegenerateMeasurement(_))
    ));
}

#[test]
fn burgers_error_vector_matches_independent_quotient() {
    let g = burgers_grid();
    let clean: Field = solve_burgers_1d(0.05, &g, &SolverConfig::default()).unwrap();
    let noisy = add_noise(&clean, 0.2, 3).unwrap();
    let form = PdeModel::from_names(&[("uu_x", -1.0), ("u_xx", 0.05)], System::Generic).unwrap();
    let sim = PdeSimulator::new(
        form,
        &noisy,
        &EvidenceConfig {
            conditions: ConditionSource::Benchmark(System::Burgers1d),
            refine: Some(1),
            ..Default::default()
        },
    )
    .unwrap();
    let e = sim.errors(&[-0.9, 0.06]).unwrap();
    let simulated = sim.simulate(&[-0.9, 0.06]).unwrap();
    let mut sq = 0.0;
    for v in &noisy.values {
        sq += v * v;
    }
    let denom = sq.sqrt();
    for (k, (m, s)) in noisy.values.iter().zip(&simulated.values).enumerate() {
        assert!((e[k] - (m - s) / denom).abs() < 1e-15);
    }
    assert!(e.iter().all(|v| v.is_finite()));
    assert_eq!(e, error_vector(&noisy, &simulated).unwrap());
}

#[test]
fn prior_term_vanishes_at_prior_mean_and_is_symmetric() {
    let zero = ErrorSums::of(&[0.0; 10]);
    assert_eq!(log_conditional(&zero, 0.0, 0.1, 1.5, 1.5, 0.2), 0.0);
    let sums = ErrorSums::of(&[0.1, -0.2, 0.05]);
    let a = log_conditional(&sums, 0.01, 0.1, 1.5 + 0.3, 1.5, 0.2);
    let b = log_conditional(&sums, 0.01, 0.1, 1.5 - 0.3, 1.5, 0.2);
    assert_eq!(a, b);
}

#[test]
fn conditional_density_matches_quadrature_normalized_posterior() {
    // One coefficient, linear forward map: the conditional is exactly Gaussian.
    let toy = Linear::new(2, 60, &[0.8, -0.4], 0.3, 4);
    let sigma_e2 = 2e-3;
    let prior = prior2([0.5, -0.4], [0.4, 1.0]);
    let fixed_b = -0.4;
    let logd = |a: f64| {
        let sums = ErrorSums::of(&toy.errors(&[a, fixed_b]).unwrap());
        log_conditional(&sums, 0.0, sigma_e2, a, prior.mean[0], prior.std[0])
    };
    // Analytic 1D conditional.
    let w = 1.0 / (toy.norm * toy.norm * sigma_e2);
    let (mut prec, mut lin) = (
        1.0 / prior.std[0].powi(2),
        prior.mean[0] / prior.std[0].powi(2),
    );
    for (r, y) in toy.rows.iter().zip(&toy.y) {
        prec += w * r[0] * r[0];
        lin += w * r[0] * (y - r[1] * fixed_b);
    }
    let (mean, sd) = (lin / prec, prec.sqrt().recip());
    let grid: Vec<f64> = (0..=400)
        .map(|k| mean - 6.0 * sd + 12.0 * sd * k as f64 / 400.0)
        .collect();
    let h = grid[1] - grid[0];
    let top = logd(mean);
    let dens: Vec<f64> = grid.iter().map(|&a| (logd(a) - top).exp()).collect();
    let z: f64 = h * (dens.iter().sum::<f64>() - 0.5 * (dens[0] + dens[400]));
    for (a, d) in grid.iter().zip(&dens) {
        let analytic = (-(a - mean).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * PI).sqrt());
        assert!(
            (d / z - analytic).abs() < 1e-6 / sd,
            "{a}: {} vs {analytic}",
            d / z
        );
    }
}

#[test]
fn zero_width_proposal_is_always_accepted() {
    let toy = Linear::new(2, 30, &[0.8, -0.4], 0.1, 5);
    let prior = prior2([0.0, 0.0], [1.0, 1.0]);
    let xi = vec![0.3, 0.1];
    let sums = ErrorSums::of(&toy.errors(&xi).unwrap());
    let mut state = ChainState::new(xi, sums, 0.0, 0.01, vec![0.0, 0.0]);
    let mut r = seeded(6);
    for _ in 0..200 {
        assert!(state.mh_step(0, &toy, &prior, &mut r).unwrap());
        assert!(state.mh_step(1, &toy, &prior, &mut r).unwrap());
    }
    assert_eq!(state.acceptance_rate(0), 1.0);
}

#[test]
fn unstable_proposals_are_rejected() {
    let mut toy = Linear::new(2, 30, &[0.8, -0.4], 0.1, 7);
    toy.unstable_above = Some(0.0);
    let prior = prior2([0.0, 0.0], [1.0, 1.0]);
    let xi = vec![-0.05, 0.0];
    let sums = ErrorSums::of(&toy.errors(&xi).unwrap());
    let mut state = ChainState::new(xi, sums, 0.0, 0.5, vec![1.0, 1.0]);
    let mut r = seeded(8);
    for _ in 0..500 {
        state.mh_step(0, &toy, &prior, &mut r).unwrap();
        assert!(state.xi[0] <= 0.0);
    }
    assert!(state.accepted[0] > 0 && state.accepted[0] < 500);
}

/// Batch-means standard error of the mean of an autocorrelated series.
fn batch_se(v: &[f64], batches: usize) -> f64 {
    let size = v.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| v[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

fn frozen_toy_run(steps: usize, seed: u64) -> (Linear, CoefficientPrior, f64, Posterior) {
    let toy = Linear::new(2, 80, &[0.8, -0.4], 0.3, 9);
    let prior = prior2([0.5, 0.0], [0.5, 0.5]);
    let sigma_e2 = 1.5e-3;
    let cfg = BmuConfig {
        steps,
        fixed_error: Some([0.0, sigma_e2]),
        initial_scale: 0.2,
        seed,
        ..Default::default()
    };
    let post = run(&toy, &prior, &cfg).unwrap();
    (toy, prior, sigma_e2, post)
}

#[test]
fn chains_match_conjugate_posterior_within_monte_carlo_error() {
    let (toy, prior, sigma_e2, post) = frozen_toy_run(20_000, 10);
    let (mean, cov) = toy.posterior(sigma_e2, &prior);
    assert!(post.summary.converged);
    for i in 0..2 {
        let pooled: Vec<f64> = post.traces.iter().flat_map(|t| t.coefficient(i)).collect();
        let se = post
            .traces
            .iter()
            .map(|t| batch_se(&t.coefficient(i), 40).powi(2))
            .sum::<f64>()
            .sqrt()
            / post.traces.len() as f64;
        let m = post.summary.mean[i];
        assert!(
            (m - mean[i]).abs() < 3.0 * se,
            "coef {i}: {m} vs {} (se {se})",
            mean[i]
        );
        // Standard error of the variance from batch means of squared deviations.
        let dev: Vec<f64> = pooled.iter().map(|x| (x - mean[i]).powi(2)).collect();
        let var_se = batch_se(&dev, 80);
        let var = dev.iter().sum::<f64>() / dev.len() as f64;
        assert!(
            (var - cov[i][i]).abs() < 3.0 * var_se,
            "coef {i}: var {var} vs {} (se {var_se})",
            cov[i][i]
        );
        let rate = post.summary.acceptance[i];
        assert!((0.15..0.6).contains(&rate), "acceptance {rate}");
    }
}

#[test]
fn stationary_distribution_matches_quadrature_posterior() {
    let (toy, prior, sigma_e2, post) = frozen_toy_run(100_000, 11);
    let (mean, cov) = toy.posterior(sigma_e2, &prior);
    for i in 0..2 {
        let mut thinned: Vec<f64> = post
            .traces
            .iter()
            .flat_map(|t| t.coefficient(i).into_iter().step_by(10))
            .collect();
        thinned.sort_by(f64::total_cmp);
        let marginal = Normal::new(mean[i], cov[i][i].sqrt()).unwrap();
        let n = thinned.len() as f64;
        let ks = thinned
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let f = marginal.cdf(x);
                (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "coef {i}: KS {ks}");
    }
}

#[test]
fn same_seed_gives_identical_chains() {
    let (_, _, _, a) = frozen_toy_run(600, 12);
    let (_, _, _, b) = frozen_toy_run(600, 12);
    let (_, _, _, c) = frozen_toy_run(600, 13);
    assert_eq!(a.traces, b.traces);
    assert_ne!(a.traces, c.traces);
}

#[test]
fn sampled_error_model_tracks_residual_scale() {
    let toy = Linear::new(2, 400, &[0.8, -0.4], 0.5, 14);
    let prior = prior2([0.7, -0.3], [0.5, 0.5]);
    let cfg = BmuConfig {
        steps: 4000,
        error_prior: ErrorPrior {
            scale: 1e-6,
            ..Default::default()
        },
        seed: 15,
        ..Default::default()
    };
    let post = run(&toy, &prior, &cfg).unwrap();
    let best = toy.posterior(1e-3, &prior).0;
    let resid = ErrorSums::of(&toy.errors(&best).unwrap());
    let expected = resid.sum_sq / resid.n;
    let got = post.summary.error_variance;
    assert!((got / expected - 1.0).abs() < 0.15, "{got} vs {expected}");
    assert!(post.summary.error_mean.abs() < 3.0 * (expected / resid.n).sqrt() + 1e-3);
}

#[test]
fn under_sampled_dispersed_chains_are_flagged() {
    let toy = Linear::new(2, 80, &[0.8, -0.4], 0.3, 16);
    let prior = prior2([0.5, 0.0], [0.5, 0.5]);
    let cfg = BmuConfig {
        steps: 40,
        initial_scale: 1e-4,
        dispersion: 2.0,
        fixed_error: Some([0.0, 1e-3]),
        seed: 17,
        ..Default::default()
    };
    let post = run(&toy, &prior, &cfg).unwrap();
    assert!(!post.summary.converged);
    assert!(post.summary.gelman_rubin.iter().any(|g| *g >= 1.1));
}

#[test]
fn config_validation_rejects_single_chain_and_bad_ranges() {
    let toy = Linear::new(2, 10, &[0.8, -0.4], 0.3, 18);
    let prior = prior2([0.5, 0.0], [0.5, 0.5]);
    for cfg in [
        BmuConfig {
            chains: 1,
            ..Default::default()
        },
        BmuConfig {
            burn_in: 1.0,
            ..Default::default()
        },
        BmuConfig {
            acceptance_range: [0.5, 0.2],
            ..Default::default()
        },
        BmuConfig {
            steps: 1,
            ..Default::default()
        },
    ] {
        assert!(matches!(run(&toy, &prior, &cfg), Err(Error::Config(_))));
    }
    assert!(CoefficientPrior::new(vec!["a".into()], vec![0.0], vec![0.0]).is_err());
}

#[test]
fn trace_csv_has_one_row_per_kept_sample() {
    let (_, _, _, post) = frozen_toy_run(400, 19);
    let mut buf = Vec::new();
    post.write_trace_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "chain,sample,a,b,mu_e,sigma_e2");
    assert_eq!(lines.len() - 1, post.summary.samples);
    assert_eq!(post.summary.samples, 2 * (400 - 100));
    let draws = post.draws(50);
    assert_eq!(draws.len(), 50);
    assert!(draws.iter().all(|d| d.len() == 2));
}

#[test]
fn periodic_evidence_is_subsampled_and_closed_grids_need_matching_strides() {
    let g = GridSpec::new_1d((-1.0, 1.0, 64), (0.0, 1.0, 21), Boundary::Periodic).unwrap();
    let u: Field = FieldSeries::from_fn(g, Provenance::Noisy, |t, _, x| (PI * (x - t)).cos());
    let form =
        PdeModel::from_names(&[("uu_x", -1.0), ("u_xxx", -0.0025)], System::Generic).unwrap();
    let sim = PdeSimulator::new(form.clone(), &u, &EvidenceConfig::default()).unwrap();
    assert_eq!(sim.evidence().grid.x.n, 32);
    assert_eq!(sim.evidence().grid.t.n, 11);
    assert_eq!(sim.evidence().values[5], u.at(0, 0, 10));
    let closed = burgers_grid();
    let v: Field = FieldSeries::from_fn(closed, Provenance::Noisy, |_, _, x| x);
    let bad = EvidenceConfig {
        stride_space: Some(2),
        ..Default::default()
    };
    assert!(matches!(
        PdeSimulator::new(form, &v, &bad),
        Err(Error::Config(_))
    ));
}

#[test]
fn burgers_update_narrows_a_wide_prior() {
    let g = burgers_grid();
    let clean: Field = solve_burgers_1d(0.05, &g, &SolverConfig::default()).unwrap();
    let noisy = add_noise(&clean, 0.1, 20).unwrap();
    let form = PdeModel::from_names(&[("uu_x", -1.0), ("u_xx", 0.05)], System::Generic).unwrap();
    let sim = PdeSimulator::new(form, &noisy, &EvidenceConfig::default()).unwrap();
    let prior = CoefficientPrior::new(
        vec!["uu_x".into(), "u_xx".into()],
        vec![-0.9, 0.06],
        vec![0.5, 0.05],
    )
    .unwrap();
    let cfg = BmuConfig {
        steps: 600,
        seed: 21,
        ..Default::default()
    };
    let post = run(&sim, &prior, &cfg).unwrap();
    let s = &post.summary;
    for i in 0..2 {
        assert!(s.std[i] < s.prior_std[i], "{s:?}");
    }
    assert!((s.mean[0] + 1.0).abs() < 0.1, "{s:?}");
}

#[test]
fn trace_csv_round_trips_coefficients() {
    let toy = Linear::new(2, 30, &[0.8, -0.4], 0.3, 3);
    let prior = prior2([0.5, 0.0], [0.5, 0.5]);
    let cfg = BmuConfig {
        steps: 40,
        ..Default::default()
    };
    let post = run(&toy, &prior, &cfg).unwrap();
    let mut buf = Vec::new();
    post.write_trace_csv(&mut buf).unwrap();
    let (terms, rows) = read_trace_csv(buf.as_slice()).unwrap();
    assert_eq!(terms, post.summary.terms);
    let pooled: Vec<Vec<f64>> = post.traces.iter().flat_map(|t| t.xi.clone()).collect();
    assert_eq!(rows, pooled);
    assert_eq!(spread_draws(&rows, 5), post.draws(5));
    assert!(read_trace_csv("a,b\n1,2\n".as_bytes()).is_err());
}
