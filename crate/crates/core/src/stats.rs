//! Conditional samplers and chain diagnostics shared by model updating and
//! hierarchical inference.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Smallest probability mass a truncation interval may carry.
pub const MIN_TRUNCATION_MASS: f64 = 1e-12;

pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + var.sqrt() * z
}

/// Draw from the inverse-gamma distribution with the given shape and scale.
pub fn inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("positive inverse-gamma parameters");
    1.0 / g.sample(rng)
}

/// Inverse-CDF draw from `N(mean, var)` restricted to `(lower, upper)`.
pub fn truncated_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    var: f64,
    lower: f64,
    upper: f64,
) -> Result<f64> {
    let sd = var.sqrt();
    // Work in the lower tail, where the CDF keeps its relative precision.
    if (lower - mean) > (mean - upper) && lower > mean {
        return truncated_normal(rng, -mean, var, -upper, -lower).map(|v| -v);
    }
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let a = std.cdf((lower - mean) / sd);
    let b = std.cdf((upper - mean) / sd);
    let mass = b - a;
    if !(mass >= MIN_TRUNCATION_MASS) {
        return Err(Error::TruncationMass {
            lower,
            upper,
            mass: mass.max(0.0),
        });
    }
    let p = a + rng.gen::<f64>() * mass;
    let v = mean + sd * std.inverse_cdf(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
    Ok(v.clamp(lower, upper))
}

/// Hyperpriors of the error model: `μ_e ~ N(0, mean_var)`, `σ_e² ~ IG(shape, scale)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorPrior {
    pub mean_var: f64,
    pub shape: f64,
    pub scale: f64,
}

impl Default for ErrorPrior {
    fn default() -> Self {
        ErrorPrior {
            mean_var: 1.0 / 9.0,
            shape: 1.0,
            scale: 2.0,
        }
    }
}

/// Running sums of an error vector: count, Σe and Σe².
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorSums {
    pub n: f64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ErrorSums {
    pub fn of(e: &[f64]) -> Self {
        ErrorSums {
            n: e.len() as f64,
            sum: e.iter().sum(),
            sum_sq: e.iter().map(|v| v * v).sum(),
        }
    }

    /// `Σ(e − μ)²`.
    pub fn scatter(&self, mu: f64) -> f64 {
        (self.sum_sq - 2.0 * mu * self.sum + self.n * mu * mu).max(0.0)
    }
}

impl std::ops::Add for ErrorSums {
    type Output = ErrorSums;
    fn add(self, o: ErrorSums) -> ErrorSums {
        ErrorSums {
            n: self.n + o.n,
            sum: self.sum + o.sum,
            sum_sq: self.sum_sq + o.sum_sq,
        }
    }
}

/// Mean and variance of the Gaussian conditional of `μ_e`.
pub fn error_mean_conditional(sums: &ErrorSums, sigma_e2: f64, prior: &ErrorPrior) -> (f64, f64) {
    let mean = sums.sum / (sums.n + sigma_e2 / prior.mean_var);
    let var = 1.0 / (sums.n / sigma_e2 + 1.0 / prior.mean_var);
    (mean, var)
}

pub fn sample_error_mean<R: Rng + ?Sized>(
    rng: &mut R,
    sums: &ErrorSums,
    sigma_e2: f64,
    prior: &ErrorPrior,
) -> f64 {
    let (m, v) = error_mean_conditional(sums, sigma_e2, prior);
    normal(rng, m, v)
}

/// Shape and scale of the inverse-gamma conditional of `σ_e²`.
pub fn error_variance_conditional(sums: &ErrorSums, mu_e: f64, prior: &ErrorPrior) -> (f64, f64) {
    (
        sums.n / 2.0 + prior.shape,
        0.5 * sums.scatter(mu_e) + prior.scale,
    )
}

pub fn sample_error_variance<R: Rng + ?Sized>(
    rng: &mut R,
    sums: &ErrorSums,
    mu_e: f64,
    prior: &ErrorPrior,
) -> f64 {
    let (a, b) = error_variance_conditional(sums, mu_e, prior);
    inverse_gamma(rng, a, b)
}

/// Potential scale reduction factor of equally long chains.
///
/// Returns 1 when every chain is constant and identical, and infinity when
/// chains are internally constant but disagree.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if chains.len() < 2 || n < 2 {
        return f64::NAN;
    }
    let nf = n as f64;
    let means: Vec<f64> = chains
        .iter()
        .map(|c| c[..n].iter().sum::<f64>() / nf)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let between = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let within = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if within == 0.0 {
        return if between == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let pooled = (nf - 1.0) / nf * within + between / nf;
    (pooled / within).sqrt()
}

/// Sample mean and (population) standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn truncated_draws_stay_inside_far_tail_interval() {
        let mut r = seeded(1);
        for _ in 0..1000 {
            // Five standard deviations out.
            let v = truncated_normal(&mut r, 2.0, 0.04, 0.0, 1.0).unwrap();
            assert!(v > 0.0 && v <= 1.0);
            let w = truncated_normal(&mut r, -2.0, 0.04, -1.0, 0.0).unwrap();
            assert!((-1.0..0.0).contains(&w));
        }
        assert!(matches!(
            truncated_normal(&mut r, 100.0, 0.01, 0.0, 1.0),
            Err(Error::TruncationMass { .. })
        ));
    }

    #[test]
    fn identical_chains_have_unit_ratio() {
        let c = vec![1.0, 2.0, 3.0, 2.0];
        assert!((gelman_rubin(&[c.clone(), c]) - (0.75f64).sqrt()).abs() < 1e-12);
        assert!(gelman_rubin(&[vec![1.0; 5], vec![2.0; 5]]).is_infinite());
    }
}
