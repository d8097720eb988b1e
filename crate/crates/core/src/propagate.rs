//! Forward propagation of coefficient samples into predictive envelopes, and
//! probabilistic comparison of two coefficient posteriors.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bmu::PosteriorSummary;
use crate::error::{Error, Result};
use crate::{Axis, Field, GridSpec};

/// Smallest ensemble an envelope is computed from.
pub const MIN_TRAJECTORIES: usize = 30;

/// Where the predictive envelope is read off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Section {
    /// Time series at the grid column nearest `x` (first row on 2D grids),
    /// restricted to `t ∈ [from, to]`.
    AtX { x: f64, from: f64, to: f64 },
    /// The whole spatial slice nearest time `t`.
    AtT { t: f64 },
}

impl Section {
    /// Flat indices into a field on `grid` and the matching coordinates.
    pub fn locate(&self, field: &Field) -> Result<(Vec<usize>, Vec<f64>)> {
        let g = &field.grid;
        let nearest = |coords: &[f64], v: f64| -> usize {
            coords
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        let tc = g.t_coords();
        let xc = g.x_coords();
        let tol = 0.5 * g.dt();
        match *self {
            Section::AtX { x, from, to } => {
                if x < g.x.min - g.dx() || x > g.x.max + g.dx() {
                    return Err(Error::Config(format!(
                        "section x = {x} lies outside the grid"
                    )));
                }
                let ix = nearest(&xc, x);
                let ks: Vec<usize> = (0..g.t.n)
                    .filter(|&k| tc[k] >= from - tol && tc[k] <= to + tol)
                    .collect();
                if ks.is_empty() {
                    return Err(Error::Config(format!(
                        "time window [{from}, {to}] holds no grid time"
                    )));
                }
                Ok((
                    ks.iter().map(|&k| g.index(k, 0, ix)).collect(),
                    ks.iter().map(|&k| tc[k]).collect(),
                ))
            }
            Section::AtT { t } => {
                if t < g.t.min - tol || t > g.t.max + tol {
                    return Err(Error::Config(format!(
                        "section t = {t} lies outside the grid"
                    )));
                }
                let k = nearest(&tc, t);
                let start = g.index(k, 0, 0);
                let len = g.slice_len();
                let coords = (0..len).map(|i| xc[i % g.x.n]).collect();
                Ok(((start..start + len).collect(), coords))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagateConfig {
    pub draws: usize,
    /// Fraction of unstable draws above which the envelope is flagged.
    pub max_dropped: f64,
}

impl Default for PropagateConfig {
    fn default() -> Self {
        PropagateConfig {
            draws: 100,
            max_dropped: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveEnvelope {
    pub section: Section,
    /// Time (for `AtX`) or space (for `AtT`) coordinate of each section point.
    pub coords: Vec<f64>,
    pub trajectories: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub dropped: usize,
    /// More than the allowed fraction of draws were unstable.
    pub flagged: bool,
    pub truth: Option<Vec<f64>>,
    /// Whether the truth lies within mean ± 3 std, per point.
    pub covered: Option<Vec<bool>>,
}

impl PredictiveEnvelope {
    pub fn coverage(&self) -> Option<f64> {
        self.covered
            .as_ref()
            .map(|c| c.iter().filter(|&&b| b).count() as f64 / c.len() as f64)
    }

    /// CSV with columns coordinate, mean, std and truth when known.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let truth = self.truth.is_some();
        writeln!(
            w,
            "coordinate,mean,std{}",
            if truth { ",truth" } else { "" }
        )?;
        for i in 0..self.coords.len() {
            write!(
                w,
                "{:e},{:e},{:e}",
                self.coords[i], self.mean[i], self.std[i]
            )?;
            if let Some(t) = &self.truth {
                write!(w, ",{:e}", t[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Solves once per coefficient draw and summarizes the section pointwise.
///
/// `solve` maps a coefficient vector to a field; draws whose solve is unstable
/// are dropped. `truth`, when given, must live on the same grid as the solves.
pub fn propagate<S>(
    solve: S,
    draws: &[Vec<f64>],
    section: Section,
    truth: Option<&Field>,
    cfg: &PropagateConfig,
) -> Result<PredictiveEnvelope>
where
    S: Fn(&[f64]) -> Result<Field> + Sync,
{
    if draws.len() < MIN_TRAJECTORIES {
        return Err(Error::Config(format!(
            "need at least {MIN_TRAJECTORIES} draws, got {}",
            draws.len()
        )));
    }
    let results: Vec<Result<Field>> = draws.par_iter().map(|d| solve(d)).collect();
    let mut fields = Vec::with_capacity(results.len());
    let mut dropped = 0;
    for r in results {
        match r {
            Ok(f) => fields.push(f),
            Err(e) if e.is_unstable() => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if fields.len() < MIN_TRAJECTORIES {
        return Err(Error::Numerical(format!(
            "only {} of {} draws solved stably",
            fields.len(),
            draws.len()
        )));
    }
    let (indices, coords) = section.locate(&fields[0])?;
    let trajectories: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| indices.iter().map(|&i| f.values[i]).collect())
        .collect();
    let n = trajectories.len() as f64;
    let mut mean = vec![0.0; indices.len()];
    let mut std = vec![0.0; indices.len()];
    for p in 0..indices.len() {
        // Shifted by the first member so identical trajectories give exactly zero spread.
        let base = trajectories[0][p];
        let m = base + trajectories.iter().map(|t| t[p] - base).sum::<f64>() / n;
        let v = trajectories.iter().map(|t| (t[p] - m).powi(2)).sum::<f64>() / n;
        mean[p] = m;
        std[p] = v.sqrt();
    }
    let truth = match truth {
        Some(t) => {
            t.same_grid(&fields[0])?;
            Some(indices.iter().map(|&i| t.values[i]).collect::<Vec<f64>>())
        }
        None => None,
    };
    let covered = truth.as_ref().map(|t| {
        t.iter()
            .zip(mean.iter().zip(&std))
            .map(|(v, (m, s))| (v - m).abs() <= 3.0 * s)
            .collect()
    });
    let flagged = dropped as f64 > cfg.max_dropped * draws.len() as f64;
    if flagged {
        log::warn!("{dropped} of {} draws were unstable", draws.len());
    }
    Ok(PredictiveEnvelope {
        section,
        coords,
        trajectories,
        mean,
        std,
        dropped,
        flagged,
        truth,
        covered,
    })
}

/// Gaussian shift `δξ = ξ_B − ξ_A` of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientShift {
    pub term: String,
    pub mean: f64,
    pub variance: f64,
    /// `P(|δξ| > threshold)`.
    pub exceedance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub threshold: f64,
    pub shifts: Vec<CoefficientShift>,
}

/// Compares two posteriors of the same model form, treating them as
/// independent Gaussians.
pub fn diagnose(a: &PosteriorSummary, b: &PosteriorSummary, threshold: f64) -> Result<ShiftReport> {
    let mut only: Vec<String> = a
        .terms
        .iter()
        .filter(|t| !b.terms.contains(t))
        .chain(b.terms.iter().filter(|t| !a.terms.contains(t)))
        .cloned()
        .collect();
    if !only.is_empty() || a.terms.len() != b.terms.len() {
        only.sort();
        return Err(Error::TermMismatch(only));
    }
    if !(threshold >= 0.0) {
        return Err(Error::Config(format!(
            "threshold {threshold} must be non-negative"
        )));
    }
    let shifts = a
        .terms
        .iter()
        .enumerate()
        .map(|(i, term)| {
            let j = b
                .terms
                .iter()
                .position(|t| t == term)
                .expect("same term set");
            let mean = b.mean[j] - a.mean[i];
            let variance = a.std[i].powi(2) + b.std[j].powi(2);
            let exceedance = if variance > 0.0 {
                let d = Normal::new(mean, variance.sqrt()).expect("positive variance");
                1.0 - (d.cdf(threshold) - d.cdf(-threshold))
            } else if mean.abs() > threshold {
                1.0
            } else {
                0.0
            };
            CoefficientShift {
                term: term.clone(),
                mean,
                variance,
                exceedance,
            }
        })
        .collect();
    Ok(ShiftReport { threshold, shifts })
}

impl Section {
    /// Latest time the section needs.
    pub fn end_time(&self) -> f64 {
        match *self {
            Section::AtX { to, .. } => to,
            Section::AtT { t } => t,
        }
    }
}

/// `grid` continued in time with the same step up to at least `t_end`.
pub fn extend_time(grid: &GridSpec, t_end: f64) -> Result<GridSpec> {
    let dt = grid.dt();
    if t_end <= grid.t.max + 0.5 * dt {
        return Ok(*grid);
    }
    let n = ((t_end - grid.t.min) / dt - 1e-9).ceil() as usize + 1;
    let t = Axis::new(grid.t.min, grid.t.min + (n - 1) as f64 * dt, n);
    let extended = grid.with_time(t);
    extended.validate()?;
    Ok(extended)
}
