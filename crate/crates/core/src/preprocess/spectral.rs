//! Fourier-domain projection of the regression system with a low-frequency cutoff.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::field::{FieldSeries, GridSpec};
use crate::library::{Library, TermSpec};
use crate::scalar::Real;

/// A linear regression problem `target ≈ Σ_j ξ_j columns[j]`.
#[derive(Debug, Clone)]
pub struct RegressionSystem<T> {
    pub terms: Vec<TermSpec>,
    pub columns: Vec<Vec<T>>,
    pub target: Vec<T>,
}

impl<T: Real> RegressionSystem<T> {
    /// Spatial-domain system from a library and the matching time derivative.
    pub fn spatial(u_t: &FieldSeries<T>, library: &Library<T>) -> Result<Self> {
        if u_t.grid != library.grid {
            return Err(Error::Config(
                "time derivative and library are on different grids".into(),
            ));
        }
        Ok(RegressionSystem {
            terms: library.terms.clone(),
            columns: library.columns.clone(),
            target: u_t.values.clone(),
        })
    }

    pub fn rows(&self) -> usize {
        self.target.len()
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Keeps only the named columns, in library order.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        RegressionSystem {
            terms: keep.iter().map(|&i| self.terms[i].clone()).collect(),
            columns: keep.iter().map(|&i| self.columns[i].clone()).collect(),
            target: self.target.clone(),
        }
    }
}

/// Fourier-projected regression system.
#[derive(Debug, Clone)]
pub struct SpectralStack<T> {
    /// Real/imaginary rows of the retained bins, two per bin.
    pub system: RegressionSystem<T>,
    /// Retained bins as signed wave indices `[k_t, k_y, k_x]` (k_y = 0 in 1D).
    pub retained: Vec<[isize; 3]>,
    pub cutoff: Vec<f64>,
}

fn signed(j: usize, n: usize) -> isize {
    if j <= n / 2 {
        j as isize
    } else {
        j as isize - n as isize
    }
}

fn partner(j: usize, n: usize) -> usize {
    (n - j) % n
}

/// Multidimensional DFT over (t, [y,] x) of a field stored t-outer, x-inner.
fn dft_nd<T: Real>(values: &[T], dims: &[usize], planner: &mut FftPlanner<T>) -> Vec<Complex<T>> {
    let mut data: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
    let total: usize = dims.iter().product();
    for (a, &n) in dims.iter().enumerate() {
        if n <= 1 {
            continue;
        }
        let stride: usize = dims[a + 1..].iter().product();
        let fft = planner.plan_fft_forward(n);
        let mut line = vec![Complex::new(T::zero(), T::zero()); n];
        for base in 0..total {
            // `base` must be the first element of a line along axis `a`.
            if (base / stride) % n != 0 {
                continue;
            }
            for i in 0..n {
                line[i] = data[base + i * stride];
            }
            fft.process(&mut line);
            for i in 0..n {
                data[base + i * stride] = line[i];
            }
        }
    }
    data
}

fn dims_of(grid: &GridSpec) -> Vec<usize> {
    if grid.is_2d() {
        vec![grid.t.n, grid.ny(), grid.x.n]
    } else {
        vec![grid.t.n, grid.x.n]
    }
}

/// Retained bins for the given per-axis cutoffs: flat indices plus Parseval weights.
fn retained_bins(dims: &[usize], cutoff: &[f64]) -> Vec<(usize, Vec<usize>, f64)> {
    let total: usize = dims.iter().product();
    let mut out = Vec::new();
    let mut idx = vec![0usize; dims.len()];
    for flat in 0..total {
        let mut rem = flat;
        for a in (0..dims.len()).rev() {
            idx[a] = rem % dims[a];
            rem /= dims[a];
        }
        let inside = idx
            .iter()
            .zip(dims)
            .zip(cutoff)
            .all(|((&j, &n), &c)| (signed(j, n).unsigned_abs() as f64) <= c * (n as f64 / 2.0));
        if !inside {
            continue;
        }
        let mut pflat = 0;
        for (a, &j) in idx.iter().enumerate() {
            pflat = pflat * dims[a] + partner(j, dims[a]);
        }
        if flat > pflat {
            continue;
        }
        let weight = if flat == pflat { 1.0 } else { 2.0f64.sqrt() };
        out.push((flat, idx.clone(), weight));
    }
    out
}

/// Transforms the target and every library column, keeps bins with
/// `|k| ≤ cutoff·n/2` on every axis and stacks real and imaginary parts.
///
/// Only one of each conjugate pair is kept; paired bins are weighted by √2 so
/// that a cutoff of 1 reproduces the spatial least-squares problem exactly.
pub fn spectral_project<T: Real>(
    u_t: &FieldSeries<T>,
    library: &Library<T>,
    cutoff: &[f64],
) -> Result<SpectralStack<T>> {
    let spatial = RegressionSystem::spatial(u_t, library)?;
    let dims = dims_of(&u_t.grid);
    let cutoff: Vec<f64> = match cutoff.len() {
        1 => vec![cutoff[0]; dims.len()],
        n if n == dims.len() => cutoff.to_vec(),
        n => {
            return Err(Error::Config(format!(
                "{n} cutoff fractions given for a {}-axis grid",
                dims.len()
            )))
        }
    };
    if cutoff.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
        return Err(Error::Config(format!(
            "cutoff fractions {cutoff:?} must lie in (0, 1]"
        )));
    }
    let bins = retained_bins(&dims, &cutoff);
    let mut planner = FftPlanner::new();
    let mut project = |values: &[T]| -> Vec<T> {
        let hat = dft_nd(values, &dims, &mut planner);
        let mut rows = Vec::with_capacity(2 * bins.len());
        for (flat, _, w) in &bins {
            let w = T::of(*w);
            rows.push(hat[*flat].re * w);
            rows.push(hat[*flat].im * w);
        }
        rows
    };
    let target = project(&spatial.target);
    let columns = spatial.columns.iter().map(|c| project(c)).collect();
    let retained = bins
        .iter()
        .map(|(_, idx, _)| {
            let s: Vec<isize> = idx.iter().zip(&dims).map(|(&j, &n)| signed(j, n)).collect();
            if s.len() == 3 {
                [s[0], s[1], s[2]]
            } else {
                [s[0], 0, s[1]]
            }
        })
        .collect();
    Ok(SpectralStack {
        system: RegressionSystem {
            terms: spatial.terms,
            columns,
            target,
        },
        retained,
        cutoff,
    })
}

/// Retained-band Fourier coefficients of a single field (complex, unweighted).
pub fn band_coefficients<T: Real>(
    field: &FieldSeries<T>,
    cutoff: &[f64],
) -> Result<Vec<Complex<f64>>> {
    let dims = dims_of(&field.grid);
    let cutoff: Vec<f64> = if cutoff.len() == 1 {
        vec![cutoff[0]; dims.len()]
    } else {
        cutoff.to_vec()
    };
    if cutoff.len() != dims.len() || cutoff.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
        return Err(Error::Config(format!("invalid cutoff {cutoff:?}")));
    }
    let bins = retained_bins(&dims, &cutoff);
    let values: Vec<f64> = field.values.iter().map(|v| v.as_f64()).collect();
    let hat = dft_nd(&values, &dims, &mut FftPlanner::new());
    Ok(bins.iter().map(|(f, _, _)| hat[*f]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dft_matches_direct_sum() {
        let dims = [3usize, 4];
        let v: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        let hat = dft_nd(&v, &dims, &mut FftPlanner::new());
        for kt in 0..3 {
            for kx in 0..4 {
                let mut s = Complex::new(0.0, 0.0);
                for t in 0..3 {
                    for x in 0..4 {
                        let ph = -2.0
                            * std::f64::consts::PI
                            * ((kt * t) as f64 / 3.0 + (kx * x) as f64 / 4.0);
                        s += Complex::new(ph.cos(), ph.sin()) * v[t * 4 + x];
                    }
                }
                assert!((hat[kt * 4 + kx] - s).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn full_band_preserves_energy() {
        for dims in [[5usize, 8], [6, 7], [4, 4]] {
            let n: usize = dims.iter().product();
            let v: Vec<f64> = (0..n).map(|i| ((i * 13) % 7) as f64 * 0.3 - 1.0).collect();
            let bins = retained_bins(&dims, &[1.0, 1.0]);
            let hat = dft_nd(&v, &dims, &mut FftPlanner::new());
            let e: f64 = bins
                .iter()
                .map(|(f, _, w)| w * w * hat[*f].norm_sqr())
                .sum();
            let e0: f64 = v.iter().map(|x| x * x).sum::<f64>() * n as f64;
            assert!((e - e0).abs() < 1e-9 * e0, "{dims:?}");
        }
    }
}
