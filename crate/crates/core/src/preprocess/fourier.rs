//! Hard thresholding of spatial Fourier coefficients for periodic fields.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::field::{Boundary, FieldSeries, Provenance};
use crate::scalar::Real;

/// Report of a thresholding pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdReport {
    /// Estimated noise standard deviation per sample.
    pub noise_std: f64,
    /// Fraction of coefficients kept.
    pub kept: f64,
}

/// In-place multidimensional FFT over row-major data with the given axis lengths.
pub(crate) fn fft_nd(
    data: &mut [Complex<f64>],
    dims: &[usize],
    inverse: bool,
    planner: &mut FftPlanner<f64>,
) {
    let total: usize = dims.iter().product();
    for (a, &n) in dims.iter().enumerate() {
        if n <= 1 {
            continue;
        }
        let stride: usize = dims[a + 1..].iter().product();
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let mut line = vec![Complex::new(0.0, 0.0); n];
        for base in 0..total {
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
}

fn frequency_fraction(j: usize, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let s = if j <= n / 2 { j } else { n - j };
    s as f64 / (n as f64 / 2.0)
}

/// Zeroes every Fourier coefficient whose magnitude is below `factor` noise
/// standard deviations, then transforms back.
///
/// The transform runs over the spatial axes and, unless `per_slice` is set,
/// over time as well after an even reflection that makes the series periodic.
/// The noise level is the mean power of the upper half of the spectrum, which
/// assumes white measurement noise and negligible signal there.
pub fn fourier_threshold<T: Real>(
    field: &FieldSeries<T>,
    factor: f64,
    per_slice: bool,
) -> Result<(FieldSeries<T>, ThresholdReport)> {
    let g = field.grid;
    if g.boundary != Boundary::Periodic {
        return Err(Error::Config(
            "Fourier thresholding needs a periodic grid".into(),
        ));
    }
    if !(factor >= 0.0) {
        return Err(Error::Config(format!(
            "threshold factor {factor} must be non-negative"
        )));
    }
    let len = g.slice_len();
    let nt = g.t.n;
    // Slices of the transformed block and their source slice.
    let order: Vec<usize> = if per_slice {
        vec![0]
    } else {
        (0..nt).chain((1..nt - 1).rev()).collect()
    };
    let spatial: Vec<usize> = if g.is_2d() {
        vec![g.ny(), g.x.n]
    } else {
        vec![g.x.n]
    };
    let mut dims = vec![order.len()];
    dims.extend(&spatial);
    let block = order.len() * len;
    let mut planner = FftPlanner::new();
    let blocks: Vec<Vec<usize>> = if per_slice {
        (0..nt).map(|k| vec![k]).collect()
    } else {
        vec![order.clone()]
    };
    let mut spectra: Vec<Vec<Complex<f64>>> = blocks
        .iter()
        .map(|slices| {
            let mut data = Vec::with_capacity(block);
            for &k in slices {
                data.extend(field.slice(k).iter().map(|v| Complex::new(v.as_f64(), 0.0)));
            }
            fft_nd(&mut data, &dims, false, &mut planner);
            data
        })
        .collect();
    let fraction = |flat: usize| -> f64 {
        let mut rem = flat;
        let mut f: f64 = 0.0;
        for &n in dims.iter().rev() {
            f = f.max(frequency_fraction(rem % n, n));
            rem /= n;
        }
        f
    };
    let high: Vec<usize> = (0..block).filter(|&i| fraction(i) > 0.5).collect();
    if high.is_empty() {
        return Err(Error::Config(
            "grid too coarse to estimate the noise level".into(),
        ));
    }
    let power: f64 = spectra
        .iter()
        .map(|s| high.iter().map(|&i| s[i].norm_sqr()).sum::<f64>())
        .sum::<f64>()
        / (high.len() * spectra.len()) as f64;
    let cut = factor * factor * power;
    let mut kept = 0usize;
    for s in &mut spectra {
        for c in s.iter_mut() {
            if c.norm_sqr() < cut {
                *c = Complex::new(0.0, 0.0);
            } else {
                kept += 1;
            }
        }
        fft_nd(s, &dims, true, &mut planner);
    }
    let scale = 1.0 / block as f64;
    let mut values = Vec::with_capacity(field.values.len());
    if per_slice {
        for s in &spectra {
            values.extend(s.iter().map(|c| T::of(c.re * scale)));
        }
    } else {
        values.extend(spectra[0][..nt * len].iter().map(|c| T::of(c.re * scale)));
    }
    let mut out = FieldSeries::new(g, values, Provenance::Denoised)?;
    out.meta = field.meta.clone();
    // Mean power of a white-noise coefficient is (block size)·σ².
    Ok((
        out,
        ThresholdReport {
            noise_std: (power / block as f64).sqrt(),
            kept: kept as f64 / (block * spectra.len()) as f64,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;

    #[test]
    fn recovers_noise_level_and_keeps_signal() {
        let g = GridSpec::new_1d((-1.0, 1.0, 128), (0.0, 1.0, 40), Boundary::Periodic).unwrap();
        let clean = FieldSeries::<f64>::from_fn(g, Provenance::Clean, |t, _, x| {
            (std::f64::consts::PI * (x - t)).sin() + 0.3 * (3.0 * std::f64::consts::PI * x).cos()
        });
        let noisy = crate::dynamics::add_noise(&clean, 0.3, 5).unwrap();
        let std_u = clean.std();
        let (den, rep) = fourier_threshold(&noisy, 3.0, true).unwrap();
        assert!(
            (rep.noise_std / (0.3 * std_u) - 1.0).abs() < 0.1,
            "{}",
            rep.noise_std
        );
        // Per slice, the noise in the 4 signal bins of 128 survives.
        let floor = 0.3 * std_u * (4.0f64 / 128.0).sqrt();
        let err = den.sub(&clean).unwrap().rms();
        assert!(err < 1.25 * floor, "{err} vs {floor}");
        let (den, rep) = fourier_threshold(&noisy, 3.0, false).unwrap();
        assert!(
            (rep.noise_std / (0.3 * std_u) - 1.0).abs() < 0.1,
            "{}",
            rep.noise_std
        );
        let err = den.sub(&clean).unwrap().rms();
        assert!(err < 0.05 * std_u, "{err}");
    }
}
