//! Fourier machinery for periodic grids in one or two dimensions.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::library::Derivative;
use crate::scalar::Real;

pub type C<T> = Complex<T>;

/// Signed integer wave index of FFT bin `j` out of `n`.
pub fn signed_index(j: usize, n: usize) -> isize {
    if j <= n / 2 {
        j as isize
    } else {
        j as isize - n as isize
    }
}

pub struct Spectral<T: Real> {
    pub nx: usize,
    pub ny: usize,
    pub kx: Vec<T>,
    pub ky: Vec<T>,
    fx: Arc<dyn Fft<T>>,
    ix: Arc<dyn Fft<T>>,
    fy: Option<(Arc<dyn Fft<T>>, Arc<dyn Fft<T>>)>,
    /// Bins kept when de-aliasing products (two-thirds rule).
    keep: Vec<bool>,
}

fn wave_numbers<T: Real>(n: usize, length: f64) -> Vec<T> {
    let base = 2.0 * std::f64::consts::PI / length;
    (0..n)
        .map(|j| {
            // The Nyquist bin is given its positive value; odd-order symbols zero it.
            T::of(base * signed_index(j, n) as f64)
        })
        .collect()
}

fn nyquist(j: usize, n: usize) -> bool {
    n % 2 == 0 && j == n / 2
}

impl<T: Real> Spectral<T> {
    /// `lx`, `ly` are the periods; `ny == 1` means a 1D grid.
    pub fn new(nx: usize, lx: f64, ny: usize, ly: f64) -> Self {
        let mut planner = FftPlanner::new();
        let fx = planner.plan_fft_forward(nx);
        let ix = planner.plan_fft_inverse(nx);
        let fy = (ny > 1).then(|| (planner.plan_fft_forward(ny), planner.plan_fft_inverse(ny)));
        let mut keep = vec![false; nx * ny];
        for iy in 0..ny {
            for jx in 0..nx {
                let okx = 3 * signed_index(jx, nx).unsigned_abs() < nx;
                let oky = ny == 1 || 3 * signed_index(iy, ny).unsigned_abs() < ny;
                keep[iy * nx + jx] = okx && oky;
            }
        }
        Spectral {
            nx,
            ny,
            kx: wave_numbers(nx, lx),
            ky: if ny > 1 {
                wave_numbers(ny, ly)
            } else {
                vec![T::zero()]
            },
            fx,
            ix,
            fy,
            keep,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    fn transform(&self, data: &mut [C<T>], inverse: bool) {
        let (px, py) = if inverse {
            (&self.ix, self.fy.as_ref().map(|p| &p.1))
        } else {
            (&self.fx, self.fy.as_ref().map(|p| &p.0))
        };
        for row in data.chunks_exact_mut(self.nx) {
            px.process(row);
        }
        if let Some(py) = py {
            let mut col = vec![C::new(T::zero(), T::zero()); self.ny];
            for jx in 0..self.nx {
                for iy in 0..self.ny {
                    col[iy] = data[iy * self.nx + jx];
                }
                py.process(&mut col);
                for iy in 0..self.ny {
                    data[iy * self.nx + jx] = col[iy];
                }
            }
        }
    }

    pub fn forward(&self, u: &[T], out: &mut [C<T>]) {
        for (o, &v) in out.iter_mut().zip(u) {
            *o = C::new(v, T::zero());
        }
        self.transform(out, false);
    }

    /// Inverse transform; `scratch` is overwritten.
    pub fn inverse(&self, hat: &[C<T>], scratch: &mut [C<T>], out: &mut [T]) {
        scratch.copy_from_slice(hat);
        self.transform(scratch, true);
        let norm = T::one() / T::of(self.len() as f64);
        for (o, c) in out.iter_mut().zip(scratch.iter()) {
            *o = c.re * norm;
        }
    }

    /// Multiplier of a spatial derivative operator in Fourier space.
    pub fn symbol(&self, d: Derivative) -> Vec<C<T>> {
        let zero = C::new(T::zero(), T::zero());
        let mut s = vec![zero; self.len()];
        for iy in 0..self.ny {
            for jx in 0..self.nx {
                let kx = self.kx[jx];
                let ky = self.ky[iy];
                let nyq_x = nyquist(jx, self.nx);
                let nyq_y = self.ny > 1 && nyquist(iy, self.ny);
                let ikx = if nyq_x { zero } else { C::new(T::zero(), kx) };
                let iky = if nyq_y { zero } else { C::new(T::zero(), ky) };
                s[iy * self.nx + jx] = match d {
                    Derivative::None => C::new(T::one(), T::zero()),
                    Derivative::Dx(1) => ikx,
                    Derivative::Dx(2) => C::new(-kx * kx, T::zero()),
                    Derivative::Dx(_) => {
                        if nyq_x {
                            zero
                        } else {
                            C::new(T::zero(), -kx * kx * kx)
                        }
                    }
                    Derivative::GradSum => ikx + iky,
                    Derivative::Laplacian => C::new(-(kx * kx + ky * ky), T::zero()),
                };
            }
        }
        s
    }

    /// Zeroes the bins removed by the two-thirds de-aliasing rule.
    pub fn dealias(&self, hat: &mut [C<T>]) {
        for (h, &k) in hat.iter_mut().zip(&self.keep) {
            if !k {
                *h = C::new(T::zero(), T::zero());
            }
        }
    }

    /// Largest wave number magnitude along x and y.
    pub fn kmax(&self) -> (f64, f64) {
        let m = |k: &[T]| k.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
        (m(&self.kx), m(&self.ky))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn derivative_of_fourier_mode_is_exact() {
        let n = 32;
        let sp = Spectral::<f64>::new(n, 2.0, 1, 0.0);
        let x: Vec<f64> = (0..n).map(|j| -1.0 + 2.0 * j as f64 / n as f64).collect();
        let u: Vec<f64> = x.iter().map(|&x| (3.0 * PI * x).sin()).collect();
        let mut hat = vec![C::new(0.0, 0.0); n];
        let mut scratch = hat.clone();
        sp.forward(&u, &mut hat);
        for (order, expect) in [
            (
                1u8,
                Box::new(|x: f64| 3.0 * PI * (3.0 * PI * x).cos()) as Box<dyn Fn(f64) -> f64>,
            ),
            (2, Box::new(|x: f64| -9.0 * PI * PI * (3.0 * PI * x).sin())),
            (
                3,
                Box::new(|x: f64| -27.0 * PI.powi(3) * (3.0 * PI * x).cos()),
            ),
        ] {
            let s = sp.symbol(Derivative::Dx(order));
            let d: Vec<_> = hat.iter().zip(&s).map(|(a, b)| a * b).collect();
            let mut out = vec![0.0; n];
            sp.inverse(&d, &mut scratch, &mut out);
            for (o, &xx) in out.iter().zip(&x) {
                assert!((o - expect(xx)).abs() < 1e-9 * 27.0 * PI.powi(3));
            }
        }
    }

    #[test]
    fn laplacian_2d() {
        let (nx, ny) = (16, 8);
        let sp = Spectral::<f64>::new(nx, 2.0, ny, 2.0);
        let mut u = vec![0.0; nx * ny];
        for iy in 0..ny {
            for jx in 0..nx {
                let x = -1.0 + 2.0 * jx as f64 / nx as f64;
                let y = -1.0 + 2.0 * iy as f64 / ny as f64;
                u[iy * nx + jx] = (PI * x).cos() * (2.0 * PI * y).sin();
            }
        }
        let mut hat = vec![C::new(0.0, 0.0); nx * ny];
        let mut scratch = hat.clone();
        sp.forward(&u, &mut hat);
        let s = sp.symbol(Derivative::Laplacian);
        let d: Vec<_> = hat.iter().zip(&s).map(|(a, b)| a * b).collect();
        let mut out = vec![0.0; nx * ny];
        sp.inverse(&d, &mut scratch, &mut out);
        for (o, v) in out.iter().zip(&u) {
            assert!((o + 5.0 * PI * PI * v).abs() < 1e-9);
        }
    }
}
