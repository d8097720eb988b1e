//! Time integration shared by the dedicated and generic solvers.
//!
//! Finite-difference problems use classical RK4 on all terms. Periodic
//! problems use the integrating-factor (Lawson) form of RK4: terms linear in
//! `u` with constant coefficients are integrated exactly in Fourier space and
//! the remaining terms go through RK4.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::field::{Boundary, FieldSeries, GridSpec, Provenance};
use crate::library::Derivative;
use crate::preprocess::fd_line;
use crate::scalar::Real;

use super::spectral::{Spectral, C};
use super::{Method, SolverConfig};

/// RK4 is stable for `h·λ` up to about 2.8 on both the real and imaginary axis.
const RK4_RADIUS: f64 = 2.5;
/// Growth factor relative to the initial amplitude regarded as blow-up.
const BLOWUP_FACTOR: f64 = 1e3;

/// Fine computational grid: `refine` times the resolution of the output grid.
#[derive(Debug, Clone)]
pub struct Layout {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub periodic: bool,
    pub refine: usize,
    /// Indices of Dirichlet boundary nodes (empty when periodic).
    pub boundary: Vec<usize>,
}

impl Layout {
    pub fn new(grid: &GridSpec, refine: usize) -> Self {
        let periodic = grid.boundary == Boundary::Periodic;
        let fine = |n: usize| {
            if periodic {
                n * refine
            } else {
                (n - 1) * refine + 1
            }
        };
        let nx = fine(grid.x.n);
        let ny = if grid.is_2d() { fine(grid.ny()) } else { 1 };
        let dx = grid.dx() / refine as f64;
        let dy = grid.dy().map_or(0.0, |d| d / refine as f64);
        let mut boundary = Vec::new();
        if !periodic {
            for iy in 0..ny {
                for ix in 0..nx {
                    let edge_x = ix == 0 || ix == nx - 1;
                    let edge_y = ny > 1 && (iy == 0 || iy == ny - 1);
                    if edge_x || edge_y {
                        boundary.push(iy * nx + ix);
                    }
                }
            }
        }
        Layout {
            nx,
            ny,
            dx,
            dy,
            periodic,
            refine,
            boundary,
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    /// Interpolates a slice given on the output grid onto the fine grid
    /// (linear in each axis).
    pub fn refine_slice<T: Real>(&self, coarse: &[T], cnx: usize, cny: usize) -> Vec<T> {
        if self.refine == 1 {
            return coarse.to_vec();
        }
        let r = self.refine;
        let locate = |i: usize, n: usize| -> (usize, usize, T) {
            let i0 = i / r;
            let w = T::of((i % r) as f64 / r as f64);
            let i1 = if self.periodic {
                (i0 + 1) % n
            } else {
                (i0 + 1).min(n - 1)
            };
            (i0.min(n - 1), i1, w)
        };
        let mut out = vec![T::zero(); self.len()];
        for iy in 0..self.ny {
            let (y0, y1, wy) = if cny > 1 {
                locate(iy, cny)
            } else {
                (0, 0, T::zero())
            };
            for ix in 0..self.nx {
                let (x0, x1, wx) = locate(ix, cnx);
                let at = |yy: usize, xx: usize| coarse[yy * cnx + xx];
                let row0 = at(y0, x0) * (T::one() - wx) + at(y0, x1) * wx;
                let row1 = at(y1, x0) * (T::one() - wx) + at(y1, x1) * wx;
                out[iy * self.nx + ix] = row0 * (T::one() - wy) + row1 * wy;
            }
        }
        out
    }

    /// Samples the fine state at the output grid nodes.
    pub fn coarsen<T: Real>(&self, fine: &[T], cnx: usize, cny: usize, out: &mut Vec<T>) {
        let r = self.refine;
        for iy in 0..cny {
            for ix in 0..cnx {
                out.push(fine[iy * r * self.nx + ix * r]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis2 {
    X,
    Y,
}

/// Finite-difference derivative along one axis of the fine grid.
pub fn fd_axis<T: Real>(u: &[T], lay: &Layout, axis: Axis2, order: u8, out: &mut [T]) {
    match axis {
        Axis2::X => {
            let h = T::of(lay.dx);
            for (row, orow) in u.chunks_exact(lay.nx).zip(out.chunks_exact_mut(lay.nx)) {
                fd_line(row, h, order, lay.periodic, orow);
            }
        }
        Axis2::Y => {
            let h = T::of(lay.dy);
            let mut line = vec![T::zero(); lay.ny];
            let mut dline = vec![T::zero(); lay.ny];
            for ix in 0..lay.nx {
                for iy in 0..lay.ny {
                    line[iy] = u[iy * lay.nx + ix];
                }
                fd_line(&line, h, order, lay.periodic, &mut dline);
                for iy in 0..lay.ny {
                    out[iy * lay.nx + ix] = dline[iy];
                }
            }
        }
    }
}

/// Finite-difference evaluation of a derivative factor.
pub fn fd_derivative<T: Real>(
    u: &[T],
    lay: &Layout,
    d: Derivative,
    out: &mut [T],
    scratch: &mut [T],
) {
    match d {
        Derivative::None => out.copy_from_slice(u),
        Derivative::Dx(n) => fd_axis(u, lay, Axis2::X, n, out),
        Derivative::GradSum | Derivative::Laplacian => {
            let order = d.order();
            fd_axis(u, lay, Axis2::X, order, out);
            fd_axis(u, lay, Axis2::Y, order, scratch);
            for (o, s) in out.iter_mut().zip(scratch.iter()) {
                *o = *o + *s;
            }
        }
    }
}

/// One term `coef · u^power · D(u)` as seen by the step-size estimate.
#[derive(Debug, Clone, Copy)]
pub struct StiffTerm {
    pub power: u8,
    pub derivative: Derivative,
    pub coef: f64,
}

fn is_linear(t: &StiffTerm) -> bool {
    match t.derivative {
        Derivative::None => t.power == 1,
        _ => t.power == 0,
    }
}

fn symbol_bound(d: Derivative, lay: &Layout, spectral: bool) -> f64 {
    let (dx, dy) = (lay.dx, if lay.ny > 1 { lay.dy } else { f64::INFINITY });
    if spectral {
        let (kx, ky) = (std::f64::consts::PI / dx, std::f64::consts::PI / dy);
        match d {
            Derivative::None => 1.0,
            Derivative::Dx(n) => kx.powi(n as i32),
            Derivative::GradSum => kx + ky,
            Derivative::Laplacian => kx * kx + ky * ky,
        }
    } else {
        let fd = |n: u8, h: f64| match n {
            1 => 1.0 / h,
            2 => 4.0 / (h * h),
            _ => 2.6 / (h * h * h),
        };
        let fy = |n: u8| if dy.is_finite() { fd(n, dy) } else { 0.0 };
        match d {
            Derivative::None => 1.0,
            Derivative::Dx(n) => fd(n, dx),
            Derivative::GradSum => fd(1, dx) + fy(1),
            Derivative::Laplacian => fd(2, dx) + fy(2),
        }
    }
}

/// Upper estimate of the spectral radius of the explicit part of the RHS Jacobian.
///
/// With `exact_linear`, constant-coefficient linear terms are excluded because
/// the integrating factor handles them.
pub fn stiffness<T: Real>(terms: &[StiffTerm], u: &[T], lay: &Layout, spectral: bool) -> f64 {
    let maxu = u.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
    // Margin for amplitude growth within one output interval.
    let m = 2.0 * maxu;
    let mut out = vec![T::zero(); u.len()];
    let mut scratch = vec![T::zero(); u.len()];
    let mut lambda = 0.0;
    for t in terms {
        if t.coef == 0.0 || (spectral && is_linear(t)) {
            continue;
        }
        let p = t.power as i32;
        let c = t.coef.abs();
        if t.derivative == Derivative::None {
            if p > 0 {
                lambda += c * p as f64 * m.powi(p - 1);
            }
            continue;
        }
        let sigma = symbol_bound(t.derivative, lay, spectral);
        let mut part = m.powi(p) * sigma;
        if p > 0 {
            fd_derivative(u, lay, t.derivative, &mut out, &mut scratch);
            let dmax = out.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
            part += p as f64 * m.powi(p - 1) * dmax;
        }
        lambda += c * part;
    }
    lambda
}

fn substeps(cfg: &SolverConfig, dt_out: f64, lambda: f64) -> (usize, f64) {
    let limit = if lambda > 0.0 {
        cfg.safety * RK4_RADIUS / lambda
    } else {
        f64::INFINITY
    };
    let n = if limit.is_finite() {
        ((dt_out / limit).ceil() as usize).max(cfg.substeps)
    } else {
        cfg.substeps
    };
    (n.max(1), limit)
}

/// Right-hand side for finite-difference integration: writes `du/dt` at every node.
pub type FdRhs<'a, T> = dyn FnMut(&[T], &mut [T]) + 'a;
/// Explicit (nonlinear) part in Fourier space: `(spectral, û, out N̂)`.
pub type SpectralRhs<'a, T> = dyn FnMut(&Spectral<T>, &[C<T>], &mut [C<T>]) + 'a;

pub enum Scheme<'a, T: Real> {
    Fd {
        rhs: Box<FdRhs<'a, T>>,
    },
    Spectral {
        sp: Spectral<T>,
        linear: Vec<C<T>>,
        nonlinear: Box<SpectralRhs<'a, T>>,
    },
}

/// Problem data on the fine grid.
pub struct FineProblem<T> {
    pub lay: Layout,
    pub u0: Vec<T>,
    /// Dirichlet boundary values at each output time (full fine slices).
    pub bc: Option<Vec<Vec<T>>>,
}

pub fn resolve_method(cfg: &SolverConfig, grid: &GridSpec) -> Result<Method> {
    match (cfg.method, grid.boundary) {
        (Some(Method::Spectral), Boundary::Dirichlet) => Err(Error::Config(
            "the spectral method needs a periodic grid".into(),
        )),
        (Some(m), _) => Ok(m),
        (None, Boundary::Periodic) => Ok(Method::Spectral),
        (None, Boundary::Dirichlet) => Ok(Method::FiniteDifference),
    }
}

/// Integrates from the first to the last output time and returns the sampled field.
pub fn integrate<T: Real>(
    grid: &GridSpec,
    cfg: &SolverConfig,
    problem: FineProblem<T>,
    terms: &[StiffTerm],
    mut scheme: Scheme<'_, T>,
) -> Result<FieldSeries<T>> {
    let lay = problem.lay;
    let (cnx, cny) = (grid.x.n, grid.ny());
    let times = grid.t_coords();
    let spectral = matches!(scheme, Scheme::Spectral { .. });
    let mut u = problem.u0;
    if let Some(bc) = &problem.bc {
        for &b in &lay.boundary {
            u[b] = bc[0][b];
        }
    }
    let amp0 = u.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
    let bound = BLOWUP_FACTOR * amp0.max(1.0);
    let mut values = Vec::with_capacity(grid.len());
    lay.coarsen(&u, cnx, cny, &mut values);

    let n = lay.len();
    let mut st = Work::new(n);
    for k in 0..times.len() - 1 {
        let dt_out = times[k + 1] - times[k];
        let lambda = stiffness(terms, &u, &lay, spectral);
        let (steps, limit) = substeps(cfg, dt_out, lambda);
        let h = dt_out / steps as f64;
        match &mut scheme {
            Scheme::Fd { rhs } => {
                let slopes: Vec<(usize, T)> = match &problem.bc {
                    Some(bc) => lay
                        .boundary
                        .iter()
                        .map(|&b| (b, (bc[k + 1][b] - bc[k][b]) / T::of(dt_out)))
                        .collect(),
                    None => Vec::new(),
                };
                fd_rk4(&mut u, T::of(h), steps, &slopes, rhs.as_mut(), &mut st);
                if let Some(bc) = &problem.bc {
                    for &b in &lay.boundary {
                        u[b] = bc[k + 1][b];
                    }
                }
            }
            Scheme::Spectral {
                sp,
                linear,
                nonlinear,
            } => lawson_rk4(
                sp,
                linear,
                &mut u,
                T::of(h),
                steps,
                nonlinear.as_mut(),
                &mut st,
            ),
        }
        let ok = u.iter().all(|v| v.is_finite() && v.as_f64().abs() <= bound);
        if !ok {
            return Err(Error::Unstable {
                time: times[k + 1],
                detail: format!(
                    "solution left the admissible range |u| <= {bound:.3e}; step {h:.3e} \
                     against the stability limit {limit:.3e} (safety {}, stiffness estimate {lambda:.3e})",
                    cfg.safety
                ),
            });
        }
        lay.coarsen(&u, cnx, cny, &mut values);
    }
    FieldSeries::new(*grid, values, Provenance::Simulated)
}

struct Work<T: Real> {
    k: [Vec<T>; 4],
    tmp: Vec<T>,
    ck: [Vec<C<T>>; 4],
    chat: Vec<C<T>>,
    ctmp: Vec<C<T>>,
}

impl<T: Real> Work<T> {
    fn new(n: usize) -> Self {
        let z = vec![T::zero(); n];
        let cz = vec![Complex::new(T::zero(), T::zero()); n];
        Work {
            k: [z.clone(), z.clone(), z.clone(), z.clone()],
            tmp: z,
            ck: [cz.clone(), cz.clone(), cz.clone(), cz.clone()],
            chat: cz.clone(),
            ctmp: cz,
        }
    }
}

fn fd_rk4<T: Real>(
    u: &mut [T],
    h: T,
    steps: usize,
    slopes: &[(usize, T)],
    rhs: &mut FdRhs<'_, T>,
    w: &mut Work<T>,
) {
    let half = h * T::of(0.5);
    let sixth = h / T::of(6.0);
    let two = T::of(2.0);
    let mut eval = |x: &[T], out: &mut [T]| {
        rhs(x, out);
        for &(b, s) in slopes {
            out[b] = s;
        }
    };
    for _ in 0..steps {
        let [k1, k2, k3, k4] = &mut w.k;
        eval(u, k1);
        for i in 0..u.len() {
            w.tmp[i] = u[i] + half * k1[i];
        }
        eval(&w.tmp, k2);
        for i in 0..u.len() {
            w.tmp[i] = u[i] + half * k2[i];
        }
        eval(&w.tmp, k3);
        for i in 0..u.len() {
            w.tmp[i] = u[i] + h * k3[i];
        }
        eval(&w.tmp, k4);
        for i in 0..u.len() {
            u[i] = u[i] + sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]);
        }
    }
}

fn lawson_rk4<T: Real>(
    sp: &Spectral<T>,
    linear: &[C<T>],
    u: &mut [T],
    h: T,
    steps: usize,
    nonlinear: &mut SpectralRhs<'_, T>,
    w: &mut Work<T>,
) {
    let half = h * T::of(0.5);
    let sixth = h / T::of(6.0);
    let two = T::of(2.0);
    let e_full: Vec<C<T>> = linear.iter().map(|l| (*l * h).exp()).collect();
    let e_half: Vec<C<T>> = linear.iter().map(|l| (*l * half).exp()).collect();
    let uh = &mut w.chat;
    sp.forward(u, uh);
    let n = uh.len();
    for _ in 0..steps {
        let [k1, k2, k3, k4] = &mut w.ck;
        let tmp = &mut w.ctmp;
        nonlinear(sp, uh, k1);
        for i in 0..n {
            tmp[i] = e_half[i] * (uh[i] + k1[i] * half);
        }
        nonlinear(sp, tmp, k2);
        for i in 0..n {
            tmp[i] = e_half[i] * uh[i] + k2[i] * half;
        }
        nonlinear(sp, tmp, k3);
        for i in 0..n {
            tmp[i] = e_full[i] * uh[i] + e_half[i] * k3[i] * h;
        }
        nonlinear(sp, tmp, k4);
        for i in 0..n {
            uh[i] = e_full[i] * uh[i]
                + (e_full[i] * k1[i] + e_half[i] * (k2[i] + k3[i]) * two + k4[i]) * sixth;
        }
    }
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); n];
    sp.inverse(uh, &mut scratch, u);
}
