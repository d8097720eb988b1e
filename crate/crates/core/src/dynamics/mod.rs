//! Forward solvers for the benchmark systems and for arbitrary library models.

mod integrate;
pub mod spectral;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Boundary, FieldSeries, GridSpec, Provenance};
use crate::library::{term_by_name, Derivative, TermSpec};
use crate::rng;
use crate::scalar::Real;

pub use integrate::{fd_derivative, stiffness, Layout, StiffTerm};
use integrate::{integrate, resolve_method, FineProblem, Scheme};
use spectral::{Spectral, C};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Spectral,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Spatial scheme; chosen from the boundary type when absent.
    pub method: Option<Method>,
    /// Minimum number of internal steps per output interval.
    pub substeps: usize,
    /// Fraction of the estimated RK4 stability limit used as step size.
    pub safety: f64,
    /// Spatial refinement of the computational grid relative to the output grid.
    pub refine: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: None,
            substeps: 1,
            safety: 0.5,
            refine: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::Config("solver substeps must be at least 1".into()));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::Config(format!(
                "solver safety factor {} outside (0, 1]",
                self.safety
            )));
        }
        if self.refine == 0 {
            return Err(Error::Config("solver refinement must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Burgers1d,
    Kdv,
    Burgers2d,
    Generic,
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::Burgers1d => "burgers1d",
            System::Kdv => "kdv",
            System::Burgers2d => "burgers2d",
            System::Generic => "generic",
        })
    }
}

impl FromStr for System {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "burgers1d" => Ok(System::Burgers1d),
            "kdv" => Ok(System::Kdv),
            "burgers2d" => Ok(System::Burgers2d),
            "generic" => Ok(System::Generic),
            other => Err(Error::Config(format!("unknown system `{other}`"))),
        }
    }
}

/// `u_t = Σ coefficients[j] · terms[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeModel {
    pub terms: Vec<TermSpec>,
    pub coefficients: Vec<f64>,
    pub system: System,
}

impl PdeModel {
    pub fn new(terms: Vec<TermSpec>, coefficients: Vec<f64>, system: System) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Config("a model needs at least one term".into()));
        }
        if terms.len() != coefficients.len() {
            return Err(Error::Config(format!(
                "{} terms but {} coefficients",
                terms.len(),
                coefficients.len()
            )));
        }
        Ok(PdeModel {
            terms,
            coefficients,
            system,
        })
    }

    pub fn from_names(pairs: &[(&str, f64)], system: System) -> Result<Self> {
        let terms = pairs
            .iter()
            .map(|(n, _)| {
                term_by_name(n).ok_or_else(|| Error::Config(format!("unsupported term `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms, pairs.iter().map(|p| p.1).collect(), system)
    }

    pub fn burgers_1d(nu: f64) -> Self {
        Self::from_names(&[("uu_x", -1.0), ("u_xx", nu)], System::Burgers1d).expect("known terms")
    }

    pub fn kdv(c1: f64, c2: f64) -> Self {
        Self::from_names(&[("uu_x", c1), ("u_xxx", c2)], System::Kdv).expect("known terms")
    }

    pub fn burgers_2d(c_adv: f64, c_diff: f64) -> Self {
        Self::from_names(
            &[("(u.grad)u", c_adv), ("lap(u)", c_diff)],
            System::Burgers2d,
        )
        .expect("known terms")
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.terms
            .iter()
            .position(|t| t.name == name)
            .map(|i| self.coefficients[i])
    }

    pub fn with_coefficients(&self, coefficients: &[f64]) -> Self {
        PdeModel {
            terms: self.terms.clone(),
            coefficients: coefficients.to_vec(),
            system: self.system,
        }
    }

    fn stiff_terms(&self) -> Vec<StiffTerm> {
        self.terms
            .iter()
            .zip(&self.coefficients)
            .map(|(t, &c)| StiffTerm {
                power: t.power,
                derivative: t.derivative,
                coef: c,
            })
            .collect()
    }
}

impl fmt::Display for PdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u_t =")?;
        for (i, (t, c)) in self.terms.iter().zip(&self.coefficients).enumerate() {
            let sign = if *c < 0.0 {
                "-"
            } else if i == 0 {
                ""
            } else {
                "+"
            };
            write!(f, " {sign} {:.6e}*{}", c.abs(), t.name)?;
        }
        Ok(())
    }
}

pub type IcFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Initial state, either as a function of `(y, x)` or as samples on the output grid.
#[derive(Clone)]
pub enum InitialCondition<T> {
    Function(IcFn),
    Samples(Vec<T>),
}

impl<T> fmt::Debug for InitialCondition<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialCondition::Function(_) => f.write_str("InitialCondition::Function"),
            InitialCondition::Samples(s) => {
                write!(f, "InitialCondition::Samples({} values)", s.len())
            }
        }
    }
}

impl<T> InitialCondition<T> {
    pub fn function(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        InitialCondition::Function(Arc::new(f))
    }
}

/// `-sin(πx)`.
pub fn burgers_1d_ic<T>() -> InitialCondition<T> {
    InitialCondition::function(|_, x| -(PI * x).sin())
}

/// `cos(πx)`.
pub fn kdv_ic<T>() -> InitialCondition<T> {
    InitialCondition::function(|_, x| (PI * x).cos())
}

/// `0.1·sech(20x² + 25y²)`.
pub fn burgers_2d_ic<T>() -> InitialCondition<T> {
    InitialCondition::function(|y, x| 0.1 / (20.0 * x * x + 25.0 * y * y).cosh())
}

/// Dirichlet boundary data.
#[derive(Debug, Clone)]
pub enum BoundaryValues<T> {
    Zero,
    /// One slice per output time on the output grid; only edge nodes are used.
    Slices(Vec<Vec<T>>),
}

fn fine_problem<T: Real>(
    grid: &GridSpec,
    cfg: &SolverConfig,
    ic: &InitialCondition<T>,
    bc: &BoundaryValues<T>,
) -> Result<FineProblem<T>> {
    grid.validate()?;
    cfg.validate()?;
    let lay = Layout::new(grid, cfg.refine);
    let (cnx, cny) = (grid.x.n, grid.ny());
    let u0 = match ic {
        InitialCondition::Function(f) => {
            let x0 = grid.x.min;
            let y0 = grid.y.map_or(0.0, |a| a.min);
            let mut v = Vec::with_capacity(lay.len());
            for iy in 0..lay.ny {
                for ix in 0..lay.nx {
                    v.push(T::of(f(y0 + iy as f64 * lay.dy, x0 + ix as f64 * lay.dx)));
                }
            }
            v
        }
        InitialCondition::Samples(s) => {
            if s.len() != grid.slice_len() {
                return Err(Error::Config(format!(
                    "initial condition has {} samples, grid slice has {}",
                    s.len(),
                    grid.slice_len()
                )));
            }
            lay.refine_slice(s, cnx, cny)
        }
    };
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "initial condition contains non-finite values".into(),
        ));
    }
    let bc = match (grid.boundary, bc) {
        (Boundary::Periodic, _) => None,
        (Boundary::Dirichlet, BoundaryValues::Zero) => {
            Some(vec![vec![T::zero(); lay.len()]; grid.t.n])
        }
        (Boundary::Dirichlet, BoundaryValues::Slices(s)) => {
            if s.len() != grid.t.n || s.iter().any(|v| v.len() != grid.slice_len()) {
                return Err(Error::Config(
                    "boundary data must hold one grid slice per output time".into(),
                ));
            }
            Some(s.iter().map(|v| lay.refine_slice(v, cnx, cny)).collect())
        }
    };
    Ok(FineProblem { lay, u0, bc })
}

fn require_1d(grid: &GridSpec, what: &str) -> Result<()> {
    if grid.is_2d() {
        return Err(Error::Config(format!("{what} needs a 1D grid")));
    }
    Ok(())
}

/// `u_t = -u u_x + ν u_xx` on a Dirichlet grid with `u = 0` at both ends and `u(0,x) = -sin(πx)`.
pub fn solve_burgers_1d<T: Real>(
    nu: f64,
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Result<FieldSeries<T>> {
    solve_burgers_1d_from(nu, grid, cfg, &burgers_1d_ic())
}

/// Dirichlet Burgers with a caller-provided initial condition and zero boundaries.
pub fn solve_burgers_1d_from<T: Real>(
    nu: f64,
    grid: &GridSpec,
    cfg: &SolverConfig,
    ic: &InitialCondition<T>,
) -> Result<FieldSeries<T>> {
    if !(nu > 0.0) {
        return Err(Error::Config(format!(
            "diffusion coefficient {nu} must be positive"
        )));
    }
    require_1d(grid, "Burgers 1D")?;
    if grid.boundary != Boundary::Dirichlet {
        return Err(Error::Config("Burgers 1D uses Dirichlet boundaries".into()));
    }
    if resolve_method(cfg, grid)? != Method::FiniteDifference {
        return Err(Error::Config(
            "Burgers 1D is solved by finite differences".into(),
        ));
    }
    let mut problem = fine_problem(grid, cfg, ic, &BoundaryValues::Zero)?;
    // Central differences oscillate once the cell Péclet number amp·h/ν exceeds 2.
    let amp = problem
        .u0
        .iter()
        .map(|v| v.as_f64().abs())
        .fold(0.0, f64::max);
    let peclet = amp * problem.lay.dx / nu;
    let cfg = if peclet > 2.0 {
        let refine = (cfg.refine as f64 * peclet / 2.0).ceil() as usize;
        log::debug!("refining the Burgers grid {refine}x to keep the cell Péclet number below 2");
        let cfg = SolverConfig {
            refine,
            ..cfg.clone()
        };
        problem = fine_problem(grid, &cfg, ic, &BoundaryValues::Zero)?;
        cfg
    } else {
        cfg.clone()
    };
    let n = problem.lay.nx;
    let h = problem.lay.dx;
    let adv = T::of(0.5 / h);
    let diff = T::of(nu / (h * h));
    let two = T::of(2.0);
    let rhs = move |u: &[T], out: &mut [T]| {
        for i in 1..n - 1 {
            out[i] =
                -u[i] * (u[i + 1] - u[i - 1]) * adv + (u[i + 1] - two * u[i] + u[i - 1]) * diff;
        }
    };
    let terms = PdeModel::burgers_1d(nu).stiff_terms();
    integrate(
        grid,
        &cfg,
        problem,
        &terms,
        Scheme::Fd { rhs: Box::new(rhs) },
    )
}

fn periodic_spectral<T: Real>(grid: &GridSpec, lay: &Layout) -> Spectral<T> {
    let lx = grid.x.max - grid.x.min;
    let ly = grid.y.map_or(0.0, |a| a.max - a.min);
    Spectral::new(lay.nx, lx, lay.ny, ly)
}

/// `u_t = c1·u u_x + c2·u_xxx` on a periodic grid from `u(0,x) = cos(πx)`.
pub fn solve_kdv<T: Real>(
    c1: f64,
    c2: f64,
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Result<FieldSeries<T>> {
    solve_kdv_from(c1, c2, grid, cfg, &kdv_ic())
}

pub fn solve_kdv_from<T: Real>(
    c1: f64,
    c2: f64,
    grid: &GridSpec,
    cfg: &SolverConfig,
    ic: &InitialCondition<T>,
) -> Result<FieldSeries<T>> {
    if c2 == 0.0 {
        return Err(Error::Config(
            "KdV dispersion coefficient must be non-zero".into(),
        ));
    }
    require_1d(grid, "KdV")?;
    if grid.boundary != Boundary::Periodic {
        return Err(Error::Config("KdV uses periodic boundaries".into()));
    }
    if resolve_method(cfg, grid)? != Method::Spectral {
        return Err(Error::Config("KdV is solved pseudo-spectrally".into()));
    }
    let problem = fine_problem(grid, cfg, ic, &BoundaryValues::Zero)?;
    let sp = periodic_spectral::<T>(grid, &problem.lay);
    let n = sp.len();
    let cc2 = T::of(c2);
    let linear: Vec<C<T>> = sp
        .kx
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            if n % 2 == 0 && j == n / 2 {
                C::new(T::zero(), T::zero())
            } else {
                // (ik)^3 = -i k^3
                C::new(T::zero(), -cc2 * k * k * k)
            }
        })
        .collect();
    let ik: Vec<C<T>> = sp.symbol(Derivative::Dx(1));
    let cc1 = T::of(c1);
    let mut u = vec![T::zero(); n];
    let mut ux = vec![T::zero(); n];
    let mut buf = vec![C::new(T::zero(), T::zero()); n];
    let mut scratch = buf.clone();
    let nonlinear = move |sp: &Spectral<T>, uh: &[C<T>], out: &mut [C<T>]| {
        sp.inverse(uh, &mut scratch, &mut u);
        for i in 0..n {
            buf[i] = uh[i] * ik[i];
        }
        sp.inverse(&buf, &mut scratch, &mut ux);
        for i in 0..n {
            ux[i] = cc1 * u[i] * ux[i];
        }
        sp.forward(&ux, out);
        sp.dealias(out);
    };
    let terms = PdeModel::kdv(c1, c2).stiff_terms();
    integrate(
        grid,
        cfg,
        problem,
        &terms,
        Scheme::Spectral {
            sp,
            linear,
            nonlinear: Box::new(nonlinear),
        },
    )
}

/// `u_t = c_adv·u(u_x + u_y) + c_diff·(u_xx + u_yy)` on a periodic 2D grid from
/// `u(0,x,y) = 0.1·sech(20x² + 25y²)`.
pub fn solve_burgers_2d<T: Real>(
    c_adv: f64,
    c_diff: f64,
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Result<FieldSeries<T>> {
    solve_burgers_2d_from(c_adv, c_diff, grid, cfg, &burgers_2d_ic())
}

pub fn solve_burgers_2d_from<T: Real>(
    c_adv: f64,
    c_diff: f64,
    grid: &GridSpec,
    cfg: &SolverConfig,
    ic: &InitialCondition<T>,
) -> Result<FieldSeries<T>> {
    if !grid.is_2d() || grid.boundary != Boundary::Periodic {
        return Err(Error::Config("2D Burgers needs a periodic 2D grid".into()));
    }
    if resolve_method(cfg, grid)? != Method::Spectral {
        return Err(Error::Config(
            "2D Burgers is solved pseudo-spectrally".into(),
        ));
    }
    let problem = fine_problem(grid, cfg, ic, &BoundaryValues::Zero)?;
    let sp = periodic_spectral::<T>(grid, &problem.lay);
    let (nx, ny) = (sp.nx, sp.ny);
    let n = nx * ny;
    let cd = T::of(c_diff);
    let mut linear = Vec::with_capacity(n);
    let mut ikx = Vec::with_capacity(n);
    let mut iky = Vec::with_capacity(n);
    let zero = C::new(T::zero(), T::zero());
    for iy in 0..ny {
        for jx in 0..nx {
            let (kx, ky) = (sp.kx[jx], sp.ky[iy]);
            linear.push(C::new(-cd * (kx * kx + ky * ky), T::zero()));
            ikx.push(if nx % 2 == 0 && jx == nx / 2 {
                zero
            } else {
                C::new(T::zero(), kx)
            });
            iky.push(if ny % 2 == 0 && iy == ny / 2 {
                zero
            } else {
                C::new(T::zero(), ky)
            });
        }
    }
    let ca = T::of(c_adv);
    let mut u = vec![T::zero(); n];
    let mut ux = vec![T::zero(); n];
    let mut uy = vec![T::zero(); n];
    let mut buf = vec![zero; n];
    let mut scratch = buf.clone();
    let nonlinear = move |sp: &Spectral<T>, uh: &[C<T>], out: &mut [C<T>]| {
        sp.inverse(uh, &mut scratch, &mut u);
        for i in 0..n {
            buf[i] = uh[i] * ikx[i];
        }
        sp.inverse(&buf, &mut scratch, &mut ux);
        for i in 0..n {
            buf[i] = uh[i] * iky[i];
        }
        sp.inverse(&buf, &mut scratch, &mut uy);
        for i in 0..n {
            ux[i] = ca * u[i] * (ux[i] + uy[i]);
        }
        sp.forward(&ux, out);
        sp.dealias(out);
    };
    let terms = PdeModel::burgers_2d(c_adv, c_diff).stiff_terms();
    integrate(
        grid,
        cfg,
        problem,
        &terms,
        Scheme::Spectral {
            sp,
            linear,
            nonlinear: Box::new(nonlinear),
        },
    )
}

fn check_terms(model: &PdeModel, grid: &GridSpec) -> Result<()> {
    for t in &model.terms {
        if t.derivative.is_2d() && !grid.is_2d() {
            return Err(Error::Config(format!("term `{}` needs a 2D grid", t.name)));
        }
        if grid.is_2d() && matches!(t.derivative, Derivative::Dx(n) if n > 2) {
            return Err(Error::Config(format!(
                "term `{}` unsupported on 2D grids",
                t.name
            )));
        }
        if !model.coefficients.iter().all(|c| c.is_finite()) {
            return Err(Error::Config("model coefficients must be finite".into()));
        }
    }
    Ok(())
}

/// Method-of-lines integration of an arbitrary library model; each term is
/// evaluated through [`TermSpec::evaluate`].
pub fn solve_generic<T: Real>(
    model: &PdeModel,
    grid: &GridSpec,
    ic: &InitialCondition<T>,
    bc: &BoundaryValues<T>,
    cfg: &SolverConfig,
) -> Result<FieldSeries<T>> {
    check_terms(model, grid)?;
    let method = resolve_method(cfg, grid)?;
    let problem = fine_problem(grid, cfg, ic, bc)?;
    let terms = model.stiff_terms();
    let n = problem.lay.len();
    let mut derivs: Vec<Derivative> = model.terms.iter().map(|t| t.derivative).collect();
    derivs.sort();
    derivs.dedup();
    let slot = |d: Derivative| derivs.iter().position(|&e| e == d).unwrap();
    let coefs: Vec<(TermSpec, T, usize)> = model
        .terms
        .iter()
        .zip(&model.coefficients)
        .map(|(t, &c)| (t.clone(), T::of(c), slot(t.derivative)))
        .collect();

    let result = match method {
        Method::FiniteDifference => {
            let lay = problem.lay.clone();
            let mut dfields = vec![vec![T::zero(); n]; derivs.len()];
            let mut scratch = vec![T::zero(); n];
            let derivs = derivs.clone();
            let rhs = move |u: &[T], out: &mut [T]| {
                for (d, f) in derivs.iter().zip(dfields.iter_mut()) {
                    fd_derivative(u, &lay, *d, f, &mut scratch);
                }
                for o in out.iter_mut() {
                    *o = T::zero();
                }
                for (term, c, s) in &coefs {
                    term.accumulate(*c, u, &dfields[*s], out);
                }
            };
            integrate(
                grid,
                cfg,
                problem,
                &terms,
                Scheme::Fd { rhs: Box::new(rhs) },
            )?
        }
        Method::Spectral => {
            let sp = periodic_spectral::<T>(grid, &problem.lay);
            let zero = C::new(T::zero(), T::zero());
            let mut linear = vec![zero; n];
            let mut explicit = Vec::new();
            for (term, c, s) in &coefs {
                if term.is_linear() {
                    for (l, v) in linear.iter_mut().zip(sp.symbol(term.derivative)) {
                        *l = *l + v * *c;
                    }
                } else {
                    explicit.push((term.clone(), *c, *s));
                }
            }
            let symbols: Vec<Vec<C<T>>> = derivs.iter().map(|&d| sp.symbol(d)).collect();
            let mut dfields = vec![vec![T::zero(); n]; derivs.len()];
            let mut u = vec![T::zero(); n];
            let mut acc = vec![T::zero(); n];
            let mut buf = vec![zero; n];
            let mut scratch = buf.clone();
            let nonlinear = move |sp: &Spectral<T>, uh: &[C<T>], out: &mut [C<T>]| {
                sp.inverse(uh, &mut scratch, &mut u);
                for (sym, f) in symbols.iter().zip(dfields.iter_mut()) {
                    for i in 0..n {
                        buf[i] = uh[i] * sym[i];
                    }
                    sp.inverse(&buf, &mut scratch, f);
                }
                for a in acc.iter_mut() {
                    *a = T::zero();
                }
                for (term, c, s) in &explicit {
                    term.accumulate(*c, &u, &dfields[*s], &mut acc);
                }
                sp.forward(&acc, out);
                sp.dealias(out);
            };
            integrate(
                grid,
                cfg,
                problem,
                &terms,
                Scheme::Spectral {
                    sp,
                    linear,
                    nonlinear: Box::new(nonlinear),
                },
            )?
        }
    };
    Ok(result.with_meta("model", model))
}

/// Dispatches to the dedicated solver of a benchmark system.
pub fn simulate<T: Real>(
    system: System,
    coefficients: &[f64],
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Result<FieldSeries<T>> {
    let need = |n: usize| -> Result<()> {
        if coefficients.len() != n {
            return Err(Error::Config(format!(
                "system {system} takes {n} coefficients, got {}",
                coefficients.len()
            )));
        }
        Ok(())
    };
    let field = match system {
        System::Burgers1d => {
            need(1)?;
            solve_burgers_1d(coefficients[0], grid, cfg)?
        }
        System::Kdv => {
            need(2)?;
            solve_kdv(coefficients[0], coefficients[1], grid, cfg)?
        }
        System::Burgers2d => {
            need(2)?;
            solve_burgers_2d(coefficients[0], coefficients[1], grid, cfg)?
        }
        System::Generic => {
            return Err(Error::Config(
                "generic models are simulated through solve_generic".into(),
            ))
        }
    };
    Ok(field.with_meta("system", system))
}

/// `u + level·std(u)·g` with `g` i.i.d. standard normal from `seed`.
pub fn add_noise<T: Real>(field: &FieldSeries<T>, level: f64, seed: u64) -> Result<FieldSeries<T>> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::Config(format!(
            "noise level {level} must be non-negative"
        )));
    }
    if level == 0.0 {
        return Ok(field.clone());
    }
    let scale = level * field.std().as_f64();
    let mut r = rng::seeded(seed);
    let values = field
        .values
        .iter()
        .map(|&v| {
            let g: f64 = StandardNormal.sample(&mut r);
            v + T::of(scale * g)
        })
        .collect();
    let mut out = FieldSeries::new(field.grid, values, Provenance::Noisy)?;
    out.meta = field.meta.clone();
    Ok(out
        .with_meta("noise_level", level)
        .with_meta("noise_seed", seed))
}
