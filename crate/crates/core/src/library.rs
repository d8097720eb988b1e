//! Candidate-term vocabulary and the ordered library matrix.
//!
//! The position of a term in the library doubles as its complexity rank: terms
//! are listed by derivative order, and within one derivative block by the
//! power of `u`. The sparse regressor penalises the squared 1-based index.

use std::fmt;

use crate::error::{Error, Result};
use crate::field::{FieldSeries, GridSpec};
use crate::scalar::Real;

/// Spatial derivative factor of a candidate term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Derivative {
    /// No derivative factor (pure polynomial term).
    None,
    /// `∂ⁿu/∂xⁿ`, n in 1..=3.
    Dx(u8),
    /// `u_x + u_y`, the aggregate appearing in the 2D convective derivative.
    GradSum,
    /// `u_xx + u_yy`.
    Laplacian,
}

impl Derivative {
    pub fn order(self) -> u8 {
        match self {
            Derivative::None => 0,
            Derivative::Dx(n) => n,
            Derivative::GradSum => 1,
            Derivative::Laplacian => 2,
        }
    }

    pub fn is_2d(self) -> bool {
        matches!(self, Derivative::GradSum | Derivative::Laplacian)
    }
}

/// One candidate term `u^power · D(u)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TermSpec {
    pub power: u8,
    pub derivative: Derivative,
    pub name: String,
    /// 1-based position in its library.
    pub index: usize,
}

impl TermSpec {
    /// Pointwise value of the term given `u` and the matching derivative sample.
    /// The derivative sample is ignored for [`Derivative::None`].
    #[inline]
    pub fn evaluate<T: Real>(&self, u: T, derivative: T) -> T {
        let poly = match self.power {
            0 => T::one(),
            1 => u,
            2 => u * u,
            3 => u * u * u,
            p => u.powi(p as i32),
        };
        match self.derivative {
            Derivative::None => poly,
            _ => poly * derivative,
        }
    }

    /// `out += coef · term(u, derivative)` over whole arrays.
    pub fn accumulate<T: Real>(&self, coef: T, u: &[T], derivative: &[T], out: &mut [T]) {
        let it = out.iter_mut().zip(u.iter().zip(derivative));
        match (self.derivative, self.power) {
            (Derivative::None, _) => {
                for (o, (&uu, _)) in it {
                    *o = *o + coef * self.evaluate(uu, T::zero());
                }
            }
            (_, 0) => it.for_each(|(o, (_, &d))| *o = *o + coef * d),
            (_, 1) => it.for_each(|(o, (&uu, &d))| *o = *o + coef * uu * d),
            (_, 2) => it.for_each(|(o, (&uu, &d))| *o = *o + coef * uu * uu * d),
            _ => it.for_each(|(o, (&uu, &d))| *o = *o + coef * self.evaluate(uu, d)),
        }
    }

    /// The term is linear in `u` (`c·u` or `c·D(u)`), so a periodic solver can
    /// integrate it exactly in Fourier space.
    pub fn is_linear(&self) -> bool {
        match self.derivative {
            Derivative::None => self.power == 1,
            _ => self.power == 0,
        }
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

fn poly_prefix(p: u8) -> &'static str {
    ["", "u", "u^2", "u^3"][p as usize]
}

fn term_name(power: u8, d: Derivative) -> String {
    match d {
        Derivative::None => match power {
            0 => "1".to_string(),
            p => poly_prefix(p).to_string(),
        },
        Derivative::Dx(n) => format!("{}u_{}", poly_prefix(power), "x".repeat(n as usize)),
        Derivative::GradSum => match power {
            0 => "(u_x+u_y)".to_string(),
            1 => "(u.grad)u".to_string(),
            p => format!("{}(u_x+u_y)", poly_prefix(p)),
        },
        Derivative::Laplacian => match power {
            0 => "lap(u)".to_string(),
            p => format!("{}*lap(u)", poly_prefix(p)),
        },
    }
}

fn vocabulary(derivs: &[Derivative], max_power: u8) -> Vec<TermSpec> {
    let mut out = Vec::new();
    for &d in derivs {
        for p in 0..=max_power {
            out.push(TermSpec {
                power: p,
                derivative: d,
                name: term_name(p, d),
                index: out.len() + 1,
            });
        }
    }
    out
}

/// The 16-term 1D vocabulary `{1, u, u², u³} × {1, u_x, u_xx, u_xxx}`.
pub fn vocabulary_1d() -> Vec<TermSpec> {
    vocabulary(
        &[
            Derivative::None,
            Derivative::Dx(1),
            Derivative::Dx(2),
            Derivative::Dx(3),
        ],
        3,
    )
}

/// The 12-term 2D vocabulary `{1, u, u², u³} × {1, u_x+u_y, u_xx+u_yy}`.
pub fn vocabulary_2d() -> Vec<TermSpec> {
    vocabulary(
        &[Derivative::None, Derivative::GradSum, Derivative::Laplacian],
        3,
    )
}

/// Looks a term up by display name in the 1D and 2D vocabularies.
pub fn term_by_name(name: &str) -> Option<TermSpec> {
    vocabulary_1d()
        .into_iter()
        .chain(vocabulary_2d())
        .find(|t| t.name == name)
}

/// Spatial derivative fields of `u` needed by the 1D vocabulary.
#[derive(Debug, Clone)]
pub struct Derivatives1d<T> {
    pub ux: FieldSeries<T>,
    pub uxx: FieldSeries<T>,
    pub uxxx: FieldSeries<T>,
}

/// Spatial derivative fields of `u` needed by the 2D vocabulary.
#[derive(Debug, Clone)]
pub struct Derivatives2d<T> {
    pub ux: FieldSeries<T>,
    pub uy: FieldSeries<T>,
    pub uxx: FieldSeries<T>,
    pub uyy: FieldSeries<T>,
}

/// Ordered candidate library evaluated on a field: one column per term.
#[derive(Debug, Clone)]
pub struct Library<T> {
    pub terms: Vec<TermSpec>,
    /// Column-major storage: `columns[j][n]` is term `j` at flat sample `n`.
    pub columns: Vec<Vec<T>>,
    pub grid: GridSpec,
}

impl<T: Real> Library<T> {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[T]> {
        self.terms
            .iter()
            .position(|t| t.name == name)
            .map(|j| self.columns[j].as_slice())
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    /// Restricts every column to the interior after dropping `layers` samples
    /// at both ends of each axis.
    pub fn trim(&self, layers: usize) -> Result<Library<T>> {
        let mut columns = Vec::with_capacity(self.columns.len());
        let mut grid = self.grid;
        for col in &self.columns {
            let f = FieldSeries {
                grid: self.grid,
                values: col.clone(),
                provenance: crate::field::Provenance::Derived,
                meta: Default::default(),
            };
            let t = f.trim(layers)?;
            grid = t.grid;
            columns.push(t.values);
        }
        Ok(Library {
            terms: self.terms.clone(),
            columns,
            grid,
        })
    }
}

fn check_grid<T: Real>(u: &FieldSeries<T>, others: &[&FieldSeries<T>]) -> Result<()> {
    for f in others {
        if f.grid != u.grid {
            return Err(Error::Config(
                "derivative fields must share the grid of u".into(),
            ));
        }
    }
    Ok(())
}

fn assemble<T: Real>(
    u: &FieldSeries<T>,
    terms: Vec<TermSpec>,
    derivative: impl Fn(Derivative, usize) -> T,
) -> Library<T> {
    let columns = terms
        .iter()
        .map(|term| {
            u.values
                .iter()
                .enumerate()
                .map(|(n, &un)| term.evaluate(un, derivative(term.derivative, n)))
                .collect()
        })
        .collect();
    Library {
        terms,
        columns,
        grid: u.grid,
    }
}

/// Builds the 16-column 1D library from `u` and its first three x-derivatives.
pub fn build_library_1d<T: Real>(u: &FieldSeries<T>, d: &Derivatives1d<T>) -> Result<Library<T>> {
    if u.grid.is_2d() {
        return Err(Error::Config("build_library_1d needs a 1D grid".into()));
    }
    check_grid(u, &[&d.ux, &d.uxx, &d.uxxx])?;
    Ok(assemble(u, vocabulary_1d(), |deriv, n| match deriv {
        Derivative::Dx(1) => d.ux.values[n],
        Derivative::Dx(2) => d.uxx.values[n],
        Derivative::Dx(3) => d.uxxx.values[n],
        _ => T::one(),
    }))
}

/// Builds the 12-column 2D library of convective and Laplacian aggregates.
pub fn build_library_2d<T: Real>(u: &FieldSeries<T>, d: &Derivatives2d<T>) -> Result<Library<T>> {
    if !u.grid.is_2d() {
        return Err(Error::Config("build_library_2d needs a 2D grid".into()));
    }
    check_grid(u, &[&d.ux, &d.uy, &d.uxx, &d.uyy])?;
    Ok(assemble(u, vocabulary_2d(), |deriv, n| match deriv {
        Derivative::GradSum => d.ux.values[n] + d.uy.values[n],
        Derivative::Laplacian => d.uxx.values[n] + d.uyy.values[n],
        _ => T::one(),
    }))
}

/// Complexity `2·Σi²/M + 2·|selected|` of a set of 1-based library indices.
pub fn term_complexity_sum(selected: &[usize], m: usize) -> f64 {
    let sq: f64 = selected.iter().map(|&i| (i * i) as f64).sum();
    2.0 * sq / m as f64 + 2.0 * selected.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Boundary, Provenance};

    fn grid1() -> GridSpec {
        GridSpec::new_1d((-1.0, 1.0, 32), (0.0, 1.0, 10), Boundary::Dirichlet).unwrap()
    }

    fn derivs_from(
        g: GridSpec,
        f: impl Fn(f64, f64) -> [f64; 4],
    ) -> (FieldSeries<f64>, Derivatives1d<f64>) {
        let pick = |i: usize| FieldSeries::from_fn(g, Provenance::Clean, |t, _, x| f(t, x)[i]);
        (
            pick(0),
            Derivatives1d {
                ux: pick(1),
                uxx: pick(2),
                uxxx: pick(3),
            },
        )
    }

    #[test]
    fn vocabulary_1d_matches_listed_order() {
        let names: Vec<String> = vocabulary_1d().into_iter().map(|t| t.name).collect();
        assert_eq!(
            names,
            [
                "1", "u", "u^2", "u^3", "u_x", "uu_x", "u^2u_x", "u^3u_x", "u_xx", "uu_xx",
                "u^2u_xx", "u^3u_xx", "u_xxx", "uu_xxx", "u^2u_xxx", "u^3u_xxx"
            ]
        );
        for (i, t) in vocabulary_1d().iter().enumerate() {
            assert_eq!(t.index, i + 1);
        }
    }

    #[test]
    fn vocabulary_2d_contains_targets() {
        let v = vocabulary_2d();
        assert!(v.len() <= 12);
        let conv = v.iter().find(|t| t.name == "(u.grad)u").unwrap();
        let lap = v.iter().find(|t| t.name == "lap(u)").unwrap();
        assert_eq!((conv.power, conv.derivative), (1, Derivative::GradSum));
        assert_eq!((lap.power, lap.derivative), (0, Derivative::Laplacian));
    }

    #[test]
    fn ordering_is_non_decreasing_in_complexity() {
        for v in [vocabulary_1d(), vocabulary_2d()] {
            for w in v.windows(2) {
                let a = (w[0].derivative.order(), w[0].power);
                let b = (w[1].derivative.order(), w[1].power);
                assert!(a < b, "{a:?} !< {b:?}");
            }
        }
    }

    #[test]
    fn uu_x_column_is_elementwise_product() {
        let (u, d) = derivs_from(grid1(), |t, x| {
            let s = (3.0 * x + t).sin();
            [
                s,
                3.0 * (3.0 * x + t).cos(),
                -9.0 * s,
                -27.0 * (3.0 * x + t).cos(),
            ]
        });
        let lib = build_library_1d(&u, &d).unwrap();
        assert_eq!(lib.len(), 16);
        let col = lib.column("uu_x").unwrap();
        for n in 0..u.values.len() {
            assert_eq!(col[n], u.values[n] * d.ux.values[n]);
        }
        // u²u_x = u · (u u_x)
        let u2ux = lib.column("u^2u_x").unwrap();
        let uu = lib.column("u").unwrap();
        for n in 0..u.values.len() {
            assert!((u2ux[n] - uu[n] * col[n]).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_field_gives_ones_and_zeros() {
        let (u, d) = derivs_from(grid1(), |_, _| [1.0, 0.0, 0.0, 0.0]);
        let lib = build_library_1d(&u, &d).unwrap();
        for (t, col) in lib.terms.iter().zip(&lib.columns) {
            let expect = if t.derivative == Derivative::None {
                1.0
            } else {
                0.0
            };
            assert!(col.iter().all(|&v| v == expect), "{}", t.name);
        }
    }

    #[test]
    fn zero_field_2d_leaves_only_constant() {
        let g = GridSpec::new_2d(
            (-1.0, 1.0, 8),
            (-1.0, 1.0, 8),
            (0.0, 1.0, 8),
            Boundary::Periodic,
        )
        .unwrap();
        let z = FieldSeries::<f64>::zeros(g, Provenance::Clean);
        let d = Derivatives2d {
            ux: z.clone(),
            uy: z.clone(),
            uxx: z.clone(),
            uyy: z.clone(),
        };
        let lib = build_library_2d(&z, &d).unwrap();
        for (t, col) in lib.terms.iter().zip(&lib.columns) {
            let nonzero = col.iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, t.name == "1", "{}", t.name);
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let (u, mut d) = derivs_from(grid1(), |_, x| [x, 1.0, 0.0, 0.0]);
        d.uxx.grid.x.n = 33;
        assert!(build_library_1d(&u, &d).is_err());
    }

    #[test]
    fn complexity_examples() {
        assert!((term_complexity_sum(&[5, 9], 16) - 17.25).abs() < 1e-15);
        assert_eq!(term_complexity_sum(&[], 16), 0.0);
        assert!((term_complexity_sum(&[1], 16) - 2.125).abs() < 1e-15);
    }

    #[test]
    fn swapping_for_higher_index_increases_complexity() {
        for i in 1..16 {
            for j in i + 1..=16 {
                assert!(term_complexity_sum(&[3, j], 16) > term_complexity_sum(&[3, i], 16));
            }
        }
    }

    #[test]
    fn names_round_trip_through_lookup() {
        for t in vocabulary_1d().into_iter().chain(vocabulary_2d()) {
            let back = term_by_name(&t.name).unwrap();
            assert_eq!(back, t);
        }
    }
}
