//! Numerical differentiation of sampled fields along one axis.

use crate::error::{Error, Result};
use crate::field::{Boundary, FieldSeries, Provenance};
use crate::linalg::{solve_general, SquareMatrix};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffAxis {
    T,
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffMethod {
    /// Second-order central differences, one-sided second-order stencils at the edges.
    FiniteDifference,
    /// Derivative of a local least-squares polynomial of degree `order + 2`
    /// fitted over `2·half_width + 1` samples.
    Polynomial { half_width: usize },
}

impl DiffMethod {
    pub fn polynomial_default(order: u8) -> Self {
        DiffMethod::Polynomial {
            half_width: order as usize + 3,
        }
    }
}

/// Derivative of order `order` (1..=3) of a single sampled line.
///
/// With `periodic`, the stencil wraps around; otherwise the edges use
/// one-sided stencils of the same (second) order of accuracy.
pub fn fd_line<T: Real>(u: &[T], h: T, order: u8, periodic: bool, out: &mut [T]) {
    let n = u.len();
    debug_assert_eq!(out.len(), n);
    let half = T::of(0.5);
    let two = T::of(2.0);
    match order {
        1 => {
            let c = half / h;
            for i in 1..n - 1 {
                out[i] = (u[i + 1] - u[i - 1]) * c;
            }
            if periodic {
                out[0] = (u[1] - u[n - 1]) * c;
                out[n - 1] = (u[0] - u[n - 2]) * c;
            } else {
                out[0] = (T::of(-3.0) * u[0] + T::of(4.0) * u[1] - u[2]) * c;
                out[n - 1] = (T::of(3.0) * u[n - 1] - T::of(4.0) * u[n - 2] + u[n - 3]) * c;
            }
        }
        2 => {
            let c = T::one() / (h * h);
            for i in 1..n - 1 {
                out[i] = (u[i + 1] - two * u[i] + u[i - 1]) * c;
            }
            if periodic {
                out[0] = (u[1] - two * u[0] + u[n - 1]) * c;
                out[n - 1] = (u[0] - two * u[n - 1] + u[n - 2]) * c;
            } else {
                out[0] = (two * u[0] - T::of(5.0) * u[1] + T::of(4.0) * u[2] - u[3]) * c;
                out[n - 1] =
                    (two * u[n - 1] - T::of(5.0) * u[n - 2] + T::of(4.0) * u[n - 3] - u[n - 4]) * c;
            }
        }
        3 => {
            let c = half / (h * h * h);
            let at = |i: isize| -> T {
                let m = n as isize;
                u[(((i % m) + m) % m) as usize]
            };
            for i in 0..n {
                let ii = i as isize;
                let interior = i >= 2 && i + 2 < n;
                out[i] = if interior || periodic {
                    (-at(ii - 2) + two * at(ii - 1) - two * at(ii + 1) + at(ii + 2)) * c
                } else if i < 2 {
                    (T::of(-5.0) * u[i] + T::of(18.0) * u[i + 1] - T::of(24.0) * u[i + 2]
                        + T::of(14.0) * u[i + 3]
                        - T::of(3.0) * u[i + 4])
                        * c
                } else {
                    (T::of(5.0) * u[i] - T::of(18.0) * u[i - 1] + T::of(24.0) * u[i - 2]
                        - T::of(14.0) * u[i - 3]
                        + T::of(3.0) * u[i - 4])
                        * c
                };
            }
        }
        _ => unreachable!("order validated by caller"),
    }
}

/// Least-squares polynomial derivative weights for every evaluation position.
///
/// `weights[p]` holds the stencil for sample `p` of a line of length `n`,
/// together with the index of the first sample it touches.
struct PolyStencils<T> {
    interior: Vec<T>,
    edges_left: Vec<Vec<T>>,
    edges_right: Vec<Vec<T>>,
    half_width: usize,
}

pub(crate) fn poly_weights(offsets: &[f64], degree: usize, order: u8) -> Option<Vec<f64>> {
    // Fit p(s) = Σ c_k s^k; derivative at s = 0 is order!·c_order.
    let k = degree + 1;
    let mut vtv = SquareMatrix::<f64>::zeros(k);
    for a in 0..k {
        for b in 0..k {
            vtv[(a, b)] = offsets.iter().map(|s| s.powi((a + b) as i32)).sum();
        }
    }
    let mut e = vec![0.0; k];
    e[order as usize] = 1.0;
    // Row `order` of (VᵀV)⁻¹Vᵀ via one solve with the symmetric system.
    let r = solve_general(&vtv, &e)?;
    let fact: f64 = (1..=order as usize).map(|v| v as f64).product();
    Some(
        offsets
            .iter()
            .map(|s| fact * (0..k).map(|a| r[a] * s.powi(a as i32)).sum::<f64>())
            .collect(),
    )
}

impl<T: Real> PolyStencils<T> {
    fn new(order: u8, half_width: usize, h: f64) -> Option<Self> {
        let degree = order as usize + 2;
        let width = 2 * half_width + 1;
        let scale = h.powi(order as i32);
        let to_t = |w: Vec<f64>| w.into_iter().map(|v| T::of(v / scale)).collect::<Vec<T>>();
        let centred: Vec<f64> = (0..width).map(|i| i as f64 - half_width as f64).collect();
        let interior = to_t(poly_weights(&centred, degree, order)?);
        let mut edges_left = Vec::new();
        let mut edges_right = Vec::new();
        for p in 0..half_width {
            let left: Vec<f64> = (0..width).map(|i| i as f64 - p as f64).collect();
            edges_left.push(to_t(poly_weights(&left, degree, order)?));
            let right: Vec<f64> = (0..width)
                .map(|i| i as f64 - (width - 1 - p) as f64)
                .collect();
            edges_right.push(to_t(poly_weights(&right, degree, order)?));
        }
        Some(PolyStencils {
            interior,
            edges_left,
            edges_right,
            half_width,
        })
    }

    fn apply(&self, u: &[T], periodic: bool, out: &mut [T]) {
        let n = u.len();
        let w = self.half_width;
        let width = 2 * w + 1;
        for i in 0..n {
            let (start, weights): (isize, &[T]) = if periodic || (i >= w && i + w < n) {
                (i as isize - w as isize, &self.interior)
            } else if i < w {
                (0, &self.edges_left[i])
            } else {
                let p = n - 1 - i;
                ((n - width) as isize, &self.edges_right[p])
            };
            let m = n as isize;
            out[i] = weights
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let idx = (((start + k as isize) % m) + m) % m;
                    c * u[idx as usize]
                })
                .sum();
        }
    }
}

/// Differentiates `field` along `axis`.
///
/// Spatial axes of periodic grids wrap around; the time axis never does.
pub fn differentiate<T: Real>(
    field: &FieldSeries<T>,
    axis: DiffAxis,
    order: u8,
    method: DiffMethod,
) -> Result<FieldSeries<T>> {
    if !(1..=3).contains(&order) {
        return Err(Error::Config(format!(
            "derivative order {order} not in 1..=3"
        )));
    }
    let g = field.grid;
    let (len, step, stride, periodic) = match axis {
        DiffAxis::X => (g.x.n, g.dx(), 1, g.boundary == Boundary::Periodic),
        DiffAxis::Y => {
            let y =
                g.y.ok_or_else(|| Error::Config("axis y is absent from a 1D grid".into()))?;
            (
                y.n,
                g.dy().unwrap_or(0.0),
                g.x.n,
                g.boundary == Boundary::Periodic,
            )
        }
        DiffAxis::T => (g.t.n, g.dt(), g.slice_len(), false),
    };
    if len < 2 * order as usize + 1 {
        return Err(Error::Config(format!(
            "axis has {len} points; order {order} needs at least {}",
            2 * order + 1
        )));
    }
    let poly = match method {
        DiffMethod::FiniteDifference => None,
        DiffMethod::Polynomial { half_width } => {
            if 2 * half_width + 1 < order as usize + 3 || 2 * half_width + 1 > len {
                return Err(Error::Config(format!(
                    "polynomial window of half-width {half_width} unsuitable for order {order} on {len} points"
                )));
            }
            Some(
                PolyStencils::<T>::new(order, half_width, step).ok_or_else(|| {
                    Error::Numerical("singular polynomial differentiation system".into())
                })?,
            )
        }
    };

    let mut out = vec![T::zero(); field.values.len()];
    let mut line = vec![T::zero(); len];
    let mut dline = vec![T::zero(); len];
    let h = T::of(step);
    // Every line along `axis` starts at a base index with the other coordinates fixed.
    let bases: Vec<usize> = match axis {
        DiffAxis::X => (0..g.t.n * g.ny()).map(|r| r * g.x.n).collect(),
        DiffAxis::Y => (0..g.t.n)
            .flat_map(|k| (0..g.x.n).map(move |ix| k * g.slice_len() + ix))
            .collect(),
        DiffAxis::T => (0..g.slice_len()).collect(),
    };
    for base in bases {
        for (i, v) in line.iter_mut().enumerate() {
            *v = field.values[base + i * stride];
        }
        match &poly {
            None => fd_line(&line, h, order, periodic, &mut dline),
            Some(p) => p.apply(&line, periodic, &mut dline),
        }
        for (i, v) in dline.iter().enumerate() {
            out[base + i * stride] = *v;
        }
    }
    Ok(FieldSeries {
        grid: g,
        values: out,
        provenance: Provenance::Derived,
        meta: Default::default(),
    })
}
