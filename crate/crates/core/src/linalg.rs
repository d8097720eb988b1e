//! Small dense linear algebra for the M×M systems of the sparse regressor.
//!
//! Matrices are square, row-major `Vec<T>`; sizes are at most a few dozen.

use crate::scalar::Real;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Real> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|v| v.abs()).fold(T::zero(), T::max)
    }

    /// Principal submatrix on the given indices.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), |i, j| self[(idx[i], idx[j])])
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl<T> std::ops::Index<(usize, usize)> for SquareMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for SquareMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: SquareMatrix<T>,
}

impl<T: Real> Cholesky<T> {
    /// Returns `None` when the matrix is not numerically positive definite.
    pub fn new(a: &SquareMatrix<T>) -> Option<Self> {
        let n = a.n;
        let mut l = SquareMatrix::zeros(n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Cholesky { l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.n;
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> SquareMatrix<T> {
        let n = self.l.n;
        let mut inv = SquareMatrix::zeros(n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // Symmetrise to remove round-off asymmetry.
        for i in 0..n {
            for j in 0..i {
                let v = (inv[(i, j)] + inv[(j, i)]) * T::of(0.5);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }

    pub fn log_det(&self) -> T {
        let two = T::of(2.0);
        (0..self.l.n).map(|i| two * self.l[(i, i)].ln()).sum()
    }
}

/// Solves a general square system by Gaussian elimination with partial pivoting.
pub fn solve_general<T: Real>(a: &SquareMatrix<T>, b: &[T]) -> Option<Vec<T>> {
    let n = a.n;
    let mut m = a.data.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            m[i * n + col]
                .abs()
                .partial_cmp(&m[j * n + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if m[piv * n + col].abs() <= T::min_positive_value() {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        for r in col + 1..n {
            let f = m[r * n + col] / m[col * n + col];
            for k in col..n {
                m[r * n + k] = m[r * n + k] - f * m[col * n + k];
            }
            x[r] = x[r] - f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s = s - m[i * n + k] * x[k];
        }
        x[i] = s / m[i * n + i];
    }
    Some(x)
}

/// Gram matrix `XᵀX` of column-major data.
pub fn gram<T: Real>(columns: &[Vec<T>]) -> SquareMatrix<T> {
    let m = columns.len();
    let mut g = SquareMatrix::zeros(m);
    for i in 0..m {
        for j in 0..=i {
            let v = dot(&columns[i], &columns[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Ordinary least squares through the normal equations.
pub fn least_squares<T: Real>(columns: &[Vec<T>], y: &[T]) -> Option<Vec<T>> {
    let g = gram(columns);
    let rhs: Vec<T> = columns.iter().map(|c| dot(c, y)).collect();
    Cholesky::new(&g).map(|c| c.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> SquareMatrix<f64> {
        let b = SquareMatrix::from_fn(n, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 - 2.0 + (i == j) as u8 as f64
        });
        SquareMatrix::from_fn(n, |i, j| {
            (0..n).map(|k| b[(i, k)] * b[(j, k)]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }
        })
    }

    #[test]
    fn cholesky_inverse_is_inverse() {
        let a = spd(6);
        let inv = Cholesky::new(&a).unwrap().inverse();
        for i in 0..6 {
            for j in 0..6 {
                let v: f64 = (0..6).map(|k| a[(i, k)] * inv[(k, j)]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = SquareMatrix::<f64>::identity(3);
        a[(1, 1)] = -1.0;
        assert!(Cholesky::new(&a).is_none());
    }

    #[test]
    fn general_solve_agrees_with_cholesky() {
        let a = spd(5);
        let b = vec![1.0, -2.0, 0.5, 3.0, 0.0];
        let x1 = Cholesky::new(&a).unwrap().solve(&b);
        let x2 = solve_general(&a, &b).unwrap();
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn log_det_of_diagonal() {
        let a = SquareMatrix::from_fn(3, |i, j| if i == j { (i + 2) as f64 } else { 0.0 });
        let ld = Cholesky::new(&a).unwrap().log_det();
        assert!((ld - (2.0f64 * 3.0 * 4.0).ln()).abs() < 1e-14);
    }
}
