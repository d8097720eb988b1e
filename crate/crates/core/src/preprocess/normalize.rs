use crate::error::{Error, Result};
use crate::preprocess::spectral::RegressionSystem;
use crate::scalar::Real;

/// A regression system whose columns and target have unit L2 norm.
#[derive(Debug, Clone)]
pub struct NormalizedSystem<T> {
    pub system: RegressionSystem<T>,
    pub column_norms: Vec<T>,
    pub target_norm: T,
}

impl<T: Real> NormalizedSystem<T> {
    /// Maps coefficients of the normalized problem back to physical units.
    pub fn to_physical(&self, normalized: &[T]) -> Vec<T> {
        normalized
            .iter()
            .zip(&self.column_norms)
            .map(|(&c, &s)| c * self.target_norm / s)
            .collect()
    }

    /// Inverse of [`to_physical`](Self::to_physical).
    pub fn to_normalized(&self, physical: &[T]) -> Vec<T> {
        physical
            .iter()
            .zip(&self.column_norms)
            .map(|(&c, &s)| c * s / self.target_norm)
            .collect()
    }

    /// Scale factor from normalized to physical units for column `j`.
    pub fn scale(&self, j: usize) -> T {
        self.target_norm / self.column_norms[j]
    }
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Divides every column and the target by its own L2 norm.
pub fn normalize_columns<T: Real>(system: &RegressionSystem<T>) -> Result<NormalizedSystem<T>> {
    let mut column_norms = Vec::with_capacity(system.len());
    let mut columns = Vec::with_capacity(system.len());
    for (term, col) in system.terms.iter().zip(&system.columns) {
        let n = norm(col);
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::ZeroColumn {
                term: term.name.clone(),
            });
        }
        columns.push(col.iter().map(|&v| v / n).collect());
        column_norms.push(n);
    }
    let target_norm = norm(&system.target);
    if !(target_norm > T::zero()) || !target_norm.is_finite() {
        return Err(Error::DegenerateTarget(
            "time derivative has zero or non-finite norm".into(),
        ));
    }
    Ok(NormalizedSystem {
        system: RegressionSystem {
            terms: system.terms.clone(),
            columns,
            target: system.target.iter().map(|&v| v / target_norm).collect(),
        },
        column_norms,
        target_norm,
    })
}
