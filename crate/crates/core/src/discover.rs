//! From a measured field to a sparse model: smoothing, differentiation,
//! library assembly, optional Fourier projection, normalization and regression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldSeries;
use crate::library::{build_library_1d, build_library_2d, Derivatives1d, Derivatives2d, Library};
use crate::pesbl::{self, PesblConfig, SparseModel};
use crate::preprocess::{
    denoise, differentiate, fourier_threshold, normalize_columns, savitzky_golay,
    savitzky_golay_time, spectral_project, DenoiseReport, DenoiserConfig, DiffAxis, DiffMethod,
    NormalizedSystem, RegressionSystem,
};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmootherKind {
    None,
    Network,
    SavitzkyGolay,
    /// Hard thresholding of spatial Fourier coefficients (periodic grids only).
    Fourier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Differentiation {
    FiniteDifference,
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Spatial,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub smoother: SmootherKind,
    pub denoiser: DenoiserConfig,
    pub savgol_half_width: usize,
    pub savgol_degree: usize,
    /// Threshold in noise standard deviations for the Fourier smoother.
    pub fourier_threshold: f64,
    /// Savitzky–Golay half-width applied along time after Fourier thresholding; 0 disables it.
    pub fourier_time_half_width: usize,
    /// Threshold each time slice separately instead of the whole space-time block.
    pub fourier_per_slice: bool,
    pub differentiation: Differentiation,
    /// Window half-width for polynomial differentiation; 0 picks `order + 3`.
    pub poly_half_width: usize,
    /// Samples dropped at both ends of every axis before regression.
    pub trim: usize,
    pub domain: Domain,
    /// Retained fraction of each axis's spectrum (one value for all axes, or one per axis).
    pub cutoff: Vec<f64>,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            smoother: SmootherKind::Network,
            denoiser: DenoiserConfig::default(),
            savgol_half_width: 3,
            savgol_degree: 3,
            fourier_threshold: 3.0,
            fourier_time_half_width: 0,
            fourier_per_slice: false,
            differentiation: Differentiation::FiniteDifference,
            poly_half_width: 0,
            trim: 2,
            domain: Domain::Spectral,
            cutoff: vec![0.3],
        }
    }
}

/// Everything produced on the way to the regression system.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub smoothed: FieldSeries<T>,
    pub time_derivative: FieldSeries<T>,
    pub library: Library<T>,
    pub system: NormalizedSystem<T>,
    pub denoise_report: Option<DenoiseReport>,
}

fn method(cfg: &PrepareConfig, order: u8) -> DiffMethod {
    match cfg.differentiation {
        Differentiation::FiniteDifference => DiffMethod::FiniteDifference,
        Differentiation::Polynomial if cfg.poly_half_width == 0 => {
            DiffMethod::polynomial_default(order)
        }
        Differentiation::Polynomial => DiffMethod::Polynomial {
            half_width: cfg.poly_half_width,
        },
    }
}

/// Builds the normalized regression system from a (possibly noisy) field.
pub fn prepare<T: Real>(field: &FieldSeries<T>, cfg: &PrepareConfig) -> Result<Prepared<T>> {
    let (smoothed, denoise_report) = match cfg.smoother {
        SmootherKind::None => (field.clone(), None),
        SmootherKind::Network => {
            let (s, r) = denoise(field, &cfg.denoiser)?;
            (s, Some(r))
        }
        SmootherKind::SavitzkyGolay => (
            savitzky_golay(field, cfg.savgol_half_width, cfg.savgol_degree)?,
            None,
        ),
        SmootherKind::Fourier => {
            let (s, _) = fourier_threshold(field, cfg.fourier_threshold, cfg.fourier_per_slice)?;
            let s = if cfg.fourier_time_half_width > 0 {
                savitzky_golay_time(&s, cfg.fourier_time_half_width, cfg.savgol_degree)?
            } else {
                s
            };
            (s, None)
        }
    };
    let time_derivative = differentiate(&smoothed, DiffAxis::T, 1, method(cfg, 1))?;
    let d = |axis, order| differentiate(&smoothed, axis, order, method(cfg, order));
    let library = if smoothed.grid.is_2d() {
        let derivs = Derivatives2d {
            ux: d(DiffAxis::X, 1)?,
            uy: d(DiffAxis::Y, 1)?,
            uxx: d(DiffAxis::X, 2)?,
            uyy: d(DiffAxis::Y, 2)?,
        };
        build_library_2d(&smoothed, &derivs)?
    } else {
        let derivs = Derivatives1d {
            ux: d(DiffAxis::X, 1)?,
            uxx: d(DiffAxis::X, 2)?,
            uxxx: d(DiffAxis::X, 3)?,
        };
        build_library_1d(&smoothed, &derivs)?
    };
    let (library, time_derivative) = if cfg.trim > 0 {
        (library.trim(cfg.trim)?, time_derivative.trim(cfg.trim)?)
    } else {
        (library, time_derivative)
    };
    let raw = match cfg.domain {
        Domain::Spatial => RegressionSystem::spatial(&time_derivative, &library)?,
        Domain::Spectral => spectral_project(&time_derivative, &library, &cfg.cutoff)?.system,
    };
    let system = normalize_columns(&raw)?;
    Ok(Prepared {
        smoothed,
        time_derivative,
        library,
        system,
        denoise_report,
    })
}

/// Prepares `field` and runs the sparse regressor on it.
pub fn learn<T: Real>(
    field: &FieldSeries<T>,
    prep: &PrepareConfig,
    cfg: &PesblConfig,
) -> Result<(SparseModel<T>, Prepared<T>)> {
    let prepared = prepare(field, prep)?;
    let model = pesbl::run(&prepared.system, cfg)?;
    if model.terms.is_empty() {
        return Err(Error::DegenerateTarget(
            "no library term explains the time derivative".into(),
        ));
    }
    Ok((model, prepared))
}
