//! Preparing measured data for sparse regression.

pub mod denoise;
pub mod differentiate;
pub mod fourier;
pub mod normalize;
pub mod savgol;
pub mod spectral;

pub use denoise::{denoise, Activation, DenoiseReport, DenoiserConfig, Optimizer};
pub use differentiate::{differentiate, fd_line, DiffAxis, DiffMethod};
pub use fourier::{fourier_threshold, ThresholdReport};
pub use normalize::{normalize_columns, NormalizedSystem};
pub use savgol::{savitzky_golay, savitzky_golay_time};
pub use spectral::{band_coefficients, spectral_project, RegressionSystem, SpectralStack};
