//! Spectrum preprocessing, Gaussian Fourier projection and the spectral
//! transformer encoder.

mod encoder;
mod fourier;
mod preprocess;

pub use encoder::{SpectralConfig, SpectralEncoder, PREFIX};
pub use fourier::{fourier_project, FourierBasis};
pub use preprocess::{normalize_intensity, preprocess, transform_mass, PreprocessedSpectrum};

#[cfg(test)]
mod tests;
