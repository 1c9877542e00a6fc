use std::f64::consts::TAU;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// Fixed random frequencies `b_j ~ N(0, σ²)`; never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierBasis {
    frequencies: Vec<f64>,
    sigma: f64,
    seed: u64,
}

impl FourierBasis {
    pub fn new(count: usize, sigma: f64, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument(
                "Fourier frequency count must be positive".into(),
            ));
        }
        let normal =
            Normal::new(0.0, sigma).map_err(|_| Error::InvalidArgument(format!("invalid Fourier sigma {sigma}")))?;
        if sigma <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "Fourier sigma must be positive, got {sigma}"
            )));
        }
        let mut rng = rng::substream(seed, "fourier-basis");
        let frequencies = (0..count).map(|_| normal.sample(&mut rng)).collect();
        Ok(FourierBasis {
            frequencies,
            sigma,
            seed,
        })
    }

    /// Rebuilds a basis from stored frequencies (checkpoint reload).
    pub fn from_parts(frequencies: Vec<f64>, sigma: f64, seed: u64) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::InvalidArgument("empty Fourier basis".into()));
        }
        Ok(FourierBasis {
            frequencies,
            sigma,
            seed,
        })
    }

    /// Explicit frequencies, for tests and hand-built examples.
    pub fn with_frequencies(frequencies: Vec<f64>) -> Result<Self> {
        Self::from_parts(frequencies, f64::NAN, 0)
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of frequencies `D`; the projection has `2D` entries.
    pub fn count(&self) -> usize {
        self.frequencies.len()
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::matrix(self.count(), 1, self.frequencies.clone()).expect("non-empty basis")
    }
}

/// `[cos(2π b x), sin(2π b x)]`, cosines first.
pub fn fourier_project(x: f64, basis: &FourierBasis) -> Vec<f64> {
    let d = basis.count();
    let mut out = vec![0.0; 2 * d];
    for (j, b) in basis.frequencies.iter().enumerate() {
        let (s, c) = (TAU * b * x).sin_cos();
        out[j] = c;
        out[d + j] = s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_input() {
        let basis = FourierBasis::new(5, 30.0, 1).unwrap();
        let v = fourier_project(0.0, &basis);
        assert_eq!(&v[..5], &[1.0; 5]);
        assert_eq!(&v[5..], &[0.0; 5]);
    }

    #[test]
    fn quarter_frequency() {
        let basis = FourierBasis::with_frequencies(vec![0.25]).unwrap();
        let v = fourier_project(1.0, &basis);
        assert!(v[0].abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regenerates_bitwise() {
        let a = FourierBasis::new(64, 30.0, 7).unwrap();
        let b = FourierBasis::new(64, 30.0, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, FourierBasis::new(64, 30.0, 8).unwrap());
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(FourierBasis::new(4, 0.0, 1).is_err());
        assert!(FourierBasis::new(4, -1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn squared_norm_is_frequency_count(x in -50f64..50.0) {
            let basis = FourierBasis::new(64, 30.0, 3).unwrap();
            let n2: f64 = fourier_project(x, &basis).iter().map(|v| v * v).sum();
            prop_assert!((n2 - 64.0).abs() <= 1e-9);
        }
    }
}
