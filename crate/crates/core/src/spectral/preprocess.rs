use std::cmp::Ordering;

use crate::corpus::SpectrumRecord;
use crate::error::{Error, Result};

/// Sorted transformed masses and normalized intensities, padded to a fixed
/// length. Padded positions carry zeros and `mask = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedSpectrum {
    pub x_mz: Vec<f64>,
    pub i_norm: Vec<f64>,
    pub mask: Vec<bool>,
    pub original_count: usize,
}

impl PreprocessedSpectrum {
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `(x_mz, i_norm)` of every unmasked position, in order.
    pub fn real_positions(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.mask
            .iter()
            .zip(self.x_mz.iter().zip(&self.i_norm))
            .filter(|(m, _)| **m)
            .map(|(_, (&x, &i))| (x, i))
    }
}

/// `ln(mz + 1)`.
pub fn transform_mass(mz: f64) -> Result<f64> {
    if mz < 0.0 || mz.is_nan() {
        return Err(Error::NegativeMass(mz));
    }
    Ok(mz.ln_1p())
}

/// `sqrt(I) / max(sqrt(I))`; an all-zero input maps to all zeros.
pub fn normalize_intensity(intensities: &[f64]) -> Result<Vec<f64>> {
    if intensities.is_empty() {
        return Err(Error::EmptyPeaks);
    }
    if let Some(bad) = intensities.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "intensity must be non-negative, got {bad}"
        )));
    }
    let roots: Vec<f64> = intensities.iter().map(|v| v.sqrt()).collect();
    let max = roots.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(vec![0.0; roots.len()]);
    }
    Ok(roots.into_iter().map(|r| r / max).collect())
}

/// Keeps the `max_peaks` most intense peaks, applies both transforms, sorts
/// by transformed mass (stable), and pads to `max_peaks`.
///
/// Truncation ranks by intensity, then m/z, so the surviving set does not
/// depend on input order.
pub fn preprocess(record: &SpectrumRecord, max_peaks: usize) -> Result<PreprocessedSpectrum> {
    if record.peaks.is_empty() {
        return Err(Error::EmptyPeaks);
    }
    if max_peaks == 0 {
        return Err(Error::InvalidArgument("max_peaks must be positive".into()));
    }
    let mut idx: Vec<usize> = (0..record.peaks.len()).collect();
    if idx.len() > max_peaks {
        idx.sort_by(|&a, &b| {
            let (pa, pb) = (&record.peaks[a], &record.peaks[b]);
            pb.intensity
                .partial_cmp(&pa.intensity)
                .unwrap_or(Ordering::Equal)
                .then(pa.mz.partial_cmp(&pb.mz).unwrap_or(Ordering::Equal))
                .then(a.cmp(&b))
        });
        idx.truncate(max_peaks);
        idx.sort_unstable();
    }
    let kept: Vec<_> = idx.iter().map(|&i| record.peaks[i]).collect();
    let norm = normalize_intensity(&kept.iter().map(|p| p.intensity).collect::<Vec<_>>())?;
    let mut pairs = Vec::with_capacity(kept.len());
    for (p, i) in kept.iter().zip(norm) {
        pairs.push((transform_mass(p.mz)?, i));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let n = pairs.len();
    let mut out = PreprocessedSpectrum {
        x_mz: vec![0.0; max_peaks],
        i_norm: vec![0.0; max_peaks],
        mask: vec![false; max_peaks],
        original_count: record.peaks.len(),
    };
    for (k, (x, i)) in pairs.into_iter().enumerate() {
        out.x_mz[k] = x;
        out.i_norm[k] = i;
        out.mask[k] = true;
    }
    debug_assert_eq!(out.real_len(), n);
    Ok(out)
}
