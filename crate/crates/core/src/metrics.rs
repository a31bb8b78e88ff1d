//! Magnitude-image PSNR against a reference.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::ComplexImage;
use crate::scalar::Real;

/// Reported when the images agree exactly.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub mse: f64,
    pub peak: f64,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.17e} {:.17e} {:.17e}", self.psnr_db, self.mse, self.peak)
    }
}

fn report_from_magnitudes<'a, T: Real>(
    pairs: impl Iterator<Item = (&'a num_complex::Complex<T>, &'a num_complex::Complex<T>)>,
) -> Result<MetricReport> {
    let mut peak = 0.0f64;
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (x, r) in pairs {
        let rm = r.norm().to_f64_lossy();
        let d = x.norm().to_f64_lossy() - rm;
        peak = peak.max(rm);
        sum += d * d;
        n += 1;
    }
    if !(peak > 0.0) {
        return Err(Error::invalid("reference image is all zero; PSNR peak undefined"));
    }
    let mse = sum / n as f64;
    let psnr_db = if mse > 0.0 {
        10.0 * (peak * peak / mse).log10()
    } else {
        PSNR_CAP_DB
    };
    Ok(MetricReport { psnr_db, mse, peak })
}

/// PSNR of `|x|` against `|reference|`, with the peak taken from the reference.
pub fn psnr<T: Real>(x: &ComplexImage<T>, reference: &ComplexImage<T>) -> Result<MetricReport> {
    x.same_shape(reference)?;
    report_from_magnitudes(x.data().iter().zip(reference.data()))
}

/// One report per phase, each with its own reference peak.
pub fn psnr_per_phase<T: Real>(
    x: &ComplexImage<T>,
    reference: &ComplexImage<T>,
) -> Result<Vec<MetricReport>> {
    x.same_shape(reference)?;
    (0..x.phases())
        .map(|t| report_from_magnitudes(x.phase(t).iter().zip(reference.phase(t))))
        .collect()
}
