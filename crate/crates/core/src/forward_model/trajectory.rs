//! Radial k-space trajectories and their density compensation.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Radial golden angle π(√5−1)/2 ≈ 111.25°, applied globally across phases.
pub const GOLDEN_ANGLE: f64 = 1.941_611_038_725_466_6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpokeScheme {
    GoldenAngle,
    Uniform,
}

impl std::str::FromStr for SpokeScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "golden_angle" => Ok(Self::GoldenAngle),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::invalid(format!("unknown spoke scheme `{other}`"))),
        }
    }
}

/// Per-phase sample coordinates `(kx, ky)` in cycles/pixel, each in
/// `[-0.5, 0.5)`, with nonnegative density-compensation weights.
///
/// `spoke_angles` and `samples_per_spoke` describe how the trajectory was
/// generated; they are empty/zero for trajectories read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    coords: Vec<Vec<[T; 2]>>,
    dcf: Vec<Vec<T>>,
    spoke_angles: Vec<Vec<f64>>,
    samples_per_spoke: usize,
}

impl<T: Real> Trajectory<T> {
    /// Builds a trajectory from explicit coordinates and weights. All phases
    /// must carry the same number of samples.
    pub fn from_samples(coords: Vec<Vec<[T; 2]>>, dcf: Vec<Vec<T>>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("trajectory needs at least one phase"));
        }
        if coords.len() != dcf.len() {
            return Err(Error::shape("phases", coords.len(), dcf.len()));
        }
        let m = coords[0].len();
        for (c, w) in coords.iter().zip(&dcf) {
            if c.len() != m {
                return Err(Error::shape("samples", m, c.len()));
            }
            if w.len() != c.len() {
                return Err(Error::shape("dcf", c.len(), w.len()));
            }
            validate_coords(c)?;
            if w.iter().any(|&d| !(d >= T::zero()) || !d.is_finite()) {
                return Err(Error::invalid("density-compensation weights must be finite and >= 0"));
            }
        }
        Ok(Self {
            coords,
            dcf,
            spoke_angles: Vec::new(),
            samples_per_spoke: 0,
        })
    }

    pub fn phases(&self) -> usize {
        self.coords.len()
    }

    /// Samples per phase.
    pub fn samples(&self) -> usize {
        self.coords[0].len()
    }

    pub fn coords(&self, t: usize) -> &[[T; 2]] {
        &self.coords[t]
    }

    pub fn dcf(&self, t: usize) -> &[T] {
        &self.dcf[t]
    }

    pub fn spoke_angles(&self, t: usize) -> &[f64] {
        self.spoke_angles.get(t).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn samples_per_spoke(&self) -> usize {
        self.samples_per_spoke
    }
}

pub(crate) fn validate_coords<T: Real>(coords: &[[T; 2]]) -> Result<()> {
    let lo = T::lit(-0.5);
    let hi = T::lit(0.5);
    for (j, k) in coords.iter().enumerate() {
        for &v in k {
            if !(v >= lo && v < hi) {
                return Err(Error::invalid(format!(
                    "k-space coordinate {j} = ({}, {}) outside [-0.5, 0.5)",
                    k[0], k[1]
                )));
            }
        }
    }
    Ok(())
}

/// Radial spokes through the k-space origin, `2·H` samples each.
///
/// Sample `j` of a spoke sits at radius `(j − H) / (2H)`, so index `H` is the
/// DC sample. Density compensation is the ramp `|k| · Δk · π / spokes`, the
/// area each sample covers. The DC sample gets the central disk of radius
/// `Δk/2` shared among the spokes, a quarter of a first-ring weight.
pub fn make_radial_trajectory<T: Real>(
    height: usize,
    spokes_per_phase: usize,
    phases: usize,
    scheme: SpokeScheme,
) -> Result<Trajectory<T>> {
    if spokes_per_phase == 0 {
        return Err(Error::invalid("spokes_per_phase must be at least 1"));
    }
    if phases == 0 {
        return Err(Error::invalid("phase count must be at least 1"));
    }
    if height < 2 {
        return Err(Error::invalid("height must be at least 2"));
    }
    let pi = std::f64::consts::PI;
    let sps = 2 * height;
    let dk = 1.0 / sps as f64;
    let ring_weight = pi / spokes_per_phase as f64 * dk;

    let mut coords = Vec::with_capacity(phases);
    let mut dcf = Vec::with_capacity(phases);
    let mut angles = Vec::with_capacity(phases);
    for t in 0..phases {
        let phase_angles: Vec<f64> = (0..spokes_per_phase)
            .map(|s| match scheme {
                SpokeScheme::Uniform => pi * s as f64 / spokes_per_phase as f64,
                SpokeScheme::GoldenAngle => {
                    let g = (t * spokes_per_phase + s) as f64;
                    (g * GOLDEN_ANGLE).rem_euclid(pi)
                }
            })
            .collect();
        let mut c = Vec::with_capacity(spokes_per_phase * sps);
        let mut w = Vec::with_capacity(spokes_per_phase * sps);
        for &theta in &phase_angles {
            let (s, co) = theta.sin_cos();
            for j in 0..sps {
                let radius = (j as f64 - height as f64) * dk;
                c.push([T::lit(wrap_half(radius * co)), T::lit(wrap_half(radius * s))]);
                let weight = if j == height {
                    0.25 * ring_weight * dk
                } else {
                    ring_weight * radius.abs()
                };
                w.push(T::lit(weight));
            }
        }
        coords.push(c);
        dcf.push(w);
        angles.push(phase_angles);
    }
    Ok(Trajectory {
        coords,
        dcf,
        spoke_angles: angles,
        samples_per_spoke: sps,
    })
}

/// Maps a coordinate that rounding pushed onto +0.5 back into `[-0.5, 0.5)`.
fn wrap_half(v: f64) -> f64 {
    if v >= 0.5 {
        v - 1.0
    } else {
        v
    }
}
