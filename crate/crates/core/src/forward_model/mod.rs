//! Multicoil radial measurement operator `H_i^(t) = P^(t) F S_i`, its
//! adjoint, the least-squares gradient and zero-filled backprojection.

pub mod nufft;
pub mod trajectory;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CoilSensitivities, ComplexImage};
use crate::scalar::Real;

pub use nufft::{NufftConfig, NufftPlan};
pub use trajectory::{make_radial_trajectory, SpokeScheme, Trajectory, GOLDEN_ANGLE};

/// Measurements indexed `(coil, phase, sample)`, coil slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData<T> {
    coils: usize,
    phases: usize,
    samples: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> KSpaceData<T> {
    pub fn zeros(coils: usize, phases: usize, samples: usize) -> Self {
        Self {
            coils,
            phases,
            samples,
            data: vec![Complex::new(T::zero(), T::zero()); coils * phases * samples],
        }
    }

    pub fn from_vec(
        coils: usize,
        phases: usize,
        samples: usize,
        data: Vec<Complex<T>>,
    ) -> Result<Self> {
        if coils == 0 || phases == 0 {
            return Err(Error::invalid("k-space data needs at least one coil and phase"));
        }
        if data.len() != coils * phases * samples {
            return Err(Error::shape("elements", coils * phases * samples, data.len()));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("non-finite k-space sample"));
        }
        Ok(Self {
            coils,
            phases,
            samples,
            data,
        })
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    /// Samples per (coil, phase).
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn line(&self, coil: usize, t: usize) -> &[Complex<T>] {
        let start = (coil * self.phases + t) * self.samples;
        &self.data[start..start + self.samples]
    }

    pub fn norm_sqr(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Inner product `Σ a · conj(b)`.
    pub fn dot(&self, other: &Self) -> Complex<T> {
        self.data
            .iter()
            .zip(&other.data)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a * b.conj())
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            data: self.data.iter().map(|z| z * alpha).collect(),
            ..*self
        }
    }
}

/// The measurement operator bound to one coil set, trajectory and NUFFT plan.
#[derive(Debug, Clone)]
pub struct ForwardModel<'a, T: Real> {
    coils: &'a CoilSensitivities<T>,
    traj: &'a Trajectory<T>,
    plan: NufftPlan<T>,
}

impl<'a, T: Real> ForwardModel<'a, T> {
    pub fn new(
        coils: &'a CoilSensitivities<T>,
        traj: &'a Trajectory<T>,
        cfg: NufftConfig,
    ) -> Result<Self> {
        let plan = NufftPlan::new(coils.height(), coils.width(), cfg)?;
        Ok(Self { coils, traj, plan })
    }

    pub fn coils(&self) -> &CoilSensitivities<T> {
        self.coils
    }

    pub fn trajectory(&self) -> &Trajectory<T> {
        self.traj
    }

    pub fn plan(&self) -> &NufftPlan<T> {
        &self.plan
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.coils.height(), self.coils.width(), self.traj.phases())
    }

    fn check_image(&self, x: &ComplexImage<T>) -> Result<()> {
        let (h, w, t) = self.image_shape();
        if x.height() != h {
            return Err(Error::shape("height", h, x.height()));
        }
        if x.width() != w {
            return Err(Error::shape("width", w, x.width()));
        }
        if x.phases() != t {
            return Err(Error::shape("phases", t, x.phases()));
        }
        Ok(())
    }

    fn check_kspace(&self, y: &KSpaceData<T>) -> Result<()> {
        if y.coils() != self.coils.coils() {
            return Err(Error::shape("coils", self.coils.coils(), y.coils()));
        }
        if y.phases() != self.traj.phases() {
            return Err(Error::shape("phases", self.traj.phases(), y.phases()));
        }
        if y.samples() != self.traj.samples() {
            return Err(Error::shape("samples", self.traj.samples(), y.samples()));
        }
        Ok(())
    }

    /// `y[i, t] = F_t (S_i ⊙ x[·, ·, t])`.
    pub fn apply(&self, x: &ComplexImage<T>) -> Result<KSpaceData<T>> {
        self.check_image(x)?;
        let (nc, nt, m) = (self.coils.coils(), self.traj.phases(), self.traj.samples());
        let lines: Vec<Vec<Complex<T>>> = (0..nc * nt)
            .into_par_iter()
            .map(|job| {
                let (coil, t) = (job / nt, job % nt);
                let weighted: Vec<Complex<T>> = x
                    .phase(t)
                    .iter()
                    .zip(self.coils.map(coil))
                    .map(|(v, s)| v * s)
                    .collect();
                self.plan.forward_unchecked(&weighted, self.traj.coords(t))
            })
            .collect();
        let mut data = Vec::with_capacity(nc * nt * m);
        for line in lines {
            data.extend(line);
        }
        Ok(KSpaceData {
            coils: nc,
            phases: nt,
            samples: m,
            data,
        })
    }

    /// `x[·, ·, t] = Σ_i conj(S_i) ⊙ F_tᴴ (w_t ⊙ y[i, t])`, summed in coil order.
    fn backproject(&self, y: &KSpaceData<T>, weighted: bool) -> Result<ComplexImage<T>> {
        self.check_kspace(y)?;
        let (h, w, nt) = self.image_shape();
        let nc = self.coils.coils();
        let partial: Vec<Vec<Complex<T>>> = (0..nc * nt)
            .into_par_iter()
            .map(|job| {
                let (coil, t) = (job / nt, job % nt);
                let line = y.line(coil, t);
                let img = if weighted {
                    let compensated: Vec<Complex<T>> = line
                        .iter()
                        .zip(self.traj.dcf(t))
                        .map(|(v, &d)| v * d)
                        .collect();
                    self.plan.adjoint_unchecked(&compensated, self.traj.coords(t))
                } else {
                    self.plan.adjoint_unchecked(line, self.traj.coords(t))
                };
                img.iter()
                    .zip(self.coils.map(coil))
                    .map(|(v, s)| v * s.conj())
                    .collect()
            })
            .collect();
        let mut out = ComplexImage::zeros(h, w, nt)?;
        for t in 0..nt {
            let dst = out.phase_mut(t);
            for coil in 0..nc {
                for (d, v) in dst.iter_mut().zip(&partial[coil * nt + t]) {
                    *d = *d + *v;
                }
            }
        }
        Ok(out)
    }

    /// Exact adjoint `Hᴴ y`.
    pub fn adjoint(&self, y: &KSpaceData<T>) -> Result<ComplexImage<T>> {
        self.backproject(y, false)
    }

    /// `g(x) = ½‖y − Hx‖²`.
    pub fn datafit(&self, x: &ComplexImage<T>, y: &KSpaceData<T>) -> Result<T> {
        self.check_kspace(y)?;
        let hx = self.apply(x)?;
        let r: T = hx
            .data
            .iter()
            .zip(&y.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        Ok(T::lit(0.5) * r)
    }

    /// `∇g(x) = Hᴴ(Hx − y)`.
    pub fn gradient(&self, x: &ComplexImage<T>, y: &KSpaceData<T>) -> Result<ComplexImage<T>> {
        self.check_kspace(y)?;
        let mut residual = self.apply(x)?;
        for (r, b) in residual.data.iter_mut().zip(&y.data) {
            *r = *r - *b;
        }
        self.adjoint(&residual)
    }

    /// `Hᴴ H x`.
    pub fn normal(&self, x: &ComplexImage<T>) -> Result<ComplexImage<T>> {
        self.adjoint(&self.apply(x)?)
    }

    /// Density-compensated adjoint normalised by the coil sum-of-squares.
    pub fn zero_filled(&self, y: &KSpaceData<T>, hamming: bool) -> Result<ComplexImage<T>> {
        let mut img = if hamming {
            let mut windowed = y.clone();
            let (nc, nt) = (y.coils(), y.phases());
            for coil in 0..nc {
                for t in 0..nt {
                    let start = (coil * nt + t) * y.samples();
                    for (v, k) in windowed.data[start..start + y.samples()]
                        .iter_mut()
                        .zip(self.traj.coords(t))
                    {
                        *v = *v * hamming_weight(k);
                    }
                }
            }
            self.backproject(&windowed, true)?
        } else {
            self.backproject(y, true)?
        };
        let sos = self.coils.sum_of_squares();
        let w = self.coils.width();
        for (p, &s) in sos.iter().enumerate() {
            if s > T::zero() {
                continue;
            }
            if self.coils.in_support(p / w, p % w) {
                return Err(Error::invalid(format!(
                    "coil sum-of-squares vanishes at in-support pixel ({}, {})",
                    p / w,
                    p % w
                )));
            }
        }
        for t in 0..img.phases() {
            for (v, &s) in img.phase_mut(t).iter_mut().zip(&sos) {
                *v = if s > T::zero() {
                    *v / s
                } else {
                    Complex::new(T::zero(), T::zero())
                };
            }
        }
        Ok(img)
    }
}

/// Radial Hamming window, 1 at DC falling to 0.08 at |k| = 0.5.
fn hamming_weight<T: Real>(k: &[T; 2]) -> T {
    let r = k[0].hypot(k[1]).min(T::lit(0.5));
    T::lit(0.54) + T::lit(0.46) * (T::lit(2.0) * T::PI() * r).cos()
}

/// Samples `nufft_forward` of a single `H × W × 1` image.
pub fn nufft_forward<T: Real>(
    img: &ComplexImage<T>,
    coords: &[[T; 2]],
    cfg: NufftConfig,
) -> Result<Vec<Complex<T>>> {
    if img.phases() != 1 {
        return Err(Error::shape("phases", 1, img.phases()));
    }
    NufftPlan::new(img.height(), img.width(), cfg)?.forward(img.data(), coords)
}

pub fn nufft_adjoint<T: Real>(
    samples: &[Complex<T>],
    coords: &[[T; 2]],
    height: usize,
    width: usize,
    cfg: NufftConfig,
) -> Result<ComplexImage<T>> {
    let data = NufftPlan::new(height, width, cfg)?.adjoint(samples, coords)?;
    ComplexImage::from_vec(height, width, 1, data)
}

pub fn apply_h<T: Real>(
    x: &ComplexImage<T>,
    coils: &CoilSensitivities<T>,
    traj: &Trajectory<T>,
    cfg: NufftConfig,
) -> Result<KSpaceData<T>> {
    ForwardModel::new(coils, traj, cfg)?.apply(x)
}

pub fn apply_h_adjoint<T: Real>(
    y: &KSpaceData<T>,
    coils: &CoilSensitivities<T>,
    traj: &Trajectory<T>,
    cfg: NufftConfig,
) -> Result<ComplexImage<T>> {
    ForwardModel::new(coils, traj, cfg)?.adjoint(y)
}

pub fn grad_datafit<T: Real>(
    x: &ComplexImage<T>,
    y: &KSpaceData<T>,
    coils: &CoilSensitivities<T>,
    traj: &Trajectory<T>,
    cfg: NufftConfig,
) -> Result<ComplexImage<T>> {
    ForwardModel::new(coils, traj, cfg)?.gradient(x, y)
}

pub fn datafit<T: Real>(
    x: &ComplexImage<T>,
    y: &KSpaceData<T>,
    coils: &CoilSensitivities<T>,
    traj: &Trajectory<T>,
    cfg: NufftConfig,
) -> Result<T> {
    ForwardModel::new(coils, traj, cfg)?.datafit(x, y)
}

/// Inverse-MCNUFFT style reconstruction without Hamming apodization.
pub fn zero_filled_recon<T: Real>(
    y: &KSpaceData<T>,
    coils: &CoilSensitivities<T>,
    traj: &Trajectory<T>,
    cfg: NufftConfig,
) -> Result<ComplexImage<T>> {
    ForwardModel::new(coils, traj, cfg)?.zero_filled(y, false)
}

/// `y = Hx + e` with i.i.d. complex Gaussian `e` (std `noise_sigma` per
/// real/imaginary component) drawn from a seeded generator.
pub fn simulate_measurement<T: Real>(
    x_true: &ComplexImage<T>,
    coils: &CoilSensitivities<T>,
    traj: &Trajectory<T>,
    cfg: NufftConfig,
    noise_sigma: f64,
    seed: u64,
) -> Result<KSpaceData<T>> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::invalid(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let mut y = apply_h(x_true, coils, traj, cfg)?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.data.iter_mut() {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *v = *v + Complex::new(T::lit(re), T::lit(im));
        }
    }
    Ok(y)
}
