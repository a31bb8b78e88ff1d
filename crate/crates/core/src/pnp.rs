//! Accelerated plug-and-play reconstruction: a gradient step on
//! `g(x) = ½‖y − Hx‖²` followed by a learned denoiser, with Nesterov
//! momentum on the iterates.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::denoiser::{denoise_image, DenoiserModel};
use crate::error::{Error, Result};
use crate::forward_model::{ForwardModel, KSpaceData};
use crate::grid::ComplexImage;
use crate::scalar::Real;

/// The denoising step of the iteration.
pub trait Prior<T: Real> {
    fn denoise(&self, z: &ComplexImage<T>) -> Result<ComplexImage<T>>;
}

impl<T: Real> Prior<T> for DenoiserModel<T> {
    fn denoise(&self, z: &ComplexImage<T>) -> Result<ComplexImage<T>> {
        denoise_image(self, z)
    }
}

/// Returns its input; turns the solver into plain gradient descent.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPrior;

impl<T: Real> Prior<T> for IdentityPrior {
    fn denoise(&self, z: &ComplexImage<T>) -> Result<ComplexImage<T>> {
        Ok(z.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Step size; `None` uses `1 / L` from [`power_iteration_l`].
    pub gamma: Option<f64>,
    pub max_iters: usize,
    pub accelerate: bool,
    pub tol: f64,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            max_iters: 100,
            accelerate: true,
            tol: 1e-6,
            record_trace: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gamma {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::invalid(format!("gamma must be finite and > 0, got {g}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid(format!("tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    /// 1-based iteration index.
    pub k: usize,
    pub rel_change: f64,
    pub datafit: f64,
    pub q: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverTrace {
    pub entries: Vec<TraceEntry>,
    /// Iterations actually run.
    pub iterations: usize,
    pub gamma: f64,
}

impl SolverTrace {
    /// Tab-separated `k`, relative change, data fit and `q_k`, 17
    /// significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{:.16e}\t{:.16e}\t{:.16e}", e.k, e.rel_change, e.datafit, e.q);
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// `q_0 = 1`, `q_k = ½(1 + √(1 + 4 q²_{k−1}))`; returns `q_0 ..= q_{k_max}`.
pub fn nesterov_seq(k_max: usize) -> Vec<f64> {
    let mut q = Vec::with_capacity(k_max + 1);
    q.push(1.0);
    for k in 1..=k_max {
        q.push(next_q(q[k - 1]));
    }
    q
}

pub fn next_q(q: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * q * q).sqrt())
}

/// `D(s − γ ∇g(s))`.
pub fn pnp_step<T: Real, P: Prior<T> + ?Sized>(
    op: &ForwardModel<'_, T>,
    y: &KSpaceData<T>,
    s: &ComplexImage<T>,
    gamma: f64,
    prior: &P,
) -> Result<ComplexImage<T>> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    let z = if gamma == 0.0 {
        s.clone()
    } else {
        s.add_scaled(T::lit(-gamma), &op.gradient(s, y)?)
    };
    if !z.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite gradient step (gamma {gamma:e} too large?)"
        )));
    }
    prior.denoise(&z)
}

fn diff_norm<T: Real>(a: &ComplexImage<T>, b: &ComplexImage<T>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).norm_sqr().to_f64_lossy())
        .sum::<f64>()
        .sqrt()
}

/// Runs the iteration from `x0` with momentum weights taken from `q(k)`,
/// where `q(0)` must be 1. A momentum coefficient of exactly zero skips the
/// extrapolation, so `q ≡ 1` reproduces the unaccelerated iterates bitwise.
pub fn iterate<T: Real, P: Prior<T> + ?Sized>(
    op: &ForwardModel<'_, T>,
    y: &KSpaceData<T>,
    x0: ComplexImage<T>,
    prior: &P,
    gamma: f64,
    cfg: &SolverConfig,
    q: &dyn Fn(usize, f64) -> f64,
) -> Result<(ComplexImage<T>, SolverTrace)> {
    cfg.validate()?;
    let mut trace = SolverTrace {
        gamma,
        ..SolverTrace::default()
    };
    let mut x_prev = x0;
    let mut s = x_prev.clone();
    let mut q_prev = 1.0;
    for k in 1..=cfg.max_iters {
        let x = pnp_step(op, y, &s, gamma, prior).map_err(|e| match e {
            Error::Divergence(m) => Error::Divergence(format!("{m} at iteration {k}")),
            other => other,
        })?;
        if !x.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite iterate at iteration {k} (gamma {gamma:e} too large?)"
            )));
        }
        let q_k = q(k, q_prev);
        let coef = (q_prev - 1.0) / q_k;
        s = if coef == 0.0 {
            x.clone()
        } else {
            let c = T::lit(coef);
            let data = x
                .data()
                .iter()
                .zip(x_prev.data())
                .map(|(&a, &b)| a + (a - b) * c)
                .collect::<Vec<Complex<T>>>();
            ComplexImage::from_vec(x.height(), x.width(), x.phases(), data)
                .map_err(|_| Error::Divergence(format!("non-finite extrapolation at iteration {k}")))?
        };
        let prev_norm = x_prev.norm().to_f64_lossy();
        let change = diff_norm(&x, &x_prev);
        let rel_change = if prev_norm > 0.0 { change / prev_norm } else { change };
        trace.iterations = k;
        if cfg.record_trace {
            trace.entries.push(TraceEntry {
                k,
                rel_change,
                datafit: op.datafit(&x, y)?.to_f64_lossy(),
                q: q_k,
            });
        }
        x_prev = x;
        q_prev = q_k;
        if rel_change < cfg.tol {
            break;
        }
    }
    Ok((x_prev, trace))
}

/// Full reconstruction from the zero-filled image.
pub fn reconstruct<T: Real, P: Prior<T> + ?Sized>(
    op: &ForwardModel<'_, T>,
    y: &KSpaceData<T>,
    prior: &P,
    cfg: &SolverConfig,
) -> Result<(ComplexImage<T>, SolverTrace)> {
    cfg.validate()?;
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => 1.0 / power_iteration_l(op, 100, 0)?.lambda,
    };
    let x0 = op.zero_filled(y, false)?;
    if cfg.accelerate {
        iterate(op, y, x0, prior, gamma, cfg, &|_, q| next_q(q))
    } else {
        iterate(op, y, x0, prior, gamma, cfg, &|_, _| 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerEstimate {
    pub lambda: f64,
    /// Relative change of the estimate at the last iteration.
    pub rel_change: f64,
    pub iterations: usize,
}

/// Largest eigenvalue of `HᴴH` by power iteration from a seeded Gaussian
/// start; stops early once the estimate changes by less than `1e-7`.
pub fn power_iteration_l<T: Real>(op: &ForwardModel<'_, T>, iters: usize, seed: u64) -> Result<PowerEstimate> {
    if iters == 0 {
        return Err(Error::invalid("power iteration needs at least one iteration"));
    }
    let (h, w, t) = op.image_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v = ComplexImage::from_fn(h, w, t, |_, _, _| {
        Complex::new(T::lit(normal.sample(&mut rng)), T::lit(normal.sample(&mut rng)))
    })?;
    v = v.scaled(T::one() / v.norm());
    let mut lambda = 0.0;
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;
    for k in 1..=iters {
        let hv = op.normal(&v)?;
        let est = hv.norm().to_f64_lossy();
        if !(est > 0.0) || !est.is_finite() {
            return Err(Error::invalid("forward operator annihilates the power-iteration vector"));
        }
        rel_change = (est - lambda).abs() / est;
        lambda = est;
        iterations = k;
        v = hv.scaled(T::lit(1.0 / est));
        if rel_change < 1e-7 {
            break;
        }
    }
    Ok(PowerEstimate {
        lambda,
        rel_change,
        iterations,
    })
}
