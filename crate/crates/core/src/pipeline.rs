//! Synthetic experiment plumbing shared by the command-line front end and
//! the integration tests: simulate subjects, train the prior, reconstruct.

use std::str::FromStr;

use crate::denoiser::{denoise_image, init_model, DenoiserModel, UNetArch};
use crate::error::{Error, Result};
use crate::forward_model::{
    make_radial_trajectory, simulate_measurement, ForwardModel, KSpaceData, NufftConfig, SpokeScheme, Trajectory,
};
use crate::grid::{make_coil_maps, make_phantom, CoilSensitivities, ComplexImage, PhantomKind, PhantomSpec};
use crate::pnp::{reconstruct, SolverConfig, SolverTrace};
use crate::trainer::{build_training_set, train, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Geometry and motion of every subject; `phantom.seed` selects the
    /// subject that `simulate` and `reconstruct` work on.
    pub phantom: PhantomSpec,
    pub coils: usize,
    pub spokes_per_phase: usize,
    pub scheme: SpokeScheme,
    pub noise_sigma: f64,
    /// Seeds the measurement noise.
    pub seed: u64,
    pub nufft: NufftConfig,
    pub train: TrainConfig,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec {
                kind: PhantomKind::EllipseDynamic,
                height: 64,
                width: 64,
                phases: 4,
                motion_amplitude: 0.1,
                seed: 0,
            },
            coils: 4,
            spokes_per_phase: 16,
            scheme: SpokeScheme::GoldenAngle,
            noise_sigma: 0.01,
            seed: 0,
            nufft: NufftConfig::default(),
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        if self.coils == 0 {
            return Err(Error::invalid("coils must be >= 1"));
        }
        if self.spokes_per_phase == 0 {
            return Err(Error::invalid("spokes_per_phase must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        self.nufft.validate()?;
        self.train.validate()?;
        self.solver.validate()?;
        if self.train.subjects.contains(&self.phantom.seed) {
            return Err(Error::invalid(format!(
                "subject {} is both a training subject and the reconstruction subject",
                self.phantom.seed
            )));
        }
        Ok(())
    }

    pub fn arch(&self) -> UNetArch {
        UNetArch::for_phases(self.phantom.phases)
    }

    /// Coil maps and trajectory shared by all subjects.
    pub fn acquisition(&self) -> Result<(CoilSensitivities<f64>, Trajectory<f64>)> {
        let p = &self.phantom;
        let coils = make_coil_maps(p.height, p.width, self.coils)?;
        let traj = make_radial_trajectory(p.height.max(p.width), self.spokes_per_phase, p.phases, self.scheme)?;
        Ok((coils, traj))
    }

    /// Noise seed of one subject, distinct across subjects.
    pub fn noise_seed(&self, subject: u64) -> u64 {
        self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ subject
    }
}

/// Spokes needed for Nyquist sampling of an `n`-pixel field of view.
pub fn nyquist_spokes(n: usize) -> usize {
    (std::f64::consts::FRAC_PI_2 * n as f64).ceil() as usize
}

pub fn undersampling_factor(n: usize, spokes: usize) -> f64 {
    nyquist_spokes(n) as f64 / spokes as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: u64,
    pub truth: ComplexImage<f64>,
    pub kspace: KSpaceData<f64>,
    pub zero_filled: ComplexImage<f64>,
}

pub fn simulate_subject(
    cfg: &ExperimentConfig,
    coils: &CoilSensitivities<f64>,
    traj: &Trajectory<f64>,
    id: u64,
) -> Result<Subject> {
    let spec = PhantomSpec {
        seed: id,
        ..cfg.phantom.clone()
    };
    let truth = make_phantom(&spec)?;
    let kspace = simulate_measurement(&truth, coils, traj, cfg.nufft, cfg.noise_sigma, cfg.noise_seed(id))?;
    let zero_filled = ForwardModel::new(coils, traj, cfg.nufft)?.zero_filled(&kspace, false)?;
    Ok(Subject {
        id,
        truth,
        kspace,
        zero_filled,
    })
}

/// Simulates every training subject and trains a freshly initialised model.
pub fn train_prior(cfg: &ExperimentConfig) -> Result<(DenoiserModel<f64>, TrainReport)> {
    cfg.train.validate()?;
    let (coils, traj) = cfg.acquisition()?;
    let images = cfg
        .train
        .subjects
        .iter()
        .map(|&id| Ok(simulate_subject(cfg, &coils, &traj, id)?.zero_filled))
        .collect::<Result<Vec<_>>>()?;
    let pairs = build_training_set(&images, cfg.train.factor_n)?;
    // Start from the identity map: with a random output layer the body's
    // initial output swamps the artifacts and Adam collapses it to zero.
    let mut model = init_model(cfg.arch(), cfg.train.seed)?;
    model.zero_final_layer();
    train(model, &pairs, &cfg.train)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    ZeroFilled,
    DenoiserOnly,
    Pnp,
}

impl Mode {
    pub fn needs_model(self) -> bool {
        self != Mode::ZeroFilled
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_filled" => Ok(Self::ZeroFilled),
            "denoiser_only" => Ok(Self::DenoiserOnly),
            "pnp" => Ok(Self::Pnp),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (zero_filled, denoiser_only, pnp)"
            ))),
        }
    }
}

/// Reconstructs `y` in the given mode; only `Pnp` produces a trace.
pub fn reconstruct_mode(
    mode: Mode,
    coils: &CoilSensitivities<f64>,
    traj: &Trajectory<f64>,
    y: &KSpaceData<f64>,
    nufft: NufftConfig,
    model: Option<&DenoiserModel<f64>>,
    solver: &SolverConfig,
) -> Result<(ComplexImage<f64>, Option<SolverTrace>)> {
    let op = ForwardModel::new(coils, traj, nufft)?;
    let need = || model.ok_or_else(|| Error::invalid("this mode needs a denoiser model"));
    match mode {
        Mode::ZeroFilled => Ok((op.zero_filled(y, false)?, None)),
        Mode::DenoiserOnly => Ok((denoise_image(need()?, &op.zero_filled(y, false)?)?, None)),
        Mode::Pnp => {
            let (x, trace) = reconstruct(&op, y, need()?, solver)?;
            Ok((x, Some(trace)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undersampling_arithmetic() {
        assert_eq!(nyquist_spokes(64), 101);
        assert!((undersampling_factor(64, 16) - 6.3125).abs() < 1e-15);
    }

    #[test]
    fn subjects_differ_and_repeat() {
        let cfg = ExperimentConfig {
            phantom: PhantomSpec {
                height: 16,
                width: 16,
                phases: 2,
                ..ExperimentConfig::default().phantom
            },
            coils: 2,
            spokes_per_phase: 8,
            ..ExperimentConfig::default()
        };
        let (coils, traj) = cfg.acquisition().unwrap();
        let a = simulate_subject(&cfg, &coils, &traj, 1).unwrap();
        let b = simulate_subject(&cfg, &coils, &traj, 2).unwrap();
        assert_ne!(a.truth, b.truth);
        assert_eq!(a, simulate_subject(&cfg, &coils, &traj, 1).unwrap());
        assert_eq!(traj.samples(), 8 * 32);
    }

    #[test]
    fn validation_subject_must_not_be_trained_on() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.train.subjects.push(0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn modes_parse() {
        assert_eq!("pnp".parse::<Mode>().unwrap(), Mode::Pnp);
        assert!("cs".parse::<Mode>().is_err());
        assert!(!Mode::ZeroFilled.needs_model());
    }
}
