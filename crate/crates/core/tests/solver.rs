use nalgebra::DMatrix;
use num_complex::Complex;

use pnpmri::forward_model::{make_radial_trajectory, simulate_measurement, ForwardModel, NufftConfig, SpokeScheme, Trajectory};
use pnpmri::grid::{make_coil_maps, make_phantom, CoilSensitivities, ComplexImage, PhantomKind, PhantomSpec};
use pnpmri::metrics::psnr;
use pnpmri::pnp::{power_iteration_l, reconstruct, IdentityPrior, SolverConfig};

fn phantom(n: usize, phases: usize) -> ComplexImage<f64> {
    make_phantom(&PhantomSpec {
        kind: PhantomKind::EllipseDynamic,
        height: n,
        width: n,
        phases,
        motion_amplitude: 0.1,
        seed: 0,
    })
    .unwrap()
}

/// Every grid frequency of an `n × n` image, once per phase.
fn cartesian(n: usize, phases: usize) -> Trajectory<f64> {
    let f = |j: usize| (j as f64 - (n / 2) as f64) / n as f64;
    let grid: Vec<[f64; 2]> = (0..n * n).map(|i| [f(i % n), f(i / n)]).collect();
    Trajectory::from_samples(vec![grid; phases], vec![vec![1.0 / (n * n) as f64; n * n]; phases]).unwrap()
}

#[test]
fn power_iteration_matches_explicit_svd() {
    let n = 8;
    let coils = CoilSensitivities::<f64>::uniform(n, n).unwrap();
    let traj = cartesian(n, 1);
    let op = ForwardModel::new(&coils, &traj, NufftConfig::default()).unwrap();
    let m = traj.samples();
    let mut h = DMatrix::<Complex<f64>>::zeros(m, n * n);
    for j in 0..n * n {
        let mut e = ComplexImage::zeros(n, n, 1).unwrap();
        e.data_mut()[j] = Complex::new(1.0, 0.0);
        for (i, v) in op.apply(&e).unwrap().data().iter().enumerate() {
            h[(i, j)] = *v;
        }
    }
    let sigma = h.singular_values().max();
    let est = power_iteration_l(&op, 200, 0).unwrap();
    let rel = (est.lambda - sigma * sigma).abs() / (sigma * sigma);
    assert!(rel <= 0.05, "power iteration {} vs SVD {}", est.lambda, sigma * sigma);
    assert!(est.rel_change < 1e-4);
}

#[test]
fn scaling_the_data_leaves_the_step_size_unchanged() {
    let coils = make_coil_maps::<f64>(16, 16, 2).unwrap();
    let traj = make_radial_trajectory::<f64>(16, 8, 1, SpokeScheme::GoldenAngle).unwrap();
    let op = ForwardModel::new(&coils, &traj, NufftConfig::default()).unwrap();
    let y = op.apply(&phantom(16, 1)).unwrap();
    let cfg = SolverConfig {
        max_iters: 1,
        ..SolverConfig::default()
    };
    let (_, a) = reconstruct(&op, &y, &IdentityPrior, &cfg).unwrap();
    let (_, b) = reconstruct(&op, &y.scaled(7.0), &IdentityPrior, &cfg).unwrap();
    assert_eq!(a.gamma, b.gamma);
}

#[test]
fn identity_prior_recovers_dense_noiseless_phantom() {
    let (n, t) = (16, 2);
    let coils = make_coil_maps::<f64>(n, n, 2).unwrap();
    let traj = cartesian(n, t);
    let nufft = NufftConfig::default();
    let truth = phantom(n, t);
    let y = simulate_measurement(&truth, &coils, &traj, nufft, 0.0, 0).unwrap();
    let op = ForwardModel::new(&coils, &traj, nufft).unwrap();
    let cfg = SolverConfig {
        max_iters: 200,
        accelerate: false,
        ..SolverConfig::default()
    };
    let (x, trace) = reconstruct(&op, &y, &IdentityPrior, &cfg).unwrap();
    let db = psnr(&x, &truth).unwrap().psnr_db;
    assert!(db >= 40.0, "{db} dB after {} iterations", trace.iterations);
}

#[test]
fn acceleration_reaches_plain_data_fit_sooner() {
    let (n, t) = (16, 2);
    let coils = make_coil_maps::<f64>(n, n, 2).unwrap();
    let traj = make_radial_trajectory::<f64>(n, 8, t, SpokeScheme::GoldenAngle).unwrap();
    let nufft = NufftConfig::default();
    let y = simulate_measurement(&phantom(n, t), &coils, &traj, nufft, 0.01, 0).unwrap();
    let op = ForwardModel::new(&coils, &traj, nufft).unwrap();
    let base = SolverConfig {
        max_iters: 100,
        tol: 0.0,
        ..SolverConfig::default()
    };
    let (_, plain) = reconstruct(&op, &y, &IdentityPrior, &SolverConfig { accelerate: false, ..base.clone() }).unwrap();
    let (_, fast) = reconstruct(&op, &y, &IdentityPrior, &base).unwrap();
    let target = plain.entries.last().unwrap().datafit;
    let k = fast.entries.iter().find(|e| e.datafit <= target).map(|e| e.k);
    assert!(matches!(k, Some(k) if k < plain.iterations), "accelerated run reached {target} at {k:?}");
}
