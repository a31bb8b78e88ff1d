use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pnpmri");

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    let text = format!(
        "# tiny experiment\nheight = 16\nwidth = 16\nphases = 2\ncoils = 2\nspokes_per_phase = 8\n\
         train.epochs = 2\ntrain.subjects = 1, 2\ndata_dir = {}\n{extra}",
        dir.join("data").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cfg: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(cfg)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn full_pipeline_runs_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let data = dir.path().join("data");

    let sim = run(&cfg, &["simulate"]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    assert!(stdout(&sim).contains("undersampling factor 3.2500"), "{}", stdout(&sim));
    for f in ["kspace.ksp", "trajectory.trj", "coils.coil", "truth.cimg"] {
        assert!(data.join(f).is_file(), "{f}");
    }

    let tr = run(&cfg, &["train"]);
    assert!(tr.status.success(), "{}", String::from_utf8_lossy(&tr.stderr));
    let log = std::fs::read_to_string(data.join("loss.log")).unwrap();
    assert!(log.contains("# pairs 24"), "{log}");
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 2);

    for mode in ["zero_filled", "denoiser_only", "pnp"] {
        let out = data.join(format!("{mode}.cimg"));
        let r = run(&cfg, &["reconstruct", "--mode", mode, "--out", out.to_str().unwrap()]);
        assert!(r.status.success(), "{mode}: {}", String::from_utf8_lossy(&r.stderr));
        let e = Command::new(BIN)
            .args(["evaluate", out.to_str().unwrap(), data.join("truth.cimg").to_str().unwrap()])
            .output()
            .unwrap();
        assert!(e.status.success());
        let text = stdout(&e);
        assert!(text.starts_with("psnr "), "{text}");
        assert_eq!(text.lines().filter(|l| l.starts_with("phase ")).count(), 2);
    }
    let trace = std::fs::read_to_string(data.join("pnp.trace.tsv")).unwrap();
    assert_eq!(trace.lines().next().unwrap().split('\t').count(), 4);
}

#[test]
fn simulate_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&cfg, &["simulate", "--out", a.to_str().unwrap()]).status.success());
    assert!(run(&cfg, &["simulate", "--out", b.to_str().unwrap()]).status.success());
    for f in ["kspace.ksp", "trajectory.trj", "coils.coil", "truth.cimg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    assert!(run(&cfg, &["--seed", "5", "simulate", "--out", c.to_str().unwrap()]).status.success());
    assert_ne!(std::fs::read(a.join("kspace.ksp")).unwrap(), std::fs::read(c.join("kspace.ksp")).unwrap());
}

#[test]
fn zero_learning_rate_gives_flat_loss() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "train.lr = 0\n");
    let out = run(&cfg, &["train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("data/loss.log")).unwrap();
    let losses: Vec<&str> = log
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').nth(1).unwrap())
        .collect();
    assert_eq!(losses.len(), 2);
    assert_eq!(losses[0], losses[1]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");

    // Missing input file.
    assert_eq!(run(&cfg, &["reconstruct", "--mode", "zero_filled"]).status.code(), Some(1));

    assert!(run(&cfg, &["simulate"]).status.success());
    let ksp = dir.path().join("data/kspace.ksp");
    let good = std::fs::read(&ksp).unwrap();
    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"XXXX");
    std::fs::write(&ksp, &bad).unwrap();
    assert_eq!(run(&cfg, &["reconstruct", "--mode", "zero_filled"]).status.code(), Some(2));
    std::fs::write(&ksp, &good[..good.len() - 3]).unwrap();
    assert_eq!(run(&cfg, &["reconstruct", "--mode", "zero_filled"]).status.code(), Some(2));
    std::fs::write(&ksp, &good).unwrap();

    assert_eq!(run(&cfg, &["reconstruct", "--mode", "cs"]).status.code(), Some(2));
    assert_eq!(run(&cfg, &["bogus"]).status.code(), Some(2));
    assert_eq!(run(&cfg, &["--threads", "0", "simulate"]).status.code(), Some(2));
    let bad_cfg = small_config(dir.path(), "colour = red\n");
    assert_eq!(run(&bad_cfg, &["simulate"]).status.code(), Some(2));
    let overlap = small_config(dir.path(), "train.subjects = 0, 1\n");
    assert_eq!(run(&overlap, &["train"]).status.code(), Some(2));

    // A step far beyond 1/L overflows the iterates.
    let diverge = small_config(dir.path(), "solver.gamma = 1e6\nsolver.accelerate = false\n");
    assert!(run(&diverge, &["train"]).status.success());
    let out = run(&diverge, &["reconstruct", "--mode", "pnp"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration"));
}

#[test]
fn help_lists_configuration_defaults() {
    let out = Command::new(BIN).arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    for key in ["train.epochs", "solver.gamma", "spokes_per_phase", "noise_sigma", "--threads"] {
        assert!(text.contains(key), "{key} missing from help");
    }
}
