//! Command-line front end: `simulate`, `train`, `reconstruct`, `evaluate`.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{psnr, psnr_per_phase};
use crate::pipeline::{reconstruct_mode, simulate_subject, train_prior, undersampling_factor, Mode};
pub use config::{CliConfig, Paths};

#[derive(Debug, Parser)]
#[command(name = "pnpmri", version, about = "Radial multicoil MRI simulation, prior training and PnP reconstruction")]
pub struct Cli {
    /// Experiment file with `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one subject and write k-space, trajectory, coil maps and the true image.
    Simulate {
        /// Output directory (default: the directories of the configured paths).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the denoiser on the training subjects; writes the model and a loss log.
    Train {
        /// Model file; the loss log goes next to it with a `.log` extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct the simulated measurement.
    Reconstruct {
        /// zero_filled, denoiser_only or pnp.
        #[arg(long, default_value = "pnp")]
        mode: String,
        /// Result image; in pnp mode the trace goes next to it with a `.trace.tsv` extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print PSNR of a result against a reference, overall and per phase.
    Evaluate {
        /// Result image (default: the `result` path).
        result: Option<PathBuf>,
        /// Reference image (default: the `truth` path).
        reference: Option<PathBuf>,
    },
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        }),
        _ => Ok(()),
    }
}

fn load_config(cli: &Cli) -> Result<CliConfig> {
    let mut cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
        cfg.experiment.train.seed = seed;
    }
    Ok(cfg)
}

/// Runs one parsed invocation, writing its report to `out`.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be >= 1"));
        }
        // Fails only if a pool already exists, in which case it is reused.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Simulate { out: dir } => {
            if let Some(dir) = dir {
                cfg.paths = cfg.paths.with_simulation_dir(dir);
            }
            cfg.validate()?;
            simulate(&cfg, out)
        }
        Command::Train { out: model } => {
            if let Some(model) = model {
                cfg.paths.loss_log = model.with_extension("log");
                cfg.paths.model = model.clone();
            }
            cfg.validate()?;
            train_cmd(&cfg, out)
        }
        Command::Reconstruct { mode, out: result } => {
            let mode: Mode = mode.parse()?;
            if let Some(result) = result {
                cfg.paths.trace = result.with_extension("trace.tsv");
                cfg.paths.result = result.clone();
            }
            cfg.validate()?;
            reconstruct_cmd(&cfg, mode, out)
        }
        Command::Evaluate { result, reference } => {
            let result = result.clone().unwrap_or_else(|| cfg.paths.result.clone());
            let reference = reference.clone().unwrap_or_else(|| cfg.paths.truth.clone());
            evaluate(&result, &reference, out)
        }
    }
}

fn report(out: &mut dyn std::io::Write, line: String) -> Result<()> {
    writeln!(out, "{line}").map_err(|source| Error::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

fn simulate(cfg: &CliConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let e = &cfg.experiment;
    let (coils, traj) = e.acquisition()?;
    let subject = simulate_subject(e, &coils, &traj, e.phantom.seed)?;
    let p = &cfg.paths;
    for path in [&p.kspace, &p.trajectory, &p.coils, &p.truth] {
        ensure_parent(path)?;
    }
    io::save_kspace(&subject.kspace, &p.kspace)?;
    io::save_trajectory(&traj, &p.trajectory)?;
    io::save_coils(&coils, &p.coils)?;
    io::save_image(&subject.truth, &p.truth)?;
    let n = e.phantom.height.max(e.phantom.width);
    report(
        out,
        format!(
            "undersampling factor {:.4} ({} spokes per phase, {} phases, {} samples per coil)",
            undersampling_factor(n, e.spokes_per_phase),
            e.spokes_per_phase,
            e.phantom.phases,
            traj.samples() * e.phantom.phases
        ),
    )
}

fn train_cmd(cfg: &CliConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let t = &cfg.experiment.train;
    let (model, r) = train_prior(&cfg.experiment)?;
    ensure_parent(&cfg.paths.model)?;
    ensure_parent(&cfg.paths.loss_log)?;
    io::save_model(&model, &cfg.paths.model)?;
    let header = [
        ("epochs", t.epochs.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("lr", t.lr.to_string()),
        ("optimizer", format!("{:?}", t.optimizer)),
        ("loss", format!("{:?}", t.loss)),
        ("seed", t.seed.to_string()),
    ];
    r.write_loss_log(&cfg.paths.loss_log, &header)?;
    report(
        out,
        format!(
            "trained on {} pairs, final loss {:.6e}, {:.1} s, checksum {:016x}",
            r.pairs,
            r.final_loss,
            r.wall_time.as_secs_f64(),
            r.checksum
        ),
    )
}

fn reconstruct_cmd(cfg: &CliConfig, mode: Mode, out: &mut dyn std::io::Write) -> Result<()> {
    let p = &cfg.paths;
    let y = io::load_kspace::<f64>(&p.kspace)?;
    let traj = io::load_trajectory::<f64>(&p.trajectory)?;
    let coils = io::load_coils::<f64>(&p.coils)?;
    let model = if mode.needs_model() {
        Some(io::load_model::<f64>(&p.model)?)
    } else {
        None
    };
    let e = &cfg.experiment;
    let (x, trace) = reconstruct_mode(mode, &coils, &traj, &y, e.nufft, model.as_ref(), &e.solver)?;
    ensure_parent(&p.result)?;
    io::save_image(&x, &p.result)?;
    match trace {
        Some(trace) => {
            if e.solver.record_trace {
                ensure_parent(&p.trace)?;
                trace.write(&p.trace)?;
            }
            report(
                out,
                format!("pnp: {} iterations, gamma {:.6e}", trace.iterations, trace.gamma),
            )
        }
        None => Ok(()),
    }
}

fn evaluate(result: &Path, reference: &Path, out: &mut dyn std::io::Write) -> Result<()> {
    let x = io::load_image::<f64>(result)?;
    let truth = io::load_image::<f64>(reference)?;
    let all = psnr(&x, &truth)?;
    report(out, format!("psnr {:.4} dB (mse {:.6e}, peak {:.6e})", all.psnr_db, all.mse, all.peak))?;
    for (t, r) in psnr_per_phase(&x, &truth)?.iter().enumerate() {
        report(out, format!("phase {t}: psnr {:.4} dB", r.psnr_db))?;
    }
    Ok(())
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let command = Cli::command().after_long_help(config::describe_defaults());
    let cli = match command.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli, &mut std::io::stdout().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
