//! `key = value` experiment files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; [`describe_defaults`] lists them with their default values.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pipeline::ExperimentConfig;

/// Input and output locations used by the subcommands.
#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub kspace: PathBuf,
    pub trajectory: PathBuf,
    pub coils: PathBuf,
    pub truth: PathBuf,
    pub model: PathBuf,
    pub loss_log: PathBuf,
    pub result: PathBuf,
    pub trace: PathBuf,
}

impl Paths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            kspace: dir.join("kspace.ksp"),
            trajectory: dir.join("trajectory.trj"),
            coils: dir.join("coils.coil"),
            truth: dir.join("truth.cimg"),
            model: dir.join("model.msn"),
            loss_log: dir.join("loss.log"),
            result: dir.join("result.cimg"),
            trace: dir.join("trace.tsv"),
        }
    }

    /// Moves the four simulation outputs into `dir`.
    pub fn with_simulation_dir(mut self, dir: &Path) -> Self {
        let d = Self::in_dir(dir);
        self.kspace = d.kspace;
        self.trajectory = d.trajectory;
        self.coils = d.coils;
        self.truth = d.truth;
        self
    }

    fn all(&self) -> [(&'static str, &PathBuf); 8] {
        [
            ("kspace", &self.kspace),
            ("trajectory", &self.trajectory),
            ("coils", &self.coils),
            ("truth", &self.truth),
            ("model", &self.model),
            ("loss_log", &self.loss_log),
            ("result", &self.result),
            ("trace", &self.trace),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.all();
        for (i, (ka, a)) in all.iter().enumerate() {
            for (kb, b) in &all[i + 1..] {
                if a == b {
                    return Err(Error::invalid(format!(
                        "paths `{ka}` and `{kb}` both point to {}",
                        a.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Default for Paths {
    fn default() -> Self {
        Self::in_dir(Path::new("data"))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CliConfig {
    pub experiment: ExperimentConfig,
    pub paths: Paths,
}

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("key `{key}` expects true/false, got `{value}`"))),
    }
}

impl CliConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let e = &mut self.experiment;
        let p = &mut self.paths;
        match key {
            "phantom" => e.phantom.kind = value.parse()?,
            "height" => e.phantom.height = parse_value(key, value)?,
            "width" => e.phantom.width = parse_value(key, value)?,
            "phases" => e.phantom.phases = parse_value(key, value)?,
            "motion_amplitude" => e.phantom.motion_amplitude = parse_value(key, value)?,
            "subject" => e.phantom.seed = parse_value(key, value)?,
            "coils" => e.coils = parse_value(key, value)?,
            "spokes_per_phase" => e.spokes_per_phase = parse_value(key, value)?,
            "scheme" => e.scheme = value.parse()?,
            "noise_sigma" => e.noise_sigma = parse_value(key, value)?,
            "seed" => {
                e.seed = parse_value(key, value)?;
                e.train.seed = e.seed;
            }
            "nufft.oversampling" => e.nufft.oversampling = parse_value(key, value)?,
            "nufft.kernel_width" => e.nufft.kernel_width = parse_value(key, value)?,
            "nufft.kernel_beta" => e.nufft.kernel_beta = parse_value(key, value)?,
            "train.epochs" => e.train.epochs = parse_value(key, value)?,
            "train.batch_size" => e.train.batch_size = parse_value(key, value)?,
            "train.lr" => e.train.lr = parse_value(key, value)?,
            "train.optimizer" => e.train.optimizer = value.parse()?,
            "train.loss" => e.train.loss = value.parse()?,
            "train.factor_n" => e.train.factor_n = parse_value(key, value)?,
            "train.subjects" => {
                e.train.subjects = value
                    .split(',')
                    .map(|s| parse_value(key, s.trim()))
                    .collect::<Result<_>>()?;
            }
            "solver.gamma" => {
                e.solver.gamma = match value {
                    "auto" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "solver.max_iters" => e.solver.max_iters = parse_value(key, value)?,
            "solver.accelerate" => e.solver.accelerate = parse_bool(key, value)?,
            "solver.tol" => e.solver.tol = parse_value(key, value)?,
            "solver.record_trace" => e.solver.record_trace = parse_bool(key, value)?,
            "data_dir" => *p = Paths::in_dir(Path::new(value)),
            "kspace" => p.kspace = value.into(),
            "trajectory" => p.trajectory = value.into(),
            "coils_file" => p.coils = value.into(),
            "truth" => p.truth = value.into(),
            "model" => p.model = value.into(),
            "loss_log" => p.loss_log = value.into(),
            "result" => p.result = value.into(),
            "trace" => p.trace = value.into(),
            other => return Err(Error::invalid(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::invalid(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::invalid(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.paths.validate()
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Every key with its default, one per line, for `--help`.
pub fn describe_defaults() -> String {
    let d = CliConfig::default();
    let e = &d.experiment;
    let p = &d.paths;
    let subjects: Vec<String> = e.train.subjects.iter().map(u64::to_string).collect();
    let rows: Vec<(&str, String, &str)> = vec![
        ("phantom", "ellipse_dynamic".into(), "ellipse_dynamic | shepp_logan"),
        ("height", e.phantom.height.to_string(), "image rows"),
        ("width", e.phantom.width.to_string(), "image columns"),
        ("phases", e.phantom.phases.to_string(), "respiratory phases"),
        ("motion_amplitude", e.phantom.motion_amplitude.to_string(), "moving-ellipse travel, fraction of height"),
        ("subject", e.phantom.seed.to_string(), "phantom seed simulated and reconstructed"),
        ("coils", e.coils.to_string(), "receive coils"),
        ("spokes_per_phase", e.spokes_per_phase.to_string(), "radial spokes per phase"),
        ("scheme", "golden_angle".into(), "golden_angle | uniform"),
        ("noise_sigma", e.noise_sigma.to_string(), "k-space noise std per component"),
        ("seed", e.seed.to_string(), "noise, initialisation and shuffling seed"),
        ("nufft.oversampling", e.nufft.oversampling.to_string(), "grid oversampling"),
        ("nufft.kernel_width", e.nufft.kernel_width.to_string(), "Kaiser-Bessel width (cells)"),
        ("nufft.kernel_beta", format!("{:.6}", e.nufft.kernel_beta), "Kaiser-Bessel shape"),
        ("train.epochs", e.train.epochs.to_string(), ""),
        ("train.batch_size", e.train.batch_size.to_string(), ""),
        ("train.lr", e.train.lr.to_string(), "learning rate"),
        ("train.optimizer", "adam".into(), "adam | sgd"),
        ("train.loss", "l2".into(), "l2 | l1"),
        ("train.factor_n", e.train.factor_n.to_string(), "downsampling factor"),
        ("train.subjects", subjects.join(","), "training phantom seeds"),
        ("solver.gamma", "auto".into(), "step size; auto = 1/L by power iteration"),
        ("solver.max_iters", e.solver.max_iters.to_string(), ""),
        ("solver.accelerate", e.solver.accelerate.to_string(), "Nesterov momentum"),
        ("solver.tol", e.solver.tol.to_string(), "relative-change stopping threshold"),
        ("solver.record_trace", e.solver.record_trace.to_string(), ""),
        ("data_dir", "data".into(), "sets every path below to <dir>/<default name>"),
        ("kspace", p.kspace.display().to_string(), ""),
        ("trajectory", p.trajectory.display().to_string(), ""),
        ("coils_file", p.coils.display().to_string(), ""),
        ("truth", p.truth.display().to_string(), ""),
        ("model", p.model.display().to_string(), ""),
        ("loss_log", p.loss_log.display().to_string(), ""),
        ("result", p.result.display().to_string(), ""),
        ("trace", p.trace.display().to_string(), ""),
    ];
    let mut s = String::from("Configuration keys (key = value, defaults shown):\n");
    for (k, v, note) in rows {
        if note.is_empty() {
            s.push_str(&format!("  {k:<20} {v}\n"));
        } else {
            s.push_str(&format!("  {k:<20} {v:<16} {note}\n"));
        }
    }
    s
}
