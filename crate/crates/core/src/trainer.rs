//! Self-supervised training of the denoiser on pairs of downsampled
//! variants of zero-filled reconstructions.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{denoise_image, image_to_channels, DenoiserModel, Gradients, Tensor4};
use crate::downsampling::{multiscale_downsample, training_pairs};
use crate::error::{Error, Result};
use crate::grid::ComplexImage;
use crate::metrics::psnr;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::ADAM),
            other => Err(Error::invalid(format!("unknown optimizer `{other}` (sgd, adam)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    L2,
    L1,
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Self::L2),
            "l1" => Ok(Self::L1),
            other => Err(Error::invalid(format!("unknown loss `{other}` (l2, l1)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub loss: Loss,
    pub factor_n: usize,
    pub seed: u64,
    /// Phantom seeds of the training subjects.
    pub subjects: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lr: 1e-3,
            optimizer: Optimizer::ADAM,
            loss: Loss::L2,
            factor_n: 2,
            seed: 0,
            subjects: (1..=8).collect(),
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted as a no-op run.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.factor_n < 2 {
            return Err(Error::invalid(format!("factor_n must be >= 2, got {}", self.factor_n)));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::invalid("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub wall_time: Duration,
    pub checksum: u64,
    pub pairs: usize,
}

impl TrainReport {
    /// One line per epoch: 1-based index and mean loss, 17 significant
    /// digits, preceded by `# key value` header lines.
    pub fn loss_log(&self, header: &[(&str, String)]) -> String {
        let mut s = String::new();
        for (k, v) in header {
            let _ = writeln!(s, "# {k} {v}");
        }
        let _ = writeln!(s, "# pairs {}", self.pairs);
        let _ = writeln!(s, "# checksum {:016x}", self.checksum);
        for (e, l) in self.epoch_losses.iter().enumerate() {
            let _ = writeln!(s, "{}\t{:.16e}", e + 1, l);
        }
        s
    }

    pub fn write_loss_log(&self, path: &Path, header: &[(&str, String)]) -> Result<()> {
        std::fs::write(path, self.loss_log(header)).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// All ordered variant pairs of every subject, subject by subject.
pub fn build_training_set<T: Real>(
    subjects: &[ComplexImage<T>],
    factor_n: usize,
) -> Result<Vec<(ComplexImage<T>, ComplexImage<T>)>> {
    if subjects.is_empty() {
        return Err(Error::invalid("training needs at least one subject"));
    }
    let mut pairs = Vec::new();
    for s in subjects {
        pairs.extend(training_pairs(&multiscale_downsample(s, factor_n)?));
    }
    Ok(pairs)
}

struct AdamState<T> {
    m: Gradients<T>,
    v: Gradients<T>,
    step: i32,
}

/// Loss of one sample (mean over its elements) and its gradient, scaled by
/// `1 / batch`.
fn sample_loss<T: Real>(loss: Loss, out: &[T], target: &[T], batch: usize, grad: &mut [T]) -> f64 {
    let n = out.len() as f64;
    let scale = T::lit(1.0 / (n * batch as f64));
    let mut acc = 0.0f64;
    for ((g, &o), &t) in grad.iter_mut().zip(out).zip(target) {
        let d = o - t;
        match loss {
            Loss::L2 => {
                acc += (d * d).to_f64_lossy();
                *g = T::lit(2.0) * d * scale;
            }
            Loss::L1 => {
                acc += d.abs().to_f64_lossy();
                *g = if d > T::zero() {
                    scale
                } else if d < T::zero() {
                    -scale
                } else {
                    T::zero()
                };
            }
        }
    }
    acc / n
}

/// Mini-batch training with per-epoch seeded shuffling.
///
/// Gradients flow through the input image only; the target is data. The
/// per-epoch loss is the mean of per-pair losses summed in pair order, so it
/// does not depend on the shuffle.
pub fn train<T: Real>(
    mut model: DenoiserModel<T>,
    pairs: &[(ComplexImage<T>, ComplexImage<T>)],
    cfg: &TrainConfig,
) -> Result<(DenoiserModel<T>, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let first = pairs
        .first()
        .ok_or_else(|| Error::invalid("training needs at least one pair"))?;
    let (h, w, t) = first.0.shape();
    for (a, b) in pairs {
        a.same_shape(&first.0)?;
        b.same_shape(&first.0)?;
    }
    if 2 * t != model.arch().io_channels {
        return Err(Error::shape("phases", model.arch().io_channels / 2, t));
    }
    let chw = [2 * t, h, w];
    let inputs: Vec<Vec<T>> = pairs.iter().map(|(a, _)| image_to_channels(a)).collect();
    let targets: Vec<Vec<T>> = pairs.iter().map(|(_, b)| image_to_channels(b)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut adam = AdamState {
        m: Gradients::zeros_like(&model),
        v: Gradients::zeros_like(&model),
        step: 0,
    };
    let lr = T::lit(cfg.lr);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut losses = vec![0.0f64; pairs.len()];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let xs: Vec<&[T]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let x = Tensor4::stack(&xs, chw)?;
            let (out, tape) = model.forward_with_tape(&x)?;
            let mut grad = Tensor4::zeros(out.shape());
            for (k, &i) in batch.iter().enumerate() {
                losses[i] = sample_loss(cfg.loss, out.sample(k), &targets[i], batch.len(), grad.sample_mut(k));
                if !losses[i].is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite loss at epoch {} batch {}",
                        epoch + 1,
                        bi + 1
                    )));
                }
            }
            let (g, _) = model.backward(&tape, &grad)?;
            apply_update(&mut model, &g, cfg.optimizer, lr, &mut adam);
            if !model.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite parameters after epoch {} batch {}",
                    epoch + 1,
                    bi + 1
                )));
            }
        }
        epoch_losses.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }

    let report = TrainReport {
        final_loss: *epoch_losses.last().expect("epochs >= 1"),
        epoch_losses,
        wall_time: start.elapsed(),
        checksum: model.checksum(),
        pairs: pairs.len(),
    };
    Ok((model, report))
}

fn apply_update<T: Real>(
    model: &mut DenoiserModel<T>,
    g: &Gradients<T>,
    opt: Optimizer,
    lr: T,
    adam: &mut AdamState<T>,
) {
    match opt {
        Optimizer::Sgd => {
            for (p, &d) in model.params_mut().zip(g.iter()) {
                *p -= lr * d;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.step += 1;
            let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
            let c1 = T::one() - b1.powi(adam.step);
            let c2 = T::one() - b2.powi(adam.step);
            let params = model.params_mut();
            let state = adam.m.iter_mut().zip(adam.v.iter_mut());
            for ((p, &d), (m, v)) in params.zip(g.iter()).zip(state) {
                *m = b1 * *m + (T::one() - b1) * d;
                *v = b2 * *v + (T::one() - b2) * d * d;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// PSNR of the denoised zero-filled image against the simulated truth.
pub fn evaluate_denoiser<T: Real>(
    model: &DenoiserModel<T>,
    zero_filled: &ComplexImage<T>,
    truth: &ComplexImage<T>,
) -> Result<f64> {
    zero_filled.same_shape(truth)?;
    Ok(psnr(&denoise_image(model, zero_filled)?, truth)?.psnr_db)
}
