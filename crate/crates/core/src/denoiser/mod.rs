//! Small residual UNet over `(real, imag) × phase` channels, with exact
//! reverse-mode gradients.
//!
//! Layer order: two convolutions per encoder level, one bottleneck
//! convolution, one convolution per decoder level (deepest first), then the
//! linear output convolution. Every convolution except the last is followed
//! by a ReLU, and the network output is `x + body(x)`.

mod layers;
mod tensor;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::ComplexImage;
use crate::scalar::Real;

pub use layers::{Conv2d, ConvGrad};
pub use tensor::Tensor4;

use layers::{
    avg_pool2, avg_pool2_backward, relu_backward_inplace, relu_inplace, upsample2, upsample2_backward,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetArch {
    pub levels: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub io_channels: usize,
}

impl UNetArch {
    /// Default architecture for `phases` complex phases.
    pub fn for_phases(phases: usize) -> Self {
        Self {
            levels: 2,
            base_channels: 16,
            kernel: 3,
            io_channels: 2 * phases,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 || self.io_channels == 0 {
            return Err(Error::invalid(format!("degenerate architecture {self:?}")));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.levels > 8 {
            return Err(Error::invalid(format!("at most 8 levels supported, got {}", self.levels)));
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        3 * self.levels + 2
    }

    /// Required divisibility of spatial dimensions.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    fn level_channels(&self, l: usize) -> usize {
        self.base_channels << l
    }

    fn bottleneck_index(&self) -> usize {
        2 * self.levels
    }

    fn decoder_index(&self, l: usize) -> usize {
        2 * self.levels + 1 + (self.levels - 1 - l)
    }

    fn final_index(&self) -> usize {
        3 * self.levels + 1
    }

    /// `(out, in)` channel counts of every layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let big = self.level_channels(self.levels - 1);
        let mut shapes = Vec::with_capacity(self.layer_count());
        for l in 0..self.levels {
            let cin = if l == 0 { self.io_channels } else { self.level_channels(l - 1) };
            shapes.push((self.level_channels(l), cin));
            shapes.push((self.level_channels(l), self.level_channels(l)));
        }
        shapes.push((big, big));
        for l in (0..self.levels).rev() {
            let up = if l == self.levels - 1 { big } else { self.level_channels(l + 1) };
            shapes.push((self.level_channels(l), up + self.level_channels(l)));
        }
        shapes.push((self.io_channels, self.base_channels));
        shapes
    }
}

/// Network parameters; see the module docs for the layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel<T> {
    arch: UNetArch,
    layers: Vec<Conv2d<T>>,
}

/// Per-layer parameter gradients, laid out like [`DenoiserModel::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<ConvGrad<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &DenoiserModel<T>) -> Self {
        Self {
            layers: model.layers.iter().map(ConvGrad::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, &y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for g in &mut self.layers {
            g.weight.iter_mut().chain(g.bias.iter_mut()).for_each(|x| *x *= alpha);
        }
    }

    /// Weights then bias, layer by layer (the serialization order).
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|g| g.weight.iter().chain(&g.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|g| g.weight.iter_mut().chain(g.bias.iter_mut()))
    }
}

/// Activations recorded by [`DenoiserModel::forward_with_tape`].
#[derive(Clone, Debug)]
pub struct Tape<T> {
    shape: [usize; 4],
    samples: Vec<SampleTape<T>>,
}

impl<T> Tape<T> {
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
}

#[derive(Clone, Debug)]
struct SampleTape<T> {
    /// Input of every convolution, indexed like the layers.
    inputs: Vec<Vec<T>>,
    /// Post-ReLU output of every hidden convolution.
    outputs: Vec<Vec<T>>,
}

/// He-normal weights (`std = √(2 / fan_in)`) and zero biases.
pub fn init_model<T: Real>(arch: UNetArch, seed: u64) -> Result<DenoiserModel<T>> {
    let mut model = DenoiserModel::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut model.layers {
        let std = (2.0 / layer.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut layer.weight {
            *w = T::lit(normal.sample(&mut rng));
        }
    }
    Ok(model)
}

impl<T: Real> DenoiserModel<T> {
    /// All parameters zero: the body is identically zero, so the model is
    /// the identity map.
    pub fn zeros(arch: UNetArch) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| Conv2d::zeros(o, i, arch.kernel))
            .collect();
        Ok(Self { arch, layers })
    }

    /// Rebuilds a model from layers, checking them against `arch`.
    pub fn from_layers(arch: UNetArch, layers: Vec<Conv2d<T>>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if layers.len() != shapes.len() {
            return Err(Error::shape("layers", shapes.len(), layers.len()));
        }
        for (layer, &(o, i)) in layers.iter().zip(&shapes) {
            if layer.out_channels != o {
                return Err(Error::shape("layer output channels", o, layer.out_channels));
            }
            if layer.in_channels != i {
                return Err(Error::shape("layer input channels", i, layer.in_channels));
            }
            if layer.kernel != arch.kernel {
                return Err(Error::shape("kernel", arch.kernel, layer.kernel));
            }
            if layer.weight.len() != o * i * arch.kernel * arch.kernel || layer.bias.len() != o {
                return Err(Error::invalid("layer parameter count does not match its dimensions"));
            }
            if layer.weight.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite model parameter"));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn arch(&self) -> UNetArch {
        self.arch
    }

    pub fn layers(&self) -> &[Conv2d<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Conv2d<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv2d::param_count).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Zeroes the output convolution, turning the model into the identity.
    pub fn zero_final_layer(&mut self) {
        let last = self.layers.last_mut().expect("at least one layer");
        last.weight.iter_mut().chain(last.bias.iter_mut()).for_each(|v| *v = T::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> DenoiserModel<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        DenoiserModel {
            arch: self.arch,
            layers: self
                .layers
                .iter()
                .map(|l| Conv2d {
                    out_channels: l.out_channels,
                    in_channels: l.in_channels,
                    kernel: l.kernel,
                    weight: conv(&l.weight),
                    bias: conv(&l.bias),
                })
                .collect(),
        }
    }

    /// FNV-1a over the `f64` bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for v in self.params() {
            for b in v.to_f64_lossy().to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        if shape[1] != self.arch.io_channels {
            return Err(Error::shape("channels", self.arch.io_channels, shape[1]));
        }
        let d = self.arch.divisor();
        for (axis, n) in [("height", shape[2]), ("width", shape[3])] {
            if n % d != 0 {
                return Err(Error::invalid(format!(
                    "{axis} {n} must be divisible by {d} (2^levels)"
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.forward_with_tape(x)?.0)
    }

    /// Forward pass that also records the activations needed by
    /// [`backward`](Self::backward).
    pub fn forward_with_tape(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, Tape<T>)> {
        let shape = x.shape();
        self.check_input(shape)?;
        let (h, w) = (shape[2], shape[3]);
        let results: Vec<(Vec<T>, SampleTape<T>)> = (0..shape[0])
            .into_par_iter()
            .map(|b| self.forward_sample(x.sample(b), h, w))
            .collect();
        let mut out = Vec::with_capacity(x.data().len());
        let mut samples = Vec::with_capacity(results.len());
        for (o, tape) in results {
            out.extend(o);
            samples.push(tape);
        }
        Ok((Tensor4::from_vec_unchecked(shape, out), Tape { shape, samples }))
    }

    fn forward_sample(&self, x: &[T], h: usize, w: usize) -> (Vec<T>, SampleTape<T>) {
        let arch = self.arch;
        let n = arch.layer_count();
        let mut inputs: Vec<Vec<T>> = vec![Vec::new(); n];
        let mut outputs: Vec<Vec<T>> = vec![Vec::new(); n];
        let mut run = |idx: usize, input: Vec<T>, h: usize, w: usize, relu: bool| -> Vec<T> {
            let mut y = self.layers[idx].forward(&input, h, w);
            if relu {
                relu_inplace(&mut y);
            }
            inputs[idx] = input;
            outputs[idx] = y.clone();
            y
        };

        let (mut ch, mut hh, mut ww) = (arch.io_channels, h, w);
        let mut cur = x.to_vec();
        let mut skips = Vec::with_capacity(arch.levels);
        for l in 0..arch.levels {
            let a = run(2 * l, cur, hh, ww, true);
            let b = run(2 * l + 1, a, hh, ww, true);
            ch = arch.level_channels(l);
            cur = avg_pool2(&b, ch, hh, ww);
            skips.push(b);
            hh /= 2;
            ww /= 2;
        }
        cur = run(arch.bottleneck_index(), cur, hh, ww, true);
        for l in (0..arch.levels).rev() {
            let mut cat = upsample2(&cur, ch, hh, ww);
            hh *= 2;
            ww *= 2;
            cat.extend_from_slice(&skips[l]);
            cur = run(arch.decoder_index(l), cat, hh, ww, true);
            ch = arch.level_channels(l);
        }
        let body = run(arch.final_index(), cur, hh, ww, false);
        let out = x.iter().zip(&body).map(|(&a, &b)| a + b).collect();
        (out, SampleTape { inputs, outputs })
    }

    /// Reverse-mode gradients of `⟨grad_out, forward(x)⟩` with respect to the
    /// parameters and to `x`.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &Tensor4<T>) -> Result<(Gradients<T>, Tensor4<T>)> {
        if tape.samples.len() != tape.shape[0] {
            return Err(Error::invalid("tape does not belong to a completed forward pass"));
        }
        let shape = grad_out.shape();
        for (axis, i) in [("batch", 0), ("channels", 1), ("height", 2), ("width", 3)] {
            if shape[i] != tape.shape[i] {
                return Err(Error::shape(axis, tape.shape[i], shape[i]));
            }
        }
        if let Some(s) = tape.samples.first() {
            if s.inputs.len() != self.layers.len()
                || s.inputs[0].len() != self.arch.io_channels * shape[2] * shape[3]
            {
                return Err(Error::invalid("tape was recorded by a different architecture"));
            }
        }
        let (h, w) = (shape[2], shape[3]);
        let per_sample: Vec<(Gradients<T>, Vec<T>)> = tape
            .samples
            .par_iter()
            .enumerate()
            .map(|(b, s)| self.backward_sample(s, grad_out.sample(b), h, w))
            .collect();
        let mut grads = Gradients::zeros_like(self);
        let mut gx = Vec::with_capacity(grad_out.data().len());
        for (g, x) in per_sample {
            grads.add_assign(&g);
            gx.extend(x);
        }
        Ok((grads, Tensor4::from_vec_unchecked(shape, gx)))
    }

    fn backward_sample(&self, tape: &SampleTape<T>, grad_out: &[T], h: usize, w: usize) -> (Gradients<T>, Vec<T>) {
        let arch = self.arch;
        let mut grads = Gradients::zeros_like(self);
        let step = |idx: usize, g: &[T], hh: usize, ww: usize, grads: &mut Gradients<T>| -> Vec<T> {
            self.layers[idx].backward(&tape.inputs[idx], g, hh, ww, &mut grads.layers[idx])
        };

        let (mut hh, mut ww) = (h, w);
        let mut g = step(arch.final_index(), grad_out, hh, ww, &mut grads);
        let mut skip_grads: Vec<Vec<T>> = vec![Vec::new(); arch.levels];
        for l in 0..arch.levels {
            let idx = arch.decoder_index(l);
            relu_backward_inplace(&mut g, &tape.outputs[idx]);
            let mut gcat = step(idx, &g, hh, ww, &mut grads);
            let skip = gcat.split_off(gcat.len() - arch.level_channels(l) * hh * ww);
            skip_grads[l] = skip;
            let up_ch = gcat.len() / (hh * ww);
            hh /= 2;
            ww /= 2;
            g = upsample2_backward(&gcat, up_ch, hh, ww);
        }
        let idx = arch.bottleneck_index();
        relu_backward_inplace(&mut g, &tape.outputs[idx]);
        g = step(idx, &g, hh, ww, &mut grads);
        for l in (0..arch.levels).rev() {
            hh *= 2;
            ww *= 2;
            let mut gb = avg_pool2_backward(&g, arch.level_channels(l), hh, ww);
            gb.iter_mut().zip(&skip_grads[l]).for_each(|(a, &b)| *a += b);
            relu_backward_inplace(&mut gb, &tape.outputs[2 * l + 1]);
            let mut ga = step(2 * l + 1, &gb, hh, ww, &mut grads);
            relu_backward_inplace(&mut ga, &tape.outputs[2 * l]);
            g = step(2 * l, &ga, hh, ww, &mut grads);
        }
        g.iter_mut().zip(grad_out).for_each(|(a, &b)| *a += b);
        (grads, g)
    }
}

/// Real and imaginary planes per phase: channel `2t` holds `Re`, `2t + 1`
/// holds `Im` of phase `t`.
pub fn image_to_channels<T: Real>(img: &ComplexImage<T>) -> Vec<T> {
    let hw = img.height() * img.width();
    let mut out = Vec::with_capacity(2 * img.data().len());
    for t in 0..img.phases() {
        let p = img.phase(t);
        out.extend(p.iter().map(|z| z.re));
        out.extend(p.iter().map(|z| z.im));
        debug_assert_eq!(out.len(), 2 * (t + 1) * hw);
    }
    out
}

/// Inverse of [`image_to_channels`].
pub fn channels_to_image<T: Real>(c: &[T], height: usize, width: usize, phases: usize) -> Result<ComplexImage<T>> {
    let hw = height * width;
    if c.len() != 2 * hw * phases {
        return Err(Error::shape("channel elements", 2 * hw * phases, c.len()));
    }
    let mut data = Vec::with_capacity(hw * phases);
    for t in 0..phases {
        let re = &c[2 * t * hw..(2 * t + 1) * hw];
        let im = &c[(2 * t + 1) * hw..(2 * t + 2) * hw];
        data.extend(re.iter().zip(im).map(|(&a, &b)| Complex::new(a, b)));
    }
    ComplexImage::from_vec(height, width, phases, data)
}

/// Mirror index without repeating the edge sample (`…, 2, 1, 0, 1, 2, …`).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Applies the network to a full image, reflect-padding the bottom and right
/// edges up to the required divisibility and cropping back afterwards.
pub fn denoise_image<T: Real>(model: &DenoiserModel<T>, img: &ComplexImage<T>) -> Result<ComplexImage<T>> {
    let (h, w, t) = img.shape();
    let expected = model.arch.io_channels / 2;
    if 2 * t != model.arch.io_channels {
        return Err(Error::shape("phases", expected, t));
    }
    let d = model.arch.divisor();
    let (ph, pw) = (h.div_ceil(d) * d, w.div_ceil(d) * d);
    let channels = image_to_channels(img);
    let hw = h * w;
    let mut padded = Vec::with_capacity(2 * t * ph * pw);
    for c in 0..2 * t {
        let plane = &channels[c * hw..(c + 1) * hw];
        for r in 0..ph {
            let row = &plane[reflect(r, h) * w..(reflect(r, h) + 1) * w];
            padded.extend((0..pw).map(|col| row[reflect(col, w)]));
        }
    }
    let out = model.forward(&Tensor4::from_vec([1, 2 * t, ph, pw], padded)?)?;
    let mut cropped = Vec::with_capacity(channels.len());
    for c in 0..2 * t {
        let plane = &out.data()[c * ph * pw..(c + 1) * ph * pw];
        for r in 0..h {
            cropped.extend_from_slice(&plane[r * pw..r * pw + w]);
        }
    }
    channels_to_image(&cropped, h, w, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn probe_arch() -> UNetArch {
        UNetArch {
            levels: 2,
            base_channels: 4,
            kernel: 3,
            io_channels: 2,
        }
    }

    fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Random non-zero biases so every bias gradient is exercised.
    fn probe_model(seed: u64) -> DenoiserModel<f64> {
        let mut m = init_model::<f64>(probe_arch(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for l in m.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        m
    }

    fn projected(m: &DenoiserModel<f64>, x: &Tensor4<f64>, r: &Tensor4<f64>) -> f64 {
        let y = m.forward(x).unwrap();
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn default_architecture_size() {
        let arch = UNetArch::for_phases(4);
        let m = DenoiserModel::<f64>::zeros(arch).unwrap();
        assert_eq!(m.layers().len(), 8);
        assert_eq!(m.param_count(), 53_176);
        assert_eq!(arch.layer_shapes()[5], (32, 64));
        assert_eq!(arch.layer_shapes()[6], (16, 48));
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_model::<f64>(UNetArch::for_phases(2), 7).unwrap();
        let b = init_model::<f64>(UNetArch::for_phases(2), 7).unwrap();
        let c = init_model::<f64>(UNetArch::for_phases(2), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn he_scaling() {
        let m = init_model::<f64>(UNetArch::for_phases(4), 3).unwrap();
        let mut checked = 0;
        for l in m.layers().iter().filter(|l| l.fan_in() >= 144) {
            let n = l.weight.len() as f64;
            let mean = l.weight.iter().sum::<f64>() / n;
            let std = (l.weight.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
            let target = (2.0 / l.fan_in() as f64).sqrt();
            assert!((std / target - 1.0).abs() < 0.2, "std {std} vs {target}");
            checked += 1;
        }
        assert!(checked >= 5);
    }

    #[test]
    fn zero_body_is_identity() {
        let mut m = init_model::<f64>(UNetArch::for_phases(1), 1).unwrap();
        m.zero_final_layer();
        let x = random_tensor([2, 2, 8, 12], 4);
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_input_gives_zero_output_at_init() {
        let m = init_model::<f64>(UNetArch::for_phases(1), 1).unwrap();
        let x = Tensor4::zeros([1, 2, 8, 8]);
        assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let m = init_model::<f64>(UNetArch::for_phases(1), 2).unwrap();
        let x = random_tensor([1, 2, 8, 8], 5);
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
    }

    #[test]
    fn non_divisible_input_rejected() {
        let m = DenoiserModel::<f64>::zeros(probe_arch()).unwrap();
        let err = m.forward(&Tensor4::zeros([1, 2, 6, 8])).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
        assert!(m.forward(&Tensor4::zeros([1, 4, 8, 8])).is_err());
    }

    #[test]
    fn backward_rejects_mismatched_gradient() {
        let m = probe_model(1);
        let (_, tape) = m.forward_with_tape(&random_tensor([1, 2, 8, 8], 1)).unwrap();
        assert!(m.backward(&tape, &Tensor4::zeros([1, 2, 16, 8])).is_err());
        assert!(m.backward(&tape, &Tensor4::zeros([2, 2, 8, 8])).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let m = probe_model(2);
        let x = random_tensor([1, 2, 8, 8], 2);
        let (_, tape) = m.forward_with_tape(&x).unwrap();
        let (g, gx) = m.backward(&tape, &Tensor4::zeros(x.shape())).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn final_bias_gradient_of_output_sum_is_pixel_count() {
        let m = probe_model(3);
        let x = random_tensor([1, 2, 8, 8], 3);
        let (_, tape) = m.forward_with_tape(&x).unwrap();
        let ones = Tensor4::from_vec(x.shape(), vec![1.0; x.data().len()]).unwrap();
        let (g, _) = m.backward(&tape, &ones).unwrap();
        assert_eq!(g.layers.last().unwrap().bias, vec![64.0, 64.0]);

        // finite-difference oracle on the same bias
        let h = 1e-5;
        let mut plus = m.clone();
        plus.layers_mut().last_mut().unwrap().bias[0] += h;
        let mut minus = m.clone();
        minus.layers_mut().last_mut().unwrap().bias[0] -= h;
        let fd = (projected(&plus, &x, &ones) - projected(&minus, &x, &ones)) / (2.0 * h);
        assert!((fd - 64.0).abs() < 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = probe_model(4);
        let x = random_tensor([1, 2, 8, 8], 6);
        let r = random_tensor([1, 2, 8, 8], 7);
        let (_, tape) = m.forward_with_tape(&x).unwrap();
        let (g, gx) = m.backward(&tape, &r).unwrap();
        let h = 1e-5;
        let analytic: Vec<f64> = g.iter().copied().collect();
        let mut worst: f64 = 0.0;
        for (k, &a) in analytic.iter().enumerate() {
            let mut plus = m.clone();
            *plus.params_mut().nth(k).unwrap() += h;
            let mut minus = m.clone();
            *minus.params_mut().nth(k).unwrap() -= h;
            let fd = (projected(&plus, &x, &r) - projected(&minus, &x, &r)) / (2.0 * h);
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
        assert!(worst <= 1e-4, "worst parameter relative error {worst}");

        for k in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[k] += h;
            let mut xm = x.clone();
            xm.data_mut()[k] -= h;
            let fd = (projected(&m, &xp, &r) - projected(&m, &xm, &r)) / (2.0 * h);
            let a = gx.data()[k];
            assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6) <= 1e-4, "input {k}: {a} vs {fd}");
        }
    }

    #[test]
    fn batch_backward_sums_sample_gradients() {
        let m = probe_model(5);
        let x = random_tensor([3, 2, 8, 8], 8);
        let r = random_tensor([3, 2, 8, 8], 9);
        let (_, tape) = m.forward_with_tape(&x).unwrap();
        let (g, _) = m.backward(&tape, &r).unwrap();
        let mut sum = Gradients::zeros_like(&m);
        for b in 0..3 {
            let xb = Tensor4::from_vec([1, 2, 8, 8], x.sample(b).to_vec()).unwrap();
            let rb = Tensor4::from_vec([1, 2, 8, 8], r.sample(b).to_vec()).unwrap();
            let (_, t) = m.forward_with_tape(&xb).unwrap();
            sum.add_assign(&m.backward(&t, &rb).unwrap().0);
        }
        assert_eq!(g, sum);
    }

    #[test]
    fn denoise_preserves_shape_on_odd_sizes() {
        let m = init_model::<f64>(UNetArch::for_phases(4), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = ComplexImage::<f64>::from_fn(63, 61, 4, |_, _, _| Complex::new(rng.random(), rng.random())).unwrap();
        let out = denoise_image(&m, &img).unwrap();
        assert_eq!(out.shape(), (63, 61, 4));
        assert!(out.is_finite());
    }

    #[test]
    fn zero_body_denoiser_is_identity_on_images() {
        let m = DenoiserModel::<f64>::zeros(UNetArch::for_phases(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = ComplexImage::<f64>::from_fn(13, 9, 2, |_, _, _| Complex::new(rng.random(), rng.random())).unwrap();
        assert_eq!(denoise_image(&m, &img).unwrap(), img);
    }

    #[test]
    fn denoise_rejects_wrong_phase_count() {
        let m = DenoiserModel::<f64>::zeros(UNetArch::for_phases(2)).unwrap();
        let img = ComplexImage::<f64>::zeros(8, 8, 3).unwrap();
        assert!(matches!(
            denoise_image(&m, &img),
            Err(Error::ShapeMismatch { axis: "phases", .. })
        ));
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (0..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(idx, vec![0, 1, 2, 1, 0, 1, 2, 1]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn channel_packing_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = ComplexImage::<f64>::from_fn(5, 4, 3, |_, _, _| Complex::new(rng.random(), rng.random())).unwrap();
        let c = image_to_channels(&img);
        assert_eq!(c[20], img.get(0, 0, 0).im);
        assert_eq!(channels_to_image(&c, 5, 4, 3).unwrap(), img);
    }
}
