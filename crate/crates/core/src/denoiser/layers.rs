//! Single-sample building blocks on `(channels, height, width)` buffers.
//!
//! Every output element accumulates its terms in a fixed order
//! (input channel, kernel row, kernel column), so results do not depend on
//! how callers schedule samples across threads.

use crate::scalar::Real;

/// Square convolution with `kernel / 2` zero padding (size preserving).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    /// `(out, in, kh, kw)` row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> T {
        self.weight[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    pub fn forward(&self, input: &[T], h: usize, w: usize) -> Vec<T> {
        let hw = h * w;
        debug_assert_eq!(input.len(), self.in_channels * hw);
        let pad = (self.kernel / 2) as isize;
        let mut out = vec![T::zero(); self.out_channels * hw];
        for o in 0..self.out_channels {
            let dst = &mut out[o * hw..(o + 1) * hw];
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_channels {
                let src = &input[i * hw..(i + 1) * hw];
                for ky in 0..self.kernel {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..self.kernel {
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid_range(w, dx);
                        let wv = self.w(o, i, ky, kx);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let d = &mut dst[y * w + x0..y * w + x1];
                            let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (a, &b) in d.iter_mut().zip(s) {
                                *a += wv * b;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂input`.
    pub fn backward(
        &self,
        input: &[T],
        grad_out: &[T],
        h: usize,
        w: usize,
        grad: &mut ConvGrad<T>,
    ) -> Vec<T> {
        let hw = h * w;
        let pad = (self.kernel / 2) as isize;
        let k = self.kernel;
        let mut grad_in = vec![T::zero(); self.in_channels * hw];
        for o in 0..self.out_channels {
            let go = &grad_out[o * hw..(o + 1) * hw];
            grad.bias[o] += go.iter().copied().sum::<T>();
            for i in 0..self.in_channels {
                let src = &input[i * hw..(i + 1) * hw];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid_range(w, dx);
                        let widx = ((o * self.in_channels + i) * k + ky) * k + kx;
                        let wv = self.weight[widx];
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let g = &go[y * w + x0..y * w + x1];
                            let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (&a, &b) in g.iter().zip(s) {
                                acc += a * b;
                            }
                            let gi = &mut grad_in[i * hw + sy * w + sx0..i * hw + sy * w + sx0 + (x1 - x0)];
                            for (d, &a) in gi.iter_mut().zip(g) {
                                *d += wv * a;
                            }
                        }
                        grad.weight[widx] += acc;
                    }
                }
            }
        }
        grad_in
    }
}

/// Output rows `y` for which `y + d` stays inside `0..n`.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo.min(hi), hi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvGrad<T> {
    pub fn zeros_like(layer: &Conv2d<T>) -> Self {
        Self {
            weight: vec![T::zero(); layer.weight.len()],
            bias: vec![T::zero(); layer.bias.len()],
        }
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` by the post-activation output (`out > 0`).
pub fn relu_backward_inplace<T: Real>(grad: &mut [T], out: &[T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 average pooling; `h` and `w` must be even.
pub fn avg_pool2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                out.push((p[i] + p[i + 1] + p[i + w] + p[i + w + 1]) * quarter);
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(g: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let v = g[(ch * oh + y) * ow + xx] * quarter;
                let i = ch * h * w + 2 * y * w + 2 * xx;
                out[i] = v;
                out[i + 1] = v;
                out[i + w] = v;
                out[i + w + 1] = v;
            }
        }
    }
    out
}

/// Nearest-neighbour 2× upsampling from `(c, h, w)`.
pub fn upsample2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            let row = &x[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            for xx in 0..ow {
                out.push(row[xx / 2]);
            }
        }
    }
    out
}

/// Gradient of [`upsample2`]; `g` has shape `(c, 2h, 2w)`.
pub fn upsample2_backward<T: Real>(g: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let ow = 2 * w;
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let i = ch * 4 * h * w + 2 * y * ow + 2 * xx;
                out.push(g[i] + g[i + 1] + g[i + ow] + g[i + ow + 1]);
            }
        }
    }
    out
}
