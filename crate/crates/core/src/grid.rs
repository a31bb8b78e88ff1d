//! Image and coil containers plus synthetic phantoms.
//!
//! Images are stored phase-major: element `(row, col, t)` lives at
//! `t * H * W + row * W + col`, the same order used by the `.cimg` format.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Complex image with explicit (height, width, phase) axes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage<T> {
    height: usize,
    width: usize,
    phases: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> ComplexImage<T> {
    pub fn zeros(height: usize, width: usize, phases: usize) -> Result<Self> {
        check_dims(height, width, phases)?;
        Ok(Self {
            height,
            width,
            phases,
            data: vec![Complex::new(T::zero(), T::zero()); height * width * phases],
        })
    }

    /// Wraps `data` (phase-major), rejecting wrong lengths and non-finite values.
    pub fn from_vec(
        height: usize,
        width: usize,
        phases: usize,
        data: Vec<Complex<T>>,
    ) -> Result<Self> {
        check_dims(height, width, phases)?;
        if data.len() != height * width * phases {
            return Err(Error::shape("elements", height * width * phases, data.len()));
        }
        if let Some(i) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid(format!("non-finite image element at index {i}")));
        }
        Ok(Self {
            height,
            width,
            phases,
            data,
        })
    }

    /// Builds an image from a per-element function of `(row, col, t)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        phases: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex<T>,
    ) -> Result<Self> {
        check_dims(height, width, phases)?;
        let mut data = Vec::with_capacity(height * width * phases);
        for t in 0..phases {
            for r in 0..height {
                for c in 0..width {
                    data.push(f(r, c, t));
                }
            }
        }
        Self::from_vec(height, width, phases, data)
    }

    pub(crate) fn from_vec_unchecked(
        height: usize,
        width: usize,
        phases: usize,
        data: Vec<Complex<T>>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * phases);
        Self {
            height,
            width,
            phases,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    /// `(H, W, T)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.phases)
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex<T>> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, t: usize) -> usize {
        (t * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, t: usize) -> Complex<T> {
        self.data[self.index(row, col, t)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, t: usize, v: Complex<T>) {
        let i = self.index(row, col, t);
        self.data[i] = v;
    }

    /// One phase as a contiguous row-major `H*W` slice.
    pub fn phase(&self, t: usize) -> &[Complex<T>] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn phase_mut(&mut self, t: usize) -> &mut [Complex<T>] {
        let n = self.height * self.width;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.height != other.height {
            return Err(Error::shape("height", self.height, other.height));
        }
        if self.width != other.width {
            return Err(Error::shape("width", self.width, other.width));
        }
        if self.phases != other.phases {
            return Err(Error::shape("phases", self.phases, other.phases));
        }
        Ok(())
    }

    pub fn norm_sqr(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> T {
        self.norm_sqr().sqrt()
    }

    /// Inner product `Σ a · conj(b)`.
    pub fn dot(&self, other: &Self) -> Complex<T> {
        self.data
            .iter()
            .zip(&other.data)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a * b.conj())
    }

    pub fn scaled(&self, alpha: T) -> Self {
        let data = self.data.iter().map(|z| z * alpha).collect();
        Self::from_vec_unchecked(self.height, self.width, self.phases, data)
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: T, other: &Self) -> Self {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b * alpha)
            .collect();
        Self::from_vec_unchecked(self.height, self.width, self.phases, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn magnitude(&self) -> Vec<T> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Real>(&self) -> ComplexImage<U> {
        let data = self
            .data
            .iter()
            .map(|z| Complex::new(U::lit(z.re.to_f64_lossy()), U::lit(z.im.to_f64_lossy())))
            .collect();
        ComplexImage::from_vec_unchecked(self.height, self.width, self.phases, data)
    }
}

fn check_dims(height: usize, width: usize, phases: usize) -> Result<()> {
    if height == 0 || width == 0 || phases == 0 {
        return Err(Error::invalid(format!(
            "image dimensions must be positive, got {height}x{width}x{phases}"
        )));
    }
    Ok(())
}

/// Per-coil complex sensitivity maps, coil-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities<T> {
    coils: usize,
    height: usize,
    width: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CoilSensitivities<T> {
    pub fn from_vec(
        coils: usize,
        height: usize,
        width: usize,
        data: Vec<Complex<T>>,
    ) -> Result<Self> {
        if coils == 0 {
            return Err(Error::invalid("coil count must be at least 1"));
        }
        check_dims(height, width, 1)?;
        if data.len() != coils * height * width {
            return Err(Error::shape("elements", coils * height * width, data.len()));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("non-finite coil sensitivity"));
        }
        Ok(Self {
            coils,
            height,
            width,
            data,
        })
    }

    /// Single coil with unit sensitivity everywhere.
    pub fn uniform(height: usize, width: usize) -> Result<Self> {
        Self::from_vec(
            1,
            height,
            width,
            vec![Complex::new(T::one(), T::zero()); height * width],
        )
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn map(&self, coil: usize) -> &[Complex<T>] {
        let n = self.height * self.width;
        &self.data[coil * n..(coil + 1) * n]
    }

    /// Pixelwise `Σ_i |S_i|²`, summed in coil order.
    pub fn sum_of_squares(&self) -> Vec<T> {
        let n = self.height * self.width;
        let mut sos = vec![T::zero(); n];
        for coil in 0..self.coils {
            for (acc, s) in sos.iter_mut().zip(self.map(coil)) {
                *acc += s.norm_sqr();
            }
        }
        sos
    }

    /// True for pixels inside the circle inscribed in the image.
    pub fn in_support(&self, row: usize, col: usize) -> bool {
        let (y, x) = normalized_coords(self.height, self.width, row, col);
        x * x + y * y <= 1.0
    }
}

/// Pixel-center coordinates scaled so the image spans `[-1, 1]` on both
/// axes; returns `(y, x)` with `y` pointing up.
pub(crate) fn normalized_coords(height: usize, width: usize, row: usize, col: usize) -> (f64, f64) {
    let y = ((height as f64 - 1.0) / 2.0 - row as f64) / (height as f64 / 2.0);
    let x = (col as f64 - (width as f64 - 1.0) / 2.0) / (width as f64 / 2.0);
    (y, x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    SheppLogan,
    EllipseDynamic,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp_logan" => Ok(Self::SheppLogan),
            "ellipse_dynamic" => Ok(Self::EllipseDynamic),
            other => Err(Error::invalid(format!("unknown phantom kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub height: usize,
    pub width: usize,
    pub phases: usize,
    /// Translation of the moving ellipse over the full cycle, as a fraction of `height`.
    pub motion_amplitude: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 || self.phases == 0 {
            return Err(Error::invalid(format!(
                "phantom needs H >= 2, W >= 2, T >= 1, got {}x{}x{}",
                self.height, self.width, self.phases
            )));
        }
        if !(0.0..=0.25).contains(&self.motion_amplitude) {
            return Err(Error::invalid(format!(
                "motion_amplitude must lie in [0, 0.25], got {}",
                self.motion_amplitude
            )));
        }
        Ok(())
    }

    /// Row offset (pixels, downward) of the moving ellipse at phase `t`.
    pub fn motion_shift_rows(&self, t: usize) -> f64 {
        if self.phases < 2 {
            return 0.0;
        }
        self.motion_amplitude * self.height as f64 * t as f64 / (self.phases - 1) as f64
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    intensity: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    phi_deg: f64,
}

impl Ellipse {
    const fn new(intensity: f64, a: f64, b: f64, x0: f64, y0: f64, phi_deg: f64) -> Self {
        Self {
            intensity,
            a,
            b,
            x0,
            y0,
            phi_deg,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let dx = x - self.x0;
        let dy = y - self.y0;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    fn jittered(mut self, rng: &mut ChaCha8Rng, max_intensity: f64) -> Self {
        self.x0 += rng.random_range(-0.02..0.02);
        self.y0 += rng.random_range(-0.02..0.02);
        self.a *= rng.random_range(0.95..1.05);
        self.b *= rng.random_range(0.95..1.05);
        if self.intensity > 0.0 {
            self.intensity = (self.intensity + rng.random_range(-0.02..0.02)).clamp(0.0, max_intensity);
        }
        self
    }
}

/// Modified Shepp-Logan table (intensities chosen so the image lies in [0, 1]).
const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse::new(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    Ellipse::new(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    Ellipse::new(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    Ellipse::new(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    Ellipse::new(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    Ellipse::new(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    Ellipse::new(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    Ellipse::new(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    Ellipse::new(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    Ellipse::new(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Body plus static organs, painted in order (later ellipses overwrite).
const DYNAMIC_STATIC: [Ellipse; 4] = [
    Ellipse::new(0.3, 0.85, 0.7, 0.0, 0.0, 0.0),
    Ellipse::new(0.5, 0.15, 0.2, -0.45, 0.2, 10.0),
    Ellipse::new(0.5, 0.2, 0.12, 0.4, -0.35, -15.0),
    Ellipse::new(0.1, 0.08, 0.08, -0.1, -0.45, 0.0),
];

/// Moving ellipse; always the only region at intensity 1.0.
const DYNAMIC_MOVING: Ellipse = Ellipse::new(1.0, 0.22, 0.16, 0.2, 0.2, 0.0);

/// Renders an analytic phantom. Real-valued, in `[0, 1]`, deterministic in the spec.
pub fn make_phantom<T: Real>(spec: &PhantomSpec) -> Result<ComplexImage<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height, spec.width);

    match spec.kind {
        PhantomKind::SheppLogan => {
            let ellipses: Vec<Ellipse> = if spec.seed == 0 {
                SHEPP_LOGAN.to_vec()
            } else {
                SHEPP_LOGAN.iter().map(|e| e.jittered(&mut rng, 0.2)).collect()
            };
            let slice: Vec<f64> = (0..h * w)
                .map(|i| {
                    let (y, x) = normalized_coords(h, w, i / w, i % w);
                    let v: f64 = ellipses
                        .iter()
                        .filter(|e| e.contains(x, y))
                        .map(|e| e.intensity)
                        .sum();
                    v.clamp(0.0, 1.0)
                })
                .collect();
            ComplexImage::from_fn(h, w, spec.phases, |r, c, _| {
                Complex::new(T::lit(slice[r * w + c]), T::zero())
            })
        }
        PhantomKind::EllipseDynamic => {
            let statics: Vec<Ellipse> = if spec.seed == 0 {
                DYNAMIC_STATIC.to_vec()
            } else {
                DYNAMIC_STATIC.iter().map(|e| e.jittered(&mut rng, 0.6)).collect()
            };
            ComplexImage::from_fn(h, w, spec.phases, |r, c, t| {
                let (y, x) = normalized_coords(h, w, r, c);
                let mut v = 0.0;
                for e in &statics {
                    if e.contains(x, y) {
                        v = e.intensity;
                    }
                }
                let mut moving = DYNAMIC_MOVING;
                moving.y0 -= spec.motion_shift_rows(t) / (h as f64 / 2.0);
                if moving.contains(x, y) {
                    v = moving.intensity;
                }
                Complex::new(T::lit(v), T::zero())
            })
        }
    }
}

/// Synthetic coil maps.
///
/// One coil is unit magnitude with a linear phase ramp. Several coils are
/// Gaussian lobes centred on the image boundary at angles `2πi/C`, each with
/// its own linear phase ramp, jointly scaled so the largest sum-of-squares
/// inside the inscribed circle is 1.
pub fn make_coil_maps<T: Real>(
    height: usize,
    width: usize,
    coils: usize,
) -> Result<CoilSensitivities<T>> {
    if coils == 0 {
        return Err(Error::invalid("coil count must be at least 1"));
    }
    check_dims(height, width, 1)?;
    const LOBE_SIGMA: f64 = 1.0;

    let mut maps = Vec::with_capacity(coils * height * width);
    for i in 0..coils {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / coils as f64;
        let (sy, sx) = theta.sin_cos();
        for r in 0..height {
            for c in 0..width {
                let (y, x) = normalized_coords(height, width, r, c);
                let phase = 0.5 * std::f64::consts::PI * (x * sx + y * sy) + theta;
                let mag = if coils == 1 {
                    1.0
                } else {
                    let d2 = (x - sx).powi(2) + (y - sy).powi(2);
                    (-d2 / (2.0 * LOBE_SIGMA * LOBE_SIGMA)).exp()
                };
                maps.push((mag, phase));
            }
        }
    }

    let scale = if coils == 1 {
        1.0
    } else {
        let n = height * width;
        let mut peak: f64 = 0.0;
        for p in 0..n {
            let (y, x) = normalized_coords(height, width, p / width, p % width);
            if x * x + y * y <= 1.0 {
                let sos: f64 = (0..coils).map(|i| maps[i * n + p].0.powi(2)).sum();
                peak = peak.max(sos);
            }
        }
        if peak > 0.0 {
            1.0 / peak.sqrt()
        } else {
            1.0
        }
    };

    let data = maps
        .into_iter()
        .map(|(mag, phase)| {
            let z = Complex::from_polar(mag * scale, phase);
            Complex::new(T::lit(z.re), T::lit(z.im))
        })
        .collect();
    CoilSensitivities::from_vec(coils, height, width, data)
}
