//! 2D type-2 NUFFT by Kaiser-Bessel gridding and its exact adjoint.
//!
//! Forward: deapodize, zero-pad onto the oversampled grid, FFT, interpolate
//! with a separable Kaiser-Bessel kernel. The adjoint runs the transpose of
//! every stage in reverse order, so `⟨F a, b⟩ = ⟨a, Fᴴ b⟩` holds to rounding.
//!
//! Pixel `(row, col)` sits at `(row − ⌊H/2⌋, col − ⌊W/2⌋)`; sample `k`
//! evaluates `Σ_r img(r) · exp(−2πi (kx·x + ky·y))`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::forward_model::trajectory::validate_coords;
use crate::scalar::Real;

/// Gridding parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NufftConfig {
    pub oversampling: f64,
    pub kernel_width: usize,
    pub kernel_beta: f64,
}

impl NufftConfig {
    /// Beatty et al. shape parameter for a given width and oversampling ratio.
    pub fn beatty_beta(kernel_width: usize, oversampling: f64) -> f64 {
        let w = kernel_width as f64;
        let a = oversampling;
        std::f64::consts::PI * ((w / a).powi(2) * (a - 0.5).powi(2) - 0.8).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.oversampling >= 1.25) || !self.oversampling.is_finite() {
            return Err(Error::invalid(format!(
                "oversampling must be >= 1.25, got {}",
                self.oversampling
            )));
        }
        if self.kernel_width < 2 || self.kernel_width % 2 != 0 {
            return Err(Error::invalid(format!(
                "kernel_width must be even and >= 2, got {}",
                self.kernel_width
            )));
        }
        if !(self.kernel_beta > 0.0) || !self.kernel_beta.is_finite() {
            return Err(Error::invalid(format!(
                "kernel_beta must be positive, got {}",
                self.kernel_beta
            )));
        }
        Ok(())
    }
}

impl Default for NufftConfig {
    fn default() -> Self {
        Self {
            oversampling: 2.0,
            kernel_width: 4,
            kernel_beta: Self::beatty_beta(4, 2.0),
        }
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

#[derive(Clone, Copy, Debug)]
struct KaiserBessel {
    width: f64,
    beta: f64,
}

impl KaiserBessel {
    /// Kernel value at offset `u` grid cells from its centre.
    fn eval(&self, u: f64) -> f64 {
        let r = 2.0 * u / self.width;
        let s = 1.0 - r * r;
        if s < 0.0 {
            0.0
        } else {
            bessel_i0(self.beta * s.sqrt())
        }
    }

    /// Continuous Fourier transform of the kernel at frequency `nu`
    /// (cycles per grid cell).
    fn transform(&self, nu: f64) -> f64 {
        let a = std::f64::consts::PI * self.width * nu;
        let z2 = self.beta * self.beta - a * a;
        if z2 > 0.0 {
            let z = z2.sqrt();
            self.width * z.sinh() / z
        } else if z2 < 0.0 {
            let z = (-z2).sqrt();
            self.width * z.sin() / z
        } else {
            self.width
        }
    }
}

/// Per-axis geometry of the oversampled grid.
#[derive(Clone, Debug)]
struct Axis<T> {
    n: usize,
    grid: usize,
    /// Deapodization factor per image index, `1 / φ̂(offset / grid)`.
    deapod: Vec<T>,
}

impl<T: Real> Axis<T> {
    fn new(n: usize, oversampling: f64, kernel: &KaiserBessel) -> Self {
        let mut grid = (oversampling * n as f64).ceil() as usize;
        grid += grid % 2;
        let centre = n / 2;
        let deapod = (0..n)
            .map(|i| {
                let offset = i as f64 - centre as f64;
                T::lit(1.0 / kernel.transform(offset / grid as f64))
            })
            .collect();
        Self { n, grid, deapod }
    }

    /// Grid index holding image index `i` (offsets wrap modulo the grid).
    #[inline]
    fn grid_index(&self, i: usize) -> usize {
        let offset = i as isize - (self.n / 2) as isize;
        offset.rem_euclid(self.grid as isize) as usize
    }
}

/// Reusable NUFFT plan for a fixed image size and configuration.
#[derive(Clone)]
pub struct NufftPlan<T: Real> {
    cfg: NufftConfig,
    kernel: KaiserBessel,
    rows: Axis<T>,
    cols: Axis<T>,
    fft_rows_fwd: Arc<dyn Fft<T>>,
    fft_cols_fwd: Arc<dyn Fft<T>>,
    fft_rows_inv: Arc<dyn Fft<T>>,
    fft_cols_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for NufftPlan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NufftPlan")
            .field("cfg", &self.cfg)
            .field("image", &(self.rows.n, self.cols.n))
            .field("grid", &(self.rows.grid, self.cols.grid))
            .finish()
    }
}

impl<T: Real> NufftPlan<T> {
    pub fn new(height: usize, width: usize, cfg: NufftConfig) -> Result<Self> {
        cfg.validate()?;
        if height == 0 || width == 0 {
            return Err(Error::invalid("NUFFT image dimensions must be positive"));
        }
        let kernel = KaiserBessel {
            width: cfg.kernel_width as f64,
            beta: cfg.kernel_beta,
        };
        let rows = Axis::new(height, cfg.oversampling, &kernel);
        let cols = Axis::new(width, cfg.oversampling, &kernel);
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            kernel,
            fft_rows_fwd: planner.plan_fft_forward(cols.grid),
            fft_cols_fwd: planner.plan_fft_forward(rows.grid),
            fft_rows_inv: planner.plan_fft_inverse(cols.grid),
            fft_cols_inv: planner.plan_fft_inverse(rows.grid),
            rows,
            cols,
        })
    }

    pub fn config(&self) -> &NufftConfig {
        &self.cfg
    }

    pub fn height(&self) -> usize {
        self.rows.n
    }

    pub fn width(&self) -> usize {
        self.cols.n
    }

    /// Oversampled grid size `(rows, cols)`.
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.rows.grid, self.cols.grid)
    }

    fn footprints(&self, k: [T; 2]) -> (Vec<(usize, T)>, Vec<(usize, T)>) {
        let ky = k[1].to_f64_lossy();
        let kx = k[0].to_f64_lossy();
        (self.axis_footprint(&self.rows, ky), self.axis_footprint(&self.cols, kx))
    }

    fn axis_footprint(&self, axis: &Axis<T>, k: f64) -> Vec<(usize, T)> {
        let u = k * axis.grid as f64;
        let half = self.kernel.width / 2.0;
        let lo = (u - half).ceil() as isize;
        let hi = (u + half).floor() as isize;
        (lo..=hi)
            .map(|m| {
                let idx = m.rem_euclid(axis.grid as isize) as usize;
                (idx, T::lit(self.kernel.eval(u - m as f64)))
            })
            .collect()
    }

    /// Row-then-column 2D FFT of a `rows.grid × cols.grid` buffer.
    fn fft2(&self, grid: &mut [Complex<T>], inverse: bool) {
        let (gr, gc) = (self.rows.grid, self.cols.grid);
        let (row_fft, col_fft) = if inverse {
            (&self.fft_rows_inv, &self.fft_cols_inv)
        } else {
            (&self.fft_rows_fwd, &self.fft_cols_fwd)
        };
        row_fft.process(grid);
        let mut t = transpose(grid, gr, gc);
        col_fft.process(&mut t);
        let back = transpose(&t, gc, gr);
        grid.copy_from_slice(&back);
    }

    /// Evaluates the image's Fourier sum at every coordinate.
    ///
    /// `image` is one row-major `H × W` plane.
    pub fn forward(&self, image: &[Complex<T>], coords: &[[T; 2]]) -> Result<Vec<Complex<T>>> {
        if image.len() != self.rows.n * self.cols.n {
            return Err(Error::shape("pixels", self.rows.n * self.cols.n, image.len()));
        }
        validate_coords(coords)?;
        Ok(self.forward_unchecked(image, coords))
    }

    pub(crate) fn forward_unchecked(
        &self,
        image: &[Complex<T>],
        coords: &[[T; 2]],
    ) -> Vec<Complex<T>> {
        let (gr, gc) = (self.rows.grid, self.cols.grid);
        let zero = Complex::new(T::zero(), T::zero());
        let mut grid = vec![zero; gr * gc];
        for r in 0..self.rows.n {
            let gy = self.rows.grid_index(r);
            let dr = self.rows.deapod[r];
            for c in 0..self.cols.n {
                let gx = self.cols.grid_index(c);
                grid[gy * gc + gx] = image[r * self.cols.n + c] * (dr * self.cols.deapod[c]);
            }
        }
        self.fft2(&mut grid, false);

        coords
            .iter()
            .map(|&k| {
                let (fy, fx) = self.footprints(k);
                let mut acc = zero;
                for &(iy, wy) in &fy {
                    let row = &grid[iy * gc..(iy + 1) * gc];
                    let mut inner = zero;
                    for &(ix, wx) in &fx {
                        inner = inner + row[ix] * wx;
                    }
                    acc = acc + inner * wy;
                }
                acc
            })
            .collect()
    }

    /// Exact adjoint of [`forward`](Self::forward).
    pub fn adjoint(&self, samples: &[Complex<T>], coords: &[[T; 2]]) -> Result<Vec<Complex<T>>> {
        if samples.len() != coords.len() {
            return Err(Error::shape("samples", coords.len(), samples.len()));
        }
        validate_coords(coords)?;
        Ok(self.adjoint_unchecked(samples, coords))
    }

    pub(crate) fn adjoint_unchecked(
        &self,
        samples: &[Complex<T>],
        coords: &[[T; 2]],
    ) -> Vec<Complex<T>> {
        let (gr, gc) = (self.rows.grid, self.cols.grid);
        let zero = Complex::new(T::zero(), T::zero());
        let mut grid = vec![zero; gr * gc];
        for (&k, &v) in coords.iter().zip(samples) {
            let (fy, fx) = self.footprints(k);
            for &(iy, wy) in &fy {
                let vy = v * wy;
                let row = &mut grid[iy * gc..(iy + 1) * gc];
                for &(ix, wx) in &fx {
                    row[ix] = row[ix] + vy * wx;
                }
            }
        }
        self.fft2(&mut grid, true);

        let mut image = Vec::with_capacity(self.rows.n * self.cols.n);
        for r in 0..self.rows.n {
            let gy = self.rows.grid_index(r);
            let dr = self.rows.deapod[r];
            for c in 0..self.cols.n {
                let gx = self.cols.grid_index(c);
                image.push(grid[gy * gc + gx] * (dr * self.cols.deapod[c]));
            }
        }
        image
    }
}

fn transpose<T: Copy>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(src[r * cols + c]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type C = Complex<f64>;

    fn direct_dft(img: &[C], h: usize, w: usize, coords: &[[f64; 2]]) -> Vec<C> {
        coords
            .iter()
            .map(|k| {
                let mut acc = C::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let y = r as f64 - (h / 2) as f64;
                        let x = c as f64 - (w / 2) as f64;
                        let ph = -2.0 * std::f64::consts::PI * (k[0] * x + k[1] * y);
                        acc += img[r * w + c] * C::from_polar(1.0, ph);
                    }
                }
                acc
            })
            .collect()
    }

    fn random_coords(rng: &mut ChaCha8Rng, m: usize) -> Vec<[f64; 2]> {
        (0..m)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect()
    }

    fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<C> {
        (0..n)
            .map(|_| C::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn rel_err(a: &[C], b: &[C]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn bessel_i0_reference_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-15);
        assert!((bessel_i0(10.0) - 2_815.716_628_466_254).abs() < 1e-9);
    }

    #[test]
    fn default_beta_matches_beatty() {
        assert!((NufftConfig::default().kernel_beta - 8.996_152_293_560_44).abs() < 1e-12);
    }

    #[test]
    fn centred_delta_gives_constant_spectrum() {
        let plan = NufftPlan::<f64>::new(16, 16, NufftConfig::default()).unwrap();
        let mut img = vec![C::new(0.0, 0.0); 256];
        img[8 * 16 + 8] = C::new(1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coords = random_coords(&mut rng, 50);
        for v in plan.forward(&img, &coords).unwrap() {
            assert!((v - C::new(1.0, 0.0)).norm() < 1e-3, "{v}");
        }
    }

    #[test]
    fn zero_image_gives_exact_zeros() {
        let plan = NufftPlan::<f64>::new(8, 8, NufftConfig::default()).unwrap();
        let coords = vec![[0.1, -0.2], [0.0, 0.0]];
        let out = plan.forward(&vec![C::new(0.0, 0.0); 64], &coords).unwrap();
        assert!(out.iter().all(|z| *z == C::new(0.0, 0.0)));
        let back = plan.adjoint(&[C::new(0.0, 0.0); 2], &coords).unwrap();
        assert!(back.iter().all(|z| *z == C::new(0.0, 0.0)));
    }

    #[test]
    fn matches_direct_dft_on_random_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = NufftPlan::<f64>::new(16, 16, NufftConfig::default()).unwrap();
        let img = random_image(&mut rng, 256);
        let coords = random_coords(&mut rng, 64);
        let err = rel_err(&plan.forward(&img, &coords).unwrap(), &direct_dft(&img, 16, 16, &coords));
        assert!(err <= 1e-3, "relative error {err}");
    }

    #[test]
    fn odd_and_rectangular_sizes_stay_accurate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plan = NufftPlan::<f64>::new(13, 20, NufftConfig::default()).unwrap();
        let img = random_image(&mut rng, 13 * 20);
        let coords = random_coords(&mut rng, 40);
        let err = rel_err(&plan.forward(&img, &coords).unwrap(), &direct_dft(&img, 13, 20, &coords));
        assert!(err <= 1e-3, "relative error {err}");
    }

    #[test]
    fn dc_adjoint_is_nearly_constant_one() {
        let plan = NufftPlan::<f64>::new(8, 8, NufftConfig::default()).unwrap();
        let img = plan.adjoint(&[C::new(1.0, 0.0)], &[[0.0, 0.0]]).unwrap();
        // the continuous-kernel deapodization leaves a ~1e-3 residual at DC
        for v in img {
            assert!((v - C::new(1.0, 0.0)).norm() < 2e-3, "{v}");
        }
    }

    #[test]
    fn adjoint_equals_conjugate_transpose_of_explicit_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plan = NufftPlan::<f64>::new(4, 4, NufftConfig::default()).unwrap();
        let coords = random_coords(&mut rng, 6);
        // columns of the forward matrix via unit images
        let mut matrix = vec![vec![C::new(0.0, 0.0); 16]; 6];
        for p in 0..16 {
            let mut e = vec![C::new(0.0, 0.0); 16];
            e[p] = C::new(1.0, 0.0);
            for (j, v) in plan.forward(&e, &coords).unwrap().into_iter().enumerate() {
                matrix[j][p] = v;
            }
        }
        let y: Vec<C> = random_image(&mut rng, 6);
        let adj = plan.adjoint(&y, &coords).unwrap();
        for p in 0..16 {
            let expected: C = (0..6).map(|j| matrix[j][p].conj() * y[j]).sum();
            assert!((adj[p] - expected).norm() < 1e-12 * expected.norm().max(1.0));
        }
    }

    #[test]
    fn dot_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plan = NufftPlan::<f64>::new(8, 8, NufftConfig::default()).unwrap();
        let coords = random_coords(&mut rng, 20);
        let a = random_image(&mut rng, 64);
        let b = random_image(&mut rng, 20);
        let fa = plan.forward(&a, &coords).unwrap();
        let fhb = plan.adjoint(&b, &coords).unwrap();
        let lhs: C = fa.iter().zip(&b).map(|(x, y)| x * y.conj()).sum();
        let rhs: C = a.iter().zip(&fhb).map(|(x, y)| x * y.conj()).sum();
        let scale = fa.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
            * b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((lhs - rhs).norm() / scale < 1e-10);
    }

    #[test]
    fn rejects_out_of_range_coordinates() {
        let plan = NufftPlan::<f64>::new(8, 8, NufftConfig::default()).unwrap();
        let img = vec![C::new(0.0, 0.0); 64];
        assert!(plan.forward(&img, &[[0.5, 0.0]]).is_err());
        assert!(plan.adjoint(&[C::new(1.0, 0.0)], &[[0.0, -0.51]]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = NufftConfig::default();
        cfg.kernel_width = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = NufftConfig::default();
        cfg.oversampling = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = NufftConfig::default();
        cfg.kernel_beta = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_precision_plan_runs() {
        let plan = NufftPlan::<f32>::new(8, 8, NufftConfig::default()).unwrap();
        let mut img = vec![Complex::new(0.0f32, 0.0); 64];
        img[4 * 8 + 4] = Complex::new(1.0, 0.0);
        let out = plan.forward(&img, &[[0.25f32, -0.125]]).unwrap();
        assert!((out[0] - Complex::new(1.0, 0.0)).norm() < 1e-3);
    }
}
