//! Multi-scale downsampling: the `n²` stride-offset sub-images of one
//! corrupted image, used as mutually noisy training pairs.
//!
//! Offset `(0, 0)` takes rows and columns `0, n, 2n, …` (the first element of
//! every `n × n` block). The phase axis is never subsampled.

use crate::error::{Error, Result};
use crate::grid::ComplexImage;
use crate::scalar::Real;

/// The `n²` variants of one image, ordered by offset `(a, b)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DownsampleSet<T> {
    factor: usize,
    variants: Vec<ComplexImage<T>>,
}

impl<T: Real> DownsampleSet<T> {
    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn variants(&self) -> &[ComplexImage<T>] {
        &self.variants
    }

    /// Variant at row offset `a` and column offset `b`.
    pub fn variant(&self, a: usize, b: usize) -> &ComplexImage<T> {
        &self.variants[a * self.factor + b]
    }

    pub fn into_variants(self) -> Vec<ComplexImage<T>> {
        self.variants
    }

    /// Shape shared by every variant.
    pub fn variant_shape(&self) -> (usize, usize, usize) {
        self.variants[0].shape()
    }
}

/// `variant(a, b)[i, j, t] = img[n·i + a, n·j + b, t]`; rows and columns past
/// `n·⌊H/n⌋` are dropped.
pub fn multiscale_downsample<T: Real>(img: &ComplexImage<T>, n: usize) -> Result<DownsampleSet<T>> {
    if n < 2 {
        return Err(Error::invalid(format!("downsampling factor must be >= 2, got {n}")));
    }
    let (h, w, t) = img.shape();
    if h < n || w < n {
        return Err(Error::invalid(format!(
            "image {h}x{w} is smaller than the {n}x{n} downsampling block"
        )));
    }
    let (sh, sw) = (h / n, w / n);
    let mut variants = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let v = ComplexImage::from_fn(sh, sw, t, |i, j, p| img.get(n * i + a, n * j + b, p))?;
            variants.push(v);
        }
    }
    Ok(DownsampleSet {
        factor: n,
        variants,
    })
}

/// Right-inverse of [`multiscale_downsample`] for `n`-divisible `height × width`.
pub fn interleave<T: Real>(set: &DownsampleSet<T>, height: usize, width: usize) -> Result<ComplexImage<T>> {
    let n = set.factor;
    if set.variants.len() != n * n {
        return Err(Error::shape("variants", n * n, set.variants.len()));
    }
    let (sh, sw, t) = set.variant_shape();
    if let Some(bad) = set.variants.iter().find(|v| v.shape() != (sh, sw, t)) {
        let (bh, _, _) = bad.shape();
        return Err(Error::shape("variant height", sh, bh));
    }
    if height != sh * n {
        return Err(Error::shape("height", sh * n, height));
    }
    if width != sw * n {
        return Err(Error::shape("width", sw * n, width));
    }
    ComplexImage::from_fn(height, width, t, |r, c, p| set.variant(r % n, c % n).get(r / n, c / n, p))
}

/// Every ordered pair `(input, target)` of distinct variants.
pub fn training_pairs<T: Real>(set: &DownsampleSet<T>) -> Vec<(ComplexImage<T>, ComplexImage<T>)> {
    pair_indices(set.factor)
        .map(|(i, j)| (set.variants[i].clone(), set.variants[j].clone()))
        .collect()
}

/// Index pairs `(i, j)`, `i ≠ j`, over `n²` variants; `n²(n²−1)` of them.
pub fn pair_indices(n: usize) -> impl Iterator<Item = (usize, usize)> {
    let count = n * n;
    (0..count).flat_map(move |i| (0..count).filter(move |&j| j != i).map(move |j| (i, j)))
}
