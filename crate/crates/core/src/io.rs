//! Little-endian binary formats for images, coil maps, k-space,
//! trajectories and denoiser models.
//!
//! Every file starts with a four-byte magic and a `u32` version (1), then
//! `u32` dimensions and `f32` payload. Values are narrowed to `f32` on write.

use std::fs;
use std::path::Path;

use num_complex::Complex;

use crate::denoiser::{Conv2d, DenoiserModel, UNetArch};
use crate::error::{Error, Result};
use crate::forward_model::{KSpaceData, Trajectory};
use crate::grid::{CoilSensitivities, ComplexImage};
use crate::scalar::Real;

pub const VERSION: u32 = 1;
const CONV_TAG: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4], dims: &[usize]) -> Result<Self> {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(VERSION);
        for &d in dims {
            w.dim(d)?;
        }
        Ok(w)
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn dim(&mut self, d: usize) -> Result<()> {
        let v = u32::try_from(d).map_err(|_| Error::invalid(format!("dimension {d} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    fn real<T: Real>(&mut self, v: T) {
        self.buf.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
    }

    fn complex<T: Real>(&mut self, data: &[Complex<T>]) {
        self.buf.reserve(8 * data.len());
        for z in data {
            self.real(z.re);
            self.real(z.im);
        }
    }

    fn save(self, path: &Path) -> Result<()> {
        fs::write(path, self.buf).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

struct Reader<'a> {
    kind: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(kind: &'static str, magic: &[u8; 4], bytes: &'a [u8]) -> Result<Self> {
        let mut r = Self { kind, bytes, pos: 0 };
        let found = r.take(4)?;
        if found != magic {
            return Err(r.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn fail(&self, reason: String) -> Error {
        Error::Format {
            kind: self.kind,
            reason,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(format!(
                "truncated at byte {}: need {n} more, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn dims<const N: usize>(&mut self) -> Result<[usize; N]> {
        let mut out = [0; N];
        for d in &mut out {
            *d = self.u32()? as usize;
        }
        Ok(out)
    }

    /// Checks that exactly `count` payload `f32` values remain.
    fn expect_payload(&self, count: Option<usize>) -> Result<()> {
        let left = self.bytes.len() - self.pos;
        match count.and_then(|c| c.checked_mul(4)) {
            Some(n) if n == left => Ok(()),
            Some(n) => Err(self.fail(format!("payload is {left} bytes, header implies {n}"))),
            None => Err(self.fail("header dimensions overflow".into())),
        }
    }

    fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let b = self.take(4 * n)?;
        let vals: Vec<T> = b
            .chunks_exact(4)
            .map(|c| T::lit(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(self.fail("non-finite value in payload".into()));
        }
        Ok(vals)
    }

    fn complex<T: Real>(&mut self, n: usize) -> Result<Vec<Complex<T>>> {
        let v = self.reals::<T>(2 * n)?;
        Ok(v.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn product(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Rewraps a constructor error as a format error for `kind`.
fn as_format(kind: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::Format {
        kind,
        reason: e.to_string(),
    }
}

pub fn encode_image<T: Real>(img: &ComplexImage<T>) -> Result<Vec<u8>> {
    let (h, w, t) = img.shape();
    let mut wr = Writer::new(b"CIMG", &[h, w, t])?;
    wr.complex(img.data());
    Ok(wr.buf)
}

pub fn decode_image<T: Real>(bytes: &[u8]) -> Result<ComplexImage<T>> {
    let mut r = Reader::new("image", b"CIMG", bytes)?;
    let [h, w, t] = r.dims()?;
    r.expect_payload(product(&[h, w, t, 2]))?;
    let data = r.complex(h * w * t)?;
    r.finish()?;
    ComplexImage::from_vec(h, w, t, data).map_err(as_format("image"))
}

pub fn save_image<T: Real>(img: &ComplexImage<T>, path: &Path) -> Result<()> {
    Writer {
        buf: encode_image(img)?,
    }
    .save(path)
}

pub fn load_image<T: Real>(path: &Path) -> Result<ComplexImage<T>> {
    decode_image(&read_file(path)?)
}

pub fn encode_coils<T: Real>(maps: &CoilSensitivities<T>) -> Result<Vec<u8>> {
    let mut wr = Writer::new(b"COIL", &[maps.coils(), maps.height(), maps.width()])?;
    wr.complex(maps.data());
    Ok(wr.buf)
}

pub fn decode_coils<T: Real>(bytes: &[u8]) -> Result<CoilSensitivities<T>> {
    let mut r = Reader::new("coil", b"COIL", bytes)?;
    let [c, h, w] = r.dims()?;
    r.expect_payload(product(&[c, h, w, 2]))?;
    let data = r.complex(c * h * w)?;
    r.finish()?;
    CoilSensitivities::from_vec(c, h, w, data).map_err(as_format("coil"))
}

pub fn save_coils<T: Real>(maps: &CoilSensitivities<T>, path: &Path) -> Result<()> {
    Writer {
        buf: encode_coils(maps)?,
    }
    .save(path)
}

pub fn load_coils<T: Real>(path: &Path) -> Result<CoilSensitivities<T>> {
    decode_coils(&read_file(path)?)
}

pub fn encode_kspace<T: Real>(y: &KSpaceData<T>) -> Result<Vec<u8>> {
    let mut wr = Writer::new(b"KSPC", &[y.coils(), y.phases(), y.samples()])?;
    wr.complex(y.data());
    Ok(wr.buf)
}

pub fn decode_kspace<T: Real>(bytes: &[u8]) -> Result<KSpaceData<T>> {
    let mut r = Reader::new("k-space", b"KSPC", bytes)?;
    let [c, t, m] = r.dims()?;
    r.expect_payload(product(&[c, t, m, 2]))?;
    let data = r.complex(c * t * m)?;
    r.finish()?;
    KSpaceData::from_vec(c, t, m, data).map_err(as_format("k-space"))
}

pub fn save_kspace<T: Real>(y: &KSpaceData<T>, path: &Path) -> Result<()> {
    Writer {
        buf: encode_kspace(y)?,
    }
    .save(path)
}

pub fn load_kspace<T: Real>(path: &Path) -> Result<KSpaceData<T>> {
    decode_kspace(&read_file(path)?)
}

pub fn encode_trajectory<T: Real>(traj: &Trajectory<T>) -> Result<Vec<u8>> {
    let mut wr = Writer::new(b"TRAJ", &[traj.phases(), traj.samples()])?;
    for t in 0..traj.phases() {
        for (k, &d) in traj.coords(t).iter().zip(traj.dcf(t)) {
            wr.real(k[0]);
            wr.real(k[1]);
            wr.real(d);
        }
    }
    Ok(wr.buf)
}

/// Spoke angles are not stored, so the decoded trajectory reports none.
pub fn decode_trajectory<T: Real>(bytes: &[u8]) -> Result<Trajectory<T>> {
    let mut r = Reader::new("trajectory", b"TRAJ", bytes)?;
    let [t, m] = r.dims()?;
    r.expect_payload(product(&[t, m, 3]))?;
    let mut coords = Vec::with_capacity(t);
    let mut dcf = Vec::with_capacity(t);
    for _ in 0..t {
        let v = r.reals::<T>(3 * m)?;
        coords.push(v.chunks_exact(3).map(|p| [p[0], p[1]]).collect());
        dcf.push(v.chunks_exact(3).map(|p| p[2]).collect());
    }
    r.finish()?;
    Trajectory::from_samples(coords, dcf).map_err(as_format("trajectory"))
}

pub fn save_trajectory<T: Real>(traj: &Trajectory<T>, path: &Path) -> Result<()> {
    Writer {
        buf: encode_trajectory(traj)?,
    }
    .save(path)
}

pub fn load_trajectory<T: Real>(path: &Path) -> Result<Trajectory<T>> {
    decode_trajectory(&read_file(path)?)
}

/// Header bytes of a model file with `layers` layers.
pub fn model_header_len(layers: usize) -> usize {
    12 + 20 * layers
}

pub fn encode_model<T: Real>(model: &DenoiserModel<T>) -> Result<Vec<u8>> {
    let layers = model.layers();
    let mut wr = Writer::new(b"MSNT", &[layers.len()])?;
    for l in layers {
        wr.u32(CONV_TAG);
        for d in [l.out_channels, l.in_channels, l.kernel, l.kernel] {
            wr.dim(d)?;
        }
        for &v in l.weight.iter().chain(&l.bias) {
            wr.real(v);
        }
    }
    Ok(wr.buf)
}

/// Recovers the architecture from the layer dimensions and checks that the
/// layers form a complete network.
pub fn decode_model<T: Real>(bytes: &[u8]) -> Result<DenoiserModel<T>> {
    let mut r = Reader::new("model", b"MSNT", bytes)?;
    let [count] = r.dims()?;
    if count < 5 || (count - 2) % 3 != 0 {
        return Err(r.fail(format!("layer count {count} does not form a UNet")));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let tag = r.u32()?;
        if tag != CONV_TAG {
            return Err(r.fail(format!("layer {i}: unknown kind tag {tag}")));
        }
        let [o, c, kh, kw] = r.dims()?;
        if kh != kw {
            return Err(r.fail(format!("layer {i}: non-square kernel {kh}x{kw}")));
        }
        let n = product(&[o, c, kh, kw])
            .filter(|&n| n <= bytes.len())
            .ok_or_else(|| r.fail(format!("layer {i}: dimensions exceed file size")))?;
        let weight = r.reals(n)?;
        let bias = r.reals(o)?;
        layers.push(Conv2d {
            out_channels: o,
            in_channels: c,
            kernel: kh,
            weight,
            bias,
        });
    }
    r.finish()?;
    let arch = UNetArch {
        levels: (count - 2) / 3,
        base_channels: layers[0].out_channels,
        kernel: layers[0].kernel,
        io_channels: layers[0].in_channels,
    };
    DenoiserModel::from_layers(arch, layers).map_err(as_format("model"))
}

pub fn save_model<T: Real>(model: &DenoiserModel<T>, path: &Path) -> Result<()> {
    Writer {
        buf: encode_model(model)?,
    }
    .save(path)
}

pub fn load_model<T: Real>(path: &Path) -> Result<DenoiserModel<T>> {
    decode_model(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::init_model;
    use crate::forward_model::{make_radial_trajectory, SpokeScheme};
    use crate::grid::make_coil_maps;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image() -> ComplexImage<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        ComplexImage::from_fn(5, 3, 2, |_, _, _| Complex::new(rng.random(), rng.random())).unwrap()
    }

    #[test]
    fn image_layout_matches_format() {
        let img = image();
        let bytes = encode_image(&img).unwrap();
        assert_eq!(&bytes[..4], b"CIMG");
        assert_eq!(bytes[4..20], [1, 0, 0, 0, 5, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len(), 20 + 8 * 30);
        // element (row 0, col 1, phase 0), imaginary part
        let z = img.get(0, 1, 0);
        assert_eq!(bytes[32..36], z.im.to_le_bytes());
        assert_eq!(decode_image::<f32>(&bytes).unwrap(), img);
    }

    #[test]
    fn coil_and_kspace_round_trip() {
        let maps = make_coil_maps::<f32>(6, 6, 3).unwrap();
        assert_eq!(decode_coils::<f32>(&encode_coils(&maps).unwrap()).unwrap(), maps);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = (0..2 * 3 * 7).map(|_| Complex::new(rng.random(), rng.random())).collect();
        let y = KSpaceData::<f32>::from_vec(2, 3, 7, data).unwrap();
        let bytes = encode_kspace(&y).unwrap();
        assert_eq!(bytes.len(), 20 + 8 * 42);
        assert_eq!(decode_kspace::<f32>(&bytes).unwrap(), y);
    }

    #[test]
    fn trajectory_round_trip() {
        let traj = make_radial_trajectory::<f32>(8, 3, 2, SpokeScheme::GoldenAngle).unwrap();
        let back = decode_trajectory::<f32>(&encode_trajectory(&traj).unwrap()).unwrap();
        for t in 0..2 {
            assert_eq!(back.coords(t), traj.coords(t));
            assert_eq!(back.dcf(t), traj.dcf(t));
        }
        assert!(back.spoke_angles(0).is_empty());
    }

    #[test]
    fn model_round_trip_and_size() {
        let model = init_model::<f32>(UNetArch::for_phases(2), 3).unwrap();
        let bytes = encode_model(&model).unwrap();
        assert_eq!(bytes.len(), model_header_len(8) + 4 * model.param_count());
        let back = decode_model::<f32>(&bytes).unwrap();
        assert!(back.params().zip(model.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.arch(), model.arch());
    }

    #[test]
    fn f64_values_narrow_to_f32() {
        let img = ComplexImage::<f64>::from_fn(2, 2, 1, |r, c, _| Complex::new(0.1 * r as f64, 1.0 / (1.0 + c as f64) / 3.0)).unwrap();
        let back = decode_image::<f64>(&encode_image(&img).unwrap()).unwrap();
        assert_eq!(back, img.cast::<f32>().cast::<f64>());
    }

    #[test]
    fn corrupt_files_rejected() {
        let good = encode_image(&image()).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        let mut huge = good.clone();
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        for bytes in [bad_magic, bad_version, huge, good[..good.len() - 1].to_vec(), good[..6].to_vec()] {
            let err = decode_image::<f32>(&bytes).unwrap_err();
            assert!(matches!(err, Error::Format { kind: "image", .. }), "{err}");
            assert_eq!(err.exit_code(), 2);
        }
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode_image::<f32>(&extra).is_err());
        assert!(decode_coils::<f32>(&good).is_err());
    }

    #[test]
    fn corrupt_models_rejected() {
        let good = encode_model(&init_model::<f32>(UNetArch::for_phases(1), 1).unwrap()).unwrap();
        let mut bad_tag = good.clone();
        bad_tag[12] = 9;
        let mut bad_count = good.clone();
        bad_count[8] = 7;
        let mut bad_dims = good.clone();
        bad_dims[16] = 15;
        for bytes in [bad_tag, bad_count, bad_dims, good[..good.len() - 4].to_vec()] {
            assert!(matches!(decode_model::<f32>(&bytes), Err(Error::Format { kind: "model", .. })));
        }
        let mut nan = good.clone();
        nan[32..36].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_model::<f32>(&nan).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_image::<f64>(Path::new("/nonexistent/dir/x.cimg")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("/nonexistent/dir/x.cimg"));
    }
}
