//! Binary array container and the line-based run configuration format.
//!
//! Container layout, all little-endian:
//! magic `NLDT` (4 bytes), version `u8 = 1`, dtype `u8`
//! (0 = real32, 1 = real64, 2 = complex64 interleaved re/im,
//! 3 = complex128 interleaved), ndim `u8`, one zero pad byte,
//! `ndim` x `u64` extents, then the row-major payload.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex;

use crate::error::{Error, FormatError, Result};
use crate::mri::{CoilSensitivities, ComplexImage, MultiCoilKSpace, SamplingMask};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"NLDT";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Real32 = 0,
    Real64 = 1,
    Complex64 = 2,
    Complex128 = 3,
}

impl Dtype {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::Real32),
            1 => Ok(Dtype::Real64),
            2 => Ok(Dtype::Complex64),
            3 => Ok(Dtype::Complex128),
            other => Err(FormatError::UnknownDtype(other).into()),
        }
    }

    pub fn elem_size(self) -> usize {
        match self {
            Dtype::Real32 => 4,
            Dtype::Real64 => 8,
            Dtype::Complex64 => 8,
            Dtype::Complex128 => 16,
        }
    }
}

/// A typed n-dimensional array as stored in the container.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    Real32(Vec<f32>),
    Real64(Vec<f64>),
    Complex64(Vec<Complex<f32>>),
    Complex128(Vec<Complex<f64>>),
}

impl ArrayData {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::Real32(_) => Dtype::Real32,
            ArrayData::Real64(_) => Dtype::Real64,
            ArrayData::Complex64(_) => Dtype::Complex64,
            ArrayData::Complex128(_) => Dtype::Complex128,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::Real32(v) => v.len(),
            ArrayData::Real64(v) => v.len(),
            ArrayData::Complex64(v) => v.len(),
            ArrayData::Complex128(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl ArrayFile {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Format(FormatError::BadExtents(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            ))));
        }
        Ok(ArrayFile { shape, data })
    }
}

pub fn write_array(path: &Path, array: &ArrayFile) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&MAGIC);
    bytes.push(VERSION);
    bytes.push(array.data.dtype() as u8);
    bytes.push(array.shape.len() as u8);
    bytes.push(0); // pad
    for &e in &array.shape {
        bytes.extend_from_slice(&(e as u64).to_le_bytes());
    }
    match &array.data {
        ArrayData::Real32(v) => {
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        ArrayData::Real64(v) => {
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        ArrayData::Complex64(v) => {
            for x in v {
                bytes.extend_from_slice(&x.re.to_le_bytes());
                bytes.extend_from_slice(&x.im.to_le_bytes());
            }
        }
        ArrayData::Complex128(v) => {
            for x in v {
                bytes.extend_from_slice(&x.re.to_le_bytes());
                bytes.extend_from_slice(&x.im.to_le_bytes());
            }
        }
    }
    let mut f = File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<ArrayFile> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_array(&bytes)
}

pub fn parse_array(bytes: &[u8]) -> Result<ArrayFile> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic.into());
    }
    if bytes.len() < 8 {
        return Err(FormatError::Truncated {
            expected: 8,
            got: bytes.len() as u64,
        }
        .into());
    }
    if bytes[4] != VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]).into());
    }
    let dtype = Dtype::from_code(bytes[5])?;
    let ndim = bytes[6] as usize;
    let header_len = 8 + 8 * ndim;
    if bytes.len() < header_len {
        return Err(FormatError::Truncated {
            expected: header_len as u64,
            got: bytes.len() as u64,
        }
        .into());
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut n: u128 = 1;
    for i in 0..ndim {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[8 + 8 * i..16 + 8 * i]);
        let e = u64::from_le_bytes(buf);
        n = n.saturating_mul(e as u128);
        shape.push(e as usize);
    }
    let payload_len = n
        .checked_mul(dtype.elem_size() as u128)
        .filter(|&b| b <= usize::MAX as u128)
        .ok_or_else(|| FormatError::BadExtents(format!("extent product overflows: {shape:?}")))?
        as usize;
    let expected = header_len as u64 + payload_len as u64;
    if (bytes.len() as u64) < expected {
        return Err(FormatError::Truncated {
            expected,
            got: bytes.len() as u64,
        }
        .into());
    }
    let payload = &bytes[header_len..header_len + payload_len];
    let count = n as usize;
    let data = match dtype {
        Dtype::Real32 => ArrayData::Real32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::Real64 => ArrayData::Real64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::Complex64 => ArrayData::Complex64(
            payload
                .chunks_exact(8)
                .map(|c| {
                    Complex::new(
                        f32::from_le_bytes(c[..4].try_into().unwrap()),
                        f32::from_le_bytes(c[4..].try_into().unwrap()),
                    )
                })
                .collect(),
        ),
        Dtype::Complex128 => ArrayData::Complex128(
            payload
                .chunks_exact(16)
                .map(|c| {
                    Complex::new(
                        f64::from_le_bytes(c[..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect(),
        ),
    };
    debug_assert_eq!(data.len(), count);
    ArrayFile::new(shape, data)
}

// --- conversions between container arrays and domain types (f64 pipeline) ---

pub fn image_to_array(img: &ComplexImage<f64>) -> ArrayFile {
    let (h, w) = img.dims();
    ArrayFile {
        shape: vec![h, w],
        data: ArrayData::Complex128(img.data().to_vec()),
    }
}

pub fn array_to_image(a: &ArrayFile) -> Result<ComplexImage<f64>> {
    let [h, w] = a.shape[..] else {
        return Err(Error::Shape(format!(
            "expected a 2-d array for an image, got shape {:?}",
            a.shape
        )));
    };
    ComplexImage::from_data(h, w, to_complex128(&a.data))
}

pub fn kspace_to_array(k: &MultiCoilKSpace<f64>) -> ArrayFile {
    let (l, h, w) = k.dims();
    ArrayFile {
        shape: vec![l, h, w],
        data: ArrayData::Complex128(k.data().to_vec()),
    }
}

pub fn array_to_kspace(a: &ArrayFile) -> Result<MultiCoilKSpace<f64>> {
    let [l, h, w] = a.shape[..] else {
        return Err(Error::Shape(format!(
            "expected a 3-d array for multi-coil k-space, got shape {:?}",
            a.shape
        )));
    };
    MultiCoilKSpace::from_data(l, h, w, to_complex128(&a.data))
}

pub fn tensor_to_array(t: &Tensor<f64>) -> ArrayFile {
    ArrayFile {
        shape: t.shape().to_vec(),
        data: ArrayData::Real64(t.data().to_vec()),
    }
}

pub fn array_to_tensor(a: &ArrayFile) -> Result<Tensor<f64>> {
    let data = match &a.data {
        ArrayData::Real32(v) => v.iter().map(|&x| x as f64).collect(),
        ArrayData::Real64(v) => v.clone(),
        _ => {
            return Err(Error::Shape(
                "expected a real array, got a complex dtype".into(),
            ))
        }
    };
    Tensor::from_vec(&a.shape, data)
}

/// Masks are stored as a real64 0/1 grid; the ACS rectangle is re-inferred
/// on load (see [`SamplingMask::from_values`]).
pub fn mask_to_array(mask: &SamplingMask) -> ArrayFile {
    let (h, w) = mask.dims();
    ArrayFile {
        shape: vec![h, w],
        data: ArrayData::Real64(mask.values().iter().map(|&v| v as f64).collect()),
    }
}

pub fn array_to_mask(a: &ArrayFile) -> Result<SamplingMask> {
    let [h, w] = a.shape[..] else {
        return Err(Error::Shape(format!(
            "expected a 2-d array for a sampling mask, got shape {:?}",
            a.shape
        )));
    };
    let values = match &a.data {
        ArrayData::Real32(v) => v.iter().map(|&x| x as f64).collect::<Vec<_>>(),
        ArrayData::Real64(v) => v.clone(),
        _ => {
            return Err(Error::Shape(
                "expected a real array for a sampling mask".into(),
            ))
        }
    };
    let mut grid = Vec::with_capacity(values.len());
    for v in values {
        if v == 0.0 {
            grid.push(0u8);
        } else if v == 1.0 {
            grid.push(1u8);
        } else {
            return Err(Error::Config(format!("mask values must be 0 or 1, got {v}")));
        }
    }
    SamplingMask::from_values(h, w, grid)
}

pub fn maps_to_array(maps: &CoilSensitivities<f64>) -> ArrayFile {
    let (l, h, w) = maps.dims();
    ArrayFile {
        shape: vec![l, h, w],
        data: ArrayData::Complex128(maps.data().to_vec()),
    }
}

/// Load sensitivity maps; the support is taken to be the pixels whose coil
/// sum-of-squares is near 1 (it is exactly 0 elsewhere by construction).
pub fn array_to_maps(a: &ArrayFile) -> Result<CoilSensitivities<f64>> {
    let [l, h, w] = a.shape[..] else {
        return Err(Error::Shape(format!(
            "expected a 3-d array for sensitivity maps, got shape {:?}",
            a.shape
        )));
    };
    let data = to_complex128(&a.data);
    let mut support = vec![false; h * w];
    for (p, s) in support.iter_mut().enumerate() {
        let ssq: f64 = (0..l).map(|c| data[c * h * w + p].norm_sqr()).sum();
        *s = ssq > 0.5;
    }
    CoilSensitivities::new(l, h, w, data, support)
}

fn to_complex128(data: &ArrayData) -> Vec<Complex<f64>> {
    match data {
        ArrayData::Real32(v) => v.iter().map(|&x| Complex::new(x as f64, 0.0)).collect(),
        ArrayData::Real64(v) => v.iter().map(|&x| Complex::new(x, 0.0)).collect(),
        ArrayData::Complex64(v) => v
            .iter()
            .map(|c| Complex::new(c.re as f64, c.im as f64))
            .collect(),
        ArrayData::Complex128(v) => v.clone(),
    }
}

// --- run configuration file: `key = value` lines, `#` comments ---

/// Flat key/value run configuration; unknown keys are an error so typos
/// cannot silently fall back to defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // simulation
    pub h: usize,
    pub w: usize,
    pub coils: usize,
    pub pattern: String,
    pub r: String,
    pub acs: usize,
    pub noise: f64,
    pub phase_strength: f64,
    // network
    pub depth: usize,
    pub filters: usize,
    pub kernel: usize,
    pub slope: f64,
    // reconstruction
    pub lr: f64,
    pub iters: usize,
    pub lambda: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            h: 64,
            w: 64,
            coils: 8,
            pattern: "uniform1d".into(),
            r: "4".into(),
            acs: 16,
            noise: 0.0,
            phase_strength: 0.5,
            depth: 4,
            filters: 128,
            kernel: 3,
            slope: 0.1,
            lr: 1e-3,
            iters: 2000,
            lambda: 0.0,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                Error::Config(format!("line {}: bad {what} value {value:?}", lineno + 1))
            };
            match key {
                "h" => cfg.h = value.parse().map_err(|_| bad("h"))?,
                "w" => cfg.w = value.parse().map_err(|_| bad("w"))?,
                "coils" => cfg.coils = value.parse().map_err(|_| bad("coils"))?,
                "pattern" => cfg.pattern = value.to_string(),
                "r" => cfg.r = value.to_string(),
                "acs" => cfg.acs = value.parse().map_err(|_| bad("acs"))?,
                "noise" => cfg.noise = value.parse().map_err(|_| bad("noise"))?,
                "phase_strength" => {
                    cfg.phase_strength = value.parse().map_err(|_| bad("phase_strength"))?
                }
                "depth" => cfg.depth = value.parse().map_err(|_| bad("depth"))?,
                "filters" => cfg.filters = value.parse().map_err(|_| bad("filters"))?,
                "kernel" => cfg.kernel = value.parse().map_err(|_| bad("kernel"))?,
                "slope" => cfg.slope = value.parse().map_err(|_| bad("slope"))?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad("lr"))?,
                "iters" => cfg.iters = value.parse().map_err(|_| bad("iters"))?,
                "lambda" => cfg.lambda = value.parse().map_err(|_| bad("lambda"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "checkpoint_every" => {
                    cfg.checkpoint_every = value.parse().map_err(|_| bad("checkpoint_every"))?
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }

    pub fn serialize(&self) -> String {
        format!(
            "# simulation\n\
             h = {}\nw = {}\ncoils = {}\npattern = {}\nr = {}\nacs = {}\n\
             noise = {}\nphase_strength = {}\n\
             # network\n\
             depth = {}\nfilters = {}\nkernel = {}\nslope = {}\n\
             # reconstruction\n\
             lr = {}\niters = {}\nlambda = {}\nseed = {}\ncheckpoint_every = {}\n",
            self.h,
            self.w,
            self.coils,
            self.pattern,
            self.r,
            self.acs,
            self.noise,
            self.phase_strength,
            self.depth,
            self.filters,
            self.kernel,
            self.slope,
            self.lr,
            self.iters,
            self.lambda,
            self.seed,
            self.checkpoint_every,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}
