//! MRI domain types and the coil-wise acquisition operator `E = P F S` with
//! its exact adjoint, the zero-filled network input, and the data-consistency
//! loss with its gradient.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::fft2c_raw;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Complex-valued image, stored interleaved; real/imaginary plane views are
/// available for the two-channel network convention (channel 0 = real,
/// channel 1 = imaginary).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage<T> {
    h: usize,
    w: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> ComplexImage<T> {
    pub fn zeros(h: usize, w: usize) -> Self {
        ComplexImage {
            h,
            w,
            data: vec![Complex::new(T::zero(), T::zero()); h * w],
        }
    }

    pub fn from_data(h: usize, w: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape(format!(
                "image {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(ComplexImage { h, w, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    /// Two-channel tensor `[2, H, W]`: channel 0 real, channel 1 imaginary.
    pub fn to_two_channel(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(2 * self.data.len());
        data.extend(self.data.iter().map(|v| v.re));
        data.extend(self.data.iter().map(|v| v.im));
        Tensor::from_vec(&[2, self.h, self.w], data).expect("sizes agree")
    }

    pub fn from_two_channel(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.dims3()?;
        if c != 2 {
            return Err(Error::Shape(format!(
                "two-channel image needs 2 channels, got {c}"
            )));
        }
        let n = h * w;
        let data = (0..n)
            .map(|i| Complex::new(t.data()[i], t.data()[n + i]))
            .collect();
        Ok(ComplexImage { h, w, data })
    }

    /// Pixelwise magnitude as a `[H, W]` tensor.
    pub fn magnitude(&self) -> Tensor<T> {
        let data = self.data.iter().map(|v| v.norm()).collect();
        Tensor::from_vec(&[self.h, self.w], data).expect("sizes agree")
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, v| if v.norm() > m { v.norm() } else { m })
    }

    pub fn norm_l2(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, v| acc + v.norm_sqr())
            .sqrt()
    }

    pub fn scale(&self, c: T) -> Self {
        ComplexImage {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| Complex::new(v.re * c, v.im * c)).collect(),
        }
    }

    /// `<self, other> = sum conj(self_i) * other_i`
    pub fn dot(&self, other: &Self) -> Complex<T> {
        self.data
            .iter()
            .zip(&other.data)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| {
                acc + a.conj() * b
            })
    }

    pub fn check_finite(&self, ctx: &str) -> Result<()> {
        if self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{ctx} produced NaN or Inf")))
        }
    }
}

/// Multi-coil k-space, coil-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKSpace<T> {
    coils: usize,
    h: usize,
    w: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> MultiCoilKSpace<T> {
    pub fn zeros(coils: usize, h: usize, w: usize) -> Self {
        MultiCoilKSpace {
            coils,
            h,
            w,
            data: vec![Complex::new(T::zero(), T::zero()); coils * h * w],
        }
    }

    pub fn from_data(coils: usize, h: usize, w: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != coils * h * w {
            return Err(Error::Shape(format!(
                "k-space ({coils}, {h}, {w}) needs {} values, got {}",
                coils * h * w,
                data.len()
            )));
        }
        Ok(MultiCoilKSpace { coils, h, w, data })
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.coils, self.h, self.w)
    }

    pub fn coil(&self, l: usize) -> &[Complex<T>] {
        &self.data[l * self.h * self.w..(l + 1) * self.h * self.w]
    }

    pub fn coil_mut(&mut self, l: usize) -> &mut [Complex<T>] {
        &mut self.data[l * self.h * self.w..(l + 1) * self.h * self.w]
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|v| v.re == T::zero() && v.im == T::zero())
    }

    pub fn scale(&self, c: T) -> Self {
        MultiCoilKSpace {
            coils: self.coils,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| Complex::new(v.re * c, v.im * c)).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> Complex<T> {
        self.data
            .iter()
            .zip(&other.data)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| {
                acc + a.conj() * b
            })
    }

    pub fn norm_l2(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, v| acc + v.norm_sqr())
            .sqrt()
    }
}

/// Center-anchored fully sampled calibration rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcsRect {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl AcsRect {
    /// The centered `ah x aw` rectangle inside an `h x w` grid.
    pub fn centered(h: usize, w: usize, ah: usize, aw: usize) -> Self {
        AcsRect {
            y0: (h - ah) / 2,
            x0: (w - aw) / 2,
            h: ah,
            w: aw,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.h == 0 || self.w == 0
    }
}

/// Binary k-space sampling pattern with its calibration rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
    acs: AcsRect,
}

impl SamplingMask {
    pub fn new(h: usize, w: usize, data: Vec<u8>, acs: AcsRect) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape(format!(
                "mask {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Config("mask values must be 0 or 1".into()));
        }
        if acs.y0 + acs.h > h || acs.x0 + acs.w > w {
            return Err(Error::Config(format!(
                "ACS rectangle {acs:?} does not fit a {h}x{w} mask"
            )));
        }
        let mask = SamplingMask { h, w, data, acs };
        for y in acs.y0..acs.y0 + acs.h {
            for x in acs.x0..acs.x0 + acs.w {
                if !mask.is_sampled(y, x) {
                    return Err(Error::Config(format!(
                        "ACS location ({y}, {x}) is not sampled"
                    )));
                }
            }
        }
        if mask.ones() == 0 {
            return Err(Error::Config("mask has no sampled locations".into()));
        }
        Ok(mask)
    }

    /// Build a mask from a bare 0/1 grid, inferring the ACS rectangle as the
    /// maximal-area centered all-ones rectangle (ties broken toward more
    /// rows). This recovers the calibration region of masks read from files,
    /// which store only the grid.
    pub fn from_values(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape(format!(
                "mask {h}x{w} needs {} values, got {}",
                h * w,
                data.len()
            )));
        }
        let all_ones = |rect: &AcsRect| -> bool {
            for y in rect.y0..rect.y0 + rect.h {
                for x in rect.x0..rect.x0 + rect.w {
                    if data[y * w + x] != 1 {
                        return false;
                    }
                }
            }
            true
        };
        let mut best = AcsRect::centered(h, w, 0, 0);
        let mut best_area = 0usize;
        for ah in 1..=h {
            // widest centered all-ones rectangle of this height
            let mut width = 0usize;
            for aw in (1..=w).rev() {
                if all_ones(&AcsRect::centered(h, w, ah, aw)) {
                    width = aw;
                    break;
                }
            }
            if ah * width > best_area || (ah * width == best_area && width > 0) {
                best_area = ah * width;
                best = AcsRect::centered(h, w, ah, width);
            }
        }
        SamplingMask::new(h, w, data, best)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn acs(&self) -> AcsRect {
        self.acs
    }

    pub fn is_sampled(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] == 1
    }

    pub fn values(&self) -> &[u8] {
        &self.data
    }

    pub fn ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Total locations over sampled locations.
    pub fn effective_acceleration(&self) -> f64 {
        (self.h * self.w) as f64 / self.ones() as f64
    }

    /// Zero every unsampled location of `k` (in place).
    pub fn apply<T: Real>(&self, k: &mut MultiCoilKSpace<T>) {
        let (coils, h, w) = k.dims();
        assert_eq!((h, w), (self.h, self.w), "mask/k-space shape mismatch");
        for l in 0..coils {
            let plane = k.coil_mut(l);
            for (v, &m) in plane.iter_mut().zip(&self.data) {
                if m == 0 {
                    *v = Complex::new(T::zero(), T::zero());
                }
            }
        }
    }
}

/// Per-coil complex sensitivity maps, unit sum-of-squares on their support.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivities<T> {
    coils: usize,
    h: usize,
    w: usize,
    data: Vec<Complex<T>>,
    support: Vec<bool>,
}

impl<T: Real> CoilSensitivities<T> {
    pub fn new(
        coils: usize,
        h: usize,
        w: usize,
        data: Vec<Complex<T>>,
        support: Vec<bool>,
    ) -> Result<Self> {
        if data.len() != coils * h * w || support.len() != h * w {
            return Err(Error::Shape(format!(
                "sensitivities ({coils}, {h}, {w}): bad data or support length"
            )));
        }
        let maps = CoilSensitivities {
            coils,
            h,
            w,
            data,
            support,
        };
        maps.validate()?;
        Ok(maps)
    }

    /// Checks unit sum-of-squares on support (to 1e-6) and zeros outside.
    pub fn validate(&self) -> Result<()> {
        let tol = T::cast(1e-6);
        for p in 0..self.h * self.w {
            let mut ssq = T::zero();
            for l in 0..self.coils {
                ssq += self.data[l * self.h * self.w + p].norm_sqr();
            }
            if self.support[p] {
                if (ssq - T::one()).abs() > tol {
                    return Err(Error::Config(format!(
                        "sensitivities not normalized at pixel {p}: sum-of-squares {ssq}"
                    )));
                }
            } else if ssq != T::zero() {
                return Err(Error::Config(format!(
                    "sensitivities nonzero outside support at pixel {p}"
                )));
            }
        }
        Ok(())
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.coils, self.h, self.w)
    }

    pub fn coil(&self, l: usize) -> &[Complex<T>] {
        &self.data[l * self.h * self.w..(l + 1) * self.h * self.w]
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }
}

fn check_geometry<T: Real>(
    s: &CoilSensitivities<T>,
    p: &SamplingMask,
    coils: usize,
    h: usize,
    w: usize,
) -> Result<()> {
    if s.dims() != (coils, h, w) || p.dims() != (h, w) {
        return Err(Error::Shape(format!(
            "operator geometry mismatch: k-space ({coils}, {h}, {w}), maps {:?}, mask {:?}",
            s.dims(),
            p.dims()
        )));
    }
    Ok(())
}

/// Acquisition operator: per coil `P .* fft2c(S_l .* x)`.
pub fn forward_op<T: Real>(
    x: &ComplexImage<T>,
    s: &CoilSensitivities<T>,
    p: &SamplingMask,
) -> Result<MultiCoilKSpace<T>> {
    let (h, w) = x.dims();
    let coils = s.coils();
    check_geometry(s, p, coils, h, w)?;
    let mut out = MultiCoilKSpace::zeros(coils, h, w);
    for l in 0..coils {
        let weighted: Vec<Complex<T>> = s
            .coil(l)
            .iter()
            .zip(x.data())
            .map(|(sv, xv)| sv * xv)
            .collect();
        let k = fft2c_raw(weighted, h, w, false);
        let dst = out.coil_mut(l);
        for ((d, kv), &m) in dst.iter_mut().zip(k).zip(p.values()) {
            if m == 1 {
                *d = kv;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`forward_op`]: `sum_l conj(S_l) .* ifft2c(P .* d_l)`,
/// accumulated in fixed coil order.
pub fn adjoint_op<T: Real>(
    d: &MultiCoilKSpace<T>,
    s: &CoilSensitivities<T>,
    p: &SamplingMask,
) -> Result<ComplexImage<T>> {
    let (coils, h, w) = d.dims();
    check_geometry(s, p, coils, h, w)?;
    let mut acc = ComplexImage::zeros(h, w);
    for l in 0..coils {
        let masked: Vec<Complex<T>> = d
            .coil(l)
            .iter()
            .zip(p.values())
            .map(|(v, &m)| {
                if m == 1 {
                    *v
                } else {
                    Complex::new(T::zero(), T::zero())
                }
            })
            .collect();
        let img = fft2c_raw(masked, h, w, true);
        for ((a, iv), sv) in acc.data_mut().iter_mut().zip(img).zip(s.coil(l)) {
            *a += sv.conj() * iv;
        }
    }
    Ok(acc)
}

/// Zero-filled reconstruction, normalized to unit peak magnitude.
///
/// Returns the normalized image and the scale (the peak magnitude of the raw
/// adjoint image) for de-normalization.
pub fn zero_fill<T: Real>(
    d_u: &MultiCoilKSpace<T>,
    s: &CoilSensitivities<T>,
    p: &SamplingMask,
) -> Result<(ComplexImage<T>, T)> {
    if d_u.is_all_zero() {
        return Err(Error::EmptyAcquisition);
    }
    let adj = adjoint_op(d_u, s, p)?;
    let scale = adj.max_abs();
    if scale == T::zero() {
        return Err(Error::Calibration(
            "adjoint of the acquisition is identically zero".into(),
        ));
    }
    Ok((adj.scale(T::one() / scale), scale))
}

/// Sum-of-squares data-consistency loss and its gradient w.r.t. the image.
///
/// `loss = sum_l ||P .* fft2c(S_l .* x) - d_l||^2` (no averaging); the
/// gradient is `2 E^H (E x - d)`, returned as a complex image whose real and
/// imaginary planes are the partial derivatives w.r.t. the real and imaginary
/// parts of `x` — exactly the upstream gradient for the two-channel network
/// output.
pub fn data_loss<T: Real>(
    x: &ComplexImage<T>,
    d_u: &MultiCoilKSpace<T>,
    s: &CoilSensitivities<T>,
    p: &SamplingMask,
) -> Result<(T, ComplexImage<T>)> {
    let (h, w) = x.dims();
    let (coils, dh, dw) = d_u.dims();
    if (dh, dw) != (h, w) {
        return Err(Error::Shape(format!(
            "image {h}x{w} vs k-space {dh}x{dw}"
        )));
    }
    check_geometry(s, p, coils, h, w)?;

    let mut loss = T::zero();
    let mut grad = ComplexImage::zeros(h, w);
    for l in 0..coils {
        let weighted: Vec<Complex<T>> = s
            .coil(l)
            .iter()
            .zip(x.data())
            .map(|(sv, xv)| sv * xv)
            .collect();
        let k = fft2c_raw(weighted, h, w, false);
        // residual on sampled locations only; d is zero off-mask by contract
        let residual: Vec<Complex<T>> = k
            .iter()
            .zip(d_u.coil(l))
            .zip(p.values())
            .map(|((kv, dv), &m)| {
                if m == 1 {
                    kv - dv
                } else {
                    Complex::new(T::zero(), T::zero())
                }
            })
            .collect();
        loss += residual.iter().fold(T::zero(), |acc, r| acc + r.norm_sqr());
        let back = fft2c_raw(residual, h, w, true);
        for ((g, bv), sv) in grad.data_mut().iter_mut().zip(back).zip(s.coil(l)) {
            *g += sv.conj() * bv;
        }
    }
    let two = T::cast(2.0);
    for g in grad.data_mut() {
        *g = Complex::new(g.re * two, g.im * two);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("data-consistency loss".into()));
    }
    grad.check_finite("data-consistency gradient")?;
    Ok((loss, grad))
}
