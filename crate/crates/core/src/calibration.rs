//! Coil sensitivity estimation from the calibration region and the GRAPPA
//! baseline reconstruction.
//!
//! The sensitivity estimator builds the block-Hankel calibration matrix from
//! all kernel-sized ACS patches, takes the dominant right-singular vectors
//! (via the Hermitian eigendecomposition of the normal matrix), transforms
//! them to image space, and keeps the leading eigenvector of the resulting
//! per-pixel operator wherever its eigenvalue clears the threshold.
//!
//! GRAPPA fits, per missing-row offset class of a uniform 1-D pattern, one
//! set of complex weights predicting each target coil from the sampled
//! neighborhood (all coils), by ridge least squares over all ACS placements.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::{fft2_plain, fftshift2, ifft2c};
use crate::linalg::{hermitian_eigen, hermitian_solve};
use crate::mri::{CoilSensitivities, ComplexImage, MultiCoilKSpace, SamplingMask};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const ESPIRIT_DEFAULT_KERNEL: usize = 6;
pub const ESPIRIT_DEFAULT_SV_THRESH: f64 = 0.01;
pub const ESPIRIT_DEFAULT_EIG_THRESH: f64 = 0.9;

/// Fully sampled calibration block cut from the k-space center.
#[derive(Debug, Clone, PartialEq)]
pub struct AcsBlock<T> {
    coils: usize,
    h: usize,
    w: usize,
    /// Top-left corner of the block inside the full grid.
    pub y0: usize,
    pub x0: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> AcsBlock<T> {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.coils, self.h, self.w)
    }

    pub fn coil(&self, l: usize) -> &[Complex<T>] {
        &self.data[l * self.h * self.w..(l + 1) * self.h * self.w]
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    /// Multiply every entry by a complex factor (mainly for invariance tests).
    pub fn scaled(&self, factor: Complex<T>) -> Self {
        AcsBlock {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Copy the ACS rectangle out of (possibly undersampled) k-space.
pub fn extract_acs<T: Real>(d: &MultiCoilKSpace<T>, p: &SamplingMask) -> Result<AcsBlock<T>> {
    let (coils, h, w) = d.dims();
    if p.dims() != (h, w) {
        return Err(Error::Shape(format!(
            "mask {:?} vs k-space {h}x{w}",
            p.dims()
        )));
    }
    let rect = p.acs();
    if rect.is_empty() {
        return Err(Error::Calibration("mask has an empty ACS region".into()));
    }
    let mut data = Vec::with_capacity(coils * rect.h * rect.w);
    for l in 0..coils {
        let plane = d.coil(l);
        for y in rect.y0..rect.y0 + rect.h {
            data.extend_from_slice(&plane[y * w + rect.x0..y * w + rect.x0 + rect.w]);
        }
    }
    Ok(AcsBlock {
        coils,
        h: rect.h,
        w: rect.w,
        y0: rect.y0,
        x0: rect.x0,
        data,
    })
}

/// ESPIRiT-style sensitivity maps from the ACS block.
///
/// `sv_thresh` keeps calibration-matrix singular vectors with
/// `sigma >= sv_thresh * sigma_max`; `eig_thresh` defines the support from
/// the per-pixel eigenvalue. The per-pixel phase is fixed by rotating coil 0
/// real non-negative, and maps are normalized to unit sum-of-squares on the
/// support.
pub fn espirit_maps<T: Real>(
    acs: &AcsBlock<T>,
    h: usize,
    w: usize,
    kernel: usize,
    sv_thresh: f64,
    eig_thresh: f64,
) -> Result<CoilSensitivities<T>> {
    let (coils, ah, aw) = acs.dims();
    if kernel == 0 || kernel > ah || kernel > aw {
        return Err(Error::Config(format!(
            "kernel {kernel} does not fit the {ah}x{aw} ACS block"
        )));
    }
    if !(0.0 < sv_thresh && sv_thresh < 1.0) || !(0.0 < eig_thresh && eig_thresh < 1.0) {
        return Err(Error::Config(
            "espirit thresholds must lie in (0, 1)".into(),
        ));
    }
    if h < ah || w < aw {
        return Err(Error::Config(format!(
            "target grid {h}x{w} is smaller than the ACS block {ah}x{aw}"
        )));
    }

    let k = kernel;
    let n = coils * k * k;
    let zero = Complex::new(T::zero(), T::zero());

    // normal matrix of the block-Hankel calibration matrix
    let mut normal = vec![zero; n * n];
    let mut patch = vec![zero; n];
    let mut n_patches = 0usize;
    for py in 0..=ah - k {
        for px in 0..=aw - k {
            for l in 0..coils {
                let plane = acs.coil(l);
                for dy in 0..k {
                    for dx in 0..k {
                        patch[(l * k + dy) * k + dx] = plane[(py + dy) * aw + px + dx];
                    }
                }
            }
            for i in 0..n {
                let ci = patch[i].conj();
                let row = &mut normal[i * n..(i + 1) * n];
                for (j, v) in row.iter_mut().enumerate() {
                    *v += ci * patch[j];
                }
            }
            n_patches += 1;
        }
    }
    debug_assert!(n_patches > 0);

    let eig = hermitian_eigen(&normal, n)?;
    let sigma_max = eig.values[0].max(T::zero()).sqrt();
    if sigma_max == T::zero() {
        return Err(Error::Calibration("degenerate ACS block (rank 0)".into()));
    }
    let sv_cut = T::cast(sv_thresh) * sigma_max;
    let kept: Vec<&Vec<Complex<T>>> = eig
        .values
        .iter()
        .zip(&eig.vectors)
        .filter(|(v, _)| v.max(T::zero()).sqrt() >= sv_cut)
        .map(|(_, vec)| vec)
        .collect();

    // Per-pixel operator W(q) = (1/k^2) sum_j g_j(q) g_j(q)^H where g is the
    // unnormalized inverse DFT of each kept kernel, per coil. Patches live in
    // the span of the conjugated right-singular vectors, hence the conj.
    let mut w_op = vec![zero; h * w * coils * coils];
    let mut g_planes: Vec<Vec<Complex<T>>> = vec![vec![zero; h * w]; coils];
    for vec_j in &kept {
        for (l, plane) in g_planes.iter_mut().enumerate() {
            plane.iter_mut().for_each(|v| *v = zero);
            for dy in 0..k {
                for dx in 0..k {
                    plane[dy * w + dx] = vec_j[(l * k + dy) * k + dx].conj();
                }
            }
            fft2_plain(plane, h, w, true);
        }
        for q in 0..h * w {
            let wq = &mut w_op[q * coils * coils..(q + 1) * coils * coils];
            for l1 in 0..coils {
                let g1 = g_planes[l1][q];
                for l2 in 0..coils {
                    wq[l1 * coils + l2] += g1 * g_planes[l2][q].conj();
                }
            }
        }
    }
    let inv_k2 = T::one() / T::from_usize(k * k).unwrap();
    for v in &mut w_op {
        *v = v.scale(inv_k2);
    }

    // leading eigenpair per pixel, then shift into image alignment
    let mut maps_raw = vec![zero; coils * h * w];
    let mut eigval_raw = vec![T::zero(); h * w];
    for q in 0..h * w {
        let wq = &w_op[q * coils * coils..(q + 1) * coils * coils];
        let pe = hermitian_eigen(wq, coils)?;
        eigval_raw[q] = pe.values[0];
        for l in 0..coils {
            maps_raw[l * h * w + q] = pe.vectors[0][l];
        }
    }
    let eigval = fftshift2(&eigval_raw, h, w);
    let mut data = vec![zero; coils * h * w];
    for l in 0..coils {
        let shifted = fftshift2(&maps_raw[l * h * w..(l + 1) * h * w], h, w);
        data[l * h * w..(l + 1) * h * w].copy_from_slice(&shifted);
    }

    let cut = T::cast(eig_thresh);
    let mut support = vec![false; h * w];
    for q in 0..h * w {
        if eigval[q] >= cut {
            // rotate so coil 0 is real non-negative, then normalize
            let s0 = data[q];
            let a0 = s0.norm();
            let rot = if a0 > T::zero() {
                s0.conj().unscale(a0)
            } else {
                Complex::new(T::one(), T::zero())
            };
            let mut ssq = T::zero();
            for l in 0..coils {
                let v = data[l * h * w + q] * rot;
                data[l * h * w + q] = v;
                ssq += v.norm_sqr();
            }
            if ssq > T::zero() {
                support[q] = true;
                let inv = T::one() / ssq.sqrt();
                for l in 0..coils {
                    data[l * h * w + q] = data[l * h * w + q].scale(inv);
                }
            }
        }
        if !support[q] {
            for l in 0..coils {
                data[l * h * w + q] = zero;
            }
        }
    }
    CoilSensitivities::new(coils, h, w, data, support)
}

/// GRAPPA kernel geometry: sampled phase-encode lines and readout taps used
/// as sources. Aim for an ACS giving at least ~10x more equations than the
/// `source_lines * readout_taps * coils` unknowns; anything short of one
/// equation per unknown is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrappaGeometry {
    pub source_lines: usize,
    pub readout_taps: usize,
}

impl Default for GrappaGeometry {
    fn default() -> Self {
        GrappaGeometry {
            source_lines: 4,
            readout_taps: 5,
        }
    }
}

impl GrappaGeometry {
    fn validate(&self) -> Result<()> {
        if self.source_lines == 0 {
            return Err(Error::Config("need at least one source line".into()));
        }
        if self.readout_taps == 0 || self.readout_taps.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "readout taps must be odd, got {}",
                self.readout_taps
            )));
        }
        Ok(())
    }

    /// Row offsets (relative to the target) of the sampled source lines for
    /// a target `delta` rows below the lattice.
    fn line_offsets(&self, delta: usize, r: usize) -> Vec<isize> {
        let n = self.source_lines as isize;
        let (lo, hi) = if n % 2 == 0 {
            (-(n / 2 - 1), n / 2)
        } else {
            (-((n - 1) / 2), (n - 1) / 2)
        };
        (lo..=hi)
            .map(|kk| kk * r as isize - delta as isize)
            .collect()
    }

    fn tap_offsets(&self) -> Vec<isize> {
        let half = (self.readout_taps / 2) as isize;
        (-half..=half).collect()
    }
}

/// Fitted interpolation weights: one set per missing-offset class.
#[derive(Debug, Clone)]
pub struct GrappaKernel<T> {
    r: usize,
    coils: usize,
    geometry: GrappaGeometry,
    /// `weights[delta - 1][tc * n_src + s]` with the source index `s`
    /// enumerating (line, tap, coil) in row-major order.
    weights: Vec<Vec<Complex<T>>>,
}

impl<T: Real> GrappaKernel<T> {
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn geometry(&self) -> GrappaGeometry {
        self.geometry
    }

    pub fn weights(&self, delta: usize) -> &[Complex<T>] {
        &self.weights[delta - 1]
    }

    /// Predict the sample of `target_coil` at `(y, x)` from its sampled
    /// neighborhood in `d`; out-of-range sources wrap periodically.
    pub fn predict_at(
        &self,
        d: &MultiCoilKSpace<T>,
        y: usize,
        x: usize,
        target_coil: usize,
    ) -> Complex<T> {
        let (coils, h, w) = d.dims();
        let delta = y % self.r;
        debug_assert!(delta != 0, "predict_at called on a lattice row");
        let line_offs = self.geometry.line_offsets(delta, self.r);
        let tap_offs = self.geometry.tap_offsets();
        let wts = &self.weights[delta - 1];
        let n_src = line_offs.len() * tap_offs.len() * coils;
        let base = target_coil * n_src;
        let mut acc = Complex::new(T::zero(), T::zero());
        let mut s = 0usize;
        for &lo in &line_offs {
            let sy = (y as isize + lo).rem_euclid(h as isize) as usize;
            for &to in &tap_offs {
                let sx = (x as isize + to).rem_euclid(w as isize) as usize;
                for lc in 0..coils {
                    acc += wts[base + s] * d.coil(lc)[sy * w + sx];
                    s += 1;
                }
            }
        }
        acc
    }
}

/// Fit GRAPPA weights from the ACS block for a uniform 1-D pattern of
/// acceleration `r`, with a relative ridge (`ridge * trace` added to the
/// normal-matrix diagonal).
pub fn grappa_calibrate<T: Real>(
    acs: &AcsBlock<T>,
    r: usize,
    geometry: GrappaGeometry,
    ridge: f64,
) -> Result<GrappaKernel<T>> {
    geometry.validate()?;
    if r < 2 {
        return Err(Error::Calibration(
            "nothing to calibrate: acceleration factor is 1".into(),
        ));
    }
    if ridge < 0.0 {
        return Err(Error::Config("ridge must be >= 0".into()));
    }
    let (coils, ah, aw) = acs.dims();
    let tap_offs = geometry.tap_offsets();
    let n_src = geometry.source_lines * geometry.readout_taps * coils;
    let zero = Complex::new(T::zero(), T::zero());

    let mut weights = Vec::with_capacity(r - 1);
    for delta in 1..r {
        let line_offs = geometry.line_offsets(delta, r);
        let min_line = *line_offs.iter().min().unwrap();
        let max_line = *line_offs.iter().max().unwrap();
        let half_tap = (geometry.readout_taps / 2) as isize;

        let ty_lo = (-min_line).max(0) as usize;
        let ty_hi = (ah as isize - max_line).min(ah as isize);
        let tx_lo = half_tap as usize;
        let tx_hi = aw as isize - half_tap;
        let rows = (ty_hi - ty_lo as isize).max(0) as usize;
        let cols = (tx_hi - tx_lo as isize).max(0) as usize;
        let n_eq = rows * cols;
        if n_eq < n_src {
            return Err(Error::Calibration(format!(
                "underdetermined GRAPPA fit for offset {delta}: {n_eq} equations for {n_src} unknowns \
                 (ACS {ah}x{aw}, {} lines x {} taps x {coils} coils)",
                geometry.source_lines, geometry.readout_taps
            )));
        }

        // build the design matrix and targets over all ACS placements
        let mut a = vec![zero; n_eq * n_src];
        let mut b = vec![zero; coils * n_eq];
        let mut row = 0usize;
        for ty in ty_lo..ty_hi as usize {
            for tx in tx_lo..tx_hi as usize {
                let arow = &mut a[row * n_src..(row + 1) * n_src];
                let mut s = 0usize;
                for &lo in &line_offs {
                    let sy = (ty as isize + lo) as usize;
                    for &to in &tap_offs {
                        let sx = (tx as isize + to) as usize;
                        for lc in 0..coils {
                            arow[s] = acs.coil(lc)[sy * aw + sx];
                            s += 1;
                        }
                    }
                }
                for tc in 0..coils {
                    b[tc * n_eq + row] = acs.coil(tc)[ty * aw + tx];
                }
                row += 1;
            }
        }

        // normal equations with relative ridge
        let mut normal = vec![zero; n_src * n_src];
        for eq in 0..n_eq {
            let arow = &a[eq * n_src..(eq + 1) * n_src];
            for i in 0..n_src {
                let ci = arow[i].conj();
                let nrow = &mut normal[i * n_src..(i + 1) * n_src];
                for (j, v) in nrow.iter_mut().enumerate() {
                    *v += ci * arow[j];
                }
            }
        }
        let trace = (0..n_src).fold(T::zero(), |acc, i| acc + normal[i * n_src + i].re);
        if ridge > 0.0 {
            let bump = T::cast(ridge) * trace;
            for i in 0..n_src {
                normal[i * n_src + i] += bump;
            }
        }
        let mut rhs = vec![zero; coils * n_src];
        for tc in 0..coils {
            for i in 0..n_src {
                let mut acc = zero;
                for eq in 0..n_eq {
                    acc += a[eq * n_src + i].conj() * b[tc * n_eq + eq];
                }
                rhs[tc * n_src + i] = acc;
            }
        }
        hermitian_solve(&normal, n_src, &mut rhs, coils)?;
        weights.push(rhs);
    }
    Ok(GrappaKernel {
        r,
        coils,
        geometry,
        weights,
    })
}

/// Fill the missing samples of a uniform 1-D undersampled acquisition;
/// acquired samples (including the ACS) pass through bit-identically.
pub fn grappa_apply<T: Real>(
    d_u: &MultiCoilKSpace<T>,
    kernel: &GrappaKernel<T>,
    p: &SamplingMask,
) -> Result<MultiCoilKSpace<T>> {
    let (coils, h, w) = d_u.dims();
    if p.dims() != (h, w) {
        return Err(Error::Shape(format!(
            "mask {:?} vs k-space {h}x{w}",
            p.dims()
        )));
    }
    if kernel.coils != coils {
        return Err(Error::Calibration(format!(
            "kernel was fitted for {} coils, data has {coils}",
            kernel.coils
        )));
    }
    // the pattern must be row-uniform with the kernel's lattice sampled
    let mut row_sampled = vec![false; h];
    for (y, sampled) in row_sampled.iter_mut().enumerate() {
        let ones = (0..w).filter(|&x| p.is_sampled(y, x)).count();
        if ones != 0 && ones != w {
            return Err(Error::Calibration(format!(
                "mask row {y} is partially sampled; GRAPPA needs a uniform 1-D row pattern"
            )));
        }
        *sampled = ones == w;
    }
    for y in (0..h).step_by(kernel.r) {
        if !row_sampled[y] {
            return Err(Error::Calibration(format!(
                "mask is missing lattice row {y} for acceleration {}",
                kernel.r
            )));
        }
    }

    let mut out = d_u.clone();
    for (y, _) in row_sampled.iter().enumerate().filter(|(_, &s)| !s) {
        for tc in 0..coils {
            for x in 0..w {
                let v = kernel.predict_at(d_u, y, x, tc);
                out.coil_mut(tc)[y * w + x] = v;
            }
        }
    }
    Ok(out)
}

/// Root-sum-of-squares combination of per-coil images.
pub fn rsos_combine<T: Real>(imgs: &[ComplexImage<T>]) -> Result<Tensor<T>> {
    let Some(first) = imgs.first() else {
        return Err(Error::Shape("rsos of zero coil images".into()));
    };
    let (h, w) = first.dims();
    let mut acc = vec![T::zero(); h * w];
    for img in imgs {
        if img.dims() != (h, w) {
            return Err(Error::Shape(format!(
                "rsos image shape mismatch: {:?} vs {h}x{w}",
                img.dims()
            )));
        }
        for (a, v) in acc.iter_mut().zip(img.data()) {
            *a += v.norm_sqr();
        }
    }
    Tensor::from_vec(&[h, w], acc.iter().map(|v| v.sqrt()).collect())
}

/// Coil-wise inverse transform followed by [`rsos_combine`]; the magnitude
/// image of a (filled) multi-coil k-space.
pub fn rsos_image<T: Real>(k: &MultiCoilKSpace<T>) -> Result<Tensor<T>> {
    let (coils, h, w) = k.dims();
    let imgs: Vec<ComplexImage<T>> = (0..coils)
        .map(|l| {
            let img = ComplexImage::from_data(h, w, k.coil(l).to_vec())?;
            Ok(ifft2c(&img))
        })
        .collect::<Result<_>>()?;
    rsos_combine(&imgs)
}
