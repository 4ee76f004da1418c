//! Image quality metrics on magnitude images: PSNR, SSIM, NRMSE.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// PSNR values at or beyond this cap are reported as the cap with
/// `psnr_capped` set (identical images have infinite PSNR).
pub const PSNR_CAP_DB: f64 = 300.0;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport<T> {
    pub psnr_db: T,
    /// True when the images were identical and PSNR was capped.
    pub psnr_capped: bool,
    pub ssim: T,
    pub nrmse: T,
}

fn check_pair<T: Real>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<()> {
    if reference.shape() != test.shape() {
        return Err(Error::Shape(format!(
            "metric images differ in shape: {:?} vs {:?}",
            reference.shape(),
            test.shape()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Shape("metric images are empty".into()));
    }
    Ok(())
}

/// `||test - reference||_2 / ||reference||_2`
pub fn nrmse<T: Real>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<T> {
    check_pair(reference, test)?;
    let mut num = T::zero();
    let mut den = T::zero();
    for (&r, &t) in reference.data().iter().zip(test.data()) {
        num += (t - r) * (t - r);
        den += r * r;
    }
    if den == T::zero() {
        return Err(Error::Config("reference image is identically zero".into()));
    }
    Ok((num / den).sqrt())
}

/// `20 log10(max(reference) / rmse)`; identical images report the cap.
pub fn psnr<T: Real>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<(T, bool)> {
    check_pair(reference, test)?;
    let peak = reference
        .data()
        .iter()
        .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    if !(peak > T::zero()) {
        return Err(Error::Config(format!(
            "reference peak must be positive for PSNR, got {peak}"
        )));
    }
    let mut sumsq = T::zero();
    for (&r, &t) in reference.data().iter().zip(test.data()) {
        sumsq += (t - r) * (t - r);
    }
    let rmse = (sumsq / T::from_usize(reference.len()).unwrap()).sqrt();
    if rmse == T::zero() {
        return Ok((T::cast(PSNR_CAP_DB), true));
    }
    let value = T::cast(20.0) * (peak / rmse).log10();
    if value >= T::cast(PSNR_CAP_DB) {
        Ok((T::cast(PSNR_CAP_DB), true))
    } else {
        Ok((value, false))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SsimOptions {
    /// Divide both images by `max(reference)` and take the dynamic range
    /// from the reference (the default). Disabling this makes the measure
    /// symmetric under swapping the inputs.
    pub normalize_by_ref: bool,
}

impl Default for SsimOptions {
    fn default() -> Self {
        SsimOptions {
            normalize_by_ref: true,
        }
    }
}

/// Mean local SSIM over a 7x7 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, computed on the valid (fully covered) window positions.
pub fn ssim<T: Real>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<T> {
    ssim_with(reference, test, SsimOptions::default())
}

pub fn ssim_with<T: Real>(
    reference: &Tensor<T>,
    test: &Tensor<T>,
    opts: SsimOptions,
) -> Result<T> {
    check_pair(reference, test)?;
    let [h, w] = reference.shape()[..] else {
        return Err(Error::Shape(format!(
            "ssim expects 2-d images, got {:?}",
            reference.shape()
        )));
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }

    let (r_img, t_img): (Vec<T>, Vec<T>) = if opts.normalize_by_ref {
        let peak = reference
            .data()
            .iter()
            .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    if !(peak > T::zero()) {
            return Err(Error::Config(format!(
                "reference peak must be positive for SSIM, got {peak}"
            )));
        }
        (
            reference.data().iter().map(|&v| v / peak).collect(),
            test.data().iter().map(|&v| v / peak).collect(),
        )
    } else {
        (reference.data().to_vec(), test.data().to_vec())
    };

    let range = if opts.normalize_by_ref {
        let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
        for &v in &r_img {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    } else {
        let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
        for &v in r_img.iter().chain(&t_img) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    };
    let range = if range > T::zero() { range } else { T::one() };
    let c1 = (T::cast(SSIM_K1) * range).powi(2);
    let c2 = (T::cast(SSIM_K2) * range).powi(2);

    let window = gaussian_window::<T>();
    let half = SSIM_WINDOW / 2;
    let mut acc = T::zero();
    let mut count = 0usize;
    for cy in half..h - half {
        for cx in half..w - half {
            let mut mu_r = T::zero();
            let mut mu_t = T::zero();
            let mut rr = T::zero();
            let mut tt = T::zero();
            let mut rt = T::zero();
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let wgt = window[dy * SSIM_WINDOW + dx];
                    let rv = r_img[(cy + dy - half) * w + cx + dx - half];
                    let tv = t_img[(cy + dy - half) * w + cx + dx - half];
                    mu_r += wgt * rv;
                    mu_t += wgt * tv;
                    rr += wgt * rv * rv;
                    tt += wgt * tv * tv;
                    rt += wgt * (rv * tv);
                }
            }
            let var_r = rr - mu_r * mu_r;
            let var_t = tt - mu_t * mu_t;
            let cov = rt - mu_r * mu_t;
            let two = T::cast(2.0);
            let num = (two * mu_r * mu_t + c1) * (two * cov + c2);
            let den = (mu_r * mu_r + mu_t * mu_t + c1) * (var_r + var_t + c2);
            acc += num / den;
            count += 1;
        }
    }
    Ok(acc / T::from_usize(count).unwrap())
}

fn gaussian_window<T: Real>() -> Vec<T> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g = Vec::with_capacity(SSIM_WINDOW);
    for i in 0..SSIM_WINDOW {
        let d = i as f64 - half;
        g.push((-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    }
    let sum1d: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(T::cast(gy * gx / (sum1d * sum1d)));
        }
    }
    w
}

/// All three metrics at once (SSIM with default options).
pub fn evaluate<T: Real>(reference: &Tensor<T>, test: &Tensor<T>) -> Result<MetricReport<T>> {
    let (psnr_db, psnr_capped) = psnr(reference, test)?;
    Ok(MetricReport {
        psnr_db,
        psnr_capped,
        ssim: ssim(reference, test)?,
        nrmse: nrmse(reference, test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn rand_image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = SeededRng::new(seed);
        let data = (0..h * w).map(|_| rng.uniform_in(0.1, 1.0)).collect();
        Tensor::from_vec(&[h, w], data).unwrap()
    }

    #[test]
    fn nrmse_examples() {
        let r = rand_image(8, 8, 1);
        assert_eq!(nrmse(&r, &r).unwrap(), 0.0);
        let doubled = r.scale(2.0);
        let v = nrmse(&r, &doubled).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        // direct formula oracle
        let t = rand_image(8, 8, 2);
        let num: f64 = r
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (b - a) * (b - a))
            .sum();
        let den: f64 = r.data().iter().map(|a| a * a).sum();
        let oracle = (num / den).sqrt();
        assert!((nrmse(&r, &t).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn psnr_uniform_offset_is_forty_db() {
        // max(ref) = 1 and a constant 0.01 offset: rmse = 0.01 -> 40 dB
        let mut r = rand_image(16, 16, 3);
        r.data_mut()[5] = 1.0; // pin the peak at exactly 1
        for v in r.data_mut().iter_mut() {
            *v = v.min(1.0);
        }
        let t = r.map(|v| v + 0.01);
        let (db, capped) = psnr(&r, &t).unwrap();
        assert!(!capped);
        assert!((db - 40.0).abs() < 1e-10, "psnr {db}");
    }

    #[test]
    fn psnr_identical_is_capped() {
        let r = rand_image(8, 8, 4);
        let (db, capped) = psnr(&r, &r).unwrap();
        assert_eq!(db, PSNR_CAP_DB);
        assert!(capped);
    }

    #[test]
    fn psnr_matches_formula_oracle() {
        let r = rand_image(8, 8, 5);
        let t = rand_image(8, 8, 6);
        let peak = r.data().iter().cloned().fold(f64::MIN, f64::max);
        let mse: f64 =
            r.data().iter().zip(t.data()).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / 64.0;
        let oracle = 20.0 * (peak / mse.sqrt()).log10();
        let (db, _) = psnr(&r, &t).unwrap();
        assert!((db - oracle).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let r = rand_image(16, 16, 7);
        let v = ssim(&r, &r).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "ssim {v}");
    }

    #[test]
    fn ssim_anticorrelated_is_negative() {
        // zero-mean high-variance pattern against its negation
        let (h, w) = (16, 16);
        let data: Vec<f64> = (0..h * w)
            .map(|i| if (i / w + i % w) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let r = Tensor::from_vec(&[h, w], data).unwrap();
        let t = r.scale(-1.0);
        let v = ssim(&r, &t).unwrap();
        assert!(v < 0.0, "ssim {v}");
    }

    /// Direct windowed-formula oracle on an 8x8 image (four valid windows),
    /// written out independently of the implementation.
    #[test]
    fn ssim_matches_windowed_oracle() {
        let r = rand_image(8, 8, 8);
        let t = rand_image(8, 8, 9);
        let got = ssim(&r, &t).unwrap();

        let peak = r.data().iter().cloned().fold(f64::MIN, f64::max);
        let rn: Vec<f64> = r.data().iter().map(|v| v / peak).collect();
        let tn: Vec<f64> = t.data().iter().map(|v| v / peak).collect();
        let lo = rn.iter().cloned().fold(f64::MAX, f64::min);
        let hi = rn.iter().cloned().fold(f64::MIN, f64::max);
        let range = hi - lo;
        let c1 = (0.01 * range) * (0.01 * range);
        let c2 = (0.03 * range) * (0.03 * range);
        let g: Vec<f64> = (0..7)
            .map(|i| (-((i as f64 - 3.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
            .collect();
        let gs: f64 = g.iter().sum();
        let mut total = 0.0;
        let mut count = 0;
        for cy in 3..5usize {
            for cx in 3..5usize {
                let (mut mr, mut mt, mut srr, mut stt, mut srt) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..7usize {
                    for dx in 0..7usize {
                        let wgt = g[dy] * g[dx] / (gs * gs);
                        let rv = rn[(cy + dy - 3) * 8 + cx + dx - 3];
                        let tv = tn[(cy + dy - 3) * 8 + cx + dx - 3];
                        mr += wgt * rv;
                        mt += wgt * tv;
                        srr += wgt * rv * rv;
                        stt += wgt * tv * tv;
                        srt += wgt * (rv * tv);
                    }
                }
                let (vr, vt, cv) = (srr - mr * mr, stt - mt * mt, srt - mr * mt);
                total += ((2.0 * mr * mt + c1) * (2.0 * cv + c2))
                    / ((mr * mr + mt * mt + c1) * (vr + vt + c2));
                count += 1;
            }
        }
        let oracle = total / count as f64;
        assert!((got - oracle).abs() < 1e-13, "{got} vs {oracle}");
    }

    #[test]
    fn ssim_symmetric_mode() {
        let r = rand_image(12, 12, 10);
        let t = rand_image(12, 12, 11);
        let opts = SsimOptions {
            normalize_by_ref: false,
        };
        let ab = ssim_with(&r, &t, opts).unwrap();
        let ba = ssim_with(&t, &r, opts).unwrap();
        assert_eq!(ab.to_bits(), ba.to_bits());
    }

    #[test]
    fn rejects_shape_mismatch_and_tiny_images() {
        let a = rand_image(8, 8, 12);
        let b = rand_image(8, 9, 13);
        assert!(nrmse(&a, &b).is_err());
        let tiny = rand_image(4, 4, 14);
        assert!(ssim(&tiny, &tiny).is_err());
    }

    proptest! {
        /// All three metrics are invariant under a common positive rescaling.
        #[test]
        fn metrics_are_scale_invariant(c in 0.05f64..20.0) {
            let r = rand_image(10, 10, 15);
            let t = rand_image(10, 10, 16);
            let rs = r.scale(c);
            let ts = t.scale(c);
            let n1 = nrmse(&r, &t).unwrap();
            let n2 = nrmse(&rs, &ts).unwrap();
            prop_assert!((n1 - n2).abs() < 1e-12);
            let (p1, _) = psnr(&r, &t).unwrap();
            let (p2, _) = psnr(&rs, &ts).unwrap();
            prop_assert!((p1 - p2).abs() < 1e-9);
            let s1 = ssim(&r, &t).unwrap();
            let s2 = ssim(&rs, &ts).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-9);
        }
    }
}
