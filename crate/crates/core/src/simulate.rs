//! Synthetic ground truth: Shepp-Logan phantom with smooth phase, smooth
//! complex coil profiles, Cartesian undersampling patterns, and noisy
//! acquisitions. Everything is seeded and bitwise reproducible.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::mri::{
    forward_op, AcsRect, CoilSensitivities, ComplexImage, MultiCoilKSpace, SamplingMask,
};
use crate::rng::SeededRng;
use crate::scalar::Real;

/// Ten-ellipse phantom table: (intensity, a, b, x0, y0, angle_deg) in
/// normalized [-1, 1] coordinates. Summed values lie in [0, 1] with the
/// outer rim at exactly 1.
pub const SHEPP_LOGAN_ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
];

/// Ring radius of the simulated coil centers, in units of the half-FOV.
pub const COIL_RING_RADIUS: f64 = 1.15;
/// Gaussian width of each coil lobe, in units of the half-FOV.
pub const COIL_WIDTH: f64 = 0.8;
/// Bound on the per-axis linear phase-ramp coefficients of a coil.
pub const COIL_RAMP_MAX: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub h: usize,
    pub w: usize,
    /// Amplitude of the smooth synthetic phase, in radians.
    pub phase_strength: f64,
    /// Std of the complex Gaussian k-space noise, per real component.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.h < 16 || self.w < 16 {
            return Err(Error::Config(format!(
                "phantom must be at least 16x16, got {}x{}",
                self.h, self.w
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Normalized pixel-center coordinate in (-1, 1) for index `i` of `n`.
fn coord(i: usize, n: usize) -> f64 {
    -1.0 + 2.0 * (i as f64 + 0.5) / n as f64
}

/// Shepp-Logan magnitude in [0, 1] with a seeded smooth polynomial phase.
pub fn shepp_logan<T: Real>(
    h: usize,
    w: usize,
    phase_strength: f64,
    seed: u64,
) -> Result<ComplexImage<T>> {
    if h < 16 || w < 16 {
        return Err(Error::Config(format!(
            "phantom must be at least 16x16, got {h}x{w}"
        )));
    }
    // low-order 2-d polynomial phase coefficients
    let mut rng = SeededRng::new(seed);
    let coeffs: Vec<f64> = (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect();

    let mut data = Vec::with_capacity(h * w);
    for iy in 0..h {
        let y = coord(iy, h);
        for ix in 0..w {
            let x = coord(ix, w);
            let mag = shepp_logan_value(x, y);
            let phase = phase_strength
                * (coeffs[0]
                    + coeffs[1] * x
                    + coeffs[2] * y
                    + coeffs[3] * x * x
                    + coeffs[4] * x * y
                    + coeffs[5] * y * y);
            data.push(Complex::new(
                T::cast(mag * phase.cos()),
                T::cast(mag * phase.sin()),
            ));
        }
    }
    ComplexImage::from_data(h, w, data)
}

/// Summed ellipse intensity at a normalized coordinate.
pub fn shepp_logan_value(x: f64, y: f64) -> f64 {
    let mut v = 0.0;
    for &(a_int, ea, eb, x0, y0, deg) in SHEPP_LOGAN_ELLIPSES.iter() {
        let phi = deg.to_radians();
        let (cp, sp) = (phi.cos(), phi.sin());
        let xr = (x - x0) * cp + (y - y0) * sp;
        let yr = -(x - x0) * sp + (y - y0) * cp;
        if (xr / ea).powi(2) + (yr / eb).powi(2) <= 1.0 {
            v += a_int;
        }
    }
    v
}

/// Smooth complex coil profiles: Gaussian lobes centered on a ring around
/// the FOV with linear phase ramps, normalized to unit sum-of-squares at
/// every pixel (full-FOV support).
pub fn simulate_coils<T: Real>(
    coils: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<CoilSensitivities<T>> {
    if coils == 0 {
        return Err(Error::Config("need at least one coil".into()));
    }
    let mut rng = SeededRng::new(seed);
    let theta0 = rng.uniform_in(0.0, std::f64::consts::TAU);
    struct CoilParams {
        cx: f64,
        cy: f64,
        ramp_x: f64,
        ramp_y: f64,
        phase0: f64,
    }
    let params: Vec<CoilParams> = (0..coils)
        .map(|l| {
            let angle = theta0 + std::f64::consts::TAU * l as f64 / coils as f64;
            CoilParams {
                cx: COIL_RING_RADIUS * angle.cos(),
                cy: COIL_RING_RADIUS * angle.sin(),
                ramp_x: rng.uniform_in(-COIL_RAMP_MAX, COIL_RAMP_MAX),
                ramp_y: rng.uniform_in(-COIL_RAMP_MAX, COIL_RAMP_MAX),
                phase0: rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI),
            }
        })
        .collect();

    let mut data = vec![Complex::new(T::zero(), T::zero()); coils * h * w];
    for iy in 0..h {
        let y = coord(iy, h);
        for ix in 0..w {
            let x = coord(ix, w);
            let p = iy * w + ix;
            let mut ssq = 0.0;
            let mut values = Vec::with_capacity(coils);
            for cp in &params {
                let r2 = (x - cp.cx).powi(2) + (y - cp.cy).powi(2);
                let mag = (-r2 / (2.0 * COIL_WIDTH * COIL_WIDTH)).exp();
                let phase = cp.phase0 + cp.ramp_x * x + cp.ramp_y * y;
                values.push(Complex::new(mag * phase.cos(), mag * phase.sin()));
                ssq += mag * mag;
            }
            let inv = 1.0 / ssq.sqrt();
            for (l, v) in values.iter().enumerate() {
                data[l * h * w + p] = Complex::new(T::cast(v.re * inv), T::cast(v.im * inv));
            }
        }
    }
    CoilSensitivities::new(coils, h, w, data, vec![true; h * w])
}

/// Cartesian undersampling patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Every `r`-th phase-encode row kept, readout fully sampled; ACS is a
    /// centered band of fully sampled rows.
    Uniform1d { r: usize },
    /// Every `r.0`-th row and `r.1`-th column kept (their intersection);
    /// ACS is a centered square.
    Uniform2d { r: (usize, usize) },
}

/// Build a sampling mask; `acs` is the ACS extent (rows for `Uniform1d`,
/// square side for `Uniform2d`).
pub fn sample_pattern(pattern: Pattern, h: usize, w: usize, acs: usize) -> Result<SamplingMask> {
    if h == 0 || w == 0 {
        return Err(Error::Config("mask extents must be positive".into()));
    }
    let mut data = vec![0u8; h * w];
    let rect = match pattern {
        Pattern::Uniform1d { r } => {
            if r == 0 {
                return Err(Error::Config("acceleration factor must be >= 1".into()));
            }
            if acs > h {
                return Err(Error::Config(format!("ACS of {acs} rows does not fit height {h}")));
            }
            for y in (0..h).step_by(r) {
                for x in 0..w {
                    data[y * w + x] = 1;
                }
            }
            let rect = AcsRect::centered(h, w, acs, w);
            for y in rect.y0..rect.y0 + rect.h {
                for x in 0..w {
                    data[y * w + x] = 1;
                }
            }
            rect
        }
        Pattern::Uniform2d { r: (r1, r2) } => {
            if r1 == 0 || r2 == 0 {
                return Err(Error::Config("acceleration factors must be >= 1".into()));
            }
            if acs > h || acs > w {
                return Err(Error::Config(format!(
                    "ACS square of {acs} does not fit {h}x{w}"
                )));
            }
            for y in (0..h).step_by(r1) {
                for x in (0..w).step_by(r2) {
                    data[y * w + x] = 1;
                }
            }
            let rect = AcsRect::centered(h, w, acs, acs);
            for y in rect.y0..rect.y0 + rect.h {
                for x in rect.x0..rect.x0 + rect.w {
                    data[y * w + x] = 1;
                }
            }
            rect
        }
    };
    SamplingMask::new(h, w, data, rect)
}

/// Simulate the acquisition: fully sampled noisy k-space and its
/// undersampled copy.
pub fn simulate_acquisition<T: Real>(
    x: &ComplexImage<T>,
    s: &CoilSensitivities<T>,
    p: &SamplingMask,
    noise_sigma: f64,
    seed: u64,
) -> Result<(MultiCoilKSpace<T>, MultiCoilKSpace<T>)> {
    if noise_sigma < 0.0 {
        return Err(Error::Config("noise_sigma must be >= 0".into()));
    }
    let (h, w) = x.dims();
    let full = SamplingMask::new(h, w, vec![1; h * w], AcsRect::centered(h, w, h, w))?;
    let mut d_full = forward_op(x, s, &full)?;
    if noise_sigma > 0.0 {
        let mut rng = SeededRng::new(seed);
        for v in d_full.data_mut() {
            let (n1, n2) = rng.normal_pair();
            *v += Complex::new(T::cast(noise_sigma * n1), T::cast(noise_sigma * n2));
        }
    }
    let mut d_u = d_full.clone();
    p.apply(&mut d_u);
    Ok((d_full, d_u))
}
