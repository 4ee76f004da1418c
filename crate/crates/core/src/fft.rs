//! Centered orthonormal 2-D Fourier transforms.
//!
//! `fft2c` places DC at the array center (`floor(n/2)` per axis) via
//! pre/post shifting and scales by `1/sqrt(H*W)`, so the adjoint equals the
//! inverse and `ifft2c(fft2c(x)) == x` up to roundoff.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::mri::ComplexImage;
use crate::scalar::Real;

/// Centered orthonormal forward DFT.
pub fn fft2c<T: Real>(img: &ComplexImage<T>) -> ComplexImage<T> {
    let (h, w) = img.dims();
    let data = fft2c_raw(img.data().to_vec(), h, w, false);
    ComplexImage::from_data(h, w, data).expect("shape preserved")
}

/// Centered orthonormal inverse DFT; exact inverse (and adjoint) of [`fft2c`].
pub fn ifft2c<T: Real>(img: &ComplexImage<T>) -> ComplexImage<T> {
    let (h, w) = img.dims();
    let data = fft2c_raw(img.data().to_vec(), h, w, true);
    ComplexImage::from_data(h, w, data).expect("shape preserved")
}

/// Centered orthonormal transform on a raw row-major buffer.
pub(crate) fn fft2c_raw<T: Real>(
    data: Vec<Complex<T>>,
    h: usize,
    w: usize,
    inverse: bool,
) -> Vec<Complex<T>> {
    assert_eq!(data.len(), h * w);
    let mut buf = ifftshift2(&data, h, w);
    fft2_plain(&mut buf, h, w, inverse);
    let mut out = fftshift2(&buf, h, w);
    let scale = T::cast(1.0 / ((h * w) as f64).sqrt());
    for v in &mut out {
        *v = Complex::new(v.re * scale, v.im * scale);
    }
    out
}

/// Unnormalized, uncentered 2-D FFT in place (rows then columns).
pub(crate) fn fft2_plain<T: Real>(data: &mut [Complex<T>], h: usize, w: usize, inverse: bool) {
    assert_eq!(data.len(), h * w);
    if h == 0 || w == 0 {
        return;
    }
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    row_fft.process(data);

    let mut tr = transpose(data, h, w);
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    col_fft.process(&mut tr);
    let back = transpose(&tr, w, h);
    data.copy_from_slice(&back);
}

fn transpose<T: Copy>(data: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for x in 0..w {
        for y in 0..h {
            out.push(data[y * w + x]);
        }
    }
    out
}

/// Move DC (index 0) to the center `floor(n/2)` on both axes.
pub(crate) fn fftshift2<T: Copy>(data: &[T], h: usize, w: usize) -> Vec<T> {
    roll2(data, h, w, h / 2, w / 2)
}

/// Inverse of [`fftshift2`]; differs from it when an extent is odd.
pub(crate) fn ifftshift2<T: Copy>(data: &[T], h: usize, w: usize) -> Vec<T> {
    roll2(data, h, w, h - h / 2, w - w / 2)
}

/// out[(y + sy) % h][(x + sx) % w] = in[y][x]
fn roll2<T: Copy>(data: &[T], h: usize, w: usize, sy: usize, sx: usize) -> Vec<T> {
    assert_eq!(data.len(), h * w);
    let mut out = data.to_vec();
    for y in 0..h {
        let oy = (y + sy) % h;
        for x in 0..w {
            out[oy * w + (x + sx) % w] = data[y * w + x];
        }
    }
    out
}
