//! 2-D convolution kernels backing the autodiff tape.
//!
//! Layouts are row-major: input `[C_in, H, W]`, weights `[C_out, C_in, k, k]`,
//! bias `[C_out]`, output `[C_out, H', W']` with
//! `H' = (H + 2*pad - k)/stride + 1`. The forward pass lowers to an
//! im2col buffer followed by a small blocked matrix product; every reduction
//! runs in a fixed order so repeated runs are bitwise identical.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{dot_fixed, sum_fixed, Tensor};

pub(crate) struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) fn conv_dims<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvDims> {
    let (c_in, h, wd) = x.dims3()?;
    let (c_out, wc_in, k) = match w.shape() {
        [co, ci, kh, kw] if kh == kw => (*co, *ci, *kh),
        other => {
            return Err(Error::Shape(format!(
                "conv2d weights must be [C_out, C_in, k, k], got {other:?}"
            )))
        }
    };
    if wc_in != c_in {
        return Err(Error::Shape(format!(
            "conv2d input has {c_in} channels but weights expect {wc_in}"
        )));
    }
    if k == 0 || k % 2 == 0 {
        return Err(Error::Config(format!("conv2d kernel size must be odd, got {k}")));
    }
    if b.shape() != [c_out] {
        return Err(Error::Shape(format!(
            "conv2d bias must be [{c_out}], got {:?}",
            b.shape()
        )));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::Config(format!("conv2d stride must be 1 or 2, got {stride}")));
    }
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(Error::Shape(format!(
            "conv2d kernel {k} does not fit input {h}x{wd} with pad {pad}"
        )));
    }
    let out_h = (h + 2 * pad - k) / stride + 1;
    let out_w = (wd + 2 * pad - k) / stride + 1;
    Ok(ConvDims {
        c_in,
        h,
        w: wd,
        c_out,
        k,
        out_h,
        out_w,
    })
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let d = conv_dims(x, w, b, stride, pad)?;
    let cols = im2col(x.data(), &d, stride, pad);
    let kk = d.c_in * d.k * d.k;
    let m = d.out_h * d.out_w;

    let mut out = Tensor::zeros(&[d.c_out, d.out_h, d.out_w]);
    gemm_acc(d.c_out, kk, m, w.data(), &cols, out.data_mut());
    for (co, &bias) in b.data().iter().enumerate() {
        for v in &mut out.data_mut()[co * m..(co + 1) * m] {
            *v += bias;
        }
    }
    out.check_finite("conv2d")?;
    Ok(out)
}

/// Gradients of a conv2d output w.r.t. input, weights, and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let d = conv_dims(x, w, b, stride, pad)?;
    if grad_out.shape() != [d.c_out, d.out_h, d.out_w] {
        return Err(Error::Shape(format!(
            "conv2d upstream gradient must be [{}, {}, {}], got {:?}",
            d.c_out,
            d.out_h,
            d.out_w,
            grad_out.shape()
        )));
    }
    let kk = d.c_in * d.k * d.k;
    let m = d.out_h * d.out_w;
    let g = grad_out.data();

    let mut db = Tensor::zeros(&[d.c_out]);
    for co in 0..d.c_out {
        db.data_mut()[co] = sum_fixed(&g[co * m..(co + 1) * m]);
    }

    // dW[co, p] = <g row co, cols row p>
    let cols = im2col(x.data(), &d, stride, pad);
    let mut dw = Tensor::zeros(w.shape());
    for co in 0..d.c_out {
        let grow = &g[co * m..(co + 1) * m];
        let drow = &mut dw.data_mut()[co * kk..(co + 1) * kk];
        for (p, dv) in drow.iter_mut().enumerate() {
            *dv = dot_fixed(grow, &cols[p * m..(p + 1) * m]);
        }
    }

    // dcols = W^T * g, then scatter back to image layout.
    let mut dcols = vec![T::zero(); kk * m];
    let wdat = w.data();
    for p in 0..kk {
        let drow = &mut dcols[p * m..(p + 1) * m];
        for co in 0..d.c_out {
            let a = wdat[co * kk + p];
            let grow = &g[co * m..(co + 1) * m];
            for (dv, &gv) in drow.iter_mut().zip(grow) {
                *dv += a * gv;
            }
        }
    }
    let dx = col2im(&dcols, &d, stride, pad);

    dx.check_finite("conv2d backward (input grad)")?;
    dw.check_finite("conv2d backward (weight grad)")?;
    db.check_finite("conv2d backward (bias grad)")?;
    Ok((dx, dw, db))
}

/// cols[(ci*k + kh)*k + kw][oh*out_w + ow] = x[ci][oh*s + kh - pad][ow*s + kw - pad]
fn im2col<T: Real>(x: &[T], d: &ConvDims, stride: usize, pad: usize) -> Vec<T> {
    let kk = d.c_in * d.k * d.k;
    let m = d.out_h * d.out_w;
    let mut cols = vec![T::zero(); kk * m];
    for ci in 0..d.c_in {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for kh in 0..d.k {
            for kw in 0..d.k {
                let row = &mut cols[((ci * d.k + kh) * d.k + kw) * m..][..m];
                for oh in 0..d.out_h {
                    let iy = (oh * stride + kh) as isize - pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let dst = &mut row[oh * d.out_w..(oh + 1) * d.out_w];
                    for (ow, dv) in dst.iter_mut().enumerate() {
                        let ix = (ow * stride + kw) as isize - pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            *dv = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: overlapping window positions accumulate.
fn col2im<T: Real>(dcols: &[T], d: &ConvDims, stride: usize, pad: usize) -> Tensor<T> {
    let m = d.out_h * d.out_w;
    let mut dx = Tensor::zeros(&[d.c_in, d.h, d.w]);
    for ci in 0..d.c_in {
        let plane_off = ci * d.h * d.w;
        for kh in 0..d.k {
            for kw in 0..d.k {
                let row = &dcols[((ci * d.k + kh) * d.k + kw) * m..][..m];
                for oh in 0..d.out_h {
                    let iy = (oh * stride + kh) as isize - pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut dx.data_mut()
                        [plane_off + iy as usize * d.w..plane_off + (iy as usize + 1) * d.w];
                    let src = &row[oh * d.out_w..(oh + 1) * d.out_w];
                    for (ow, &sv) in src.iter().enumerate() {
                        let ix = (ow * stride + kw) as isize - pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += sv;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// C (m x n) += A (m x kk) * B (kk x n), all row-major; fixed accumulation
/// order with four output rows sharing each B row load.
fn gemm_acc<T: Real>(m: usize, kk: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), m * kk);
    assert_eq!(b.len(), kk * n);
    assert_eq!(c.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let block = &mut c[i * n..(i + 4) * n];
        let (c0, rest) = block.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..kk {
            let a0 = a[i * kk + p];
            let a1 = a[(i + 1) * kk + p];
            let a2 = a[(i + 2) * kk + p];
            let a3 = a[(i + 3) * kk + p];
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bj = br[j];
                c0[j] += a0 * bj;
                c1[j] += a1 * bj;
                c2[j] += a2 * bj;
                c3[j] += a3 * bj;
            }
        }
        i += 4;
    }
    while i < m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..kk {
            let ai = a[i * kk + p];
            let br = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(br) {
                *cv += ai * bv;
            }
        }
        i += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn rand_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Direct sliding-window convolution, summing products explicitly.
    fn naive_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (c_in, h, wd) = x.dims3().unwrap();
        let (c_out, k) = (w.shape()[0], w.shape()[2]);
        let out_h = (h + 2 * pad - k) / stride + 1;
        let out_w = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[c_out, out_h, out_w]);
        for co in 0..c_out {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = b.data()[co];
                    for ci in 0..c_in {
                        for kh in 0..k {
                            for kw in 0..k {
                                let iy = (oh * stride + kh) as isize - pad as isize;
                                let ix = (ow * stride + kw) as isize - pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                    acc += w.data()[((co * c_in + ci) * k + kh) * k + kw]
                                        * x.data()[(ci * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                    }
                    out.data_mut()[(co * out_h + oh) * out_w + ow] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = SeededRng::new(11);
        let x = rand_tensor(&[1, 6, 7], &mut rng);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0; // center tap
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_weights_give_constant_bias() {
        let mut rng = SeededRng::new(12);
        let x = rand_tensor(&[3, 5, 5], &mut rng);
        let w = Tensor::zeros(&[2, 3, 3, 3]);
        let b = Tensor::from_vec(&[2], vec![0.25, -1.5]).unwrap();
        let y = conv2d_forward(&x, &w, &b, 1, 1).unwrap();
        for &v in &y.data()[..25] {
            assert_eq!(v, 0.25);
        }
        for &v in &y.data()[25..] {
            assert_eq!(v, -1.5);
        }
    }

    #[test]
    fn matches_sliding_window_oracle() {
        let mut rng = SeededRng::new(13);
        let x = rand_tensor(&[1, 5, 5], &mut rng);
        let w = rand_tensor(&[2, 1, 3, 3], &mut rng);
        let b = rand_tensor(&[2], &mut rng);
        for &(stride, pad) in &[(1usize, 1usize), (1, 0), (2, 1)] {
            let fast = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
            let slow = naive_conv(&x, &w, &b, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, o) in fast.data().iter().zip(slow.data()) {
                assert!((a - o).abs() < 1e-12, "{a} vs {o}");
            }
        }
    }

    #[test]
    fn multichannel_matches_oracle() {
        let mut rng = SeededRng::new(14);
        let x = rand_tensor(&[3, 8, 6], &mut rng);
        let w = rand_tensor(&[4, 3, 3, 3], &mut rng);
        let b = rand_tensor(&[4], &mut rng);
        let fast = conv2d_forward(&x, &w, &b, 2, 1).unwrap();
        let slow = naive_conv(&x, &w, &b, 2, 1);
        for (a, o) in fast.data().iter().zip(slow.data()) {
            assert!((a - o).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(matches!(
            conv2d_forward(&x, &w, &b, 1, 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn rejects_even_kernel_and_bad_stride() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4]);
        let w = Tensor::zeros(&[1, 1, 2, 2]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&x, &w, &b, 1, 0).is_err());
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(conv2d_forward(&x, &w, &b, 3, 1).is_err());
    }

    #[test]
    fn flags_nonfinite_output() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![f64::MAX, f64::MAX, f64::MAX, f64::MAX]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![f64::MAX; 9]).unwrap();
        let b = Tensor::zeros(&[1]);
        assert!(matches!(
            conv2d_forward(&x, &w, &b, 1, 1),
            Err(Error::NonFinite(_))
        ));
    }

    /// Backward pass against central finite differences of a scalarized output.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SeededRng::new(15);
        let x = rand_tensor(&[2, 6, 6], &mut rng);
        let w = rand_tensor(&[3, 2, 3, 3], &mut rng);
        let b = rand_tensor(&[3], &mut rng);
        for &(stride, pad) in &[(1usize, 1usize), (2, 1)] {
            let probe = {
                let out = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
                rand_tensor(out.shape(), &mut rng)
            };
            // loss = <probe, conv(x, w, b)>
            let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                let out = conv2d_forward(x, w, b, stride, pad).unwrap();
                dot_fixed(out.data(), probe.data())
            };
            let (dx, dw, db) = conv2d_backward(&x, &w, &b, stride, pad, &probe).unwrap();
            let h = 1e-5;
            let check = |analytic: &Tensor<f64>, base: &Tensor<f64>, which: usize| {
                for i in 0..base.len() {
                    let mut plus = base.clone();
                    plus.data_mut()[i] += h;
                    let mut minus = base.clone();
                    minus.data_mut()[i] -= h;
                    let (lp, lm) = match which {
                        0 => (loss(&plus, &w, &b), loss(&minus, &w, &b)),
                        1 => (loss(&x, &plus, &b), loss(&x, &minus, &b)),
                        _ => (loss(&x, &w, &plus), loss(&x, &w, &minus)),
                    };
                    let fd = (lp - lm) / (2.0 * h);
                    let ad = analytic.data()[i];
                    let denom = fd.abs().max(1e-6);
                    assert!(
                        ((ad - fd) / denom).abs() < 1e-4,
                        "which={which} i={i}: ad={ad} fd={fd}"
                    );
                }
            };
            check(&dx, &x, 0);
            check(&dw, &w, 1);
            check(&db, &b, 2);
        }
    }
}
