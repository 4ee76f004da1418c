//! Small dense complex Hermitian solvers: a cyclic Jacobi eigendecomposition
//! and a Cholesky solve. Both run in a fixed operation order, so results are
//! bitwise reproducible run to run.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Eigendecomposition of a Hermitian matrix, eigenvalues descending.
pub struct HermitianEigen<T> {
    pub values: Vec<T>,
    /// `vectors[j]` is the unit eigenvector paired with `values[j]`.
    pub vectors: Vec<Vec<Complex<T>>>,
}

/// Cyclic-by-rows Jacobi on a Hermitian `n x n` matrix (row-major).
///
/// The input is symmetrized as `(A + A^H)/2` first, so mildly asymmetric
/// roundoff in the caller's assembly is harmless.
pub fn hermitian_eigen<T: Real>(a: &[Complex<T>], n: usize) -> Result<HermitianEigen<T>> {
    if a.len() != n * n {
        return Err(Error::Shape(format!(
            "hermitian_eigen: {} entries for an {n}x{n} matrix",
            a.len()
        )));
    }
    let mut m: Vec<Complex<T>> = vec![Complex::new(T::zero(), T::zero()); n * n];
    for i in 0..n {
        for j in 0..n {
            let avg = (a[i * n + j] + a[j * n + i].conj()).scale(T::cast(0.5));
            m[i * n + j] = avg;
        }
    }
    let mut v: Vec<Complex<T>> = vec![Complex::new(T::zero(), T::zero()); n * n];
    for i in 0..n {
        v[i * n + i] = Complex::new(T::one(), T::zero());
    }

    let fro = m
        .iter()
        .fold(T::zero(), |acc, x| acc + x.norm_sqr())
        .sqrt();
    if fro == T::zero() || n <= 1 {
        let values = (0..n).map(|i| m[i * n + i].re).collect();
        let vectors = (0..n)
            .map(|j| (0..n).map(|i| v[i * n + j]).collect())
            .collect();
        return sorted(values, vectors);
    }
    let tol = T::cast(1e-14) * fro;

    for _sweep in 0..60 {
        let mut off = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[i * n + j].norm_sqr();
                }
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[p * n + q];
                let abs_apq = apq.norm();
                if abs_apq <= T::cast(1e-300) {
                    continue;
                }
                // phase: e^{i phi} = apq / |apq|
                let phase = apq.unscale(abs_apq);
                let app = m[p * n + p].re;
                let aqq = m[q * n + q].re;
                let tau = (aqq - app) / (T::cast(2.0) * abs_apq);
                let t = if tau >= T::zero() {
                    T::one() / (tau + (T::one() + tau * tau).sqrt())
                } else {
                    -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;

                // rows p, q: [row_p; row_q] <- U^H [row_p; row_q]
                //   row_p' = c row_p - e^{i phi} s row_q
                //   row_q' = s row_p + e^{i phi} c row_q
                let eips = phase.scale(s);
                let eipc = phase.scale(c);
                for j in 0..n {
                    let mp = m[p * n + j];
                    let mq = m[q * n + j];
                    m[p * n + j] = mp.scale(c) - eips * mq;
                    m[q * n + j] = mp.scale(s) + eipc * mq;
                }
                // columns p, q: [col_p col_q] <- [col_p col_q] U
                //   col_p' = c col_p - e^{-i phi} s col_q
                //   col_q' = s col_p + e^{-i phi} c col_q
                let emips = phase.conj().scale(s);
                let emipc = phase.conj().scale(c);
                for i in 0..n {
                    let mp = m[i * n + p];
                    let mq = m[i * n + q];
                    m[i * n + p] = mp.scale(c) - emips * mq;
                    m[i * n + q] = mp.scale(s) + emipc * mq;
                    let vp = v[i * n + p];
                    let vq = v[i * n + q];
                    v[i * n + p] = vp.scale(c) - emips * vq;
                    v[i * n + q] = vp.scale(s) + emipc * vq;
                }
                // kill rotation roundoff on the zeroed pair
                m[p * n + q] = Complex::new(T::zero(), T::zero());
                m[q * n + p] = Complex::new(T::zero(), T::zero());
                m[p * n + p] = Complex::new(m[p * n + p].re, T::zero());
                m[q * n + q] = Complex::new(m[q * n + q].re, T::zero());
            }
        }
    }

    let values: Vec<T> = (0..n).map(|i| m[i * n + i].re).collect();
    let vectors: Vec<Vec<Complex<T>>> = (0..n)
        .map(|j| (0..n).map(|i| v[i * n + j]).collect())
        .collect();
    sorted(values, vectors)
}

fn sorted<T: Real>(
    values: Vec<T>,
    vectors: Vec<Vec<Complex<T>>>,
) -> Result<HermitianEigen<T>> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("finite eigenvalues"));
    Ok(HermitianEigen {
        values: idx.iter().map(|&i| values[i]).collect(),
        vectors: idx.iter().map(|&i| vectors[i].clone()).collect(),
    })
}

/// Solve `A X = B` for Hermitian positive-definite `A` via Cholesky.
///
/// `b` holds `nrhs` column vectors stacked contiguously (each of length `n`)
/// and is overwritten with the solutions.
pub fn hermitian_solve<T: Real>(
    a: &[Complex<T>],
    n: usize,
    b: &mut [Complex<T>],
    nrhs: usize,
) -> Result<()> {
    if a.len() != n * n || b.len() != n * nrhs {
        return Err(Error::Shape(format!(
            "hermitian_solve: matrix {} entries, rhs {} entries, n = {n}, nrhs = {nrhs}",
            a.len(),
            b.len()
        )));
    }
    // lower-triangular factor, row-major
    let zero = Complex::new(T::zero(), T::zero());
    let mut l = vec![zero; n * n];
    for j in 0..n {
        let mut diag = a[j * n + j].re;
        for k in 0..j {
            diag -= l[j * n + k].norm_sqr();
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
        if !(diag > T::zero()) {
            return Err(Error::Calibration(format!(
                "normal matrix is not positive definite at pivot {j} (value {diag})"
            )));
        }
        let ljj = diag.sqrt();
        l[j * n + j] = Complex::new(ljj, T::zero());
        for i in j + 1..n {
            let mut acc = a[i * n + j];
            for k in 0..j {
                acc -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = acc.unscale(ljj);
        }
    }
    for r in 0..nrhs {
        let x = &mut b[r * n..(r + 1) * n];
        // forward: L y = b
        for i in 0..n {
            let mut acc = x[i];
            for k in 0..i {
                acc -= l[i * n + k] * x[k];
            }
            x[i] = acc.unscale(l[i * n + i].re);
        }
        // backward: L^H x = y
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in i + 1..n {
                acc -= l[k * n + i].conj() * x[k];
            }
            x[i] = acc.unscale(l[i * n + i].re);
        }
    }
    Ok(())
}
