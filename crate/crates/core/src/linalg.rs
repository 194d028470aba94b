//! Small dense Hermitian linear algebra (n <= 8) on row-major slices.
//!
//! Everything here operates on `&[Complex<T>]` of length `n * n` so the grid
//! loops can hand out views into a field without copying.

use num_complex::Complex;
use num_traits::{One, Zero};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Eigenvalues<T> = SmallVec<[T; 8]>;

const MAX_SWEEPS: usize = 60;

/// Largest |a_ij - conj(a_ji)| relative to max(1, max |a_ij|).
pub fn hermitian_residual<T: Scalar>(a: &[Complex<T>], n: usize) -> T {
    let mut worst = T::zero();
    let mut scale = T::one();
    for i in 0..n {
        for j in 0..n {
            scale = scale.max(a[i * n + j].norm());
            worst = worst.max((a[i * n + j] - a[j * n + i].conj()).norm());
        }
    }
    worst / scale
}

/// Eigenvalues of a Hermitian matrix, sorted descending.
pub fn hermitian_eigenvalues<T: Scalar>(a: &[Complex<T>], n: usize) -> Eigenvalues<T> {
    match n {
        1 => SmallVec::from_slice(&[a[0].re]),
        2 => {
            let (hi, lo) = eig2(a[0].re, a[3].re, a[1]);
            SmallVec::from_slice(&[hi, lo])
        }
        _ => {
            let mut work: SmallVec<[Complex<T>; 64]> = SmallVec::from_slice(&a[..n * n]);
            jacobi(&mut work, n, None);
            let mut vals: Eigenvalues<T> = (0..n).map(|i| work[i * n + i].re).collect();
            vals.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
            vals
        }
    }
}

/// Closed form for [[a, b], [conj(b), d]], returns (larger, smaller).
fn eig2<T: Scalar>(a: T, d: T, b: Complex<T>) -> (T, T) {
    let half = T::lit(0.5);
    let mean = (a + d) * half;
    let diff = (a - d) * half;
    let rad = diff.hypot(b.norm());
    let hi = mean + rad;
    let lo = mean - rad;
    // recover the small-magnitude root from the product to avoid cancellation
    let det = a * d - b.norm_sqr();
    if mean > T::zero() && hi != T::zero() {
        (hi, det / hi)
    } else if mean < T::zero() && lo != T::zero() {
        (det / lo, lo)
    } else {
        (hi, lo)
    }
}

/// Eigen-decomposition of a Hermitian matrix.
///
/// Returns eigenvalues sorted descending and the unitary matrix of
/// eigenvectors in row-major layout, column `k` belonging to value `k`.
pub fn hermitian_eigen<T: Scalar>(a: &[Complex<T>], n: usize) -> (Eigenvalues<T>, Vec<Complex<T>>) {
    let mut work: SmallVec<[Complex<T>; 64]> = SmallVec::from_slice(&a[..n * n]);
    let mut v = vec![Complex::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = Complex::one();
    }
    if n > 1 {
        jacobi(&mut work, n, Some(&mut v));
    }
    let mut order: SmallVec<[usize; 8]> = (0..n).collect();
    order.sort_by(|&x, &y| work[y * n + y].re.partial_cmp(&work[x * n + x].re).unwrap_or(std::cmp::Ordering::Equal));
    let vals = order.iter().map(|&k| work[k * n + k].re).collect();
    let mut vecs = vec![Complex::zero(); n * n];
    for (new_k, &old_k) in order.iter().enumerate() {
        for i in 0..n {
            vecs[i * n + new_k] = v[i * n + old_k];
        }
    }
    (vals, vecs)
}

/// Cyclic complex Jacobi. On return the diagonal of `a` holds the
/// eigenvalues; `v` (if given) is right-multiplied by the accumulated rotations.
fn jacobi<T: Scalar>(a: &mut [Complex<T>], n: usize, mut v: Option<&mut [Complex<T>]>) {
    for i in 0..n {
        a[i * n + i].im = T::zero();
    }
    let eps = T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag += a[i * n + i].re * a[i * n + i].re;
            for j in (i + 1)..n {
                off += a[i * n + j].norm_sqr();
            }
        }
        if off <= eps * eps * diag * T::lit(1e-4) || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                let r = apq.norm();
                if r == T::zero() {
                    continue;
                }
                let app = a[p * n + p].re;
                let aqq = a[q * n + q].re;
                if r <= eps * T::lit(1e-3) * (app.abs() + aqq.abs()) {
                    a[p * n + q] = Complex::zero();
                    a[q * n + p] = Complex::zero();
                    continue;
                }
                let e = apq / r;
                let theta = (aqq - app) / (r + r);
                let t = if theta >= T::zero() {
                    T::one() / (theta + (theta * theta + T::one()).sqrt())
                } else {
                    -T::one() / (-theta + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                let ec = e * c;
                let es = e * s;
                // A <- A J with J = [[e c, e s], [-s, c]] on (p, q)
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = akp * ec - akq * s;
                    a[k * n + q] = akp * es + akq * c;
                }
                // A <- J^* A
                let ecc = ec.conj();
                let esc = es.conj();
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = apk * ecc - aqk * s;
                    a[q * n + k] = apk * esc + aqk * c;
                }
                a[p * n + q] = Complex::zero();
                a[q * n + p] = Complex::zero();
                a[p * n + p].im = T::zero();
                a[q * n + q].im = T::zero();
                if let Some(v) = v.as_deref_mut() {
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = vkp * ec - vkq * s;
                        v[k * n + q] = vkp * es + vkq * c;
                    }
                }
            }
        }
    }
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky_lower<T: Scalar>(a: &[Complex<T>], n: usize) -> Result<Vec<Complex<T>>> {
    let mut l = vec![Complex::zero(); n * n];
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if !(d > T::zero()) {
            return Err(Error::NotPositiveDefinite(format!("pivot {j} is {}", d.to_f64_lossy())));
        }
        let djj = d.sqrt();
        l[j * n + j] = Complex::new(djj, T::zero());
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(l)
}

/// Eigenvalues of `b` relative to the positive definite `a`, i.e. of
/// `a^{-1/2} b a^{-1/2}`, sorted descending.
pub fn generalized_eigenvalues<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>], n: usize) -> Result<Eigenvalues<T>> {
    let l = cholesky_lower(a, n)?;
    // X = L^{-1} B, then C = X L^{-*} = (L^{-1} X^*)^*
    let x = forward_solve(&l, b, n);
    let xh = adjoint(&x, n);
    let y = forward_solve(&l, &xh, n);
    let mut c = adjoint(&y, n);
    // symmetrize away rounding
    for i in 0..n {
        for j in (i + 1)..n {
            let m = (c[i * n + j] + c[j * n + i].conj()) * T::lit(0.5);
            c[i * n + j] = m;
            c[j * n + i] = m.conj();
        }
        c[i * n + i].im = T::zero();
    }
    Ok(hermitian_eigenvalues(&c, n))
}

/// Solves L X = B column by column for lower triangular L.
fn forward_solve<T: Scalar>(l: &[Complex<T>], b: &[Complex<T>], n: usize) -> Vec<Complex<T>> {
    let mut x = vec![Complex::zero(); n * n];
    for col in 0..n {
        for i in 0..n {
            let mut s = b[i * n + col];
            for k in 0..i {
                s = s - l[i * n + k] * x[k * n + col];
            }
            x[i * n + col] = s / l[i * n + i];
        }
    }
    x
}

pub fn adjoint<T: Scalar>(a: &[Complex<T>], n: usize) -> Vec<Complex<T>> {
    let mut out = vec![Complex::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j].conj();
        }
    }
    out
}

pub fn matmul<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>], n: usize) -> Vec<Complex<T>> {
    let mut out = vec![Complex::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == Complex::zero() {
                continue;
            }
            for j in 0..n {
                out[i * n + j] = out[i * n + j] + aik * b[k * n + j];
            }
        }
    }
    out
}

/// Determinant and inverse by partially pivoted Gaussian elimination.
/// Returns `None` for an exactly singular pivot.
pub fn det_and_inverse<T: Scalar>(m: &[Complex<T>], n: usize) -> Option<(Complex<T>, Vec<Complex<T>>)> {
    let mut a: Vec<Complex<T>> = m[..n * n].to_vec();
    let mut inv = vec![Complex::zero(); n * n];
    for i in 0..n {
        inv[i * n + i] = Complex::one();
    }
    let mut det = Complex::one();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| {
                a[x * n + col].norm().partial_cmp(&a[y * n + col].norm()).unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        if a[pivot * n + col] == Complex::zero() {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(pivot * n + j, col * n + j);
                inv.swap(pivot * n + j, col * n + j);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det = det * p;
        for j in 0..n {
            a[col * n + j] = a[col * n + j] / p;
            inv[col * n + j] = inv[col * n + j] / p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == Complex::zero() {
                continue;
            }
            for j in 0..n {
                a[r * n + j] = a[r * n + j] - f * a[col * n + j];
                inv[r * n + j] = inv[r * n + j] - f * inv[col * n + j];
            }
        }
    }
    Some((det, inv))
}

/// Eigenvalues of a real symmetric matrix, sorted descending.
pub fn symmetric_eigenvalues<T: Scalar>(a: &[T], n: usize) -> Eigenvalues<T> {
    let c: SmallVec<[Complex<T>; 64]> = a[..n * n].iter().map(|&x| Complex::new(x, T::zero())).collect();
    hermitian_eigenvalues(&c, n)
}
