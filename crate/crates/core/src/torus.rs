//! Periodic grids on the flat complex torus and pointwise form algebra.
//!
//! Real axis `2i` is `x_i` and `2i + 1` is `y_i`; the linear index has axis 0
//! fastest. The flat metric is the identity in these coordinates and the
//! volume form has unit density.

use std::io::{BufRead, Write};

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::eigenops::{self, Vector};
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::{pairwise_sum, Scalar};

pub const MAX_DIM: usize = 3;
/// Minimum points per parallel task.
pub(crate) const PAR_MIN: usize = 2048;
pub const SNAPSHOT_SCHEMA: &str = "dhym.snapshot/1";

/// Second-difference scheme for the complex Hessian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// Three-point pure second differences, four-point mixed ones.
    Compact,
    /// Every second difference is a product of central first differences.
    /// The discrete Hessian then has the null-Lagrangian structure of the
    /// continuum one (integrals of its minors vanish), which keeps the
    /// conserved quantities of the flow exact in dimensions one and two.
    Product,
}

impl Stencil {
    /// Default: compact in one dimension, where the two agree on every
    /// invariant, product otherwise.
    pub fn default_for(n: usize) -> Self {
        if n == 1 {
            Stencil::Compact
        } else {
            Stencil::Product
        }
    }

    /// Weight of the center value in each diagonal entry `H_{i ibar}`.
    pub fn center_weight<T: Scalar>(self, h: T) -> T {
        match self {
            Stencil::Compact => -T::one() / (h * h),
            Stencil::Product => -T::one() / (T::lit(4.0) * h * h),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorusGrid<T: Scalar> {
    n: usize,
    points: usize,
    period: T,
    h: T,
    stencil: Stencil,
    len: usize,
}

impl<T: Scalar> TorusGrid<T> {
    pub fn new(n: usize, points: usize, period: T) -> Result<Self> {
        Self::with_stencil(n, points, period, Stencil::default_for(n))
    }

    pub fn with_stencil(n: usize, points: usize, period: T, stencil: Stencil) -> Result<Self> {
        if n == 0 || n > MAX_DIM {
            return Err(Error::InvalidParameter(format!("complex dimension must be in 1..=3, got {n}")));
        }
        if points < 8 || !points.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("points per axis must be even and >= 8, got {points}")));
        }
        if !(period > T::zero()) || !period.is_finite() {
            return Err(Error::InvalidParameter(format!("period must be positive, got {period}")));
        }
        let len = points.checked_pow(2 * n as u32).ok_or_else(|| Error::InvalidParameter("grid too large".into()))?;
        Ok(Self { n, points, period, h: period / T::from_usize_exact(points), stencil, len })
    }

    /// Period `2 pi`.
    pub fn standard(n: usize, points: usize) -> Result<Self> {
        Self::new(n, points, T::TAU())
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn points(&self) -> usize {
        self.points
    }
    pub fn period(&self) -> T {
        self.period
    }
    pub fn spacing(&self) -> T {
        self.h
    }
    pub fn stencil(&self) -> Stencil {
        self.stencil
    }
    pub fn axes(&self) -> usize {
        2 * self.n
    }
    pub fn len(&self) -> usize {
        self.len
    }
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
    pub fn volume(&self) -> T {
        self.period.powi(2 * self.n as i32)
    }
    pub fn cell_volume(&self) -> T {
        self.h.powi(2 * self.n as i32)
    }
    pub fn stride(&self, axis: usize) -> usize {
        self.points.pow(axis as u32)
    }

    pub fn coords(&self, idx: usize) -> SmallVec<[usize; 6]> {
        let mut rest = idx;
        (0..self.axes())
            .map(|_| {
                let c = rest % self.points;
                rest /= self.points;
                c
            })
            .collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().rev().fold(0, |acc, &c| acc * self.points + c % self.points)
    }

    /// Index of the neighbour `delta` cells along `axis`.
    #[inline]
    pub fn shift(&self, idx: usize, axis: usize, delta: isize) -> usize {
        let s = self.stride(axis);
        let c = (idx / s) % self.points;
        let np = self.points as isize;
        let nc = ((c as isize + delta) % np + np) % np;
        idx + (nc as usize) * s - c * s
    }

    pub fn position(&self, idx: usize) -> SmallVec<[T; 6]> {
        self.coords(idx).iter().map(|&c| T::from_usize_exact(c) * self.h).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n == other.n && self.points == other.points && self.period == other.period
    }
}

/// Real scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential<T: Scalar> {
    pub values: Vec<T>,
}

impl<T: Scalar> Potential<T> {
    pub fn zeros(grid: &TorusGrid<T>) -> Self {
        Self { values: vec![T::zero(); grid.len()] }
    }

    pub fn constant(grid: &TorusGrid<T>, c: T) -> Self {
        Self { values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: &TorusGrid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!("potential has {} values, grid has {}", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("potential has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn from_fn(grid: &TorusGrid<T>, f: impl Fn(&[T]) -> T + Sync) -> Self {
        let values = (0..grid.len()).into_par_iter().map(|i| f(&grid.position(i))).collect();
        Self { values }
    }

    /// Smooth periodic bump `amp * exp(k * sum_a (cos(2 pi (x_a - c_a)/L) - 1))`.
    pub fn bump(grid: &TorusGrid<T>, center: &[T], concentration: T, amp: T) -> Self {
        let w = T::TAU() / grid.period();
        Self::from_fn(grid, |x| {
            let s = x.iter().zip(center).fold(T::zero(), |acc, (&xa, &ca)| acc + ((w * (xa - ca)).cos() - T::one()));
            amp * (concentration * s).exp()
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup(&self) -> T {
        self.values.iter().fold(T::neg_infinity(), |m, &v| m.max(v))
    }
    pub fn inf(&self) -> T {
        self.values.iter().fold(T::infinity(), |m, &v| m.min(v))
    }
    pub fn sup_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }
    pub fn oscillation(&self) -> T {
        self.sup() - self.inf()
    }
    pub fn mean(&self) -> T {
        pairwise_sum(&self.values) / T::from_usize_exact(self.values.len())
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { values: self.values.iter().map(|&v| v * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { values: self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { values: self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect() }
    }

    pub fn add_constant(&self, c: T) -> Self {
        Self { values: self.values.iter().map(|&v| v + c).collect() }
    }
}

/// Hermitian `n x n` matrix per grid point, stored point-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianField<T: Scalar> {
    n: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> HermitianField<T> {
    pub fn zeros(grid: &TorusGrid<T>) -> Self {
        Self { n: grid.n(), data: vec![Complex::new(T::zero(), T::zero()); grid.len() * grid.n() * grid.n()] }
    }

    /// Same matrix at every point.
    pub fn constant(grid: &TorusGrid<T>, matrix: &[Complex<T>]) -> Result<Self> {
        let n = grid.n();
        if matrix.len() != n * n {
            return Err(Error::Shape(format!("expected {} matrix entries, got {}", n * n, matrix.len())));
        }
        let r = linalg::hermitian_residual(matrix, n);
        if r > T::lit(1e-12).max(T::epsilon() * T::lit(64.0)) {
            return Err(Error::NotHermitian { residual: r.to_f64_lossy() });
        }
        let mut m = matrix.to_vec();
        symmetrize(&mut m, n);
        let mut data = Vec::with_capacity(grid.len() * n * n);
        for _ in 0..grid.len() {
            data.extend_from_slice(&m);
        }
        Ok(Self { n, data })
    }

    pub fn diagonal(grid: &TorusGrid<T>, diag: &[T]) -> Result<Self> {
        let n = grid.n();
        if diag.len() != n {
            return Err(Error::Shape(format!("expected {n} diagonal entries, got {}", diag.len())));
        }
        let mut m = vec![Complex::new(T::zero(), T::zero()); n * n];
        for i in 0..n {
            m[i * n + i] = Complex::new(diag[i], T::zero());
        }
        Self::constant(grid, &m)
    }

    pub fn from_data(n: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if n == 0 || !data.len().is_multiple_of(n * n) {
            return Err(Error::Shape("field data is not a whole number of matrices".into()));
        }
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
        for m in data.chunks(n * n) {
            let r = linalg::hermitian_residual(m, n);
            if r > tol {
                return Err(Error::NotHermitian { residual: r.to_f64_lossy() });
            }
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn points(&self) -> usize {
        self.data.len() / (self.n * self.n)
    }
    pub fn at(&self, idx: usize) -> &[Complex<T>] {
        let m = self.n * self.n;
        &self.data[idx * m..(idx + 1) * m]
    }
    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n != other.n || self.data.len() != other.data.len() {
            return Err(Error::Shape("field shapes differ".into()));
        }
        Ok(Self { n: self.n, data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect() })
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { n: self.n, data: self.data.iter().map(|&a| a * s).collect() }
    }

    /// `self + c * I`.
    pub fn shifted(&self, c: T) -> Self {
        let n = self.n;
        let mut data = self.data.clone();
        for m in data.chunks_mut(n * n) {
            for i in 0..n {
                m[i * n + i].re += c;
            }
        }
        Self { n, data }
    }

    /// Largest deviation from `H_ij = conj(H_ji)`.
    pub fn hermitian_defect(&self) -> T {
        let n = self.n;
        self.data.chunks(n * n).fold(T::zero(), |acc, m| {
            let mut worst = acc;
            for i in 0..n {
                for j in 0..n {
                    worst = worst.max((m[i * n + j] - m[j * n + i].conj()).norm());
                }
            }
            worst
        })
    }

    /// Descending eigenvalues at every point, `n` per point.
    pub fn eigenvalues(&self) -> Vec<T> {
        let n = self.n;
        let mut out = vec![T::zero(); self.data.len() / n];
        out.par_chunks_mut(n).zip(self.data.par_chunks(n * n)).with_min_len(PAR_MIN).for_each(|(dst, m)| {
            dst.copy_from_slice(&linalg::hermitian_eigenvalues(m, n));
        });
        out
    }
}

fn symmetrize<T: Scalar>(m: &mut [Complex<T>], n: usize) {
    let half = T::lit(0.5);
    for i in 0..n {
        m[i * n + i].im = T::zero();
        for j in (i + 1)..n {
            let v = (m[i * n + j] + m[j * n + i].conj()) * half;
            m[i * n + j] = v;
            m[j * n + i] = v.conj();
        }
    }
}

/// `sum_k amplitude_k * cos(2 pi / L * wave_k . x + phase_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub amplitude: f64,
    /// Integer wave numbers, one per real axis.
    pub wave: Vec<i32>,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrigPolynomial {
    pub terms: Vec<TrigTerm>,
}

impl TrigPolynomial {
    pub fn new(terms: Vec<TrigTerm>) -> Self {
        Self { terms }
    }

    pub fn validate(&self, axes: usize) -> Result<()> {
        for (k, t) in self.terms.iter().enumerate() {
            if t.wave.len() != axes {
                return Err(Error::Shape(format!("term {k} has {} wave numbers, grid has {axes} axes", t.wave.len())));
            }
            if !t.amplitude.is_finite() || !t.phase.is_finite() {
                return Err(Error::Domain(format!("term {k} has non-finite coefficients")));
            }
        }
        Ok(())
    }

    pub fn eval_at<T: Scalar>(&self, x: &[T], period: T) -> T {
        let w = T::TAU() / period;
        self.terms.iter().fold(T::zero(), |acc, t| {
            let arg = t.wave.iter().zip(x).fold(T::lit(t.phase), |a, (&k, &xa)| a + w * T::lit(k as f64) * xa);
            acc + T::lit(t.amplitude) * arg.cos()
        })
    }

    pub fn sample<T: Scalar>(&self, grid: &TorusGrid<T>) -> Result<Potential<T>> {
        self.validate(grid.axes())?;
        let period = grid.period();
        Ok(Potential::from_fn(grid, |x| self.eval_at(x, period)))
    }

    /// Continuum complex Hessian sampled on the grid.
    pub fn exact_complex_hessian<T: Scalar>(&self, grid: &TorusGrid<T>) -> Result<HermitianField<T>> {
        self.validate(grid.axes())?;
        let n = grid.n();
        let w = T::TAU() / grid.period();
        let quarter = T::lit(0.25);
        let mut data = vec![Complex::new(T::zero(), T::zero()); grid.len() * n * n];
        data.par_chunks_mut(n * n).enumerate().for_each(|(idx, m)| {
            let x = grid.position(idx);
            for t in &self.terms {
                let kap: SmallVec<[T; 6]> = t.wave.iter().map(|&k| w * T::lit(k as f64)).collect();
                let arg = kap.iter().zip(&x).fold(T::lit(t.phase), |a, (&k, &xa)| a + k * xa);
                // d_a d_b cos(arg) = -k_a k_b cos(arg)
                let c = -T::lit(t.amplitude) * arg.cos();
                for i in 0..n {
                    for j in 0..n {
                        let re = kap[2 * i] * kap[2 * j] + kap[2 * i + 1] * kap[2 * j + 1];
                        let im = kap[2 * i] * kap[2 * j + 1] - kap[2 * i + 1] * kap[2 * j];
                        m[i * n + j] = m[i * n + j] + Complex::new(re, im) * (c * quarter);
                    }
                }
            }
        });
        Ok(HermitianField { n, data })
    }
}

/// Reference form `alpha = A0 + i d dbar f` with constant Hermitian `A0` and
/// trigonometric `f`; the Hessian of `f` is taken with the grid stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceForm<T: Scalar> {
    pub constant: Vec<Complex<T>>,
    pub potential: TrigPolynomial,
}

impl<T: Scalar> ReferenceForm<T> {
    pub fn constant(matrix: Vec<Complex<T>>) -> Self {
        Self { constant: matrix, potential: TrigPolynomial::default() }
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = vec![Complex::new(T::zero(), T::zero()); n * n];
        for i in 0..n {
            m[i * n + i] = Complex::new(diag[i], T::zero());
        }
        Self::constant(m)
    }

    pub fn field(&self, grid: &TorusGrid<T>) -> Result<HermitianField<T>> {
        let base = HermitianField::constant(grid, &self.constant)?;
        if self.potential.terms.is_empty() {
            return Ok(base);
        }
        let f = self.potential.sample(grid)?;
        base.add(&complex_hessian(&f, grid)?)
    }
}

/// `dst[i] = scale * (src[i + k e_a] - src[i - k e_a])`, or with `second`,
/// `scale * (src[i + e_a] - 2 src[i] + src[i - e_a])`.
pub(crate) fn axis_difference<T: Scalar>(
    grid: &TorusGrid<T>,
    src: &[T],
    axis: usize,
    second: bool,
    scale: T,
) -> Vec<T> {
    let np = grid.points();
    let s = grid.stride(axis);
    let block = s * np;
    let k = 1;
    let mut dst = vec![T::zero(); src.len()];
    dst.par_chunks_mut(block).zip(src.par_chunks(block)).with_min_len(PAR_MIN / block + 1).for_each(|(d, b)| {
        for c in 0..np {
            let up = ((c + k) % np) * s;
            let dn = ((c + np - k) % np) * s;
            let here = c * s;
            for j in 0..s {
                d[here + j] = if second {
                    scale * (b[up + j] - b[here + j] - b[here + j] + b[dn + j])
                } else {
                    scale * (b[up + j] - b[dn + j])
                };
            }
        }
    });
    dst
}

/// `i d dbar phi` with the grid stencil; Hermitian by construction.
pub fn complex_hessian<T: Scalar>(phi: &Potential<T>, grid: &TorusGrid<T>) -> Result<HermitianField<T>> {
    if phi.len() != grid.len() {
        return Err(Error::Shape(format!("potential has {} values, grid has {}", phi.len(), grid.len())));
    }
    let n = grid.n();
    let d = grid.axes();
    let h = grid.spacing();
    let half_inv_h = T::lit(0.5) / h;
    let first: Vec<Vec<T>> = (0..d).map(|a| axis_difference(grid, &phi.values, a, false, half_inv_h)).collect();
    // second differences d_a d_b for a <= b, index a * d + b
    let mut second: Vec<Option<Vec<T>>> = vec![None; d * d];
    for a in 0..d {
        for b in a..d {
            let v = if a == b && grid.stencil() == Stencil::Compact {
                axis_difference(grid, &phi.values, a, true, T::one() / (h * h))
            } else {
                axis_difference(grid, &first[a], b, false, half_inv_h)
            };
            second[a * d + b] = Some(v);
        }
    }
    let dd = |a: usize, b: usize| -> &Vec<T> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        second[lo * d + hi].as_ref().expect("all pairs filled")
    };
    let quarter = T::lit(0.25);
    let mut data = vec![Complex::new(T::zero(), T::zero()); grid.len() * n * n];
    for i in 0..n {
        for j in 0..n {
            let (xx, yy, xy, yx) =
                (dd(2 * i, 2 * j), dd(2 * i + 1, 2 * j + 1), dd(2 * i, 2 * j + 1), dd(2 * i + 1, 2 * j));
            let im_zero = i == j;
            data.par_chunks_mut(n * n).with_min_len(PAR_MIN).enumerate().for_each(|(idx, m)| {
                let re = (xx[idx] + yy[idx]) * quarter;
                let im = if im_zero { T::zero() } else { (xy[idx] - yx[idx]) * quarter };
                m[i * n + j] = Complex::new(re, im);
            });
        }
    }
    Ok(HermitianField { n, data })
}

/// `alpha + i d dbar phi`.
pub fn alpha_phi<T: Scalar>(
    alpha: &HermitianField<T>,
    phi: &Potential<T>,
    grid: &TorusGrid<T>,
) -> Result<HermitianField<T>> {
    if alpha.points() != grid.len() || alpha.n() != grid.n() {
        return Err(Error::Shape("reference form does not match grid".into()));
    }
    alpha.add(&complex_hessian(phi, grid)?)
}

/// Pointwise `Q`, `P` and smallest eigenvalue.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseFields<T> {
    pub q: Vec<T>,
    pub p: Vec<T>,
    pub min_eig: Vec<T>,
}

pub fn pointwise_phase<T: Scalar>(field: &HermitianField<T>) -> PhaseFields<T> {
    let n = field.n();
    let eig = field.eigenvalues();
    let mut q = Vec::with_capacity(field.points());
    let mut p = Vec::with_capacity(field.points());
    let mut min_eig = Vec::with_capacity(field.points());
    for lam in eig.chunks(n) {
        let qq = eigenops::q_of(lam);
        q.push(qq);
        p.push(qq - eigenops::arccot_unchecked(lam[0]));
        min_eig.push(lam[n - 1]);
    }
    PhaseFields { q, p, min_eig }
}

/// `h^{2n} * sum` in a fixed pairwise order.
pub fn integrate<T: Scalar>(density: &[T], grid: &TorusGrid<T>) -> T {
    pairwise_sum(density) * grid.cell_volume()
}

/// Pointwise `(Re, Im)` of `(alpha + i omega)^n / omega^n = prod (lambda_k + i)`.
pub fn volume_ratios<T: Scalar>(field: &HermitianField<T>) -> (Vec<T>, Vec<T>) {
    let n = field.n();
    let eig = field.eigenvalues();
    eig.chunks(n).map(eigenops::polar_re_im).unzip()
}

/// Per-point flags where `sin Q` is at or below the singular threshold.
pub fn singular_points<T: Scalar>(field: &HermitianField<T>) -> Vec<usize> {
    let n = field.n();
    let floor = T::lit(eigenops::SIN_Q_FLOOR);
    field
        .eigenvalues()
        .chunks(n)
        .enumerate()
        .filter(|(_, l)| eigenops::q_of(l).sin() <= floor)
        .map(|(i, _)| i)
        .collect()
}

/// `(Re, Im)` of `e^{-i theta}(re + i im)`.
pub fn rotate<T: Scalar>(re: T, im: T, theta: T) -> (T, T) {
    let (s, c) = theta.sin_cos();
    (c * re + s * im, c * im - s * re)
}

/// Descending eigenvalue vector at one point.
pub fn eigen_at<T: Scalar>(field: &HermitianField<T>, idx: usize) -> Vector<T> {
    linalg::hermitian_eigenvalues(field.at(idx), field.n())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub schema: String,
    /// `potential`, `hermitian_field` or `path`.
    pub kind: String,
    pub n: usize,
    pub points: usize,
    pub period: f64,
    pub stencil: Stencil,
    /// Number of time slices for `path` snapshots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slices: Option<usize>,
}

impl SnapshotHeader {
    pub fn for_grid<T: Scalar>(grid: &TorusGrid<T>, kind: &str) -> Self {
        Self {
            schema: SNAPSHOT_SCHEMA.into(),
            kind: kind.into(),
            n: grid.n(),
            points: grid.points(),
            period: grid.period().to_f64_lossy(),
            stencil: grid.stencil(),
            slices: None,
        }
    }

    pub fn grid<T: Scalar>(&self) -> Result<TorusGrid<T>> {
        if self.schema != SNAPSHOT_SCHEMA {
            return Err(Error::Format(format!("unsupported snapshot schema {:?}", self.schema)));
        }
        TorusGrid::with_stencil(self.n, self.points, T::lit(self.period), self.stencil)
    }
}

/// JSON header line, then one CSV row per grid point.
pub fn write_potential<T: Scalar, W: Write>(out: &mut W, grid: &TorusGrid<T>, phi: &Potential<T>) -> Result<()> {
    let header = SnapshotHeader::for_grid(grid, "potential");
    write_rows(out, &header, phi.values.chunks(1))
}

/// Hermitian fields store `re,im` pairs for all `n^2` entries per row.
pub fn write_field<T: Scalar, W: Write>(out: &mut W, grid: &TorusGrid<T>, field: &HermitianField<T>) -> Result<()> {
    let header = SnapshotHeader::for_grid(grid, "hermitian_field");
    let flat: Vec<T> = field.data().iter().flat_map(|z| [z.re, z.im]).collect();
    let row = 2 * field.n() * field.n();
    write_rows(out, &header, flat.chunks(row))
}

pub(crate) fn write_rows<'a, T: Scalar, W: Write>(
    out: &mut W,
    header: &SnapshotHeader,
    rows: impl Iterator<Item = &'a [T]>,
) -> Result<()> {
    let line = serde_json::to_string(header).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out, "{line}")?;
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                write!(out, ",")?;
            }
            write!(out, "{v}")?;
            first = false;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub(crate) fn read_rows<T: Scalar, R: BufRead>(input: R) -> Result<(SnapshotHeader, Vec<Vec<T>>)> {
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| Error::Format("empty snapshot".into()))??;
    let header: SnapshotHeader = serde_json::from_str(&first).map_err(|e| Error::Format(format!("header: {e}")))?;
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map(T::lit).map_err(|e| Error::Format(format!("row {}: {e}", k + 1))))
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn read_potential<T: Scalar, R: BufRead>(input: R) -> Result<(TorusGrid<T>, Potential<T>)> {
    let (header, rows) = read_rows::<T, _>(input)?;
    if header.kind != "potential" {
        return Err(Error::Format(format!("expected a potential snapshot, found {:?}", header.kind)));
    }
    let grid = header.grid()?;
    if rows.iter().any(|r| r.len() != 1) {
        return Err(Error::Format("potential rows must hold one value".into()));
    }
    let phi = Potential::from_values(&grid, rows.into_iter().map(|r| r[0]).collect())?;
    Ok((grid, phi))
}

pub fn read_field<T: Scalar, R: BufRead>(input: R) -> Result<(TorusGrid<T>, HermitianField<T>)> {
    let (header, rows) = read_rows::<T, _>(input)?;
    if header.kind != "hermitian_field" {
        return Err(Error::Format(format!("expected a field snapshot, found {:?}", header.kind)));
    }
    let grid = header.grid()?;
    let n = grid.n();
    if rows.len() != grid.len() || rows.iter().any(|r| r.len() != 2 * n * n) {
        return Err(Error::Format("field snapshot has the wrong shape".into()));
    }
    let data = rows.iter().flat_map(|r| r.chunks(2).map(|c| Complex::new(c[0], c[1]))).collect();
    Ok((grid, HermitianField::from_data(n, data)?))
}
