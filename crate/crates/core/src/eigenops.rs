//! Pointwise phase and twisted operators on eigenvalue vectors and pencils.

use num_complex::Complex;
use rand::Rng;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Threshold on `sin Q` below which the twisted operator is singular.
pub const SIN_Q_FLOOR: f64 = 1e-12;
/// Gap below which divided differences switch to the derivative limit.
pub const DIVIDED_DIFFERENCE_GAP: f64 = 1e-8;
/// Working value for the smallness threshold on the twist in the concavity regime.
pub const EPS0: f64 = 1e-3;

pub type Vector<T> = SmallVec<[T; 8]>;

/// Eigenvalues sorted descending.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseVector<T: Scalar> {
    entries: Vector<T>,
}

impl<T: Scalar> PhaseVector<T> {
    /// Validates and sorts descending.
    pub fn new(values: &[T]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("phase vector needs at least one entry".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("eigenvalue {bad} is not finite")));
        }
        let mut entries: Vector<T> = SmallVec::from_slice(values);
        entries.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max(&self) -> T {
        self.entries[0]
    }

    pub fn min(&self) -> T {
        self.entries[self.entries.len() - 1]
    }
}

/// The cone `{P < theta, Q < big_theta}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeSpec<T: Scalar> {
    pub theta: T,
    pub big_theta: T,
}

impl<T: Scalar> ConeSpec<T> {
    pub fn new(theta: T, big_theta: T) -> Result<Self> {
        let pi = T::PI();
        if !(theta > T::zero() && theta < big_theta && big_theta < pi) {
            return Err(Error::InvalidParameter(format!(
                "cone angles must satisfy 0 < theta < Theta < pi, got theta={theta}, Theta={big_theta}"
            )));
        }
        Ok(Self { theta, big_theta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeMembership<T> {
    pub inside: bool,
    /// `min(theta - P, Theta - Q)`; positive exactly when inside.
    pub margin: T,
}

/// Pair (A, B) with A positive definite; the phase data of B is measured against A.
#[derive(Clone, Debug)]
pub struct HermitianPencil<T: Scalar> {
    n: usize,
    a: Vec<Complex<T>>,
    b: Vec<Complex<T>>,
}

impl<T: Scalar> HermitianPencil<T> {
    pub fn new(n: usize, a: Vec<Complex<T>>, b: Vec<Complex<T>>) -> Result<Self> {
        if n == 0 || a.len() != n * n || b.len() != n * n {
            return Err(Error::Shape(format!("pencil of size {n} needs {} entries per matrix", n * n)));
        }
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(64.0));
        for m in [&a, &b] {
            let r = linalg::hermitian_residual(m, n);
            if r > tol {
                return Err(Error::NotHermitian { residual: r.to_f64_lossy() });
            }
        }
        linalg::cholesky_lower(&a, n)?;
        Ok(Self { n, a, b })
    }

    /// Pencil against the identity metric.
    pub fn against_identity(n: usize, b: Vec<Complex<T>>) -> Result<Self> {
        let mut a = vec![Complex::new(T::zero(), T::zero()); n * n];
        for i in 0..n {
            a[i * n + i] = Complex::new(T::one(), T::zero());
        }
        Self::new(n, a, b)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a(&self) -> &[Complex<T>] {
        &self.a
    }

    pub fn b(&self) -> &[Complex<T>] {
        &self.b
    }
}

/// Value and derivatives of the twisted operator at an eigenvalue vector.
#[derive(Clone, Debug)]
pub struct TwistedDerivatives<T: Scalar> {
    pub value: T,
    pub grad: Vector<T>,
    /// Row-major `n x n`.
    pub hess: Vec<T>,
    /// `F^{i jbar}` in the eigenframe, row-major `n x n` (diagonal).
    pub matrix_first: Vec<T>,
    /// `F^{i jbar, p qbar}` at index `((i*n + j)*n + p)*n + q`.
    pub matrix_second: Vec<T>,
}

impl<T: Scalar> TwistedDerivatives<T> {
    pub fn second(&self, i: usize, j: usize, p: usize, q: usize) -> T {
        let n = self.grad.len();
        self.matrix_second[((i * n + j) * n + p) * n + q]
    }
}

pub fn arccot<T: Scalar>(x: T) -> Result<T> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("arccot of non-finite {x}")));
    }
    Ok(arccot_unchecked(x))
}

#[inline]
pub(crate) fn arccot_unchecked<T: Scalar>(x: T) -> T {
    T::FRAC_PI_2() - x.atan()
}

pub fn phase_q<T: Scalar>(lambda: &PhaseVector<T>) -> T {
    q_of(lambda.entries())
}

pub fn phase_p<T: Scalar>(lambda: &PhaseVector<T>) -> T {
    let e = lambda.entries();
    e[1..].iter().fold(T::zero(), |acc, &l| acc + arccot_unchecked(l))
}

pub fn phase_qhat<T: Scalar>(lambda: &PhaseVector<T>) -> T {
    lambda.entries().iter().fold(T::zero(), |acc, &l| acc + l.atan())
}

/// `Q` on an unsorted slice.
#[inline]
pub(crate) fn q_of<T: Scalar>(lambda: &[T]) -> T {
    lambda.iter().fold(T::zero(), |acc, &l| acc + arccot_unchecked(l))
}

pub fn in_cone<T: Scalar>(lambda: &PhaseVector<T>, cone: &ConeSpec<T>) -> ConeMembership<T> {
    let q = phase_q(lambda);
    let p = q - arccot_unchecked(lambda.max());
    let margin = (cone.theta - p).min(cone.big_theta - q);
    ConeMembership { inside: p < cone.theta && q < cone.big_theta, margin }
}

/// `sum ln sqrt(1 + l^2)`, the log of `prod |l_k + i|`.
#[inline]
pub(crate) fn log_modulus<T: Scalar>(lambda: &[T]) -> T {
    lambda.iter().fold(T::zero(), |acc, &l| acc + T::one().hypot(l).ln())
}

/// `(Re, Im)` of `prod (l_k + i)` in polar form.
pub fn product_re_im<T: Scalar>(lambda: &PhaseVector<T>) -> (T, T) {
    polar_re_im(lambda.entries())
}

#[inline]
pub(crate) fn polar_re_im<T: Scalar>(lambda: &[T]) -> (T, T) {
    let q = q_of(lambda);
    let r = log_modulus(lambda).exp();
    (r * q.cos(), r * q.sin())
}

/// Direct complex multiplication; only sensible for moderate entries.
pub fn product_re_im_cartesian<T: Scalar>(lambda: &PhaseVector<T>) -> (T, T) {
    let z = lambda.entries().iter().fold(Complex::new(T::one(), T::zero()), |acc, &l| acc * Complex::new(l, T::one()));
    (z.re, z.im)
}

struct TwistParts<T> {
    cot_q: T,
    csc2: T,
    /// `eps / (sin Q * prod sqrt(1 + l^2))`
    eg: T,
}

fn twist_parts<T: Scalar>(lambda: &[T], eps: T) -> Result<TwistParts<T>> {
    if !(eps >= T::zero()) {
        return Err(Error::InvalidParameter(format!("twist must be nonnegative, got {eps}")));
    }
    let q = q_of(lambda);
    let s = q.sin();
    if s <= T::lit(SIN_Q_FLOOR) {
        return Err(Error::SingularPhase { sin_q: s.to_f64_lossy() });
    }
    let cot_q = q.cos() / s;
    let eg = eps * (-log_modulus(lambda)).exp() / s;
    Ok(TwistParts { cot_q, csc2: T::one() / (s * s), eg })
}

/// Everything the flow needs at one point, sharing the transcendental work.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PointTerms<T> {
    pub f: T,
    pub max_grad: T,
    /// `Im prod (l_k + i)`
    pub im: T,
}

/// `q` must equal `q_of(lambda)`; entries are assumed far below overflow of `l^2`.
pub(crate) fn point_terms<T: Scalar>(lambda: &[T], q: T, eps: T) -> Result<PointTerms<T>> {
    if !(eps >= T::zero()) {
        return Err(Error::InvalidParameter(format!("twist must be nonnegative, got {eps}")));
    }
    let (s, c) = q.sin_cos();
    if s <= T::lit(SIN_Q_FLOOR) {
        return Err(Error::SingularPhase { sin_q: s.to_f64_lossy() });
    }
    let r = lambda.iter().fold(T::one(), |acc, &l| acc * (T::one() + l * l).sqrt());
    let cot_q = c / s;
    let csc2 = T::one() / (s * s);
    let eg = eps / (r * s);
    let max_grad = lambda.iter().fold(T::zero(), |m, &l| {
        let w = T::one() / (T::one() + l * l);
        m.max(csc2 * w + eg * (cot_q - l) * w)
    });
    Ok(PointTerms { f: cot_q + eg, max_grad, im: r * s })
}

pub fn f_eps<T: Scalar>(lambda: &PhaseVector<T>, eps: T) -> Result<T> {
    f_eps_slice(lambda.entries(), eps)
}

pub(crate) fn f_eps_slice<T: Scalar>(lambda: &[T], eps: T) -> Result<T> {
    let p = twist_parts(lambda, eps)?;
    Ok(p.cot_q + p.eg)
}

pub fn grad_f_eps<T: Scalar>(lambda: &PhaseVector<T>, eps: T) -> Result<Vector<T>> {
    grad_slice(lambda.entries(), eps)
}

pub(crate) fn grad_slice<T: Scalar>(lambda: &[T], eps: T) -> Result<Vector<T>> {
    let p = twist_parts(lambda, eps)?;
    Ok(lambda
        .iter()
        .map(|&l| {
            let w = T::one() / (T::one() + l * l);
            p.csc2 * w + p.eg * (p.cot_q - l) * w
        })
        .collect())
}

pub fn hess_f_eps<T: Scalar>(lambda: &PhaseVector<T>, eps: T) -> Result<Vec<T>> {
    hess_slice(lambda.entries(), eps)
}

fn hess_slice<T: Scalar>(lambda: &[T], eps: T) -> Result<Vec<T>> {
    let p = twist_parts(lambda, eps)?;
    let n = lambda.len();
    let two = T::lit(2.0);
    let w: Vector<T> = lambda.iter().map(|&l| T::one() / (T::one() + l * l)).collect();
    let mut h = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let ci = p.cot_q - lambda[i];
            let cj = p.cot_q - lambda[j];
            let mut v = w[i] * w[j] * (two * p.csc2 * p.cot_q + p.eg * (ci * cj + p.csc2));
            if i == j {
                let l = lambda[i];
                v -= two * l * w[i] * w[i] * p.csc2 + p.eg * (two * l * w[i] * w[i] * ci + w[i]);
            }
            h[i * n + j] = v;
        }
    }
    Ok(h)
}

pub fn matrix_derivatives<T: Scalar>(lambda: &PhaseVector<T>, eps: T) -> Result<TwistedDerivatives<T>> {
    let l = lambda.entries();
    let n = l.len();
    let value = f_eps_slice(l, eps)?;
    let grad = grad_slice(l, eps)?;
    let hess = hess_slice(l, eps)?;
    let mut first = vec![T::zero(); n * n];
    for i in 0..n {
        first[i * n + i] = grad[i];
    }
    let mut second = vec![T::zero(); n * n * n * n];
    let idx = |i: usize, j: usize, p: usize, q: usize| ((i * n + j) * n + p) * n + q;
    for i in 0..n {
        for p in 0..n {
            second[idx(i, i, p, p)] = hess[i * n + p];
        }
        for j in 0..n {
            if i == j {
                continue;
            }
            let gap = l[i] - l[j];
            let dd = if gap.abs() < T::lit(DIVIDED_DIFFERENCE_GAP) {
                T::lit(0.5) * (hess[i * n + i] + hess[j * n + j]) - hess[i * n + j]
            } else {
                (grad[i] - grad[j]) / gap
            };
            second[idx(i, j, j, i)] = dd;
        }
    }
    Ok(TwistedDerivatives { value, grad, hess, matrix_first: first, matrix_second: second })
}

/// Eigenvalues of B relative to A.
pub fn gen_eigenvalues<T: Scalar>(pencil: &HermitianPencil<T>) -> Result<PhaseVector<T>> {
    let vals = linalg::generalized_eigenvalues(pencil.a(), pencil.b(), pencil.n())?;
    PhaseVector::new(&vals)
}

/// Uniform sample of angles `u` in `{u_i >= u_min, sum u_i < total_max}` mapped to
/// `lambda = cot u`, rejected until it lands in the cone. `None` after many misses.
pub fn sample_cone<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    cone: &ConeSpec<T>,
    u_min: f64,
) -> Option<PhaseVector<T>> {
    let big = cone.big_theta.to_f64_lossy();
    for _ in 0..10_000 {
        let u = sample_simplex(rng, n, big);
        if u.iter().any(|&x| x < u_min) {
            continue;
        }
        let vals: Vector<T> = u.iter().map(|&x| T::lit(1.0 / x.tan())).collect();
        let Ok(lambda) = PhaseVector::new(&vals) else { continue };
        if in_cone(&lambda, cone).inside {
            return Some(lambda);
        }
    }
    None
}

/// Uniform point of `{u >= 0, sum u < total}`.
fn sample_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize, total: f64) -> Vector<f64> {
    let e: Vector<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let sum: f64 = e.iter().sum::<f64>() + (-(1.0 - rng.gen::<f64>()).ln());
    e.iter().map(|x| total * x / sum).collect()
}

/// Sampler settings for the metric perturbation checks.
#[derive(Clone, Debug)]
pub struct PerturbationConfig {
    pub n: usize,
    pub sigma: f64,
    pub eps: f64,
    pub samples: usize,
    pub seed: u64,
    /// Distance of the phase from the ends of `(0, pi)`.
    pub c0: f64,
    /// Cone for the Q-F-P check.
    pub theta: f64,
    pub big_theta: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            n: 4,
            sigma: 0.1,
            eps: 0.05,
            samples: 10_000,
            seed: 7,
            c0: 0.3,
            theta: std::f64::consts::FRAC_PI_2,
            big_theta: 0.75 * std::f64::consts::PI,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct PerturbationReport {
    pub samples: usize,
    pub skipped: usize,
    pub q_violations: usize,
    pub p_violations: usize,
    pub f_violations: usize,
    pub qfp_checked: usize,
    pub qfp_violations: usize,
    /// Largest observed `Q_{A2} - Q_{A1}` in units of sigma.
    pub max_q_increase_over_sigma: f64,
    /// Largest observed `F_{A1} - F_{A2}` in units of eps^2.
    pub max_f_drop_over_eps2: f64,
}

impl PerturbationReport {
    pub fn violations(&self) -> usize {
        self.q_violations + self.p_violations + self.f_violations + self.qfp_violations
    }
}

/// Random Hermitian matrix with operator norm exactly `norm`.
fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize, norm: f64) -> Vec<Complex<f64>> {
    let mut e = vec![Complex::new(0.0, 0.0); n * n];
    for i in 0..n {
        e[i * n + i] = Complex::new(rng.gen_range(-1.0..1.0), 0.0);
        for j in (i + 1)..n {
            let z = Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            e[i * n + j] = z;
            e[j * n + i] = z.conj();
        }
    }
    let vals: Vector<f64> = linalg::hermitian_eigenvalues(&e, n);
    let op = vals[0].abs().max(vals[n - 1].abs());
    if op > 0.0 {
        for z in &mut e {
            *z *= norm / op;
        }
    }
    e
}

fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Complex<f64>> {
    linalg::hermitian_eigen(&random_hermitian(rng, n, 1.0), n).1
}

/// `U diag(d) U^*`.
fn conjugate_diag(u: &[Complex<f64>], d: &[f64], n: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = Complex::new(0.0, 0.0);
            for k in 0..n {
                s += u[i * n + k] * d[k] * u[j * n + k].conj();
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Draws `A1`, `A2 = A1^{1/2}(I + E)A1^{1/2}` with `|E| <= sigma^5`, and `B` with
/// prescribed phase against `A1`, then checks the constant-free consequences
/// of the metric continuity lemmas and of the Q-F-P relationship.
pub fn check_perturbation_lemmas<R: Rng + ?Sized>(rng: &mut R, cfg: &PerturbationConfig) -> PerturbationReport {
    let n = cfg.n;
    let pi = std::f64::consts::PI;
    let mut rep = PerturbationReport { samples: cfg.samples, ..Default::default() };
    let band = cfg.sigma.powi(5);
    for _ in 0..cfg.samples {
        // A1 = V diag(a) V^*, a in [0.5, 2]
        let v = random_unitary(rng, n);
        let a_diag: Vector<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let a1 = conjugate_diag(&v, &a_diag, n);
        let sqrt_d: Vector<f64> = a_diag.iter().map(|x| x.sqrt()).collect();
        let a1_half = conjugate_diag(&v, &sqrt_d, n);
        let size = band * rng.gen::<f64>();
        let mut ie = random_hermitian(rng, n, size);
        for i in 0..n {
            ie[i * n + i] += 1.0;
        }
        let a2 = linalg::matmul(&linalg::matmul(&a1_half, &ie, n), &a1_half, n);
        // target phase against A1 in (c0, pi - c0), entries |lambda| <= 10
        let target = rng.gen_range(cfg.c0..(pi - cfg.c0));
        let u = sample_simplex(rng, n, 1.0);
        let usum: f64 = u.iter().sum();
        let angles: Vector<f64> = u.iter().map(|x| target * x / usum).collect();
        if angles.iter().any(|&x| x < (0.1f64).atan2(1.0) || x > pi - (0.1f64).atan2(1.0)) {
            rep.skipped += 1;
            continue;
        }
        let lam: Vector<f64> = angles.iter().map(|x| 1.0 / x.tan()).collect();
        let w = random_unitary(rng, n);
        let inner = conjugate_diag(&w, &lam, n);
        let b = linalg::matmul(&linalg::matmul(&a1_half, &inner, n), &a1_half, n);
        let (Ok(l1), Ok(l2)) =
            (linalg::generalized_eigenvalues(&a1, &b, n), linalg::generalized_eigenvalues(&a2, &b, n))
        else {
            rep.skipped += 1;
            continue;
        };
        let q1 = q_of(&l1);
        let q2 = q_of(&l2);
        let p1 = q1 - arccot_unchecked(l1[0]);
        let p2 = q2 - arccot_unchecked(l2[0]);
        rep.max_q_increase_over_sigma = rep.max_q_increase_over_sigma.max((q2 - q1) / cfg.sigma);
        if q1 > 0.0 && q1 < pi - cfg.c0 && q2 > q1 + cfg.sigma {
            rep.q_violations += 1;
        }
        if p1 > 0.0 && p1 < pi - cfg.c0 && p2 > p1 + cfg.sigma {
            rep.p_violations += 1;
        }
        if let (Ok(f1), Ok(f2)) = (f_eps_slice(&l1, cfg.eps), f_eps_slice(&l2, cfg.eps)) {
            let eps2 = cfg.eps * cfg.eps;
            rep.max_f_drop_over_eps2 = rep.max_f_drop_over_eps2.max((f1 - f2) / eps2);
            if f2 < f1 - eps2 {
                rep.f_violations += 1;
            }
        }
        // Q-F-P on an independent sample
        let u = sample_simplex(rng, n, cfg.big_theta);
        if u.iter().any(|&x| x < 1e-3) {
            continue;
        }
        let lam: Vector<f64> = u.iter().map(|x| 1.0 / x.tan()).collect();
        let Ok(lv) = PhaseVector::new(&lam) else { continue };
        let q = phase_q(&lv);
        if q >= cfg.big_theta {
            continue;
        }
        if let Ok(f) = f_eps(&lv, cfg.eps) {
            if f >= 1.0 / cfg.theta.tan() + cfg.eps {
                rep.qfp_checked += 1;
                if phase_p(&lv) >= cfg.theta {
                    rep.qfp_violations += 1;
                }
            }
        }
    }
    rep
}

/// Result of a random search for a failure of midpoint concavity.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ConcavitySearch {
    pub n: usize,
    pub eps: f64,
    pub pairs: usize,
    /// Most negative `F((l+m)/2) - (F(l)+F(m))/2` seen.
    pub worst_gap: f64,
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
}

/// Diagnostic search over random cone pairs; reports without asserting.
pub fn search_concavity_counterexample<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    eps: f64,
    cone: &ConeSpec<f64>,
    pairs: usize,
) -> ConcavitySearch {
    let mut out = ConcavitySearch { n, eps, pairs: 0, worst_gap: f64::INFINITY, witness: None };
    for _ in 0..pairs {
        let (Some(a), Some(b)) = (sample_cone(rng, n, cone, 1e-3), sample_cone(rng, n, cone, 1e-3)) else {
            continue;
        };
        let Some(gap) = midpoint_gap(&a, &b, eps, f_eps_slice) else { continue };
        out.pairs += 1;
        if gap < out.worst_gap {
            out.worst_gap = gap;
            out.witness = Some((a.entries().to_vec(), b.entries().to_vec()));
        }
    }
    out
}

/// `f(mid) - (f(a) + f(b))/2` with entries paired in descending order.
pub fn midpoint_gap<T: Scalar, F>(a: &PhaseVector<T>, b: &PhaseVector<T>, eps: T, f: F) -> Option<T>
where
    F: Fn(&[T], T) -> Result<T>,
{
    let half = T::lit(0.5);
    let mid: Vector<T> = a.entries().iter().zip(b.entries()).map(|(&x, &y)| half * (x + y)).collect();
    let fm = f(&mid, eps).ok()?;
    let fa = f(a.entries(), eps).ok()?;
    let fb = f(b.entries(), eps).ok()?;
    Some(fm - half * (fa + fb))
}

/// `cot Q`, concave on the closed cone.
pub fn cot_q<T: Scalar>(lambda: &[T], _eps: T) -> Result<T> {
    let q = q_of(lambda);
    let s = q.sin();
    if s <= T::lit(SIN_Q_FLOOR) {
        return Err(Error::SingularPhase { sin_q: s.to_f64_lossy() });
    }
    Ok(q.cos() / s)
}
