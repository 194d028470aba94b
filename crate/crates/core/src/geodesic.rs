//! Epsilon-geodesics between potentials, path energies and the `d_p` distance.
//!
//! A path is stored on `M + 1` uniform slices of `[0, 1]`. At an interior
//! slice the lifted matrix on `X x annulus` is, in a frame orthonormal for
//! `omega + eps^2 i dz dzbar`,
//!
//! ```text
//! [ alpha_phi                      -d phi_t / (2 eps e^{-t}) ]
//! [ conj(-d phi_t / (2 eps e^{-t}))  phi_tt / (4 eps^2 e^{-2t}) ]
//! ```
//!
//! and the geodesic solves `sum_k atan(mu_k) = n pi / 2 - theta0` over its
//! `n + 1` eigenvalues. Expanding `det(I + iM)` along the last row shows that
//! `4 eps^2 e^{-2t} |det(I + iM)| sin(Qhat_M - thetahat0)` is exactly the
//! residual of the time-slice form of the equation, which the report checks.

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;
use smallvec::SmallVec;

use crate::eigenops;
use crate::error::{Error, Result};
use crate::functionals::CalibrationData;
use crate::linalg;
use crate::scalar::{pairwise_sum, Scalar};
use crate::torus::{axis_difference, HermitianField, Potential, TorusGrid, PAR_MIN};

pub const DEFAULT_SLICES: usize = 32;
pub const DEFAULT_DELTA: f64 = 1e-3;
pub const DEFAULT_EPS_SCHEDULE: [f64; 3] = [0.2, 0.1, 0.05];

type Mat<T> = SmallVec<[Complex<T>; 16]>;

/// Potentials on the slices `t_k = k / M`, endpoints pinned.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPotential<T: Scalar> {
    slices: Vec<Potential<T>>,
}

impl<T: Scalar> PathPotential<T> {
    /// `(1 - t) phi0 + t phi1` with the endpoints copied verbatim.
    pub fn linear(grid: &TorusGrid<T>, phi0: &Potential<T>, phi1: &Potential<T>, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 slices, got {m}")));
        }
        for phi in [phi0, phi1] {
            if phi.len() != grid.len() {
                return Err(Error::Shape(format!("endpoint has {} values, grid has {}", phi.len(), grid.len())));
            }
        }
        let mf = T::from_usize_exact(m);
        let mut slices = Vec::with_capacity(m + 1);
        slices.push(phi0.clone());
        for k in 1..m {
            let t = T::from_usize_exact(k) / mf;
            let values = phi0.values.iter().zip(&phi1.values).map(|(&a, &b)| a + (b - a) * t).collect();
            slices.push(Potential { values });
        }
        slices.push(phi1.clone());
        Ok(Self { slices })
    }

    pub fn from_slices(grid: &TorusGrid<T>, slices: Vec<Potential<T>>) -> Result<Self> {
        if slices.len() < 3 {
            return Err(Error::InvalidParameter("a path needs at least 3 slices".into()));
        }
        if slices.iter().any(|s| s.len() != grid.len()) {
            return Err(Error::Shape("path slice does not match grid".into()));
        }
        Ok(Self { slices })
    }

    /// Number of intervals `M`.
    pub fn intervals(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn slices(&self) -> &[Potential<T>] {
        &self.slices
    }

    pub fn slice(&self, k: usize) -> &Potential<T> {
        &self.slices[k]
    }

    pub fn dt(&self) -> T {
        T::one() / T::from_usize_exact(self.intervals())
    }

    pub fn time(&self, k: usize) -> T {
        T::from_usize_exact(k) / T::from_usize_exact(self.intervals())
    }

    /// Centered `phi_t` at interior slice `k`.
    pub fn phi_t(&self, k: usize) -> Vec<T> {
        let s = T::lit(0.5) / self.dt();
        self.slices[k + 1].values.iter().zip(&self.slices[k - 1].values).map(|(&a, &b)| (a - b) * s).collect()
    }

    /// `phi_tt` at interior slice `k`.
    pub fn phi_tt(&self, k: usize) -> Vec<T> {
        let s = T::one() / (self.dt() * self.dt());
        let (lo, mid, hi) = (&self.slices[k - 1].values, &self.slices[k].values, &self.slices[k + 1].values);
        (0..mid.len()).map(|i| (hi[i] - mid[i] - mid[i] + lo[i]) * s).collect()
    }

    /// `(phi_{k+1} - phi_k) / dt`, the velocity on interval `k`.
    pub fn half_velocity(&self, k: usize) -> Vec<T> {
        let s = T::one() / self.dt();
        self.slices[k + 1].values.iter().zip(&self.slices[k].values).map(|(&a, &b)| (a - b) * s).collect()
    }

    /// `(phi_k + phi_{k+1}) / 2`.
    pub fn half_slice(&self, k: usize) -> Potential<T> {
        let h = T::lit(0.5);
        Potential {
            values: self.slices[k + 1].values.iter().zip(&self.slices[k].values).map(|(&a, &b)| (a + b) * h).collect(),
        }
    }

    /// The same path traversed backwards.
    pub fn reversed(&self) -> Self {
        Self { slices: self.slices.iter().rev().cloned().collect() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicConfig<T> {
    pub eps: T,
    pub slices: usize,
    /// Stop once `max |Qhat_M - thetahat0|` drops below this.
    pub tol: T,
    pub max_iter: usize,
    /// Pseudo-time step of the implicit relaxation; infinity gives Newton steps.
    pub pseudo_step: T,
    pub p: T,
    pub delta: T,
}

impl<T: Scalar> Default for GeodesicConfig<T> {
    fn default() -> Self {
        Self {
            eps: T::lit(0.1),
            slices: DEFAULT_SLICES,
            tol: T::lit(1e-10),
            max_iter: 400,
            pseudo_step: T::infinity(),
            p: T::lit(2.0),
            delta: T::lit(DEFAULT_DELTA),
        }
    }
}

impl<T: Scalar> GeodesicConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.eps > T::zero()) || !self.eps.is_finite() {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.slices < 2 {
            return bad(format!("need at least 2 slices, got {}", self.slices));
        }
        if !(self.tol > T::zero()) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.pseudo_step > T::zero()) {
            return bad(format!("pseudo step must be positive, got {}", self.pseudo_step));
        }
        if !(self.p >= T::one()) || !self.p.is_finite() {
            return bad(format!("p must be at least 1, got {}", self.p));
        }
        if !(self.delta > T::zero()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        Ok(())
    }
}

/// `E_p` and `E_{p,delta}` on each interval, evaluated at its midpoint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyProfile<T> {
    pub p: T,
    pub delta: T,
    pub times: Vec<T>,
    pub energy: Vec<T>,
    pub energy_smoothed: Vec<T>,
}

impl<T: Scalar> EnergyProfile<T> {
    /// `int_0^1 E_p^{1/p} dt` by the midpoint rule.
    pub fn length(&self) -> T {
        mean_root(&self.energy, self.p)
    }

    pub fn length_smoothed(&self) -> T {
        mean_root(&self.energy_smoothed, self.p)
    }

    /// `max_t E_{p,delta} - min_t E_{p,delta}`.
    pub fn smoothed_spread(&self) -> T {
        let (lo, hi) = crate::scalar::min_max(&self.energy_smoothed);
        hi - lo
    }
}

fn mean_root<T: Scalar>(e: &[T], p: T) -> T {
    let inv = T::one() / p;
    let roots: Vec<T> = e.iter().map(|&x| x.max(T::zero()).powf(inv)).collect();
    pairwise_sum(&roots) / T::from_usize_exact(e.len())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeodesicReport<T> {
    pub eps: T,
    pub slices: usize,
    pub iterations: usize,
    pub converged: bool,
    /// `max |Qhat_M - thetahat0|` over interior points.
    pub phase_residual: T,
    /// Largest pointwise residual of the time-slice equation.
    pub equation_residual: T,
    /// Largest gap between the time-slice residual and its lifted-matrix form,
    /// relative to the size of the terms involved.
    pub consistency_gap: T,
    pub min_phi_tt: T,
    pub max_abs_phi_t: T,
    pub profile: EnergyProfile<T>,
    pub length: T,
}

/// `d_i f = (D_{x_i} f - i D_{y_i} f) / 2` at every point, `n` per point.
fn complex_gradient<T: Scalar>(grid: &TorusGrid<T>, f: &[T]) -> Vec<Complex<T>> {
    let n = grid.n();
    let s = T::lit(0.25) / grid.spacing();
    let mut out = vec![Complex::new(T::zero(), T::zero()); f.len() * n];
    for i in 0..n {
        let dx = axis_difference(grid, f, 2 * i, false, s);
        let dy = axis_difference(grid, f, 2 * i + 1, false, s);
        for (idx, (a, b)) in dx.iter().zip(&dy).enumerate() {
            out[idx * n + i] = Complex::new(*a, -*b);
        }
    }
    out
}

/// Assemble the lifted `(n+1) x (n+1)` matrix from its blocks.
fn assemble<T: Scalar>(block: &[Complex<T>], grad: &[Complex<T>], phi_tt: T, eps: T, t: T) -> Mat<T> {
    let n = grad.len();
    let d = n + 1;
    let scale = eps * (-t).exp();
    let mut m: Mat<T> = SmallVec::from_elem(Complex::new(T::zero(), T::zero()), d * d);
    for i in 0..n {
        for j in 0..n {
            m[i * d + j] = block[i * n + j];
        }
        let mixed = -grad[i] / (scale + scale);
        m[i * d + n] = mixed;
        m[n * d + i] = mixed.conj();
    }
    m[n * d + n] = Complex::new(phi_tt / (T::lit(4.0) * scale * scale), T::zero());
    m
}

/// Per-slice inputs of the lifted matrix.
struct SliceData<T: Scalar> {
    t: T,
    block: HermitianField<T>,
    grad: Vec<Complex<T>>,
    phi_tt: Vec<T>,
}

fn slice_data<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    path: &PathPotential<T>,
    k: usize,
) -> Result<SliceData<T>> {
    Ok(SliceData {
        t: path.time(k),
        block: cal.alpha_phi(path.slice(k), grid)?,
        grad: complex_gradient(grid, &path.phi_t(k)),
        phi_tt: path.phi_tt(k),
    })
}

/// The lifted matrix at interior slice `k`, grid point `idx`.
pub fn lifted_matrix<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    path: &PathPotential<T>,
    eps: T,
    k: usize,
    idx: usize,
) -> Result<Vec<Complex<T>>> {
    if k == 0 || k >= path.intervals() {
        return Err(Error::InvalidParameter(format!("slice {k} is not interior")));
    }
    let data = slice_data(cal, grid, path, k)?;
    let n = grid.n();
    Ok(assemble(data.block.at(idx), &data.grad[idx * n..(idx + 1) * n], data.phi_tt[idx], eps, data.t).to_vec())
}

/// Pointwise output of one residual sweep.
struct Sweep<T> {
    /// `Qhat_M - thetahat0`, interior slices only, slice-major.
    residual: Vec<T>,
    /// `sum_i Re G_ii` over the upper block and `G_nn`, `G = (I + M^2)^{-1}`.
    g_block: Vec<T>,
    g_corner: Vec<T>,
}

fn sweep<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    path: &PathPotential<T>,
    eps: T,
) -> Result<Sweep<T>> {
    let m = path.intervals();
    let len = grid.len();
    let n = grid.n();
    let d = n + 1;
    let interior = m - 1;
    let mut residual = vec![T::zero(); interior * len];
    let mut g_block = vec![T::zero(); interior * len];
    let mut g_corner = vec![T::zero(); interior * len];
    let big = cal.big_theta0;
    let target = cal.theta0_hat;
    for k in 1..m {
        let data = slice_data(cal, grid, path, k)?;
        let off = (k - 1) * len;
        let r = &mut residual[off..off + len];
        let gb = &mut g_block[off..off + len];
        let gc = &mut g_corner[off..off + len];
        r.par_iter_mut().zip(gb.par_iter_mut()).zip(gc.par_iter_mut()).with_min_len(PAR_MIN).enumerate().try_for_each(
            |(idx, ((r, gb), gc))| -> Result<()> {
                let block = data.block.at(idx);
                let q = eigenops::q_of(&linalg::hermitian_eigenvalues(block, n));
                let margin = q.min(big - q);
                if !(margin > T::zero()) {
                    return Err(Error::ConeExit { index: (k * len + idx), margin: margin.to_f64_lossy() });
                }
                let mat = assemble(block, &data.grad[idx * n..(idx + 1) * n], data.phi_tt[idx], eps, data.t);
                let (mu, u) = linalg::hermitian_eigen(&mat, d);
                *r = mu.iter().fold(T::zero(), |acc, &x| acc + x.atan()) - target;
                let w: SmallVec<[T; 8]> = mu.iter().map(|&x| T::one() / (T::one() + x * x)).collect();
                let g_ii = |i: usize| (0..d).fold(T::zero(), |acc, c| acc + u[i * d + c].norm_sqr() * w[c]);
                *gb = (0..n).fold(T::zero(), |acc, i| acc + g_ii(i));
                *gc = g_ii(n);
                Ok(())
            },
        )?;
    }
    Ok(Sweep { residual, g_block, g_corner })
}

/// Solve the tridiagonal system `a_k x_{k-1} + b_k x_k + c_k x_{k+1} = r_k`.
fn thomas<T: Scalar>(a: &[T], b: &[T], c: &[T], r: &mut [T]) {
    let n = b.len();
    let mut cp: SmallVec<[T; 128]> = SmallVec::from_elem(T::zero(), n);
    let mut denom = b[0];
    cp[0] = c[0] / denom;
    r[0] /= denom;
    for k in 1..n {
        denom = b[k] - a[k] * cp[k - 1];
        cp[k] = c[k] / denom;
        r[k] = (r[k] - a[k] * r[k - 1]) / denom;
    }
    for k in (0..n - 1).rev() {
        r[k] -= cp[k] * r[k + 1];
    }
}

/// Implicit pseudo-time update, exact in `t` and diagonal in space.
fn relaxation_update<T: Scalar>(
    grid: &TorusGrid<T>,
    path: &PathPotential<T>,
    sw: &Sweep<T>,
    eps: T,
    pseudo_step: T,
) -> Vec<T> {
    let m = path.intervals();
    let len = grid.len();
    let interior = m - 1;
    let cw = grid.stencil().center_weight(grid.spacing());
    let dt = path.dt();
    let inv_ds = if pseudo_step.is_finite() { T::one() / pseudo_step } else { T::zero() };
    let s: Vec<T> = (1..m)
        .map(|k| {
            let sc = eps * (-path.time(k)).exp();
            T::one() / (dt * dt * T::lit(4.0) * sc * sc)
        })
        .collect();
    let mut delta = vec![T::zero(); interior * len];
    let cols: Vec<Vec<T>> = (0..len)
        .into_par_iter()
        .with_min_len(PAR_MIN / interior + 1)
        .map(|idx| {
            let mut a: SmallVec<[T; 128]> = SmallVec::with_capacity(interior);
            let mut b: SmallVec<[T; 128]> = SmallVec::with_capacity(interior);
            let mut c: SmallVec<[T; 128]> = SmallVec::with_capacity(interior);
            let mut r: Vec<T> = Vec::with_capacity(interior);
            for (k, &sk) in s[..interior].iter().enumerate() {
                let at = k * len + idx;
                let coupling = sw.g_corner[at] * sk;
                a.push(if k == 0 { T::zero() } else { -coupling });
                c.push(if k + 1 == interior { T::zero() } else { -coupling });
                b.push(inv_ds - sw.g_block[at] * cw + coupling + coupling);
                r.push(sw.residual[at]);
            }
            thomas(&a, &b, &c, &mut r);
            r
        })
        .collect();
    for (idx, col) in cols.into_iter().enumerate() {
        for (k, v) in col.into_iter().enumerate() {
            delta[k * len + idx] = v;
        }
    }
    delta
}

fn apply<T: Scalar>(path: &PathPotential<T>, delta: &[T], scale: T) -> PathPotential<T> {
    let len = path.slice(0).len();
    let mut out = path.clone();
    for k in 1..path.intervals() {
        let d = &delta[(k - 1) * len..k * len];
        for (v, &dv) in out.slices[k].values.iter_mut().zip(d) {
            *v += dv * scale;
        }
    }
    out
}

fn sup<T: Scalar>(v: &[T]) -> T {
    crate::scalar::max_abs(v)
}

/// Relax the linear interpolation to the epsilon-geodesic from `phi0` to `phi1`.
pub fn solve_eps_geodesic<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi0: &Potential<T>,
    phi1: &Potential<T>,
    cfg: &GeodesicConfig<T>,
) -> Result<(PathPotential<T>, GeodesicReport<T>)> {
    cfg.validate()?;
    let mut path = PathPotential::linear(grid, phi0, phi1, cfg.slices)?;
    let mut sw = sweep(cal, grid, &path, cfg.eps)?;
    let mut res = sup(&sw.residual);
    let mut iterations = 0;
    while res >= cfg.tol && iterations < cfg.max_iter {
        let delta = relaxation_update(grid, &path, &sw, cfg.eps, cfg.pseudo_step);
        let mut scale = T::one();
        let mut accepted = None;
        for _ in 0..12 {
            let trial = apply(&path, &delta, scale);
            if let Ok(tsw) = sweep(cal, grid, &trial, cfg.eps) {
                let tres = sup(&tsw.residual);
                if tres < res || scale < T::lit(1e-3) && tres.is_finite() {
                    accepted = Some((trial, tsw, tres));
                    break;
                }
            }
            scale *= T::lit(0.5);
        }
        iterations += 1;
        match accepted {
            Some((p, s, r)) => {
                path = p;
                sw = s;
                res = r;
            }
            None => return Err(Error::NoConvergence { iterations, residual: res.to_f64_lossy() }),
        }
    }
    if res >= cfg.tol {
        return Err(Error::NoConvergence { iterations, residual: res.to_f64_lossy() });
    }
    let report = report(cal, grid, &path, cfg, iterations, res)?;
    Ok((path, report))
}

/// Diagnostics of a path regarded as an epsilon-geodesic.
pub fn report<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    path: &PathPotential<T>,
    cfg: &GeodesicConfig<T>,
    iterations: usize,
    phase_residual: T,
) -> Result<GeodesicReport<T>> {
    let (equation_residual, consistency_gap) = equation_check(cal, grid, path, cfg.eps)?;
    let m = path.intervals();
    let min_phi_tt = (1..m).flat_map(|k| path.phi_tt(k)).fold(T::infinity(), |a, b| a.min(b));
    let max_abs_phi_t = (0..m).map(|k| sup(&path.half_velocity(k))).fold(T::zero(), |a, b| a.max(b));
    let profile = energy_profile(cal, grid, path, cfg.p, cfg.delta)?;
    let length = profile.length();
    Ok(GeodesicReport {
        eps: cfg.eps,
        slices: m,
        iterations,
        converged: phase_residual < cfg.tol,
        phase_residual,
        equation_residual,
        consistency_gap,
        min_phi_tt,
        max_abs_phi_t,
        profile,
        length,
    })
}

/// Largest residual of
/// `phi_tt Re(e^{-i thetahat0} Omega^n) + n i d phi_t ^ dbar phi_t ^ Im(e^{-i thetahat0} Omega^{n-1})
///  + 4 e^{-2t} eps^2 Im(e^{-i thetahat0} Omega^n)`
/// over interior points, and its largest relative gap to
/// `4 eps^2 e^{-2t} |det(I + iM)| sin(Qhat_M - thetahat0)`.
pub fn equation_check<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    path: &PathPotential<T>,
    eps: T,
) -> Result<(T, T)> {
    let n = grid.n();
    let d = n + 1;
    let rot = Complex::from_polar(T::one(), -cal.theta0_hat);
    let mut worst = (T::zero(), T::zero());
    for k in 1..path.intervals() {
        let data = slice_data(cal, grid, path, k)?;
        let weight = T::lit(4.0) * eps * eps * (-(data.t + data.t)).exp();
        let per: Vec<(T, T)> = (0..grid.len())
            .into_par_iter()
            .with_min_len(PAR_MIN)
            .map(|idx| {
                let block = data.block.at(idx);
                let v = &data.grad[idx * n..(idx + 1) * n];
                let (lam, u) = linalg::hermitian_eigen(block, n);
                let factors: SmallVec<[Complex<T>; 8]> = lam.iter().map(|&l| Complex::new(T::one(), l)).collect();
                let det = factors.iter().fold(Complex::new(T::one(), T::zero()), |a, &f| a * f);
                // v^* adj(I + iA) v = sum_k |u_k^* v|^2 prod_{j != k} (1 + i l_j)
                let mut mixed = Complex::new(T::zero(), T::zero());
                for c in 0..n {
                    let proj = (0..n).fold(Complex::new(T::zero(), T::zero()), |a, i| a + u[i * n + c].conj() * v[i]);
                    let rest = factors
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != c)
                        .fold(Complex::new(T::one(), T::zero()), |a, (_, &f)| a * f);
                    mixed = mixed + rest * proj.norm_sqr();
                }
                let phi_tt = data.phi_tt[idx];
                let t1 = phi_tt * (rot * det).re;
                let t2 = (rot * mixed).im;
                let t3 = weight * (rot * det).im;
                let eqn = t1 + t2 + t3;
                let mat = assemble(block, v, phi_tt, eps, data.t);
                let mu = linalg::hermitian_eigenvalues(&mat, d);
                let qhat = mu.iter().fold(T::zero(), |a, &x| a + x.atan());
                let lifted = weight * eigenops::log_modulus(&mu).exp() * (qhat - cal.theta0_hat).sin();
                let scale = T::one() + t1.abs() + t2.abs() + t3.abs();
                (eqn.abs(), (eqn - lifted).abs() / scale)
            })
            .collect();
        for (e, g) in per {
            worst.0 = worst.0.max(e);
            worst.1 = worst.1.max(g);
        }
    }
    Ok(worst)
}

/// `Re(e^{-i thetahat0} Omega_phi^n) / omega^n` at every point, failing outside the space.
fn calibrated_density<T: Scalar>(cal: &CalibrationData<T>, field: &HermitianField<T>, offset: usize) -> Result<Vec<T>> {
    let n = field.n();
    let big = cal.big_theta0;
    field
        .eigenvalues()
        .chunks(n)
        .enumerate()
        .map(|(idx, lam)| {
            let q = eigenops::q_of(lam);
            let margin = q.min(big - q);
            if !(margin > T::zero()) {
                return Err(Error::ConeExit { index: offset + idx, margin: margin.to_f64_lossy() });
            }
            Ok(eigenops::log_modulus(lam).exp() * (q - cal.theta0).cos())
        })
        .collect()
}

/// `E_p` and `E_{p,delta}` on every interval of the path.
pub fn energy_profile<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    path: &PathPotential<T>,
    p: T,
    delta: T,
) -> Result<EnergyProfile<T>> {
    let m = path.intervals();
    let cell = grid.cell_volume();
    let mut out = EnergyProfile { p, delta, times: Vec::new(), energy: Vec::new(), energy_smoothed: Vec::new() };
    for k in 0..m {
        let mid = path.half_slice(k);
        let field = cal.alpha_phi(&mid, grid)?;
        let density = calibrated_density(cal, &field, k * grid.len())?;
        let vel = path.half_velocity(k);
        let plain: Vec<T> = vel.iter().zip(&density).map(|(&v, &w)| v.abs().powf(p) * w).collect();
        let smooth: Vec<T> =
            vel.iter().zip(&density).map(|(&v, &w)| (v.abs().powf(p + p) + delta * delta).sqrt() * w).collect();
        out.times.push((path.time(k) + path.time(k + 1)) * T::lit(0.5));
        out.energy.push(pairwise_sum(&plain) * cell);
        out.energy_smoothed.push(pairwise_sum(&smooth) * cell);
    }
    Ok(out)
}

pub fn length_p<T: Scalar>(cal: &CalibrationData<T>, grid: &TorusGrid<T>, path: &PathPotential<T>, p: T) -> Result<T> {
    Ok(energy_profile(cal, grid, path, p, T::lit(DEFAULT_DELTA))?.length())
}

/// `int_{base > other} |base - other|^p Re(e^{-i theta0}(alpha_base + i omega)^n)`.
pub fn one_sided_energy<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    base: &Potential<T>,
    other: &Potential<T>,
    p: T,
) -> Result<T> {
    let density = calibrated_density(cal, &cal.alpha_phi(base, grid)?, 0)?;
    let terms: Vec<T> = base
        .values
        .iter()
        .zip(&other.values)
        .zip(&density)
        .map(|((&a, &b), &w)| if a > b { (a - b).powf(p) * w } else { T::zero() })
        .collect();
    Ok(pairwise_sum(&terms) * grid.cell_volume())
}

/// `int |base - other|^p Re(e^{-i theta0}(alpha_base + i omega)^n)`, the energy of the
/// straight segment at `base`.
pub fn endpoint_energy<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    base: &Potential<T>,
    other: &Potential<T>,
    p: T,
) -> Result<T> {
    let density = calibrated_density(cal, &cal.alpha_phi(base, grid)?, 0)?;
    let terms: Vec<T> =
        base.values.iter().zip(&other.values).zip(&density).map(|((&a, &b), &w)| (a - b).abs().powf(p) * w).collect();
    Ok(pairwise_sum(&terms) * grid.cell_volume())
}

/// The larger of the two one-sided endpoint energies; a lower bound for `d_p^p`.
pub fn dp_lower_bound<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi0: &Potential<T>,
    phi1: &Potential<T>,
    p: T,
) -> Result<T> {
    Ok(one_sided_energy(cal, grid, phi0, phi1, p)?.max(one_sided_energy(cal, grid, phi1, phi0, p)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpEstimate<T> {
    pub p: T,
    pub eps: Vec<T>,
    pub lengths: Vec<T>,
    /// Lengths non-increasing as `eps` decreases, or non-decreasing.
    pub monotone: bool,
    /// `eps^2` extrapolation through the two smallest `eps`.
    pub extrapolated: T,
    pub reports: Vec<GeodesicReport<T>>,
}

/// `L(0)` from `L(a) = L0 + C a^2`, `L(b) = L0 + C b^2`.
pub fn richardson<T: Scalar>(eps_a: T, len_a: T, eps_b: T, len_b: T) -> T {
    let (a2, b2) = (eps_a * eps_a, eps_b * eps_b);
    (a2 * len_b - b2 * len_a) / (a2 - b2)
}

/// Geodesic lengths over an `eps` schedule and their `eps -> 0` extrapolation.
pub fn estimate_dp<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi0: &Potential<T>,
    phi1: &Potential<T>,
    schedule: &[T],
    cfg: &GeodesicConfig<T>,
) -> Result<DpEstimate<T>> {
    if schedule.is_empty() {
        return Err(Error::InvalidParameter("empty eps schedule".into()));
    }
    let mut reports = Vec::with_capacity(schedule.len());
    for &eps in schedule {
        let c = GeodesicConfig { eps, ..cfg.clone() };
        reports.push(solve_eps_geodesic(cal, grid, phi0, phi1, &c)?.1);
    }
    let lengths: Vec<T> = reports.iter().map(|r| r.length).collect();
    let mut order: Vec<usize> = (0..schedule.len()).collect();
    order.sort_by(|&a, &b| schedule[b].partial_cmp(&schedule[a]).unwrap_or(std::cmp::Ordering::Equal));
    let sorted: Vec<T> = order.iter().map(|&i| lengths[i]).collect();
    let monotone = sorted.windows(2).all(|w| w[1] <= w[0]) || sorted.windows(2).all(|w| w[1] >= w[0]);
    let extrapolated = if order.len() >= 2 {
        let (a, b) = (order[order.len() - 2], order[order.len() - 1]);
        richardson(schedule[a], lengths[a], schedule[b], lengths[b])
    } else {
        lengths[0]
    };
    Ok(DpEstimate { p: cfg.p, eps: schedule.to_vec(), lengths, monotone, extrapolated, reports })
}
