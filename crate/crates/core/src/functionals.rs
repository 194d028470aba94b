//! Class constants and the path-integrated energy functionals.
//!
//! Every functional is fixed by its value 0 at the zero potential and its
//! first variation; values are computed along the segment `t -> t phi` with
//! Gauss-Legendre nodes in `t`. The integrands are polynomials in `t` of
//! degree at most `n`, so a rule with more than `n/2` nodes is exact.

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;
use smallvec::SmallVec;

use crate::eigenops;
use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature::gauss_legendre;
use crate::scalar::{pairwise_sum, Scalar};
use crate::torus::{
    complex_hessian, integrate, pointwise_phase, volume_ratios, HermitianField, Potential, TorusGrid, PAR_MIN,
};

pub const DEFAULT_NODES: usize = 16;

/// Constants of the class of `alpha` and the reference forms.
#[derive(Clone, Debug)]
pub struct CalibrationData<T: Scalar> {
    pub n: usize,
    pub theta0: T,
    pub theta0_hat: T,
    pub big_theta0: T,
    pub a0: T,
    /// `int Re (alpha + i omega)^n` and `int Im (...)`.
    pub integral_re: T,
    pub integral_im: T,
    pub alpha: HermitianField<T>,
    /// `tan(theta0) omega + alpha`.
    pub chi: HermitianField<T>,
}

impl<T: Scalar> CalibrationData<T> {
    pub fn cot_theta0(&self) -> T {
        T::one() / self.theta0.tan()
    }

    /// The right-hand side constant of the twisted equation.
    pub fn target(&self, eps: T) -> T {
        self.cot_theta0() + self.a0 * eps
    }

    /// `alpha + i d dbar phi`.
    pub fn alpha_phi(&self, phi: &Potential<T>, grid: &TorusGrid<T>) -> Result<HermitianField<T>> {
        crate::torus::alpha_phi(&self.alpha, phi, grid)
    }
}

/// Reads off `theta0` and `a0` from `int (alpha + i omega)^n`.
pub fn compute_theta0<T: Scalar>(alpha: &HermitianField<T>, grid: &TorusGrid<T>) -> Result<CalibrationData<T>> {
    if alpha.points() != grid.len() || alpha.n() != grid.n() {
        return Err(Error::Shape("reference form does not match grid".into()));
    }
    let (re, im) = volume_ratios(alpha);
    let int_re = integrate(&re, grid);
    let int_im = integrate(&im, grid);
    let modulus = int_re.hypot(int_im);
    let vol = grid.volume();
    if !(modulus > T::lit(1e-10) * vol.max(T::one())) {
        return Err(Error::DegenerateClass { modulus: modulus.to_f64_lossy() });
    }
    let theta0 = int_im.atan2(int_re);
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(100.0));
    if !(theta0 > tol && theta0 < T::FRAC_PI_2() - tol) {
        return Err(Error::NotHypercritical { theta0: theta0.to_f64_lossy() });
    }
    let n = grid.n();
    Ok(CalibrationData {
        n,
        theta0,
        theta0_hat: T::from_usize_exact(n) * T::FRAC_PI_2() - theta0,
        big_theta0: theta0 + T::FRAC_PI_2(),
        a0: vol / int_im,
        integral_re: int_re,
        integral_im: int_im,
        alpha: alpha.clone(),
        chi: alpha.shifted(theta0.tan()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Membership<T> {
    pub inside: bool,
    pub margin: T,
}

/// `Q(alpha_phi) in (c, Theta0)` at every grid point.
pub fn membership<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    c: T,
) -> Result<Membership<T>> {
    let field = cal.alpha_phi(phi, grid)?;
    let q = pointwise_phase(&field).q;
    let margin = q.iter().fold(T::infinity(), |m, &q| m.min((q - c).min(cal.big_theta0 - q)));
    Ok(Membership { inside: margin > T::zero(), margin })
}

/// Eigenvalues at every point of `alpha + t * hess`, `n` per point.
pub(crate) fn eigen_combination<T: Scalar>(alpha: &HermitianField<T>, hess: &HermitianField<T>, t: T) -> Vec<T> {
    let n = alpha.n();
    let mut out = vec![T::zero(); alpha.points() * n];
    out.par_chunks_mut(n).with_min_len(PAR_MIN).enumerate().for_each(|(idx, dst)| {
        let a = alpha.at(idx);
        let h = hess.at(idx);
        let m: SmallVec<[Complex<T>; 9]> = a.iter().zip(h).map(|(&x, &y)| x + y * t).collect();
        dst.copy_from_slice(&linalg::hermitian_eigenvalues(&m, n));
    });
    out
}

/// Local data handed to a density: descending eigenvalues, `Q`, `ln prod sqrt(1 + l^2)`.
pub struct PointData<'a, T> {
    pub lambda: &'a [T],
    pub q: T,
    pub log_modulus: T,
}

/// `-int_0^1 int_X phi * density(t phi) dt`, failing if the segment leaves the space.
pub fn path_functional<T: Scalar, D>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    nodes: usize,
    density: D,
) -> Result<T>
where
    D: Fn(&PointData<'_, T>) -> T + Sync,
{
    let zero = Potential::zeros(grid);
    Ok(segment_functionals(cal, grid, &zero, phi, nodes, |pd| [density(pd)])?[0])
}

/// `-int_0^1 int_X (b - a) * density_k(a + s (b - a)) ds` for several densities
/// in one sweep over the quadrature nodes.
pub fn segment_functionals<T: Scalar, D, const K: usize>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    from: &Potential<T>,
    to: &Potential<T>,
    nodes: usize,
    density: D,
) -> Result<[T; K]>
where
    D: Fn(&PointData<'_, T>) -> [T; K] + Sync,
{
    let delta = to.sub(from);
    let base = cal.alpha_phi(from, grid)?;
    let hess = complex_hessian(&delta, grid)?;
    let (ts, ws) = gauss_legendre::<T>(nodes);
    let n = grid.n();
    let mut total = [T::zero(); K];
    for (&t, &w) in ts.iter().zip(&ws) {
        let eig = eigen_combination(&base, &hess, t);
        let vals: Vec<([T; K], T)> = eig
            .par_chunks(n)
            .zip(delta.values.par_iter())
            .with_min_len(PAR_MIN)
            .map(|(lam, &p)| {
                let q = eigenops::q_of(lam);
                let pd = PointData { lambda: lam, q, log_modulus: eigenops::log_modulus(lam) };
                (density(&pd).map(|d| p * d), q.min(cal.big_theta0 - q))
            })
            .collect();
        let margin = vals.iter().fold(T::infinity(), |m, v| m.min(v.1));
        if !(margin > T::zero()) {
            return Err(Error::PathExit { t: t.to_f64_lossy(), margin: margin.to_f64_lossy() });
        }
        for (k, tot) in total.iter_mut().enumerate() {
            let d: Vec<T> = vals.iter().map(|v| v.0[k]).collect();
            *tot += w * integrate(&d, grid);
        }
    }
    Ok(total.map(|x| -x))
}

/// `Re + eps - (cot theta0 + a0 eps) Im` of `(alpha_phi + i omega)^n / omega^n`.
pub(crate) fn twisted_density<T: Scalar>(cal: &CalibrationData<T>, eps: T, pd: &PointData<'_, T>) -> T {
    let r = pd.log_modulus.exp();
    r * pd.q.cos() + eps - cal.target(eps) * r * pd.q.sin()
}

pub fn j_eps<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    eps: T,
    nodes: usize,
) -> Result<T> {
    path_functional(cal, grid, phi, nodes, |pd| twisted_density(cal, eps, pd))
}

pub fn j0<T: Scalar>(cal: &CalibrationData<T>, grid: &TorusGrid<T>, phi: &Potential<T>, nodes: usize) -> Result<T> {
    j_eps(cal, grid, phi, T::zero(), nodes)
}

/// Built from `Im(e^{-i theta0_hat}(omega + i alpha_phi)^n)`, evaluated through
/// the arctangent phase `Q_hat`.
pub fn j<T: Scalar>(cal: &CalibrationData<T>, grid: &TorusGrid<T>, phi: &Potential<T>, nodes: usize) -> Result<T> {
    path_functional(cal, grid, phi, nodes, |pd| {
        let qhat = pd.lambda.iter().fold(T::zero(), |a, &l| a + l.atan());
        pd.log_modulus.exp() * (qhat - cal.theta0_hat).sin()
    })
}

pub fn im_z<T: Scalar>(cal: &CalibrationData<T>, grid: &TorusGrid<T>, phi: &Potential<T>, nodes: usize) -> Result<T> {
    path_functional(cal, grid, phi, nodes, |pd| pd.log_modulus.exp() * pd.q.sin())
}

/// `J_0(phi) + eps * int_0^1 int phi (a0 Im(alpha_{t phi} + i omega)^n - omega^n) dt`,
/// an independent route to `J_eps`.
pub fn j_eps_decomposed<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    eps: T,
    nodes: usize,
) -> Result<T> {
    let base = j0(cal, grid, phi, nodes)?;
    let tw = twist_integral(cal, grid, phi, nodes)?;
    Ok(base + eps * tw)
}

/// `int_0^1 int phi (a0 Im(alpha_{t phi} + i omega)^n - 1) dt`.
pub fn twist_integral<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    nodes: usize,
) -> Result<T> {
    let neg = path_functional(cal, grid, phi, nodes, |pd| cal.a0 * pd.log_modulus.exp() * pd.q.sin() - T::one())?;
    Ok(-neg)
}

/// `Im (alpha_phi + i omega)^n / omega^n` at every point.
pub fn im_volume<T: Scalar>(cal: &CalibrationData<T>, grid: &TorusGrid<T>, phi: &Potential<T>) -> Result<Vec<T>> {
    Ok(volume_ratios(&cal.alpha_phi(phi, grid)?).1)
}

/// `int (-phi)(Im(alpha_phi + i omega)^n - Im(alpha + i omega)^n)`.
pub fn im_gap_integral<T: Scalar>(cal: &CalibrationData<T>, grid: &TorusGrid<T>, phi: &Potential<T>) -> Result<T> {
    let im_phi = im_volume(cal, grid, phi)?;
    let im_0 = volume_ratios(&cal.alpha).1;
    let d: Vec<T> = phi.values.iter().zip(im_phi.iter().zip(&im_0)).map(|(&p, (&a, &b))| -p * (a - b)).collect();
    Ok(integrate(&d, grid))
}

/// `J(phi) - delta * int (-phi)(Im_phi - Im_0) + C`; nonnegative exactly when
/// the coercivity inequality holds at `(delta, C)`.
pub fn coercivity_gap<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    delta: T,
    big_c: T,
    nodes: usize,
) -> Result<T> {
    Ok(j(cal, grid, phi, nodes)? - delta * im_gap_integral(cal, grid, phi)? + big_c)
}

/// `min_x Im(alpha_{s phi} + i omega)^n / Im(alpha_phi + i omega)^n`.
pub fn s_im_control_ratio<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    s: T,
) -> Result<T> {
    if !(s >= T::lit(0.5) && s <= T::one()) {
        return Err(Error::InvalidParameter(format!("s must lie in [1/2, 1], got {s}")));
    }
    let num = im_volume(cal, grid, &phi.scaled(s))?;
    let den = im_volume(cal, grid, phi)?;
    Ok(num.iter().zip(&den).fold(T::infinity(), |m, (&a, &b)| m.min(a / b)))
}

/// The two sides of the coerciveness inequality for one potential.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CoercivenessTerms<T> {
    /// `int_0^1 int (-phi)(a0 Im_{t phi} - 1) dt`
    pub lhs: T,
    /// `int (-phi)(Im_phi - Im_0)`
    pub im_gap: T,
}

pub fn coerciveness_terms<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    nodes: usize,
) -> Result<CoercivenessTerms<T>> {
    Ok(CoercivenessTerms { lhs: -twist_integral(cal, grid, phi, nodes)?, im_gap: im_gap_integral(cal, grid, phi)? })
}

/// Smallest `C >= 1` with `lhs >= (a0 / C) im_gap - C` on every member.
pub fn calibrate_coerciveness_constant<T: Scalar>(a0: T, family: &[CoercivenessTerms<T>]) -> T {
    let two = T::lit(2.0);
    family.iter().fold(T::one(), |c, m| {
        // C^2 + lhs C - a0 im_gap >= 0
        let disc = m.lhs * m.lhs + T::lit(4.0) * a0 * m.im_gap;
        if disc < T::zero() {
            return c;
        }
        c.max((-m.lhs + disc.sqrt()) / two)
    })
}

/// `min_x (Im(alpha_phi + i omega)^n / prod sqrt(1 + l^2) - sin c)`.
pub fn hc_positivity_slack<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    c: T,
) -> Result<T> {
    let field = cal.alpha_phi(phi, grid)?;
    let n = grid.n();
    let eig = field.eigenvalues();
    Ok(eig.chunks(n).fold(T::infinity(), |m, lam| {
        let q = eigenops::q_of(lam);
        m.min(q.sin() - c.sin())
    }))
}

/// Line integral of the twisted first variation along a sampled trajectory
/// `phi_0, ..., phi_K` with the trapezoid rule in the trajectory parameter.
pub fn j_eps_along<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    path: &[Potential<T>],
    eps: T,
) -> Result<T> {
    let mut total = T::zero();
    let half = T::lit(0.5);
    let mut prev: Option<Vec<T>> = None;
    for k in 0..path.len() {
        let (re, im) = volume_ratios(&cal.alpha_phi(&path[k], grid)?);
        let dens: Vec<T> = re.iter().zip(&im).map(|(&r, &i)| r + eps - cal.target(eps) * i).collect();
        if let Some(pd) = prev.take() {
            let dphi = path[k].sub(&path[k - 1]);
            let prod: Vec<T> =
                dphi.values.iter().zip(pd.iter().zip(&dens)).map(|(&d, (&a, &b))| d * half * (a + b)).collect();
            total -= integrate(&prod, grid);
        }
        prev = Some(dens);
    }
    Ok(total)
}

/// `int phi` with the flat volume, used for normalizations.
pub fn integral_of<T: Scalar>(grid: &TorusGrid<T>, phi: &Potential<T>) -> T {
    pairwise_sum(&phi.values) * grid.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::ReferenceForm;

    fn setup() -> (TorusGrid<f64>, CalibrationData<f64>) {
        let g = TorusGrid::standard(2, 8).unwrap();
        let alpha = ReferenceForm::diagonal(&[3.0, 3.0]).field(&g).unwrap();
        let cal = compute_theta0(&alpha, &g).unwrap();
        (g, cal)
    }

    #[test]
    fn constant_class_constants() {
        let (_, cal) = setup();
        assert!((cal.theta0 - 6f64.atan2(8.0)).abs() < 1e-14);
        assert!((cal.a0 - 1.0 / 6.0).abs() < 1e-14);
        assert!((cal.big_theta0 - cal.theta0 - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let tan = cal.theta0.tan();
        assert!((cal.chi.at(5)[0].re - 3.0 - tan).abs() < 1e-14);
    }

    #[test]
    fn rejects_boundary_and_supercritical() {
        let g = TorusGrid::standard(2, 8).unwrap();
        let one = ReferenceForm::diagonal(&[1.0, 1.0]).field(&g).unwrap();
        assert!(matches!(compute_theta0(&one, &g), Err(Error::NotHypercritical { .. })));
        let small = ReferenceForm::diagonal(&[0.2, 0.2]).field(&g).unwrap();
        assert!(matches!(compute_theta0(&small, &g), Err(Error::NotHypercritical { .. })));
        let g1 = TorusGrid::<f64>::standard(1, 8).unwrap();
        let zero = HermitianField::zeros(&g1);
        // (0 + i)^1 has phase pi/2
        assert!(compute_theta0(&zero, &g1).is_err());
    }

    #[test]
    fn membership_thresholds() {
        let (g, cal) = setup();
        let z = Potential::zeros(&g);
        assert!(membership(&cal, &g, &z, 0.5).unwrap().inside);
        assert!(!membership(&cal, &g, &z, 0.65).unwrap().inside);
        assert!(membership(&cal, &g, &z, 0.0).unwrap().inside);
    }

    #[test]
    fn functionals_vanish_at_base_and_constants() {
        let (g, cal) = setup();
        let z = Potential::zeros(&g);
        assert_eq!(j_eps(&cal, &g, &z, 0.1, 16).unwrap(), 0.0);
        assert_eq!(j(&cal, &g, &z, 16).unwrap(), 0.0);
        let c = Potential::constant(&g, 0.7);
        assert!(j_eps(&cal, &g, &c, 0.1, 16).unwrap().abs() < 1e-9);
        let want = -0.7 * cal.integral_im;
        assert!((im_z(&cal, &g, &c, 16).unwrap() - want).abs() < 1e-9 * want.abs());
    }

    #[test]
    fn s_ratio_and_gap_trivial_cases() {
        let (g, cal) = setup();
        let phi = Potential::bump(&g, &[0.0; 4], 1.0, 0.3);
        assert!((s_im_control_ratio(&cal, &g, &phi, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(s_im_control_ratio(&cal, &g, &phi, 0.3).is_err());
        let c = Potential::constant(&g, 2.0);
        assert!((s_im_control_ratio(&cal, &g, &c, 0.5).unwrap() - 1.0).abs() < 1e-14);
        assert!((coercivity_gap(&cal, &g, &Potential::zeros(&g), 0.3, 5.0, 16).unwrap() - 5.0).abs() < 1e-15);
        let gap = coercivity_gap(&cal, &g, &c, 0.3, 5.0, 16).unwrap();
        assert!((gap - 5.0).abs() < 1e-8);
    }

    #[test]
    fn path_exit_is_reported() {
        let (g, cal) = setup();
        let phi = Potential::bump(&g, &[0.0; 4], 2.0, 40.0);
        assert!(matches!(j_eps(&cal, &g, &phi, 0.0, 8), Err(Error::PathExit { .. })));
    }
}
