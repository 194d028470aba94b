//! Mollification on the periodic grid, the regularized maximum and gluing of
//! local potentials.

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;
use smallvec::SmallVec;

use crate::eigenops;
use crate::error::{Error, Result};
use crate::functionals::CalibrationData;
use crate::quadrature::gauss_legendre;
use crate::scalar::Scalar;
use crate::torus::{complex_hessian, pointwise_phase, HermitianField, Potential, TorusGrid, PAR_MIN};

/// Normalized radial bump `exp(-1 / (1 - |o|^2 / r^2))` on the lattice offsets `|o| < r`.
#[derive(Clone, Debug, PartialEq)]
pub struct MollifierSpec<T> {
    radius: T,
    offsets: Vec<SmallVec<[isize; 6]>>,
    weights: Vec<T>,
}

impl<T: Scalar> MollifierSpec<T> {
    /// `radius` is measured in grid cells.
    pub fn new(grid: &TorusGrid<T>, radius: T) -> Result<Self> {
        if !(radius >= T::lit(2.0)) {
            return Err(Error::RadiusTooSmall { radius: radius.to_f64_lossy() });
        }
        if !(radius < T::from_usize_exact(grid.points()) * T::lit(0.5)) {
            return Err(Error::InvalidParameter(format!(
                "mollifier radius {radius} does not fit in a grid of {} points",
                grid.points()
            )));
        }
        let reach = radius.ceil().to_f64_lossy() as isize;
        let axes = grid.axes();
        let side = (2 * reach + 1) as usize;
        let r2 = radius * radius;
        let mut offsets = Vec::new();
        let mut raw = Vec::new();
        for code in 0..side.pow(axes as u32) {
            let mut rest = code;
            let o: SmallVec<[isize; 6]> = (0..axes)
                .map(|_| {
                    let c = (rest % side) as isize - reach;
                    rest /= side;
                    c
                })
                .collect();
            let d2 = o.iter().fold(T::zero(), |a, &c| a + T::lit((c * c) as f64)) / r2;
            if d2 < T::one() {
                offsets.push(o);
                raw.push((-T::one() / (T::one() - d2)).exp());
            }
        }
        let total = crate::scalar::pairwise_sum(&raw);
        let weights = raw.iter().map(|&w| w / total).collect();
        Ok(Self { radius, offsets, weights })
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn offsets(&self) -> &[SmallVec<[isize; 6]>] {
        &self.offsets
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Fourier symbol `sum_o w_o cos(k . o h)` for an integer wave vector.
    pub fn symbol(&self, grid: &TorusGrid<T>, wave: &[i32]) -> T {
        let base = T::TAU() / T::from_usize_exact(grid.points());
        let terms: Vec<T> = self
            .offsets
            .iter()
            .zip(&self.weights)
            .map(|(o, &w)| {
                let phase = o.iter().zip(wave).fold(T::zero(), |a, (&c, &k)| a + T::lit((c as i64 * k as i64) as f64));
                w * (phase * base).cos()
            })
            .collect();
        crate::scalar::pairwise_sum(&terms)
    }
}

fn offset_index<T: Scalar>(grid: &TorusGrid<T>, idx: usize, o: &[isize]) -> usize {
    o.iter().enumerate().fold(idx, |i, (axis, &d)| if d == 0 { i } else { grid.shift(i, axis, d) })
}

/// Periodic convolution of a scalar field with the kernel.
pub fn mollify_values<T: Scalar>(grid: &TorusGrid<T>, spec: &MollifierSpec<T>, src: &[T]) -> Result<Vec<T>> {
    if src.len() != grid.len() {
        return Err(Error::Shape(format!("field has {} values, grid has {}", src.len(), grid.len())));
    }
    Ok((0..grid.len())
        .into_par_iter()
        .with_min_len(PAR_MIN)
        .map(|idx| {
            spec.offsets
                .iter()
                .zip(&spec.weights)
                .fold(T::zero(), |acc, (o, &w)| acc + w * src[offset_index(grid, idx, o)])
        })
        .collect())
}

pub fn mollify_potential<T: Scalar>(
    grid: &TorusGrid<T>,
    spec: &MollifierSpec<T>,
    u: &Potential<T>,
) -> Result<Potential<T>> {
    Ok(Potential { values: mollify_values(grid, spec, &u.values)? })
}

/// Entrywise convolution of a matrix field.
pub fn mollify_field<T: Scalar>(
    grid: &TorusGrid<T>,
    spec: &MollifierSpec<T>,
    field: &HermitianField<T>,
) -> Result<HermitianField<T>> {
    if field.points() != grid.len() {
        return Err(Error::Shape("field does not match grid".into()));
    }
    let n = field.n();
    let data = field.data();
    let mut out = vec![Complex::new(T::zero(), T::zero()); data.len()];
    out.par_chunks_mut(n * n).with_min_len(PAR_MIN).enumerate().for_each(|(idx, m)| {
        for (o, &w) in spec.offsets.iter().zip(&spec.weights) {
            let src = offset_index(grid, idx, o) * n * n;
            for (dst, &s) in m.iter_mut().zip(&data[src..src + n * n]) {
                *dst = *dst + s * w;
            }
        }
    });
    HermitianField::from_data(n, out)
}

/// `max` of `values` over the kernel support around each point.
fn ball_max<T: Scalar>(grid: &TorusGrid<T>, spec: &MollifierSpec<T>, values: &[T], sign: T) -> Vec<T> {
    (0..grid.len())
        .into_par_iter()
        .with_min_len(PAR_MIN)
        .map(|idx| {
            spec.offsets.iter().fold(T::neg_infinity(), |m, o| m.max(sign * values[offset_index(grid, idx, o)])) * sign
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MollifyReport<T> {
    pub radius: T,
    /// `max_x Q(alpha_u^(r))(x) - max_{B_r(x)} Q(alpha_u)`; at most rounding if the bound holds.
    pub max_phase_excess: T,
    /// `min_x lambda_min(chi_u^(r))(x) - min_{B_r(x)} lambda_min(chi_u)`.
    pub min_psh_slack: T,
    /// `max_x |Q(alpha_u^(r)) - Q(alpha_u)|`.
    pub max_phase_change: T,
    pub passed: bool,
}

/// Mollify `alpha_u` and compare its phase and positivity to the local extremes before.
pub fn phase_after_mollify_check<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    u: &Potential<T>,
    spec: &MollifierSpec<T>,
    tol: T,
) -> Result<MollifyReport<T>> {
    let before = cal.alpha_phi(u, grid)?;
    let after = mollify_field(grid, spec, &before)?;
    let pb = pointwise_phase(&before);
    let pa = pointwise_phase(&after);
    let q_ball = ball_max(grid, spec, &pb.q, T::one());
    let e_ball = ball_max(grid, spec, &pb.min_eig, -T::one());
    let tan = cal.theta0.tan();
    let mut rep = MollifyReport {
        radius: spec.radius,
        max_phase_excess: T::neg_infinity(),
        min_psh_slack: T::infinity(),
        max_phase_change: T::zero(),
        passed: false,
    };
    for idx in 0..grid.len() {
        rep.max_phase_excess = rep.max_phase_excess.max(pa.q[idx] - q_ball[idx]);
        rep.min_psh_slack = rep.min_psh_slack.min((pa.min_eig[idx] + tan) - (e_ball[idx] + tan));
        rep.max_phase_change = rep.max_phase_change.max((pa.q[idx] - pb.q[idx]).abs());
    }
    rep.passed = rep.max_phase_excess <= tol && rep.min_psh_slack >= -tol;
    Ok(rep)
}

/// CDF of the triweight density `35/32 (1 - h^2)^3` on `[-1, 1]`.
fn triweight_cdf<T: Scalar>(h: T) -> T {
    if h <= -T::one() {
        return T::zero();
    }
    if h >= T::one() {
        return T::one();
    }
    let h2 = h * h;
    let poly = h * (T::one() - h2 + h2 * h2 * T::lit(0.6) - h2 * h2 * h2 / T::lit(7.0));
    T::lit(0.5) + T::lit(35.0 / 32.0) * poly
}

/// `E max_j (v_j + eta h_j)` with independent triweight `h_j`.
///
/// Entries below `max - 2 eta` can never attain the maximum and are dropped
/// before any arithmetic, so they have no influence at all on the result.
pub fn regularized_max<T: Scalar>(values: &[T], eta: T) -> Result<T> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("regularized max of an empty tuple".into()));
    }
    if !(eta > T::zero()) || !eta.is_finite() {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("regularized max of non-finite values".into()));
    }
    let top = values.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let cut = top - eta - eta;
    let mut kept: SmallVec<[T; 16]> = values.iter().copied().filter(|&v| !(v < cut)).collect();
    if kept.len() == 1 {
        return Ok(top);
    }
    kept.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let lo = top - eta;
    let hi = top + eta;
    let mut breaks: SmallVec<[T; 32]> = SmallVec::new();
    breaks.push(lo);
    breaks.push(hi);
    for &v in &kept {
        for b in [v - eta, v + eta] {
            if b > lo && b < hi {
                breaks.push(b);
            }
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    // the integrand is a polynomial of degree 7 m on each piece
    let (nodes, weights) = gauss_legendre::<T>((7 * kept.len() + 2) / 2);
    let inv = T::one() / eta;
    let mut integral = T::zero();
    for w in breaks.windows(2) {
        let width = w[1] - w[0];
        if !(width > T::zero()) {
            continue;
        }
        for (&x, &wt) in nodes.iter().zip(&weights) {
            let at = w[0] + width * x;
            let prod = kept.iter().fold(T::one(), |p, &v| p * triweight_cdf((at - v) * inv));
            integral += wt * width * (T::one() - prod);
        }
    }
    Ok((lo + integral).max(top).min(hi))
}

/// A local potential on an index set of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GluePatch<T> {
    /// Sorted grid indices covered by the patch.
    pub indices: Vec<usize>,
    /// Local potential at `indices`.
    pub values: Vec<T>,
}

impl<T: Scalar> GluePatch<T> {
    /// Restrict a globally defined local potential to `indices`.
    pub fn restrict(indices: Vec<usize>, phi: &Potential<T>) -> Self {
        let values = indices.iter().map(|&i| phi.values[i]).collect();
        Self { indices, values }
    }
}

/// Overlapping slabs along axis 0: `count` boxes of width `period / count`,
/// each widened by `overlap` cells on both sides.
pub fn slab_layout<T: Scalar>(grid: &TorusGrid<T>, count: usize, overlap: usize) -> Result<Vec<Vec<usize>>> {
    let np = grid.points();
    if count == 0 || !np.is_multiple_of(count) {
        return Err(Error::InvalidParameter(format!("{count} slabs do not divide {np} points")));
    }
    let width = np / count;
    if count > 1 && width + 2 * overlap >= np {
        return Err(Error::InvalidParameter("slab overlap covers the whole torus".into()));
    }
    Ok((0..count)
        .map(|s| {
            let start = (s * width + np - overlap) % np;
            let span = if count == 1 { np } else { width + 2 * overlap };
            let mut idx: Vec<usize> = (0..grid.len()).filter(|&i| (i % np + np - start) % np < span).collect();
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// The standard layout: four slabs of a quarter period overlapping by an eighth.
pub fn standard_layout<T: Scalar>(grid: &TorusGrid<T>) -> Result<Vec<Vec<usize>>> {
    slab_layout(grid, 4, grid.points() / 8)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GlueReport<T> {
    pub eta: T,
    /// Smallest cone margin among the patch potentials on their own interiors.
    pub min_patch_margin: T,
    /// Cone margin of the glued potential.
    pub glued_margin: T,
    /// Largest absolute second difference of the glued potential.
    pub c2_norm: T,
    /// Largest jump between forward and backward differences.
    pub gradient_jump: T,
}

/// Cells of a patch within stencil reach of its complement.
fn rim<T: Scalar>(grid: &TorusGrid<T>, member: &[bool]) -> Vec<bool> {
    let reach = 2isize;
    (0..grid.len())
        .map(|idx| member[idx] && (0..grid.axes()).any(|a| (-reach..=reach).any(|d| !member[grid.shift(idx, a, d)])))
        .collect()
}

fn cone_margin<T: Scalar>(lam: &[T], theta: T, big_theta: T) -> T {
    let q = eigenops::q_of(lam);
    let p = q - T::FRAC_PI_2() + lam[0].atan();
    (theta - p).min(big_theta - q)
}

/// Pointwise regularized maximum of the patches covering each point.
pub fn glue<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    patches: &[GluePatch<T>],
    eta: T,
) -> Result<(Potential<T>, GlueReport<T>)> {
    if patches.is_empty() {
        return Err(Error::InvalidParameter("no patches to glue".into()));
    }
    let len = grid.len();
    let mut local: Vec<Vec<Option<T>>> = Vec::with_capacity(patches.len());
    for p in patches {
        if p.indices.len() != p.values.len() || p.indices.iter().any(|&i| i >= len) {
            return Err(Error::Shape("patch indices and values disagree".into()));
        }
        let mut v = vec![None; len];
        for (&i, &x) in p.indices.iter().zip(&p.values) {
            v[i] = Some(x);
        }
        local.push(v);
    }
    let members: Vec<Vec<bool>> = local.iter().map(|v| v.iter().map(Option::is_some).collect()).collect();
    let rims: Vec<Vec<bool>> = members.iter().map(|m| rim(grid, m)).collect();
    let required = eta + eta;
    for idx in 0..len {
        let covering: SmallVec<[T; 8]> = local.iter().filter_map(|v| v[idx]).collect();
        if covering.is_empty() {
            return Err(Error::InvalidParameter(format!("grid point {idx} is not covered by any patch")));
        }
        if !members.iter().zip(&rims).any(|(m, r)| m[idx] && !r[idx]) {
            return Err(Error::InvalidParameter(format!("grid point {idx} lies in no patch interior")));
        }
        let top = covering.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        for (v, r) in local.iter().zip(&rims) {
            if r[idx] {
                let own = v[idx].expect("rim points belong to the patch");
                let gap = top - own;
                if !(gap > required) {
                    return Err(Error::GluingGap {
                        index: idx,
                        gap: gap.to_f64_lossy(),
                        required: required.to_f64_lossy(),
                    });
                }
            }
        }
    }
    let values: Vec<T> = (0..len)
        .map(|idx| {
            let covering: SmallVec<[T; 8]> = local.iter().filter_map(|v| v[idx]).collect();
            regularized_max(&covering, eta)
        })
        .collect::<Result<_>>()?;
    let glued = Potential { values };

    let theta = cal.theta0;
    let big = cal.big_theta0;
    let n = grid.n();
    let mut min_patch_margin = T::infinity();
    for (v, (m, r)) in local.iter().zip(members.iter().zip(&rims)) {
        // extend by the glued values so the Hessian is defined; only interiors are read
        let full = Potential { values: (0..len).map(|i| v[i].unwrap_or(glued.values[i])).collect() };
        let eig = cal.alpha_phi(&full, grid)?.eigenvalues();
        for idx in (0..len).filter(|&i| m[i] && !r[i]) {
            min_patch_margin = min_patch_margin.min(cone_margin(&eig[idx * n..(idx + 1) * n], theta, big));
        }
    }
    let eig = cal.alpha_phi(&glued, grid)?.eigenvalues();
    let glued_margin = eig.chunks(n).fold(T::infinity(), |m, l| m.min(cone_margin(l, theta, big)));
    let (c2_norm, gradient_jump) = smoothness(grid, &glued);
    Ok((glued, GlueReport { eta, min_patch_margin, glued_margin, c2_norm, gradient_jump }))
}

/// Largest `|D^2 phi|` along axes and largest `|D^+ phi - D^- phi|`.
pub fn smoothness<T: Scalar>(grid: &TorusGrid<T>, phi: &Potential<T>) -> (T, T) {
    let h = grid.spacing();
    let mut c2 = T::zero();
    let mut jump = T::zero();
    for idx in 0..grid.len() {
        for a in 0..grid.axes() {
            let up = phi.values[grid.shift(idx, a, 1)];
            let dn = phi.values[grid.shift(idx, a, -1)];
            let here = phi.values[idx];
            let j = (up - here - (here - dn)).abs() / h;
            jump = jump.max(j);
            c2 = c2.max(j / h);
        }
    }
    (c2, jump)
}

/// `i d dbar` after mollifying, against mollifying after `i d dbar`.
pub fn hessian_commutation_residual<T: Scalar>(
    grid: &TorusGrid<T>,
    spec: &MollifierSpec<T>,
    u: &Potential<T>,
) -> Result<T> {
    let a = complex_hessian(&mollify_potential(grid, spec, u)?, grid)?;
    let b = mollify_field(grid, spec, &complex_hessian(u, grid)?)?;
    Ok(a.data().iter().zip(b.data()).fold(T::zero(), |m, (x, y)| m.max((*x - *y).norm())))
}
