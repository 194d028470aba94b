//! Explicit integrator for the twisted flow `phi_t = F_eps(alpha_phi) - cot theta0 - a0 eps`.

use rayon::prelude::*;
use serde::Serialize;

use crate::eigenops;
use crate::error::{Error, Result};
use crate::functionals::{segment_functionals, twisted_density, CalibrationData};
use crate::scalar::{max_abs, min_max, Scalar};
use crate::torus::{integrate, Potential, TorusGrid, PAR_MIN};

pub const MIN_DT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DtPolicy<T> {
    Fixed(T),
    /// `dt = cfl * h^2 / max_x max_i F_i`.
    Cfl(T),
}

#[derive(Clone, Debug)]
pub struct FlowConfig<T> {
    pub eps: T,
    pub dt: DtPolicy<T>,
    pub t_end: T,
    /// Stop once `|phi_t|_inf` drops below this.
    pub tol: T,
    /// Record a sample every this many accepted steps.
    pub monitor_every: usize,
    pub snapshot_times: Vec<T>,
    /// Gauss-Legendre nodes for the monitored functionals.
    pub nodes: usize,
    pub max_steps: usize,
}

impl<T: Scalar> Default for FlowConfig<T> {
    fn default() -> Self {
        Self {
            eps: T::lit(1e-2),
            dt: DtPolicy::Cfl(T::lit(0.2)),
            t_end: T::lit(10.0),
            tol: T::lit(1e-8),
            monitor_every: 1,
            snapshot_times: Vec::new(),
            nodes: 16,
            max_steps: 10_000_000,
        }
    }
}

impl<T: Scalar> FlowConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.eps >= T::zero()) {
            return bad(format!("eps must be nonnegative, got {}", self.eps));
        }
        match self.dt {
            DtPolicy::Fixed(dt) | DtPolicy::Cfl(dt) if !(dt > T::zero()) || !dt.is_finite() => {
                return bad(format!("dt parameter must be positive, got {dt}"));
            }
            _ => {}
        }
        if !(self.t_end >= T::zero()) {
            return bad(format!("t_end must be nonnegative, got {}", self.t_end));
        }
        if !(self.tol >= T::zero()) {
            return bad(format!("tol must be nonnegative, got {}", self.tol));
        }
        if self.monitor_every == 0 || self.nodes == 0 {
            return bad("monitor cadence and node count must be positive".into());
        }
        if self.snapshot_times.windows(2).any(|w| w[0] >= w[1]) {
            return bad("snapshot times must be strictly increasing".into());
        }
        Ok(())
    }
}

/// Pointwise data of one right-hand side evaluation.
#[derive(Clone, Debug)]
pub struct RhsEval<T> {
    pub phidot: Vec<T>,
    pub f: Vec<T>,
    pub q: Vec<T>,
    /// `Im (alpha_phi + i omega)^n / omega^n`
    pub im: Vec<T>,
    pub min_lambda: T,
    pub max_grad: T,
}

struct PointRow<T> {
    phidot: T,
    f: T,
    q: T,
    im: T,
    min_lambda: T,
    max_grad: T,
}

/// `F_eps(alpha_phi) - cot theta0 - a0 eps` with all pointwise by-products.
pub fn rhs_eval<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    eps: T,
) -> Result<RhsEval<T>> {
    let field = cal.alpha_phi(phi, grid)?;
    let n = grid.n();
    let target = cal.target(eps);
    let big = cal.big_theta0;
    let per: Vec<Result<PointRow<T>>> = (0..grid.len())
        .into_par_iter()
        .with_min_len(PAR_MIN)
        .map(|idx| {
            let lam = crate::linalg::hermitian_eigenvalues(field.at(idx), n);
            let q = eigenops::q_of(&lam);
            let margin = q.min(big - q);
            if !(margin > T::zero()) {
                return Err(Error::ConeExit { index: idx, margin: margin.to_f64_lossy() });
            }
            let pt = eigenops::point_terms(&lam, q, eps)?;
            Ok(PointRow { phidot: pt.f - target, f: pt.f, q, im: pt.im, min_lambda: lam[n - 1], max_grad: pt.max_grad })
        })
        .collect();
    let mut out = RhsEval {
        phidot: Vec::with_capacity(grid.len()),
        f: Vec::with_capacity(grid.len()),
        q: Vec::with_capacity(grid.len()),
        im: Vec::with_capacity(grid.len()),
        min_lambda: T::infinity(),
        max_grad: T::zero(),
    };
    for r in per {
        let r = r?;
        out.phidot.push(r.phidot);
        out.f.push(r.f);
        out.q.push(r.q);
        out.im.push(r.im);
        out.min_lambda = out.min_lambda.min(r.min_lambda);
        out.max_grad = out.max_grad.max(r.max_grad);
    }
    Ok(out)
}

pub fn rhs<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    eps: T,
) -> Result<Potential<T>> {
    Ok(Potential { values: rhs_eval(cal, grid, phi, eps)?.phidot })
}

fn axpy<T: Scalar>(phi: &Potential<T>, a: T, k: &[T]) -> Potential<T> {
    Potential {
        values: phi.values.par_iter().zip(k.par_iter()).with_min_len(PAR_MIN).map(|(&p, &k)| p + a * k).collect(),
    }
}

/// One classical RK4 step of size `dt` from `phi` with `k1 = rhs(phi)` supplied.
pub fn rk4_step<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi: &Potential<T>,
    k1: &[T],
    dt: T,
    eps: T,
) -> Result<Potential<T>> {
    let half = T::lit(0.5);
    let k2 = rhs(cal, grid, &axpy(phi, half * dt, k1), eps)?.values;
    let k3 = rhs(cal, grid, &axpy(phi, half * dt, &k2), eps)?.values;
    let k4 = rhs(cal, grid, &axpy(phi, dt, &k3), eps)?.values;
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let values = (0..phi.len())
        .into_par_iter()
        .with_min_len(PAR_MIN)
        .map(|i| phi.values[i] + sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]))
        .collect();
    Ok(Potential { values })
}

/// Flow state: potential, time and the right-hand side at that potential.
#[derive(Clone, Debug)]
pub struct FlowState<T: Scalar> {
    pub t: T,
    pub phi: Potential<T>,
    pub eval: RhsEval<T>,
}

impl<T: Scalar> FlowState<T> {
    pub fn new(cal: &CalibrationData<T>, grid: &TorusGrid<T>, phi: Potential<T>, eps: T) -> Result<Self> {
        let eval = rhs_eval(cal, grid, &phi, eps)?;
        Ok(Self { t: T::zero(), phi, eval })
    }
}

/// Advances by `dt`, halving on cone exit. Returns the new state and the step
/// actually taken.
pub fn step<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    state: &FlowState<T>,
    dt: T,
    eps: T,
) -> Result<(FlowState<T>, T, usize)> {
    let mut dt = dt;
    let mut rejected = 0;
    loop {
        if dt < T::lit(MIN_DT) {
            return Err(Error::Stiffness { t: state.t.to_f64_lossy(), dt: dt.to_f64_lossy() });
        }
        let attempt = rk4_step(cal, grid, &state.phi, &state.eval.phidot, dt, eps)
            .and_then(|phi| rhs_eval(cal, grid, &phi, eps).map(|e| (phi, e)));
        match attempt {
            Ok((phi, eval)) => return Ok((FlowState { t: state.t + dt, phi, eval }, dt, rejected)),
            Err(Error::ConeExit { .. }) | Err(Error::SingularPhase { .. }) => {
                dt *= T::lit(0.5);
                rejected += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowSample<T> {
    pub t: T,
    pub dt: T,
    pub j_eps: T,
    pub im_z: T,
    pub min_q: T,
    pub max_q: T,
    pub min_f: T,
    pub max_f: T,
    pub osc_phidot: T,
    pub sup_abs_phi: T,
    pub sup_abs_phidot: T,
    pub min_lambda: T,
    /// `int phi_t^2 Im(alpha_phi + i omega)^n`
    pub dissipation: T,
    /// `int phi_t Im(alpha_phi + i omega)^n`
    pub weighted_mean_phidot: T,
    /// `J_eps(current) - J_eps(previous sample)` integrated along the segment
    /// between the two samples.
    pub j_eps_increment: T,
}

#[derive(Clone, Debug)]
pub struct FlowTrace<T: Scalar> {
    pub samples: Vec<FlowSample<T>>,
    pub snapshots: Vec<(T, Potential<T>)>,
    pub converged: bool,
    pub steps: usize,
    pub rejected: usize,
    pub final_phi: Potential<T>,
    /// Set on convergence: the stationary potential.
    pub stationary: Option<Potential<T>>,
}

impl<T: Scalar> FlowTrace<T> {
    pub fn initial_f_range(&self) -> (T, T) {
        (self.samples[0].min_f, self.samples[0].max_f)
    }

    /// Least-squares slope of `ln osc phi_t` against `t` over the last half
    /// of the samples; `None` with fewer than three usable points.
    pub fn decay_rate(&self) -> Option<T> {
        let half = self.samples.len() / 2;
        let pts: Vec<(T, T)> = self.samples[half..]
            .iter()
            .filter(|s| s.osc_phidot > T::zero())
            .map(|s| (s.t, s.osc_phidot.ln()))
            .collect();
        least_squares_slope(&pts)
    }
}

pub fn least_squares_slope<T: Scalar>(pts: &[(T, T)]) -> Option<T> {
    if pts.len() < 3 {
        return None;
    }
    let m = T::from_usize_exact(pts.len());
    let mx = pts.iter().map(|p| p.0).sum::<T>() / m;
    let my = pts.iter().map(|p| p.1).sum::<T>() / m;
    let sxy: T = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: T = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx > T::zero() {
        Some(sxy / sxx)
    } else {
        None
    }
}

fn choose_dt<T: Scalar>(policy: DtPolicy<T>, grid: &TorusGrid<T>, eval: &RhsEval<T>) -> T {
    match policy {
        DtPolicy::Fixed(dt) => dt,
        DtPolicy::Cfl(c) => {
            let h = grid.spacing();
            c * h * h / eval.max_grad.max(T::epsilon())
        }
    }
}

fn sample<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    state: &FlowState<T>,
    dt: T,
    eps: T,
    nodes: usize,
    previous: Option<&Potential<T>>,
) -> Result<FlowSample<T>> {
    let zero = Potential::zeros(grid);
    let [j_eps, im_z] = segment_functionals(cal, grid, &zero, &state.phi, nodes, |pd| {
        [twisted_density(cal, eps, pd), pd.log_modulus.exp() * pd.q.sin()]
    })?;
    let j_eps_increment = match previous {
        Some(prev) => segment_functionals(cal, grid, prev, &state.phi, nodes, |pd| [twisted_density(cal, eps, pd)])?[0],
        None => T::zero(),
    };
    let e = &state.eval;
    let (min_q, max_q) = min_max(&e.q);
    let (min_f, max_f) = min_max(&e.f);
    let (lo, hi) = min_max(&e.phidot);
    let d2: Vec<T> = e.phidot.iter().zip(&e.im).map(|(&d, &im)| d * d * im).collect();
    let d1: Vec<T> = e.phidot.iter().zip(&e.im).map(|(&d, &im)| d * im).collect();
    Ok(FlowSample {
        t: state.t,
        dt,
        j_eps,
        im_z,
        min_q,
        max_q,
        min_f,
        max_f,
        osc_phidot: hi - lo,
        sup_abs_phi: state.phi.sup_abs(),
        sup_abs_phidot: max_abs(&e.phidot),
        min_lambda: e.min_lambda,
        dissipation: integrate(&d2, grid),
        weighted_mean_phidot: integrate(&d1, grid),
        j_eps_increment,
    })
}

/// Integrates from `phi0` until `t_end` or until the residual drops below `tol`.
pub fn run<T: Scalar>(
    cal: &CalibrationData<T>,
    grid: &TorusGrid<T>,
    phi0: &Potential<T>,
    cfg: &FlowConfig<T>,
) -> Result<FlowTrace<T>> {
    cfg.validate()?;
    let eps = cfg.eps;
    let mut state = FlowState::new(cal, grid, phi0.clone(), eps)?;
    let mut trace = FlowTrace {
        samples: Vec::new(),
        snapshots: Vec::new(),
        converged: false,
        steps: 0,
        rejected: 0,
        final_phi: phi0.clone(),
        stationary: None,
    };
    let mut dt_last = choose_dt(cfg.dt, grid, &state.eval);
    trace.samples.push(sample(cal, grid, &state, dt_last, eps, cfg.nodes, None)?);
    let mut last_sampled = state.phi.clone();
    let mut next_snap = 0;
    while next_snap < cfg.snapshot_times.len() && cfg.snapshot_times[next_snap] <= T::zero() {
        trace.snapshots.push((T::zero(), state.phi.clone()));
        next_snap += 1;
    }
    loop {
        if max_abs(&state.eval.phidot) < cfg.tol {
            trace.converged = true;
            break;
        }
        if state.t >= cfg.t_end || trace.steps >= cfg.max_steps {
            break;
        }
        let mut dt = choose_dt(cfg.dt, grid, &state.eval);
        let mut stop = cfg.t_end;
        if next_snap < cfg.snapshot_times.len() {
            stop = stop.min(cfg.snapshot_times[next_snap]);
        }
        let mut landing = false;
        if state.t + dt >= stop {
            dt = stop - state.t;
            landing = true;
        }
        let (next, taken, rejected) = step(cal, grid, &state, dt, eps)?;
        trace.rejected += rejected;
        trace.steps += 1;
        dt_last = taken;
        state = next;
        if landing && rejected == 0 {
            // land exactly
            state.t = stop;
        }
        let hit_snapshot = next_snap < cfg.snapshot_times.len() && state.t >= cfg.snapshot_times[next_snap];
        if hit_snapshot {
            trace.snapshots.push((state.t, state.phi.clone()));
            next_snap += 1;
        }
        let done = max_abs(&state.eval.phidot) < cfg.tol || state.t >= cfg.t_end;
        if trace.steps % cfg.monitor_every == 0 || done || hit_snapshot {
            trace.samples.push(sample(cal, grid, &state, dt_last, eps, cfg.nodes, Some(&last_sampled))?);
            last_sampled = state.phi.clone();
        }
    }
    if trace.converged {
        trace.stationary = Some(state.phi.clone());
        let last = trace.samples.last().map(|s| s.t);
        if last != Some(state.t) {
            trace.samples.push(sample(cal, grid, &state, dt_last, eps, cfg.nodes, Some(&last_sampled))?);
        }
    }
    trace.final_phi = state.phi;
    Ok(trace)
}
