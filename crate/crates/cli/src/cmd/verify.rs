use std::f64::consts::PI;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use dhym::eigenops::{
    check_perturbation_lemmas, f_eps, grad_f_eps, hess_f_eps, midpoint_gap, product_re_im, product_re_im_cartesian,
    sample_cone, ConeSpec, PerturbationConfig, PhaseVector,
};
use dhym::flow::{run as run_flow, FlowConfig};
use dhym::functionals::{compute_theta0, im_z, j, j0, j_eps, CalibrationData};
use dhym::geodesic::{dp_lower_bound, estimate_dp, solve_eps_geodesic, GeodesicConfig, DEFAULT_EPS_SCHEDULE};
use dhym::linalg::symmetric_eigenvalues;
use dhym::regularize::{phase_after_mollify_check, regularized_max, MollifierSpec};
use dhym::torus::{integrate, volume_ratios, Potential, ReferenceForm, TorusGrid, TrigPolynomial, TrigTerm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::output::{resolve_dir, to_json, write_json};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Eigenops,
    Flow,
    Geodesic,
    Functionals,
    Regularize,
    All,
}

impl Suite {
    fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Eigenops, Suite::Flow, Suite::Geodesic, Suite::Functionals, Suite::Regularize],
            s => vec![s],
        }
    }

    fn name(self) -> &'static str {
        match self {
            Suite::Eigenops => "eigenops",
            Suite::Flow => "flow",
            Suite::Geodesic => "geodesic",
            Suite::Functionals => "functionals",
            Suite::Regularize => "regularize",
            Suite::All => "all",
        }
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Also write `verify.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One property with its measured constant and the bound it must meet.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    /// `<=`, `>=`, `<` or `>`.
    pub relation: &'static str,
    pub threshold: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub schema: &'static str,
    pub seed: u64,
    pub suites: Vec<&'static str>,
    pub passed: bool,
    pub checks: usize,
    pub violations: usize,
    pub results: Vec<Check>,
}

struct Recorder {
    suite: &'static str,
    out: Vec<Check>,
}

impl Recorder {
    fn new(suite: Suite) -> Self {
        Self { suite: suite.name(), out: Vec::new() }
    }

    fn push(&mut self, name: &'static str, measured: f64, relation: &'static str, threshold: f64, samples: usize) {
        let passed = match relation {
            "<=" => measured <= threshold,
            ">=" => measured >= threshold,
            "<" => measured < threshold,
            ">" => measured > threshold,
            _ => false,
        };
        self.out.push(Check { suite: self.suite, name, passed, measured, relation, threshold, samples, error: None });
    }

    /// Record a numerical failure as a failed check.
    fn fail(&mut self, name: &'static str, e: dhym::Error) {
        self.out.push(Check {
            suite: self.suite,
            name,
            passed: false,
            measured: f64::NAN,
            relation: "",
            threshold: f64::NAN,
            samples: 0,
            error: Some(e.to_string()),
        });
    }

    fn guard(&mut self, name: &'static str, f: impl FnOnce(&mut Self) -> dhym::Result<()>) {
        if let Err(e) = f(self) {
            self.fail(name, e);
        }
    }
}

fn setup(n: usize, points: usize, diag: f64) -> dhym::Result<(TorusGrid<f64>, CalibrationData<f64>)> {
    let grid = TorusGrid::standard(n, points)?;
    let alpha = ReferenceForm::diagonal(&vec![diag; n]).field(&grid)?;
    let cal = compute_theta0(&alpha, &grid)?;
    Ok((grid, cal))
}

fn random_bump(rng: &mut ChaCha8Rng, grid: &TorusGrid<f64>, max_amp: f64) -> Potential<f64> {
    let center: Vec<f64> = (0..grid.axes()).map(|_| rng.gen_range(0.0..grid.period())).collect();
    Potential::bump(grid, &center, rng.gen_range(0.5..1.5), rng.gen_range(-max_amp..max_amp))
}

/// `Gamma_{Theta0 - 0.2, Theta0}` with `Theta0 = 3 pi / 4`.
fn test_cone() -> ConeSpec<f64> {
    let big = 0.75 * PI;
    ConeSpec { theta: big - 0.2, big_theta: big }
}

fn eigenops_suite(seed: u64) -> Vec<Check> {
    let mut r = Recorder::new(Suite::Eigenops);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cone = test_cone();
    r.guard("gradient_vs_central_differences", |r| {
        let (h, mut worst, mut min_grad, mut count) = (1e-5, 0.0f64, f64::INFINITY, 0);
        for n in [2, 4, 6] {
            for eps in [0.0, 1e-3] {
                let mut k = 0;
                while k < 200 {
                    let Some(l) = sample_cone(&mut rng, n, &cone, 1e-2) else { continue };
                    let g = grad_f_eps(&l, eps)?;
                    let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    for i in 0..n {
                        let (mut up, mut dn) = (l.entries().to_vec(), l.entries().to_vec());
                        up[i] += h;
                        dn[i] -= h;
                        let fd =
                            (f_eps(&PhaseVector::new(&up)?, eps)? - f_eps(&PhaseVector::new(&dn)?, eps)?) / (2.0 * h);
                        worst = worst.max((g[i] - fd).abs() / scale);
                        min_grad = min_grad.min(g[i]);
                    }
                    k += 1;
                }
                count += k;
            }
        }
        r.push("gradient_vs_central_differences", worst, "<=", 1e-6, count);
        r.push("gradient_positive", min_grad, ">", 0.0, count);
        Ok(())
    });
    r.guard("midpoint_concavity", |r| {
        let (mut worst_gap, mut worst_eig, mut pairs) = (f64::INFINITY, f64::NEG_INFINITY, 0);
        while pairs < 2000 {
            let (Some(a), Some(b)) = (sample_cone(&mut rng, 4, &cone, 1e-3), sample_cone(&mut rng, 4, &cone, 1e-3))
            else {
                continue;
            };
            let Some(gap) = midpoint_gap(&a, &b, 1e-3, |l, e| f_eps(&PhaseVector::new(l)?, e)) else { continue };
            worst_gap = worst_gap.min(gap);
            worst_eig = worst_eig.max(symmetric_eigenvalues(&hess_f_eps(&a, 1e-3)?, 4)[0]);
            pairs += 1;
        }
        r.push("midpoint_concavity", worst_gap, ">=", -1e-10, pairs);
        r.push("hessian_negative_semidefinite", worst_eig, "<=", 1e-10, pairs);
        Ok(())
    });
    let rep = check_perturbation_lemmas(&mut rng, &PerturbationConfig { samples: 2000, seed, ..Default::default() });
    r.push("perturbation_lemmas", rep.violations() as f64, "<=", 0.0, rep.samples);
    r.guard("polar_product", |r| {
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let n = rng.gen_range(1..=8);
            let lam: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let l = PhaseVector::new(&lam)?;
            let (a, b) = (product_re_im(&l), product_re_im_cartesian(&l));
            let scale = a.0.hypot(a.1);
            worst = worst.max((a.0 - b.0).hypot(a.1 - b.1) / scale);
        }
        r.push("polar_product", worst, "<=", 1e-12, 1000);
        Ok(())
    });
    r.out
}

fn heat_modes() -> TrigPolynomial {
    TrigPolynomial::new(vec![
        TrigTerm { amplitude: 0.3, wave: vec![1, 0], phase: 0.0 },
        TrigTerm { amplitude: 0.2, wave: vec![0, 1], phase: -0.5 * PI },
        TrigTerm { amplitude: 0.1, wave: vec![2, 1], phase: 0.3 },
    ])
}

fn flow_suite() -> Vec<Check> {
    let mut r = Recorder::new(Suite::Flow);
    r.guard("fixed_point", |r| {
        let (grid, cal) = setup(2, 8, 3.0)?;
        let mut worst = 0.0f64;
        for eps in [0.1, 0.01] {
            let cfg = FlowConfig { eps, t_end: 1.0, tol: 0.0, monitor_every: 50, nodes: 4, ..FlowConfig::default() };
            let trace = run_flow(&cal, &grid, &Potential::zeros(&grid), &cfg)?;
            worst = trace.samples.iter().fold(worst, |m, s| m.max(s.sup_abs_phi));
        }
        r.push("fixed_point", worst, "<=", 1e-12, 2);
        Ok(())
    });
    r.guard("discrete_heat_propagator", |r| {
        let (grid, cal) = setup(1, 32, 1.0)?;
        let modes = heat_modes();
        let phi0 = modes.sample(&grid)?;
        let t = 0.5;
        let cfg = FlowConfig { eps: 0.1, t_end: t, tol: 0.0, monitor_every: 1000, nodes: 2, ..FlowConfig::default() };
        let trace = run_flow(&cal, &grid, &phi0, &cfg)?;
        // each Fourier mode of the grid Laplacian decays exactly
        let h = grid.spacing();
        let mut exact = modes;
        for term in &mut exact.terms {
            let mu: f64 = term.wave.iter().map(|&k| (2.0 * (k as f64 * h / 2.0).sin() / h).powi(2)).sum();
            term.amplitude *= (-0.25 * mu * t).exp();
        }
        let want = exact.sample(&grid)?;
        let rel = trace.final_phi.sub(&want).sup_abs() / want.sup_abs();
        r.push("discrete_heat_propagator", rel, "<=", 1e-8, trace.steps);
        Ok(())
    });
    r.guard("bump_run", |r| {
        let (grid, cal) = setup(2, 8, 3.0)?;
        let phi0 = Potential::bump(&grid, &[1.0, 2.0, 3.0, 0.5], 1.0, 0.3);
        let cfg = FlowConfig { eps: 0.01, t_end: 400.0, tol: 1e-6, nodes: 4, ..FlowConfig::default() };
        let trace = run_flow(&cal, &grid, &phi0, &cfg)?;
        let s = &trace.samples;
        let z0 = s[0].im_z;
        let (f_lo, f_hi) = trace.initial_f_range();
        let (mut drift, mut excursion, mut increment, mut mismatch) = (0.0f64, 0.0f64, f64::NEG_INFINITY, 0.0f64);
        for w in s.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            drift = drift.max((b.im_z - z0).abs());
            excursion = excursion.max(f_lo - b.min_f).max(b.max_f - f_hi);
            increment = increment.max(b.j_eps_increment);
            let diss = -0.5 * (a.dissipation + b.dissipation);
            mismatch = mismatch.max((b.j_eps_increment / (b.t - a.t) - diss).abs() / diss.abs());
        }
        r.push("converged", if trace.converged { 1.0 } else { 0.0 }, ">=", 1.0, trace.steps);
        r.push("im_z_conservation", drift / (1.0 + z0.abs()), "<=", 1e-6, s.len());
        r.push("j_eps_decreasing", increment, "<", 0.0, s.len());
        r.push("dissipation_identity", mismatch, "<=", 0.05, s.len());
        r.push("maximum_principle", excursion, "<=", 1e-8, s.len());
        r.push("decay_rate", trace.decay_rate().unwrap_or(f64::NAN), "<", 0.0, s.len());
        Ok(())
    });
    r.out
}

fn geodesic_suite(seed: u64) -> Vec<Check> {
    let mut r = Recorder::new(Suite::Geodesic);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    r.guard("exact_constant_geodesic", |r| {
        let (grid, cal) = setup(1, 16, 1.5)?;
        let c = 0.3;
        let weight = grid.volume() * (1.0f64 + 1.5 * 1.5).sqrt();
        let (zero, top) = (Potential::zeros(&grid), Potential::constant(&grid, c));
        let mut worst = 0.0f64;
        for p in [1.0, 2.0] {
            for eps in DEFAULT_EPS_SCHEDULE {
                let cfg = GeodesicConfig { eps, p, slices: 16, ..GeodesicConfig::default() };
                let (_, rep) = solve_eps_geodesic(&cal, &grid, &zero, &top, &cfg)?;
                let want = c * weight.powf(1.0 / p);
                worst = worst.max((rep.length - want).abs() / want);
            }
        }
        r.push("exact_constant_geodesic", worst, "<=", 1e-2, 6);
        Ok(())
    });
    r.guard("dp_lower_bound", |r| {
        let (grid, cal) = setup(1, 16, 1.5)?;
        let mut worst = f64::INFINITY;
        let mut asym = 0.0f64;
        for _ in 0..2 {
            let (a, b) = (random_bump(&mut rng, &grid, 0.3), random_bump(&mut rng, &grid, 0.3));
            for p in [1.0, 2.0] {
                let cfg = GeodesicConfig { p, ..GeodesicConfig::default() };
                let est = estimate_dp(&cal, &grid, &a, &b, &DEFAULT_EPS_SCHEDULE, &cfg)?;
                let lb = dp_lower_bound(&cal, &grid, &a, &b, p)?;
                worst = worst.min(est.extrapolated.powf(p) / lb);
            }
            let cfg = GeodesicConfig::default();
            let (_, fwd) = solve_eps_geodesic(&cal, &grid, &a, &b, &cfg)?;
            let (_, bwd) = solve_eps_geodesic(&cal, &grid, &b, &a, &cfg)?;
            asym = asym.max((fwd.length - bwd.length).abs() / fwd.length);
        }
        r.push("dp_lower_bound", worst, ">=", 0.99, 4);
        r.push("reversal_symmetry", asym, "<=", 1e-6, 2);
        Ok(())
    });
    r.out
}

fn functionals_suite(seed: u64) -> Vec<Check> {
    let mut r = Recorder::new(Suite::Functionals);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    r.guard("j_sin_theta0_j0", |r| {
        let (grid, cal) = setup(2, 8, 3.0)?;
        let (mut ident, mut shift, mut refine) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..10 {
            let phi = random_bump(&mut rng, &grid, 0.3);
            let jv = j(&cal, &grid, &phi, 16)?;
            ident = ident.max((jv - cal.theta0.sin() * j0(&cal, &grid, &phi, 16)?).abs() / (1.0 + jv.abs()));
            let base = j_eps(&cal, &grid, &phi, 0.01, 16)?;
            shift = shift.max((j_eps(&cal, &grid, &phi.add_constant(0.7), 0.01, 16)? - base).abs());
            refine = refine.max((j_eps(&cal, &grid, &phi, 0.01, 8)? - base).abs());
        }
        r.push("j_sin_theta0_j0", ident, "<=", 1e-8, 10);
        r.push("constant_shift_invariance", shift, "<=", 1e-10, 10);
        r.push("quadrature_refinement", refine, "<=", 1e-8, 10);
        let im0 = integrate(&volume_ratios(&cal.alpha).1, &grid);
        let c = 0.4;
        let v = im_z(&cal, &grid, &Potential::constant(&grid, c), 16)?;
        r.push("im_z_of_constant", (v + c * im0).abs() / im0, "<=", 1e-9, 1);
        Ok(())
    });
    r.out
}

fn regularize_suite(seed: u64) -> Vec<Check> {
    let mut r = Recorder::new(Suite::Regularize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    r.guard("regularized_max", |r| {
        let (mut sandwich, mut locality, tuples) = (0.0f64, 0usize, 2000);
        for _ in 0..tuples {
            let m = rng.gen_range(1..=6);
            let eta = rng.gen_range(0.01..1.0);
            let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0) * eta).collect();
            let top = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let m_eta = regularized_max(&v, eta)?;
            sandwich = sandwich.max(top - m_eta).max(m_eta - top - eta);
            let mut padded = v.clone();
            padded.push(top - 2.0 * eta - rng.gen_range(1e-9..1.0));
            if regularized_max(&padded, eta)?.to_bits() != m_eta.to_bits() {
                locality += 1;
            }
        }
        r.push("sandwich", sandwich, "<=", 1e-14, tuples);
        r.push("locality", locality as f64, "<=", 0.0, tuples);
        Ok(())
    });
    r.guard("mollification", |r| {
        let (grid, cal) = setup(2, 8, 3.0)?;
        let spec = MollifierSpec::new(&grid, 2.5)?;
        let (mut slack, mut excess) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..3 {
            let u = random_bump(&mut rng, &grid, 0.5);
            let rep = phase_after_mollify_check(&cal, &grid, &u, &spec, 1e-10)?;
            slack = slack.min(rep.min_psh_slack);
            excess = excess.max(rep.max_phase_excess);
        }
        r.push("psh_preservation", slack, ">=", -1e-10, 3);
        r.push("phase_below_local_max", excess, "<=", 1e-10, 3);
        Ok(())
    });
    r.out
}

pub fn run(args: &VerifyArgs) -> Result<(String, VerifyReport)> {
    let suites = args.suite.expand();
    let mut results = Vec::new();
    for s in &suites {
        results.extend(match s {
            Suite::Eigenops => eigenops_suite(args.seed),
            Suite::Flow => flow_suite(),
            Suite::Geodesic => geodesic_suite(args.seed),
            Suite::Functionals => functionals_suite(args.seed),
            Suite::Regularize => regularize_suite(args.seed),
            Suite::All => unreachable!("expanded above"),
        });
    }
    let violations = results.iter().filter(|c| !c.passed).count();
    let report = VerifyReport {
        schema: "dhym.verify/1",
        seed: args.seed,
        suites: suites.iter().map(|s| s.name()).collect(),
        passed: violations == 0,
        checks: results.len(),
        violations,
        results,
    };
    if let Some(out) = &args.out {
        let dir = resolve_dir(Some(out), None)?;
        write_json(&dir.join("verify.json"), &report)?;
    }
    Ok((to_json(&report), report))
}
