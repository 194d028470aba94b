//! The twelve acceptance criteria, one pass/fail line each.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::time::Instant;

use dhym::eigenops::{f_eps, grad_f_eps, hess_f_eps, midpoint_gap, sample_cone, ConeSpec, PhaseVector};
use dhym::flow::{run, FlowConfig, FlowTrace};
use dhym::functionals::{compute_theta0, j, j0, CalibrationData};
use dhym::geodesic::{dp_lower_bound, estimate_dp, solve_eps_geodesic, GeodesicConfig, DEFAULT_EPS_SCHEDULE};
use dhym::linalg::symmetric_eigenvalues;
use dhym::regularize::{phase_after_mollify_check, regularized_max, MollifierSpec};
use dhym::torus::{Potential, ReferenceForm, TorusGrid, TrigPolynomial, TrigTerm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn setup(n: usize, points: usize, lam: f64) -> (TorusGrid<f64>, CalibrationData<f64>) {
    let grid = TorusGrid::standard(n, points).unwrap();
    let alpha = ReferenceForm::diagonal(&vec![lam; n]).field(&grid).unwrap();
    let cal = compute_theta0(&alpha, &grid).unwrap();
    (grid, cal)
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn heat_modes() -> TrigPolynomial {
    TrigPolynomial::new(vec![
        TrigTerm { amplitude: 0.3, wave: vec![1, 0], phase: 0.0 },
        TrigTerm { amplitude: 0.2, wave: vec![0, 1], phase: -FRAC_PI_2 },
        TrigTerm { amplitude: 0.1, wave: vec![1, 1], phase: 0.0 },
    ])
}

/// Worst excursion of the running `[min F, max F]` outside the initial range.
fn f_range_excursion(trace: &FlowTrace<f64>) -> f64 {
    let (lo, hi) = trace.initial_f_range();
    trace.samples.iter().fold(0.0f64, |w, s| w.max(lo - s.min_f).max(s.max_f - hi))
}

fn heat_oracle(excursions: &mut Vec<f64>) -> Outcome {
    let start = Instant::now();
    let (grid, cal) = setup(1, 128, 1.0);
    if (cal.theta0 - FRAC_PI_4).abs() > 1e-14 {
        return Err(format!("theta0 = {}", cal.theta0));
    }
    let phi0 = heat_modes().sample(&grid).unwrap();
    let cfg = FlowConfig { eps: 0.1, t_end: 0.5, tol: 0.0, monitor_every: 200, nodes: 2, ..FlowConfig::default() };
    let trace = run(&cal, &grid, &phi0, &cfg).map_err(|e| e.to_string())?;
    let mut exact = heat_modes();
    for term in &mut exact.terms {
        let k2: f64 = term.wave.iter().map(|&k| (k * k) as f64).sum();
        term.amplitude *= (-0.25 * k2 * 0.5).exp();
    }
    let exact = exact.sample(&grid).unwrap();
    let rel = trace.final_phi.sub(&exact).sup_abs() / exact.sup_abs();
    let secs = start.elapsed().as_secs_f64();
    excursions.push(f_range_excursion(&trace));
    verdict(rel <= 1e-4 && secs < 10.0, format!("relative error {rel:.2e}, {secs:.1} s"))
}

fn fixed_point(excursions: &mut Vec<f64>) -> Outcome {
    let (grid, cal) = setup(2, 8, 3.0);
    let mut worst = 0.0f64;
    for eps in [1e-1, 1e-2] {
        let cfg = FlowConfig { eps, t_end: 1.0, tol: 0.0, monitor_every: 1, nodes: 2, ..FlowConfig::default() };
        let trace = run(&cal, &grid, &Potential::zeros(&grid), &cfg).map_err(|e| e.to_string())?;
        if (trace.samples.last().unwrap().t - 1.0).abs() > 1e-12 {
            return Err("run stopped before t = 1".into());
        }
        worst = trace.samples.iter().fold(worst, |w, s| w.max(s.sup_abs_phi));
        excursions.push(f_range_excursion(&trace));
    }
    verdict(worst <= 1e-12, format!("sup |phi| = {worst:.1e} up to t = 1"))
}

fn cone() -> ConeSpec<f64> {
    let big = 3.0 * PI / 4.0;
    ConeSpec::new(big - 0.2, big).unwrap()
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let h = 1e-5;
    for n in [2, 4, 6] {
        for eps in [0.0, 1e-3] {
            let mut count = 0;
            while count < 1000 {
                let Some(l) = sample_cone(&mut rng, n, &cone(), 1e-2) else { continue };
                let g = grad_f_eps(&l, eps).unwrap();
                let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for i in 0..n {
                    let mut up = l.entries().to_vec();
                    let mut dn = up.clone();
                    up[i] += h;
                    dn[i] -= h;
                    let fd = (f_eps(&PhaseVector::new(&up).unwrap(), eps).unwrap()
                        - f_eps(&PhaseVector::new(&dn).unwrap(), eps).unwrap())
                        / (2.0 * h);
                    worst = worst.max((g[i] - fd).abs() / scale);
                }
                count += 1;
            }
        }
    }
    verdict(worst <= 1e-6, format!("max relative error {worst:.2e} over 6000 samples"))
}

fn concavity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut violations, mut worst_gap, mut worst_eig, mut pairs) = (0, f64::INFINITY, f64::NEG_INFINITY, 0);
    while pairs < 10_000 {
        let (Some(a), Some(b)) = (sample_cone(&mut rng, 4, &cone(), 1e-3), sample_cone(&mut rng, 4, &cone(), 1e-3))
        else {
            continue;
        };
        let gap = midpoint_gap(&a, &b, 1e-3, |l, e| f_eps(&PhaseVector::new(l)?, e)).unwrap();
        if gap < -1e-10 {
            violations += 1;
        }
        worst_gap = worst_gap.min(gap);
        worst_eig = worst_eig.max(symmetric_eigenvalues(&hess_f_eps(&a, 1e-3).unwrap(), 4)[0]);
        pairs += 1;
    }
    verdict(
        violations == 0 && worst_eig <= 1e-10,
        format!("{violations} violations, worst gap {worst_gap:.1e}, max hessian eigenvalue {worst_eig:.1e}"),
    )
}

fn bump_run() -> Result<FlowTrace<f64>, String> {
    let (grid, cal) = setup(2, 8, 3.0);
    let phi0 = Potential::bump(&grid, &[1.0, 2.0, 3.0, 0.5], 1.0, 0.3);
    let cfg = FlowConfig { eps: 0.01, t_end: 400.0, tol: 1e-8, nodes: 4, ..FlowConfig::default() };
    run(&cal, &grid, &phi0, &cfg).map_err(|e| e.to_string())
}

fn im_z_conservation(trace: &FlowTrace<f64>) -> Outcome {
    let z0 = trace.samples[0].im_z;
    let drift = trace.samples.iter().fold(0.0f64, |w, s| w.max((s.im_z - z0).abs()));
    verdict(
        trace.converged && drift <= 1e-6 * (1.0 + z0.abs()),
        format!("drift {drift:.1e} against Im Z(0) = {z0:.4}, converged = {}", trace.converged),
    )
}

fn dissipation(trace: &FlowTrace<f64>) -> Outcome {
    let mut worst = 0.0f64;
    for w in trace.samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let rate = b.j_eps_increment / (b.t - a.t);
        let diss = -0.5 * (a.dissipation + b.dissipation);
        worst = worst.max((rate - diss).abs() / diss.abs());
    }
    verdict(worst <= 0.05, format!("worst relative mismatch {worst:.1e} over {} steps", trace.samples.len() - 1))
}

fn max_principle(excursions: &[f64]) -> Outcome {
    let worst = excursions.iter().fold(0.0f64, |a, &b| a.max(b));
    verdict(worst <= 1e-8, format!("largest excursion {worst:.1e} over {} runs", excursions.len()))
}

fn exact_geodesic() -> Outcome {
    let (grid, cal) = setup(1, 16, 1.5);
    let c = 0.3;
    let weight = grid.volume() * (1.0f64 + 1.5 * 1.5).sqrt();
    let (zero, top) = (Potential::zeros(&grid), Potential::constant(&grid, c));
    let mut worst = 0.0f64;
    let mut spread = 0.0f64;
    for p in [1.0, 2.0] {
        let want = c * weight.powf(1.0 / p);
        let mut lens = Vec::new();
        for eps in DEFAULT_EPS_SCHEDULE {
            let cfg = GeodesicConfig { eps, p, ..GeodesicConfig::default() };
            let (_, rep) = solve_eps_geodesic(&cal, &grid, &zero, &top, &cfg).map_err(|e| e.to_string())?;
            worst = worst.max((rep.length - want).abs() / want);
            lens.push(rep.length);
        }
        let (lo, hi) = lens.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
        spread = spread.max((hi - lo) / hi);
    }
    verdict(worst <= 0.01 && spread <= 1e-3, format!("relative error {worst:.1e}, spread across eps {spread:.1e}"))
}

fn geodesic_estimates() -> Outcome {
    let (grid, cal) = setup(1, 16, 1.5);
    let phi0 = Potential::zeros(&grid);
    let phi1 = Potential::from_fn(&grid, |x| 0.3 * x[0].cos());
    let mut q = Vec::new();
    let mut s = Vec::new();
    let schedule = [0.4, 0.2, 0.1, 0.05];
    for eps in schedule {
        let cfg = GeodesicConfig { eps, ..GeodesicConfig::default() };
        let (_, rep) = solve_eps_geodesic(&cal, &grid, &phi0, &phi1, &cfg).map_err(|e| e.to_string())?;
        q.push(-rep.min_phi_tt.min(0.0));
        s.push(rep.profile.smoothed_spread());
    }
    let rq: Vec<f64> = q.windows(2).map(|w| w[0] / w[1]).collect();
    let rs: Vec<f64> = s.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = rq.iter().chain(&rs).all(|r| (2.0..=8.0).contains(r));
    let c_fit: Vec<f64> = q.iter().zip(schedule).map(|(v, e)| v / (e * e)).collect();
    verdict(ok, format!("-min phi_tt halving ratios {rq:.3?}, spread ratios {rs:.3?}, C = {c_fit:.3?}"))
}

fn dp_lower_bounds() -> Outcome {
    let (grid, cal) = setup(1, 16, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = f64::INFINITY;
    for _ in 0..10 {
        let mut bump = || {
            let c: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            Potential::bump(&grid, &c, 3.0, 0.3)
        };
        let (a, b) = (bump(), bump());
        for p in [1.0, 2.0] {
            let cfg = GeodesicConfig { p, ..GeodesicConfig::default() };
            let est = estimate_dp(&cal, &grid, &a, &b, &DEFAULT_EPS_SCHEDULE, &cfg).map_err(|e| e.to_string())?;
            let lb = dp_lower_bound(&cal, &grid, &a, &b, p).unwrap();
            worst = worst.min(est.extrapolated.powf(p) / lb);
        }
    }
    verdict(worst >= 0.99, format!("smallest d_p^p / endpoint integral = {worst:.3} over 10 pairs, p in {{1, 2}}"))
}

fn regularization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut sandwich, mut locality) = (0.0f64, 0usize);
    for _ in 0..10_000 {
        let m = rng.gen_range(1..=6);
        let eta = rng.gen_range(0.01..1.0);
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0) * eta).collect();
        let t = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let r = regularized_max(&v, eta).unwrap();
        sandwich = sandwich.max(t - r).max(r - t - eta);
        let mut padded = v.clone();
        padded.push(t - 2.0 * eta - rng.gen_range(1e-9..1.0));
        if regularized_max(&padded, eta).unwrap().to_bits() != r.to_bits() {
            locality += 1;
        }
    }
    let (grid, cal) = setup(2, 8, 3.0);
    let spec = MollifierSpec::new(&grid, 2.5).unwrap();
    let mut slack = f64::INFINITY;
    for _ in 0..10 {
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let u = Potential::bump(&grid, &c, 1.0, rng.gen_range(-0.5..0.5));
        slack = slack.min(phase_after_mollify_check(&cal, &grid, &u, &spec, 1e-10).unwrap().min_psh_slack);
    }
    verdict(
        sandwich <= 1e-14 && locality == 0 && slack >= -1e-10,
        format!("sandwich slack {sandwich:.1e}, {locality} locality mismatches, psh slack {slack:.1e}"),
    )
}

fn functional_identity() -> Outcome {
    let (grid, cal) = setup(2, 8, 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let c: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let phi = Potential::bump(&grid, &c, rng.gen_range(0.5..1.5), rng.gen_range(-0.3..0.3));
        let jv = j(&cal, &grid, &phi, 16).map_err(|e| e.to_string())?;
        let j0v = j0(&cal, &grid, &phi, 16).map_err(|e| e.to_string())?;
        worst = worst.max((jv - cal.theta0.sin() * j0v).abs() / (1.0 + jv.abs()));
    }
    verdict(worst <= 1e-8, format!("worst relative gap {worst:.1e} on 20 bumps"))
}

#[test]
fn acceptance_criteria() {
    let start = Instant::now();
    let mut excursions = Vec::new();
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "heat-equation oracle", heat_oracle(&mut excursions)),
        (2, "fixed point", fixed_point(&mut excursions)),
        (3, "gradient check", gradient_check()),
        (4, "concavity", concavity()),
    ];
    match bump_run() {
        Ok(trace) => {
            excursions.push(f_range_excursion(&trace));
            results.push((5, "Im Z conservation", im_z_conservation(&trace)));
            results.push((6, "dissipation identity", dissipation(&trace)));
        }
        Err(e) => {
            results.push((5, "Im Z conservation", Err(e.clone())));
            results.push((6, "dissipation identity", Err(e)));
        }
    }
    results.push((7, "maximum principle", max_principle(&excursions)));
    results.push((8, "exact geodesic", exact_geodesic()));
    results.push((9, "geodesic estimates", geodesic_estimates()));
    results.push((10, "d_p lower bound", dp_lower_bounds()));
    results.push((11, "regularized max and mollification", regularization()));
    results.push((12, "functional identity", functional_identity()));
    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed in {:.1} s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    assert_eq!(failed, 0);
}
