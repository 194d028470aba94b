use dhym::functionals::{compute_theta0, CalibrationData};
use dhym::geodesic::{
    dp_lower_bound, endpoint_energy, energy_profile, equation_check, estimate_dp, length_p, report, solve_eps_geodesic,
    GeodesicConfig, PathPotential, DEFAULT_EPS_SCHEDULE,
};
use dhym::torus::{HermitianField, Potential, TorusGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(n: usize, points: usize, lam: f64) -> (TorusGrid<f64>, CalibrationData<f64>) {
    let grid = TorusGrid::standard(n, points).unwrap();
    let alpha = HermitianField::diagonal(&grid, &vec![lam; n]).unwrap();
    let cal = compute_theta0(&alpha, &grid).unwrap();
    (grid, cal)
}

fn random_bump(rng: &mut ChaCha8Rng, grid: &TorusGrid<f64>) -> Potential<f64> {
    let center: Vec<f64> = (0..grid.axes()).map(|_| rng.gen_range(0.0..grid.period())).collect();
    Potential::bump(grid, &center, 3.0, 0.3)
}

#[test]
fn constant_endpoints_are_solved_at_initialization() {
    let (grid, cal) = setup(2, 8, 3.0);
    let zero = Potential::zeros(&grid);
    let cfg = GeodesicConfig { slices: 8, ..GeodesicConfig::default() };
    let (path, rep) = solve_eps_geodesic(&cal, &grid, &zero, &zero, &cfg).unwrap();
    assert_eq!(rep.iterations, 0);
    assert!(rep.phase_residual <= cfg.tol);
    assert!(path.slices().iter().all(|s| s.values.iter().all(|&v| v == 0.0)));
    assert_eq!(rep.length, 0.0);
}

#[test]
fn straight_path_between_constants_is_exact() {
    let (grid, cal) = setup(1, 16, 1.5);
    let c = 0.3;
    let (zero, top) = (Potential::zeros(&grid), Potential::constant(&grid, c));
    let weight = grid.volume() * (1.0f64 + 1.5 * 1.5).sqrt();
    for eps in DEFAULT_EPS_SCHEDULE {
        for p in [1.0, 2.0] {
            let cfg = GeodesicConfig { eps, p, slices: 16, ..GeodesicConfig::default() };
            let (path, rep) = solve_eps_geodesic(&cal, &grid, &zero, &top, &cfg).unwrap();
            assert_eq!(rep.iterations, 0, "linear start should already solve the equation");
            let want = c * weight.powf(1.0 / p);
            assert!((rep.length - want).abs() <= 1e-12 * want, "{} vs {want}", rep.length);
            let prof = energy_profile(&cal, &grid, &path, p, 1e-3).unwrap();
            assert!(prof.energy.iter().all(|e| (e - c.powf(p) * weight).abs() <= 1e-12 * e));
        }
    }
}

#[test]
fn smoothed_energy_is_within_delta() {
    let (grid, cal) = setup(1, 16, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random_bump(&mut rng, &grid), random_bump(&mut rng, &grid));
    let cfg = GeodesicConfig { eps: 0.1, ..GeodesicConfig::default() };
    let (path, _) = solve_eps_geodesic(&cal, &grid, &a, &b, &cfg).unwrap();
    // density integrates to Vol * R cos(Q - theta0) <= Vol * R on this class
    let mass = grid.volume() * (1.0f64 + 1.5 * 1.5).sqrt() * 1.5;
    let mut gaps = Vec::new();
    for delta in [1e-2, 1e-3] {
        for p in [1.0, 2.0] {
            let prof = energy_profile(&cal, &grid, &path, p, delta).unwrap();
            let gap = prof.energy.iter().zip(&prof.energy_smoothed).map(|(e, s)| (s - e).abs()).fold(0.0, f64::max);
            assert!(gap <= mass * delta, "{delta} {p}: {gap}");
            gaps.push(gap);
        }
    }
    // the bound is attained up to a constant: shrinking delta shrinks the gap
    assert!(gaps[2] < gaps[0] && gaps[3] < gaps[1]);
}

#[test]
fn trig_endpoints_obey_second_order_estimates() {
    let (grid, cal) = setup(1, 16, 1.5);
    let phi0 = Potential::zeros(&grid);
    let phi1 = Potential::from_fn(&grid, |x| 0.3 * x[0].cos());
    let sup = phi1.sub(&phi0).sup_abs();
    let mut prev: Option<(f64, f64)> = None;
    let mut excess_fit: Option<f64> = None;
    for eps in [0.4, 0.2, 0.1, 0.05] {
        let cfg = GeodesicConfig { eps, slices: 32, ..GeodesicConfig::default() };
        let (_, rep) = solve_eps_geodesic(&cal, &grid, &phi0, &phi1, &cfg).unwrap();
        assert!(rep.converged && rep.phase_residual < 1e-10);
        assert!(rep.consistency_gap <= 1e-6);
        let q = -rep.min_phi_tt.min(0.0);
        let spread = rep.profile.smoothed_spread();
        let excess = (rep.max_abs_phi_t - sup).max(0.0);
        assert!(q > 0.0 && spread > 0.0);
        // max |phi_t| <= |phi0 - phi1|_inf + C eps^2 with C fitted at the largest eps
        let c_excess = *excess_fit.get_or_insert(excess / (eps * eps));
        assert!(excess <= 4.0 * c_excess * eps * eps + 1e-12, "{excess} at eps {eps}");
        if let Some((pq, ps)) = prev {
            let (rq, rs) = (pq / q, ps / spread);
            assert!((2.0..=8.0).contains(&rq), "phi_tt ratio {rq} at eps {eps}");
            assert!((2.0..=8.0).contains(&rs), "spread ratio {rs} at eps {eps}");
            // fitted constants q / eps^2 agree within a factor 4
            let (c_prev, c_now) = (pq / (4.0 * eps * eps), q / (eps * eps));
            assert!(c_now / c_prev <= 4.0 && c_prev / c_now <= 4.0);
        }
        prev = Some((q, spread));
    }
}

#[test]
fn equation_residual_matches_lifted_form() {
    let (grid, cal) = setup(2, 8, 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (a, b) = (random_bump(&mut rng, &grid), random_bump(&mut rng, &grid));
    let (a, b) = (a.scaled(0.5), b.scaled(0.5));
    let cfg = GeodesicConfig { eps: 0.1, slices: 16, ..GeodesicConfig::default() };
    let (path, rep) = solve_eps_geodesic(&cal, &grid, &a, &b, &cfg).unwrap();
    assert!(rep.converged);
    let (residual, gap) = equation_check(&cal, &grid, &path, cfg.eps).unwrap();
    assert!(gap <= 1e-6, "{gap}");
    assert!(residual <= 1e-6, "{residual}");
    let again = report(&cal, &grid, &path, &cfg, rep.iterations, rep.phase_residual).unwrap();
    assert_eq!(again.length, rep.length);
}

#[test]
fn reversed_geodesic_has_the_same_length() {
    let (grid, cal) = setup(1, 16, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..3 {
        let (a, b) = (random_bump(&mut rng, &grid), random_bump(&mut rng, &grid));
        for p in [1.0, 2.0] {
            for eps in DEFAULT_EPS_SCHEDULE {
                let cfg = GeodesicConfig { eps, p, ..GeodesicConfig::default() };
                let (_, fwd) = solve_eps_geodesic(&cal, &grid, &a, &b, &cfg).unwrap();
                let (_, bwd) = solve_eps_geodesic(&cal, &grid, &b, &a, &cfg).unwrap();
                let rel = (fwd.length - bwd.length).abs() / fwd.length;
                assert!(rel <= 1e-6, "p {p} eps {eps}: {rel:e}");
            }
        }
    }
}

#[test]
fn path_reversal_and_length_agree_for_fixed_paths() {
    let (grid, cal) = setup(1, 16, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (random_bump(&mut rng, &grid), random_bump(&mut rng, &grid));
    let path = PathPotential::linear(&grid, &a, &b, 16).unwrap();
    let rev = path.reversed();
    assert_eq!(rev.slice(0), &b);
    let (l1, l2) = (length_p(&cal, &grid, &path, 2.0).unwrap(), length_p(&cal, &grid, &rev, 2.0).unwrap());
    assert!((l1 - l2).abs() <= 1e-12 * l1);
}

#[test]
fn distance_estimates_respect_endpoint_bounds() {
    let (grid, cal) = setup(1, 16, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..4 {
        let (a, b) = (random_bump(&mut rng, &grid), random_bump(&mut rng, &grid));
        for p in [1.0, 2.0] {
            let cfg = GeodesicConfig { p, ..GeodesicConfig::default() };
            let est = estimate_dp(&cal, &grid, &a, &b, &DEFAULT_EPS_SCHEDULE, &cfg).unwrap();
            let lb = dp_lower_bound(&cal, &grid, &a, &b, p).unwrap();
            assert!(est.extrapolated.powf(p) >= 0.99 * lb, "{} < {lb}", est.extrapolated.powf(p));
            assert!(est.reports.iter().all(|r| r.converged));
        }
    }
}

#[test]
fn extrapolated_distances_satisfy_the_triangle_inequality() {
    let (grid, cal) = setup(1, 16, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..3 {
        let pts: Vec<Potential<f64>> = (0..3).map(|_| random_bump(&mut rng, &grid)).collect();
        for p in [1.0, 2.0] {
            let cfg = GeodesicConfig { p, ..GeodesicConfig::default() };
            let d = |i: usize, k: usize| {
                estimate_dp(&cal, &grid, &pts[i], &pts[k], &DEFAULT_EPS_SCHEDULE, &cfg).unwrap().extrapolated
            };
            let (d01, d12, d02) = (d(0, 1), d(1, 2), d(0, 2));
            assert!(d02 <= 1.01 * (d01 + d12), "{d02} > {d01} + {d12}");
        }
    }
}

#[test]
fn nested_endpoints_are_monotone() {
    let (grid, cal) = setup(1, 16, 1.5);
    let base = Potential::bump(&grid, &[1.0, 2.0], 2.0, -0.2);
    let lift = Potential::bump(&grid, &[4.0, 3.5], 1.5, 1.0);
    let phi1 = base.add(&lift.scaled(0.15));
    let phi2 = base.add(&lift.scaled(0.3));
    for p in [1.0, 2.0] {
        let cfg = GeodesicConfig { p, ..GeodesicConfig::default() };
        let d01 = estimate_dp(&cal, &grid, &base, &phi1, &DEFAULT_EPS_SCHEDULE, &cfg).unwrap().extrapolated.powf(p);
        let d02 = estimate_dp(&cal, &grid, &base, &phi2, &DEFAULT_EPS_SCHEDULE, &cfg).unwrap().extrapolated.powf(p);
        let upper = endpoint_energy(&cal, &grid, &base, &phi2, p).unwrap();
        assert!(d01 <= d02 * 1.01, "p {p}: {d01} > {d02}");
        assert!(d02 <= upper * 1.01, "p {p}: {d02} > {upper}");
    }
}
