use dhym::torus::{
    complex_hessian, integrate, pointwise_phase, read_field, read_potential, volume_ratios, write_field,
    write_potential, HermitianField, Potential, ReferenceForm, Stencil, TorusGrid, TrigPolynomial, TrigTerm,
};
use proptest::prelude::*;
use std::f64::consts::PI;
use std::io::BufReader;

fn trig_terms(axes: usize) -> impl Strategy<Value = TrigPolynomial> {
    let term = (-1.0..1.0f64, prop::collection::vec(-2i32..=2, axes), -PI..PI)
        .prop_map(|(amplitude, wave, phase)| TrigTerm { amplitude, wave, phase });
    prop::collection::vec(term, 1..4).prop_map(TrigPolynomial::new)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hessian_is_hermitian_and_diagonal_integrates_to_zero(poly in trig_terms(4)) {
        let g = TorusGrid::<f64>::standard(2, 8).unwrap();
        let phi = poly.sample(&g).unwrap();
        let h = complex_hessian(&phi, &g).unwrap();
        prop_assert_eq!(h.hermitian_defect(), 0.0);
        for i in 0..2 {
            let d: Vec<f64> = (0..g.len()).map(|k| h.at(k)[i * 2 + i].re).collect();
            prop_assert!(integrate(&d, &g).abs() <= 1e-10);
        }
    }

    #[test]
    fn hessian_is_linear(a in trig_terms(2), b in trig_terms(2), s in -3.0..3.0f64) {
        let g = TorusGrid::<f64>::standard(1, 16).unwrap();
        let (pa, pb) = (a.sample(&g).unwrap(), b.sample(&g).unwrap());
        let lhs = complex_hessian(&pa.add(&pb.scaled(s)), &g).unwrap();
        let rhs = complex_hessian(&pa, &g).unwrap().add(&complex_hessian(&pb, &g).unwrap().scaled(s)).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((x - y).norm() <= 1e-12 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn volume_ratios_match_polar_identity(poly in trig_terms(4)) {
        let g = TorusGrid::<f64>::standard(2, 8).unwrap();
        let alpha = ReferenceForm::diagonal(&[2.0, 2.5]).field(&g).unwrap();
        let field = alpha.add(&complex_hessian(&poly.sample(&g).unwrap(), &g).unwrap()).unwrap();
        let (re, im) = volume_ratios(&field);
        let phase = pointwise_phase(&field);
        let eig = field.eigenvalues();
        for k in 0..g.len() {
            let lam = &eig[2 * k..2 * k + 2];
            let r = lam.iter().map(|l| (1.0 + l * l).sqrt()).product::<f64>();
            prop_assert!((re[k] - r * phase.q[k].cos()).abs() <= 1e-12 * r);
            prop_assert!((im[k] - r * phase.q[k].sin()).abs() <= 1e-12 * r);
            // direct product (l1 + i)(l2 + i)
            prop_assert!((re[k] - (lam[0] * lam[1] - 1.0)).abs() <= 1e-12 * r);
            prop_assert!((im[k] - (lam[0] + lam[1])).abs() <= 1e-12 * r);
        }
    }
}

#[test]
fn second_order_convergence_in_two_dimensions() {
    let poly = TrigPolynomial::new(vec![
        TrigTerm { amplitude: 0.8, wave: vec![1, 1, 0, -1], phase: 0.2 },
        TrigTerm { amplitude: -0.4, wave: vec![0, 1, 1, -1], phase: 1.1 },
    ]);
    for stencil in [Stencil::Compact, Stencil::Product] {
        let mut prev = f64::INFINITY;
        for points in [8usize, 16, 32] {
            let g = TorusGrid::with_stencil(2, points, 2.0 * PI, stencil).unwrap();
            let h = complex_hessian(&poly.sample(&g).unwrap(), &g).unwrap();
            let exact = poly.exact_complex_hessian(&g).unwrap();
            let err = h.data().iter().zip(exact.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(prev / err >= 3.5, "{stencil:?} {points}: {prev:e} -> {err:e}");
            prev = err;
        }
    }
}

#[test]
fn gaussian_integral_converges_under_refinement() {
    // a periodized Gaussian of width 0.5 per axis has integral (0.5 sqrt(2 pi))^2
    let exact = (0.5 * (2.0 * PI).sqrt()).powi(2);
    let mut prev = f64::INFINITY;
    for points in [8usize, 16, 32] {
        let g = TorusGrid::<f64>::standard(1, points).unwrap();
        let d: Vec<f64> = (0..g.len())
            .map(|i| {
                let x = g.position(i);
                (-2..=2)
                    .flat_map(|a| (-2..=2).map(move |b| (a, b)))
                    .map(|(a, b)| {
                        let dx = x[0] - PI + 2.0 * PI * a as f64;
                        let dy = x[1] - PI + 2.0 * PI * b as f64;
                        (-(dx * dx + dy * dy) / 0.5).exp()
                    })
                    .sum::<f64>()
            })
            .collect();
        let err = (integrate(&d, &g) - exact).abs();
        assert!(err <= prev.max(1e-13));
        prev = err;
    }
    assert!(prev < 1e-12, "{prev:e}");
}

#[test]
fn phase_fields_of_constant_forms() {
    let g = TorusGrid::<f64>::standard(2, 8).unwrap();
    let q_of = |f: &HermitianField<f64>| pointwise_phase(f).q;
    let d33 = HermitianField::diagonal(&g, &[3.0, 3.0]).unwrap();
    assert!(q_of(&d33).iter().all(|q| (q - 2.0 * (1.0f64 / 3.0).atan()).abs() < 1e-14));
    let (re, im) = volume_ratios(&d33);
    assert!(re.iter().all(|r| (r - 8.0).abs() < 1e-12) && im.iter().all(|i| (i - 6.0).abs() < 1e-12));
    assert!(q_of(&HermitianField::zeros(&g)).iter().all(|q| (q - PI).abs() < 1e-14));
    let eye = HermitianField::diagonal(&g, &[1.0, 1.0]).unwrap();
    assert!(q_of(&eye).iter().all(|q| (q - PI / 2.0).abs() < 1e-14));
    let (re, im) = volume_ratios(&eye);
    assert!(re.iter().all(|r| r.abs() < 1e-14) && im.iter().all(|i| (i - 2.0).abs() < 1e-14));
}

#[test]
fn snapshots_roundtrip_through_files() {
    let dir = std::env::temp_dir().join(format!("dhym-torus-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let g = TorusGrid::<f64>::standard(2, 8).unwrap();
    let phi = Potential::bump(&g, &[0.3, 1.0, 2.0, 4.0], 1.2, -0.4);
    let field = complex_hessian(&phi, &g).unwrap();

    let p = dir.join("phi.csv");
    write_potential(&mut std::fs::File::create(&p).unwrap(), &g, &phi).unwrap();
    let (g2, phi2) = read_potential::<f64, _>(BufReader::new(std::fs::File::open(&p).unwrap())).unwrap();
    assert!(g2.same_shape(&g));
    assert_eq!(phi2.values, phi.values);

    let f = dir.join("field.csv");
    write_field(&mut std::fs::File::create(&f).unwrap(), &g, &field).unwrap();
    let (_, field2) = read_field::<f64, _>(BufReader::new(std::fs::File::open(&f).unwrap())).unwrap();
    assert_eq!(field2.data(), field.data());

    // kinds are not interchangeable
    assert!(read_field::<f64, _>(BufReader::new(std::fs::File::open(&p).unwrap())).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}
