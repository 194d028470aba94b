//! Gauss–Legendre rules on [0, 1].

use crate::scalar::Scalar;

/// Nodes and weights of the `m`-point Gauss–Legendre rule mapped to [0, 1].
///
/// Nodes come from Newton iteration on the Legendre three-term recurrence in
/// `f64` and are converted to `T` afterwards.
pub fn gauss_legendre<T: Scalar>(m: usize) -> (Vec<T>, Vec<T>) {
    assert!(m >= 1, "quadrature needs at least one node");
    let mut nodes = vec![0.0f64; m];
    let mut weights = vec![0.0f64; m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(m, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    let nodes = nodes.iter().map(|&x| T::lit(0.5 * (x + 1.0))).collect();
    let weights = weights.iter().map(|&w| T::lit(0.5 * w)).collect();
    (nodes, weights)
}

fn legendre(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
