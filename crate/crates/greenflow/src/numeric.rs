//! Small numerical helpers shared across modules.

/// Gauss-Legendre nodes and weights on (-1, 1).
///
/// Newton iteration on the Legendre polynomial; nodes are interior, so
/// integrands with removable endpoint singularities are never evaluated
/// at the endpoints.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Tricomi-type initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Least-squares solve of an overdetermined system by SVD with a relative
/// singular-value cutoff. Deterministic stabilization for ill-conditioned
/// collocation systems.
pub fn truncated_svd_solve(
    a: nalgebra::DMatrix<f64>,
    b: &nalgebra::DVector<f64>,
    rel_cutoff: f64,
) -> Vec<f64> {
    let svd = a.svd(true, true);
    let s_max = svd.singular_values.max();
    let cutoff = rel_cutoff * s_max;
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let mut y = u.transpose() * b;
    for (yi, si) in y.iter_mut().zip(svd.singular_values.iter()) {
        *yi = if *si > cutoff { *yi / si } else { 0.0 };
    }
    (v_t.transpose() * y).iter().copied().collect()
}

/// Unsigned angle in radians between two nonzero vectors of equal dimension.
pub fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let c = (dot / (na * nb)).clamp(-1.0, 1.0);
    c.acos()
}

/// Format a float with 17 significant digits so text outputs are
/// deterministic and round-trip exactly.
pub fn fmt_g17(x: f64) -> String {
    format!("{:.16e}", x)
}
