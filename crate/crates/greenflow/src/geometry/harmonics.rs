//! Real spherical harmonics for radial surface perturbations.
//!
//! Coefficients are laid out degree-major starting at `l = 1`: for each `l`
//! the orders run `m = -l..=l`, where negative `m` selects the `sin(|m| phi)`
//! harmonic, `m = 0` the zonal one, and positive `m` the `cos(m phi)`
//! harmonic. A coefficient list of length `L(L+2)` therefore spans all
//! degrees `1..=L`.

/// Orthonormal real spherical harmonic sum with angular derivatives.
pub(crate) struct SphSum {
    pub value: f64,
    pub d_theta: f64,
    pub d_phi: f64,
}

/// Largest degree spanned by `len` coefficients, if the length is exactly
/// `L(L+2)` for some `L >= 1`.
pub(crate) fn degree_for_len(len: usize) -> Option<usize> {
    let mut total = 0;
    for l in 1..=32usize {
        total += 2 * l + 1;
        if total == len {
            return Some(l);
        }
        if total > len {
            return None;
        }
    }
    None
}

/// Evaluate `sum c_{lm} Y_lm(theta, phi)` and its theta/phi derivatives.
pub(crate) fn series(coeffs: &[f64], theta: f64, phi: f64) -> SphSum {
    let lmax = degree_for_len(coeffs.len()).expect("validated at construction");
    let x = theta.cos();
    // sin(theta) clamped away from zero: associated Legendre functions with
    // m >= 1 vanish like sin(theta)^m at the poles, so the quotient in the
    // derivative recurrence stays finite.
    let s = theta.sin().max(1e-12);

    let (p, dp) = assoc_legendre_table(lmax, x, s);

    let mut value = 0.0;
    let mut d_theta = 0.0;
    let mut d_phi = 0.0;
    let mut idx = 0;
    for l in 1..=lmax {
        for m_signed in -(l as i64)..=(l as i64) {
            let c = coeffs[idx];
            idx += 1;
            if c == 0.0 {
                continue;
            }
            let m = m_signed.unsigned_abs() as usize;
            let norm = norm_factor(l, m);
            let (ang, dang) = if m_signed < 0 {
                let (sn, cs) = (m as f64 * phi).sin_cos();
                (sn, m as f64 * cs)
            } else if m_signed > 0 {
                let (sn, cs) = (m as f64 * phi).sin_cos();
                (cs, -(m as f64) * sn)
            } else {
                (1.0, 0.0)
            };
            let scale = if m == 0 {
                norm
            } else {
                std::f64::consts::SQRT_2 * norm
            };
            value += c * scale * p[l][m] * ang;
            d_theta += c * scale * dp[l][m] * ang;
            d_phi += c * scale * p[l][m] * dang;
        }
    }
    SphSum {
        value,
        d_theta,
        d_phi,
    }
}

fn norm_factor(l: usize, m: usize) -> f64 {
    let mut ratio = 1.0;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * ratio).sqrt()
}

/// Associated Legendre functions P_l^m(x) without the Condon-Shortley phase,
/// plus d/d(theta). `s` is sin(theta).
fn assoc_legendre_table(lmax: usize, x: f64, s: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut p = vec![vec![0.0; lmax + 1]; lmax + 1];
    let mut dp = vec![vec![0.0; lmax + 1]; lmax + 1];
    p[0][0] = 1.0;
    for m in 1..=lmax {
        p[m][m] = p[m - 1][m - 1] * (2 * m - 1) as f64 * s;
    }
    for m in 0..lmax {
        p[m + 1][m] = (2 * m + 1) as f64 * x * p[m][m];
    }
    for m in 0..=lmax {
        for l in (m + 2)..=lmax {
            p[l][m] = ((2 * l - 1) as f64 * x * p[l - 1][m] - (l + m - 1) as f64 * p[l - 2][m])
                / (l - m) as f64;
        }
    }
    // d/d(theta) P_l^m = (l x P_l^m - (l+m) P_{l-1}^m) / sin(theta)
    for m in 0..=lmax {
        for l in m.max(1)..=lmax {
            let prev = if l >= 1 && m <= l - 1 { p[l - 1][m] } else { 0.0 };
            dp[l][m] = ((l as f64) * x * p[l][m] - (l + m) as f64 * prev) / s;
        }
    }
    (p, dp)
}
