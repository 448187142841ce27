//! Embedded Dormand-Prince 5(4) stepper over a small fixed-capacity state.
//!
//! The flow systems are autonomous in the state but carry an exact first
//! integral in the independent variable, so every accepted step is followed
//! by a caller-supplied projection that pins the state back onto the level
//! set for the new time. Projection invalidates FSAL reuse, so all seven
//! stages are evaluated each step.

use super::FlowError;

/// Dense state vector: 2 or 3 spatial components, optionally one quadrature
/// accumulator.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SVec {
    pub n: usize,
    pub v: [f64; 4],
}

impl SVec {
    pub fn zeros(n: usize) -> Self {
        SVec { n, v: [0.0; 4] }
    }

    pub fn axpy(&self, a: f64, x: &SVec) -> SVec {
        let mut out = *self;
        for i in 0..self.n {
            out.v[i] += a * x.v[i];
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.v[..self.n].iter().all(|c| c.is_finite())
    }
}

const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

pub(crate) struct Control {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub record: bool,
}

pub(crate) struct Integration {
    /// Accepted samples (t, state), including the initial state.
    pub samples: Vec<(f64, SVec)>,
    pub y_end: SVec,
    pub accepted_steps: usize,
    /// Max |G - level| after projection over accepted steps.
    pub max_residual: f64,
}

/// Integrate the autonomous system from `t0` to `t1` (either direction).
///
/// `project` is called with the new time after each accepted step; it may
/// move the state onto the exact level set and returns the remaining
/// invariant residual.
pub(crate) fn integrate<F, P>(
    mut f: F,
    mut project: P,
    y0: SVec,
    t0: f64,
    t1: f64,
    ctrl: &Control,
) -> Result<Integration, FlowError>
where
    F: FnMut(&SVec) -> Result<SVec, FlowError>,
    P: FnMut(f64, &mut SVec) -> Result<f64, FlowError>,
{
    let span = t1 - t0;
    let mut samples = Vec::new();
    if ctrl.record {
        samples.push((t0, y0));
    }
    if span == 0.0 {
        return Ok(Integration {
            samples,
            y_end: y0,
            accepted_steps: 0,
            max_residual: 0.0,
        });
    }

    let mut t = t0;
    let mut y = y0;
    let h_floor = 1e-14 * span.abs().max(t0.abs()).max(t1.abs()).max(1.0);
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    let mut max_residual = 0.0f64;

    // Initial step scaled by the local velocity so wide parameter spans do
    // not launch the first trial stages far outside the domain.
    let mut h = {
        let v0 = f(&y0)?;
        let speed: f64 = v0.v[..v0.n]
            .iter()
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt();
        let state: f64 = y0.v[..y0.n].iter().map(|c| c * c).sum::<f64>().sqrt();
        let cap = if speed > 0.0 {
            0.01 * state.max(1.0) / speed
        } else {
            f64::INFINITY
        };
        span.signum() * (span.abs() / 64.0).min(cap)
    };

    while (t1 - t) * span.signum() > 0.0 {
        attempts += 1;
        if attempts > ctrl.max_steps {
            return Err(FlowError::Stiffness {
                t,
                at: spatial(&y),
            });
        }
        if h.abs() < h_floor {
            return Err(FlowError::Stiffness {
                t,
                at: spatial(&y),
            });
        }
        // Clip the final step onto t1.
        if (t + h - t1) * span.signum() > 0.0 {
            h = t1 - t;
        }

        // The first stage sits at the trusted current state: a failure there
        // is a genuine critical point on the trajectory. Later stages probe
        // extrapolated trial positions; failures only reject the step.
        let k1 = f(&y)?;
        let trial = (|| -> Result<_, FlowError> {
            let k2 = f(&y.axpy(h * A2[0], &k1))?;
            let k3 = f(&y.axpy(h * A3[0], &k1).axpy(h * A3[1], &k2))?;
            let k4 = f(&y
                .axpy(h * A4[0], &k1)
                .axpy(h * A4[1], &k2)
                .axpy(h * A4[2], &k3))?;
            let k5 = f(&y
                .axpy(h * A5[0], &k1)
                .axpy(h * A5[1], &k2)
                .axpy(h * A5[2], &k3)
                .axpy(h * A5[3], &k4))?;
            let k6 = f(&y
                .axpy(h * A6[0], &k1)
                .axpy(h * A6[1], &k2)
                .axpy(h * A6[2], &k3)
                .axpy(h * A6[3], &k4)
                .axpy(h * A6[4], &k5))?;
            let ks = [k1, k2, k3, k4, k5, k6];
            let mut y5 = y;
            for (b, k) in B5[..6].iter().zip(&ks) {
                y5 = y5.axpy(h * b, k);
            }
            let k7 = f(&y5)?;
            Ok((ks, y5, k7))
        })();
        let (ks, y5, k7) = match trial {
            Ok(v) => v,
            Err(_) => {
                h *= 0.25;
                continue;
            }
        };

        let err_norm = if y5.is_finite() {
            let mut acc = 0.0;
            for i in 0..y.n {
                let mut e = 0.0;
                for (j, k) in ks.iter().enumerate() {
                    e += (B5[j] - B4[j]) * k.v[i];
                }
                e -= B4[6] * k7.v[i];
                e *= h;
                let scale = ctrl.atol + ctrl.rtol * y.v[i].abs().max(y5.v[i].abs());
                acc += (e / scale) * (e / scale);
            }
            (acc / y.n as f64).sqrt()
        } else {
            f64::INFINITY
        };

        if err_norm <= 1.0 {
            t += h;
            y = y5;
            let residual = project(t, &mut y)?;
            max_residual = max_residual.max(residual);
            accepted += 1;
            if ctrl.record {
                samples.push((t, y));
            }
            let fac = if err_norm == 0.0 {
                5.0
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= fac;
        } else {
            let fac = if err_norm.is_finite() {
                (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h *= fac;
        }
    }

    Ok(Integration {
        samples,
        y_end: y,
        accepted_steps: accepted,
        max_residual,
    })
}

fn spatial(y: &SVec) -> crate::geometry::Point {
    let dim = y.n.min(3);
    match dim {
        2 => crate::geometry::Point::xy(y.v[0], y.v[1]),
        _ => crate::geometry::Point::xyz(y.v[0], y.v[1], y.v[2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integrates_exponential_decay() {
        let ctrl = Control {
            rtol: 1e-12,
            atol: 1e-14,
            max_steps: 10_000,
            record: false,
        };
        let mut y0 = SVec::zeros(2);
        y0.v = [1.0, 2.0, 0.0, 0.0];
        let out = integrate(
            |y| {
                let mut d = SVec::zeros(2);
                d.v[0] = -y.v[0];
                d.v[1] = -0.5 * y.v[1];
                Ok(d)
            },
            |_, _| Ok(0.0),
            y0,
            0.0,
            3.0,
            &ctrl,
        )
        .unwrap();
        assert_relative_eq!(out.y_end.v[0], (-3.0f64).exp(), max_relative = 1e-10);
        assert_relative_eq!(out.y_end.v[1], 2.0 * (-1.5f64).exp(), max_relative = 1e-10);
    }

    #[test]
    fn integrates_backward() {
        let ctrl = Control {
            rtol: 1e-11,
            atol: 1e-13,
            max_steps: 10_000,
            record: true,
        };
        let mut y0 = SVec::zeros(2);
        y0.v[0] = 1.0;
        // dy/dt = t is not autonomous; use harmonic oscillator instead.
        let out = integrate(
            |y| {
                let mut d = SVec::zeros(2);
                d.v[0] = y.v[1];
                d.v[1] = -y.v[0];
                Ok(d)
            },
            |_, _| Ok(0.0),
            y0,
            1.0,
            0.0,
            &ctrl,
        )
        .unwrap();
        // cos/sin propagated backward by 1.
        assert_relative_eq!(out.y_end.v[0], 1.0f64.cos(), max_relative = 1e-9);
        assert_relative_eq!(out.y_end.v[1], 1.0f64.sin(), max_relative = 1e-9);
        assert!(out.samples.windows(2).all(|w| w[1].0 < w[0].0));
    }
}
