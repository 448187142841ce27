//! Gradient-flow tracing of the Green's field.
//!
//! The flow follows `-grad G` from the pole toward the boundary, with the
//! time variable calibrated by the exact first integral
//!
//! - 2D: `G(x(t)) = ln(1/t) / (2 pi)`, `t` in (0, 1), velocity
//!   `-grad G * exp(2 pi G) / (2 pi |grad G|^2)`;
//! - 3D: `G(x(t)) = 1 / (4 pi t)`, `t` in (0, inf), velocity
//!   `-4 pi G^2 grad G / |grad G|^2`.
//!
//! Either way `t` increases toward the boundary and every trajectory leaves
//! the pole along a unit direction `a(x)` that is constant along the
//! trajectory. After each accepted integrator step the state is projected
//! back onto the exact level set `{G = target_level(t)}` along `grad G`, so
//! the level invariant is enforced as a contract rather than drifting with
//! integration error.

mod dopri;

use crate::geometry::Point;
use crate::green::{GreenError, GreenField};
use crate::numeric::angle_between;
use dopri::{Control, SVec};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("vanishing Green's gradient at {at:?} (critical point)")]
    CriticalPoint { at: Point },
    #[error("step size underflow near t = {t} at {at:?}")]
    Stiffness { t: f64, at: Point },
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("flow curve length did not converge (accumulated {accumulated:.6e}, last tail increment {increment:.3e})")]
    FiniteLengthViolation { accumulated: f64, increment: f64 },
    #[error(transparent)]
    Green(#[from] GreenError),
}

/// Integration and truncation settings for the tracer.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    /// Relative step tolerance of the embedded pair.
    pub rtol: f64,
    /// Absolute step tolerance of the embedded pair.
    pub atol: f64,
    /// 2D forward traces stop at `t = 1 - eps_bdry`.
    pub eps_bdry: f64,
    /// 3D forward traces stop when `G <= eps_trunc` (truncated flag set).
    pub eps_trunc: f64,
    /// Pole-side cut for direction extraction, as a fraction of the
    /// domain diameter.
    pub t_cut_factor: f64,
    /// Step-attempt budget per integration leg.
    pub max_steps: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            rtol: 1e-10,
            atol: 1e-12,
            eps_bdry: 1e-6,
            eps_trunc: 1e-6,
            t_cut_factor: 1e-4,
            max_steps: 200_000,
        }
    }
}

/// Level-set patch cut by a round cone of directions about `axis`.
///
/// `angle` is the plane angle of the arc in 2D (full circle `2 pi`) or the
/// spherical-sector area of the cone in 3D (full sphere `4 pi`).
#[derive(Clone, Debug)]
pub struct ConePatch {
    pub axis: Point,
    pub angle: f64,
    pub level_param: f64,
}

impl ConePatch {
    pub fn new(axis: Point, angle: f64, level_param: f64) -> Result<Self, FlowError> {
        let full = if axis.dim() == 2 { TAU } else { 4.0 * PI };
        if !(angle > 0.0 && angle <= full) {
            return Err(FlowError::OutOfRange(format!(
                "cone angle {angle} outside (0, {full}]"
            )));
        }
        let axis = axis
            .normalized()
            .ok_or_else(|| FlowError::OutOfRange("zero cone axis".into()))?;
        Ok(ConePatch {
            axis,
            angle,
            level_param,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    /// From the start point toward the boundary; carries the weighted
    /// length in 3D.
    Forward,
    /// From the start point down to the pole cut used for direction
    /// extraction.
    ToPole,
}

#[derive(Clone, Copy, Debug)]
pub struct TraceSample {
    pub t: f64,
    pub x: Point,
}

/// One solution curve of the gradient-flow system.
#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub dim: usize,
    pub kind: TraceKind,
    /// Accepted integrator samples, `t` strictly increasing.
    pub samples: Vec<TraceSample>,
    /// Unit exit direction at the pole.
    pub direction: Point,
    /// 3D forward traces: accumulated weighted length up to the truncation
    /// level. Zero otherwise.
    pub weighted_length: f64,
    /// Estimated remainder of the weighted length beyond the truncation.
    pub tail_estimate: f64,
    pub truncated: bool,
    /// `G` value at the truncation cut (3D forward traces).
    pub truncation_level: f64,
    /// Max |G - target_level(t)| over accepted samples, after projection.
    pub invariant_residual: f64,
    /// Accepted integrator steps over all legs.
    pub steps: usize,
    /// Weighted-length checkpoints at dyadic truncation levels, innermost
    /// first: (G level, accumulated length).
    pub(crate) tail_marks: Vec<(f64, f64)>,
}

/// Green's-function value the trajectory must hold at flow parameter `t`.
pub fn target_level(dim: usize, t: f64) -> Result<f64, FlowError> {
    match dim {
        2 => {
            if t <= 0.0 || t >= 1.0 {
                Err(FlowError::OutOfRange(format!("2D flow parameter {t} outside (0, 1)")))
            } else {
                Ok((1.0 / t).ln() / TAU)
            }
        }
        3 => {
            if t <= 0.0 {
                Err(FlowError::OutOfRange(format!("3D flow parameter {t} must be positive")))
            } else {
                Ok(1.0 / (4.0 * PI * t))
            }
        }
        d => Err(FlowError::OutOfRange(format!("dimension {d}"))),
    }
}

/// Inverse of [`target_level`]: the flow parameter of a point with Green's
/// value `g`.
pub fn flow_parameter(dim: usize, g: f64) -> f64 {
    if dim == 2 {
        (-TAU * g).exp()
    } else {
        1.0 / (4.0 * PI * g)
    }
}

/// Velocity of the calibrated gradient-flow system at `x`.
pub fn rhs(field: &GreenField, x: &Point) -> Result<Point, FlowError> {
    let g = field.value(x)?;
    let grad = field.gradient(x)?;
    rhs_from_parts(field.dim(), g, &grad, x)
}

pub(crate) fn rhs_from_parts(
    dim: usize,
    g: f64,
    grad: &Point,
    at: &Point,
) -> Result<Point, FlowError> {
    let n2 = grad.norm_squared();
    if n2.sqrt() < 1e-14 {
        return Err(FlowError::CriticalPoint { at: *at });
    }
    let factor = if dim == 2 {
        -(TAU * g).exp() / (TAU * n2)
    } else {
        -4.0 * PI * g * g / n2
    };
    Ok(grad.scale(factor))
}

fn svec_from_point(x: &Point, extra: Option<f64>) -> SVec {
    let mut y = SVec::zeros(x.dim() + extra.is_some() as usize);
    for (i, c) in x.coords().iter().enumerate() {
        y.v[i] = *c;
    }
    if let Some(l) = extra {
        y.v[x.dim()] = l;
    }
    y
}

fn point_from_svec(y: &SVec, dim: usize) -> Point {
    match dim {
        2 => Point::xy(y.v[0], y.v[1]),
        _ => Point::xyz(y.v[0], y.v[1], y.v[2]),
    }
}

/// Newton projection of `x` onto `{G = level}` along the gradient.
fn project_to_level(field: &GreenField, x: &mut Point, level: f64) -> Result<f64, FlowError> {
    let tol = 1e-13 * level.abs().max(1.0);
    let mut defect = 0.0;
    for _ in 0..12 {
        let g = field.raw_value(x);
        defect = g - level;
        if defect.abs() <= tol {
            return Ok(defect.abs());
        }
        let grad = field.raw_gradient(x);
        let n2 = grad.norm_squared();
        if n2.sqrt() < 1e-14 {
            return Err(FlowError::CriticalPoint { at: *x });
        }
        *x = *x - grad.scale(defect / n2);
    }
    Ok((field.raw_value(x) - level).abs().max(defect.abs()))
}

struct Leg {
    samples: Vec<TraceSample>,
    x_end: Point,
    steps: usize,
    max_residual: f64,
    length_end: f64,
}

/// Integrate one leg of the flow between two parameter values, projecting
/// every accepted step onto the exact level set. `accumulate_length` adds a
/// quadrature component integrating `sqrt(4 pi |grad G|) ds` (3D).
fn integrate_leg(
    field: &GreenField,
    x_start: &Point,
    length_start: f64,
    t_start: f64,
    t_end: f64,
    params: &FlowParams,
    accumulate_length: bool,
    record: bool,
) -> Result<Leg, FlowError> {
    let dim = field.dim();
    let f = |y: &SVec| -> Result<SVec, FlowError> {
        let x = point_from_svec(y, dim);
        if !y.is_finite() {
            return Err(FlowError::Stiffness { t: t_start, at: x });
        }
        let g = field.raw_value(&x);
        let grad = field.raw_gradient(&x);
        let v = rhs_from_parts(dim, g, &grad, &x)?;
        let mut d = svec_from_point(&v, None);
        if accumulate_length {
            d.n = dim + 1;
            d.v[dim] = (4.0 * PI * grad.norm()).sqrt() * v.norm();
        }
        Ok(d)
    };
    let project = |t: f64, y: &mut SVec| -> Result<f64, FlowError> {
        let level = target_level(dim, t)?;
        let mut x = point_from_svec(y, dim);
        let residual = project_to_level(field, &mut x, level)?;
        for (i, c) in x.coords().iter().enumerate() {
            y.v[i] = *c;
        }
        Ok(residual)
    };

    let y0 = svec_from_point(x_start, accumulate_length.then_some(length_start));
    let ctrl = Control {
        rtol: params.rtol,
        atol: params.atol,
        max_steps: params.max_steps,
        record,
    };
    let out = dopri::integrate(f, project, y0, t_start, t_end, &ctrl)?;
    Ok(Leg {
        samples: out
            .samples
            .iter()
            .map(|(t, y)| TraceSample {
                t: *t,
                x: point_from_svec(y, dim),
            })
            .collect(),
        x_end: point_from_svec(&out.y_end, dim),
        steps: out.accepted_steps,
        max_residual: out.max_residual,
        length_end: if accumulate_length {
            out.y_end.v[dim]
        } else {
            0.0
        },
    })
}

/// Pole cut parameter for direction extraction.
fn t_cut(field: &GreenField, params: &FlowParams) -> f64 {
    params.t_cut_factor * field.spec().diameter()
}

/// Exit direction at the pole of the trajectory through `x0`.
///
/// Integrates down to the cut parameter and to half of it, then Richardson
/// extrapolates `(x(t) - pole)/t` over the two cut levels: the pole
/// expansion of the trajectory is linear in `t` with an `O(t^2)` remainder
/// (2D carries a constant `exp(2 pi h(y,y))` scale that normalization
/// removes), so the extrapolation cancels the first-order bias.
fn exit_direction(
    field: &GreenField,
    x0: &Point,
    t0: f64,
    params: &FlowParams,
    record: bool,
) -> Result<(Point, Vec<TraceSample>, usize, f64), FlowError> {
    let pole = field.pole();
    let cut = t_cut(field, params);
    if t0 <= cut {
        // Already inside the extraction region; first-order estimate.
        let d = (*x0 - pole)
            .normalized()
            .ok_or(FlowError::CriticalPoint { at: *x0 })?;
        return Ok((d, vec![TraceSample { t: t0, x: *x0 }], 0, 0.0));
    }
    let leg1 = integrate_leg(field, x0, 0.0, t0, cut, params, false, record)?;
    let leg2 = integrate_leg(field, &leg1.x_end, 0.0, cut, cut / 2.0, params, false, record)?;
    let d1 = (leg1.x_end - pole).scale(1.0 / cut);
    let d2 = (leg2.x_end - pole).scale(2.0 / cut);
    let richardson = d2.scale(2.0) - d1;
    let direction = richardson
        .normalized()
        .ok_or(FlowError::CriticalPoint { at: leg2.x_end })?;
    let mut samples = leg1.samples;
    samples.extend(leg2.samples.into_iter().skip(1));
    Ok((
        direction,
        samples,
        leg1.steps + leg2.steps,
        leg1.max_residual.max(leg2.max_residual),
    ))
}

/// Trace from `x0` toward the boundary.
///
/// 2D traces stop at `t = 1 - eps_bdry`; 3D traces stop at the parameter
/// where `G = eps_trunc` and carry the accumulated weighted length plus an
/// estimate of the truncated tail. The exit direction is extracted from a
/// separate pole-side leg so the trace is self-contained.
pub fn trace_forward(field: &GreenField, x0: &Point) -> Result<FlowTrace, FlowError> {
    trace_forward_with(field, x0, &FlowParams::default())
}

pub fn trace_forward_with(
    field: &GreenField,
    x0: &Point,
    params: &FlowParams,
) -> Result<FlowTrace, FlowError> {
    let dim = field.dim();
    let g0 = field.value(x0)?;
    let t0 = flow_parameter(dim, g0);
    let (direction, _, dir_steps, dir_residual) = exit_direction(field, x0, t0, params, false)?;

    if dim == 2 {
        let t_end = 1.0 - params.eps_bdry;
        let mut samples = vec![TraceSample { t: t0, x: *x0 }];
        let (steps, residual) = if t0 < t_end {
            let leg = integrate_leg(field, x0, 0.0, t0, t_end, params, false, true)?;
            samples = leg.samples;
            (leg.steps, leg.max_residual)
        } else {
            (0, 0.0)
        };
        return Ok(FlowTrace {
            dim,
            kind: TraceKind::Forward,
            samples,
            direction,
            weighted_length: 0.0,
            tail_estimate: 0.0,
            truncated: false,
            truncation_level: 0.0,
            invariant_residual: residual.max(dir_residual),
            steps: steps + dir_steps,
            tail_marks: Vec::new(),
        });
    }

    // 3D: integrate segment-wise so the weighted length is checkpointed at
    // the dyadic truncation levels 16e, 8e, 4e, 2e, e exactly.
    let eps = params.eps_trunc;
    let mut marks: Vec<f64> = (0..=4).map(|k| eps * (1 << (4 - k)) as f64).collect();
    marks.retain(|g| *g < g0);
    if marks.is_empty() {
        // Start point is already at or beyond the truncation level.
        let grad = field.raw_gradient(x0);
        let tail = tail_estimate(g0, grad.norm());
        return Ok(FlowTrace {
            dim,
            kind: TraceKind::Forward,
            samples: vec![TraceSample { t: t0, x: *x0 }],
            direction,
            weighted_length: 0.0,
            tail_estimate: tail,
            truncated: true,
            truncation_level: g0,
            invariant_residual: dir_residual,
            steps: dir_steps,
            tail_marks: Vec::new(),
        });
    }

    let mut samples = vec![TraceSample { t: t0, x: *x0 }];
    let mut steps = dir_steps;
    let mut residual = dir_residual;
    let mut x = *x0;
    let mut t = t0;
    let mut length = 0.0;
    let mut tail_marks = Vec::new();
    for g_mark in marks {
        let t_mark = flow_parameter(dim, g_mark);
        let leg = integrate_leg(field, &x, length, t, t_mark, params, true, true)?;
        samples.extend(leg.samples.into_iter().skip(1));
        steps += leg.steps;
        residual = residual.max(leg.max_residual);
        x = leg.x_end;
        t = t_mark;
        length = leg.length_end;
        tail_marks.push((g_mark, length));
    }
    let g_end = field.raw_value(&x);
    let grad_end = field.raw_gradient(&x);
    Ok(FlowTrace {
        dim,
        kind: TraceKind::Forward,
        samples,
        direction,
        weighted_length: length,
        tail_estimate: tail_estimate(g_end, grad_end.norm()),
        truncated: true,
        truncation_level: g_end,
        invariant_residual: residual,
        steps,
        tail_marks,
    })
}

/// Remaining weighted length beyond a truncation at level `g`, assuming the
/// gradient magnitude stays near its boundary value: the t-form integrand
/// decays like 1/t^2, leaving `4 pi g / sqrt(4 pi |grad G|)`.
fn tail_estimate(g: f64, grad_norm: f64) -> f64 {
    4.0 * PI * g / (4.0 * PI * grad_norm).sqrt()
}

/// Trace from `x0` down to the pole cut and extract the exit direction.
pub fn trace_to_pole(field: &GreenField, x0: &Point) -> Result<FlowTrace, FlowError> {
    trace_to_pole_with(field, x0, &FlowParams::default())
}

pub fn trace_to_pole_with(
    field: &GreenField,
    x0: &Point,
    params: &FlowParams,
) -> Result<FlowTrace, FlowError> {
    let dim = field.dim();
    let g0 = field.value(x0)?;
    let t0 = flow_parameter(dim, g0);
    let (direction, mut samples, steps, residual) = exit_direction(field, x0, t0, params, true)?;
    samples.reverse();
    Ok(FlowTrace {
        dim,
        kind: TraceKind::ToPole,
        samples,
        direction,
        weighted_length: 0.0,
        tail_estimate: 0.0,
        truncated: false,
        truncation_level: 0.0,
        invariant_residual: residual,
        steps,
        tail_marks: Vec::new(),
    })
}

/// Transport a point along its trajectory to the flow parameter `t_target`.
pub fn flow_point(
    field: &GreenField,
    x: &Point,
    t_target: f64,
    params: &FlowParams,
) -> Result<Point, FlowError> {
    let dim = field.dim();
    let g = field.value(x)?;
    let t = flow_parameter(dim, g);
    target_level(dim, t_target)?;
    let leg = integrate_leg(field, x, 0.0, t, t_target, params, false, false)?;
    Ok(leg.x_end)
}

/// Recompute the exit direction from `k` points along the trace and return
/// the maximum pairwise angular deviation in radians.
pub fn direction_constancy_check(
    field: &GreenField,
    trace: &FlowTrace,
    k: usize,
    params: &FlowParams,
) -> Result<f64, FlowError> {
    if k == 0 || trace.samples.is_empty() {
        return Err(FlowError::OutOfRange("need k >= 1 and a non-empty trace".into()));
    }
    let n = trace.samples.len();
    let mut directions = Vec::with_capacity(k);
    for j in 0..k {
        let idx = if k == 1 {
            n / 2
        } else {
            (j * (n - 1)) / (k - 1)
        };
        let x = trace.samples[idx].x;
        if x.distance(&field.pole()) <= field.pole_collar() * 10.0 {
            continue;
        }
        let (a, _, _, _) = exit_direction(
            field,
            &x,
            flow_parameter(trace.dim, field.value(&x)?),
            params,
            false,
        )?;
        directions.push(a);
    }
    let mut worst = 0.0f64;
    for i in 0..directions.len() {
        for j in (i + 1)..directions.len() {
            worst = worst.max(angle_between(directions[i].coords(), directions[j].coords()));
        }
    }
    Ok(worst)
}

/// Weighted arc length `int sqrt(4 pi |grad G|) ds` of a 3D forward trace,
/// including the estimated truncated tail.
///
/// Fails with [`FlowError::FiniteLengthViolation`] when the accumulated
/// length does not settle under dyadic refinement of the truncation level.
pub fn weighted_length(_field: &GreenField, trace: &FlowTrace) -> Result<f64, FlowError> {
    if trace.dim != 3 {
        return Err(FlowError::OutOfRange("weighted length is defined for 3D traces".into()));
    }
    if trace.kind != TraceKind::Forward {
        return Err(FlowError::OutOfRange("weighted length needs a forward-oriented trace".into()));
    }
    if trace.samples.len() <= 1 {
        return Ok(0.0);
    }
    // Cauchy check on the tail: increments between successive halvings of
    // the truncation level must shrink.
    let marks = &trace.tail_marks;
    if marks.len() >= 3 {
        let m = marks.len();
        let d_prev = marks[m - 2].1 - marks[m - 3].1;
        let d_last = marks[m - 1].1 - marks[m - 2].1;
        if d_last > 1e-9 && d_last > 0.9 * d_prev {
            return Err(FlowError::FiniteLengthViolation {
                accumulated: trace.weighted_length,
                increment: d_last,
            });
        }
    }
    Ok(trace.weighted_length + trace.tail_estimate)
}

// ---------------------------------------------------------------------------
// Level-set geometry and patch flux
// ---------------------------------------------------------------------------

/// First crossing of `{G = level}` along the ray `pole + rho u`.
fn level_point_on_ray(
    field: &GreenField,
    level: f64,
    u: &Point,
) -> Result<Point, FlowError> {
    let pole = field.pole();
    let rho_min = 10.0 * field.pole_collar();
    let rho_max =
        2.2 * field.spec().max_radius() + (pole - field.spec().center()).norm();
    let g_at = |rho: f64| field.raw_value(&(pole + u.scale(rho)));
    if g_at(rho_min) <= level {
        return Err(FlowError::OutOfRange(
            "level set intersects the pole collar".into(),
        ));
    }
    let n_scan = 400;
    let step = (rho_max - rho_min) / n_scan as f64;
    let mut lo = rho_min;
    let mut hi = rho_min;
    let mut found = false;
    for i in 1..=n_scan {
        hi = rho_min + step * i as f64;
        if g_at(hi) < level {
            found = true;
            break;
        }
        lo = hi;
    }
    if !found {
        return Err(FlowError::OutOfRange(
            "level set not found along ray".into(),
        ));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if g_at(mid) >= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(pole + u.scale(0.5 * (lo + hi)))
}

fn signed_angle_2d(from: &Point, to: &Point) -> f64 {
    let cross = from.x() * to.y() - from.y() * to.x();
    let dot = from.dot(to);
    cross.atan2(dot)
}

/// Exit direction of the trajectory through the level point in polar
/// direction `beta` around the pole, measured against `axis` (2D).
fn exit_angle_at_ray_2d(
    field: &GreenField,
    level: f64,
    beta: f64,
    axis: &Point,
    params: &FlowParams,
) -> Result<f64, FlowError> {
    let u = Point::xy(beta.cos(), beta.sin());
    let x = level_point_on_ray(field, level, &u)?;
    let g = field.raw_value(&x);
    let (a, _, _, _) = exit_direction(field, &x, flow_parameter(2, g), params, false)?;
    Ok(signed_angle_2d(axis, &a))
}

/// Outward flux share of `grad G` through the cone patch, with the sign
/// convention that the full cone recovers the total unit flux: the return
/// value approaches `angle / (2 pi)` (2D) or `angle / (4 pi)` (3D).
///
/// The patch `{x on the level set : a(x) in the cone}` is parametrized as a
/// radial graph over directions at the pole; its angular boundary is located
/// by bisection on the exit direction of shot trajectories, and the flux
/// `int |grad G| ds` is integrated with Gauss-Legendre quadrature using
/// closed-form surface elements.
pub fn flux_through_patch(
    field: &GreenField,
    patch: &ConePatch,
    params: &FlowParams,
) -> Result<f64, FlowError> {
    if patch.axis.dim() != field.dim() {
        return Err(FlowError::OutOfRange("patch axis dimension mismatch".into()));
    }
    let dim = field.dim();
    let level = target_level(dim, patch.level_param)?;
    if dim == 2 {
        flux_patch_2d(field, patch, level, params)
    } else {
        flux_patch_3d(field, patch, level, params)
    }
}

fn flux_patch_2d(
    field: &GreenField,
    patch: &ConePatch,
    level: f64,
    params: &FlowParams,
) -> Result<f64, FlowError> {
    let beta0 = patch.axis.y().atan2(patch.axis.x());
    let half = 0.5 * patch.angle;
    let full_circle = patch.angle >= TAU - 1e-9;

    let (beta_lo, beta_hi) = if full_circle {
        (beta0 - PI, beta0 + PI)
    } else {
        // The exit angle grows monotonically from 0 to +-pi as the ray
        // leaves the axis; bisect for the cone half-angle on each side.
        let find = |target: f64| -> Result<f64, FlowError> {
            let (mut lo, mut hi) = if target > 0.0 { (0.0, PI) } else { (-PI, 0.0) };
            for _ in 0..45 {
                let mid = 0.5 * (lo + hi);
                let psi = exit_angle_at_ray_2d(field, level, beta0 + mid, &patch.axis, params)?;
                if target > 0.0 {
                    if psi < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                } else if psi > target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Ok(beta0 + 0.5 * (lo + hi))
        };
        (find(-half)?, find(half)?)
    };

    let (gl_x, gl_w) = crate::numeric::gauss_legendre(64);
    let mid = 0.5 * (beta_lo + beta_hi);
    let rad = 0.5 * (beta_hi - beta_lo);
    let pole = field.pole();
    let mut flux = 0.0;
    for (xi, wi) in gl_x.iter().zip(&gl_w) {
        let beta = mid + rad * xi;
        let u = Point::xy(beta.cos(), beta.sin());
        let x = level_point_on_ray(field, level, &u)?;
        let rho = x.distance(&pole);
        let grad = field.raw_gradient(&x);
        let e_beta = Point::xy(-beta.sin(), beta.cos());
        let g_u = grad.dot(&u);
        if g_u.abs() < 1e-14 {
            return Err(FlowError::CriticalPoint { at: x });
        }
        let drho = -rho * grad.dot(&e_beta) / g_u;
        flux += wi * rad * grad.norm() * (rho * rho + drho * drho).sqrt();
    }
    Ok(flux)
}

fn orthonormal_complement(axis: &Point) -> (Point, Point) {
    let pick = if axis.x().abs() < 0.9 {
        Point::xyz(1.0, 0.0, 0.0)
    } else {
        Point::xyz(0.0, 1.0, 0.0)
    };
    let e1 = {
        let c = cross3(axis, &pick);
        c.normalized().expect("axis and pick are independent")
    };
    let e2 = cross3(axis, &e1);
    (e1, e2)
}

fn cross3(a: &Point, b: &Point) -> Point {
    Point::xyz(
        a.y() * b.z() - a.z() * b.y(),
        a.z() * b.x() - a.x() * b.z(),
        a.x() * b.y() - a.y() * b.x(),
    )
}

fn flux_patch_3d(
    field: &GreenField,
    patch: &ConePatch,
    level: f64,
    params: &FlowParams,
) -> Result<f64, FlowError> {
    // Cap polar angle with spherical-sector area `angle`.
    let cos_cap = (1.0 - patch.angle / TAU).clamp(-1.0, 1.0);
    let theta_cap = cos_cap.acos();
    let full_sphere = patch.angle >= 4.0 * PI - 1e-9;
    let (e1, e2) = orthonormal_complement(&patch.axis);
    let dir = |theta: f64, phi: f64| {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        e1.scale(st * cp) + e2.scale(st * sp) + patch.axis.scale(ct)
    };

    let pole = field.pole();
    let n_phi = 48;
    let n_theta = 32;
    let (gl_x, gl_w) = crate::numeric::gauss_legendre(n_theta);
    let dphi = TAU / n_phi as f64;
    let mut flux = 0.0;
    for jp in 0..n_phi {
        let phi = dphi * (jp as f64 + 0.5);
        let theta_edge = if full_sphere {
            PI
        } else {
            // Bisect the cone membership boundary on this meridian.
            let mut lo = 0.0f64;
            let mut hi = PI;
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                let u = dir(mid, phi);
                let x = level_point_on_ray(field, level, &u)?;
                let g = field.raw_value(&x);
                let (a, _, _, _) =
                    exit_direction(field, &x, flow_parameter(3, g), params, false)?;
                let psi = angle_between(a.coords(), patch.axis.coords());
                if psi < theta_cap {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };

        for (xi, wi) in gl_x.iter().zip(&gl_w) {
            let theta = 0.5 * theta_edge * (xi + 1.0);
            let w_theta = wi * 0.5 * theta_edge;
            let u = dir(theta, phi);
            let x = level_point_on_ray(field, level, &u)?;
            let rho = x.distance(&pole);
            let grad = field.raw_gradient(&x);
            let g_u = grad.dot(&u);
            if g_u.abs() < 1e-14 {
                return Err(FlowError::CriticalPoint { at: x });
            }
            let (st, ct) = theta.sin_cos();
            let (sp, cp) = phi.sin_cos();
            let e_theta = e1.scale(ct * cp) + e2.scale(ct * sp) - patch.axis.scale(st);
            let e_phi = e2.scale(cp) - e1.scale(sp);
            let drho_dtheta = -rho * grad.dot(&e_theta) / g_u;
            let drho_dphi_over_sin = -rho * grad.dot(&e_phi) / g_u;
            let area = rho
                * st
                * (rho * rho + drho_dtheta * drho_dtheta
                    + drho_dphi_over_sin * drho_dphi_over_sin)
                    .sqrt();
            flux += w_theta * dphi * grad.norm() * area;
        }
    }
    Ok(flux)
}

/// Dump a trace as CSV: `t,x0,x1[,x2],G,level_residual` per accepted sample.
pub fn write_trace_csv<W: std::io::Write>(
    field: &GreenField,
    trace: &FlowTrace,
    out: &mut W,
) -> std::io::Result<()> {
    use crate::numeric::fmt_g17 as g17;
    if trace.dim == 2 {
        writeln!(out, "t,x0,x1,G,level_residual")?;
    } else {
        writeln!(out, "t,x0,x1,x2,G,level_residual")?;
    }
    for s in &trace.samples {
        let g = field.raw_value(&s.x);
        let residual = g - target_level(trace.dim, s.t).unwrap_or(f64::NAN);
        let coords: Vec<String> = s.x.coords().iter().map(|c| g17(*c)).collect();
        writeln!(
            out,
            "{},{},{},{}",
            g17(s.t),
            coords.join(","),
            g17(g),
            g17(residual)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainKind, DomainSpec};
    use crate::green::{solve, SolverParams};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn disk_field() -> GreenField {
        let spec = DomainSpec::new(DomainKind::Circle { radius: 1.0 }, Point::zero(2)).unwrap();
        solve(&spec, &Point::zero(2), &SolverParams::default()).unwrap()
    }

    fn ball_field() -> GreenField {
        let spec = DomainSpec::new(DomainKind::Sphere { radius: 1.0 }, Point::zero(3)).unwrap();
        solve(&spec, &Point::zero(3), &SolverParams::default()).unwrap()
    }

    fn blob_field() -> GreenField {
        let spec = DomainSpec::new(
            DomainKind::FourierCurve {
                base_radius: 1.0,
                cos_coeffs: vec![0.0, 0.0, 0.1],
                sin_coeffs: vec![],
            },
            Point::zero(2),
        )
        .unwrap();
        solve(&spec, &Point::xy(0.1, 0.0), &SolverParams::default()).unwrap()
    }

    #[test]
    fn target_levels() {
        assert_relative_eq!(
            target_level(2, 0.5).unwrap(),
            2.0f64.ln() / TAU,
            max_relative = 1e-15
        );
        assert_abs_diff_eq!(target_level(2, 1.0 - 1e-12).unwrap(), 0.0, epsilon = 1e-11);
        assert_relative_eq!(
            target_level(3, 1.0 / (4.0 * PI)).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert!(target_level(2, 1.5).is_err());
        assert!(target_level(3, -0.1).is_err());
    }

    #[test]
    fn rhs_closed_forms() {
        let disk = disk_field();
        let v = rhs(&disk, &Point::xy(0.5, 0.0)).unwrap();
        assert_relative_eq!(v.x(), 1.0, max_relative = 1e-12);
        assert_abs_diff_eq!(v.y(), 0.0, epsilon = 1e-14);

        // Ball: with t = r/(1-r), radial speed dr/dt = (1-r)^2.
        let ball = ball_field();
        let v = rhs(&ball, &Point::xyz(0.0, 0.0, 0.5)).unwrap();
        assert_relative_eq!(v.z(), 0.25, max_relative = 1e-12);
        assert_abs_diff_eq!(v.x(), 0.0, epsilon = 1e-14);

        // Injected zero gradient reports a critical point.
        assert!(matches!(
            rhs_from_parts(2, 0.1, &Point::xy(0.0, 0.0), &Point::zero(2)),
            Err(FlowError::CriticalPoint { .. })
        ));
    }

    #[test]
    fn disk_forward_trace_is_radial() {
        let field = disk_field();
        let params = FlowParams::default();
        let trace = trace_forward_with(&field, &Point::xy(0.5, 0.0), &params).unwrap();
        assert_eq!(trace.kind, TraceKind::Forward);
        assert!(!trace.truncated);
        let last = trace.samples.last().unwrap();
        assert_relative_eq!(last.t, 1.0 - params.eps_bdry, max_relative = 1e-12);
        assert_abs_diff_eq!(last.x.x(), 1.0 - params.eps_bdry, epsilon = 1e-9);
        assert_abs_diff_eq!(last.x.y(), 0.0, epsilon = 1e-12);
        // On the disk x(t) = t a exactly.
        for s in &trace.samples {
            assert_abs_diff_eq!(s.x.x(), s.t, epsilon = 1e-9);
        }
        assert!(trace.invariant_residual <= 1e-9);
        // t strictly increasing, G strictly decreasing.
        for w in trace.samples.windows(2) {
            assert!(w[1].t > w[0].t);
            assert!(field.raw_value(&w[1].x) < field.raw_value(&w[0].x));
        }
        assert_relative_eq!(trace.direction.x(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn ball_forward_trace_matches_radial_closed_form() {
        let field = ball_field();
        let params = FlowParams::default();
        let trace = trace_forward_with(&field, &Point::xyz(0.0, 0.0, 0.5), &params).unwrap();
        assert!(trace.truncated);
        assert_relative_eq!(trace.samples[0].t, 1.0, max_relative = 1e-12);
        for s in &trace.samples {
            // r(t) = t/(1+t) on the radial trajectory.
            assert_abs_diff_eq!(s.x.z(), s.t / (1.0 + s.t), epsilon = 1e-8);
        }
        assert!(trace.invariant_residual <= 1e-8);
        assert_relative_eq!(trace.direction.z(), 1.0, max_relative = 1e-9);
        // Weighted length to the boundary is ln 2 from r = 0.5.
        let wl = weighted_length(&field, &trace).unwrap();
        assert_abs_diff_eq!(wl, 2.0f64.ln(), epsilon = 1e-6);

        let trace9 = trace_forward_with(&field, &Point::xyz(0.0, 0.0, 0.9), &params).unwrap();
        let wl9 = weighted_length(&field, &trace9).unwrap();
        assert_abs_diff_eq!(wl9, (1.0f64 / 0.9).ln(), epsilon = 1e-6);
    }

    #[test]
    fn exit_directions_on_disk_and_ball() {
        let field = disk_field();
        let t = trace_to_pole(&field, &Point::xy(0.5, 0.0)).unwrap();
        assert!((t.direction - Point::xy(1.0, 0.0)).norm() < 1e-9);
        let t = trace_to_pole(&field, &Point::xy(0.0, -0.25)).unwrap();
        assert!((t.direction - Point::xy(0.0, -1.0)).norm() < 1e-9);
        // Samples are ordered by increasing t.
        assert!(t.samples.windows(2).all(|w| w[1].t > w[0].t));

        let ball = ball_field();
        let t = trace_to_pole(&ball, &Point::xyz(0.1, 0.2, 0.2)).unwrap();
        let expect = Point::xyz(1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
        assert!((t.direction - expect).norm() < 1e-9);
    }

    #[test]
    fn directions_preserve_angular_separation_on_disk() {
        let field = disk_field();
        let sep = 0.8f64;
        let a1 = trace_to_pole(&field, &Point::xy(0.5, 0.0)).unwrap().direction;
        let x2 = Point::xy(0.3 * sep.cos(), 0.3 * sep.sin());
        let a2 = trace_to_pole(&field, &x2).unwrap().direction;
        assert_abs_diff_eq!(
            angle_between(a1.coords(), a2.coords()),
            sep,
            epsilon = 1e-9
        );
    }

    #[test]
    fn direction_constancy_on_disk_and_blob() {
        let params = FlowParams::default();
        let field = disk_field();
        let trace = trace_forward_with(&field, &Point::xy(0.4, 0.3), &params).unwrap();
        let dev = direction_constancy_check(&field, &trace, 5, &params).unwrap();
        assert!(dev < 1e-9, "disk deviation {dev:.3e}");
        let dev1 = direction_constancy_check(&field, &trace, 1, &params).unwrap();
        assert_eq!(dev1, 0.0);

        let blob = blob_field();
        let trace = trace_forward_with(&blob, &Point::xy(0.5, 0.2), &params).unwrap();
        let dev = direction_constancy_check(&blob, &trace, 5, &params).unwrap();
        assert!(dev < 1e-5, "blob deviation {dev:.3e}");
    }

    #[test]
    fn forward_then_back_recovers_start() {
        let params = FlowParams::default();
        for (field, x0) in [
            (disk_field(), Point::xy(0.37, 0.21)),
            (blob_field(), Point::xy(-0.3, 0.4)),
        ] {
            let g0 = field.value(&x0).unwrap();
            let t0 = flow_parameter(2, g0);
            let trace = trace_forward_with(&field, &x0, &params).unwrap();
            let end = trace.samples.last().unwrap().x;
            let back = flow_point(&field, &end, t0, &params).unwrap();
            assert!(
                back.distance(&x0) <= 1e-6 * field.spec().diameter(),
                "round trip error {:.3e}",
                back.distance(&x0)
            );
        }
    }

    #[test]
    fn disk_patch_flux_shares() {
        let field = disk_field();
        let params = FlowParams::default();
        for alpha in [PI / 6.0, PI / 2.0, PI] {
            let patch = ConePatch::new(Point::xy(1.0, 0.0), alpha, 0.5).unwrap();
            let flux = flux_through_patch(&field, &patch, &params).unwrap();
            assert_abs_diff_eq!(flux, alpha / TAU, epsilon = 1e-6);
        }
        // Full angle recovers the unit flux share.
        let patch = ConePatch::new(Point::xy(0.0, 1.0), TAU, 0.3).unwrap();
        let flux = flux_through_patch(&field, &patch, &params).unwrap();
        assert_abs_diff_eq!(flux, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn ball_patch_flux_shares() {
        let field = ball_field();
        let params = FlowParams::default();
        let axis = Point::xyz(0.0, 0.0, 1.0);
        for alpha in [PI / 6.0, PI] {
            let patch = ConePatch::new(axis, alpha, 1.0).unwrap();
            let flux = flux_through_patch(&field, &patch, &params).unwrap();
            assert_abs_diff_eq!(flux, alpha / (4.0 * PI), epsilon = 1e-6);
        }
        let patch = ConePatch::new(axis, 4.0 * PI, 1.0).unwrap();
        let flux = flux_through_patch(&field, &patch, &params).unwrap();
        assert_abs_diff_eq!(flux, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn flux_additivity_on_adjacent_patches() {
        let field = disk_field();
        let params = FlowParams::default();
        let third = PI / 3.0;
        let f1 = flux_through_patch(
            &field,
            &ConePatch::new(Point::xy(1.0, 0.0), third, 0.5).unwrap(),
            &params,
        )
        .unwrap();
        let rot = Point::xy(third.cos(), third.sin());
        let f2 = flux_through_patch(&field, &ConePatch::new(rot, third, 0.5).unwrap(), &params)
            .unwrap();
        let mid = Point::xy((third / 2.0).cos(), (third / 2.0).sin());
        let combined = flux_through_patch(
            &field,
            &ConePatch::new(mid, 2.0 * third, 0.5).unwrap(),
            &params,
        )
        .unwrap();
        assert_abs_diff_eq!(f1 + f2, combined, epsilon = 1e-8);
    }

    #[test]
    fn patch_level_inside_pole_collar_errors() {
        let field = disk_field();
        let params = FlowParams::default();
        let patch = ConePatch::new(Point::xy(1.0, 0.0), PI / 2.0, 1e-12).unwrap();
        assert!(matches!(
            flux_through_patch(&field, &patch, &params),
            Err(FlowError::OutOfRange(_))
        ));
    }

    #[test]
    fn weighted_length_contracts() {
        let field = ball_field();
        let trace = trace_forward(&field, &Point::xyz(0.0, 0.0, 0.5)).unwrap();
        // Degenerate single-sample trace.
        let mut degenerate = trace.clone();
        degenerate.samples.truncate(1);
        assert_eq!(weighted_length(&field, &degenerate).unwrap(), 0.0);

        // Backward traces are rejected.
        let back = trace_to_pole(&field, &Point::xyz(0.0, 0.0, 0.5)).unwrap();
        assert!(weighted_length(&field, &back).is_err());

        // 2D traces are rejected.
        let disk = disk_field();
        let t2 = trace_forward(&disk, &Point::xy(0.5, 0.0)).unwrap();
        assert!(weighted_length(&disk, &t2).is_err());

        // Tail increments that fail to shrink are flagged.
        let mut bad = trace.clone();
        bad.tail_marks = vec![(16e-6, 1.0), (8e-6, 1.1), (4e-6, 1.3)];
        assert!(matches!(
            weighted_length(&field, &bad),
            Err(FlowError::FiniteLengthViolation { .. })
        ));
    }

    #[test]
    fn trace_csv_has_level_residual_column() {
        let field = disk_field();
        let trace = trace_forward(&field, &Point::xy(0.5, 0.0)).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&field, &trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x0,x1,G,level_residual");
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5);
            let residual: f64 = fields[4].parse().unwrap();
            assert!(residual.abs() <= 1e-9);
        }
    }
}
