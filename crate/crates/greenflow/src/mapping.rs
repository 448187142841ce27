//! Assembly of the disk and ball maps from flow traces.
//!
//! Every interior point maps to `a(x) * modulus(x)` where `a(x)` is the unit
//! exit direction of its trajectory at the pole and the modulus is
//! `exp(-2 pi G(x))` in 2D or `exp(-weighted_length(gamma(x)))` in 3D. The
//! pole maps to the origin. The rotational gauge of the map is fixed by the
//! direction extraction itself; oracle comparisons should use
//! rotation-invariant quantities (moduli, pairwise angles).

use crate::flow::{
    self, flow_parameter, trace_forward_with, trace_to_pole_with, FlowError, FlowParams,
};
use crate::geometry::Point;
use crate::green::GreenField;
use rayon::prelude::*;
use std::f64::consts::TAU;

/// Image of one source point with local diagnostics.
#[derive(Clone, Debug)]
pub struct MapResult {
    pub source: Point,
    /// Point in the open unit disk/ball.
    pub image: Point,
    /// Estimated local stretch factor |phi'| at the source.
    pub local_scale: f64,
    /// Accepted integrator steps spent on this point.
    pub steps: usize,
    /// Max level-invariant residual over the traces behind this result.
    pub invariant_residual: f64,
    /// True when the 3D weighted length was truncated near the boundary;
    /// the modulus error is bounded by the reported tail.
    pub truncated: bool,
}

/// Map an interior point; dispatches on the field dimension.
pub fn map_point(
    field: &GreenField,
    x: &Point,
    params: &FlowParams,
) -> Result<MapResult, FlowError> {
    if field.dim() == 2 {
        map_point_2d(field, x, params)
    } else {
        map_point_3d(field, x, params)
    }
}

/// 2D Riemann map: `phi(x) = a(x) exp(-2 pi G(x))`, `phi(pole) = 0`.
pub fn map_point_2d(
    field: &GreenField,
    x: &Point,
    params: &FlowParams,
) -> Result<MapResult, FlowError> {
    if x.distance(&field.pole()) <= field.pole_collar() {
        // At the pole the interior scale formula has the finite limit
        // exp(-2 pi h(y,y)).
        return Ok(MapResult {
            source: *x,
            image: Point::zero(2),
            local_scale: (-TAU * field.regular_part_at_pole()).exp(),
            steps: 0,
            invariant_residual: 0.0,
            truncated: false,
        });
    }
    let trace = trace_to_pole_with(field, x, params)?;
    let g = field.value(x)?;
    let modulus = (-TAU * g).exp();
    let grad = field.gradient(x)?;
    Ok(MapResult {
        source: *x,
        image: trace.direction.scale(modulus),
        local_scale: TAU * grad.norm() * modulus,
        steps: trace.steps,
        invariant_residual: trace.invariant_residual,
        truncated: false,
    })
}

/// 3D weak-conformal map: `phi(x) = a(x) exp(-int sqrt(4 pi |grad G|) ds)`
/// along the flow curve from `x` to the boundary, `phi(pole) = 0`.
pub fn map_point_3d(
    field: &GreenField,
    x: &Point,
    params: &FlowParams,
) -> Result<MapResult, FlowError> {
    if x.distance(&field.pole()) <= field.pole_collar() {
        return Ok(MapResult {
            source: *x,
            image: Point::zero(3),
            local_scale: pole_scale_3d(field, params)?,
            steps: 0,
            invariant_residual: 0.0,
            truncated: false,
        });
    }
    let trace = trace_forward_with(field, x, params)?;
    let length = flow::weighted_length(field, &trace)?;
    let modulus = (-length).exp();
    let grad = field.gradient(x)?;
    Ok(MapResult {
        source: *x,
        image: trace.direction.scale(modulus),
        local_scale: (4.0 * std::f64::consts::PI * grad.norm()).sqrt() * modulus,
        steps: trace.steps,
        invariant_residual: trace.invariant_residual,
        truncated: trace.truncated,
    })
}

/// Local scale at the pole in 3D, measured from a probe point at the
/// direction-extraction cut: |phi(x)| ~ scale * |x - pole| there.
fn pole_scale_3d(field: &GreenField, params: &FlowParams) -> Result<f64, FlowError> {
    let r = params.t_cut_factor * field.spec().diameter();
    let probe = field.pole() + Point::xyz(r, 0.0, 0.0);
    let trace = trace_forward_with(field, &probe, params)?;
    let length = flow::weighted_length(field, &trace)?;
    Ok((-length).exp() / probe.distance(&field.pole()))
}

/// Element-wise batch map. Order is preserved and per-point failures are
/// recorded without aborting the batch; points parallelize across the
/// current rayon pool.
pub fn map_grid(
    field: &GreenField,
    points: &[Point],
    params: &FlowParams,
) -> Vec<Result<MapResult, FlowError>> {
    points
        .par_iter()
        .map(|x| map_point(field, x, params))
        .collect()
}

/// Injectivity diagnostics over a batch of map results.
#[derive(Clone, Debug, Default)]
pub struct InjectivityReport {
    /// Minimum image distance divided by source distance over all pairs
    /// with sources at least 1e-6 apart.
    pub min_separation_ratio: f64,
    /// Pairs (i, j) with distinct sources but images closer than 1e-9.
    pub flagged: Vec<(usize, usize)>,
    pub pairs_checked: usize,
}

/// Scan all pairs for image collisions. Sources closer than 1e-6 are
/// ignored (duplicates are legitimate); distinct sources with images
/// closer than 1e-9 are flagged.
pub fn injectivity_audit(results: &[MapResult]) -> InjectivityReport {
    let mut report = InjectivityReport {
        min_separation_ratio: f64::INFINITY,
        ..Default::default()
    };
    for i in 0..results.len() {
        for j in (i + 1)..results.len() {
            let ds = results[i].source.distance(&results[j].source);
            if ds < 1e-6 {
                continue;
            }
            report.pairs_checked += 1;
            let di = results[i].image.distance(&results[j].image);
            report.min_separation_ratio = report.min_separation_ratio.min(di / ds);
            if di < 1e-9 {
                report.flagged.push((i, j));
            }
        }
    }
    report
}

/// Inverse map utility: source point whose image is `w` (|w| < 1).
///
/// Shoots a trajectory from the pole in the direction of `w`. 2D uses the
/// exact modulus relation `|phi| = t`; 3D bisects the flow parameter on the
/// weighted-length modulus. Exposed for exploration, not oracle-graded.
pub fn inverse_map(
    field: &GreenField,
    w: &Point,
    params: &FlowParams,
) -> Result<Point, FlowError> {
    if w.dim() != field.dim() {
        return Err(FlowError::OutOfRange("image dimension mismatch".into()));
    }
    let modulus = w.norm();
    if modulus >= 1.0 {
        return Err(FlowError::OutOfRange(format!(
            "image modulus {modulus} not inside the unit ball"
        )));
    }
    if modulus < 1e-12 {
        return Ok(field.pole());
    }
    let a = w.scale(1.0 / modulus);
    let t_start = params.t_cut_factor * field.spec().diameter();
    let h_pole = field.regular_part_at_pole();

    if field.dim() == 2 {
        let start = field.pole() + a.scale(t_start * (TAU * h_pole).exp());
        if modulus <= t_start {
            return Ok(field.pole() + a.scale(modulus * (TAU * h_pole).exp()));
        }
        return flow::flow_point(field, &start, modulus, params);
    }

    // 3D: |phi(x(t))| grows monotonically with t; bisect.
    let start = field.pole()
        + a.scale(t_start * (1.0 + 4.0 * std::f64::consts::PI * t_start * h_pole));
    let t_lo = flow_parameter(3, field.value(&start)?);
    let t_hi = flow_parameter(3, params.eps_trunc);
    let modulus_at = |t: f64| -> Result<f64, FlowError> {
        let x = flow::flow_point(field, &start, t, params)?;
        let trace = trace_forward_with(field, &x, params)?;
        Ok((-flow::weighted_length(field, &trace)?).exp())
    };
    let (mut lo, mut hi) = (t_lo, t_hi);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if modulus_at(mid)? < modulus {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    flow::flow_point(field, &start, 0.5 * (lo + hi), params)
}

/// Write batch results as CSV: `sx,sy[,sz],ix,iy[,iz],scale,residual,truncated`.
/// Failed points are skipped; the caller reports their count separately.
pub fn write_map_csv<W: std::io::Write>(
    dim: usize,
    results: &[Result<MapResult, FlowError>],
    out: &mut W,
) -> std::io::Result<()> {
    use crate::numeric::fmt_g17 as g17;
    if dim == 2 {
        writeln!(out, "sx,sy,ix,iy,scale,residual,truncated")?;
    } else {
        writeln!(out, "sx,sy,sz,ix,iy,iz,scale,residual,truncated")?;
    }
    for r in results.iter().flatten() {
        let mut cols: Vec<String> = Vec::with_capacity(2 * dim + 3);
        cols.extend(r.source.coords().iter().map(|c| g17(*c)));
        cols.extend(r.image.coords().iter().map(|c| g17(*c)));
        cols.push(g17(r.local_scale));
        cols.push(g17(r.invariant_residual));
        cols.push(if r.truncated { "1".into() } else { "0".into() });
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainKind, DomainSpec};
    use crate::green::{solve, SolverParams};
    use approx::assert_abs_diff_eq;

    fn disk_field() -> GreenField {
        let spec = DomainSpec::new(DomainKind::Circle { radius: 1.0 }, Point::zero(2)).unwrap();
        solve(&spec, &Point::zero(2), &SolverParams::default()).unwrap()
    }

    fn ball_field() -> GreenField {
        let spec = DomainSpec::new(DomainKind::Sphere { radius: 1.0 }, Point::zero(3)).unwrap();
        solve(&spec, &Point::zero(3), &SolverParams::default()).unwrap()
    }

    #[test]
    fn disk_map_is_identity() {
        let field = disk_field();
        let params = FlowParams::default();
        let r = map_point_2d(&field, &Point::xy(0.5, 0.0), &params).unwrap();
        assert!((r.image - Point::xy(0.5, 0.0)).norm() < 1e-9);
        assert_abs_diff_eq!(r.local_scale, 1.0, epsilon = 1e-12);

        // Pole convention.
        let r = map_point_2d(&field, &Point::zero(2), &params).unwrap();
        assert_eq!(r.image.norm(), 0.0);
        assert_abs_diff_eq!(r.local_scale, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn ball_map_is_identity() {
        let field = ball_field();
        let params = FlowParams::default();
        for x in [Point::xyz(0.0, 0.0, 0.5), Point::xyz(0.3, 0.4, 0.0)] {
            let r = map_point_3d(&field, &x, &params).unwrap();
            assert!(
                (r.image - x).norm() < 1e-6,
                "image {:?} vs {:?}",
                r.image.coords(),
                x.coords()
            );
            assert_abs_diff_eq!(r.local_scale, 1.0, epsilon = 1e-5);
            assert!(r.truncated);
        }
        let r = map_point_3d(&field, &Point::zero(3), &params).unwrap();
        assert_eq!(r.image.norm(), 0.0);
        assert_abs_diff_eq!(r.local_scale, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn modulus_law_wiring() {
        let params = FlowParams::default();
        let field = disk_field();
        let x = Point::xy(0.3, -0.6);
        let r = map_point_2d(&field, &x, &params).unwrap();
        let g = field.value(&x).unwrap();
        assert_abs_diff_eq!(r.image.norm(), (-TAU * g).exp(), epsilon = 1e-12);

        let ball = ball_field();
        let x = Point::xyz(0.2, 0.5, -0.1);
        let r = map_point_3d(&ball, &x, &params).unwrap();
        let trace = trace_forward_with(&ball, &x, &params).unwrap();
        let wl = flow::weighted_length(&ball, &trace).unwrap();
        assert_abs_diff_eq!(r.image.norm(), (-wl).exp(), epsilon = 1e-12);
    }

    #[test]
    fn batch_map_contracts() {
        let field = disk_field();
        let params = FlowParams::default();
        assert!(map_grid(&field, &[], &params).is_empty());

        // Duplicate inputs map to identical images.
        let x = Point::xy(0.4, 0.2);
        let out = map_grid(&field, &[x, x], &params);
        let a = out[0].as_ref().unwrap().image;
        let b = out[1].as_ref().unwrap().image;
        assert!((a - b).norm() < 1e-10);

        // Exterior point fails without aborting the batch.
        let out = map_grid(&field, &[x, Point::xy(3.0, 0.0), x], &params);
        assert!(out[0].is_ok());
        assert!(out[1].is_err());
        assert!(out[2].is_ok());
    }

    #[test]
    fn injectivity_detector() {
        let field = disk_field();
        let params = FlowParams::default();
        let points: Vec<Point> = (1..5)
            .flat_map(|i| {
                (0..8).map(move |j| {
                    let r = 0.2 * i as f64;
                    let t = TAU * j as f64 / 8.0;
                    Point::xy(r * t.cos(), r * t.sin())
                })
            })
            .collect();
        let results: Vec<MapResult> = map_grid(&field, &points, &params)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        let report = injectivity_audit(&results);
        assert!(report.flagged.is_empty());
        assert!(report.min_separation_ratio > 0.5);

        // Vacuous single result.
        let single = injectivity_audit(&results[..1]);
        assert_eq!(single.pairs_checked, 0);
        assert!(single.flagged.is_empty());

        // Injected duplicate image is flagged.
        let mut tampered = results.clone();
        let stolen = tampered[0].image;
        tampered[5].image = stolen;
        let report = injectivity_audit(&tampered);
        assert_eq!(report.flagged.len(), 1);
    }

    #[test]
    fn inverse_map_round_trip() {
        let params = FlowParams::default();
        let field = disk_field();
        let w = Point::xy(0.35, -0.2);
        let x = inverse_map(&field, &w, &params).unwrap();
        let fwd = map_point_2d(&field, &x, &params).unwrap();
        assert!((fwd.image - w).norm() < 1e-6);

        let ball = ball_field();
        let w = Point::xyz(0.3, 0.1, 0.2);
        let x = inverse_map(&ball, &w, &params).unwrap();
        let fwd = map_point_3d(&ball, &x, &params).unwrap();
        assert!((fwd.image - w).norm() < 1e-5);

        assert!(inverse_map(&field, &Point::xy(1.2, 0.0), &params).is_err());
    }

    #[test]
    fn csv_format() {
        let field = disk_field();
        let params = FlowParams::default();
        let out = map_grid(&field, &[Point::xy(0.5, 0.0), Point::xy(2.0, 0.0)], &params);
        let mut buf = Vec::new();
        write_map_csv(2, &out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sx,sy,ix,iy,scale,residual,truncated");
        assert_eq!(lines.len(), 2); // header + one success
        assert!(lines[1].ends_with(",0"));
    }
}
