//! Green's functions `G(x, pole)` for the domains in [`crate::geometry`].
//!
//! `G` vanishes on the boundary and splits as fundamental solution plus a
//! harmonic regular part `h`:
//!
//! - 2D: `G = ln(1/|x-y|)/(2 pi) + h(x, y)`
//! - 3D: `G = 1/(4 pi |x-y|) + h(x, y)`
//!
//! Exact circles and spheres get closed-form backends (image charges); every
//! other spec is solved by the method of fundamental solutions: the regular
//! part is expanded over singularity-free kernels centered on a radially
//! dilated copy of the boundary and fitted to `-fundamental` at boundary
//! collocation nodes by truncated-SVD least squares. The fundamental-solution
//! coefficient is pinned exactly, so the singular split holds by construction
//! and only the harmonic remainder is ever approximated.

use crate::geometry::{DomainKind, DomainSpec, GeometryError, Point};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Evaluations closer to the pole than this fraction of the domain diameter
/// are rejected: the singular term loses all precision there.
pub const POLE_COLLAR_FACTOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GreenError {
    #[error("pole lies outside the domain (or inside the boundary collar)")]
    PoleOutsideDomain,
    #[error("evaluation point lies outside the domain")]
    OutsideDomain,
    #[error("evaluation inside the pole collar ({distance:.3e} from the pole)")]
    NearPole { distance: f64 },
    #[error("boundary fit did not converge: residual {residual:.3e} above tolerance {tolerance:.3e} at {collocation} collocation nodes")]
    Convergence {
        residual: f64,
        tolerance: f64,
        collocation: usize,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Settings for [`solve`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Boundary collocation count; 0 selects 256 (2D) or 1024 (3D).
    pub collocation: usize,
    /// Radial dilation factor placing the source curve/surface outside the
    /// closed domain.
    pub source_dilation: f64,
    /// Maximum admissible |G| on fresh boundary verification nodes.
    pub tolerance: f64,
    /// Relative singular-value cutoff for the least-squares fit.
    pub svd_cutoff: f64,
    /// Collocation ceiling for the doubling escalation.
    pub max_collocation: usize,
    /// Use the MFS backend even on exact circles/spheres.
    pub force_mfs: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            collocation: 0,
            source_dilation: 1.5,
            tolerance: 1e-8,
            svd_cutoff: 1e-12,
            max_collocation: 4096,
            force_mfs: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum Backend {
    AnalyticDisk {
        radius: f64,
    },
    AnalyticBall {
        radius: f64,
    },
    Mfs {
        sources: Vec<Point>,
        charges: Vec<f64>,
        residual: f64,
    },
}

/// An evaluatable Green's function with a fixed interior pole. Immutable
/// after [`solve`]; evaluation is safe from any number of threads.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreenField {
    domain: DomainSpec,
    pole: Point,
    backend: Backend,
}

/// Solve for the Green's function of `spec` with the given interior pole.
///
/// Exact circles/spheres select the analytic backend unless
/// `params.force_mfs` is set. The MFS backend doubles the collocation count
/// until the fresh-node boundary residual drops below `params.tolerance` or
/// `params.max_collocation` is exceeded.
pub fn solve(
    spec: &DomainSpec,
    pole: &Point,
    params: &SolverParams,
) -> Result<GreenField, GreenError> {
    if pole.dim() != spec.dim() || !spec.contains(pole) {
        return Err(GreenError::PoleOutsideDomain);
    }
    // Keep the pole clear of the boundary: the collar where gradient
    // evaluation goes ill-conditioned scales with the domain size.
    let offset = *pole - spec.center();
    let clearance = match offset.normalized() {
        Some(u) => spec.radius_in_direction(&u) - offset.norm(),
        None => spec.min_radius(),
    };
    if clearance < 1e-6 * spec.diameter() {
        return Err(GreenError::PoleOutsideDomain);
    }

    if !params.force_mfs {
        match spec.kind() {
            DomainKind::Circle { radius } => {
                return Ok(GreenField {
                    domain: spec.clone(),
                    pole: *pole,
                    backend: Backend::AnalyticDisk { radius: *radius },
                })
            }
            DomainKind::Sphere { radius } => {
                return Ok(GreenField {
                    domain: spec.clone(),
                    pole: *pole,
                    backend: Backend::AnalyticBall { radius: *radius },
                })
            }
            _ => {}
        }
    }

    let mut n_col = if params.collocation > 0 {
        params.collocation
    } else if spec.dim() == 2 {
        256
    } else {
        1024
    };
    let mut last_residual = f64::INFINITY;
    let mut last_n = n_col;
    while n_col <= params.max_collocation {
        let field = mfs_solve(spec, pole, n_col, params)?;
        let residual = field.fit_residual();
        if residual <= params.tolerance {
            return Ok(field);
        }
        last_residual = residual;
        last_n = n_col;
        n_col *= 2;
    }
    Err(GreenError::Convergence {
        residual: last_residual,
        tolerance: params.tolerance,
        collocation: last_n,
    })
}

fn mfs_solve(
    spec: &DomainSpec,
    pole: &Point,
    n_col: usize,
    params: &SolverParams,
) -> Result<GreenField, GreenError> {
    let dim = spec.dim();
    let collocation = spec.sample_boundary(n_col)?;
    let n_src = (collocation.len() / 2).max(8);
    let sources = source_points(&spec.dilated(params.source_dilation), n_src)?;

    // Fit the regular part to -fundamental on the boundary.
    let m = collocation.len();
    let k = sources.len();
    let mut a = nalgebra::DMatrix::<f64>::zeros(m, k);
    let mut b = nalgebra::DVector::<f64>::zeros(m);
    for (i, node) in collocation.iter().enumerate() {
        for (j, src) in sources.iter().enumerate() {
            a[(i, j)] = mfs_kernel(dim, &node.position, src);
        }
        b[i] = -fundamental(dim, &(node.position - *pole));
    }

    let charges = crate::numeric::truncated_svd_solve(a, &b, params.svd_cutoff);

    let mut field = GreenField {
        domain: spec.clone(),
        pole: *pole,
        backend: Backend::Mfs {
            sources,
            charges,
            residual: 0.0,
        },
    };
    let residual = field.boundary_residual(2 * n_col)?;
    if let Backend::Mfs { residual: r, .. } = &mut field.backend {
        *r = residual;
    }
    Ok(field)
}

/// Source charge locations on a boundary (already dilated). Positions only,
/// so no quadrature minimum applies.
fn source_points(spec: &DomainSpec, n: usize) -> Result<Vec<Point>, GeometryError> {
    if spec.dim() == 2 {
        (0..n)
            .map(|i| spec.boundary_point(&[TAU * i as f64 / n as f64]))
            .collect()
    } else {
        let n_theta = ((n as f64 / 2.0).sqrt().round() as usize).max(2);
        Ok(spec
            .sample_boundary_grid(n_theta, 2 * n_theta)?
            .into_iter()
            .map(|node| node.position)
            .collect())
    }
}

/// Fundamental solution of the Laplacian with unit charge.
pub(crate) fn fundamental(dim: usize, d: &Point) -> f64 {
    let r = d.norm();
    if dim == 2 {
        -r.ln() / TAU
    } else {
        1.0 / (4.0 * PI * r)
    }
}

pub(crate) fn fundamental_gradient(dim: usize, d: &Point) -> Point {
    let r2 = d.norm_squared();
    if dim == 2 {
        d.scale(-1.0 / (TAU * r2))
    } else {
        d.scale(-1.0 / (4.0 * PI * r2 * r2.sqrt()))
    }
}

fn mfs_kernel(dim: usize, x: &Point, src: &Point) -> f64 {
    let r = x.distance(src);
    if dim == 2 {
        r.ln()
    } else {
        1.0 / r
    }
}

fn mfs_kernel_gradient(dim: usize, x: &Point, src: &Point) -> Point {
    let d = *x - *src;
    let r2 = d.norm_squared();
    if dim == 2 {
        d.scale(1.0 / r2)
    } else {
        d.scale(-1.0 / (r2 * r2.sqrt()))
    }
}

impl GreenField {
    pub fn spec(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn pole(&self) -> Point {
        self.pole
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn backend_name(&self) -> &'static str {
        match &self.backend {
            Backend::AnalyticDisk { .. } => "analytic-disk",
            Backend::AnalyticBall { .. } => "analytic-ball",
            Backend::Mfs { .. } => "mfs",
        }
    }

    /// Boundary fit residual stored by the MFS solver; zero for analytic
    /// backends.
    pub fn fit_residual(&self) -> f64 {
        match &self.backend {
            Backend::Mfs { residual, .. } => *residual,
            _ => 0.0,
        }
    }

    /// Distance below which evaluation refuses to approach the pole.
    pub fn pole_collar(&self) -> f64 {
        POLE_COLLAR_FACTOR * self.domain.diameter()
    }

    fn check_eval_point(&self, x: &Point) -> Result<(), GreenError> {
        if x.dim() != self.dim() || !self.domain.contains(x) {
            return Err(GreenError::OutsideDomain);
        }
        let d = x.distance(&self.pole);
        if d <= self.pole_collar() {
            return Err(GreenError::NearPole { distance: d });
        }
        Ok(())
    }

    /// `G(x, pole)`; positive in the interior, vanishing on the boundary.
    pub fn value(&self, x: &Point) -> Result<f64, GreenError> {
        self.check_eval_point(x)?;
        Ok(self.raw_value(x))
    }

    /// `grad_x G(x, pole)` by analytic differentiation of the backend
    /// representation.
    pub fn gradient(&self, x: &Point) -> Result<Point, GreenError> {
        self.check_eval_point(x)?;
        Ok(self.raw_gradient(x))
    }

    /// Backend evaluation without interior/pole checks. The flow tracer and
    /// boundary quadratures evaluate on or slightly across the boundary,
    /// where the representation is still well defined.
    pub(crate) fn raw_value(&self, x: &Point) -> f64 {
        match &self.backend {
            Backend::AnalyticDisk { radius } => {
                let z = *x - self.domain.center();
                let w = self.pole - self.domain.center();
                // ln |R^2 - conj(w) z| - ln R - ln |z - w|, all over 2 pi.
                let q_re = radius * radius - (w.x() * z.x() + w.y() * z.y());
                let q_im = -(w.x() * z.y() - w.y() * z.x());
                let num = (q_re * q_re + q_im * q_im).sqrt();
                ((num / radius).ln() - (z - w).norm().ln()) / TAU
            }
            Backend::AnalyticBall { radius } => {
                let z = *x - self.domain.center();
                let w = self.pole - self.domain.center();
                let rw = w.norm();
                if rw < 1e-14 * radius {
                    (1.0 / z.norm() - 1.0 / radius) / (4.0 * PI)
                } else {
                    let image = w.scale(radius * radius / (rw * rw));
                    (1.0 / (z - w).norm() - (radius / rw) / (z - image).norm()) / (4.0 * PI)
                }
            }
            Backend::Mfs {
                sources, charges, ..
            } => {
                let mut v = fundamental(self.dim(), &(*x - self.pole));
                for (src, c) in sources.iter().zip(charges) {
                    v += c * mfs_kernel(self.dim(), x, src);
                }
                v
            }
        }
    }

    pub(crate) fn raw_gradient(&self, x: &Point) -> Point {
        match &self.backend {
            Backend::AnalyticDisk { radius } => {
                let z = *x - self.domain.center();
                let w = self.pole - self.domain.center();
                // grad ln|R^2 - conj(w) z| = -w / (R^2 - w conj(z)) read as a
                // complex number; grad ln|z - w| = (z - w)/|z - w|^2.
                let d_re = radius * radius - (w.x() * z.x() + w.y() * z.y());
                let d_im = w.x() * z.y() - w.y() * z.x();
                let den = d_re * d_re + d_im * d_im;
                let a = Point::xy(
                    -(w.x() * d_re + w.y() * d_im) / den,
                    -(w.y() * d_re - w.x() * d_im) / den,
                );
                let zw = z - w;
                let b = zw.scale(1.0 / zw.norm_squared());
                (a - b).scale(1.0 / TAU)
            }
            Backend::AnalyticBall { radius } => {
                let z = *x - self.domain.center();
                let w = self.pole - self.domain.center();
                let rw = w.norm();
                if rw < 1e-14 * radius {
                    let r2 = z.norm_squared();
                    z.scale(-1.0 / (4.0 * PI * r2 * r2.sqrt()))
                } else {
                    let image = w.scale(radius * radius / (rw * rw));
                    let d1 = z - w;
                    let d2 = z - image;
                    let r1 = d1.norm_squared();
                    let r2 = d2.norm_squared();
                    (d1.scale(-1.0 / (r1 * r1.sqrt()))
                        + d2.scale((radius / rw) / (r2 * r2.sqrt())))
                    .scale(1.0 / (4.0 * PI))
                }
            }
            Backend::Mfs {
                sources, charges, ..
            } => {
                let mut g = fundamental_gradient(self.dim(), &(*x - self.pole));
                for (src, c) in sources.iter().zip(charges) {
                    g = g + mfs_kernel_gradient(self.dim(), x, src).scale(*c);
                }
                g
            }
        }
    }

    /// Regular part at the pole, `h(y, y) = lim_{x->y} (G - fundamental)`.
    pub fn regular_part_at_pole(&self) -> f64 {
        match &self.backend {
            Backend::AnalyticDisk { radius } => {
                let w = self.pole - self.domain.center();
                ((radius * radius - w.norm_squared()) / radius).ln() / TAU
            }
            Backend::AnalyticBall { radius } => {
                let w = self.pole - self.domain.center();
                -radius / (4.0 * PI * (radius * radius - w.norm_squared()))
            }
            Backend::Mfs {
                sources, charges, ..
            } => sources
                .iter()
                .zip(charges)
                .map(|(src, c)| c * mfs_kernel(self.dim(), &self.pole, src))
                .sum(),
        }
    }

    /// Regular part `h(x, y) = G(x, y) - fundamental(x - y)` away from the pole.
    pub fn regular_part(&self, x: &Point) -> Result<f64, GreenError> {
        if x.dim() != self.dim() || !self.domain.contains(x) {
            return Err(GreenError::OutsideDomain);
        }
        Ok(self.raw_value(x) - fundamental(self.dim(), &(*x - self.pole)))
    }

    /// Maximum |G| over a fresh boundary sample of roughly `n` nodes.
    pub fn boundary_residual(&self, n: usize) -> Result<f64, GreenError> {
        let nodes = self.domain.sample_boundary(n)?;
        Ok(nodes
            .iter()
            .map(|node| self.raw_value(&node.position).abs())
            .fold(0.0, f64::max))
    }

    /// Total outward flux of `grad G` through the boundary. Equals -1 for a
    /// unit pole charge; a global health check of the solver and quadrature.
    pub fn boundary_flux_total(&self) -> Result<f64, GreenError> {
        let nodes = if self.dim() == 2 {
            self.domain.sample_boundary(4096)?
        } else {
            self.domain.sample_boundary_grid(96, 192)?
        };
        Ok(nodes
            .iter()
            .map(|node| {
                node.weight * self.raw_gradient(&node.position).dot(&node.outward_normal)
            })
            .sum())
    }
}
