//! Domain representations, boundary parametrization, normals, membership
//! tests, and boundary quadrature.
//!
//! All domains are star-shaped radial graphs over the circle or sphere:
//! the boundary is `center + r(direction) * direction` with `r` a strictly
//! positive closed-form radial function (constant, elliptic, truncated
//! Fourier series, or truncated real spherical-harmonic series). This keeps
//! the domains simply connected by construction and makes membership tests
//! and normals closed-form. Everything here is immutable after construction
//! and safe to share across threads.

mod harmonics;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Distance collar around the boundary treated as exterior by [`DomainSpec::contains`].
/// Downstream solvers must never be handed points where the field evaluation
/// is ill-conditioned.
pub const BOUNDARY_COLLAR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate boundary tangent at parameter {param}")]
    DegenerateTangent { param: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A 2D or 3D point (or vector). The dimension is fixed per domain context.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    coords: [f64; 3],
    dim: usize,
}

impl Point {
    pub fn xy(x: f64, y: f64) -> Self {
        Point {
            coords: [x, y, 0.0],
            dim: 2,
        }
    }

    pub fn xyz(x: f64, y: f64, z: f64) -> Self {
        Point {
            coords: [x, y, z],
            dim: 3,
        }
    }

    pub fn zero(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3);
        Point {
            coords: [0.0; 3],
            dim,
        }
    }

    pub fn from_slice(c: &[f64]) -> Result<Self, GeometryError> {
        match c.len() {
            2 => Ok(Point::xy(c[0], c[1])),
            3 => Ok(Point::xyz(c[0], c[1], c[2])),
            n => Err(GeometryError::DimensionMismatch {
                expected: 2,
                got: n,
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn get(&self, i: usize) -> f64 {
        debug_assert!(i < self.dim);
        self.coords[i]
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn y(&self) -> f64 {
        self.coords[1]
    }

    pub fn z(&self) -> f64 {
        debug_assert_eq!(self.dim, 3);
        self.coords[2]
    }

    pub fn dot(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (*self - *other).norm()
    }

    pub fn scale(&self, s: f64) -> Point {
        let mut out = *self;
        for c in &mut out.coords[..out.dim] {
            *c *= s;
        }
        out
    }

    /// Unit vector along `self`; `None` if the norm is below 1e-300.
    pub fn normalized(&self) -> Option<Point> {
        let n = self.norm();
        if n < 1e-300 {
            None
        } else {
            Some(self.scale(1.0 / n))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|c| c.is_finite())
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut out = self;
        for i in 0..self.dim {
            out.coords[i] += rhs.coords[i];
        }
        out
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut out = self;
        for i in 0..self.dim {
            out.coords[i] -= rhs.coords[i];
        }
        out
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        self.scale(s)
    }
}

impl std::ops::Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        self.scale(-1.0)
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.coords().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(deserializer)?;
        Point::from_slice(&v).map_err(|_| {
            D::Error::custom(format!("point must have 2 or 3 coordinates, got {}", v.len()))
        })
    }
}

/// Boundary shapes. 2D boundaries are parametrized by one angle in
/// `[0, 2pi)`; 3D surfaces by a polar/azimuthal pair `(theta, phi)` with
/// `theta` in `[0, pi]`.
#[derive(Clone, Debug, PartialEq)]
pub enum DomainKind {
    Circle {
        radius: f64,
    },
    Ellipse {
        semi_axes: [f64; 2],
    },
    /// `r(t) = base + sum_k cos_coeffs[k] cos((k+1) t) + sin_coeffs[k] sin((k+1) t)`
    FourierCurve {
        base_radius: f64,
        cos_coeffs: Vec<f64>,
        sin_coeffs: Vec<f64>,
    },
    Sphere {
        radius: f64,
    },
    Ellipsoid {
        semi_axes: [f64; 3],
    },
    /// Radial graph `r(theta, phi) = base + sum c_lm Y_lm` over orthonormal
    /// real spherical harmonics; see [`harmonics`] for the coefficient layout.
    SphericalHarmonicSurface {
        base_radius: f64,
        coeffs: Vec<f64>,
    },
}

impl DomainKind {
    pub fn dim(&self) -> usize {
        match self {
            DomainKind::Circle { .. }
            | DomainKind::Ellipse { .. }
            | DomainKind::FourierCurve { .. } => 2,
            _ => 3,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            DomainKind::Circle { .. } => "circle",
            DomainKind::Ellipse { .. } => "ellipse",
            DomainKind::FourierCurve { .. } => "fourier-curve",
            DomainKind::Sphere { .. } => "sphere",
            DomainKind::Ellipsoid { .. } => "ellipsoid",
            DomainKind::SphericalHarmonicSurface { .. } => "spherical-harmonic-surface",
        }
    }
}

/// A simply connected 2D or 3D domain with smooth star-shaped boundary.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    kind: DomainKind,
    center: Point,
    min_radius: f64,
    max_radius: f64,
}

/// Quadrature node on the domain boundary.
#[derive(Clone, Debug)]
pub struct BoundaryNode {
    pub position: Point,
    pub outward_normal: Point,
    /// Arc-length (2D) or surface-area (3D) share of this node.
    pub weight: f64,
}

impl DomainSpec {
    /// Validates positivity of the radial function (star-shapedness with
    /// respect to the center) on a dense parameter scan.
    pub fn new(kind: DomainKind, center: Point) -> Result<Self, GeometryError> {
        if center.dim() != kind.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: kind.dim(),
                got: center.dim(),
            });
        }
        if !center.is_finite() {
            return Err(GeometryError::InvalidDomain("non-finite center".into()));
        }
        match &kind {
            DomainKind::Circle { radius } | DomainKind::Sphere { radius } => {
                if !(*radius > 0.0) {
                    return Err(GeometryError::InvalidDomain("radius must be positive".into()));
                }
            }
            DomainKind::Ellipse { semi_axes } => {
                if !semi_axes.iter().all(|a| *a > 0.0) {
                    return Err(GeometryError::InvalidDomain(
                        "semi-axes must be positive".into(),
                    ));
                }
            }
            DomainKind::Ellipsoid { semi_axes } => {
                if !semi_axes.iter().all(|a| *a > 0.0) {
                    return Err(GeometryError::InvalidDomain(
                        "semi-axes must be positive".into(),
                    ));
                }
            }
            DomainKind::FourierCurve {
                base_radius,
                cos_coeffs,
                sin_coeffs,
            } => {
                if !(*base_radius > 0.0) {
                    return Err(GeometryError::InvalidDomain(
                        "base radius must be positive".into(),
                    ));
                }
                if cos_coeffs.len() > 64 || sin_coeffs.len() > 64 {
                    return Err(GeometryError::InvalidDomain(
                        "at most 64 Fourier modes supported".into(),
                    ));
                }
            }
            DomainKind::SphericalHarmonicSurface {
                base_radius,
                coeffs,
            } => {
                if !(*base_radius > 0.0) {
                    return Err(GeometryError::InvalidDomain(
                        "base radius must be positive".into(),
                    ));
                }
                if harmonics::degree_for_len(coeffs.len()).is_none() {
                    return Err(GeometryError::InvalidDomain(format!(
                        "spherical-harmonic coefficient list of length {} does not span whole \
                         degrees (expected L(L+2))",
                        coeffs.len()
                    )));
                }
            }
        }

        let mut spec = DomainSpec {
            kind,
            center,
            min_radius: 0.0,
            max_radius: 0.0,
        };
        let (min_r, max_r) = spec.scan_radial_range();
        if !(min_r > 1e-6 * max_r) || !min_r.is_finite() {
            return Err(GeometryError::InvalidDomain(format!(
                "radial function not safely positive (min {min_r:.3e}, max {max_r:.3e}); \
                 perturbation amplitudes too large"
            )));
        }
        spec.min_radius = min_r;
        spec.max_radius = max_r;
        Ok(spec)
    }

    fn scan_radial_range(&self) -> (f64, f64) {
        let mut min_r = f64::INFINITY;
        let mut max_r = f64::NEG_INFINITY;
        match self.dim() {
            2 => {
                for i in 0..4096 {
                    let r = self.radius_2d(TAU * i as f64 / 4096.0);
                    min_r = min_r.min(r);
                    max_r = max_r.max(r);
                }
            }
            _ => {
                for i in 0..=128 {
                    let theta = PI * i as f64 / 128.0;
                    for j in 0..256 {
                        let phi = TAU * j as f64 / 256.0;
                        let r = self.radius_3d(theta, phi);
                        min_r = min_r.min(r);
                        max_r = max_r.max(r);
                    }
                }
            }
        }
        (min_r, max_r)
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn min_radius(&self) -> f64 {
        self.min_radius
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    /// Upper bound on the domain diameter, used to scale collars and steps.
    pub fn diameter(&self) -> f64 {
        2.0 * self.max_radius
    }

    /// Radial function in the azimuthal direction `angle` (2D kinds).
    fn radius_2d(&self, angle: f64) -> f64 {
        match &self.kind {
            DomainKind::Circle { radius } => *radius,
            DomainKind::Ellipse { semi_axes: [a, b] } => {
                let (s, c) = angle.sin_cos();
                a * b / ((b * c).powi(2) + (a * s).powi(2)).sqrt()
            }
            DomainKind::FourierCurve {
                base_radius,
                cos_coeffs,
                sin_coeffs,
            } => {
                let mut r = *base_radius;
                for (k, c) in cos_coeffs.iter().enumerate() {
                    r += c * ((k + 1) as f64 * angle).cos();
                }
                for (k, s) in sin_coeffs.iter().enumerate() {
                    r += s * ((k + 1) as f64 * angle).sin();
                }
                r
            }
            _ => unreachable!("2D radial function on 3D kind"),
        }
    }

    /// d/d(angle) of the 2D radial function (Fourier/circle kinds only).
    fn radius_2d_deriv(&self, angle: f64) -> f64 {
        match &self.kind {
            DomainKind::Circle { .. } => 0.0,
            DomainKind::FourierCurve {
                cos_coeffs,
                sin_coeffs,
                ..
            } => {
                let mut dr = 0.0;
                for (k, c) in cos_coeffs.iter().enumerate() {
                    let kf = (k + 1) as f64;
                    dr -= c * kf * (kf * angle).sin();
                }
                for (k, s) in sin_coeffs.iter().enumerate() {
                    let kf = (k + 1) as f64;
                    dr += s * kf * (kf * angle).cos();
                }
                dr
            }
            _ => unreachable!(),
        }
    }

    /// Radial function in the direction `(theta, phi)` (3D kinds).
    fn radius_3d(&self, theta: f64, phi: f64) -> f64 {
        match &self.kind {
            DomainKind::Sphere { radius } => *radius,
            DomainKind::Ellipsoid {
                semi_axes: [a, b, c],
            } => {
                let (st, ct) = theta.sin_cos();
                let (sp, cp) = phi.sin_cos();
                let q = (st * cp / a).powi(2) + (st * sp / b).powi(2) + (ct / c).powi(2);
                1.0 / q.sqrt()
            }
            DomainKind::SphericalHarmonicSurface {
                base_radius,
                coeffs,
            } => base_radius + harmonics::series(coeffs, theta, phi).value,
            _ => unreachable!("3D radial function on 2D kind"),
        }
    }

    /// Radial boundary distance from the center in the direction of `u`
    /// (unit vector of matching dimension).
    pub fn radius_in_direction(&self, u: &Point) -> f64 {
        match self.dim() {
            2 => self.radius_2d(u.y().atan2(u.x())),
            _ => {
                let theta = u.z().clamp(-1.0, 1.0).acos();
                let phi = u.y().atan2(u.x());
                self.radius_3d(theta, phi)
            }
        }
    }

    /// Boundary point at the given parameter(s); one angle for curves,
    /// `(theta, phi)` for surfaces. Parameters wrap periodically.
    pub fn boundary_point(&self, params: &[f64]) -> Result<Point, GeometryError> {
        self.check_params(params)?;
        Ok(match self.dim() {
            2 => self.boundary_point_2d(params[0]),
            _ => self.boundary_point_3d(params[0], params[1]),
        })
    }

    fn check_params(&self, params: &[f64]) -> Result<(), GeometryError> {
        let want = self.dim() - 1;
        if params.len() != want {
            return Err(GeometryError::DimensionMismatch {
                expected: want,
                got: params.len(),
            });
        }
        Ok(())
    }

    fn boundary_point_2d(&self, t: f64) -> Point {
        let p = match &self.kind {
            DomainKind::Ellipse { semi_axes: [a, b] } => {
                let (s, c) = t.sin_cos();
                Point::xy(a * c, b * s)
            }
            _ => {
                let r = self.radius_2d(t);
                let (s, c) = t.sin_cos();
                Point::xy(r * c, r * s)
            }
        };
        self.center + p
    }

    fn boundary_point_3d(&self, theta: f64, phi: f64) -> Point {
        let p = match &self.kind {
            DomainKind::Ellipsoid {
                semi_axes: [a, b, c],
            } => {
                let (st, ct) = theta.sin_cos();
                let (sp, cp) = phi.sin_cos();
                Point::xyz(a * st * cp, b * st * sp, c * ct)
            }
            _ => {
                let r = self.radius_3d(theta, phi);
                unit_dir(theta, phi).scale(r)
            }
        };
        self.center + p
    }

    /// Unit outward normal at the given boundary parameter(s).
    pub fn outward_normal(&self, params: &[f64]) -> Result<Point, GeometryError> {
        self.check_params(params)?;
        match self.dim() {
            2 => self.outward_normal_2d(params[0]),
            _ => self.outward_normal_3d(params[0], params[1]),
        }
    }

    fn outward_normal_2d(&self, t: f64) -> Result<Point, GeometryError> {
        let (s, c) = t.sin_cos();
        let n = match &self.kind {
            DomainKind::Ellipse { semi_axes: [a, b] } => Point::xy(b * c, a * s),
            _ => {
                // Tangent of center + r(t)(cos t, sin t), rotated -90 degrees.
                let r = self.radius_2d(t);
                let dr = self.radius_2d_deriv(t);
                let tangent = Point::xy(dr * c - r * s, dr * s + r * c);
                Point::xy(tangent.y(), -tangent.x())
            }
        };
        n.normalized()
            .ok_or(GeometryError::DegenerateTangent { param: t })
    }

    fn outward_normal_3d(&self, theta: f64, phi: f64) -> Result<Point, GeometryError> {
        let n = match &self.kind {
            DomainKind::Sphere { .. } => unit_dir(theta, phi),
            DomainKind::Ellipsoid {
                semi_axes: [a, b, c],
            } => {
                let p = self.boundary_point_3d(theta, phi) - self.center;
                Point::xyz(p.x() / (a * a), p.y() / (b * b), p.z() / (c * c))
            }
            DomainKind::SphericalHarmonicSurface { .. } => {
                // For x(theta, phi) = r u: the cross product of the tangents
                // is r sin(theta) (r u - r_theta e_theta - (r_phi/sin) e_phi).
                let r = self.radius_3d(theta, phi);
                let (dr_th, dr_ph_over_sin) = match &self.kind {
                    DomainKind::SphericalHarmonicSurface { coeffs, .. } => {
                        let s = harmonics::series(coeffs, theta, phi);
                        (s.d_theta, s.d_phi / theta.sin().max(1e-12))
                    }
                    _ => unreachable!(),
                };
                let (e_th, e_ph) = tangent_frame(theta, phi);
                unit_dir(theta, phi).scale(r) - e_th.scale(dr_th) - e_ph.scale(dr_ph_over_sin)
            }
            _ => unreachable!(),
        };
        n.normalized().ok_or(GeometryError::DegenerateTangent {
            param: theta,
        })
    }

    /// Strict interior test. Points within [`BOUNDARY_COLLAR`] of the
    /// boundary (measured along the ray from the center) classify exterior.
    pub fn contains(&self, p: &Point) -> bool {
        if p.dim() != self.dim() || !p.is_finite() {
            return false;
        }
        let d = *p - self.center;
        let rho = d.norm();
        if rho == 0.0 {
            return true;
        }
        let u = d.scale(1.0 / rho);
        rho < self.radius_in_direction(&u) - BOUNDARY_COLLAR
    }

    /// Boundary quadrature nodes.
    ///
    /// 2D: `n` nodes uniform in parameter with trapezoid weights (spectrally
    /// accurate on smooth periodic curves). Requires `n >= 16`.
    ///
    /// 3D: a latitude-longitude product grid with Gauss-Legendre weights in
    /// `cos(theta)`, sized close to `n` total nodes. Requires `n >= 64`.
    pub fn sample_boundary(&self, n: usize) -> Result<Vec<BoundaryNode>, GeometryError> {
        match self.dim() {
            2 => {
                if n < 16 {
                    return Err(GeometryError::Config(format!(
                        "2D boundary sampling needs n >= 16, got {n}"
                    )));
                }
                self.sample_boundary_2d(n)
            }
            _ => {
                if n < 64 {
                    return Err(GeometryError::Config(format!(
                        "3D boundary sampling needs n >= 64, got {n}"
                    )));
                }
                let n_theta = ((n as f64 / 2.0).sqrt().round() as usize).max(4);
                self.sample_boundary_3d(n_theta, 2 * n_theta)
            }
        }
    }

    fn sample_boundary_2d(&self, n: usize) -> Result<Vec<BoundaryNode>, GeometryError> {
        let dt = TAU / n as f64;
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let t = dt * i as f64;
            let speed = match &self.kind {
                DomainKind::Circle { radius } => *radius,
                DomainKind::Ellipse { semi_axes: [a, b] } => {
                    let (s, c) = t.sin_cos();
                    ((a * s).powi(2) + (b * c).powi(2)).sqrt()
                }
                _ => {
                    let r = self.radius_2d(t);
                    let dr = self.radius_2d_deriv(t);
                    (r * r + dr * dr).sqrt()
                }
            };
            nodes.push(BoundaryNode {
                position: self.boundary_point_2d(t),
                outward_normal: self.outward_normal_2d(t)?,
                weight: speed * dt,
            });
        }
        Ok(nodes)
    }

    /// Product-grid sampling with explicit resolution; `sample_boundary`
    /// chooses the resolution from a total-count target.
    pub fn sample_boundary_grid(
        &self,
        n_theta: usize,
        n_phi: usize,
    ) -> Result<Vec<BoundaryNode>, GeometryError> {
        if self.dim() != 3 {
            return Err(GeometryError::Config(
                "grid sampling applies to 3D domains".into(),
            ));
        }
        self.sample_boundary_3d(n_theta, n_phi)
    }

    fn sample_boundary_3d(
        &self,
        n_theta: usize,
        n_phi: usize,
    ) -> Result<Vec<BoundaryNode>, GeometryError> {
        let (gl_x, gl_w) = crate::numeric::gauss_legendre(n_theta);
        let dphi = TAU / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        for (xi, wi) in gl_x.iter().zip(&gl_w) {
            let theta = xi.clamp(-1.0, 1.0).acos();
            let st = theta.sin();
            for j in 0..n_phi {
                let phi = dphi * (j as f64 + 0.5);
                // Surface element per d(cos theta) d(phi).
                let area_density = match &self.kind {
                    DomainKind::Sphere { radius } => radius * radius,
                    DomainKind::Ellipsoid {
                        semi_axes: [a, b, c],
                    } => {
                        let (sp, cp) = phi.sin_cos();
                        let ct = theta.cos();
                        ((b * c * st * cp).powi(2)
                            + (a * c * st * sp).powi(2)
                            + (a * b * ct).powi(2))
                        .sqrt()
                    }
                    DomainKind::SphericalHarmonicSurface { coeffs, .. } => {
                        let s = harmonics::series(coeffs, theta, phi);
                        let r = self.radius_3d(theta, phi);
                        let dphi_over_sin = s.d_phi / st.max(1e-12);
                        r * (r * r + s.d_theta * s.d_theta + dphi_over_sin * dphi_over_sin)
                            .sqrt()
                    }
                    _ => unreachable!(),
                };
                nodes.push(BoundaryNode {
                    position: self.boundary_point_3d(theta, phi),
                    outward_normal: self.outward_normal_3d(theta, phi)?,
                    weight: wi * dphi * area_density,
                });
            }
        }
        Ok(nodes)
    }

    /// Copy of the domain with the radial function scaled by `factor`
    /// about the same center. Used to place exterior source charges.
    pub(crate) fn dilated(&self, factor: f64) -> DomainSpec {
        let kind = match &self.kind {
            DomainKind::Circle { radius } => DomainKind::Circle {
                radius: radius * factor,
            },
            DomainKind::Ellipse { semi_axes: [a, b] } => DomainKind::Ellipse {
                semi_axes: [a * factor, b * factor],
            },
            DomainKind::FourierCurve {
                base_radius,
                cos_coeffs,
                sin_coeffs,
            } => DomainKind::FourierCurve {
                base_radius: base_radius * factor,
                cos_coeffs: cos_coeffs.iter().map(|c| c * factor).collect(),
                sin_coeffs: sin_coeffs.iter().map(|c| c * factor).collect(),
            },
            DomainKind::Sphere { radius } => DomainKind::Sphere {
                radius: radius * factor,
            },
            DomainKind::Ellipsoid {
                semi_axes: [a, b, c],
            } => DomainKind::Ellipsoid {
                semi_axes: [a * factor, b * factor, c * factor],
            },
            DomainKind::SphericalHarmonicSurface {
                base_radius,
                coeffs,
            } => DomainKind::SphericalHarmonicSurface {
                base_radius: base_radius * factor,
                coeffs: coeffs.iter().map(|c| c * factor).collect(),
            },
        };
        DomainSpec {
            kind,
            center: self.center,
            min_radius: self.min_radius * factor,
            max_radius: self.max_radius * factor,
        }
    }
}

/// Unit direction for spherical angles.
pub(crate) fn unit_dir(theta: f64, phi: f64) -> Point {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Point::xyz(st * cp, st * sp, ct)
}

/// Orthonormal tangent frame (e_theta, e_phi) on the unit sphere.
pub(crate) fn tangent_frame(theta: f64, phi: f64) -> (Point, Point) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    (
        Point::xyz(ct * cp, ct * sp, -st),
        Point::xyz(-sp, cp, 0.0),
    )
}

// ---------------------------------------------------------------------------
// JSON domain-spec files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    dim: usize,
    kind: String,
    center: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    semi_axes: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cos_coeffs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sin_coeffs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coeffs: Option<Vec<f64>>,
}

impl TryFrom<RawDomain> for DomainSpec {
    type Error = GeometryError;

    fn try_from(raw: RawDomain) -> Result<Self, GeometryError> {
        let center = Point::from_slice(&raw.center)?;
        if center.dim() != raw.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: raw.dim,
                got: center.dim(),
            });
        }
        let need = |opt: Option<f64>, what: &str| {
            opt.ok_or_else(|| GeometryError::Config(format!("missing field `{what}`")))
        };
        let kind = match raw.kind.as_str() {
            "circle" => DomainKind::Circle {
                radius: need(raw.radius, "radius")?,
            },
            "sphere" => DomainKind::Sphere {
                radius: need(raw.radius, "radius")?,
            },
            "ellipse" => {
                let ax = raw
                    .semi_axes
                    .ok_or_else(|| GeometryError::Config("missing field `semi_axes`".into()))?;
                if ax.len() != 2 {
                    return Err(GeometryError::Config("ellipse needs 2 semi-axes".into()));
                }
                DomainKind::Ellipse {
                    semi_axes: [ax[0], ax[1]],
                }
            }
            "ellipsoid" => {
                let ax = raw
                    .semi_axes
                    .ok_or_else(|| GeometryError::Config("missing field `semi_axes`".into()))?;
                if ax.len() != 3 {
                    return Err(GeometryError::Config("ellipsoid needs 3 semi-axes".into()));
                }
                DomainKind::Ellipsoid {
                    semi_axes: [ax[0], ax[1], ax[2]],
                }
            }
            "fourier-curve" => DomainKind::FourierCurve {
                base_radius: need(raw.base_radius, "base_radius")?,
                cos_coeffs: raw.cos_coeffs.unwrap_or_default(),
                sin_coeffs: raw.sin_coeffs.unwrap_or_default(),
            },
            "spherical-harmonic-surface" => DomainKind::SphericalHarmonicSurface {
                base_radius: need(raw.base_radius, "base_radius")?,
                coeffs: raw
                    .coeffs
                    .ok_or_else(|| GeometryError::Config("missing field `coeffs`".into()))?,
            },
            other => {
                return Err(GeometryError::Config(format!("unknown domain kind `{other}`")))
            }
        };
        if kind.dim() != raw.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: kind.dim(),
                got: raw.dim,
            });
        }
        DomainSpec::new(kind, center)
    }
}

impl From<&DomainSpec> for RawDomain {
    fn from(spec: &DomainSpec) -> RawDomain {
        let mut raw = RawDomain {
            dim: spec.dim(),
            kind: spec.kind.name().to_string(),
            center: spec.center.coords().to_vec(),
            radius: None,
            semi_axes: None,
            base_radius: None,
            cos_coeffs: None,
            sin_coeffs: None,
            coeffs: None,
        };
        match &spec.kind {
            DomainKind::Circle { radius } | DomainKind::Sphere { radius } => {
                raw.radius = Some(*radius)
            }
            DomainKind::Ellipse { semi_axes } => raw.semi_axes = Some(semi_axes.to_vec()),
            DomainKind::Ellipsoid { semi_axes } => raw.semi_axes = Some(semi_axes.to_vec()),
            DomainKind::FourierCurve {
                base_radius,
                cos_coeffs,
                sin_coeffs,
            } => {
                raw.base_radius = Some(*base_radius);
                raw.cos_coeffs = Some(cos_coeffs.clone());
                raw.sin_coeffs = Some(sin_coeffs.clone());
            }
            DomainKind::SphericalHarmonicSurface {
                base_radius,
                coeffs,
            } => {
                raw.base_radius = Some(*base_radius);
                raw.coeffs = Some(coeffs.clone());
            }
        }
        raw
    }
}

impl Serialize for DomainSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawDomain::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DomainSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawDomain::deserialize(deserializer)?;
        DomainSpec::try_from(raw).map_err(D::Error::custom)
    }
}
