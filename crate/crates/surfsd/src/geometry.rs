//! Analytic implicit surfaces, closest-point projection and the normal
//! extension of surface data.
//!
//! A surface is the zero set of a level-set function that is negative
//! inside and positive outside. For the sphere and the plane the level set
//! is the exact signed distance; for the spheroid it is the quadratic form
//! `((x-cx)^2 + (y-cy)^2)/r_max^2 + (z-cz)^2/r_min^2 - 1` and distances are
//! obtained through the closest-point projection.

use std::sync::Arc;

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;

/// Maximum Newton/bisection iterations for the spheroid projection.
const PROJECT_MAX_ITER: usize = 50;
/// Convergence tolerance on the projection parameter.
const PROJECT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("closest-point projection did not converge within {max_iter} iterations")]
    NoConvergence { max_iter: usize },
    #[error("point outside working band: |rho| = {rho:.6e} > delta0 = {band:.6e}")]
    OutsideBand { rho: f64, band: f64 },
    #[error("invalid surface: {0}")]
    InvalidSurface(String),
}

/// Result of projecting a point onto the surface.
#[derive(Debug, Clone, Copy)]
pub struct ClosestPoint {
    /// Nearest point on the surface.
    pub foot: Vec3,
    /// Distance to the foot, carrying the level-set sign (negative inside).
    pub signed_distance: f64,
    /// Outward unit normal at the foot.
    pub normal: Vec3,
}

#[derive(Debug, Clone, Copy)]
enum SurfaceKind {
    Sphere { center: Vec3, radius: f64 },
    /// Rotationally symmetric about the z axis through `center`; `r_max` is
    /// the equatorial radius, `r_min` the polar one.
    Spheroid { center: Vec3, r_max: f64, r_min: f64 },
    Plane { point: Vec3, normal: Vec3 },
}

/// Analytic closed surface (or plane) given by a level-set function.
///
/// Immutable after construction; all operations are pure.
#[derive(Debug, Clone, Copy)]
pub struct ImplicitSurface {
    kind: SurfaceKind,
}

impl ImplicitSurface {
    pub fn sphere(center: Vec3, radius: f64) -> Result<Self, GeometryError> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(GeometryError::InvalidSurface(format!(
                "sphere radius must be positive, got {radius}"
            )));
        }
        Ok(Self {
            kind: SurfaceKind::Sphere { center, radius },
        })
    }

    pub fn spheroid(center: Vec3, r_max: f64, r_min: f64) -> Result<Self, GeometryError> {
        if r_max.is_nan() || r_min.is_nan() || r_max <= 0.0 || r_min <= 0.0 {
            return Err(GeometryError::InvalidSurface(format!(
                "spheroid radii must be positive, got r_max={r_max}, r_min={r_min}"
            )));
        }
        if r_min > r_max {
            return Err(GeometryError::InvalidSurface(format!(
                "spheroid expects r_min <= r_max, got r_max={r_max}, r_min={r_min}"
            )));
        }
        Ok(Self {
            kind: SurfaceKind::Spheroid {
                center,
                r_max,
                r_min,
            },
        })
    }

    pub fn plane(point: Vec3, normal: Vec3) -> Result<Self, GeometryError> {
        let n = normal.norm();
        if n.is_nan() || n <= 0.0 {
            return Err(GeometryError::InvalidSurface(
                "plane normal must be nonzero".into(),
            ));
        }
        Ok(Self {
            kind: SurfaceKind::Plane {
                point,
                normal: normal / n,
            },
        })
    }

    /// Level-set value: negative inside, positive outside, zero on the
    /// surface. Exact signed distance for sphere and plane.
    pub fn level_set(&self, x: Vec3) -> f64 {
        match self.kind {
            SurfaceKind::Sphere { center, radius } => (x - center).norm() - radius,
            SurfaceKind::Spheroid {
                center,
                r_max,
                r_min,
            } => {
                let d = x - center;
                (d.x * d.x + d.y * d.y) / (r_max * r_max) + d.z * d.z / (r_min * r_min) - 1.0
            }
            SurfaceKind::Plane { point, normal } => (x - point).dot(&normal),
        }
    }

    /// Gradient of the level-set function (not necessarily unit).
    pub fn level_set_gradient(&self, x: Vec3) -> Vec3 {
        match self.kind {
            SurfaceKind::Sphere { center, .. } => {
                let d = x - center;
                let n = d.norm();
                if n > 0.0 {
                    d / n
                } else {
                    Vec3::zeros()
                }
            }
            SurfaceKind::Spheroid {
                center,
                r_max,
                r_min,
            } => {
                let d = x - center;
                Vec3::new(
                    2.0 * d.x / (r_max * r_max),
                    2.0 * d.y / (r_max * r_max),
                    2.0 * d.z / (r_min * r_min),
                )
            }
            SurfaceKind::Plane { normal, .. } => normal,
        }
    }

    /// Half-width `delta0` of the working band around the surface inside
    /// which the closest-point map is taken to be single valued: half the
    /// smallest radius (infinite for a plane).
    pub fn band_halfwidth(&self) -> f64 {
        match self.kind {
            SurfaceKind::Sphere { radius, .. } => radius / 2.0,
            SurfaceKind::Spheroid { r_min, .. } => r_min / 2.0,
            SurfaceKind::Plane { .. } => f64::INFINITY,
        }
    }

    /// Reference length used to scale tolerances and finite-difference
    /// steps. Equals the diameter for the closed surfaces and 1 for planes.
    pub fn diameter(&self) -> f64 {
        match self.kind {
            SurfaceKind::Sphere { radius, .. } => 2.0 * radius,
            SurfaceKind::Spheroid { r_max, .. } => 2.0 * r_max,
            SurfaceKind::Plane { .. } => 1.0,
        }
    }

    /// Axis-aligned bounding box of the surface itself, or `None` when it
    /// is unbounded (plane).
    pub fn surface_bounds(&self) -> Option<(Vec3, Vec3)> {
        let half = match self.kind {
            SurfaceKind::Sphere { center, radius } => {
                Some((center, Vec3::new(radius, radius, radius)))
            }
            SurfaceKind::Spheroid {
                center,
                r_max,
                r_min,
            } => Some((center, Vec3::new(r_max, r_max, r_min))),
            SurfaceKind::Plane { .. } => None,
        };
        half.map(|(c, h)| (c - h, c + h))
    }

    /// Translate the surface center (used for cut-position robustness
    /// studies). Planes translate their reference point.
    pub fn translated(&self, offset: Vec3) -> Self {
        let kind = match self.kind {
            SurfaceKind::Sphere { center, radius } => SurfaceKind::Sphere {
                center: center + offset,
                radius,
            },
            SurfaceKind::Spheroid {
                center,
                r_max,
                r_min,
            } => SurfaceKind::Spheroid {
                center: center + offset,
                r_max,
                r_min,
            },
            SurfaceKind::Plane { point, normal } => SurfaceKind::Plane {
                point: point + offset,
                normal,
            },
        };
        Self { kind }
    }

    /// Closest point on the surface, with the working-band precondition
    /// enforced: errors with `OutsideBand` when `|rho(x)| > delta0`.
    pub fn closest_point(&self, x: Vec3) -> Result<ClosestPoint, GeometryError> {
        let cp = self.project(x)?;
        let band = self.band_halfwidth();
        if cp.signed_distance.abs() > band {
            return Err(GeometryError::OutsideBand {
                rho: cp.signed_distance.abs(),
                band,
            });
        }
        Ok(cp)
    }

    /// Closest point without the band check. Active-mesh nodes of coarse
    /// meshes can sit slightly outside the band; the FEM pipeline projects
    /// them with this variant.
    pub fn project(&self, x: Vec3) -> Result<ClosestPoint, GeometryError> {
        match self.kind {
            SurfaceKind::Sphere { center, radius } => {
                let d = x - center;
                let n = d.norm();
                // The center is a removable singularity of the projection;
                // pick a deterministic direction there.
                let dir = if n > 0.0 { d / n } else { Vec3::x() };
                Ok(ClosestPoint {
                    foot: center + radius * dir,
                    signed_distance: n - radius,
                    normal: dir,
                })
            }
            SurfaceKind::Plane { point, normal } => {
                let rho = (x - point).dot(&normal);
                Ok(ClosestPoint {
                    foot: x - rho * normal,
                    signed_distance: rho,
                    normal,
                })
            }
            SurfaceKind::Spheroid {
                center,
                r_max,
                r_min,
            } => self.project_spheroid(x, center, r_max, r_min),
        }
    }

    /// Nearest point on the spheroid. The problem reduces to the nearest
    /// point on the meridian ellipse (s, z) with s the distance from the
    /// symmetry axis; that 1D problem is solved by a safeguarded Newton
    /// iteration on the ellipse parameter.
    fn project_spheroid(
        &self,
        x: Vec3,
        center: Vec3,
        a: f64,
        b: f64,
    ) -> Result<ClosestPoint, GeometryError> {
        let d = x - center;
        let s = (d.x * d.x + d.y * d.y).sqrt();
        let z_abs = d.z.abs();

        let theta = ellipse_nearest_parameter(a, b, s, z_abs)?;
        let (sin_t, cos_t) = theta.sin_cos();
        let foot_s = a * cos_t;
        let foot_z = b * sin_t * d.z.signum();

        // Radial direction in the xy-plane; arbitrary but deterministic on
        // the axis, where foot_s vanishes anyway.
        let radial = if s > 0.0 {
            Vec3::new(d.x / s, d.y / s, 0.0)
        } else {
            Vec3::x()
        };
        let foot = center + foot_s * radial + Vec3::new(0.0, 0.0, foot_z);

        let dist = (x - foot).norm();
        let signed = if self.level_set(x) < 0.0 { -dist } else { dist };
        let g = self.level_set_gradient(foot);
        let gn = g.norm();
        let normal = if gn > 0.0 { g / gn } else { Vec3::z() };
        Ok(ClosestPoint {
            foot,
            signed_distance: signed,
            normal,
        })
    }
}

/// Parameter `theta` in `[0, pi/2]` of the point `(a cos t, b sin t)` on the
/// first-quadrant ellipse arc nearest to `(s, z)` with `s, z >= 0`.
///
/// Stationarity of the squared distance gives
/// `F(t) = (a^2 - b^2) sin t cos t - a s sin t + b z cos t = 0`
/// with `F(0) >= 0 >= F(pi/2)`, so a root is bracketed; Newton steps are
/// taken inside the shrinking bracket with bisection as fallback.
fn ellipse_nearest_parameter(a: f64, b: f64, s: f64, z: f64) -> Result<f64, GeometryError> {
    let f = |t: f64| {
        let (sin_t, cos_t) = t.sin_cos();
        (a * a - b * b) * sin_t * cos_t - a * s * sin_t + b * z * cos_t
    };
    let df = |t: f64| {
        let (sin_t, cos_t) = t.sin_cos();
        (a * a - b * b) * (cos_t * cos_t - sin_t * sin_t) - a * s * cos_t - b * z * sin_t
    };

    let mut lo = 0.0_f64;
    let mut hi = std::f64::consts::FRAC_PI_2;
    if z == 0.0 {
        // Equatorial queries: the nearest point is the equator only outside
        // the evolute cusp at s = (a^2 - b^2)/a; inside, it sits at
        // cos(t) = a s / (a^2 - b^2).
        let cusp = (a * a - b * b) / a;
        if s >= cusp {
            return Ok(lo);
        }
        return Ok((a * s / (a * a - b * b)).acos());
    }
    if f(hi) >= 0.0 {
        return Ok(hi);
    }

    let mut t = (a * z).atan2(b * s).clamp(lo, hi);
    for _ in 0..PROJECT_MAX_ITER {
        let ft = f(t);
        if ft > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let dft = df(t);
        let newton = if dft != 0.0 { t - ft / dft } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= PROJECT_TOL {
            return Ok(next);
        }
        t = next;
    }
    Err(GeometryError::NoConvergence {
        max_iter: PROJECT_MAX_ITER,
    })
}

/// Scalar function of a 3D point (solution, coefficient or right-hand
/// side). Evaluation must be pure.
#[derive(Clone)]
pub struct ScalarField(Arc<dyn Fn(Vec3) -> f64 + Send + Sync>);

impl ScalarField {
    pub fn new(f: impl Fn(Vec3) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c)
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        (self.0)(x)
    }
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ScalarField(..)")
    }
}

/// Vector function of a 3D point, with a flag recording whether the field
/// is tangential on the surface (required for convection fields).
#[derive(Clone)]
pub struct VectorField {
    f: Arc<dyn Fn(Vec3) -> Vec3 + Send + Sync>,
    tangential: bool,
}

impl VectorField {
    pub fn new(f: impl Fn(Vec3) -> Vec3 + Send + Sync + 'static, tangential: bool) -> Self {
        Self {
            f: Arc::new(f),
            tangential,
        }
    }

    pub fn constant(v: Vec3, tangential: bool) -> Self {
        Self::new(move |_| v, tangential)
    }

    pub fn eval(&self, x: Vec3) -> Vec3 {
        (self.f)(x)
    }

    pub fn is_tangential(&self) -> bool {
        self.tangential
    }
}

impl std::fmt::Debug for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("VectorField(..)")
    }
}

/// Pull a surface function back along the closest-point map:
/// `u^e(x) = u(p(x))`, constant along surface normals.
pub fn normal_extension(
    surface: &ImplicitSurface,
    u: &ScalarField,
    x: Vec3,
) -> Result<f64, GeometryError> {
    Ok(u.eval(surface.project(x)?.foot))
}

/// Step used by the finite-difference stencils below.
pub fn fd_step(surface: &ImplicitSurface) -> f64 {
    1e-3 * surface.diameter()
}

/// Ambient gradient of the normal extension `u o p` by 4th-order central
/// differences with step `h`. At surface points this equals the tangential
/// gradient of `u`.
pub fn extension_gradient(
    surface: &ImplicitSurface,
    u: &ScalarField,
    x: Vec3,
    h: f64,
) -> Result<Vec3, GeometryError> {
    let mut g = Vec3::zeros();
    for axis in 0..3 {
        let mut e = Vec3::zeros();
        e[axis] = h;
        let fp1 = normal_extension(surface, u, x + e)?;
        let fm1 = normal_extension(surface, u, x - e)?;
        let fp2 = normal_extension(surface, u, x + 2.0 * e)?;
        let fm2 = normal_extension(surface, u, x - 2.0 * e)?;
        g[axis] = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h);
    }
    Ok(g)
}

/// Ambient Laplacian of the normal extension by 4th-order central
/// differences. At surface points this equals the Laplace-Beltrami operator
/// applied to `u`, because the extension is constant along normals.
pub fn extension_laplacian(
    surface: &ImplicitSurface,
    u: &ScalarField,
    x: Vec3,
    h: f64,
) -> Result<f64, GeometryError> {
    let f0 = normal_extension(surface, u, x)?;
    let mut lap = 0.0;
    for axis in 0..3 {
        let mut e = Vec3::zeros();
        e[axis] = h;
        let fp1 = normal_extension(surface, u, x + e)?;
        let fm1 = normal_extension(surface, u, x - e)?;
        let fp2 = normal_extension(surface, u, x + 2.0 * e)?;
        let fm2 = normal_extension(surface, u, x - 2.0 * e)?;
        lap += (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * h * h);
    }
    Ok(lap)
}

/// Right-hand side manufactured from a fabricated solution: applies
/// `beta . grad_S u + alpha u - eps lap_S u` at the surface point `q`,
/// with the surface derivatives obtained from ambient derivatives of the
/// normal extension.
pub fn manufactured_rhs(
    surface: &ImplicitSurface,
    u: &ScalarField,
    beta: &VectorField,
    alpha: &ScalarField,
    epsilon: f64,
    q: Vec3,
) -> Result<f64, GeometryError> {
    manufactured_rhs_with_step(surface, u, beta, alpha, epsilon, q, fd_step(surface))
}

pub fn manufactured_rhs_with_step(
    surface: &ImplicitSurface,
    u: &ScalarField,
    beta: &VectorField,
    alpha: &ScalarField,
    epsilon: f64,
    q: Vec3,
    h: f64,
) -> Result<f64, GeometryError> {
    let grad = extension_gradient(surface, u, q, h)?;
    let conv = beta.eval(q).dot(&grad);
    let reac = alpha.eval(q) * u.eval(q);
    let diff = if epsilon != 0.0 {
        epsilon * extension_laplacian(surface, u, q, h)?
    } else {
        0.0
    };
    Ok(conv + reac - diff)
}
