//! Built-in experiment problems and resolution of inline problem
//! definitions into evaluable fields.

use crate::cli::config::{ConfigError, RunConfig, SurfaceConfig};
use crate::cli::expr::Expr;
use crate::geometry::{ImplicitSurface, ScalarField, Vec3, VectorField};

/// A fully resolved problem: surface, coefficients, right-hand side and
/// (when known) the exact solution.
#[derive(Debug, Clone)]
pub struct Problem {
    pub surface: ImplicitSurface,
    pub alpha: ScalarField,
    pub beta: VectorField,
    pub u_exact: Option<ScalarField>,
    pub rhs: ProblemRhs,
    pub reference_range: Option<(f64, f64)>,
    /// None = automatic (constraint on exactly when alpha vanishes).
    pub mean_constraint: Option<bool>,
}

/// Right-hand side: an ambient analytic expression pulled back to the
/// surface, or manufactured by applying the operator to the exact
/// solution.
#[derive(Debug, Clone)]
pub enum ProblemRhs {
    Analytic(ScalarField),
    Manufactured,
}

impl Problem {
    /// The same problem in translated coordinates: surface and all fields
    /// shift together, so the discrete problem sees the identical PDE at a
    /// different position relative to the background mesh (cut-position
    /// robustness studies).
    pub fn translated(&self, offset: Vec3) -> Problem {
        let shift_scalar = |f: &ScalarField| {
            let f = f.clone();
            ScalarField::new(move |x| f.eval(x - offset))
        };
        let beta = self.beta.clone();
        let tangential = beta.is_tangential();
        Problem {
            surface: self.surface.translated(offset),
            alpha: shift_scalar(&self.alpha),
            beta: VectorField::new(move |x| beta.eval(x - offset), tangential),
            u_exact: self.u_exact.as_ref().map(&shift_scalar),
            rhs: match &self.rhs {
                ProblemRhs::Analytic(f) => ProblemRhs::Analytic(shift_scalar(f)),
                ProblemRhs::Manufactured => ProblemRhs::Manufactured,
            },
            reference_range: self.reference_range,
            mean_constraint: self.mean_constraint,
        }
    }
}

/// Smooth convection-diffusion test on the oblate spheroid with a
/// rotational velocity field and a fabricated polynomial solution.
fn spheroid_smooth() -> Problem {
    Problem {
        surface: ImplicitSurface::spheroid(Vec3::new(0.5, 0.5, 0.5), 0.5, 0.25).unwrap(),
        alpha: ScalarField::constant(0.0),
        beta: VectorField::new(|x| Vec3::new(0.5 - x.y, x.x - 0.5, 0.0), true),
        u_exact: Some(ScalarField::new(|x| {
            100.0 * (x.x - 0.5) * (x.y - 0.5) * (x.z - 0.5)
        })),
        rhs: ProblemRhs::Manufactured,
        reference_range: None,
        mean_constraint: None,
    }
}

/// Convection-reaction with a discontinuous source on a nearly spherical
/// spheroid; the source switches on above z = 0.55, creating an interior
/// layer transported along circular streamlines.
fn spheroid_layer() -> Problem {
    Problem {
        surface: ImplicitSurface::spheroid(Vec3::new(0.5, 0.5, 0.5), 0.5, 0.45).unwrap(),
        alpha: ScalarField::constant(1.0),
        beta: VectorField::new(|x| Vec3::new(5.0 - 10.0 * x.y, 10.0 * x.x - 5.0, 0.0), true),
        u_exact: None,
        rhs: ProblemRhs::Analytic(ScalarField::new(|x| if x.z > 0.55 { 1.0 } else { 0.0 })),
        reference_range: Some((0.0, 1.0)),
        mean_constraint: Some(false),
    }
}

/// Exact-geometry patch test: a plane with a linear solution that the
/// method must reproduce to machine precision.
fn plane_patch() -> Problem {
    Problem {
        surface: ImplicitSurface::plane(Vec3::new(0.0, 0.0, 0.31), Vec3::new(0.0, 0.0, 1.0))
            .unwrap(),
        alpha: ScalarField::constant(1.0),
        beta: VectorField::constant(Vec3::new(0.4, 0.2, 0.0), true),
        u_exact: Some(ScalarField::new(|x| 1.0 + 2.0 * x.x - 3.0 * x.y)),
        rhs: ProblemRhs::Manufactured,
        reference_range: None,
        mean_constraint: Some(false),
    }
}

fn surface_from_config(cfg: &SurfaceConfig) -> Result<ImplicitSurface, ConfigError> {
    let center = cfg.center.unwrap_or([0.5, 0.5, 0.5]);
    let center = Vec3::new(center[0], center[1], center[2]);
    let build = match cfg.kind.as_str() {
        "sphere" => ImplicitSurface::sphere(center, cfg.radius.unwrap()),
        "spheroid" => ImplicitSurface::spheroid(center, cfg.r_max.unwrap(), cfg.r_min.unwrap()),
        "plane" => {
            let p = cfg.point.unwrap();
            let n = cfg.normal.unwrap();
            ImplicitSurface::plane(Vec3::new(p[0], p[1], p[2]), Vec3::new(n[0], n[1], n[2]))
        }
        _ => unreachable!("validated"),
    };
    build.map_err(|e| ConfigError::Invalid {
        key: "surface".into(),
        reason: e.to_string(),
    })
}

fn parse_scalar(key: &str, text: &str) -> Result<ScalarField, ConfigError> {
    let expr = Expr::parse(text).map_err(|e| ConfigError::Expression {
        key: key.into(),
        reason: e.to_string(),
    })?;
    Ok(ScalarField::new(move |x| expr.eval(x)))
}

fn parse_vector(key: &str, comps: &[String; 3]) -> Result<VectorField, ConfigError> {
    let mut exprs = Vec::with_capacity(3);
    for (i, c) in comps.iter().enumerate() {
        exprs.push(Expr::parse(c).map_err(|e| ConfigError::Expression {
            key: format!("{key}[{i}]"),
            reason: e.to_string(),
        })?);
    }
    let [ex, ey, ez]: [Expr; 3] = exprs.try_into().unwrap();
    Ok(VectorField::new(
        move |x| Vec3::new(ex.eval(x), ey.eval(x), ez.eval(x)),
        true,
    ))
}

/// Resolve the problem section: a named built-in, optionally overridden
/// field by field, or a fully inline definition.
pub fn resolve_problem(cfg: &RunConfig) -> Result<Problem, ConfigError> {
    let mut problem = match cfg.problem.name.as_deref() {
        Some("spheroid-smooth") => spheroid_smooth(),
        Some("spheroid-layer") => spheroid_layer(),
        Some("plane-patch") => plane_patch(),
        Some(other) => {
            return Err(ConfigError::Invalid {
                key: "problem.name".into(),
                reason: format!(
                    "unknown problem \"{other}\" (spheroid-smooth | spheroid-layer | plane-patch)"
                ),
            })
        }
        None => Problem {
            // Placeholder surface; an inline problem must provide one.
            surface: match &cfg.surface {
                Some(s) => surface_from_config(s)?,
                None => {
                    return Err(ConfigError::Invalid {
                        key: "surface".into(),
                        reason: "inline problems require a [surface] section".into(),
                    })
                }
            },
            alpha: ScalarField::constant(0.0),
            beta: VectorField::constant(Vec3::zeros(), true),
            u_exact: None,
            rhs: ProblemRhs::Manufactured,
            reference_range: None,
            mean_constraint: None,
        },
    };

    // Inline overrides.
    if cfg.problem.name.is_some() {
        if let Some(s) = &cfg.surface {
            problem.surface = surface_from_config(s)?;
        }
    }
    if let Some(a) = &cfg.problem.alpha {
        problem.alpha = parse_scalar("problem.alpha", a)?;
    }
    if let Some(b) = &cfg.problem.beta {
        problem.beta = parse_vector("problem.beta", b)?;
    }
    if let Some(u) = &cfg.problem.u {
        problem.u_exact = Some(parse_scalar("problem.u", u)?);
        problem.rhs = ProblemRhs::Manufactured;
    }
    if let Some(f) = &cfg.problem.f {
        problem.rhs = ProblemRhs::Analytic(parse_scalar("problem.f", f)?);
    }
    if let Some(r) = cfg.problem.reference_range {
        problem.reference_range = Some((r[0], r[1]));
    }
    if cfg.problem.mean_constraint.is_some() {
        problem.mean_constraint = cfg.problem.mean_constraint;
    }

    if matches!(problem.rhs, ProblemRhs::Manufactured) && problem.u_exact.is_none() {
        return Err(ConfigError::Invalid {
            key: "problem".into(),
            reason: "manufactured right-hand side requires problem.u".into(),
        });
    }
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::RunConfig;

    #[test]
    fn named_problems_resolve() {
        for name in ["spheroid-smooth", "spheroid-layer", "plane-patch"] {
            let cfg = RunConfig::parse_str(&format!(
                r#"
                [mesh]
                n = 8
                [problem]
                name = "{name}"
                [stabilization]
                epsilon = 0.0
                c_tau = 0.5
                gamma = 0.0
                tau2 = 1.0
                "#
            ))
            .unwrap();
            assert!(resolve_problem(&cfg).is_ok(), "{name}");
        }
    }

    #[test]
    fn layer_source_is_indicator() {
        let p = spheroid_layer();
        match &p.rhs {
            ProblemRhs::Analytic(f) => {
                assert_eq!(f.eval(Vec3::new(0.5, 0.5, 0.9)), 1.0);
                assert_eq!(f.eval(Vec3::new(0.5, 0.5, 0.55)), 0.0);
                assert_eq!(f.eval(Vec3::new(0.5, 0.5, 0.1)), 0.0);
            }
            _ => panic!("layer problem must have an analytic source"),
        }
    }

    #[test]
    fn inline_problem_with_override() {
        let cfg = RunConfig::parse_str(
            r#"
            [mesh]
            n = 8
            [problem]
            name = "spheroid-smooth"
            alpha = "1"
            [stabilization]
            epsilon = 1e-3
            c_tau = 0.5
            gamma = 1.0
            "#,
        )
        .unwrap();
        let p = resolve_problem(&cfg).unwrap();
        assert_eq!(p.alpha.eval(Vec3::new(0.2, 0.3, 0.4)), 1.0);
        assert!(p.u_exact.is_some());
    }

    #[test]
    fn inline_requires_surface_and_solution() {
        let cfg = RunConfig::parse_str(
            r#"
            [mesh]
            n = 8
            [problem]
            u = "x + y"
            [stabilization]
            epsilon = 1e-3
            c_tau = 0.5
            gamma = 1.0
            "#,
        )
        .unwrap();
        assert!(resolve_problem(&cfg).is_err());
    }
}
