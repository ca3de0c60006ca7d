//! Experiment drivers: single solve, convergence study, condition-number
//! study and the layer study, with CSV/VTK/manifest output.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    compute_errors, eoc, geometry_diagnostics, overshoot_report, ErrorReport, GeometryDiagnostics,
    OvershootReport,
};
use crate::cli::config::{ConfigError, RunConfig};
use crate::cli::problems::{resolve_problem, Problem, ProblemRhs};
use crate::cli::vtk::write_surface_vtk;
use crate::cut::{build_cut_surface, build_quadrature, sample_level_set, CutSurfaceMesh, SurfaceQuadrature};
use crate::error::Error;
use crate::fem::{
    assemble_system, beta_sup_norm, build_coefficients, CoefficientField, Discretization,
    LinearSystem, StabilizationParams, Tau2Choice,
};
use crate::geometry::{manufactured_rhs, Vec3};
use crate::mesh::{build_background_mesh, extract_active_mesh, ActiveMesh, BackgroundMesh, BoundingBox};
use crate::solve::{estimate_condition_number, solve, ConditionEstimate, SolveError, SolveReport};

/// Stabilization dials for one run (the layer study varies them per run).
#[derive(Debug, Clone, Copy)]
pub struct StabSettings {
    pub epsilon: f64,
    pub c_tau: f64,
    pub gamma: f64,
    pub tau2: Tau2Choice,
}

impl StabSettings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            epsilon: cfg.stabilization.epsilon,
            c_tau: cfg.stabilization.c_tau,
            gamma: cfg.stabilization.gamma,
            tau2: cfg.stabilization.tau2.to_choice()?,
        })
    }
}

/// One assembled refinement level.
pub struct DiscreteLevel {
    pub mesh: BackgroundMesh,
    pub active: ActiveMesh,
    pub cuts: CutSurfaceMesh,
    pub quad: SurfaceQuadrature,
    pub coeffs: CoefficientField,
    pub params: StabilizationParams,
    pub system: LinearSystem,
    pub mean_constraint: bool,
}

impl DiscreteLevel {
    pub fn disc(&self) -> Discretization<'_> {
        Discretization {
            mesh: &self.mesh,
            active: &self.active,
            cuts: &self.cuts,
            quad: &self.quad,
        }
    }
}

fn bbox_of(cfg: &RunConfig) -> BoundingBox {
    BoundingBox::new(
        Vec3::new(cfg.mesh.box_min[0], cfg.mesh.box_min[1], cfg.mesh.box_min[2]),
        Vec3::new(cfg.mesh.box_max[0], cfg.mesh.box_max[1], cfg.mesh.box_max[2]),
    )
}

/// The full pipeline for one mesh: background mesh, cut extraction,
/// coefficients, stabilization parameters and the assembled system.
pub fn discretize(
    problem: &Problem,
    bbox: BoundingBox,
    n: usize,
    stab: &StabSettings,
) -> Result<DiscreteLevel, Error> {
    let surface = &problem.surface;
    let mesh = build_background_mesh(bbox, n, surface)?;
    let values = sample_level_set(&mesh, surface);
    let cuts = build_cut_surface(&mesh, &values)?;
    let active = extract_active_mesh(&mesh, &cuts)?;
    let quad = build_quadrature(&cuts);
    let disc = Discretization {
        mesh: &mesh,
        active: &active,
        cuts: &cuts,
        quad: &quad,
    };

    let beta_inf = beta_sup_norm(&disc, surface, &problem.beta)?;
    let params = StabilizationParams::new(
        stab.epsilon,
        stab.c_tau,
        stab.gamma,
        stab.tau2,
        beta_inf,
        mesh.h(),
    )?;
    let coeffs = build_coefficients(
        &problem.alpha,
        &problem.beta,
        surface,
        &mesh,
        &active,
        beta_inf,
    )?;
    let mean_constraint = problem
        .mean_constraint
        .unwrap_or_else(|| coeffs.max_abs_alpha() == 0.0);

    let system = {
        let rhs_fn = rhs_closure(problem, params.epsilon);
        assemble_system(&disc, &coeffs, &params, rhs_fn, mean_constraint)?
    };
    Ok(DiscreteLevel {
        mesh,
        active,
        cuts,
        quad,
        coeffs,
        params,
        system,
        mean_constraint,
    })
}

/// Right-hand side evaluated through the closest-point extension: either
/// the pullback of an analytic source or the operator applied to the
/// fabricated solution at the foot point.
fn rhs_closure<'a>(
    problem: &'a Problem,
    epsilon: f64,
) -> impl Fn(Vec3) -> Result<f64, crate::geometry::GeometryError> + 'a {
    move |x: Vec3| {
        let foot = problem.surface.project(x)?.foot;
        match &problem.rhs {
            ProblemRhs::Analytic(f) => Ok(f.eval(foot)),
            ProblemRhs::Manufactured => {
                let u = problem.u_exact.as_ref().expect("validated");
                manufactured_rhs(&problem.surface, u, &problem.beta, &problem.alpha, epsilon, foot)
            }
        }
    }
}

fn fmt_e(v: f64) -> String {
    format!("{v:.12e}")
}

fn write_manifest(
    path: &Path,
    cfg: &RunConfig,
    derived: &[(&str, String)],
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# resolved run configuration; re-runnable as a config file")?;
    write!(out, "{}", cfg.to_toml())?;
    writeln!(out, "\n# derived quantities (informational)")?;
    for (k, v) in derived {
        writeln!(out, "# {k} = {v}")?;
    }
    out.flush()
}

/// Artifacts of a single solve.
pub struct SolveSummary {
    pub n: usize,
    pub h: f64,
    pub n_dofs: usize,
    pub params: StabilizationParams,
    pub mean_constraint: bool,
    pub report: SolveReport,
    pub errors: Option<ErrorReport>,
    pub geometry: GeometryDiagnostics,
    pub vtk_path: PathBuf,
    pub manifest_path: PathBuf,
}

fn single_n(cfg: &RunConfig) -> Result<usize, ConfigError> {
    cfg.mesh
        .n
        .or_else(|| cfg.mesh.levels.as_ref().and_then(|l| l.first().copied()))
        .ok_or_else(|| ConfigError::Invalid {
            key: "mesh.n".into(),
            reason: "a single run needs mesh.n (or a nonempty mesh.levels)".into(),
        })
}

pub fn run_solve(cfg: &RunConfig, out_dir: &Path) -> Result<SolveSummary, Error> {
    std::fs::create_dir_all(out_dir)?;
    let problem = resolve_problem(cfg)?;
    let stab = StabSettings::from_config(cfg)?;
    let n = single_n(cfg)?;
    let level = discretize(&problem, bbox_of(cfg), n, &stab)?;
    let report = solve(&level.system, cfg.solver.tol, cfg.solver.max_iter)?;

    let errors = match &problem.u_exact {
        Some(u) => Some(compute_errors(
            &report.solution,
            u,
            &problem.surface,
            &level.disc(),
            &level.coeffs,
            &level.params,
        )?),
        None => None,
    };
    let geometry = geometry_diagnostics(&level.disc(), &problem.surface)?;

    let vtk_path = out_dir.join("solution.vtk");
    write_surface_vtk(
        &vtk_path,
        "surfsd solution",
        &level.mesh,
        &level.active,
        &level.cuts,
        &report.solution,
        "u",
    )?;

    let mut derived = vec![
        ("n", n.to_string()),
        ("h", fmt_e(level.mesh.h())),
        ("n_dofs", level.active.num_dofs().to_string()),
        ("beta_inf", fmt_e(level.params.beta_inf)),
        ("tau1", fmt_e(level.params.tau1)),
        ("tau2", fmt_e(level.params.tau2)),
        ("gamma", fmt_e(level.params.gamma)),
        ("mean_constraint", level.mean_constraint.to_string()),
        ("solver_method", report.method.to_string()),
        ("iterations", report.iterations.to_string()),
        ("residual", fmt_e(report.final_residual)),
        ("max_rho", fmt_e(geometry.max_rho)),
        ("max_normal_dev", fmt_e(geometry.max_normal_dev)),
    ];
    if let Some(e) = &errors {
        derived.push(("l2_err", fmt_e(e.l2_err)));
        derived.push(("h1t_err", fmt_e(e.h1t_err)));
        derived.push(("sd_err", fmt_e(e.sd_err)));
        derived.push(("ns_err", fmt_e(e.ns_err)));
        derived.push(("triple_err", fmt_e(e.triple_err)));
    }
    let manifest_path = out_dir.join("manifest.txt");
    write_manifest(&manifest_path, cfg, &derived)?;

    Ok(SolveSummary {
        n,
        h: level.mesh.h(),
        n_dofs: level.active.num_dofs(),
        params: level.params,
        mean_constraint: level.mean_constraint,
        report,
        errors,
        geometry,
        vtk_path,
        manifest_path,
    })
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub level: usize,
    pub n: usize,
    pub h: f64,
    pub n_dofs: usize,
    pub errors: ErrorReport,
    pub eoc_l2: Option<f64>,
    pub eoc_triple: Option<f64>,
}

pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub csv_path: PathBuf,
}

pub fn run_convergence(cfg: &RunConfig, out_dir: &Path) -> Result<ConvergenceTable, Error> {
    std::fs::create_dir_all(out_dir)?;
    let problem = resolve_problem(cfg)?;
    let stab = StabSettings::from_config(cfg)?;
    let levels = cfg.mesh.levels.clone().ok_or_else(|| ConfigError::Invalid {
        key: "mesh.levels".into(),
        reason: "convergence study needs mesh.levels".into(),
    })?;
    if levels.len() < 3 {
        return Err(ConfigError::Invalid {
            key: "mesh.levels".into(),
            reason: format!("need at least 3 levels, got {}", levels.len()),
        }
        .into());
    }
    let u_exact = problem.u_exact.clone().ok_or_else(|| ConfigError::Invalid {
        key: "problem.u".into(),
        reason: "convergence study needs the exact solution".into(),
    })?;

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels.len());
    for (li, &n) in levels.iter().enumerate() {
        let level = discretize(&problem, bbox_of(cfg), n, &stab)?;
        let report = solve(&level.system, cfg.solver.tol, cfg.solver.max_iter)?;
        let errors = compute_errors(
            &report.solution,
            &u_exact,
            &problem.surface,
            &level.disc(),
            &level.coeffs,
            &level.params,
        )?;
        let (eoc_l2, eoc_triple) = match rows.last() {
            Some(prev) => {
                let r_l2 = eoc(
                    &[prev.errors.l2_err, errors.l2_err],
                    &[prev.h, errors.h],
                )?[0];
                let r_tr = eoc(
                    &[prev.errors.triple_err, errors.triple_err],
                    &[prev.h, errors.h],
                )?[0];
                (Some(r_l2), Some(r_tr))
            }
            None => (None, None),
        };
        rows.push(ConvergenceRow {
            level: li,
            n,
            h: errors.h,
            n_dofs: errors.n_dofs,
            errors,
            eoc_l2,
            eoc_triple,
        });
    }

    let csv_path = out_dir.join("convergence.csv");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(
        out,
        "level,n,h,n_dofs,l2_err,h1t_err,sd_err,triple_err,eoc_l2,eoc_triple"
    )?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.level,
            r.n,
            fmt_e(r.h),
            r.n_dofs,
            fmt_e(r.errors.l2_err),
            fmt_e(r.errors.h1t_err),
            fmt_e(r.errors.sd_err),
            fmt_e(r.errors.triple_err),
            r.eoc_l2.map(fmt_e).unwrap_or_else(|| "nan".into()),
            r.eoc_triple.map(fmt_e).unwrap_or_else(|| "nan".into()),
        )?;
    }
    out.flush()?;
    write_manifest(
        &out_dir.join("manifest.txt"),
        cfg,
        &[("levels", format!("{levels:?}"))],
    )?;
    Ok(ConvergenceTable { rows, csv_path })
}

#[derive(Debug, Clone)]
pub struct ConditionRow {
    pub gamma: f64,
    pub n: usize,
    pub h: f64,
    pub offset_id: usize,
    pub estimate: ConditionEstimate,
}

pub struct ConditionTable {
    pub rows: Vec<ConditionRow>,
    pub csv_path: PathBuf,
}

pub fn run_condition(cfg: &RunConfig, out_dir: &Path) -> Result<ConditionTable, Error> {
    std::fs::create_dir_all(out_dir)?;
    let problem = resolve_problem(cfg)?;
    let base_stab = StabSettings::from_config(cfg)?;
    let levels = match (&cfg.mesh.levels, cfg.mesh.n) {
        (Some(l), _) => l.clone(),
        (None, Some(n)) => vec![n],
        (None, None) => unreachable!("validated"),
    };
    let gammas = cfg
        .study
        .gammas
        .clone()
        .unwrap_or_else(|| vec![cfg.stabilization.gamma]);

    let mut rows = Vec::new();
    for &gamma in &gammas {
        for &n in &levels {
            let stab = StabSettings { gamma, ..base_stab };
            let level = discretize(&problem, bbox_of(cfg), n, &stab)?;
            let estimate = estimate_condition_number(&level.system, cfg.solver.estimate_tol)?;
            rows.push(ConditionRow {
                gamma,
                n,
                h: level.mesh.h(),
                offset_id: 0,
                estimate,
            });
        }
    }

    // Random surface-center offsets probing cut-position robustness.
    if cfg.study.offsets > 0 {
        let n = cfg.study.offset_n.unwrap_or(levels[0]);
        let gamma = gammas[0];
        let stab = StabSettings { gamma, ..base_stab };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.study.seed);
        for offset_id in 1..=cfg.study.offsets {
            // Draw first so the sequence is independent of mesh size.
            let cell = (bbox_of(cfg).max - bbox_of(cfg).min) / n as f64;
            let h_cell = cell.norm();
            let draw: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
            let offset = Vec3::new(draw[0], draw[1], draw[2]) * h_cell;
            let shifted = problem.translated(offset);
            let level = discretize(&shifted, bbox_of(cfg), n, &stab)?;
            let estimate = estimate_condition_number(&level.system, cfg.solver.estimate_tol)?;
            rows.push(ConditionRow {
                gamma,
                n,
                h: level.mesh.h(),
                offset_id,
                estimate,
            });
        }
    }

    let csv_path = out_dir.join("condition.csv");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(out, "gamma,n,h,offset_id,kappa,sigma_max,sigma_min")?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_e(r.gamma),
            r.n,
            fmt_e(r.h),
            r.offset_id,
            fmt_e(r.estimate.kappa),
            fmt_e(r.estimate.sigma_max),
            fmt_e(r.estimate.sigma_min),
        )?;
    }
    out.flush()?;
    write_manifest(
        &out_dir.join("manifest.txt"),
        cfg,
        &[
            ("gammas", format!("{gammas:?}")),
            ("levels", format!("{levels:?}")),
            ("seed", cfg.study.seed.to_string()),
            (
                "augmented",
                rows.first()
                    .map(|r| r.estimate.augmented.to_string())
                    .unwrap_or_default(),
            ),
        ],
    )?;
    Ok(ConditionTable { rows, csv_path })
}

#[derive(Debug, Clone)]
pub struct LayerRow {
    pub label: String,
    pub c_tau: f64,
    pub tau2: f64,
    pub gamma: f64,
    pub n: usize,
    pub n_dofs: usize,
    pub overshoot: OvershootReport,
    pub residual: f64,
    pub converged: bool,
}

pub struct LayerTable {
    pub rows: Vec<LayerRow>,
    pub csv_path: PathBuf,
}

/// Default parameter sets mirroring the reference experiment: a properly
/// stabilized run, a nearly unstabilized one and an overstabilized one.
fn default_layer_runs() -> Vec<(String, StabSettings)> {
    vec![
        (
            "reference".into(),
            StabSettings {
                epsilon: 0.0,
                c_tau: 0.5,
                gamma: 0.0,
                tau2: Tau2Choice::InverseTau1,
            },
        ),
        (
            "weak".into(),
            StabSettings {
                epsilon: 0.0,
                c_tau: 0.0,
                gamma: 0.0,
                tau2: Tau2Choice::Fixed(1e-4),
            },
        ),
        (
            "strong".into(),
            StabSettings {
                epsilon: 0.0,
                c_tau: 0.0,
                gamma: 0.0,
                tau2: Tau2Choice::Fixed(1e3),
            },
        ),
    ]
}

pub fn run_layer(cfg: &RunConfig, out_dir: &Path) -> Result<LayerTable, Error> {
    std::fs::create_dir_all(out_dir)?;
    let problem = resolve_problem(cfg)?;
    let n = single_n(cfg)?;
    let runs: Vec<(String, StabSettings)> = match &cfg.study.layer_runs {
        Some(list) => {
            let mut v = Vec::with_capacity(list.len());
            for r in list {
                v.push((
                    r.label.clone(),
                    StabSettings {
                        epsilon: cfg.stabilization.epsilon,
                        c_tau: r.c_tau,
                        gamma: r.gamma,
                        tau2: r.tau2.to_choice()?,
                    },
                ));
            }
            v
        }
        None => default_layer_runs(),
    };
    let (lo, hi) = problem.reference_range.unwrap_or((0.0, 1.0));

    let mut rows = Vec::new();
    for (label, stab) in &runs {
        let level = discretize(&problem, bbox_of(cfg), n, stab)?;
        // Deliberately under-stabilized runs may not reach the tolerance;
        // their best iterate is still the object of study.
        let (solution, residual, converged) =
            match solve(&level.system, cfg.solver.tol, cfg.solver.max_iter) {
                Ok(r) => (r.solution, r.final_residual, true),
                Err(SolveError::NoConvergence { report, .. }) => {
                    let mut s = report.solution;
                    s.truncate(level.system.n_dofs());
                    (s, report.final_residual, false)
                }
                Err(e) => return Err(e.into()),
            };
        let overshoot = overshoot_report(&solution, lo, hi);
        write_surface_vtk(
            &out_dir.join(format!("layer_{label}.vtk")),
            &format!("surfsd layer ({label})"),
            &level.mesh,
            &level.active,
            &level.cuts,
            &solution,
            "u",
        )?;
        rows.push(LayerRow {
            label: label.clone(),
            c_tau: stab.c_tau,
            tau2: level.params.tau2,
            gamma: stab.gamma,
            n,
            n_dofs: level.active.num_dofs(),
            overshoot,
            residual,
            converged,
        });
    }

    let csv_path = out_dir.join("layer.csv");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(
        out,
        "label,c_tau,tau2,gamma,n,n_dofs,min_u,max_u,undershoot,overshoot,residual,converged"
    )?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            fmt_e(r.c_tau),
            fmt_e(r.tau2),
            fmt_e(r.gamma),
            r.n,
            r.n_dofs,
            fmt_e(r.overshoot.min_u),
            fmt_e(r.overshoot.max_u),
            fmt_e(r.overshoot.undershoot),
            fmt_e(r.overshoot.overshoot),
            fmt_e(r.residual),
            r.converged,
        )?;
    }
    out.flush()?;
    write_manifest(
        &out_dir.join("manifest.txt"),
        cfg,
        &[
            ("n", n.to_string()),
            ("reference_range", format!("[{lo}, {hi}]")),
        ],
    )?;
    Ok(LayerTable { rows, csv_path })
}
