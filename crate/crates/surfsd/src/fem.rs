//! Discrete coefficients, stabilization parameters and assembly of the
//! stabilized system.
//!
//! The bilinear form is `A_h = a_h + s_h1 + s_h2` with
//!
//! * `a_h(v,w)   = (b . grad_S v, w) + (a v, w) + eps (grad_S v, grad_S w)`
//!   integrated over the cut polygons,
//! * `s_h1(v,w)  = tau1 h (b . grad_S v + a v, b . grad_S w)` over the cut
//!   polygons (streamline diffusion; note the reaction term sits in the
//!   trial slot only, so the form is not symmetric for a != 0),
//! * `s_h2(v,w)  = tau2 h^gamma (n_h . grad v, n_h . grad w)` over the
//!   full active tetrahedra (normal-gradient stabilization),
//!
//! where `grad_S` is the tangential gradient on the discrete surface and
//! `n_h` the cut-polygon normal of the element.

use thiserror::Error;

use crate::cut::{CutSurfaceMesh, SurfaceQuadrature};
use crate::geometry::{GeometryError, ImplicitSurface, ScalarField, Vec3, VectorField};
use crate::linalg::{CsrMatrix, Triplet};
use crate::mesh::{ActiveMesh, BackgroundMesh};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("gamma must lie in [0, 2), got {0}")]
    InvalidGamma(f64),
    #[error("invalid stabilization parameters: {0}")]
    InvalidParams(String),
    #[error(
        "convection field is not tangential: |n . beta| = {residual:.3e} > {tol:.3e} at a node foot"
    )]
    NotTangential { residual: f64, tol: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// All method dials: diffusion, streamline-diffusion weight and the
/// normal-gradient penalty.
#[derive(Debug, Clone, Copy)]
pub struct StabilizationParams {
    pub epsilon: f64,
    pub c_tau: f64,
    pub beta_inf: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub gamma: f64,
    pub h: f64,
}

/// How to pick the normal-stabilization coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tau2Choice {
    /// `tau2 = 1/tau1` (the reference choice).
    InverseTau1,
    Fixed(f64),
}

/// `tau1 = c_tau * min(1/beta_inf, h/eps)`: the streamline-diffusion
/// weight switches between the high Peclet regime (`beta_inf h >= eps`)
/// and the low Peclet regime.
pub fn compute_tau1(c_tau: f64, beta_inf: f64, h: f64, epsilon: f64) -> f64 {
    if c_tau == 0.0 {
        return 0.0;
    }
    let inv_beta = if beta_inf > 0.0 {
        1.0 / beta_inf
    } else {
        f64::INFINITY
    };
    let h_over_eps = if epsilon > 0.0 {
        h / epsilon
    } else {
        f64::INFINITY
    };
    let m = inv_beta.min(h_over_eps);
    if m.is_finite() {
        c_tau * m
    } else {
        0.0
    }
}

impl StabilizationParams {
    pub fn new(
        epsilon: f64,
        c_tau: f64,
        gamma: f64,
        tau2: Tau2Choice,
        beta_inf: f64,
        h: f64,
    ) -> Result<Self, FemError> {
        if !(0.0..2.0).contains(&gamma) {
            return Err(FemError::InvalidGamma(gamma));
        }
        if c_tau < 0.0 || epsilon < 0.0 || beta_inf < 0.0 || h.is_nan() || h <= 0.0 {
            return Err(FemError::InvalidParams(format!(
                "need c_tau >= 0, epsilon >= 0, beta_inf >= 0, h > 0 (got {c_tau}, {epsilon}, {beta_inf}, {h})"
            )));
        }
        let tau1 = compute_tau1(c_tau, beta_inf, h, epsilon);
        let tau2 = match tau2 {
            Tau2Choice::Fixed(v) => {
                if v <= 0.0 {
                    return Err(FemError::InvalidParams(format!(
                        "tau2 must be positive, got {v}"
                    )));
                }
                v
            }
            Tau2Choice::InverseTau1 => {
                if tau1 > 0.0 {
                    1.0 / tau1
                } else {
                    return Err(FemError::InvalidParams(
                        "tau2 = inv-tau1 requires tau1 > 0; set tau2 explicitly".into(),
                    ));
                }
            }
        };
        Ok(Self {
            epsilon,
            c_tau,
            beta_inf,
            tau1,
            tau2,
            gamma,
            h,
        })
    }
}

/// P1 basis data of one tetrahedron: constant gradients, barycentric
/// evaluation and the volume.
#[derive(Debug, Clone)]
pub struct TetBasis {
    origin: Vec3,
    inv: nalgebra::Matrix3<f64>,
    pub grads: [Vec3; 4],
    pub volume: f64,
}

impl TetBasis {
    pub fn new(verts: &[Vec3; 4]) -> Self {
        let m = nalgebra::Matrix3::from_columns(&[
            verts[1] - verts[0],
            verts[2] - verts[0],
            verts[3] - verts[0],
        ]);
        let det = m.determinant();
        let inv = m.try_inverse().expect("degenerate tetrahedron");
        let g1 = Vec3::new(inv[(0, 0)], inv[(0, 1)], inv[(0, 2)]);
        let g2 = Vec3::new(inv[(1, 0)], inv[(1, 1)], inv[(1, 2)]);
        let g3 = Vec3::new(inv[(2, 0)], inv[(2, 1)], inv[(2, 2)]);
        TetBasis {
            origin: verts[0],
            inv,
            grads: [-(g1 + g2 + g3), g1, g2, g3],
            volume: det.abs() / 6.0,
        }
    }

    /// Values of the four nodal basis functions at `x`.
    pub fn eval(&self, x: Vec3) -> [f64; 4] {
        let lam = self.inv * (x - self.origin);
        [1.0 - lam.x - lam.y - lam.z, lam.x, lam.y, lam.z]
    }
}

/// Project a gradient onto the plane orthogonal to `n`.
#[inline]
pub fn tangential(g: Vec3, n: Vec3) -> Vec3 {
    g - n * n.dot(&g)
}

/// Nodal approximations of the coefficients: values of the pullbacks
/// `a o p` and `b o p` at the active nodes. Evaluation interpolates the
/// nodal values and projects the convection field with the element normal,
/// so `n_h . beta_h = 0` holds exactly at every quadrature point.
#[derive(Debug)]
pub struct CoefficientField {
    alpha: Vec<f64>,
    beta: Vec<Vec3>,
}

impl CoefficientField {
    pub fn alpha_at(&self, dofs: &[u32; 4], phi: &[f64; 4]) -> f64 {
        (0..4).map(|i| phi[i] * self.alpha[dofs[i] as usize]).sum()
    }

    /// Nodal interpolation without the tangential projection.
    pub fn beta_raw_at(&self, dofs: &[u32; 4], phi: &[f64; 4]) -> Vec3 {
        (0..4)
            .map(|i| phi[i] * self.beta[dofs[i] as usize])
            .sum::<Vec3>()
    }

    pub fn beta_at(&self, dofs: &[u32; 4], phi: &[f64; 4], n_h: Vec3) -> Vec3 {
        tangential(self.beta_raw_at(dofs, phi), n_h)
    }

    pub fn max_abs_alpha(&self) -> f64 {
        self.alpha.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn alpha_nodal(&self) -> &[f64] {
        &self.alpha
    }
}

/// Everything the assembly loops need, bundled.
#[derive(Clone, Copy)]
pub struct Discretization<'a> {
    pub mesh: &'a BackgroundMesh,
    pub active: &'a ActiveMesh,
    pub cuts: &'a CutSurfaceMesh,
    pub quad: &'a SurfaceQuadrature,
}

/// Sup norm of the convection field sampled through the closest-point map
/// at all surface quadrature points.
pub fn beta_sup_norm(
    disc: &Discretization,
    surface: &ImplicitSurface,
    beta: &VectorField,
) -> Result<f64, GeometryError> {
    let mut sup: f64 = 0.0;
    for x in &disc.quad.points {
        let foot = surface.project(*x)?.foot;
        sup = sup.max(beta.eval(foot).norm());
    }
    Ok(sup)
}

/// Interpolate the coefficient pullbacks at the active nodes, checking
/// that the convection field is tangential at the node feet.
pub fn build_coefficients(
    alpha: &ScalarField,
    beta: &VectorField,
    surface: &ImplicitSurface,
    mesh: &BackgroundMesh,
    active: &ActiveMesh,
    beta_inf: f64,
) -> Result<CoefficientField, FemError> {
    let n = active.num_dofs();
    let mut alpha_nodal = Vec::with_capacity(n);
    let mut beta_nodal = Vec::with_capacity(n);
    let tol = 1e-8 * beta_inf;
    for dof in 0..n as u32 {
        let x = mesh.node(active.node_of_dof(dof));
        let cp = surface.project(x)?;
        let b = beta.eval(cp.foot);
        if beta_inf > 0.0 {
            let residual = cp.normal.dot(&b).abs();
            if residual > tol {
                return Err(FemError::NotTangential { residual, tol });
            }
        }
        alpha_nodal.push(alpha.eval(cp.foot));
        beta_nodal.push(b);
    }
    Ok(CoefficientField {
        alpha: alpha_nodal,
        beta: beta_nodal,
    })
}

/// Convection + reaction + diffusion form on the cut polygons. Matrix
/// convention: entry (i, j) carries the form applied to (trial j, test i).
pub fn assemble_ah(disc: &Discretization, coeffs: &CoefficientField, epsilon: f64) -> Vec<Triplet> {
    let mut triplets = Vec::new();
    for (pi, poly) in disc.cuts.polygons.iter().enumerate() {
        let basis = TetBasis::new(&disc.mesh.tet_vertices(poly.parent_tet));
        let dofs = disc.active.tet_dofs(disc.mesh, poly.parent_tet);
        let n = poly.normal;
        let tg: [Vec3; 4] = std::array::from_fn(|i| tangential(basis.grads[i], n));
        let (pts, wts) = disc.quad.polygon(pi);
        for (x, &w) in pts.iter().zip(wts) {
            let phi = basis.eval(*x);
            let alpha_q = coeffs.alpha_at(&dofs, &phi);
            let beta_q = coeffs.beta_at(&dofs, &phi, n);
            for i in 0..4 {
                for j in 0..4 {
                    let conv = beta_q.dot(&tg[j]) * phi[i];
                    let mass = alpha_q * phi[j] * phi[i];
                    let diff = epsilon * tg[j].dot(&tg[i]);
                    triplets.push((dofs[i], dofs[j], w * (conv + mass + diff)));
                }
            }
        }
    }
    triplets
}

/// Streamline-diffusion stabilization on the cut polygons.
pub fn assemble_sh1(
    disc: &Discretization,
    coeffs: &CoefficientField,
    tau1: f64,
    h: f64,
) -> Vec<Triplet> {
    let mut triplets = Vec::new();
    if tau1 == 0.0 {
        return triplets;
    }
    let scale = tau1 * h;
    for (pi, poly) in disc.cuts.polygons.iter().enumerate() {
        let basis = TetBasis::new(&disc.mesh.tet_vertices(poly.parent_tet));
        let dofs = disc.active.tet_dofs(disc.mesh, poly.parent_tet);
        let n = poly.normal;
        let tg: [Vec3; 4] = std::array::from_fn(|i| tangential(basis.grads[i], n));
        let (pts, wts) = disc.quad.polygon(pi);
        for (x, &w) in pts.iter().zip(wts) {
            let phi = basis.eval(*x);
            let alpha_q = coeffs.alpha_at(&dofs, &phi);
            let beta_q = coeffs.beta_at(&dofs, &phi, n);
            let stream: [f64; 4] = std::array::from_fn(|i| beta_q.dot(&tg[i]));
            for i in 0..4 {
                for j in 0..4 {
                    triplets.push((
                        dofs[i],
                        dofs[j],
                        w * scale * (stream[j] + alpha_q * phi[j]) * stream[i],
                    ));
                }
            }
        }
    }
    triplets
}

/// Normal-gradient stabilization over the full active tetrahedra; the
/// element normal is its cut polygon's normal, and P1 gradients are
/// constant, so each element contributes
/// `tau2 h^gamma vol(T) (n . grad phi_j)(n . grad phi_i)`.
pub fn assemble_sh2(disc: &Discretization, tau2: f64, gamma: f64, h: f64) -> Vec<Triplet> {
    let mut triplets = Vec::new();
    let scale = tau2 * h.powf(gamma);
    for poly in &disc.cuts.polygons {
        let basis = TetBasis::new(&disc.mesh.tet_vertices(poly.parent_tet));
        let dofs = disc.active.tet_dofs(disc.mesh, poly.parent_tet);
        let n = poly.normal;
        let d: [f64; 4] = std::array::from_fn(|i| n.dot(&basis.grads[i]));
        let factor = scale * basis.volume;
        for i in 0..4 {
            for j in 0..4 {
                triplets.push((dofs[i], dofs[j], factor * d[j] * d[i]));
            }
        }
    }
    triplets
}

/// Load vector: `(f^e, v) + tau1 h (f^e, b . grad_S v)` with the same
/// quadrature as the bilinear forms.
pub fn assemble_rhs(
    disc: &Discretization,
    coeffs: &CoefficientField,
    f_ext: impl Fn(Vec3) -> Result<f64, GeometryError>,
    tau1: f64,
    h: f64,
) -> Result<Vec<f64>, FemError> {
    let mut rhs = vec![0.0; disc.active.num_dofs()];
    for (pi, poly) in disc.cuts.polygons.iter().enumerate() {
        let basis = TetBasis::new(&disc.mesh.tet_vertices(poly.parent_tet));
        let dofs = disc.active.tet_dofs(disc.mesh, poly.parent_tet);
        let n = poly.normal;
        let tg: [Vec3; 4] = std::array::from_fn(|i| tangential(basis.grads[i], n));
        let (pts, wts) = disc.quad.polygon(pi);
        for (x, &w) in pts.iter().zip(wts) {
            let phi = basis.eval(*x);
            let beta_q = coeffs.beta_at(&dofs, &phi, n);
            let f_q = f_ext(*x)?;
            for i in 0..4 {
                rhs[dofs[i] as usize] += w * f_q * (phi[i] + tau1 * h * beta_q.dot(&tg[i]));
            }
        }
    }
    Ok(rhs)
}

/// Weights of the mean-value constraint: `M_i = int_S phi_i`.
pub fn assemble_mean_weights(disc: &Discretization) -> Vec<f64> {
    let mut m = vec![0.0; disc.active.num_dofs()];
    for (pi, poly) in disc.cuts.polygons.iter().enumerate() {
        let basis = TetBasis::new(&disc.mesh.tet_vertices(poly.parent_tet));
        let dofs = disc.active.tet_dofs(disc.mesh, poly.parent_tet);
        let (pts, wts) = disc.quad.polygon(pi);
        for (x, &w) in pts.iter().zip(wts) {
            let phi = basis.eval(*x);
            for i in 0..4 {
                m[dofs[i] as usize] += w * phi[i];
            }
        }
    }
    m
}

/// Sparse stiffness matrix, load vector and optional mean-value
/// constraint. With the constraint active the solved system is the
/// Lagrange-multiplier augmentation `[[A, M], [M^T, 0]]`.
#[derive(Debug)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constraint: Option<Vec<f64>>,
}

impl LinearSystem {
    pub fn n_dofs(&self) -> usize {
        self.matrix.dim()
    }

    /// Dimension including the multiplier row when constrained.
    pub fn n_total(&self) -> usize {
        self.matrix.dim() + usize::from(self.constraint.is_some())
    }
}

/// Full assembly: `A = a_h + s_h1 + s_h2`, load vector and, when
/// requested, the zero-mean constraint (the weak problem fixes the mean
/// when the reaction coefficient vanishes).
///
/// The constraint row/column is rescaled to the magnitude of the matrix
/// diagonal; this leaves the constrained solution unchanged (only the
/// multiplier rescales) and keeps the augmented system well balanced for
/// the iterative solver.
pub fn assemble_system(
    disc: &Discretization,
    coeffs: &CoefficientField,
    params: &StabilizationParams,
    f_ext: impl Fn(Vec3) -> Result<f64, GeometryError>,
    mean_constraint: bool,
) -> Result<LinearSystem, FemError> {
    let mut triplets = assemble_ah(disc, coeffs, params.epsilon);
    triplets.extend(assemble_sh1(disc, coeffs, params.tau1, params.h));
    triplets.extend(assemble_sh2(disc, params.tau2, params.gamma, params.h));
    let matrix = CsrMatrix::from_triplets(disc.active.num_dofs(), triplets);
    let rhs = assemble_rhs(disc, coeffs, f_ext, params.tau1, params.h)?;
    let constraint = mean_constraint.then(|| {
        let mut m = assemble_mean_weights(disc);
        let diag_scale = matrix
            .diagonal()
            .iter()
            .fold(0.0f64, |acc, d| acc.max(d.abs()));
        let m_scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if diag_scale > 0.0 && m_scale > 0.0 {
            let s = diag_scale / m_scale;
            for v in &mut m {
                *v *= s;
            }
        }
        m
    });
    Ok(LinearSystem {
        matrix,
        rhs,
        constraint,
    })
}

/// Largest jump of the conormal component of the discrete convection field
/// across polygon edges, `max |nu1 . beta_h + nu2 . beta_h|`, sampled at
/// the endpoints and midpoint of each shared segment. For smooth
/// tangential fields this decays like h^2.
pub fn beta_jump_max(disc: &Discretization, coeffs: &CoefficientField) -> f64 {
    let mut worst: f64 = 0.0;
    for rec in &disc.cuts.edges {
        let mid = (rec.segment[0] + rec.segment[1]) / 2.0;
        for sample in [rec.segment[0], mid, rec.segment[1]] {
            let mut jump = 0.0;
            for (side, &pi) in rec.polys.iter().enumerate() {
                let poly = &disc.cuts.polygons[pi as usize];
                let basis = TetBasis::new(&disc.mesh.tet_vertices(poly.parent_tet));
                let dofs = disc.active.tet_dofs(disc.mesh, poly.parent_tet);
                let phi = basis.eval(sample);
                let beta_q = coeffs.beta_at(&dofs, &phi, poly.normal);
                jump += rec.conormals[side].dot(&beta_q);
            }
            worst = worst.max(jump.abs());
        }
    }
    worst
}

/// Smallest element value of `alpha_h - div_S(beta_h)/2` at polygon
/// centroids (the discrete counterpart of the positivity assumption on the
/// reaction-convection balance).
pub fn min_alpha_minus_half_div(disc: &Discretization, coeffs: &CoefficientField) -> f64 {
    let mut min_val = f64::INFINITY;
    for poly in &disc.cuts.polygons {
        let basis = TetBasis::new(&disc.mesh.tet_vertices(poly.parent_tet));
        let dofs = disc.active.tet_dofs(disc.mesh, poly.parent_tet);
        let n = poly.normal;
        let p = nalgebra::Matrix3::identity() - n * n.transpose();
        // Gradient matrix of the nodal field: sum_a beta_a (grad phi_a)^T.
        let mut grad_beta = nalgebra::Matrix3::zeros();
        for (dof, grad) in dofs.iter().zip(&basis.grads) {
            grad_beta += coeffs.beta[*dof as usize] * grad.transpose();
        }
        let div_s = (grad_beta * p).trace();
        let c = poly.centroid();
        let phi = basis.eval(c);
        let val = coeffs.alpha_at(&dofs, &phi) - 0.5 * div_s;
        min_val = min_val.min(val);
    }
    min_val
}
