//! Extraction of the piecewise planar discrete surface from nodal
//! level-set values by marching tetrahedra, together with the edge
//! adjacency between cut polygons and a degree-2 surface quadrature.

use std::collections::HashMap;

use thiserror::Error;

use crate::geometry::{ImplicitSurface, Vec3};
use crate::mesh::BackgroundMesh;

#[derive(Debug, Error)]
pub enum CutError {
    #[error("nodal level-set value is exactly zero (perturbation contract violated)")]
    DegenerateInput,
    #[error("edge pairing failed: {unmatched} polygon sides without a partner")]
    NotWatertight { unmatched: usize },
}

/// Planar polygon cut out of one background tetrahedron by the discrete
/// surface: a triangle or a planar quadrilateral.
#[derive(Debug, Clone)]
pub struct CutPolygon {
    pub parent_tet: u32,
    /// 3 or 4 vertices, counter-clockwise around `normal`.
    pub vertices: Vec<Vec3>,
    /// Background mesh edge (sorted node pair) carrying each vertex; used
    /// for adjacency and watertightness.
    pub vertex_edges: Vec<(u32, u32)>,
    /// Unit normal, oriented along the level-set gradient (outward).
    pub normal: Vec3,
    pub area: f64,
}

impl CutPolygon {
    pub fn centroid(&self) -> Vec3 {
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }
}

/// Shared edge between two cut polygons.
#[derive(Debug, Clone)]
pub struct EdgeRecord {
    /// Indices into the polygon list.
    pub polys: [u32; 2],
    pub segment: [Vec3; 2],
    /// Unit conormals: orthogonal to the segment, tangent to the
    /// respective polygon plane and exterior to it.
    pub conormals: [Vec3; 2],
}

/// The discrete surface: one polygon per cut tetrahedron plus the edge
/// adjacency records.
#[derive(Debug)]
pub struct CutSurfaceMesh {
    pub polygons: Vec<CutPolygon>,
    pub edges: Vec<EdgeRecord>,
}

impl CutSurfaceMesh {
    pub fn total_area(&self) -> f64 {
        self.polygons.iter().map(|p| p.area).sum()
    }
}

/// Relative magnitude below which a nodal value counts as zero and is
/// replaced by `+sigma`, `sigma = ZERO_PERTURBATION * h`.
const ZERO_PERTURBATION: f64 = 1e-12;
/// Polygons with area below `MIN_AREA_FACTOR * h^2` are discarded and
/// their parent tetrahedra deactivated.
const MIN_AREA_FACTOR: f64 = 1e-14;
/// Polygon sides shorter than `MIN_SIDE_FACTOR * h` are degenerate and do
/// not produce edge records (the partner side collapses identically).
const MIN_SIDE_FACTOR: f64 = 1e-7;

/// Level-set values at the background nodes, with exact zeros perturbed to
/// `+sigma` so every tetrahedron has a clean sign pattern.
pub fn sample_level_set(mesh: &BackgroundMesh, surface: &ImplicitSurface) -> Vec<f64> {
    let sigma = ZERO_PERTURBATION * mesh.h();
    (0..mesh.num_nodes() as u32)
        .map(|i| {
            let v = surface.level_set(mesh.node(i));
            if v.abs() < sigma {
                sigma
            } else {
                v
            }
        })
        .collect()
}

/// Intersect one tetrahedron with the zero set of the linear interpolant
/// of its nodal values. Returns `None` when all values share a sign.
///
/// Sign patterns (1,3) and (3,1) give a triangle, (2,2) a planar
/// quadrilateral. A crossing on edge (a,b) sits at the parameter
/// `lambda = phi_a / (phi_a - phi_b)`.
pub fn marching_tet(
    parent_tet: u32,
    verts: &[Vec3; 4],
    node_ids: &[u32; 4],
    vals: &[f64; 4],
) -> Result<Option<CutPolygon>, CutError> {
    if vals.contains(&0.0) {
        return Err(CutError::DegenerateInput);
    }
    let neg: Vec<usize> = (0..4).filter(|&i| vals[i] < 0.0).collect();

    let crossing = |i: usize, j: usize| -> (Vec3, (u32, u32)) {
        let lambda = vals[i] / (vals[i] - vals[j]);
        let p = verts[i] + lambda * (verts[j] - verts[i]);
        let key = if node_ids[i] < node_ids[j] {
            (node_ids[i], node_ids[j])
        } else {
            (node_ids[j], node_ids[i])
        };
        (p, key)
    };

    let pairs: Vec<(usize, usize)> = match neg.len() {
        0 | 4 => return Ok(None),
        1 => {
            let m = neg[0];
            (0..4).filter(|&o| o != m).map(|o| (m, o)).collect()
        }
        3 => {
            let m = (0..4).find(|i| !neg.contains(i)).unwrap();
            (0..4).filter(|&o| o != m).map(|o| (m, o)).collect()
        }
        2 => {
            let (a, b) = (neg[0], neg[1]);
            let pos: Vec<usize> = (0..4).filter(|i| !neg.contains(i)).collect();
            let (c, d) = (pos[0], pos[1]);
            // Cyclic order: consecutive crossings share a tetrahedron face.
            vec![(a, c), (a, d), (b, d), (b, c)]
        }
        _ => unreachable!(),
    };

    let mut vertices = Vec::with_capacity(pairs.len());
    let mut vertex_edges = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        let (p, key) = crossing(i, j);
        vertices.push(p);
        vertex_edges.push(key);
    }

    // Normal from the vertex fan, sign-fixed against the gradient of the
    // linear interpolant (which points from negative to positive values).
    let centroid = vertices.iter().sum::<Vec3>() / vertices.len() as f64;
    let mut raw = Vec3::zeros();
    for k in 0..vertices.len() {
        let a = vertices[k] - centroid;
        let b = vertices[(k + 1) % vertices.len()] - centroid;
        raw += a.cross(&b);
    }
    let grad = interpolant_gradient(verts, vals);
    if raw.dot(&grad) < 0.0 {
        vertices.reverse();
        vertex_edges.reverse();
        raw = -raw;
    }
    let area = raw.norm() / 2.0;
    let normal = if area > 0.0 {
        raw / raw.norm()
    } else {
        let g = grad.norm();
        if g > 0.0 {
            grad / g
        } else {
            Vec3::z()
        }
    };

    Ok(Some(CutPolygon {
        parent_tet,
        vertices,
        vertex_edges,
        normal,
        area,
    }))
}

/// Constant gradient of the linear interpolant of nodal values on a
/// tetrahedron.
fn interpolant_gradient(verts: &[Vec3; 4], vals: &[f64; 4]) -> Vec3 {
    let m = nalgebra::Matrix3::from_rows(&[
        (verts[1] - verts[0]).transpose(),
        (verts[2] - verts[0]).transpose(),
        (verts[3] - verts[0]).transpose(),
    ]);
    let dv = Vec3::new(vals[1] - vals[0], vals[2] - vals[0], vals[3] - vals[0]);
    m.try_inverse().map(|mi| mi * dv).unwrap_or_else(Vec3::zeros)
}

/// March all tetrahedra and build the watertight cut surface with edge
/// adjacency. Polygons are ordered by parent tetrahedron id.
pub fn build_cut_surface(mesh: &BackgroundMesh, values: &[f64]) -> Result<CutSurfaceMesh, CutError> {
    assert_eq!(values.len(), mesh.num_nodes());
    let h = mesh.h();
    let min_area = MIN_AREA_FACTOR * h * h;
    let min_side = MIN_SIDE_FACTOR * h;

    let mut polygons = Vec::new();
    for t in 0..mesh.num_tets() as u32 {
        let ids = mesh.tet(t);
        let verts = mesh.tet_vertices(t);
        let vals = [
            values[ids[0] as usize],
            values[ids[1] as usize],
            values[ids[2] as usize],
            values[ids[3] as usize],
        ];
        if let Some(poly) = marching_tet(t, &verts, &ids, &vals)? {
            if poly.area >= min_area {
                polygons.push(poly);
            }
        }
    }

    // Pair polygon sides through their background-edge keys. A side is
    // identified by the unordered pair of mesh edges carrying its two
    // endpoints; the neighbor across a tet face produces the same pair.
    type SideKey = ((u32, u32), (u32, u32));
    let mut open: HashMap<SideKey, (u32, usize)> = HashMap::new();
    let mut edges: Vec<EdgeRecord> = Vec::new();

    for (pi, poly) in polygons.iter().enumerate() {
        let nv = poly.vertices.len();
        for k in 0..nv {
            let k1 = (k + 1) % nv;
            if (poly.vertices[k1] - poly.vertices[k]).norm() < min_side {
                continue;
            }
            let (ea, eb) = (poly.vertex_edges[k], poly.vertex_edges[k1]);
            let key: SideKey = if ea <= eb { (ea, eb) } else { (eb, ea) };
            match open.remove(&key) {
                None => {
                    open.insert(key, (pi as u32, k));
                }
                Some((pj, kj)) => {
                    let other = &polygons[pj as usize];
                    let seg = [other.vertices[kj], other.vertices[(kj + 1) % other.vertices.len()]];
                    let co_a = conormal(other, seg);
                    let co_b = conormal(poly, seg);
                    edges.push(EdgeRecord {
                        polys: [pj, pi as u32],
                        segment: seg,
                        conormals: [co_a, co_b],
                    });
                }
            }
        }
    }
    // Unbounded surfaces (planes) are truncated by the box: sides on the
    // box boundary legitimately have no partner. Anything else unmatched
    // signals an extraction bug.
    let tol = 1e-9 * h;
    let on_boundary = |p: Vec3| {
        (0..3).any(|a| {
            (p[a] - mesh.bbox.min[a]).abs() <= tol || (p[a] - mesh.bbox.max[a]).abs() <= tol
        })
    };
    let unmatched = open
        .values()
        .filter(|(pi, k)| {
            let poly = &polygons[*pi as usize];
            let a = poly.vertices[*k];
            let b = poly.vertices[(*k + 1) % poly.vertices.len()];
            !(on_boundary(a) && on_boundary(b))
        })
        .count();
    if unmatched > 0 {
        return Err(CutError::NotWatertight { unmatched });
    }

    Ok(CutSurfaceMesh { polygons, edges })
}

/// Unit vector orthogonal to `seg`, tangent to the plane of `poly` and
/// pointing away from its centroid.
fn conormal(poly: &CutPolygon, seg: [Vec3; 2]) -> Vec3 {
    let t = (seg[1] - seg[0]).normalize();
    let mut nu = poly.normal.cross(&t);
    let mid = (seg[0] + seg[1]) / 2.0;
    if nu.dot(&(mid - poly.centroid())) < 0.0 {
        nu = -nu;
    }
    nu
}

/// Quadrature points and weights on the cut polygons, stored contiguously
/// with per-polygon offsets.
#[derive(Debug)]
pub struct SurfaceQuadrature {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
    offsets: Vec<usize>,
}

impl SurfaceQuadrature {
    /// Points and weights belonging to polygon `i`.
    pub fn polygon(&self, i: usize) -> (&[Vec3], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.points[r.clone()], &self.weights[r])
    }

    pub fn num_polygons(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Degree-2 rule on one polygon: fan-triangulate from the centroid and put
/// a 3-point rule on each triangle. Exact for quadratics in the plane.
pub fn polygon_quadrature(poly: &CutPolygon) -> (Vec<Vec3>, Vec<f64>) {
    polygon_quadrature_subdivided(poly, 1)
}

/// Same rule with every fan triangle split into `k^2` congruent
/// subtriangles (used by the refined-quadrature cross checks).
pub fn polygon_quadrature_subdivided(poly: &CutPolygon, k: usize) -> (Vec<Vec3>, Vec<f64>) {
    let c = poly.centroid();
    let nv = poly.vertices.len();
    let mut points = Vec::with_capacity(3 * nv * k * k);
    let mut weights = Vec::with_capacity(3 * nv * k * k);
    let mut emit = |t: [Vec3; 3]| {
        let area = (t[1] - t[0]).cross(&(t[2] - t[0])).norm() / 2.0;
        let w = area / 3.0;
        // Interior degree-2 points at barycentric (2/3, 1/6, 1/6).
        points.push((4.0 * t[0] + t[1] + t[2]) / 6.0);
        points.push((4.0 * t[1] + t[0] + t[2]) / 6.0);
        points.push((4.0 * t[2] + t[0] + t[1]) / 6.0);
        weights.extend_from_slice(&[w, w, w]);
    };
    for s in 0..nv {
        let a = poly.vertices[s];
        let b = poly.vertices[(s + 1) % nv];
        let map =
            |i: usize, j: usize| c + (i as f64 / k as f64) * (a - c) + (j as f64 / k as f64) * (b - c);
        for i in 0..k {
            for j in 0..(k - i) {
                emit([map(i, j), map(i + 1, j), map(i, j + 1)]);
                if j < k - i - 1 {
                    emit([map(i + 1, j), map(i + 1, j + 1), map(i, j + 1)]);
                }
            }
        }
    }
    (points, weights)
}

/// Quadrature for the whole cut surface, polygon by polygon.
pub fn build_quadrature(cuts: &CutSurfaceMesh) -> SurfaceQuadrature {
    build_quadrature_refined(cuts, 1)
}

/// Quadrature with `k`-fold subdivided fan triangles on every polygon.
pub fn build_quadrature_refined(cuts: &CutSurfaceMesh, k: usize) -> SurfaceQuadrature {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut offsets = Vec::with_capacity(cuts.polygons.len() + 1);
    offsets.push(0);
    for poly in &cuts.polygons {
        let (p, w) = polygon_quadrature_subdivided(poly, k);
        points.extend_from_slice(&p);
        weights.extend_from_slice(&w);
        offsets.push(points.len());
    }
    SurfaceQuadrature {
        points,
        weights,
        offsets,
    }
}
