//! Structured tetrahedral background mesh and the active submesh of
//! elements cut by the discrete surface.

use std::collections::HashMap;

use thiserror::Error;

use crate::cut::CutSurfaceMesh;
use crate::geometry::{ImplicitSurface, Vec3};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("subdivision count must be at least 1, got {0}")]
    InvalidSubdivision(usize),
    #[error("bounding box is degenerate along axis {0}")]
    DegenerateBox(usize),
    #[error("box does not strictly contain the surface working band")]
    BoxTooSmall,
    #[error("no background element is cut by the surface")]
    EmptySurface,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundingBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl BoundingBox {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0))
    }

    fn contains(&self, lo: Vec3, hi: Vec3) -> bool {
        (0..3).all(|k| self.min[k] <= lo[k] && hi[k] <= self.max[k])
    }
}

/// Uniform tetrahedral mesh of a box: each cubic cell is split into six
/// tetrahedra sharing the cell diagonal (Kuhn split), which makes the
/// triangulation face-to-face consistent across cells.
#[derive(Debug)]
pub struct BackgroundMesh {
    pub bbox: BoundingBox,
    pub n: usize,
    nodes: Vec<Vec3>,
    tets: Vec<[u32; 4]>,
    h: f64,
}

/// The six vertex paths of the Kuhn split: each tetrahedron walks from the
/// cell origin to the opposite corner one axis at a time.
const KUHN_PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

pub fn build_background_mesh(
    bbox: BoundingBox,
    n: usize,
    surface: &ImplicitSurface,
) -> Result<BackgroundMesh, MeshError> {
    if n == 0 {
        return Err(MeshError::InvalidSubdivision(n));
    }
    for k in 0..3 {
        let extent = bbox.max[k] - bbox.min[k];
        if extent.is_nan() || extent <= 0.0 {
            return Err(MeshError::DegenerateBox(k));
        }
    }
    // A closed surface that pokes out of the box would be truncated by the
    // extraction (the reference experiments have the surface touching the
    // box boundary, so touching is allowed).
    if let Some((lo, hi)) = surface.surface_bounds() {
        if !bbox.contains(lo, hi) {
            return Err(MeshError::BoxTooSmall);
        }
    } else {
        // Unbounded band (plane): the surface must at least pass through
        // the open box.
        let mut neg = false;
        let mut pos = false;
        for corner in 0..8 {
            let p = Vec3::new(
                if corner & 1 == 0 { bbox.min.x } else { bbox.max.x },
                if corner & 2 == 0 { bbox.min.y } else { bbox.max.y },
                if corner & 4 == 0 { bbox.min.z } else { bbox.max.z },
            );
            let v = surface.level_set(p);
            neg |= v < 0.0;
            pos |= v > 0.0;
        }
        if !(neg && pos) {
            return Err(MeshError::BoxTooSmall);
        }
    }

    let np = n + 1;
    let cell = (bbox.max - bbox.min) / n as f64;
    let mut nodes = Vec::with_capacity(np * np * np);
    for k in 0..np {
        for j in 0..np {
            for i in 0..np {
                nodes.push(Vec3::new(
                    bbox.min.x + cell.x * i as f64,
                    bbox.min.y + cell.y * j as f64,
                    bbox.min.z + cell.z * k as f64,
                ));
            }
        }
    }

    let node_id = |i: usize, j: usize, k: usize| -> u32 { ((k * np + j) * np + i) as u32 };
    let mut tets = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in &KUHN_PERMUTATIONS {
                    let mut corner = [i, j, k];
                    let mut ids = [node_id(i, j, k), 0, 0, 0];
                    for (step, &axis) in perm.iter().enumerate() {
                        corner[axis] += 1;
                        ids[step + 1] = node_id(corner[0], corner[1], corner[2]);
                    }
                    // Orient positively so all volumes are positive.
                    let vol = signed_volume(
                        nodes[ids[0] as usize],
                        nodes[ids[1] as usize],
                        nodes[ids[2] as usize],
                        nodes[ids[3] as usize],
                    );
                    if vol < 0.0 {
                        ids.swap(2, 3);
                    }
                    tets.push(ids);
                }
            }
        }
    }

    // Every Kuhn tetrahedron contains the cell diagonal, which is also its
    // diameter, so h equals the cell diagonal length.
    let h = cell.norm();
    Ok(BackgroundMesh {
        bbox,
        n,
        nodes,
        tets,
        h,
    })
}

fn signed_volume(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
}

impl BackgroundMesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn node(&self, id: u32) -> Vec3 {
        self.nodes[id as usize]
    }

    pub fn tet(&self, id: u32) -> [u32; 4] {
        self.tets[id as usize]
    }

    pub fn tet_vertices(&self, id: u32) -> [Vec3; 4] {
        let t = self.tets[id as usize];
        [
            self.nodes[t[0] as usize],
            self.nodes[t[1] as usize],
            self.nodes[t[2] as usize],
            self.nodes[t[3] as usize],
        ]
    }

    pub fn tet_volume(&self, id: u32) -> f64 {
        let [a, b, c, d] = self.tet_vertices(id);
        signed_volume(a, b, c, d)
    }

    /// Mesh parameter: the maximum tetrahedron diameter.
    pub fn h(&self) -> f64 {
        self.h
    }
}

/// Interior face of the active mesh, shared by exactly two active
/// tetrahedra.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteriorFace {
    pub nodes: [u32; 3],
    pub tets: [u32; 2],
}

/// Background elements whose closure intersects the discrete surface (i.e.
/// that own a cut polygon with positive area), with a contiguous numbering
/// of their nodes as degrees of freedom.
#[derive(Debug)]
pub struct ActiveMesh {
    /// Sorted ids of cut background tetrahedra; parallel to the polygon
    /// list of the cut surface.
    pub tet_ids: Vec<u32>,
    node_to_dof: HashMap<u32, u32>,
    dof_to_node: Vec<u32>,
    pub faces: Vec<InteriorFace>,
}

pub fn extract_active_mesh(
    mesh: &BackgroundMesh,
    cuts: &CutSurfaceMesh,
) -> Result<ActiveMesh, MeshError> {
    if cuts.polygons.is_empty() {
        return Err(MeshError::EmptySurface);
    }
    let tet_ids: Vec<u32> = cuts.polygons.iter().map(|p| p.parent_tet).collect();
    debug_assert!(tet_ids.windows(2).all(|w| w[0] < w[1]));

    let mut dof_to_node: Vec<u32> = tet_ids
        .iter()
        .flat_map(|&t| mesh.tet(t).into_iter())
        .collect();
    dof_to_node.sort_unstable();
    dof_to_node.dedup();
    let node_to_dof: HashMap<u32, u32> = dof_to_node
        .iter()
        .enumerate()
        .map(|(d, &g)| (g, d as u32))
        .collect();

    // Interior faces: the triangles shared by exactly two active tets.
    let mut face_map: HashMap<[u32; 3], (u32, u32, u8)> = HashMap::new();
    for &t in &tet_ids {
        let ids = mesh.tet(t);
        for omit in 0..4 {
            let mut tri: Vec<u32> = (0..4).filter(|&v| v != omit).map(|v| ids[v]).collect();
            tri.sort_unstable();
            let key = [tri[0], tri[1], tri[2]];
            let entry = face_map.entry(key).or_insert((t, 0, 0));
            match entry.2 {
                0 => *entry = (t, 0, 1),
                1 => *entry = (entry.0, t, 2),
                _ => entry.2 = 3, // cannot happen in a valid triangulation
            }
        }
    }
    let mut faces: Vec<InteriorFace> = face_map
        .into_iter()
        .filter(|(_, (_, _, cnt))| *cnt == 2)
        .map(|(nodes, (a, b, _))| InteriorFace { nodes, tets: [a, b] })
        .collect();
    faces.sort_unstable_by_key(|f| f.nodes);

    Ok(ActiveMesh {
        tet_ids,
        node_to_dof,
        dof_to_node,
        faces,
    })
}

impl ActiveMesh {
    pub fn num_dofs(&self) -> usize {
        self.dof_to_node.len()
    }

    pub fn dof_of_node(&self, node: u32) -> Option<u32> {
        self.node_to_dof.get(&node).copied()
    }

    pub fn node_of_dof(&self, dof: u32) -> u32 {
        self.dof_to_node[dof as usize]
    }

    /// Active DOF indices of the four nodes of an active tetrahedron.
    pub fn tet_dofs(&self, mesh: &BackgroundMesh, tet: u32) -> [u32; 4] {
        let ids = mesh.tet(tet);
        [
            self.node_to_dof[&ids[0]],
            self.node_to_dof[&ids[1]],
            self.node_to_dof[&ids[2]],
            self.node_to_dof[&ids[3]],
        ]
    }
}
