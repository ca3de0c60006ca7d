//! Legacy ASCII VTK output of the cut surface with a nodal scalar field.
//!
//! POLYDATA with one triangle/quad per cut polygon; vertices shared
//! between adjacent polygons are written once (they sit on the same
//! background-mesh edge). Formatting is fixed-precision so identical runs
//! produce bit-identical files.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::cut::CutSurfaceMesh;
use crate::fem::TetBasis;
use crate::geometry::Vec3;
use crate::mesh::{ActiveMesh, BackgroundMesh};

/// Write the discrete surface with the P1 solution sampled at polygon
/// vertices.
pub fn write_surface_vtk(
    path: &Path,
    title: &str,
    mesh: &BackgroundMesh,
    active: &ActiveMesh,
    cuts: &CutSurfaceMesh,
    u: &[f64],
    field_name: &str,
) -> std::io::Result<()> {
    // Deduplicate vertices via the background edge carrying them; first
    // occurrence (polygon order) fixes the index.
    let mut index_of: HashMap<(u32, u32), u32> = HashMap::new();
    let mut points: Vec<Vec3> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut cells: Vec<Vec<u32>> = Vec::with_capacity(cuts.polygons.len());

    for poly in &cuts.polygons {
        let basis = TetBasis::new(&mesh.tet_vertices(poly.parent_tet));
        let dofs = active.tet_dofs(mesh, poly.parent_tet);
        let mut cell = Vec::with_capacity(poly.vertices.len());
        for (v, key) in poly.vertices.iter().zip(&poly.vertex_edges) {
            let idx = *index_of.entry(*key).or_insert_with(|| {
                let phi = basis.eval(*v);
                let val: f64 = (0..4).map(|i| u[dofs[i] as usize] * phi[i]).sum();
                points.push(*v);
                values.push(val);
                (points.len() - 1) as u32
            });
            cell.push(idx);
        }
        cells.push(cell);
    }

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{title}")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET POLYDATA")?;
    writeln!(out, "POINTS {} double", points.len())?;
    for p in &points {
        writeln!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z)?;
    }
    let size: usize = cells.iter().map(|c| c.len() + 1).sum();
    writeln!(out, "POLYGONS {} {}", cells.len(), size)?;
    for c in &cells {
        write!(out, "{}", c.len())?;
        for idx in c {
            write!(out, " {idx}")?;
        }
        writeln!(out)?;
    }
    writeln!(out, "POINT_DATA {}", points.len())?;
    writeln!(out, "SCALARS {field_name} double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in &values {
        writeln!(out, "{v:.16e}")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cut::{build_cut_surface, sample_level_set};
    use crate::geometry::ImplicitSurface;
    use crate::mesh::{build_background_mesh, extract_active_mesh, BoundingBox};

    #[test]
    fn writes_wellformed_polydata() {
        let s = ImplicitSurface::sphere(Vec3::new(0.5, 0.5, 0.5), 0.5).unwrap();
        let mesh = build_background_mesh(BoundingBox::unit(), 6, &s).unwrap();
        let vals = sample_level_set(&mesh, &s);
        let cuts = build_cut_surface(&mesh, &vals).unwrap();
        let active = extract_active_mesh(&mesh, &cuts).unwrap();
        let u: Vec<f64> = (0..active.num_dofs())
            .map(|d| mesh.node(active.node_of_dof(d as u32)).z)
            .collect();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surface.vtk");
        write_surface_vtk(&path, "test", &mesh, &active, &cuts, &u, "u").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0"));
        assert!(text.contains("DATASET POLYDATA"));
        let n_points: usize = text
            .lines()
            .find(|l| l.starts_with("POINTS"))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse().ok())
            .unwrap();
        let n_polys: usize = text
            .lines()
            .find(|l| l.starts_with("POLYGONS"))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse().ok())
            .unwrap();
        assert_eq!(n_polys, cuts.polygons.len());
        // Euler again: shared vertices are deduplicated.
        assert!(n_points < 4 * n_polys);
        // Every polygon line references valid point indices.
        let polys_at = text.lines().position(|l| l.starts_with("POLYGONS")).unwrap();
        for line in text.lines().skip(polys_at + 1).take(n_polys) {
            let mut it = line.split_whitespace();
            let cnt: usize = it.next().unwrap().parse().unwrap();
            assert!(cnt == 3 || cnt == 4);
            for idx in it {
                assert!(idx.parse::<usize>().unwrap() < n_points);
            }
        }
        // Point data present for every point, and P1 values of u = z on
        // vertices equal the vertex z (u is linear globally).
        let data_at = text
            .lines()
            .position(|l| l.starts_with("LOOKUP_TABLE"))
            .unwrap();
        let vals: Vec<f64> = text
            .lines()
            .skip(data_at + 1)
            .take(n_points)
            .map(|l| l.parse().unwrap())
            .collect();
        assert_eq!(vals.len(), n_points);
        let pts_at = text.lines().position(|l| l.starts_with("POINTS")).unwrap();
        for (line, v) in text.lines().skip(pts_at + 1).take(n_points).zip(&vals) {
            let z: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
            assert!((z - v).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_runs_produce_identical_bytes() {
        let s = ImplicitSurface::sphere(Vec3::new(0.5, 0.5, 0.5), 0.5).unwrap();
        let mesh = build_background_mesh(BoundingBox::unit(), 4, &s).unwrap();
        let vals = sample_level_set(&mesh, &s);
        let cuts = build_cut_surface(&mesh, &vals).unwrap();
        let active = extract_active_mesh(&mesh, &cuts).unwrap();
        let u = vec![0.25; active.num_dofs()];
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.vtk");
        let p2 = dir.path().join("b.vtk");
        write_surface_vtk(&p1, "t", &mesh, &active, &cuts, &u, "u").unwrap();
        write_surface_vtk(&p2, "t", &mesh, &active, &cuts, &u, "u").unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
