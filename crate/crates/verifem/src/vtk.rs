//! Legacy-VTK ASCII export of meshes with nodal and element fields.

use std::fmt::Write as _;

use crate::mesh::Mesh;
use crate::report::fmt_f64;

/// Scalar or vector field attached to the mesh for export.
pub enum VtkField<'a> {
    PointScalars(&'a str, &'a [f64]),
    CellScalars(&'a str, &'a [f64]),
    CellVectors(&'a str, &'a [[f64; 2]]),
}

/// Render the mesh (cell type 5, vertices in declaration order) and the
/// given fields as a legacy-VTK ASCII string.
pub fn render_vtk(mesh: &Mesh, title: &str, fields: &[VtkField<'_>]) -> String {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(out, "{title}");
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", mesh.n_vertices());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} {}", fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(0.0));
    }
    let nt = mesh.n_elements();
    let _ = writeln!(out, "CELLS {} {}", nt, 4 * nt);
    for tri in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        out.push_str("5\n");
    }

    let mut wrote_point_header = false;
    for f in fields {
        if let VtkField::PointScalars(name, data) = f {
            if !wrote_point_header {
                let _ = writeln!(out, "POINT_DATA {}", mesh.n_vertices());
                wrote_point_header = true;
            }
            let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for x in *data {
                let _ = writeln!(out, "{}", fmt_f64(*x));
            }
        }
    }
    let mut wrote_cell_header = false;
    for f in fields {
        match f {
            VtkField::CellScalars(name, data) => {
                if !wrote_cell_header {
                    let _ = writeln!(out, "CELL_DATA {nt}");
                    wrote_cell_header = true;
                }
                let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in *data {
                    let _ = writeln!(out, "{}", fmt_f64(*x));
                }
            }
            VtkField::CellVectors(name, data) => {
                if !wrote_cell_header {
                    let _ = writeln!(out, "CELL_DATA {nt}");
                    wrote_cell_header = true;
                }
                let _ = writeln!(out, "VECTORS {name} double");
                for v in *data {
                    let _ = writeln!(out, "{} {} {}", fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(0.0));
                }
            }
            VtkField::PointScalars(..) => {}
        }
    }
    out
}
