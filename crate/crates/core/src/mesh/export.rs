//! Plain-text mesh listings and legacy VTK output.

use std::io::{self, Write};

use super::TriMesh;

/// `.node` listing: `index x y` per line, 0-based.
pub fn write_node<W: Write>(mesh: &TriMesh, mut out: W) -> io::Result<()> {
    for (i, p) in mesh.nodes.iter().enumerate() {
        writeln!(out, "{i} {} {}", p[0], p[1])?;
    }
    Ok(())
}

/// `.ele` listing: `index n1 n2 n3` per line, counterclockwise.
pub fn write_ele<W: Write>(mesh: &TriMesh, mut out: W) -> io::Result<()> {
    for (i, t) in mesh.triangles.iter().enumerate() {
        writeln!(out, "{i} {} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}

/// Legacy ASCII VTK unstructured grid with optional point data.
pub fn write_vtk<W: Write>(mesh: &TriMesh, fields: &[(String, Vec<f64>)], mut out: W) -> io::Result<()> {
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "dynlap mesh")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.nodes.len())?;
    for p in &mesh.nodes {
        writeln!(out, "{} {} 0", p[0], p[1])?;
    }
    let nt = mesh.triangles.len();
    writeln!(out, "CELLS {nt} {}", 4 * nt)?;
    for t in &mesh.triangles {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(out, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        // VTK_TRIANGLE
        writeln!(out, "5")?;
    }
    if !fields.is_empty() {
        writeln!(out, "POINT_DATA {}", mesh.nodes.len())?;
        for (name, values) in fields {
            assert_eq!(values.len(), mesh.nodes.len(), "field `{name}` length");
            writeln!(out, "SCALARS {name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for v in values {
                writeln!(out, "{v}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listings() {
        let mesh = TriMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 0.5]], vec![[0, 1, 2]]);
        let mut node = Vec::new();
        write_node(&mesh, &mut node).unwrap();
        assert_eq!(String::from_utf8(node).unwrap(), "0 0 0\n1 1 0\n2 0 0.5\n");
        let mut ele = Vec::new();
        write_ele(&mesh, &mut ele).unwrap();
        assert_eq!(String::from_utf8(ele).unwrap(), "0 0 1 2\n");
        let mut vtk = Vec::new();
        write_vtk(&mesh, &[("f".into(), vec![1.0, 2.0, 3.0])], &mut vtk).unwrap();
        let vtk = String::from_utf8(vtk).unwrap();
        assert!(vtk.contains("CELLS 1 4\n3 0 1 2\n"));
        assert!(vtk.contains("SCALARS f double 1\nLOOKUP_TABLE default\n1\n2\n3\n"));
    }
}
