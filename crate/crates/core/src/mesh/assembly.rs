use rayon::prelude::*;

use super::{MeshError, SparseSymMatrix, TriMesh};

type Local = [[f64; 3]; 3];

fn check_areas(mesh: &TriMesh) -> Result<Vec<f64>, MeshError> {
    let scale = mesh.scale();
    let floor = 1e-14 * scale * scale;
    (0..mesh.triangles.len())
        .map(|t| {
            let area = mesh.triangle_area(t);
            if area <= floor {
                Err(MeshError::DegenerateTriangle { index: t, area })
            } else {
                Ok(area)
            }
        })
        .collect()
}

fn assemble<F>(mesh: &TriMesh, local: F) -> Result<SparseSymMatrix, MeshError>
where
    F: Fn(usize, f64) -> Local + Sync,
{
    let areas = check_areas(mesh)?;
    let blocks: Vec<Local> = areas.par_iter().enumerate().map(|(t, &area)| local(t, area)).collect();
    let mut triplets = Vec::with_capacity(9 * blocks.len());
    for (tri, block) in mesh.triangles.iter().zip(&blocks) {
        for a in 0..3 {
            for b in 0..3 {
                triplets.push((tri[a], tri[b], block[a][b]));
            }
        }
    }
    Ok(SparseSymMatrix::from_triplets(mesh.num_nodes(), &triplets))
}

/// P1 stiffness matrix with the sign convention `D_ij = -∫ ∇φ_i·∇φ_j`,
/// so `D` is negative semidefinite with constants in its kernel.
///
/// Hat-function gradients are constant per triangle: with `e_i` the edge
/// opposite vertex `i`, `∫_T ∇φ_i·∇φ_j = e_i·e_j / (4|T|)`.
pub fn assemble_stiffness(mesh: &TriMesh) -> Result<SparseSymMatrix, MeshError> {
    assemble(mesh, |t, area| {
        let [a, b, c] = mesh.triangles[t];
        let p = [mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]];
        let edge = |i: usize| {
            let (u, v) = (p[(i + 1) % 3], p[(i + 2) % 3]);
            [v[0] - u[0], v[1] - u[1]]
        };
        let e = [edge(0), edge(1), edge(2)];
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] = -(e[i][0] * e[j][0] + e[i][1] * e[j][1]) / (4.0 * area);
            }
        }
        // the diagonal is minus the off-diagonal row sum, which keeps row sums at zero
        for i in 0..3 {
            k[i][i] = -(k[i][(i + 1) % 3] + k[i][(i + 2) % 3]);
        }
        k
    })
}

/// Consistent P1 mass matrix `M_ij = ∫ φ_i φ_j`, element rule
/// `|T|/12 · [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn assemble_mass(mesh: &TriMesh) -> Result<SparseSymMatrix, MeshError> {
    assemble(mesh, |_, area| {
        let off = area / 12.0;
        let diag = 2.0 * off;
        [[diag, off, off], [off, diag, off], [off, off, diag]]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{delaunay_triangulate, grid_points};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_triangle() -> TriMesh {
        TriMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]])
    }

    fn unit_square() -> TriMesh {
        TriMesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
    }

    #[test]
    fn stiffness_of_reference_triangle() {
        // ∇φ0 = (-1,-1), ∇φ1 = (1,0), ∇φ2 = (0,1), area 1/2
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        let d = assemble_stiffness(&unit_triangle()).unwrap();
        for (i, row) in expected.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                assert!((d.get(i, j) + e).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn mass_of_reference_triangle() {
        let m = assemble_mass(&unit_triangle()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 2.0 } else { 1.0 } / 24.0;
                assert!((m.get(i, j) - want).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn square_mass_sums_to_area() {
        let m = assemble_mass(&unit_square()).unwrap();
        assert!((m.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn square_stiffness_is_negative_semidefinite() {
        let d = assemble_stiffness(&unit_square()).unwrap();
        let eig = d.to_dense().symmetric_eigen();
        // spectrum of the two-triangle square: {0, -1, -1, -2}
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let expected = [0.0, -1.0, -1.0, -2.0];
        for (a, b) in ev.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(d.bilinear(&v, &v) <= 1e-14);
        }
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let mesh = TriMesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 1e-17], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 1, 3]],
        );
        assert!(matches!(
            assemble_stiffness(&mesh),
            Err(MeshError::DegenerateTriangle { index: 0, .. })
        ));
        assert!(matches!(
            assemble_mass(&mesh),
            Err(MeshError::DegenerateTriangle { index: 0, .. })
        ));
    }

    #[test]
    fn small_random_mesh_mass_is_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..150)
            .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let mesh = delaunay_triangulate(&pts, None).unwrap();
        let m = assemble_mass(&mesh).unwrap();
        let min = m.to_dense().symmetric_eigen().eigenvalues.min();
        assert!(min > 0.0);
        assert!((m.sum() - mesh.area()).abs() < 1e-12 * mesh.area());
        let d = assemble_stiffness(&mesh).unwrap();
        let max = d.to_dense().symmetric_eigen().eigenvalues.max();
        assert!(max <= 1e-12 * d.max_abs());
    }

    #[test]
    fn grid_stiffness_rows_sum_to_zero() {
        let mesh = delaunay_triangulate(&grid_points(9, 7, 0.0, 2.0, 0.0, 1.0), None).unwrap();
        let d = assemble_stiffness(&mesh).unwrap();
        let tol = 1e-12 * d.max_abs();
        assert!(d.row_sums().iter().all(|s| s.abs() <= tol));
        assert!(d.asymmetry() == 0.0);
    }
}
