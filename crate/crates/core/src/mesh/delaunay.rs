use std::collections::HashMap;

use log::warn;

use super::{bounding_diagonal, circumradius, signed_area, MeshError, Point, TriMesh};

/// Relative distance below which two input points are treated as one.
const MERGE_TOL: f64 = 1e-12;

/// Delaunay triangulation of a planar point cloud.
///
/// Points closer than `1e-12` times the bounding-box diagonal are merged
/// into the first occurrence; the duplicate stays in `nodes` but is not
/// referenced by any triangle. With `alpha`, triangles whose circumradius
/// exceeds it are discarded and the boundary is recomputed, which carves
/// concave regions out of the convex hull.
pub fn delaunay_triangulate(points: &[Point], alpha: Option<f64>) -> Result<TriMesh, MeshError> {
    if let Some(a) = alpha {
        if !(a > 0.0 && a.is_finite()) {
            return Err(MeshError::InvalidAlpha(a));
        }
    }
    if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(MeshError::NonFinitePoint(i));
    }
    let scale = bounding_diagonal(points);
    let (unique, merged) = merge_duplicates(points, MERGE_TOL * scale);
    if unique.len() < 3 {
        return Err(MeshError::TooFewPoints(unique.len()));
    }
    if !merged.is_empty() {
        warn!("merged {} near-duplicate points", merged.len());
    }

    let input: Vec<delaunator::Point> = unique
        .iter()
        .map(|&i| delaunator::Point {
            x: points[i][0],
            y: points[i][1],
        })
        .collect();
    let tri = delaunator::triangulate(&input);
    if tri.triangles.is_empty() {
        return Err(MeshError::CollinearInput);
    }

    let area_floor = 1e-14 * scale * scale;
    let mut triangles = Vec::with_capacity(tri.len());
    for t in tri.triangles.chunks_exact(3) {
        let mut v = [unique[t[0]], unique[t[1]], unique[t[2]]];
        let area = signed_area(points[v[0]], points[v[1]], points[v[2]]);
        if area.abs() <= area_floor {
            // zero-area slivers can only sit on collinear hull runs
            continue;
        }
        if area < 0.0 {
            v.swap(1, 2);
        }
        if let Some(alpha) = alpha {
            if circumradius(points[v[0]], points[v[1]], points[v[2]]) > alpha {
                continue;
            }
        }
        triangles.push(v);
    }
    if triangles.is_empty() {
        return Err(MeshError::EmptyMesh);
    }

    let mut mesh = TriMesh::new(points.to_vec(), triangles);
    mesh.merged = merged;
    Ok(mesh)
}

/// Returns indices of kept points and `(duplicate, kept)` pairs.
fn merge_duplicates(points: &[Point], tol: f64) -> (Vec<usize>, Vec<(usize, usize)>) {
    if tol == 0.0 {
        // all points identical or a single point; exact comparison only
        let mut unique: Vec<usize> = Vec::new();
        let mut merged = Vec::new();
        for (i, p) in points.iter().enumerate() {
            match unique.iter().find(|&&k| points[k] == *p) {
                Some(&k) => merged.push((i, k)),
                None => unique.push(i),
            }
        }
        return (unique, merged);
    }
    let cell = |p: &Point| ((p[0] / tol).floor() as i64, (p[1] / tol).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut unique = Vec::with_capacity(points.len());
    let mut merged = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = cell(p);
        let mut hit = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = grid.get(&(cx + dx, cy + dy)) {
                    for &k in list {
                        let q = points[k];
                        if (p[0] - q[0]).hypot(p[1] - q[1]) <= tol {
                            hit = Some(k);
                            break 'search;
                        }
                    }
                }
            }
        }
        match hit {
            Some(k) => merged.push((i, k)),
            None => {
                grid.entry((cx, cy)).or_default().push(i);
                unique.push(i);
            }
        }
    }
    (unique, merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::grid_points;

    #[test]
    fn minimal_simplex() {
        let m = delaunay_triangulate(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], None).unwrap();
        assert_eq!(m.triangles.len(), 1);
        assert_eq!(m.boundary_edges.len(), 3);
    }

    #[test]
    fn unit_square_corners() {
        let m = delaunay_triangulate(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], None).unwrap();
        assert_eq!(m.triangles.len(), 2);
        assert!((m.area() - 1.0).abs() < 1e-15);
        assert_eq!(m.boundary_edges.len(), 4);
    }

    #[test]
    fn collinear_and_too_few() {
        let line: Vec<Point> = (0..5).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(
            delaunay_triangulate(&line, None),
            Err(MeshError::CollinearInput)
        ));
        assert!(matches!(
            delaunay_triangulate(&[[0.0, 0.0], [1.0, 0.0]], None),
            Err(MeshError::TooFewPoints(2))
        ));
        // three points of which two coincide
        assert!(matches!(
            delaunay_triangulate(&[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0]], None),
            Err(MeshError::TooFewPoints(2))
        ));
    }

    #[test]
    fn duplicates_are_merged() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 1.0 + 1e-15]];
        let m = delaunay_triangulate(&pts, None).unwrap();
        assert_eq!(m.merged, vec![(4, 3)]);
        assert_eq!(m.orphan_nodes(), vec![4]);
        assert_eq!(m.triangles.len(), 2);
    }

    #[test]
    fn grid_has_no_slivers_and_full_area() {
        let m = delaunay_triangulate(&grid_points(11, 11, 0.0, 1.0, 0.0, 1.0), None).unwrap();
        assert_eq!(m.triangles.len(), 200);
        assert!((m.area() - 1.0).abs() < 1e-12);
        assert_eq!(m.boundary_edges.len(), 40);
        assert!(m.orphan_nodes().is_empty());
    }

    #[test]
    fn alpha_separates_two_blocks() {
        // two 0.4x0.4 blocks separated by a 0.2 gap: triangles bridging the
        // gap have circumradius >= 0.1 and are removed by alpha
        let pts: Vec<Point> = grid_points(21, 21, 0.0, 1.0, 0.0, 1.0)
            .into_iter()
            .filter(|p| p[1] < 0.4 + 1e-9 && (p[0] < 0.4 + 1e-9 || p[0] > 0.6 - 1e-9))
            .collect();
        let hull = delaunay_triangulate(&pts, None).unwrap();
        let carved = delaunay_triangulate(&pts, Some(0.05)).unwrap();
        assert!((hull.area() - 0.4).abs() < 1e-12);
        assert!((carved.area() - 0.32).abs() < 1e-12);
        assert!(carved.boundary_edges.len() > hull.boundary_edges.len());
        assert!(matches!(
            delaunay_triangulate(&pts, Some(-1.0)),
            Err(MeshError::InvalidAlpha(_))
        ));
    }
}
