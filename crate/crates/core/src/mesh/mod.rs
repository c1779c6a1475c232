//! Planar triangulations and P1 finite-element matrices.

mod assembly;
mod delaunay;
pub mod export;
pub mod sparse;

use std::collections::HashMap;

use thiserror::Error;

pub use assembly::{assemble_mass, assemble_stiffness};
pub use delaunay::delaunay_triangulate;
pub use sparse::SparseSymMatrix;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("need at least 3 distinct points, got {0}")]
    TooFewPoints(usize),
    #[error("all points are collinear")]
    CollinearInput,
    #[error("triangle {index} is degenerate (area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("non-finite coordinate at point {0}")]
    NonFinitePoint(usize),
    #[error("alpha pruning removed every triangle")]
    EmptyMesh,
    #[error("MatrixMarket parse error at line {line}: {message}")]
    MatrixMarket { line: usize, message: String },
}

/// A 2-D triangulation with counterclockwise triangles.
///
/// `nodes` keeps every input point, including points that no triangle
/// references (merged duplicates or nodes isolated by alpha pruning); these
/// appear in [`TriMesh::orphan_nodes`].
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    /// Sorted.
    pub boundary_nodes: Vec<usize>,
    /// Each edge is oriented as it appears in its (unique) triangle.
    pub boundary_edges: Vec<[usize; 2]>,
    /// `(duplicate, kept)` index pairs of merged near-coincident points.
    pub merged: Vec<(usize, usize)>,
}

impl TriMesh {
    /// Builds a mesh from nodes and triangles, reorienting clockwise
    /// triangles and deriving the boundary.
    pub fn new(nodes: Vec<Point>, triangles: Vec<[usize; 3]>) -> Self {
        let triangles = triangles
            .into_iter()
            .map(|[a, b, c]| {
                if signed_area(nodes[a], nodes[b], nodes[c]) < 0.0 {
                    [a, c, b]
                } else {
                    [a, b, c]
                }
            })
            .collect();
        let mut mesh = Self {
            nodes,
            triangles,
            boundary_nodes: Vec::new(),
            boundary_edges: Vec::new(),
            merged: Vec::new(),
        };
        mesh.recompute_boundary();
        mesh
    }

    pub(crate) fn recompute_boundary(&mut self) {
        let counts = self.edge_triangle_counts();
        let mut edges = Vec::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                if counts[&edge_key(a, b)] == 1 {
                    edges.push([a, b]);
                }
            }
        }
        let mut nodes: Vec<usize> = edges.iter().flatten().copied().collect();
        nodes.sort_unstable();
        nodes.dedup();
        self.boundary_edges = edges;
        self.boundary_nodes = nodes;
    }

    /// Number of triangles sharing each undirected edge.
    pub fn edge_triangle_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::with_capacity(self.triangles.len() * 2);
        for t in &self.triangles {
            for k in 0..3 {
                *counts.entry(edge_key(t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Diagonal of the bounding box of the nodes.
    pub fn scale(&self) -> f64 {
        bounding_diagonal(&self.nodes)
    }

    /// Node adjacency through triangle edges; neighbour lists are sorted.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Nodes referenced by at least one triangle.
    pub fn used_nodes(&self) -> Vec<bool> {
        let mut used = vec![false; self.nodes.len()];
        for t in &self.triangles {
            for &v in t {
                used[v] = true;
            }
        }
        used
    }

    pub fn orphan_nodes(&self) -> Vec<usize> {
        self.used_nodes()
            .iter()
            .enumerate()
            .filter(|(_, &u)| !u)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_boundary_edge(&self, a: usize, b: usize) -> bool {
        self.boundary_edges
            .iter()
            .any(|e| edge_key(e[0], e[1]) == edge_key(a, b))
    }
}

pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub(crate) fn bounding_diagonal(points: &[Point]) -> f64 {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    if points.is_empty() {
        return 0.0;
    }
    (hi[0] - lo[0]).hypot(hi[1] - lo[1])
}

/// Circumradius of a triangle; infinite for collinear vertices.
pub fn circumradius(a: Point, b: Point, c: Point) -> f64 {
    let ab = (b[0] - a[0]).hypot(b[1] - a[1]);
    let bc = (c[0] - b[0]).hypot(c[1] - b[1]);
    let ca = (a[0] - c[0]).hypot(a[1] - c[1]);
    let area = signed_area(a, b, c).abs();
    if area == 0.0 {
        f64::INFINITY
    } else {
        ab * bc * ca / (4.0 * area)
    }
}

/// Tensor grid of `nx × ny` points on `[x0,x1]×[y0,y1]`, x varying fastest.
pub fn grid_points(nx: usize, ny: usize, x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<Point> {
    let coord = |lo: f64, hi: f64, n: usize, i: usize| {
        if n == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut pts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            pts.push([coord(x0, x1, nx, i), coord(y0, y1, ny, j)]);
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_reorients_clockwise_triangles() {
        let m = TriMesh::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], vec![[0, 1, 2]]);
        assert!(m.triangle_area(0) > 0.0);
        assert_eq!(m.boundary_edges.len(), 3);
        assert_eq!(m.boundary_nodes, vec![0, 1, 2]);
    }

    #[test]
    fn square_boundary_has_four_edges() {
        let m = TriMesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        assert_eq!(m.boundary_edges.len(), 4);
        assert!(!m.is_boundary_edge(0, 2));
        assert!(m.is_boundary_edge(3, 0));
        assert_eq!(m.area(), 1.0);
    }

    #[test]
    fn circumradius_of_right_triangle() {
        let r = circumradius([0.0, 0.0], [2.0, 0.0], [0.0, 2.0]);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
        assert!(circumradius([0.0, 0.0], [1.0, 1.0], [2.0, 2.0]).is_infinite());
    }

    #[test]
    fn grid_points_layout() {
        let g = grid_points(3, 2, 0.0, 1.0, 0.0, 1.0);
        assert_eq!(g.len(), 6);
        assert_eq!(g[1], [0.5, 0.0]);
        assert_eq!(g[5], [1.0, 1.0]);
    }
}
