//! Discrete dynamic Laplacian.
//!
//! Each time slice of a trajectory ensemble is meshed independently and
//! contributes the P1 stiffness matrix of that mesh, embedded into the
//! global trajectory numbering. The time average of these matrices,
//! together with the mass matrix of the initial mesh, forms the pencil
//! `(A, M)` whose leading eigenvectors are the coefficient vectors of the
//! dynamic Laplace eigenfunctions on the initial mesh.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::TrajectoryEnsemble;
use crate::mesh::{assemble_mass, assemble_stiffness, delaunay_triangulate, MeshError, SparseSymMatrix, TriMesh};

#[derive(Debug, Error)]
pub enum DynLapError {
    #[error("slice {slice} has only {present} present trajectories (need 3)")]
    SliceTooSparse { slice: usize, present: usize },
    #[error("positions at slice {slice} are collinear")]
    CollinearSlice { slice: usize },
    #[error("slice {slice}: {source}")]
    Slice { slice: usize, source: MeshError },
    #[error("{missing} trajectories are absent at the initial time")]
    InitialSliceIncomplete { missing: usize },
    #[error("slice index {slice} out of range for {count} slices")]
    SliceOutOfRange { slice: usize, count: usize },
    #[error("no active nodes remain after applying the boundary condition")]
    NoActiveNodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    #[default]
    Neumann,
    Dirichlet,
}

impl std::str::FromStr for BoundaryCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "neumann" => Ok(Self::Neumann),
            "dirichlet" => Ok(Self::Dirichlet),
            other => Err(format!("unknown boundary condition `{other}`")),
        }
    }
}

impl std::fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Neumann => "neumann",
            Self::Dirichlet => "dirichlet",
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AssembleOptions {
    /// Alpha-shape circumradius cap applied to every slice mesh.
    pub alpha: Option<f64>,
    /// Keep the per-slice meshes in the assembled system.
    pub keep_slice_meshes: bool,
}

/// The assembled pencil restricted to the active nodes.
#[derive(Debug, Clone)]
pub struct DynLapSystem {
    /// Averaged stiffness on active nodes.
    pub a: SparseSymMatrix,
    /// Mass matrix of the initial mesh on active nodes.
    pub m: SparseSymMatrix,
    pub mesh0: TriMesh,
    pub bc: BoundaryCondition,
    /// Trajectory indices of the rows of `a` and `m`, increasing.
    pub active_nodes: Vec<usize>,
    pub slice_meshes: Option<Vec<SliceMesh>>,
}

/// Triangulation of one time slice. Local node `j` is trajectory `ids[j]`.
#[derive(Debug, Clone)]
pub struct SliceMesh {
    pub ids: Vec<usize>,
    pub mesh: TriMesh,
}

impl DynLapSystem {
    pub fn num_nodes(&self) -> usize {
        self.mesh0.num_nodes()
    }

    /// Expands a vector over active nodes to all mesh nodes, filling removed
    /// nodes with zero (the Dirichlet boundary value).
    pub fn expand(&self, active: &[f64]) -> Vec<f64> {
        assert_eq!(active.len(), self.active_nodes.len());
        let mut full = vec![0.0; self.num_nodes()];
        for (&i, &v) in self.active_nodes.iter().zip(active) {
            full[i] = v;
        }
        full
    }
}

fn slice_mesh(
    ensemble: &TrajectoryEnsemble,
    l: usize,
    alpha: Option<f64>,
) -> Result<(Vec<usize>, TriMesh), DynLapError> {
    if l >= ensemble.num_times() {
        return Err(DynLapError::SliceOutOfRange {
            slice: l,
            count: ensemble.num_times(),
        });
    }
    let (ids, points) = ensemble.slice(l);
    let mesh = delaunay_triangulate(&points, alpha).map_err(|e| match e {
        MeshError::TooFewPoints(present) => DynLapError::SliceTooSparse { slice: l, present },
        MeshError::CollinearInput => DynLapError::CollinearSlice { slice: l },
        source => DynLapError::Slice { slice: l, source },
    })?;
    Ok((ids, mesh))
}

fn slice_stiffness(
    ensemble: &TrajectoryEnsemble,
    l: usize,
    alpha: Option<f64>,
) -> Result<(SparseSymMatrix, SliceMesh), DynLapError> {
    let (ids, mesh) = slice_mesh(ensemble, l, alpha)?;
    let d = assemble_stiffness(&mesh).map_err(|source| DynLapError::Slice { slice: l, source })?;
    Ok((d.embed(&ids, ensemble.len()), SliceMesh { ids, mesh }))
}

/// Stiffness matrix of slice `l` as an `N × N` matrix over all
/// trajectories; rows and columns of absent trajectories are zero.
pub fn assemble_slice(
    ensemble: &TrajectoryEnsemble,
    l: usize,
    alpha: Option<f64>,
) -> Result<SparseSymMatrix, DynLapError> {
    slice_stiffness(ensemble, l, alpha).map(|(d, _)| d)
}

/// Assembles `A = (1/T) Σ_l D^{t_l}` and the initial mass matrix.
///
/// Every trajectory must be observed at the first time. For Dirichlet
/// conditions the boundary nodes of the initial mesh are removed; nodes no
/// initial triangle references (merged duplicates, alpha-isolated points)
/// are removed under either condition.
pub fn assemble_system(
    ensemble: &TrajectoryEnsemble,
    bc: BoundaryCondition,
    opts: &AssembleOptions,
) -> Result<DynLapSystem, DynLapError> {
    let missing = (0..ensemble.len()).filter(|&i| !ensemble.is_present(i, 0)).count();
    if missing > 0 {
        return Err(DynLapError::InitialSliceIncomplete { missing });
    }
    let nt = ensemble.num_times();
    let n = ensemble.len();

    let slices: Vec<(SparseSymMatrix, SliceMesh)> = (0..nt)
        .into_par_iter()
        .map(|l| slice_stiffness(ensemble, l, opts.alpha))
        .collect::<Result<_, _>>()?;

    // fixed slice order in the reduction
    let stiffness: Vec<SparseSymMatrix> = slices.iter().map(|(d, _)| d.clone()).collect();
    let a = SparseSymMatrix::sum_of(n, &stiffness).scaled(1.0 / nt as f64);

    let mesh0 = slices[0].1.mesh.clone();
    let m = assemble_mass(&mesh0).map_err(|source| DynLapError::Slice { slice: 0, source })?;

    let used = mesh0.used_nodes();
    let active: Vec<usize> = match bc {
        BoundaryCondition::Neumann => (0..n).filter(|&i| used[i]).collect(),
        BoundaryCondition::Dirichlet => {
            let mut on_boundary = vec![false; n];
            for &b in &mesh0.boundary_nodes {
                on_boundary[b] = true;
            }
            (0..n).filter(|&i| used[i] && !on_boundary[i]).collect()
        }
    };
    if active.is_empty() {
        return Err(DynLapError::NoActiveNodes);
    }
    let (a, m) = if active.len() == n {
        (a, m)
    } else {
        (a.submatrix(&active), m.submatrix(&active))
    };

    let slice_meshes = opts
        .keep_slice_meshes
        .then(|| slices.into_iter().map(|(_, mesh)| mesh).collect());
    Ok(DynLapSystem {
        a,
        m,
        mesh0,
        bc,
        active_nodes: active,
        slice_meshes,
    })
}
