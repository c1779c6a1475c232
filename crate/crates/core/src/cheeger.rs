//! Cheeger ratios of node sets on a triangulation.
//!
//! A node set is identified with the union of the triangles whose three
//! vertices all belong to it. Its boundary is the set of triangle edges
//! shared by exactly one such triangle, chained into polylines; edges on
//! the mesh boundary are reported separately so that the Neumann ratio can
//! drop them.

use std::collections::{HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::dynlap::{BoundaryCondition, SliceMesh};
use crate::flow::{advect_polyline_snapshots, polyline_length, AdvectOptions, FlowError, FlowField, Polyline};
use crate::mesh::{edge_key, TriMesh};

#[derive(Debug, Error)]
pub enum CheegerError {
    #[error("field is zero at every node")]
    AllZeroField,
    #[error("field has {found} nodal domains, {needed} requested")]
    TooFewNodalDomains { found: usize, needed: usize },
    #[error("superlevel set of domain {domain} is empty")]
    EmptySuperlevelSet { domain: usize },
    #[error("thresholds must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error("node set covers no triangle")]
    ZeroArea,
    #[error("node set is empty")]
    EmptySet,
    #[error("eigenvalue {0} is positive")]
    PositiveEigenvalue(f64),
    #[error("field has {len} values, mesh has {nodes} nodes")]
    LengthMismatch { len: usize, nodes: usize },
    #[error("field is not finite at node {0}")]
    NonFiniteField(usize),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Sorted, deduplicated mesh node indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct NodeSet {
    pub nodes: Vec<usize>,
}

impl NodeSet {
    pub fn new(mut nodes: Vec<usize>) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        Self { nodes }
    }

    pub fn from_predicate(mesh: &TriMesh, pred: impl Fn(usize, [f64; 2]) -> bool) -> Self {
        Self {
            nodes: (0..mesh.num_nodes()).filter(|&i| pred(i, mesh.nodes[i])).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.nodes {
            m[i] = true;
        }
        m
    }

    /// Triangles with all three vertices in the set.
    pub fn elements(&self, mesh: &TriMesh) -> Vec<usize> {
        let inside = self.mask(mesh.num_nodes());
        (0..mesh.triangles.len())
            .filter(|&t| mesh.triangles[t].iter().all(|&v| inside[v]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodalDomain {
    pub sign: Sign,
    pub set: NodeSet,
}

fn check_field(field: &[f64], mesh: &TriMesh) -> Result<(), CheegerError> {
    if field.len() != mesh.num_nodes() {
        return Err(CheegerError::LengthMismatch {
            len: field.len(),
            nodes: mesh.num_nodes(),
        });
    }
    if let Some(i) = field.iter().position(|v| !v.is_finite()) {
        return Err(CheegerError::NonFiniteField(i));
    }
    Ok(())
}

/// Relative magnitude below which a field value is treated as zero.
pub const ZERO_LEVEL: f64 = 1e-14;

/// Connected components of the strictly positive and strictly negative
/// nodes under mesh-edge adjacency, largest first (ties by lowest node).
/// Zero nodes belong to no domain; values within `ZERO_LEVEL` of the
/// largest magnitude count as zero, so a nodal line sampled at its nodes
/// (where rounding leaves `sin π ≈ 1e-16`) still separates domains.
pub fn nodal_domains(field: &[f64], mesh: &TriMesh) -> Result<Vec<NodalDomain>, CheegerError> {
    check_field(field, mesh)?;
    let scale = field.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(CheegerError::AllZeroField);
    }
    let zero = ZERO_LEVEL * scale;
    let adj = mesh.adjacency();
    let sign_of = |v: f64| {
        if v > zero {
            Some(Sign::Positive)
        } else if v < -zero {
            Some(Sign::Negative)
        } else {
            None
        }
    };
    let mut seen = vec![false; field.len()];
    let mut domains = Vec::new();
    for start in 0..field.len() {
        let Some(sign) = sign_of(field[start]) else { continue };
        if seen[start] || adj[start].is_empty() {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut nodes = Vec::new();
        while let Some(v) = stack.pop() {
            nodes.push(v);
            for &w in &adj[v] {
                if !seen[w] && sign_of(field[w]) == Some(sign) {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        domains.push(NodalDomain {
            sign,
            set: NodeSet::new(nodes),
        });
    }
    domains.sort_by(|a, b| b.set.len().cmp(&a.set.len()).then(a.set.nodes[0].cmp(&b.set.nodes[0])));
    Ok(domains)
}

/// For each of the `thresholds.len()` largest nodal domains `N_k`, the node
/// set `{x ∈ N_k : f(x)² ≥ c_k}`.
pub fn superlevel_packing(field: &[f64], mesh: &TriMesh, thresholds: &[f64]) -> Result<Vec<NodeSet>, CheegerError> {
    if let Some(&c) = thresholds.iter().find(|&&c| c.is_nan() || c < 0.0) {
        return Err(CheegerError::NegativeThreshold(c));
    }
    let domains = nodal_domains(field, mesh)?;
    if domains.len() < thresholds.len() {
        return Err(CheegerError::TooFewNodalDomains {
            found: domains.len(),
            needed: thresholds.len(),
        });
    }
    domains
        .iter()
        .zip(thresholds)
        .enumerate()
        .map(|(k, (d, &c))| {
            let nodes: Vec<usize> = d
                .set
                .nodes
                .iter()
                .copied()
                .filter(|&i| field[i] * field[i] >= c)
                .collect();
            if nodes.is_empty() {
                Err(CheegerError::EmptySuperlevelSet { domain: k })
            } else {
                Ok(NodeSet { nodes })
            }
        })
        .collect()
}

/// Area and boundary of the element set of a node set.
#[derive(Debug, Clone)]
pub struct SetBoundary {
    pub area: f64,
    /// Boundary parts in the interior of the mesh.
    pub interior: Vec<Polyline>,
    /// Boundary parts lying on the mesh boundary.
    pub exterior: Vec<Polyline>,
}

impl SetBoundary {
    pub fn interior_length(&self) -> f64 {
        self.interior.iter().map(polyline_length).sum()
    }

    pub fn exterior_length(&self) -> f64 {
        self.exterior.iter().map(polyline_length).sum()
    }

    pub fn curves(&self, bc: BoundaryCondition) -> Vec<&Polyline> {
        match bc {
            BoundaryCondition::Neumann => self.interior.iter().collect(),
            BoundaryCondition::Dirichlet => self.interior.iter().chain(&self.exterior).collect(),
        }
    }
}

pub fn set_boundary(set: &NodeSet, mesh: &TriMesh) -> Result<SetBoundary, CheegerError> {
    if set.is_empty() {
        return Err(CheegerError::EmptySet);
    }
    let elements = set.elements(mesh);
    if elements.is_empty() {
        return Err(CheegerError::ZeroArea);
    }
    let area: f64 = elements.iter().map(|&t| mesh.triangle_area(t)).sum();

    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for &t in &elements {
        let tri = mesh.triangles[t];
        for k in 0..3 {
            *count.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    let mesh_boundary: HashSet<(usize, usize)> = mesh.boundary_edges.iter().map(|e| edge_key(e[0], e[1])).collect();

    // oriented boundary edges (set on the left), in element order
    let mut interior = Vec::new();
    let mut exterior = Vec::new();
    for &t in &elements {
        let tri = mesh.triangles[t];
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if count[&edge_key(a, b)] == 1 {
                if mesh_boundary.contains(&edge_key(a, b)) {
                    exterior.push((a, b));
                } else {
                    interior.push((a, b));
                }
            }
        }
    }
    Ok(SetBoundary {
        area,
        interior: chain(&interior, mesh),
        exterior: chain(&exterior, mesh),
    })
}

/// Joins oriented edges head-to-tail into polylines. Open chains are
/// started first, remaining edges form closed loops.
fn chain(edges: &[(usize, usize)], mesh: &TriMesh) -> Vec<Polyline> {
    let mut out_edges: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut indegree: HashMap<usize, usize> = HashMap::new();
    for (e, &(a, b)) in edges.iter().enumerate() {
        out_edges.entry(a).or_default().push(e);
        *indegree.entry(b).or_insert(0) += 1;
    }
    let mut used = vec![false; edges.len()];
    let mut lines = Vec::new();

    let walk = |first: usize, used: &mut Vec<bool>| {
        let mut verts = vec![edges[first].0];
        let mut e = first;
        loop {
            used[e] = true;
            let head = edges[e].1;
            let next = out_edges
                .get(&head)
                .and_then(|list| list.iter().copied().find(|&f| !used[f]));
            match next {
                Some(f) => {
                    verts.push(head);
                    e = f;
                }
                None => {
                    let closed = head == verts[0];
                    if !closed {
                        verts.push(head);
                    }
                    let pts = verts.iter().map(|&v| mesh.nodes[v]).collect();
                    return Polyline { vertices: pts, closed };
                }
            }
        }
    };

    for (e, &(a, _)) in edges.iter().enumerate() {
        let outs = out_edges.get(&a).map_or(0, Vec::len);
        if !used[e] && indegree.get(&a).copied().unwrap_or(0) < outs {
            lines.push(walk(e, &mut used));
        }
    }
    for e in 0..edges.len() {
        if !used[e] {
            lines.push(walk(e, &mut used));
        }
    }
    lines
}

/// `|∂A ∩ M̊| / |A|` (Neumann) or `|∂A| / |A|` (Dirichlet).
pub fn static_cheeger_ratio(set: &NodeSet, mesh: &TriMesh, bc: BoundaryCondition) -> Result<f64, CheegerError> {
    let b = set_boundary(set, mesh)?;
    let len: f64 = b.curves(bc).into_iter().map(polyline_length).sum();
    Ok(len / b.area)
}

/// Time-averaged Cheeger ratio of the evolved set under a volume-preserving
/// flow, `(1/τ)∫ |∂Φ^t(A) ∩ Φ^t(M̊)| / |A| dt`.
///
/// The boundary curves at the first time are advected through `times` and
/// the ratios are averaged with the trapezoid rule. Interior boundary
/// curves stay interior under a homeomorphism, so the Neumann ratio only
/// advects those; the Dirichlet ratio also advects the parts on the mesh
/// boundary.
pub fn dynamic_cheeger_ratio(
    set: &NodeSet,
    mesh: &TriMesh,
    field: &FlowField,
    times: &[f64],
    opts: &AdvectOptions,
    bc: BoundaryCondition,
) -> Result<f64, CheegerError> {
    let b = set_boundary(set, mesh)?;
    let curves = b.curves(bc);
    if times.is_empty() {
        return Err(FlowError::InvalidEnsemble("no quadrature times".into()).into());
    }
    let mut lengths = vec![0.0; times.len()];
    for curve in curves {
        let snaps = advect_polyline_snapshots(field, curve, times, opts)?;
        for (acc, snap) in lengths.iter_mut().zip(&snaps) {
            *acc += polyline_length(snap);
        }
    }
    let ratios: Vec<f64> = lengths.iter().map(|l| l / b.area).collect();
    Ok(trapezoid_mean(times, &ratios))
}

/// Time-averaged ratio of the set measured on each slice triangulation
/// instead of along advected curves.
///
/// `set` holds trajectory indices. On each slice it is restricted to the
/// trajectories observed there, so a gap removes the node and its
/// triangles from that slice only. Filaments thinner than the
/// local node spacing are invisible here, which is also the resolution at
/// which the assembled operator sees the flow. Useful as a diagnostic and
/// for trajectory files, where no flow field is available.
pub fn slice_cheeger_ratio(
    set: &NodeSet,
    slices: &[SliceMesh],
    times: &[f64],
    bc: BoundaryCondition,
) -> Result<f64, CheegerError> {
    if slices.len() != times.len() || times.is_empty() {
        return Err(
            FlowError::InvalidEnsemble(format!("{} slice meshes for {} times", slices.len(), times.len())).into(),
        );
    }
    let ratios = slices
        .iter()
        .map(|s| {
            let mut local = vec![None; s.ids.iter().max().map_or(0, |m| m + 1)];
            for (j, &i) in s.ids.iter().enumerate() {
                local[i] = Some(j);
            }
            let nodes = set
                .nodes
                .iter()
                .filter_map(|&i| local.get(i).copied().flatten())
                .collect();
            static_cheeger_ratio(&NodeSet::new(nodes), &s.mesh, bc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(trapezoid_mean(times, &ratios))
}

/// Mean of a sampled function over `[times[0], times[last]]` by the
/// trapezoid rule; a single sample is returned as is.
pub fn trapezoid_mean(times: &[f64], values: &[f64]) -> f64 {
    assert_eq!(times.len(), values.len());
    if times.len() == 1 {
        return values[0];
    }
    let span = times[times.len() - 1] - times[0];
    let integral: f64 = times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum();
    integral / span
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub n: usize,
    pub lambda: f64,
    pub bound: f64,
    pub max_ratio: f64,
    pub satisfied: bool,
}

/// Compares a packing ratio with the spectral bound `√(−2λ)`.
pub fn check_bound(max_ratio: f64, lambda: f64, n: usize) -> Result<BoundCheck, CheegerError> {
    if lambda > 0.0 {
        return Err(CheegerError::PositiveEigenvalue(lambda));
    }
    let bound = (-2.0 * lambda).sqrt();
    Ok(BoundCheck {
        n,
        lambda,
        bound,
        max_ratio,
        satisfied: max_ratio <= bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioKind {
    Static,
    Dynamic,
    /// Measured on the trajectory meshes, see [`slice_cheeger_ratio`].
    Slice,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PackingReport {
    pub kind: RatioKind,
    pub bc: BoundaryCondition,
    pub sets: Vec<Vec<usize>>,
    pub thresholds: Vec<f64>,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub lambda: Option<f64>,
    pub bound: Option<f64>,
    pub satisfied: Option<bool>,
    /// Fraction of the threshold grid whose packing meets the bound.
    pub feasible_fraction: Option<f64>,
}

impl PackingReport {
    pub fn new(
        kind: RatioKind,
        bc: BoundaryCondition,
        sets: &[NodeSet],
        thresholds: Vec<f64>,
        ratios: Vec<f64>,
        lambda: Option<f64>,
    ) -> Result<Self, CheegerError> {
        let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let check = lambda.map(|l| check_bound(max_ratio, l, sets.len())).transpose()?;
        Ok(Self {
            kind,
            bc,
            sets: sets.iter().map(|s| s.nodes.clone()).collect(),
            thresholds,
            ratios,
            max_ratio,
            lambda,
            bound: check.map(|c| c.bound),
            satisfied: check.map(|c| c.satisfied),
            feasible_fraction: None,
        })
    }
}

/// Threshold grid for one nodal domain: `count` values geometrically spaced
/// between `1e-4·m` and `0.95·m`, with `m` the largest `f²` on the domain.
pub fn threshold_grid(field: &[f64], domain: &NodeSet, count: usize) -> Vec<f64> {
    let top = domain.nodes.iter().map(|&i| field[i] * field[i]).fold(0.0, f64::max);
    let (lo, hi) = (1e-4 * top, 0.95 * top);
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|j| lo * (hi / lo).powf(j as f64 / (count - 1) as f64))
            .collect(),
    }
}

/// Result of scanning superlevel thresholds over the `n` largest nodal
/// domains.
#[derive(Debug, Clone)]
pub struct ThresholdScan {
    /// Per domain: `(threshold, ratio)` for every grid value; infinite
    /// ratios mark empty or area-less sets.
    pub per_domain: Vec<Vec<(f64, f64)>>,
    /// Packing with the smallest worst-case ratio.
    pub best: PackingReport,
    pub best_sets: Vec<NodeSet>,
}

/// Scans a `count^n` threshold grid over the `n` largest nodal domains of
/// `field` and reports the packing minimizing the largest ratio.
///
/// The worst ratio of a packing is the maximum of per-domain ratios, each
/// depending on its own threshold only, so every distinct superlevel set is
/// evaluated once and the grid is resolved from the per-domain tables.
#[allow(clippy::too_many_arguments)]
pub fn threshold_scan<F>(
    field: &[f64],
    mesh: &TriMesh,
    n: usize,
    count: usize,
    lambda: Option<f64>,
    kind: RatioKind,
    bc: BoundaryCondition,
    mut ratio: F,
) -> Result<ThresholdScan, CheegerError>
where
    F: FnMut(&NodeSet) -> Result<f64, CheegerError>,
{
    let domains = nodal_domains(field, mesh)?;
    if domains.len() < n {
        return Err(CheegerError::TooFewNodalDomains {
            found: domains.len(),
            needed: n,
        });
    }
    let mut cache: HashMap<NodeSet, f64> = HashMap::new();
    let mut per_domain = Vec::with_capacity(n);
    let mut best_idx = Vec::with_capacity(n);
    let mut best_sets = Vec::with_capacity(n);
    for d in domains.iter().take(n) {
        let mut table = Vec::with_capacity(count);
        let mut best: Option<(usize, f64, NodeSet)> = None;
        for c in threshold_grid(field, &d.set, count) {
            let set = NodeSet {
                nodes: d
                    .set
                    .nodes
                    .iter()
                    .copied()
                    .filter(|&i| field[i] * field[i] >= c)
                    .collect(),
            };
            let r = match cache.get(&set) {
                Some(&r) => r,
                None => {
                    let r = match ratio(&set) {
                        Ok(r) => r,
                        Err(CheegerError::ZeroArea | CheegerError::EmptySet) => f64::INFINITY,
                        Err(e) => return Err(e),
                    };
                    cache.insert(set.clone(), r);
                    r
                }
            };
            if best.as_ref().is_none_or(|b| r < b.1) {
                best = Some((table.len(), r, set));
            }
            table.push((c, r));
        }
        let (j, _, set) = best.ok_or(CheegerError::EmptySet)?;
        best_idx.push(j);
        best_sets.push(set);
        per_domain.push(table);
    }

    let thresholds = best_idx.iter().zip(&per_domain).map(|(&j, t)| t[j].0).collect();
    let ratios = best_idx.iter().zip(&per_domain).map(|(&j, t)| t[j].1).collect();
    let mut best = PackingReport::new(kind, bc, &best_sets, thresholds, ratios, lambda)?;
    if let Some(bound) = best.bound {
        let fraction: f64 = per_domain
            .iter()
            .map(|t| t.iter().filter(|(_, r)| *r <= bound).count() as f64 / t.len() as f64)
            .product();
        best.feasible_fraction = Some(fraction);
    }
    Ok(ThresholdScan {
        per_domain,
        best,
        best_sets,
    })
}
