//! Leading eigenpairs of the symmetric pencil `A v = λ M v`, with `A`
//! negative semidefinite and `M` positive definite.
//!
//! The wanted eigenvalues are the ones closest to zero, at the top of a
//! spectrum that runs off to `-∞`, so the solver works with the
//! shift-inverted operator `(σM − A)⁻¹M` for a small `σ > 0`. That operator
//! is self-adjoint and positive in the `M` inner product, and its largest
//! eigenvalues `1/(σ − λ)` belong to the wanted pairs. A block Krylov
//! space is grown with full `M`-reorthogonalization and explicit restarts;
//! blocks make repeated eigenvalues (common on symmetric domains) safe.

mod cholesky;

use log::debug;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use cholesky::{reverse_cuthill_mckee, EnvelopeCholesky, NotPositiveDefinite};

use crate::flow::TrajectoryEnsemble;
use crate::mesh::SparseSymMatrix;

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("shifted matrix could not be factorized (last shift {shift:e}, pivot {pivot})")]
    FactorizationFailure { shift: f64, pivot: usize },
    #[error("no convergence after {iterations} operator applications (worst residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("requested {k} eigenpairs of a {dim}-dimensional problem")]
    InvalidCount { k: usize, dim: usize },
    #[error("matrix dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("eigenfunction index {index} out of range ({count} available)")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("slice index {slice} out of range ({count} slices)")]
    SliceOutOfRange { slice: usize, count: usize },
    #[error("eigenvector length {len} does not match {expected} trajectories")]
    LengthMismatch { len: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Tolerance on the shift-inverted residual
    /// `‖(σM − A)⁻¹(Av − λMv)‖_M / ‖v‖_M`.
    pub tol: f64,
    /// Seed of the random start block.
    pub seed: u64,
    /// Cap on operator applications; `None` means `300·k`.
    pub max_iter: Option<usize>,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            seed: 0,
            max_iter: None,
        }
    }
}

/// Eigenpairs sorted by decreasing eigenvalue, `M`-orthonormal.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    /// Shift-inverted residuals, see [`EigenOptions::tol`].
    pub residuals: Vec<f64>,
    /// Shift used for the factorization.
    pub shift: f64,
    /// Number of shift-invert solves performed.
    pub iterations: usize,
}

impl EigenResult {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Linear combinations `Σ_j cols[j] · coef[(j, c)]` for each column `c`.
fn combine(cols: &[Vec<f64>], coef: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let n = cols.first().map_or(0, Vec::len);
    (0..coef.ncols())
        .map(|c| {
            let mut out = vec![0.0; n];
            for (j, col) in cols.iter().enumerate() {
                let w = coef[(j, c)];
                if w != 0.0 {
                    axpy(w, col, &mut out);
                }
            }
            out
        })
        .collect()
}

struct KrylovBasis<'a> {
    m: &'a SparseSymMatrix,
    chol: &'a EnvelopeCholesky,
    /// `M`-orthonormal basis vectors.
    v: Vec<Vec<f64>>,
    mv: Vec<Vec<f64>>,
    /// Shift-invert images `(σM − A)⁻¹ M v`.
    z: Vec<Vec<f64>>,
    solves: usize,
}

impl<'a> KrylovBasis<'a> {
    /// `M`-orthogonalizes candidates against the basis and appends the ones
    /// that survive; returns how many were added.
    fn extend(&mut self, candidates: Vec<Vec<f64>>) -> usize {
        let mut added = 0;
        for mut c in candidates {
            let before = dot(&c, &self.m.mul_vec(&c)).max(0.0).sqrt();
            if before == 0.0 {
                continue;
            }
            for _ in 0..2 {
                for (v, mv) in self.v.iter().zip(&self.mv) {
                    let h = dot(mv, &c);
                    axpy(-h, v, &mut c);
                }
            }
            let mc = self.m.mul_vec(&c);
            let norm = dot(&c, &mc).max(0.0).sqrt();
            if norm <= 1e-10 * before {
                continue;
            }
            c.iter_mut().for_each(|x| *x /= norm);
            let mc: Vec<f64> = mc.into_iter().map(|x| x / norm).collect();
            let z = self.chol.solve(&mc);
            self.solves += 1;
            self.v.push(c);
            self.mv.push(mc);
            self.z.push(z);
            added += 1;
        }
        added
    }

    fn projected(&self) -> DMatrix<f64> {
        let q = self.v.len();
        let mut h = DMatrix::zeros(q, q);
        for i in 0..q {
            for j in i..q {
                let x = 0.5 * (dot(&self.mv[i], &self.z[j]) + dot(&self.mv[j], &self.z[i]));
                h[(i, j)] = x;
                h[(j, i)] = x;
            }
        }
        h
    }
}

fn factor_shifted(
    a: &SparseSymMatrix,
    m: &SparseSymMatrix,
    mut shift: f64,
) -> Result<(EnvelopeCholesky, f64), EigenError> {
    let mut last = NotPositiveDefinite { pivot: 0, value: 0.0 };
    for _ in 0..6 {
        let k = m.linear_combination(shift, a, -1.0);
        match EnvelopeCholesky::factor(&k) {
            Ok(chol) => return Ok((chol, shift)),
            Err(e) => {
                debug!("factorization failed at shift {shift:e} (pivot {})", e.pivot);
                last = e;
                shift *= 10.0;
            }
        }
    }
    Err(EigenError::FactorizationFailure {
        shift: shift / 10.0,
        pivot: last.pivot,
    })
}

/// Computes the `k` algebraically largest eigenpairs of `A v = λ M v`.
///
/// The shift is `σ = tol · median_i |A_ii| / M_ii`; if `σM − A` is not
/// positive definite the shift is increased tenfold and the factorization
/// retried. Eigenvectors are `M`-orthonormal and each is signed so that its
/// largest-magnitude entry is positive.
pub fn solve_gevp(
    a: &SparseSymMatrix,
    m: &SparseSymMatrix,
    k: usize,
    opts: &EigenOptions,
) -> Result<EigenResult, EigenError> {
    let n = a.dim();
    if m.dim() != n {
        return Err(EigenError::DimensionMismatch(n, m.dim()));
    }
    if k == 0 || k > n {
        return Err(EigenError::InvalidCount { k, dim: n });
    }
    // median rather than maximum: badly shaped elements produce isolated
    // huge diagonal ratios
    let mut ratios: Vec<f64> = a
        .diagonal()
        .iter()
        .zip(m.diagonal())
        .filter(|(_, md)| *md > 0.0)
        .map(|(ad, md)| ad.abs() / md)
        .collect();
    ratios.sort_by(f64::total_cmp);
    let scale = ratios.get(ratios.len() / 2).copied().unwrap_or(0.0);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let (chol, shift) = factor_shifted(a, m, opts.tol * scale)?;

    let block = n.min((2 * k).max(k + 6));
    let max_basis = n.min((6 * block).max(60));
    let max_iter = opts.max_iter.unwrap_or(300 * k).max(block);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut random_block = |count: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };

    let mut basis = KrylovBasis {
        m,
        chol: &chol,
        v: Vec::new(),
        mv: Vec::new(),
        z: Vec::new(),
        solves: 0,
    };
    let mut last_added = basis.extend(random_block(block));

    loop {
        let q = basis.v.len();
        let eig = SymmetricEigen::new(basis.projected());
        let mut order: Vec<usize> = (0..q).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

        let take = k.min(q);
        let coef = DMatrix::from_fn(q, take, |r, c| eig.eigenvectors[(r, order[c])]);
        let ritz = combine(&basis.v, &coef);
        let mx: Vec<Vec<f64>> = ritz.iter().map(|x| m.mul_vec(x)).collect();
        let xmx: Vec<f64> = ritz.iter().zip(&mx).map(|(x, mx)| dot(x, mx)).collect();
        let mut values = Vec::with_capacity(take);
        let mut residuals = Vec::with_capacity(take);
        for (i, x) in ritz.iter().enumerate() {
            let ax = a.mul_vec(x);
            let lambda = dot(x, &ax) / xmx[i];
            let mut r: Vec<f64> = ax.iter().zip(&mx[i]).map(|(p, q)| p - lambda * q).collect();
            // an exact residual is orthogonal to every eigenvector; what lies
            // along the Ritz vectors is rounding in `Ax`, which the inverse
            // would amplify by up to 1/σ
            for (y, my) in ritz.iter().zip(&mx) {
                let c = dot(y, &r) / dot(y, my);
                axpy(-c, my, &mut r);
            }
            let kr = chol.solve(&r);
            values.push(lambda);
            residuals.push((dot(&kr, &m.mul_vec(&kr)).max(0.0) / xmx[i]).sqrt());
        }
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        let exhausted = q == n;
        debug!("basis {q}, solves {}, worst residual {worst:e}", basis.solves);

        if take == k && (worst <= opts.tol || exhausted) {
            return Ok(finish(values, ritz, residuals, m, shift, basis.solves));
        }
        if basis.solves >= max_iter {
            return Err(EigenError::NoConvergence {
                iterations: basis.solves,
                residual: worst,
            });
        }

        let mut candidates: Vec<Vec<f64>> = basis.z[q - last_added..].to_vec();
        if q + block > max_basis {
            // explicit restart on the leading Ritz vectors
            let keep = block.min(q);
            let coef = DMatrix::from_fn(q, keep, |r, c| eig.eigenvectors[(r, order[c])]);
            let v = combine(&basis.v, &coef);
            let mv = combine(&basis.mv, &coef);
            let z = combine(&basis.z, &coef);
            candidates = z.clone();
            basis.v = v;
            basis.mv = mv;
            basis.z = z;
        }
        last_added = basis.extend(candidates);
        if last_added == 0 {
            // invariant subspace reached: continue from fresh directions
            last_added = basis.extend(random_block(block));
            if last_added == 0 {
                return Err(EigenError::NoConvergence {
                    iterations: basis.solves,
                    residual: worst,
                });
            }
        }
    }
}

fn finish(
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
    residuals: Vec<f64>,
    m: &SparseSymMatrix,
    shift: f64,
    iterations: usize,
) -> EigenResult {
    let mut pairs: Vec<(f64, Vec<f64>, f64)> = values
        .into_iter()
        .zip(vectors)
        .zip(residuals)
        .map(|((l, v), r)| (l, v, r))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut eigenvalues = Vec::new();
    let mut eigenvectors = Vec::new();
    let mut res = Vec::new();
    for (l, mut v, r) in pairs {
        let norm = dot(&v, &m.mul_vec(&v)).sqrt();
        let big = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let s = if big < 0.0 { -1.0 / norm } else { 1.0 / norm };
        v.iter_mut().for_each(|x| *x *= s);
        eigenvalues.push(l);
        eigenvectors.push(v);
        res.push(r);
    }
    EigenResult {
        eigenvalues,
        eigenvectors,
        residuals: res,
        shift,
        iterations,
    }
}

/// Values of eigenfunction `index` carried along the trajectories to slice
/// `l`: entry `i` is the value at trajectory `i`, or `None` if the
/// trajectory is not observed at `l`. `vector` must be indexed by
/// trajectory (expand Dirichlet results first).
pub fn pushforward_field(
    vectors: &[Vec<f64>],
    ensemble: &TrajectoryEnsemble,
    index: usize,
    l: usize,
) -> Result<Vec<Option<f64>>, EigenError> {
    let v = vectors.get(index).ok_or(EigenError::IndexOutOfRange {
        index,
        count: vectors.len(),
    })?;
    if v.len() != ensemble.len() {
        return Err(EigenError::LengthMismatch {
            len: v.len(),
            expected: ensemble.len(),
        });
    }
    if l >= ensemble.num_times() {
        return Err(EigenError::SliceOutOfRange {
            slice: l,
            count: ensemble.num_times(),
        });
    }
    Ok((0..ensemble.len())
        .map(|i| ensemble.is_present(i, l).then_some(v[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_path() {
        let a = SparseSymMatrix::from_triplets(2, &[(0, 0, -1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, -1.0)]);
        let m = SparseSymMatrix::identity(2);
        let res = solve_gevp(&a, &m, 2, &EigenOptions::default()).unwrap();
        assert!(res.eigenvalues[0].abs() < 1e-12);
        assert!((res.eigenvalues[1] + 2.0).abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for (x, y) in res.eigenvectors[0].iter().zip([s, s]) {
            assert!((x - y).abs() < 1e-10);
        }
        let v1 = &res.eigenvectors[1];
        assert!((v1[0].abs() - s).abs() < 1e-10 && (v1[0] + v1[1]).abs() < 1e-10);
    }

    #[test]
    fn diagonal_pencil() {
        let n = 40;
        let a = SparseSymMatrix::from_triplets(n, &(0..n).map(|i| (i, i, -(i as f64))).collect::<Vec<_>>());
        let m = SparseSymMatrix::from_triplets(n, &(0..n).map(|i| (i, i, 2.0)).collect::<Vec<_>>());
        let res = solve_gevp(&a, &m, 3, &EigenOptions::default()).unwrap();
        for (l, want) in res.eigenvalues.iter().zip([0.0, -0.5, -1.0]) {
            assert!((l - want).abs() < 1e-10, "{:?}", res.eigenvalues);
        }
        assert!(res.residuals.iter().all(|&r| r <= 1e-8));
    }

    #[test]
    fn invalid_counts() {
        let a = SparseSymMatrix::from_triplets(2, &[(0, 0, -1.0), (1, 1, -1.0)]);
        let m = SparseSymMatrix::identity(2);
        assert!(matches!(
            solve_gevp(&a, &m, 0, &EigenOptions::default()),
            Err(EigenError::InvalidCount { .. })
        ));
        assert!(matches!(
            solve_gevp(&a, &m, 3, &EigenOptions::default()),
            Err(EigenError::InvalidCount { .. })
        ));
        assert!(matches!(
            solve_gevp(&a, &SparseSymMatrix::identity(3), 1, &EigenOptions::default()),
            Err(EigenError::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn indefinite_pencil_fails_to_factor() {
        // A has a large positive eigenvalue, so σM − A stays indefinite
        let a = SparseSymMatrix::from_triplets(2, &[(0, 0, 1e9), (1, 1, -1.0)]);
        let m = SparseSymMatrix::identity(2);
        assert!(matches!(
            solve_gevp(&a, &m, 1, &EigenOptions::default()),
            Err(EigenError::FactorizationFailure { .. })
        ));
    }
}
