//! Sparse eigenbasis approximation (SEBA).
//!
//! Given `r` orthonormal vectors spanning a subspace, SEBA looks for a
//! rotation of that basis whose soft-thresholded columns are sparse while
//! still approximately spanning the same subspace. The iteration alternates
//! between thresholding the rotated basis and re-fitting the rotation as
//! the orthogonal polar factor of `SᵀV`.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::mesh::SparseSymMatrix;

#[derive(Debug, Error)]
pub enum SebaError {
    #[error("input columns are not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("need at least one input vector")]
    Empty,
    #[error("every column thresholded to zero")]
    RankCollapse,
    #[error("inner-product matrix has dimension {0}, vectors have length {1}")]
    DimensionMismatch(usize, usize),
}

/// Starting rotation of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SebaInit {
    /// Polar factor of `r` rows of `V` chosen by greedy pivoting (largest
    /// residual norm first). Depends only on the subspace, so the output
    /// does not change when `V` is replaced by `V·Q`.
    #[default]
    PivotedRows,
    /// `R₀ = I`.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SebaOptions {
    /// Soft threshold; `None` means `0.99 / √N`.
    pub mu: Option<f64>,
    pub init: SebaInit,
    pub max_iter: usize,
    /// Stop when `‖R_new − R_old‖_F` falls to this value.
    pub tol: f64,
}

impl Default for SebaOptions {
    fn default() -> Self {
        Self {
            mu: None,
            init: SebaInit::default(),
            max_iter: 5000,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SebaBasis {
    /// `N × r'` sparse vectors, each with maximum exactly 1.
    pub vectors: DMatrix<f64>,
    /// `r × r` orthogonal rotation of the final iterate.
    pub rotation: DMatrix<f64>,
    pub mu: f64,
    pub iterations: usize,
    /// Most negative entry of each output column (0 if none is negative).
    pub min_values: Vec<f64>,
    /// Input-order indices of columns that thresholded to zero and were
    /// dropped.
    pub dropped: Vec<usize>,
}

fn soft_threshold(x: f64, mu: f64) -> f64 {
    x.signum() * (x.abs() - mu).max(0.0)
}

/// Orthogonal polar factor `U Wᵀ` of a square matrix.
fn polar_factor(m: DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    u * vt
}

/// Indices of `r` rows picked by pivoted Gram–Schmidt on the rows of `v`,
/// returned in increasing order; ties go to the lowest index.
fn pivot_rows(v: &DMatrix<f64>) -> Vec<usize> {
    let (n, r) = v.shape();
    let mut rows: Vec<Vec<f64>> = (0..n).map(|i| v.row(i).iter().copied().collect()).collect();
    let mut picked = Vec::with_capacity(r);
    for _ in 0..r {
        let norm2 = |x: &Vec<f64>| x.iter().map(|a| a * a).sum::<f64>();
        let (best, size) = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| !picked.contains(i))
            .map(|(i, x)| (i, norm2(x)))
            .fold((usize::MAX, -1.0), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
        if best == usize::MAX || size <= 0.0 {
            break;
        }
        picked.push(best);
        let q: Vec<f64> = rows[best].iter().map(|a| a / size.sqrt()).collect();
        for x in rows.iter_mut() {
            let d: f64 = x.iter().zip(&q).map(|(a, b)| a * b).sum();
            x.iter_mut().zip(&q).for_each(|(a, b)| *a -= d * b);
        }
    }
    picked.sort_unstable();
    picked
}

fn initial_rotation(v: &DMatrix<f64>, init: SebaInit) -> DMatrix<f64> {
    let r = v.ncols();
    match init {
        SebaInit::Identity => DMatrix::identity(r, r),
        SebaInit::PivotedRows => {
            let rows = pivot_rows(v);
            if rows.len() < r {
                return DMatrix::identity(r, r);
            }
            let sel = DMatrix::from_fn(r, r, |i, j| v[(rows[i], j)]);
            polar_factor(sel)
        }
    }
}

fn threshold_normalized(z: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    let mut s = z.map(|x| soft_threshold(x, mu));
    for mut col in s.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    s
}

/// Makes `V` Euclidean-orthonormal. If `weights` is given the columns must
/// be orthonormal in that inner product; they are re-orthonormalized in the
/// Euclidean one (same span) by a thin QR.
pub fn euclidean_basis(v: &DMatrix<f64>, weights: Option<&SparseSymMatrix>) -> Result<DMatrix<f64>, SebaError> {
    let r = v.ncols();
    let gram = match weights {
        Some(m) => {
            if m.dim() != v.nrows() {
                return Err(SebaError::DimensionMismatch(m.dim(), v.nrows()));
            }
            let cols: Vec<Vec<f64>> = v.column_iter().map(|c| c.iter().copied().collect()).collect();
            let mc: Vec<Vec<f64>> = cols.iter().map(|c| m.mul_vec(c)).collect();
            DMatrix::from_fn(r, r, |i, j| cols[i].iter().zip(&mc[j]).map(|(a, b)| a * b).sum())
        }
        None => v.transpose() * v,
    };
    let dev = (gram - DMatrix::identity(r, r)).abs().max();
    if dev > 1e-8 {
        return Err(SebaError::NotOrthonormal(dev));
    }
    Ok(if weights.is_some() {
        v.clone().qr().q()
    } else {
        v.clone()
    })
}

/// Runs SEBA on the columns of `v` (`N × r`).
///
/// Output columns are sign-flipped so that the entry of largest magnitude
/// is positive, scaled to maximum 1, and ordered by decreasing count of
/// entries `≥ 0.5`.
pub fn seba(v: &DMatrix<f64>, weights: Option<&SparseSymMatrix>, opts: &SebaOptions) -> Result<SebaBasis, SebaError> {
    let (n, r) = v.shape();
    if r == 0 || n == 0 {
        return Err(SebaError::Empty);
    }
    let v = euclidean_basis(v, weights)?;
    let mu = opts.mu.unwrap_or(0.99 / (n as f64).sqrt());

    let mut rot = initial_rotation(&v, opts.init);
    let mut s = threshold_normalized(&(&v * rot.transpose()), mu);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let next = polar_factor(s.transpose() * &v);
        let change = (&next - &rot).norm();
        rot = next;
        s = threshold_normalized(&(&v * rot.transpose()), mu);
        if change <= opts.tol {
            break;
        }
    }

    let mut columns: Vec<(usize, Vec<f64>)> = Vec::with_capacity(r);
    let mut dropped = Vec::new();
    for (c, col) in s.column_iter().enumerate() {
        let big = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if big == 0.0 {
            dropped.push(c);
            continue;
        }
        columns.push((c, col.iter().map(|x| x / big).collect()));
    }
    if columns.is_empty() {
        return Err(SebaError::RankCollapse);
    }
    let count = |c: &Vec<f64>| c.iter().filter(|&&x| x >= 0.5).count();
    columns.sort_by(|a, b| count(&b.1).cmp(&count(&a.1)).then(a.0.cmp(&b.0)));

    let vectors = DMatrix::from_fn(n, columns.len(), |i, j| columns[j].1[i]);
    let min_values = columns
        .iter()
        .map(|(_, c)| c.iter().copied().fold(0.0, f64::min))
        .collect();
    Ok(SebaBasis {
        vectors,
        rotation: rot,
        mu,
        iterations,
        min_values,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ColumnReliability {
    pub min_value: f64,
    pub spurious: bool,
}

/// Default rejection level for [`reliability`].
pub const DEFAULT_REJECTION_LEVEL: f64 = -0.2;

/// Flags columns whose most negative entry lies below `reject_below`.
pub fn reliability(basis: &SebaBasis, reject_below: f64) -> Vec<ColumnReliability> {
    basis
        .min_values
        .iter()
        .map(|&min_value| ColumnReliability {
            min_value,
            spurious: min_value < reject_below,
        })
        .collect()
}

/// `‖VVᵀ − P_S‖_F / ‖VVᵀ‖_F` for orthonormal `V`, with `P_S` the orthogonal
/// projector onto the column space of `S`.
pub fn span_residual(v: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    let q = s.clone().qr().q();
    let r = v.ncols() as f64;
    let rs = q.ncols() as f64;
    let overlap = (v.transpose() * q).norm_squared();
    ((r + rs - 2.0 * overlap).max(0.0) / r).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn indicators(n: usize, split: usize) -> DMatrix<f64> {
        let a = 1.0 / (split as f64).sqrt();
        let b = 1.0 / ((n - split) as f64).sqrt();
        DMatrix::from_fn(n, 2, |i, j| match (j, i < split) {
            (0, true) => a,
            (1, false) => b,
            _ => 0.0,
        })
    }

    #[test]
    fn soft_threshold_definition() {
        assert_eq!(soft_threshold(0.5, 0.2), 0.3);
        assert_eq!(soft_threshold(-0.5, 0.2), -0.3);
        assert_eq!(soft_threshold(0.1, 0.2), 0.0);
    }

    #[test]
    fn disjoint_indicators_are_fixed_points() {
        let v = indicators(100, 30);
        let basis = seba(&v, None, &SebaOptions::default()).unwrap();
        assert_eq!(basis.vectors.ncols(), 2);
        // larger support first
        for i in 0..100 {
            let want = if i >= 30 { (1.0, 0.0) } else { (0.0, 1.0) };
            assert!((basis.vectors[(i, 0)] - want.0).abs() < 1e-10);
            assert!((basis.vectors[(i, 1)] - want.1).abs() < 1e-10);
        }
        assert!((basis.rotation.clone() - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        assert!(basis.iterations <= 2);
    }

    #[test]
    fn single_constant_vector() {
        let n = 50;
        let v = DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt());
        let basis = seba(&v, None, &SebaOptions::default()).unwrap();
        assert!(basis.vectors.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert_eq!(basis.min_values, vec![0.0]);
    }

    #[test]
    fn rejects_non_orthonormal_input() {
        let v = DMatrix::from_element(10, 2, 0.3);
        assert!(matches!(
            seba(&v, None, &SebaOptions::default()),
            Err(SebaError::NotOrthonormal(_))
        ));
    }

    #[test]
    fn weighted_orthonormal_input_is_accepted() {
        // columns orthonormal under M = 4·I
        let m = SparseSymMatrix::from_triplets(20, &(0..20).map(|i| (i, i, 4.0)).collect::<Vec<_>>());
        let v = indicators(20, 10) * 0.5;
        let basis = seba(&v, Some(&m), &SebaOptions::default()).unwrap();
        assert_eq!(basis.vectors.ncols(), 2);
        assert!(seba(&v, None, &SebaOptions::default()).is_err());
    }

    #[test]
    fn huge_threshold_collapses() {
        let v = indicators(10, 5);
        let opts = SebaOptions {
            mu: Some(10.0),
            ..Default::default()
        };
        assert!(matches!(seba(&v, None, &opts), Err(SebaError::RankCollapse)));
    }

    #[test]
    fn reliability_flags() {
        let basis = SebaBasis {
            vectors: DMatrix::zeros(1, 2),
            rotation: DMatrix::identity(2, 2),
            mu: 0.1,
            iterations: 1,
            min_values: vec![0.0, -0.5],
            dropped: vec![],
        };
        let flags = reliability(&basis, DEFAULT_REJECTION_LEVEL);
        assert!(!flags[0].spurious);
        assert!(flags[1].spurious);
    }

    #[test]
    fn span_residual_of_identical_spaces_is_zero() {
        let v = indicators(30, 12);
        assert!(span_residual(&v, &(v.clone() * 3.0)) < 1e-12);
        let other = DMatrix::from_fn(30, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        assert!(span_residual(&v, &other) > 0.5);
    }
}
