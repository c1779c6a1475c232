//! Symmetric sparse matrices in compressed-row layout.
//!
//! Both triangles of the matrix are stored, so row access and
//! matrix-vector products need no special casing. MatrixMarket coordinate
//! I/O writes the lower triangle with the `symmetric` qualifier.

use std::io::{BufRead, Write};

use super::MeshError;

/// Symmetric matrix stored in compressed sparse row form with sorted column
/// indices in every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing repeated
    /// coordinates. Summation follows the input order of each coordinate, so
    /// the result is reproducible for a fixed triplet sequence.
    ///
    /// Triplets are taken as given: supply both `(i, j)` and `(j, i)` for
    /// off-diagonal entries.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; dim + 1];
        for &(i, j, _) in triplets {
            assert!(i < dim && j < dim, "triplet ({i}, {j}) outside {dim}x{dim}");
            counts[i + 1] += 1;
        }
        for i in 0..dim {
            counts[i + 1] += counts[i];
        }
        // bucket by row, preserving input order
        let mut next = counts.clone();
        let mut bucket: Vec<(usize, f64)> = vec![(0, 0.0); triplets.len()];
        for &(i, j, v) in triplets {
            bucket[next[i]] = (j, v);
            next[i] += 1;
        }

        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..dim {
            let row = &mut bucket[counts[i]..counts[i + 1]];
            row.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < row.len() {
                let j = row[k].0;
                let mut sum = 0.0;
                while k < row.len() && row[k].0 == j {
                    sum += row[k].1;
                    k += 1;
                }
                col_idx.push(j);
                values.push(sum);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            dim,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0; dim + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let triplets: Vec<_> = (0..dim).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(dim, &triplets)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored entries (both triangles).
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterates over stored `(row, col, value)` entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `xᵀ A y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// `alpha * self + beta * other`.
    pub fn linear_combination(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert_eq!(self.dim, other.dim);
        let triplets: Vec<_> = self
            .triplets()
            .map(|(i, j, v)| (i, j, alpha * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, beta * v)))
            .collect();
        Self::from_triplets(self.dim, &triplets)
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
            / scale
    }

    /// Principal submatrix on `keep` (indices in the new ordering follow
    /// the order of `keep`).
    pub fn submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.dim];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_i, &old_i) in keep.iter().enumerate() {
            let (cols, vals) = self.row(old_i);
            for (&j, &v) in cols.iter().zip(vals) {
                if map[j] != usize::MAX {
                    triplets.push((new_i, map[j], v));
                }
            }
        }
        Self::from_triplets(keep.len(), &triplets)
    }

    /// Embeds this matrix into a larger one of size `dim`, sending local
    /// index `i` to `global[i]`.
    pub fn embed(&self, global: &[usize], dim: usize) -> Self {
        assert_eq!(global.len(), self.dim);
        let triplets: Vec<_> = self.triplets().map(|(i, j, v)| (global[i], global[j], v)).collect();
        Self::from_triplets(dim, &triplets)
    }

    /// Sum of matrices in the given order.
    pub fn sum_of(dim: usize, terms: &[Self]) -> Self {
        let triplets: Vec<_> = terms
            .iter()
            .flat_map(|m| {
                assert_eq!(m.dim, dim);
                m.triplets()
            })
            .collect();
        Self::from_triplets(dim, &triplets)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    /// Writes the lower triangle in MatrixMarket `coordinate real symmetric`
    /// format with 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let lower: Vec<_> = self.triplets().filter(|&(i, j, _)| j <= i).collect();
        writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(out, "{} {} {}", self.dim, self.dim, lower.len())?;
        for (i, j, v) in lower {
            writeln!(out, "{} {} {:e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }

    /// Reads a MatrixMarket `coordinate real` file. `symmetric` files are
    /// mirrored; `general` files are accepted if they are symmetric.
    pub fn read_matrix_market<R: BufRead>(input: R) -> Result<Self, MeshError> {
        let bad = |line: usize, msg: &str| MeshError::MatrixMarket {
            line,
            message: msg.to_string(),
        };
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let header = header.map_err(|e| bad(1, &e.to_string()))?.to_lowercase();
        let fields: Vec<_> = header.split_whitespace().collect();
        if fields.len() < 5
            || fields[0] != "%%matrixmarket"
            || fields[1] != "matrix"
            || fields[2] != "coordinate"
            || !matches!(fields[3], "real" | "integer")
        {
            return Err(bad(1, "expected `%%MatrixMarket matrix coordinate real ...`"));
        }
        let symmetric = match fields[4] {
            "symmetric" => true,
            "general" => false,
            other => return Err(bad(1, &format!("unsupported symmetry `{other}`"))),
        };

        let mut size: Option<(usize, usize)> = None;
        let mut triplets = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| bad(lineno, &e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let parts: Vec<_> = line.split_whitespace().collect();
            match size {
                None => {
                    if parts.len() != 3 {
                        return Err(bad(lineno, "expected `rows cols nnz`"));
                    }
                    let r: usize = parts[0].parse().map_err(|_| bad(lineno, "bad row count"))?;
                    let c: usize = parts[1].parse().map_err(|_| bad(lineno, "bad col count"))?;
                    let nnz: usize = parts[2].parse().map_err(|_| bad(lineno, "bad nnz"))?;
                    if r != c {
                        return Err(bad(lineno, "matrix is not square"));
                    }
                    size = Some((r, nnz));
                }
                Some((dim, _)) => {
                    if parts.len() != 3 {
                        return Err(bad(lineno, "expected `row col value`"));
                    }
                    let i: usize = parts[0].parse().map_err(|_| bad(lineno, "bad row index"))?;
                    let j: usize = parts[1].parse().map_err(|_| bad(lineno, "bad col index"))?;
                    let v: f64 = parts[2].parse().map_err(|_| bad(lineno, "bad value"))?;
                    if i == 0 || j == 0 || i > dim || j > dim {
                        return Err(bad(lineno, "index out of range"));
                    }
                    triplets.push((i - 1, j - 1, v));
                    if symmetric && i != j {
                        triplets.push((j - 1, i - 1, v));
                    }
                }
            }
        }
        let (dim, nnz) = size.ok_or_else(|| bad(1, "missing size line"))?;
        let stored = if symmetric {
            triplets.iter().filter(|t| t.1 <= t.0).count()
        } else {
            triplets.len()
        };
        if stored != nnz {
            return Err(bad(0, &format!("header declares {nnz} entries, found {stored}")));
        }
        let m = Self::from_triplets(dim, &triplets);
        if !symmetric && m.asymmetry() > 1e-12 {
            return Err(bad(0, "general matrix is not symmetric"));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> SparseSymMatrix {
        SparseSymMatrix::from_triplets(
            3,
            &[
                (0, 0, 1.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 1.0),
            ],
        )
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let m = SparseSymMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.5), (1, 1, -1.0)]);
        assert_eq!(m.get(0, 0), 3.5);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn columns_sorted_within_rows() {
        let m = SparseSymMatrix::from_triplets(3, &[(0, 2, 1.0), (0, 0, 1.0), (0, 1, 1.0)]);
        assert_eq!(m.row(0).0, &[0, 1, 2]);
    }

    #[test]
    fn matvec_and_row_sums() {
        let m = path3();
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(m.mul_vec(&[1.0, 0.0, 0.0]), vec![1.0, -1.0, 0.0]);
        assert_eq!(m.row_sums(), vec![0.0; 3]);
        assert_eq!(m.asymmetry(), 0.0);
    }

    #[test]
    fn submatrix_and_embed_are_inverse() {
        let m = path3();
        let sub = m.submatrix(&[0, 2]);
        assert_eq!(sub.dim(), 2);
        assert_eq!(sub.get(0, 0), 1.0);
        assert_eq!(sub.get(0, 1), 0.0);
        let back = sub.embed(&[0, 2], 3);
        assert_eq!(back.get(2, 2), 1.0);
        assert_eq!(back.get(1, 1), 0.0);
    }

    #[test]
    fn matrix_market_roundtrip() {
        let m = path3().scaled(0.1);
        let mut buf = Vec::new();
        m.write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real symmetric\n3 3 5\n"));
        let back = SparseSymMatrix::read_matrix_market(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn matrix_market_rejects_wrong_count() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 3\n1 1 1.0\n";
        assert!(SparseSymMatrix::read_matrix_market(text.as_bytes()).is_err());
    }
}
