//! Envelope (profile) Cholesky factorization with reverse Cuthill–McKee
//! ordering.

use std::collections::VecDeque;

use crate::mesh::SparseSymMatrix;

/// Reverse Cuthill–McKee permutation: `perm[new] = old`.
///
/// Each connected component starts from a pseudo-peripheral node found by
/// repeated breadth-first search; neighbours are visited in increasing
/// degree, ties broken by index.
pub fn reverse_cuthill_mckee(a: &SparseSymMatrix) -> Vec<usize> {
    let n = a.dim();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).0.iter().copied().filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(seed, &adj, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> (Vec<usize>, usize) {
    // returns (last level, eccentricity)
    let mut dist = vec![usize::MAX; adj.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut far = 0;
    let mut seen = vec![start];
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                far = far.max(dist[w]);
                queue.push_back(w);
                seen.push(w);
            }
        }
    }
    let last = seen.into_iter().filter(|&v| dist[v] == far).collect();
    (last, far)
}

fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut node = seed;
    let (mut last, mut ecc) = bfs_levels(node, adj);
    loop {
        let candidate = *last.iter().min_by_key(|&&v| (degree[v], v)).unwrap();
        let (next_last, next_ecc) = bfs_levels(candidate, adj);
        if next_ecc <= ecc {
            return node;
        }
        node = candidate;
        last = next_last;
        ecc = next_ecc;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
    pub value: f64,
}

/// `K = L Lᵀ` in envelope storage under a symmetric permutation.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    /// First stored column of each row of `L` (permuted numbering).
    first: Vec<usize>,
    /// Start of each row in `values`; row `i` holds columns `first[i]..=i`.
    start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(k: &SparseSymMatrix) -> Result<Self, NotPositiveDefinite> {
        let perm = reverse_cuthill_mckee(k);
        Self::factor_with(k, perm)
    }

    pub fn factor_with(k: &SparseSymMatrix, perm: Vec<usize>) -> Result<Self, NotPositiveDefinite> {
        let n = k.dim();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            for &j in k.row(old).0 {
                first[new] = first[new].min(inv[j]);
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + i - first[i] + 1);
        }
        let mut values = vec![0.0; start[n]];
        for (new, &old) in perm.iter().enumerate() {
            let (cols, vals) = k.row(old);
            for (&j, &v) in cols.iter().zip(vals) {
                let jn = inv[j];
                if jn <= new {
                    values[start[new] + jn - first[new]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let row_i = start[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let row_j = start[j];
                let mut s = values[row_i + j - fi];
                let a = &values[row_i + lo - fi..row_i + j - fi];
                let b = &values[row_j + lo - fj..row_j + j - fj];
                s -= a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                let diag_j = values[row_j + j - fj];
                values[row_i + j - fi] = s / diag_j;
            }
            let row = &values[row_i..row_i + i - fi];
            let d = values[row_i + i - fi] - row.iter().map(|x| x * x).sum::<f64>();
            if !(d.is_finite() && d > 0.0) {
                return Err(NotPositiveDefinite {
                    pivot: perm[i],
                    value: d,
                });
            }
            values[row_i + i - fi] = d.sqrt();
        }
        Ok(Self {
            perm,
            first,
            start,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    /// Solves `K x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        // forward: L y = b
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            let s: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        // backward: Lᵀ x = y, column-oriented over the rows of L
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (l, v) in row[..i - fi].iter().zip(&mut y[fi..i]) {
                *v -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
