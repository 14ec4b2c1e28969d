//! Compressed sparse row matrices and an envelope Cholesky factorization.
//!
//! Only what the Laplacian and the shift-invert eigensolver need: assembly
//! from triplets, products, and a bandwidth-reducing (reverse Cuthill–McKee)
//! factorization of symmetric positive definite systems.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Square n×n matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[a..b].binary_search(&j) {
            Ok(p) => self.values[a + p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| self.row(i).map(|(j, v)| v * x[j]).sum())
    }

    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            for i in 0..self.n {
                out[(i, c)] = self.row(i).map(|(j, v)| v * col[j]).sum();
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// `self + alpha * diag(d)`.
    pub fn add_diagonal(&self, alpha: f64, d: &[f64]) -> CsrMatrix {
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() + self.n);
        for i in 0..self.n {
            trip.extend(self.row(i).map(|(j, v)| (i, j, v)));
            trip.push((i, i, alpha * d[i]));
        }
        CsrMatrix::from_triplets(self.n, &trip)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }
}

/// Reverse Cuthill–McKee ordering of the symmetric sparsity graph.
pub fn reverse_cuthill_mckee(m: &CsrMatrix) -> Vec<usize> {
    let n = m.n();
    let degree: Vec<usize> = (0..n)
        .map(|i| m.row(i).filter(|&(j, _)| j != i).count())
        .collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        let start = pseudo_peripheral(m, start, &degree);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = m.row(v).map(|(j, _)| j).filter(|&j| !visited[j]).collect();
            nbrs.sort_by_key(|&j| (degree[j], j));
            for j in nbrs {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(m: &CsrMatrix, start: usize) -> Vec<usize> {
    let mut level = vec![usize::MAX; m.n()];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for (j, _) in m.row(v) {
            if level[j] == usize::MAX {
                level[j] = level[v] + 1;
                queue.push_back(j);
            }
        }
    }
    level
}

fn pseudo_peripheral(m: &CsrMatrix, start: usize, degree: &[usize]) -> usize {
    let mut node = start;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(m, node);
        let max = level
            .iter()
            .filter(|&&l| l != usize::MAX)
            .max()
            .copied()
            .unwrap_or(0);
        if max <= ecc && node != start {
            break;
        }
        ecc = max;
        node = (0..m.n())
            .filter(|&i| level[i] == max)
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
    }
    node
}

/// Cholesky factor of a permuted SPD matrix stored row-wise over its envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(m: &CsrMatrix) -> Result<Self> {
        let n = m.n();
        let perm = reverse_cuthill_mckee(m);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old_i in 0..n {
            let i = inv[old_i];
            for (old_j, _) in m.row(old_i) {
                let j = inv[old_j];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; offsets[n]];
        for old_i in 0..n {
            let i = inv[old_i];
            for (old_j, v) in m.row(old_i) {
                let j = inv[old_j];
                if j <= i {
                    data[offsets[i] + j - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let orig = data[offsets[i] + j - fi];
                let mut s = orig;
                let ri = offsets[i] - fi;
                let rj = offsets[j] - fj;
                for k in lo..j {
                    s -= data[ri + k] * data[rj + k];
                }
                if j < i {
                    data[ri + j] = s / data[rj + j];
                } else {
                    if !(s > 1e-12 * orig.abs()) {
                        return Err(Error::Degenerate(format!(
                            "matrix not positive definite at pivot {i} ({s:e})"
                        )));
                    }
                    data[ri + i] = s.sqrt();
                }
            }
        }
        Ok(EnvelopeCholesky {
            perm,
            first,
            offsets,
            data,
        })
    }

    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let ri = self.offsets[i] - fi;
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[ri + k] * y[k];
            }
            y[i] = s / self.data[ri + i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let ri = self.offsets[i] - fi;
            y[i] /= self.data[ri + i];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.data[ri + k] * yi;
            }
        }
        let mut x = DVector::zeros(n);
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, shift));
            if i + 1 < n {
                t.extend([
                    (i, i, 1.0),
                    (i + 1, i + 1, 1.0),
                    (i, i + 1, -1.0),
                    (i + 1, i, -1.0),
                ]);
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn rcm_is_permutation() {
        let m = path_laplacian(30, 0.0);
        let mut p = reverse_cuthill_mckee(&m);
        p.sort();
        assert_eq!(p, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn cholesky_solves_against_dense() {
        // Scrambled path + a few long-range couplings.
        let n = 40;
        let mut t = Vec::new();
        let pi = |i: usize| (i * 17) % n;
        for i in 0..n {
            t.push((pi(i), pi(i), 2.5));
            if i + 1 < n {
                t.extend([(pi(i), pi(i + 1), -1.0), (pi(i + 1), pi(i), -1.0)]);
            }
        }
        t.extend([(3, 30, -0.3), (30, 3, -0.3)]);
        let m = CsrMatrix::from_triplets(n, &t);
        let f = EnvelopeCholesky::factor(&m).unwrap();
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let x = f.solve(&b);
        let r = m.mul_vec(&x) - &b;
        assert!(r.norm() < 1e-10, "{}", r.norm());
        let xd = m.to_dense().cholesky().unwrap().solve(&b);
        assert!((x - xd).norm() < 1e-10);
    }

    #[test]
    fn singular_matrix_rejected() {
        let m = path_laplacian(10, 0.0);
        assert!(EnvelopeCholesky::factor(&m).is_err());
    }
}
