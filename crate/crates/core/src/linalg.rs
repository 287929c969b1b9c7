//! Sparse symmetric storage and a dense Cholesky solver.
//!
//! Graph matrices are kept in CSR form with both triangles stored. The ranking
//! systems are small (a few hundred unknowns per modality) so they are
//! assembled densely and factorised with a row-oriented Cholesky whose inner
//! loop is a contiguous dot product.

use crate::error::{Error, Result};

/// Square sparse matrix in compressed sparse row form. Column indices are
/// sorted within each row and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::Dimension(format!(
                    "entry ({i}, {j}) outside {n}x{n} matrix"
                )));
            }
            rows[i].push((j, v));
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                if indices.len() > *indptr.last().unwrap() && *indices.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            n,
            indptr,
            indices,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterate the stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// The quadratic form `x^T M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>())
            .sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }
}

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators keep the reduction vectorisable.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = c * 4;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in chunks * 4..a.len() {
        sum += a[k] * b[k];
    }
    sum
}

/// Cholesky factor `L` of a symmetric positive-definite matrix, `M = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    // Packed row-major lower triangle; row i holds L[i][0..=i].
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factorise using only the lower triangle of `m`.
    pub fn factor(m: &DenseMatrix) -> Result<Self> {
        let n = m.dim();
        let mut lower = vec![0.0; n * (n + 1) / 2];
        let start = |i: usize| i * (i + 1) / 2;
        for i in 0..n {
            let ri = start(i);
            for j in 0..=i {
                let rj = start(j);
                let s = m[(i, j)] - dot(&lower[ri..ri + j], &lower[rj..rj + j]);
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Solver(format!(
                            "matrix not positive definite at pivot {i} (value {s:e})"
                        )));
                    }
                    lower[ri + i] = s.sqrt();
                } else {
                    lower[ri + j] = s / lower[rj + j];
                }
            }
        }
        Ok(Self { n, lower })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let start = |i: usize| i * (i + 1) / 2;
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let ri = start(i);
            y[i] = (b[i] - dot(&self.lower[ri..ri + i], &y[..i])) / self.lower[ri + i];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in i + 1..self.n {
                s -= self.lower[start(k) + i] * y[k];
            }
            y[i] = s / self.lower[start(i) + i];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = CsrMatrix::from_triplets(3, &[(0, 2, 1.0), (0, 1, 2.0), (0, 2, 0.5)]).unwrap();
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![(1, 2.0), (2, 1.5)]);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(CsrMatrix::from_triplets(2, &[(0, 2, 1.0)]).is_err());
    }

    #[test]
    fn cholesky_solves_small_spd() {
        // [[4,2],[2,3]] x = [2,1]  =>  x = [0.5, 0]
        let mut m = DenseMatrix::zeros(2);
        m[(0, 0)] = 4.0;
        m[(0, 1)] = 2.0;
        m[(1, 0)] = 2.0;
        m[(1, 1)] = 3.0;
        let x = Cholesky::factor(&m).unwrap().solve(&[2.0, 1.0]);
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert!(x[1].abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = DenseMatrix::identity(2);
        m[(0, 1)] = 2.0;
        m[(1, 0)] = 2.0;
        assert!(matches!(Cholesky::factor(&m), Err(Error::Solver(_))));
    }

    #[test]
    fn cholesky_residual_on_larger_system() {
        let n = 37;
        let mut m = DenseMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = 1.0 / (1.0 + (i as f64 - j as f64).abs());
            }
            m[(i, i)] += n as f64;
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = Cholesky::factor(&m).unwrap().solve(&b);
        let r = m.mul_vec(&x);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
    }
}
