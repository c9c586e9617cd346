//! Minimal compressed-sparse-row matrix, enough for generator products.

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from triplets; duplicates are summed, columns sorted per row.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// Sparse-sparse product `self * other` using a dense accumulator row.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut acc = vec![0.0; other.ncols];
        let mut touched = vec![false; other.ncols];
        let mut cols: Vec<usize> = Vec::new();
        let mut triplets = Vec::new();
        for r in 0..self.nrows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                triplets.push((r, c, acc[c]));
                acc[c] = 0.0;
                touched[c] = false;
            }
            cols.clear();
        }
        CsrMatrix::from_triplets(self.nrows, other.ncols, &triplets)
    }

    /// Entrywise `(self + other) / 2`.
    pub fn average(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (r, c, 0.5 * v)).collect();
        t.extend(other.triplets().into_iter().map(|(r, c, v)| (r, c, 0.5 * v)));
        CsrMatrix::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        (0..self.nrows)
            .map(|r| x[r] * self.row(r).map(|(c, v)| v * x[c]).sum::<f64>())
            .sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, &[(1, 0, 1.0), (0, 1, 2.0), (1, 0, 3.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn product_matches_dense() {
        let a = CsrMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 2.0), (2, 0, -1.0), (2, 1, 3.0)]);
        let b = CsrMatrix::from_triplets(2, 3, &[(0, 2, 4.0), (1, 0, 1.0), (1, 1, -2.0)]);
        let dense = a.to_dense() * b.to_dense();
        assert_eq!(a.matmul(&b).to_dense(), dense);
        assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
    }
}
