/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, indptr: vec![0; nrows + 1], indices: vec![], values: vec![] }
    }

    /// Duplicates are summed; explicit zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut rows = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if let (Some(&lr), Some(&lc)) = (rows.last(), indices.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            indices.push(c);
            values.push(v);
        }
        let mut keep_idx = Vec::with_capacity(indices.len());
        let mut keep_val = Vec::with_capacity(values.len());
        for ((r, c), v) in rows.into_iter().zip(indices).zip(values) {
            if v != 0.0 {
                indptr[r + 1] += 1;
                keep_idx.push(c);
                keep_val.push(v);
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self { nrows, ncols, indptr, indices: keep_idx, values: keep_val }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows).flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v))).collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `y += A' x`.
    pub fn add_mul_t(&self, x: &[f64], y: &mut [f64]) {
        for (i, &xi) in x.iter().enumerate().take(self.nrows) {
            if xi != 0.0 {
                for (j, v) in self.row(i) {
                    y[j] += v * xi;
                }
            }
        }
    }

    pub fn mul_t_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.add_mul_t(x, &mut y);
        y
    }

    /// Stack `self` on top of `other`.
    pub fn vstack(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.ncols);
        let mut indptr = self.indptr.clone();
        let base = *indptr.last().unwrap();
        indptr.extend(other.indptr[1..].iter().map(|p| p + base));
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        CsrMatrix { nrows: self.nrows + other.nrows, ncols: self.ncols, indptr, indices, values }
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.nrows).map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = CsrMatrix::from_triplets(2, 3, &[(1, 2, 1.0), (0, 0, 2.0), (1, 2, 3.0), (0, 1, 0.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.triplets(), vec![(0, 0, 2.0), (1, 2, 4.0)]);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![2.0, 4.0]);
        assert_eq!(m.mul_t_vec(&[1.0, 1.0]), vec![2.0, 0.0, 4.0]);
    }

    #[test]
    fn vstack_keeps_rows() {
        let a = CsrMatrix::from_triplets(1, 2, &[(0, 1, 1.0)]);
        let b = CsrMatrix::from_triplets(2, 2, &[(1, 0, 5.0)]);
        let s = a.vstack(&b);
        assert_eq!(s.triplets(), vec![(0, 1, 1.0), (2, 0, 5.0)]);
    }
}
