use crate::scalar::Scalar;

/// Compressed sparse row matrix used as a constant left operand.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|x| (x.0, x.1));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r},{c}) outside {rows}x{cols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                out[r * self.cols + c] = v;
            }
        }
        out
    }

    /// `out += self · h` with `h` row-major `cols × width`.
    pub(crate) fn mul_dense_acc(&self, h: &[T], width: usize, out: &mut [T]) {
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for (c, p) in self.row_entries(r) {
                let src = &h[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += p * *s;
                }
            }
        }
    }

    /// `out += selfᵀ · g` with `g` row-major `rows × width`.
    pub(crate) fn mul_transpose_dense_acc(&self, g: &[T], width: usize, out: &mut [T]) {
        for r in 0..self.rows {
            let src = &g[r * width..(r + 1) * width];
            for (c, p) in self.row_entries(r) {
                let dst = &mut out[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += p * *s;
                }
            }
        }
    }
}
