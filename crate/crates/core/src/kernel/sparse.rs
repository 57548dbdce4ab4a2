use crate::error::{Error, Result};
use crate::kernel::dense::DenseMatrix;
use crate::scalar::Scalar;

/// Compressed-row sparse matrix.
///
/// Column indices are strictly increasing within a row and explicit zeros are
/// never stored. Graph operators are built once and then only read.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    /// Assembles from `(row, col, value)` triplets. Duplicates are summed and
    /// entries that end up exactly zero are dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, T)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= rows {
                return Err(Error::OutOfRange {
                    what: "row",
                    index: r,
                    limit: rows,
                });
            }
            if c >= cols {
                return Err(Error::OutOfRange {
                    what: "column",
                    index: c,
                    limit: cols,
                });
            }
            sorted.push((r, c, v));
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut merged: Vec<(usize, usize, T)> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|&(_, _, v)| v != T::zero());

        let mut indptr = vec![0; rows + 1];
        for &(r, _, _) in &merged {
            indptr[r + 1] += 1;
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices: merged.iter().map(|&(_, c, _)| c).collect(),
            values: merged.iter().map(|&(_, _, v)| v).collect(),
        })
    }

    /// Builds directly from sorted per-row `(col, value)` lists.
    pub(crate) fn from_sorted_rows(cols: usize, rows: Vec<Vec<(usize, T)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in &rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for &(c, v) in row {
                if v != T::zero() {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(d: &DenseMatrix<T>) -> Self {
        let rows = (0..d.rows())
            .map(|i| {
                d.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != T::zero())
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Self::from_sorted_rows(d.cols(), rows)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `(column indices, values)` of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (idx, vals) = self.row(i);
        match idx.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => T::zero(),
        }
    }

    /// Iterates over stored `(row, col, value)` entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (idx, vals) = self.row(i);
            idx.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.iter() {
            out.set(i, j, v);
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); self.cols];
        for (i, j, v) in self.iter() {
            rows[j].push((i, v));
        }
        Self::from_sorted_rows(self.rows, rows)
    }

    /// `self + α·I` for a square matrix.
    pub fn add_scaled_identity(&self, alpha: T) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::Dimension {
                op: "add_scaled_identity",
                lhs: self.shape(),
                rhs: (self.cols, self.rows),
            });
        }
        let rows = (0..self.rows)
            .map(|i| {
                let (idx, vals) = self.row(i);
                let mut row: Vec<(usize, T)> = Vec::with_capacity(idx.len() + 1);
                let mut placed = false;
                for (&j, &v) in idx.iter().zip(vals) {
                    if !placed && j >= i {
                        if j == i {
                            row.push((j, v + alpha));
                            placed = true;
                            continue;
                        }
                        row.push((i, alpha));
                        placed = true;
                    }
                    row.push((j, v));
                }
                if !placed {
                    row.push((i, alpha));
                }
                row
            })
            .collect();
        Ok(Self::from_sorted_rows(self.cols, rows))
    }

    /// Returns a copy where every stored value is replaced by `f(row, col, value)`;
    /// entries mapped to zero are dropped.
    pub fn map_entries(&self, f: impl Fn(usize, usize, T) -> T) -> Self {
        let rows = (0..self.rows)
            .map(|i| {
                let (idx, vals) = self.row(i);
                idx.iter().zip(vals).map(|(&j, &v)| (j, f(i, j, v))).collect()
            })
            .collect();
        Self::from_sorted_rows(self.cols, rows)
    }

    /// Sparse-dense product `self · d`.
    pub fn spmm(&self, d: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if self.cols != d.rows() {
            return Err(Error::Dimension {
                op: "spmm",
                lhs: self.shape(),
                rhs: d.shape(),
            });
        }
        let width = d.cols();
        let mut out = DenseMatrix::zeros(self.rows, width);
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            let out_row = out.row_mut(i);
            for (&j, &v) in idx.iter().zip(vals) {
                for (o, &x) in out_row.iter_mut().zip(d.row(j)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// Transposed product `selfᵀ · d` without building the transpose.
    pub fn spmm_transpose(&self, d: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if self.rows != d.rows() {
            return Err(Error::Dimension {
                op: "spmm_transpose",
                lhs: self.shape(),
                rhs: d.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.cols, d.cols());
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            let src = d.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                for (o, &x) in out.row_mut(j).iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// Symmetric row/column permutation: entry `(i, j)` of the result is entry
    /// `(perm[i], perm[j])` of `self`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Result<Self> {
        let mut inverse = vec![usize::MAX; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut triplets = Vec::with_capacity(self.nnz());
        for (i, j, v) in self.iter() {
            triplets.push((inverse[i], inverse[j], v));
        }
        Self::from_triplets(self.rows, self.cols, &triplets)
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.iter().all(|(i, j, v)| self.get(j, i) == v)
    }
}
