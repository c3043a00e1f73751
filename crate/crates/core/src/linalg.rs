//! Sequential building blocks: CSR storage, column-major block vectors and
//! the small `t x t` factorizations every rank performs redundantly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with strictly increasing column indices per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 {
            return Err(Error::InvalidCsr(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                n_rows + 1
            )));
        }
        if row_offsets[0] != 0 {
            return Err(Error::InvalidCsr("row_offsets[0] must be 0".into()));
        }
        if col_indices.len() != values.len() || row_offsets[n_rows] != col_indices.len() {
            return Err(Error::InvalidCsr(format!(
                "row_offsets[n_rows] = {}, {} column indices, {} values",
                row_offsets[n_rows],
                col_indices.len(),
                values.len()
            )));
        }
        for row in 0..n_rows {
            let (lo, hi) = (row_offsets[row], row_offsets[row + 1]);
            if lo > hi {
                return Err(Error::InvalidCsr(format!("row_offsets decrease at row {row}")));
            }
            let cols = &col_indices[lo..hi];
            if let Some(&c) = cols.iter().find(|&&c| c >= n_cols) {
                return Err(Error::InvalidCsr(format!(
                    "column {c} out of range in row {row} (n_cols = {n_cols})"
                )));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidCsr(format!(
                    "column indices not strictly increasing in row {row}"
                )));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidCsr(format!(
                    "entry ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::new(n_rows, n_cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(n_rows: usize, n_cols: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch {
                context: "CsrMatrix::from_dense",
                expected: n_rows * n_cols,
                got: dense.len(),
            });
        }
        Self::from_triplets(
            n_rows,
            n_cols,
            (0..n_rows).flat_map(|r| {
                (0..n_cols)
                    .filter(move |&c| dense[r * n_cols + c] != 0.0)
                    .map(move |c| (r, c, dense[r * n_cols + c]))
            }),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of one row.
    pub fn row(&self, row: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[row], self.row_offsets[row + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn row_nnz(&self, row: usize) -> usize {
        self.row_offsets[row + 1] - self.row_offsets[row]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (cols, vals) = self.row(row);
        cols.binary_search(&col).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n_rows * self.n_cols];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                dense[r * self.n_cols + c] = v;
            }
        }
        dense
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square()
            && (0..self.n_rows).all(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).all(|(&c, &v)| self.get(c, r) == v)
            })
    }

    /// `y = A x`.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                context: "CsrMatrix::spmv",
                expected: self.n_cols,
                got: x.len(),
            });
        }
        Ok((0..self.n_rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).fold(0.0, |acc, (&c, &v)| acc + v * x[c])
            })
            .collect())
    }

    /// Serial `W = A V`; the reference against which distributed products are checked.
    pub fn spmbv(&self, v: &BlockVector) -> Result<BlockVector> {
        if v.n_rows() != self.n_cols {
            return Err(Error::DimensionMismatch {
                context: "CsrMatrix::spmbv",
                expected: self.n_cols,
                got: v.n_rows(),
            });
        }
        let mut w = BlockVector::zeros(self.n_rows, v.t());
        for col in 0..v.t() {
            let y = self.spmv(v.column(col))?;
            w.column_mut(col).copy_from_slice(&y);
        }
        Ok(w)
    }

    /// Symmetric permutation `B[i, j] = A[perm[i], perm[j]]`.
    ///
    /// `perm[new] = old`; used to apply an externally computed ordering before partitioning.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.n_rows,
                cols: self.n_cols,
            });
        }
        if perm.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                context: "permute_symmetric",
                expected: self.n_rows,
                got: perm.len(),
            });
        }
        let mut inverse = vec![usize::MAX; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            if old >= perm.len() || inverse[old] != usize::MAX {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            inverse[old] = new;
        }
        Self::from_triplets(
            self.n_rows,
            self.n_cols,
            perm.iter().enumerate().flat_map(|(new_r, &old_r)| {
                let (cols, vals) = self.row(old_r);
                let inverse = &inverse;
                cols.iter()
                    .zip(vals)
                    .map(move |(&c, &v)| (new_r, inverse[c], v))
            }),
        )
    }
}

/// `n_rows x t` multivector stored column-major: entry `(row, col)` lives at
/// `data[col * n_rows + row]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockVector {
    n_rows: usize,
    t: usize,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn zeros(n_rows: usize, t: usize) -> Self {
        assert!(t >= 1, "block width must be at least 1");
        Self {
            n_rows,
            t,
            data: vec![0.0; n_rows * t],
        }
    }

    pub fn from_column_major(n_rows: usize, t: usize, data: Vec<f64>) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidArgument("block width t must be >= 1".into()));
        }
        if data.len() != n_rows * t {
            return Err(Error::DimensionMismatch {
                context: "BlockVector::from_column_major",
                expected: n_rows * t,
                got: data.len(),
            });
        }
        Ok(Self { n_rows, t, data })
    }

    /// Builds a block vector whose rows are given in row-major order.
    pub fn from_rows(n_rows: usize, t: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != n_rows * t {
            return Err(Error::DimensionMismatch {
                context: "BlockVector::from_rows",
                expected: n_rows * t,
                got: rows.len(),
            });
        }
        let mut v = Self::zeros(n_rows, t);
        for r in 0..n_rows {
            for c in 0..t {
                v.set(r, c, rows[r * t + c]);
            }
        }
        Ok(v)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.n_rows + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[col * self.n_rows + row] = value;
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.data[col * self.n_rows..(col + 1) * self.n_rows]
    }

    pub fn column_mut(&mut self, col: usize) -> &mut [f64] {
        &mut self.data[col * self.n_rows..(col + 1) * self.n_rows]
    }

    /// The `t` values of one row, gathered with stride `n_rows`.
    pub fn row(&self, row: usize) -> Vec<f64> {
        (0..self.t).map(|c| self.get(row, c)).collect()
    }

    /// `sum_i V[:, i]`, accumulated left to right.
    pub fn column_sum(&self) -> Vec<f64> {
        let mut sum = self.column(0).to_vec();
        for col in 1..self.t {
            for (s, &v) in sum.iter_mut().zip(self.column(col)) {
                *s += v;
            }
        }
        sum
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Stacks row blocks vertically; all parts must share `t`.
    pub fn vstack(parts: &[BlockVector]) -> Result<Self> {
        let t = parts.first().map_or(1, |p| p.t);
        let n_rows = parts.iter().map(|p| p.n_rows).sum();
        let mut out = Self::zeros(n_rows, t);
        let mut offset = 0;
        for part in parts {
            if part.t != t {
                return Err(Error::DimensionMismatch {
                    context: "BlockVector::vstack",
                    expected: t,
                    got: part.t,
                });
            }
            for col in 0..t {
                out.column_mut(col)[offset..offset + part.n_rows]
                    .copy_from_slice(part.column(col));
            }
            offset += part.n_rows;
        }
        Ok(out)
    }

    /// Copies rows `range` into a new block vector.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Self {
        let mut out = Self::zeros(range.len(), self.t);
        for col in 0..self.t {
            out.column_mut(col)
                .copy_from_slice(&self.column(col)[range.clone()]);
        }
        out
    }
}

/// Dense `t x t` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallSquare {
    t: usize,
    data: Vec<f64>,
}

impl SmallSquare {
    pub fn zeros(t: usize) -> Self {
        Self {
            t,
            data: vec![0.0; t * t],
        }
    }

    pub fn identity(t: usize) -> Self {
        let mut m = Self::zeros(t);
        for i in 0..t {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_row_major(t: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != t * t {
            return Err(Error::DimensionMismatch {
                context: "SmallSquare::from_row_major",
                expected: t * t,
                got: data.len(),
            });
        }
        Ok(Self { t, data })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.t + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.t + j] = value;
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.t);
        for i in 0..self.t {
            for j in 0..self.t {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, other: &SmallSquare) -> Self {
        assert_eq!(self.t, other.t);
        let t = self.t;
        let mut out = Self::zeros(t);
        for i in 0..t {
            for j in 0..t {
                let mut acc = 0.0;
                for k in 0..t {
                    acc += self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &SmallSquare) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.t)
            .map(|i| self.get(i, i))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Relative pivot tolerance for [`cholesky`], scaled by the largest diagonal entry.
pub const PIVOT_TOLERANCE: f64 = 1e-13;

/// Lower-triangular `C` with `C C^T = s`.
///
/// Fails with [`Error::Breakdown`] when a pivot drops to `PIVOT_TOLERANCE * max(diag(s))`
/// or below, which in ECG signals that the search block has lost rank.
pub fn cholesky(s: &SmallSquare) -> Result<SmallSquare> {
    let t = s.t();
    let tolerance = PIVOT_TOLERANCE * s.max_diagonal().max(0.0);
    let mut c = SmallSquare::zeros(t);
    for j in 0..t {
        let mut pivot = s.get(j, j);
        for k in 0..j {
            pivot -= c.get(j, k) * c.get(j, k);
        }
        if pivot.is_nan() || pivot <= tolerance {
            return Err(Error::Breakdown {
                index: j,
                pivot,
                tolerance,
            });
        }
        let diag = pivot.sqrt();
        c.set(j, j, diag);
        for i in j + 1..t {
            let mut acc = s.get(i, j);
            for k in 0..j {
                acc -= c.get(i, k) * c.get(j, k);
            }
            c.set(i, j, acc / diag);
        }
    }
    Ok(c)
}

fn check_triangular_solve(b: &BlockVector, c: &SmallSquare) -> Result<()> {
    if b.t() != c.t() {
        return Err(Error::DimensionMismatch {
            context: "triangular solve",
            expected: c.t(),
            got: b.t(),
        });
    }
    if let Some(i) = (0..c.t()).find(|&i| c.get(i, i) == 0.0) {
        return Err(Error::ZeroDiagonal(i));
    }
    Ok(())
}

/// Solves `X C = b` for lower-triangular `C`, one block row at a time.
pub fn tri_solve_multi_rhs(b: &BlockVector, c: &SmallSquare) -> Result<BlockVector> {
    check_triangular_solve(b, c)?;
    let t = c.t();
    let mut x = BlockVector::zeros(b.n_rows(), t);
    // (X C)_j = sum_{k >= j} x_k C_kj, so solve from the last column down.
    for j in (0..t).rev() {
        let diag = c.get(j, j);
        for row in 0..b.n_rows() {
            let mut acc = b.get(row, j);
            for k in j + 1..t {
                acc -= x.get(row, k) * c.get(k, j);
            }
            x.set(row, j, acc / diag);
        }
    }
    Ok(x)
}

/// Solves `X C^T = b` for lower-triangular `C`.
///
/// With `C C^T = Z^T A Z` this yields `P = Z C^{-T}`, the A-orthonormal search block.
pub fn tri_solve_multi_rhs_transposed(b: &BlockVector, c: &SmallSquare) -> Result<BlockVector> {
    check_triangular_solve(b, c)?;
    let t = c.t();
    let mut x = BlockVector::zeros(b.n_rows(), t);
    // (X C^T)_j = sum_{k <= j} x_k C_jk
    for j in 0..t {
        let diag = c.get(j, j);
        for row in 0..b.n_rows() {
            let mut acc = b.get(row, j);
            for k in 0..j {
                acc -= x.get(row, k) * c.get(j, k);
            }
            x.set(row, j, acc / diag);
        }
    }
    Ok(x)
}

/// Local partial `U^T V`.
pub fn gram_product(u: &BlockVector, v: &BlockVector) -> Result<SmallSquare> {
    if u.n_rows() != v.n_rows() {
        return Err(Error::DimensionMismatch {
            context: "gram_product rows",
            expected: u.n_rows(),
            got: v.n_rows(),
        });
    }
    if u.t() != v.t() {
        return Err(Error::DimensionMismatch {
            context: "gram_product width",
            expected: u.t(),
            got: v.t(),
        });
    }
    let t = u.t();
    let mut out = SmallSquare::zeros(t);
    for i in 0..t {
        let ui = u.column(i);
        for j in 0..t {
            let vj = v.column(j);
            let acc = ui.iter().zip(vj).fold(0.0, |acc, (a, b)| acc + a * b);
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// `y := y + alpha * (x coeff)`; `alpha` is normally `1.0` or `-1.0`.
pub fn block_axpy(
    y: &mut BlockVector,
    alpha: f64,
    x: &BlockVector,
    coeff: &SmallSquare,
) -> Result<()> {
    if y.n_rows() != x.n_rows() {
        return Err(Error::DimensionMismatch {
            context: "block_axpy rows",
            expected: y.n_rows(),
            got: x.n_rows(),
        });
    }
    if y.t() != x.t() || x.t() != coeff.t() {
        return Err(Error::DimensionMismatch {
            context: "block_axpy width",
            expected: y.t(),
            got: if y.t() != x.t() { x.t() } else { coeff.t() },
        });
    }
    let t = y.t();
    let mut product = vec![0.0; y.n_rows()];
    for i in 0..t {
        product.iter_mut().for_each(|p| *p = 0.0);
        for j in 0..t {
            let cji = coeff.get(j, i);
            for (p, &xv) in product.iter_mut().zip(x.column(j)) {
                *p += xv * cji;
            }
        }
        for (yv, &p) in y.column_mut(i).iter_mut().zip(&product) {
            *yv += alpha * p;
        }
    }
    Ok(())
}
