//! Dense and CSR kernels with explicit backward passes.
//!
//! Every kernel accumulates in a fixed order (row-major, left to right over
//! the contraction index, CSR order for sparse operands), so results are
//! bit-reproducible in [`Exec::Sequential`] mode. [`Exec::Parallel`] splits
//! work by output row only; each row is still accumulated in the same order.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CgpError, Result};

/// Floating point element type used by the kernels and models.
pub trait Scalar: Float + Default + Debug + Send + Sync + Sum + 'static {
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    const NAME: &'static str = "double";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "single";

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Kernel execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    #[default]
    Sequential,
    Parallel,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CgpError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
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
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T = f64> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(CgpError::Shape(format!(
                "row_ptr must have {} entries starting at 0",
                rows + 1
            )));
        }
        if col_idx.len() != values.len() || *row_ptr.last().unwrap() != col_idx.len() {
            return Err(CgpError::Shape("row_ptr, col_idx and values disagree".into()));
        }
        for r in 0..rows {
            if row_ptr[r] > row_ptr[r + 1] {
                return Err(CgpError::Shape(format!("row_ptr decreases at row {r}")));
            }
            let cols_in_row = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cols_in_row.iter().any(|&c| c >= cols) {
                return Err(CgpError::Shape(format!("column out of range in row {r}")));
            }
            if cols_in_row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CgpError::Shape(format!("columns not strictly sorted in row {r}")));
            }
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Keeps the nonzero entries of `d`.
    pub fn from_dense(d: &DenseMatrix<T>) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..d.rows() {
            for (c, &v) in d.row(r).iter().enumerate() {
                if v != T::zero() {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: d.rows(),
            cols: d.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                d.set(r, self.col_idx[k], self.values[k]);
            }
        }
        d
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
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    #[inline]
    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Same sparsity pattern, new values.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(CgpError::Shape(format!(
                "{} values for {} stored entries",
                values.len(),
                self.nnz()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
        })
    }

    pub fn cast<U: Scalar>(&self) -> SparseMatrix<U> {
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Row index of every stored entry, in CSR order.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            out.extend(std::iter::repeat_n(r, self.row_ptr[r + 1] - self.row_ptr[r]));
        }
        out
    }
}

fn check_inner(op: &str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(CgpError::Shape(format!(
            "{op}: inner dimensions {left} and {right} differ"
        )));
    }
    Ok(())
}

fn matmul_row<T: Scalar>(a_row: &[T], b: &DenseMatrix<T>, out: &mut [T]) {
    for (k, &av) in a_row.iter().enumerate() {
        if av == T::zero() {
            continue;
        }
        for (o, &bv) in out.iter_mut().zip(b.row(k)) {
            *o = *o + av * bv;
        }
    }
}

/// `a · b`.
pub fn matmul<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    matmul_with(a, b, Exec::Sequential)
}

pub fn matmul_with<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    exec: Exec,
) -> Result<DenseMatrix<T>> {
    check_inner("matmul", a.cols, b.rows)?;
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    if b.cols == 0 {
        return Ok(out);
    }
    match exec {
        Exec::Sequential => {
            for (i, row) in out.data.chunks_mut(b.cols).enumerate() {
                matmul_row(a.row(i), b, row);
            }
        }
        Exec::Parallel => {
            out.data
                .par_chunks_mut(b.cols)
                .enumerate()
                .for_each(|(i, row)| matmul_row(a.row(i), b, row));
        }
    }
    Ok(out)
}

/// `aᵀ · b`, accumulated over rows of `a` in ascending order.
pub fn matmul_tn<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    exec: Exec,
) -> Result<DenseMatrix<T>> {
    check_inner("matmul_tn", a.rows, b.rows)?;
    let mut out = DenseMatrix::zeros(a.cols, b.cols);
    if b.cols == 0 {
        return Ok(out);
    }
    match exec {
        Exec::Sequential => {
            for i in 0..a.rows {
                let b_row = b.row(i);
                for (k, &av) in a.row(i).iter().enumerate() {
                    if av == T::zero() {
                        continue;
                    }
                    for (o, &bv) in out.row_mut(k).iter_mut().zip(b_row) {
                        *o = *o + av * bv;
                    }
                }
            }
        }
        Exec::Parallel => {
            out.data
                .par_chunks_mut(b.cols)
                .enumerate()
                .for_each(|(k, row)| {
                    for i in 0..a.rows {
                        let av = a.get(i, k);
                        if av == T::zero() {
                            continue;
                        }
                        for (o, &bv) in row.iter_mut().zip(b.row(i)) {
                            *o = *o + av * bv;
                        }
                    }
                });
        }
    }
    Ok(out)
}

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter()
        .zip(y)
        .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

/// `a · bᵀ`.
pub fn matmul_nt<T: Scalar>(
    a: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    exec: Exec,
) -> Result<DenseMatrix<T>> {
    check_inner("matmul_nt", a.cols, b.cols)?;
    let mut out = DenseMatrix::zeros(a.rows, b.rows);
    if b.rows == 0 {
        return Ok(out);
    }
    let fill = |(i, row): (usize, &mut [T])| {
        let a_row = a.row(i);
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(a_row, b.row(j));
        }
    };
    match exec {
        Exec::Sequential => out.data.chunks_mut(b.rows).enumerate().for_each(fill),
        Exec::Parallel => out.data.par_chunks_mut(b.rows).enumerate().for_each(fill),
    }
    Ok(out)
}

fn spmm_row<T: Scalar>(s: &SparseMatrix<T>, r: usize, x: &DenseMatrix<T>, out: &mut [T]) {
    for k in s.row_ptr[r]..s.row_ptr[r + 1] {
        let v = s.values[k];
        if v == T::zero() {
            continue;
        }
        for (o, &xv) in out.iter_mut().zip(x.row(s.col_idx[k])) {
            *o = *o + v * xv;
        }
    }
}

/// Sparse-dense product `s · x`.
pub fn spmm<T: Scalar>(s: &SparseMatrix<T>, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    spmm_with(s, x, Exec::Sequential)
}

pub fn spmm_with<T: Scalar>(
    s: &SparseMatrix<T>,
    x: &DenseMatrix<T>,
    exec: Exec,
) -> Result<DenseMatrix<T>> {
    check_inner("spmm", s.cols, x.rows)?;
    let mut out = DenseMatrix::zeros(s.rows, x.cols);
    if x.cols == 0 {
        return Ok(out);
    }
    match exec {
        Exec::Sequential => {
            for (r, row) in out.data.chunks_mut(x.cols).enumerate() {
                spmm_row(s, r, x, row);
            }
        }
        Exec::Parallel => {
            out.data
                .par_chunks_mut(x.cols)
                .enumerate()
                .for_each(|(r, row)| spmm_row(s, r, x, row));
        }
    }
    Ok(out)
}

/// Gradients of `spmm(s, x)` given the upstream gradient `gout`.
///
/// Returns the gradient for every stored value of `s` (in CSR order) and the
/// gradient `sᵀ · gout` for `x`.
pub fn spmm_backward<T: Scalar>(
    s: &SparseMatrix<T>,
    x: &DenseMatrix<T>,
    gout: &DenseMatrix<T>,
) -> Result<(Vec<T>, DenseMatrix<T>)> {
    check_inner("spmm_backward", s.cols, x.rows)?;
    if gout.shape() != (s.rows, x.cols) {
        return Err(CgpError::Shape(format!(
            "spmm_backward: upstream gradient is {:?}, expected {:?}",
            gout.shape(),
            (s.rows, x.cols)
        )));
    }
    let mut gvalues = vec![T::zero(); s.nnz()];
    let mut gx = DenseMatrix::zeros(x.rows, x.cols);
    for r in 0..s.rows {
        let g_row = gout.row(r);
        for k in s.row_ptr[r]..s.row_ptr[r + 1] {
            let c = s.col_idx[k];
            gvalues[k] = dot(g_row, x.row(c));
            let v = s.values[k];
            if v != T::zero() {
                for (o, &g) in gx.row_mut(c).iter_mut().zip(g_row) {
                    *o = *o + v * g;
                }
            }
        }
    }
    Ok((gvalues, gx))
}

pub fn relu_fwd<T: Scalar>(x: &DenseMatrix<T>) -> DenseMatrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at exactly zero is zero.
pub fn relu_bwd<T: Scalar>(x: &DenseMatrix<T>, gout: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if x.shape() != gout.shape() {
        return Err(CgpError::Shape("relu_bwd: input and gradient shapes differ".into()));
    }
    let data = x
        .data
        .iter()
        .zip(&gout.data)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    DenseMatrix::from_vec(x.rows, x.cols, data)
}

/// Inverted dropout. Kept units are scaled by `1 / (1 - rate)`.
///
/// With `rate == 0` no random numbers are drawn.
pub fn dropout_fwd<T: Scalar, R: Rng + ?Sized>(
    x: &DenseMatrix<T>,
    rate: f64,
    rng: &mut R,
) -> Result<(DenseMatrix<T>, Vec<bool>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(CgpError::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if rate == 0.0 {
        return Ok((x.clone(), vec![true; x.data.len()]));
    }
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let keep: Vec<bool> = (0..x.data.len())
        .map(|_| rng.random::<f64>() >= rate)
        .collect();
    let data = x
        .data
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| if k { v * scale } else { T::zero() })
        .collect();
    Ok((DenseMatrix::from_vec(x.rows, x.cols, data)?, keep))
}

pub fn dropout_bwd<T: Scalar>(
    keep: &[bool],
    rate: f64,
    gout: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if keep.len() != gout.data.len() {
        return Err(CgpError::Shape("dropout_bwd: keep mask length differs".into()));
    }
    if rate == 0.0 {
        return Ok(gout.clone());
    }
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let data = gout
        .data
        .iter()
        .zip(keep)
        .map(|(&g, &k)| if k { g * scale } else { T::zero() })
        .collect();
    DenseMatrix::from_vec(gout.rows, gout.cols, data)
}

/// Mean softmax cross-entropy over the rows in `idx`, and its gradient.
///
/// Rows outside `idx` receive a zero gradient.
pub fn softmax_xent<T: Scalar>(
    logits: &DenseMatrix<T>,
    labels: &[usize],
    idx: &[usize],
) -> Result<(T, DenseMatrix<T>)> {
    if idx.is_empty() {
        return Err(CgpError::InvalidArgument("softmax_xent: empty index subset".into()));
    }
    if labels.len() != logits.rows {
        return Err(CgpError::Shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows
        )));
    }
    let inv_n = T::from_f64(1.0 / idx.len() as f64);
    let mut grad = DenseMatrix::zeros(logits.rows, logits.cols);
    let mut loss = T::zero();
    for &i in idx {
        let row = logits.row(i);
        let label = labels[i];
        if label >= logits.cols {
            return Err(CgpError::Shape(format!("label {label} out of range")));
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        loss = loss + (z.ln() - (row[label] - max));
        let g = grad.row_mut(i);
        for (c, e) in exps.into_iter().enumerate() {
            let p = e / z;
            g[c] = (if c == label { p - T::one() } else { p }) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}
