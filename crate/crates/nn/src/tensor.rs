// SPDX-License-Identifier: Apache-2.0

//! Row-major dense matrices of `f64`.
//!
//! Everything the encoders need fits in two dimensions: vectors are `1 x d`
//! rows, batches are `n x d`. Matrix products go through `matrixmultiply`,
//! split into fixed-size row chunks so the result does not depend on how
//! many worker threads are available.

use crate::NnError;

/// Rows per chunk when a product is split across threads.
const MATMUL_ROW_CHUNK: usize = 32;
/// Below this many multiply-adds a product runs on the calling thread.
const MATMUL_PAR_THRESHOLD: usize = 1 << 18;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// A `1 x n` row vector.
    pub fn row_vector(values: &[f64]) -> Self {
        Tensor {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// An `n x 1` column vector.
    pub fn col_vector(values: &[f64]) -> Self {
        Tensor {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NnError::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Returns the single value of a `1 x 1` tensor.
    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NnError> {
        if self.cols != other.rows {
            return Err(NnError::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            (self.cols as isize, 1),
            &other.data,
            (other.cols as isize, 1),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor, NnError> {
        if self.cols != other.cols {
            return Err(NnError::Shape(format!(
                "matmul_nt {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            &self.data,
            (self.cols as isize, 1),
            &other.data,
            (1, other.cols as isize),
            &mut out.data,
        );
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor, NnError> {
        if self.rows != other.rows {
            return Err(NnError::Shape(format!(
                "matmul_tn ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            &self.data,
            (1, self.cols as isize),
            &other.data,
            (other.cols as isize, 1),
            &mut out.data,
        );
        Ok(out)
    }
}

/// `out (m x n) = a (m x k) · b (k x n)` with arbitrary input strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_stride: (isize, isize),
    b: &[f64],
    b_stride: (isize, isize),
    out: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let run = |row0: usize, rows: usize, chunk: &mut [f64]| {
        // SAFETY: `a` holds at least `m` rows under `a_stride`, `b` is k x n
        // under `b_stride`, and `chunk` is exactly `rows x n` row-major.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                1.0,
                a.as_ptr().offset(row0 as isize * a_stride.0),
                a_stride.0,
                a_stride.1,
                b.as_ptr(),
                b_stride.0,
                b_stride.1,
                0.0,
                chunk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };
    let parallel = cfg!(feature = "parallel") && m > MATMUL_ROW_CHUNK && m * k * n >= MATMUL_PAR_THRESHOLD;
    if !parallel {
        run(0, m, out);
        return;
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(MATMUL_ROW_CHUNK * n)
            .enumerate()
            .for_each(|(i, chunk)| run(i * MATMUL_ROW_CHUNK, chunk.len() / n, chunk));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn seq(r: usize, c: usize, off: f64) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|i| (i as f64 * 0.37 + off).sin()).collect()).unwrap()
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let a = seq(70, 33, 0.1);
        let b = seq(33, 20, 1.3);
        let want = naive(&a, &b);
        let got = a.matmul(&b).unwrap();
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let got_nt = a.matmul_nt(&b.transpose()).unwrap();
        let got_tn = a.transpose().matmul_tn(&b).unwrap();
        for ((x, y), z) in got_nt.data().iter().zip(want.data()).zip(got_tn.data()) {
            assert!((x - y).abs() < 1e-12);
            assert!((z - y).abs() < 1e-12);
        }
    }

    #[test]
    fn large_product_is_chunk_invariant() {
        let a = seq(300, 128, 0.2);
        let b = seq(128, 128, 0.9);
        let full = a.matmul(&b).unwrap();
        // the last row computed alone must equal the same row of the full product
        let last = Tensor::row_vector(a.row(299));
        let solo = last.matmul(&b).unwrap();
        assert_eq!(solo.data(), full.row(299));
    }

    #[test]
    fn shape_errors() {
        assert!(Tensor::from_vec(2, 2, vec![1.0]).is_err());
        assert!(seq(2, 3, 0.0).matmul(&seq(2, 3, 0.0)).is_err());
    }
}
