//! Row-major dense matrix of `f64`.
//!
//! Rows are samples (or input units, for weight matrices). All operations are
//! plain loops with a fixed summation order, so results are bit-reproducible
//! across runs on the same platform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::invalid(format!(
                "tensor of shape {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a tensor from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t[(i, i)] = 1.0;
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

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_shape(&self, context: &'static str, expected: (usize, usize)) -> Result<()> {
        if self.shape() != expected {
            return Err(Error::ShapeMismatch {
                context,
                expected,
                actual: self.shape(),
            });
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                expected: (self.cols, other.cols),
                actual: other.shape(),
            });
        }
        let mut out = Tensor2D::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.values[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in o_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                context: "t_matmul",
                expected: (self.rows, other.cols),
                actual: other.shape(),
            });
        }
        let mut out = Tensor2D::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.values[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                context: "matmul_t",
                expected: (other.rows, self.cols),
                actual: other.shape(),
            });
        }
        let mut out = Tensor2D::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.values[i * other.rows + j] = a_row.iter().zip(other.row(j)).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.iter_rows() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2D {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Rows `start..start + len` as a new tensor.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor2D> {
        if start + len > self.rows {
            return Err(Error::invalid(format!(
                "row slice {start}..{} out of range for {} rows",
                start + len,
                self.rows
            )));
        }
        Ok(Tensor2D {
            rows: len,
            cols: self.cols,
            values: self.values[start * self.cols..(start + len) * self.cols].to_vec(),
        })
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor2D> {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::invalid(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Ok(Tensor2D {
            rows: indices.len(),
            cols: self.cols,
            values,
        })
    }

    /// Stacks tensors with equal column counts on top of each other.
    pub fn vstack(parts: &[&Tensor2D]) -> Result<Tensor2D> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut rows = 0;
        let mut values = Vec::new();
        for p in parts {
            if p.cols != cols {
                return Err(Error::ShapeMismatch {
                    context: "vstack",
                    expected: (p.rows, cols),
                    actual: p.shape(),
                });
            }
            rows += p.rows;
            values.extend_from_slice(&p.values);
        }
        Ok(Tensor2D { rows, cols, values })
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor2D) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Tensor2D {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.values[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Tensor2D {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.values[r * self.cols + c]
    }
}
