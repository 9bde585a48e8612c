//! Dense row-major `f64` arrays of rank 1 to 3.
//!
//! Rank-2 tensors that flow through the network use a `[features, time]`
//! layout: row `c` is the time series of channel `c`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 3,
            "tensor rank must be 1..=3, got {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(shape_err(format!(
                "tensor rank must be 1..=3, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a `[rows.len(), row_len]` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("rows have unequal lengths"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of rows of a rank-2 tensor (or the length of a rank-1 one).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Row length of a rank-2 tensor; 1 for rank-1.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.is_empty() || shape.len() > 3 {
            return Err(shape_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Concatenates rows of several rank-2 tensors with equal column counts.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, Tensor::cols);
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() != 2 || p.cols() != cols {
                return Err(shape_err(
                    "concat_rows expects rank-2 tensors with equal columns",
                ));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(&[rows, cols], data)
    }

    /// Copies columns `[start, start + len)` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        if self.rank() != 2 || start + len > self.cols() {
            return Err(shape_err(format!(
                "cannot slice columns {start}..{} of {:?}",
                start + len,
                self.shape
            )));
        }
        let mut data = Vec::with_capacity(self.rows() * len);
        for r in 0..self.rows() {
            data.extend_from_slice(&self.row(r)[start..start + len]);
        }
        Tensor::from_vec(&[self.rows(), len], data)
    }

    /// Concatenates rank-2 tensors along the column (time) axis.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, Tensor::rows);
        if parts.iter().any(|p| p.rank() != 2 || p.rows() != rows) {
            return Err(shape_err(
                "concat_cols expects rank-2 tensors with equal rows",
            ));
        }
        let total: usize = parts.iter().map(Tensor::cols).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Tensor::from_vec(&[rows, total], data)
    }
}
