use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real matrix with finite entries.
///
/// Thin wrapper over `nalgebra::DMatrix` that enforces the invariants every
/// certificate relies on: at least one row and column, no NaN or infinity.
#[derive(Clone, PartialEq)]
pub struct Matrix(DMatrix<f64>);

impl Matrix {
    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "matrix must be at least 1x1, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(Matrix(m))
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Self::from_dmatrix(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != ncols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data: Vec<f64> = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::from_row_slice(nrows, ncols, &data)
    }

    pub fn identity(n: usize) -> Self {
        Matrix(DMatrix::identity(n, n))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix(DMatrix::zeros(rows, cols))
    }

    /// 1x1 matrix.
    pub fn scalar(v: f64) -> Result<Self> {
        Self::from_row_slice(1, 1, &[v])
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::from_dmatrix(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    /// Planar rotation by `theta` radians.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Matrix(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.0.nrows() == self.0.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix(&self.0 * s)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix(self.0.transpose())
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols() != other.rows() {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                other.rows(),
                other.cols()
            )));
        }
        Ok(Matrix(&self.0 * &other.0))
    }

    pub fn pow(&self, k: u32) -> Result<Matrix> {
        self.require_square()?;
        Ok(Matrix(self.0.pow(k)))
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.0.transpose().as_slice().to_vec()
    }

    pub(crate) fn require_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "expected a square matrix, got {}x{}",
                self.rows(),
                self.cols()
            )))
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<f64>> = (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.get(i, j)).collect())
            .collect();
        write!(f, "Matrix{rows:?}")
    }
}
