//! Minimal dense row-major matrix used for designs and covariates.
//!
//! The fitting code needs contiguous rows, column extraction, and row/column
//! subsetting; nothing here warrants a linear-algebra dependency.

/// Dense `rows x cols` matrix of `f64`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    /// Builds a matrix whose j-th column is `columns[j]`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        for c in columns {
            assert_eq!(c.len(), rows, "column length mismatch");
        }
        let mut m = Matrix::zeros(rows, cols);
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                m.data[i * cols + j] = v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// New matrix keeping only the listed columns, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(self.rows, keep.len());
        for i in 0..self.rows {
            let src = self.row(i);
            let dst = m.row_mut(i);
            for (out, &j) in dst.iter_mut().zip(keep) {
                *out = src[j];
            }
        }
        m
    }

    /// New matrix keeping only the listed rows, in the given order.
    pub fn select_rows(&self, keep: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(keep.len(), self.cols);
        for (out, &i) in keep.iter().enumerate() {
            m.row_mut(out).copy_from_slice(self.row(i));
        }
        m
    }

    /// New matrix with extra columns appended on the right.
    pub fn with_appended_columns(&self, columns: &[Vec<f64>]) -> Matrix {
        for c in columns {
            assert_eq!(c.len(), self.rows, "appended column length mismatch");
        }
        let cols = self.cols + columns.len();
        let mut m = Matrix::zeros(self.rows, cols);
        for i in 0..self.rows {
            m.row_mut(i)[..self.cols].copy_from_slice(self.row(i));
            for (k, c) in columns.iter().enumerate() {
                m.set(i, self.cols + k, c[i]);
            }
        }
        m
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}
