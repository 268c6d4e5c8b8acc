//! Sample containers: raw (X, Y, Z) observations and their augmented form.

use crate::calibration::FlipVector;
use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// n observations of (X, Y, Z).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Matrix,
    z: Matrix,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix, z: Matrix) -> Result<Self> {
        let n = x.rows();
        if y.rows() != n || z.rows() != n {
            return Err(Error::dims(format!(
                "row counts differ: x={}, y={}, z={}",
                x.rows(),
                y.rows(),
                z.rows()
            )));
        }
        for (m, name) in [(&x, "x"), (&y, "y"), (&z, "z")] {
            if !m.all_finite() {
                return Err(Error::NonFinite(format!(
                    "block {name} contains a non-finite entry"
                )));
            }
        }
        Ok(Dataset { x, y, z })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d_x(&self) -> usize {
        self.x.cols()
    }

    pub fn d_y(&self) -> usize {
        self.y.cols()
    }

    pub fn d_z(&self) -> usize {
        self.z.cols()
    }

    /// Total dimension d = d_x + d_y + d_z of one observation.
    pub fn dim_total(&self) -> usize {
        self.d_x() + self.d_y() + self.d_z()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    /// Replaces the X block, keeping Y and Z.
    pub fn with_x(&self, x: Matrix) -> Result<Self> {
        Dataset::new(x, self.y.clone(), self.z.clone())
    }

    /// Per-coordinate standardization of all blocks (mean 0, unit variance).
    /// Constant columns are centered only.
    pub fn standardized(&self) -> Dataset {
        let standardize = |m: &Matrix| {
            let mut out = m.clone();
            let n = m.rows();
            for j in 0..m.cols() {
                let mean = (0..n).map(|i| m.get(i, j)).sum::<f64>() / n as f64;
                let var = (0..n).map(|i| (m.get(i, j) - mean).powi(2)).sum::<f64>()
                    / (n as f64 - 1.0).max(1.0);
                let sd = var.sqrt();
                for i in 0..n {
                    let v = (m.get(i, j) - mean) / if sd > 0.0 { sd } else { 1.0 };
                    out.row_mut(i)[j] = v;
                }
            }
            out
        };
        Dataset {
            x: standardize(&self.x),
            y: standardize(&self.y),
            z: standardize(&self.z),
        }
    }
}

/// A dataset together with the generated column X' of conditional draws.
///
/// The 2n kernel points are interleaved: point 2i is V_i = (X_i, Y_i, Z_i)
/// and point 2i+1 is V_i' = (X_i', Y_i, Z_i).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    base: Dataset,
    x_prime: Matrix,
}

impl AugmentedDataset {
    pub fn new(base: Dataset, x_prime: Matrix) -> Result<Self> {
        if x_prime.rows() != base.n() || x_prime.cols() != base.d_x() {
            return Err(Error::dims(format!(
                "x_prime is {}x{}, expected {}x{}",
                x_prime.rows(),
                x_prime.cols(),
                base.n(),
                base.d_x()
            )));
        }
        if !x_prime.all_finite() {
            return Err(Error::NonFinite(
                "x_prime contains a non-finite entry".into(),
            ));
        }
        Ok(AugmentedDataset { base, x_prime })
    }

    pub fn base(&self) -> &Dataset {
        &self.base
    }

    pub fn x_prime(&self) -> &Matrix {
        &self.x_prime
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    /// Materializes the 2n interleaved points as a (2n) x d matrix.
    pub fn interleaved_points(&self) -> Matrix {
        let n = self.n();
        let (dx, dy, dz) = (self.base.d_x(), self.base.d_y(), self.base.d_z());
        let d = dx + dy + dz;
        let mut pts = Matrix::zeros(2 * n, d);
        for i in 0..n {
            for (k, x_row) in [self.base.x.row(i), self.x_prime.row(i)].iter().enumerate() {
                let row = pts.row_mut(2 * i + k);
                row[..dx].copy_from_slice(x_row);
                row[dx..dx + dy].copy_from_slice(self.base.y.row(i));
                row[dx + dy..].copy_from_slice(self.base.z.row(i));
            }
        }
        pts
    }

    /// The dataset with X and X' exchanged wherever the flip bit is 0.
    ///
    /// This is the explicit form of the resampling relabeling; the fast path
    /// never materializes it.
    pub fn flipped(&self, pi: &FlipVector) -> Result<AugmentedDataset> {
        if pi.len() != self.n() {
            return Err(Error::dims(format!(
                "flip vector has length {}, dataset has n = {}",
                pi.len(),
                self.n()
            )));
        }
        let mut x = self.base.x.clone();
        let mut xp = self.x_prime.clone();
        for i in 0..self.n() {
            if !pi.bit(i) {
                for j in 0..x.cols() {
                    let (a, b) = (x.get(i, j), xp.get(i, j));
                    x.row_mut(i)[j] = b;
                    xp.row_mut(i)[j] = a;
                }
            }
        }
        AugmentedDataset::new(self.base.with_x(x)?, xp)
    }
}
