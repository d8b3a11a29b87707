//! Input-column encoding and standardization shared by the regression models.
//!
//! Angle columns (degrees) are expanded to (sin, cos) pairs before fitting so
//! that 0 and 360 degrees map to the same point. All models then standardize
//! the encoded columns to zero mean and unit variance and keep the constants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("input has {got} columns, encoding expects {expected}")]
pub struct EncodingMismatch {
    pub expected: usize,
    pub got: usize,
}

/// How one raw input column enters a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    /// Used as-is.
    Linear,
    /// Angle in degrees, expanded to a (sin, cos) pair.
    AngleDeg,
}

/// Column layout of a raw input matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEncoding {
    pub columns: Vec<ColumnKind>,
}

impl InputEncoding {
    pub fn linear(d: usize) -> Self {
        Self {
            columns: vec![ColumnKind::Linear; d],
        }
    }

    pub fn raw_dim(&self) -> usize {
        self.columns.len()
    }

    pub fn encoded_dim(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnKind::Linear => 1,
                ColumnKind::AngleDeg => 2,
            })
            .sum()
    }

    /// Expand a raw n x d matrix into the encoded n x encoded_dim layout.
    pub fn apply(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>, EncodingMismatch> {
        if raw.ncols() != self.raw_dim() {
            return Err(EncodingMismatch {
                expected: self.raw_dim(),
                got: raw.ncols(),
            });
        }
        let n = raw.nrows();
        let mut out = DMatrix::zeros(n, self.encoded_dim());
        for i in 0..n {
            let mut k = 0;
            for (j, kind) in self.columns.iter().enumerate() {
                match kind {
                    ColumnKind::Linear => {
                        out[(i, k)] = raw[(i, j)];
                        k += 1;
                    }
                    ColumnKind::AngleDeg => {
                        let rad = raw[(i, j)].to_radians();
                        out[(i, k)] = rad.sin();
                        out[(i, k + 1)] = rad.cos();
                        k += 2;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Per-column affine scaling to zero mean, unit variance.
///
/// Constant columns get unit scale so they pass through unchanged
/// (shifted to zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: DVector<f64>,
    pub stds: DVector<f64>,
}

const STD_FLOOR: f64 = 1e-12;

impl Standardizer {
    pub fn fit(m: &DMatrix<f64>) -> Self {
        let n = m.nrows().max(1) as f64;
        let means = DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n));
        let stds = DVector::from_iterator(
            m.ncols(),
            m.column_iter().enumerate().map(|(j, c)| {
                let var = c.iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s < STD_FLOOR {
                    1.0
                } else {
                    s
                }
            }),
        );
        Self { means, stds }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            means: DVector::zeros(d),
            stds: DVector::from_element(d, 1.0),
        }
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                out[(i, j)] = (m[(i, j)] - self.means[j]) / self.stds[j];
            }
        }
        out
    }
}

/// Scalar output scaling (mean, std) with variance-aware inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputScaler {
    pub mean: f64,
    pub std: f64,
}

impl OutputScaler {
    pub fn fit(y: &DVector<f64>) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.sum() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let s = var.sqrt();
        Self {
            mean,
            std: if s < STD_FLOOR { 1.0 } else { s },
        }
    }

    pub fn is_constant(y: &DVector<f64>) -> bool {
        let n = y.len().max(1) as f64;
        let mean = y.sum() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() < STD_FLOOR
    }

    pub fn normalize(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.mean) / self.std)
    }

    pub fn denormalize_mean(&self, m: f64) -> f64 {
        m * self.std + self.mean
    }

    pub fn denormalize_var(&self, v: f64) -> f64 {
        v * self.std * self.std
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_wraps_to_same_point() {
        let enc = InputEncoding {
            columns: vec![ColumnKind::Linear, ColumnKind::AngleDeg],
        };
        let raw = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.5, 360.0]);
        let e = enc.apply(&raw).unwrap();
        assert_eq!(e.ncols(), 3);
        assert!((e[(0, 1)] - e[(1, 1)]).abs() < 1e-12);
        assert!((e[(0, 2)] - e[(1, 2)]).abs() < 1e-12);
    }

    #[test]
    fn encoding_checks_width() {
        let enc = InputEncoding::linear(2);
        let raw = DMatrix::zeros(3, 3);
        assert_eq!(
            enc.apply(&raw),
            Err(EncodingMismatch {
                expected: 2,
                got: 3
            })
        );
    }

    #[test]
    fn standardizer_round_trip() {
        let m = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        let s = Standardizer::fit(&m);
        let z = s.apply(&m);
        for j in 0..2 {
            let col = z.column(j);
            assert!(col.sum().abs() < 1e-12);
            let var = col.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_passes_through() {
        let m = DMatrix::from_element(5, 1, 7.0);
        let s = Standardizer::fit(&m);
        let z = s.apply(&m);
        assert!(z.iter().all(|v| v.abs() < 1e-12));
    }
}
