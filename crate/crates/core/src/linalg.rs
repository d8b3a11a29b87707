//! Dense linear-algebra helpers shared by the GP layers.

use nalgebra::{Cholesky, DMatrix, Dyn};
use thiserror::Error;

/// First jitter level tried after the plain factorization fails.
pub const BASE_JITTER: f64 = 1e-8;
/// Largest jitter level tried before giving up.
pub const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("kernel matrix not positive definite after jitter up to {max_jitter:e}")]
pub struct NotPositiveDefinite {
    pub max_jitter: f64,
}

/// Cholesky of `k + extra_diag * I` with escalating diagonal jitter.
///
/// Tries the plain matrix first, then jitter levels 1e-8, 1e-7, ... up to
/// 1e-4 (normalized units). Returns the factorization and the jitter that
/// was actually added.
pub fn cholesky_with_jitter(
    k: &DMatrix<f64>,
    extra_diag: f64,
) -> Result<(Cholesky<f64, Dyn>, f64), NotPositiveDefinite> {
    let n = k.nrows();
    let mut jitter = 0.0;
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += extra_diag + jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
        jitter = if jitter == 0.0 {
            BASE_JITTER
        } else {
            jitter * 10.0
        };
        if jitter > MAX_JITTER * (1.0 + 1e-12) {
            return Err(NotPositiveDefinite {
                max_jitter: MAX_JITTER,
            });
        }
    }
}

/// log det of the factorized matrix, from the diagonal of L.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_matrix_needs_no_jitter() {
        let k = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (_, jitter) = cholesky_with_jitter(&k, 0.0).unwrap();
        assert_eq!(jitter, 0.0);
    }

    #[test]
    fn singular_matrix_gets_jitter() {
        // rank-1, exactly singular
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (chol, jitter) = cholesky_with_jitter(&k, 0.0).unwrap();
        assert!(jitter > 0.0 && jitter <= MAX_JITTER);
        let rebuilt = chol.l() * chol.l().transpose();
        assert!((rebuilt[(0, 1)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hopeless_matrix_fails() {
        let k = DMatrix::from_row_slice(2, 2, &[-5.0, 0.0, 0.0, -5.0]);
        assert!(cholesky_with_jitter(&k, 0.0).is_err());
    }

    #[test]
    fn log_det_matches_direct() {
        let k = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (chol, _) = cholesky_with_jitter(&k, 0.0).unwrap();
        let det: f64 = 11.0;
        assert!((log_det(&chol) - det.ln()).abs() < 1e-12);
    }
}
