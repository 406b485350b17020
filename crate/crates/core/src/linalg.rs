use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative (to mean diagonal) eigenvalue floor below which a matrix is
/// rejected instead of repaired.
pub const PSD_REPAIR_LIMIT: f64 = 1e-8;

/// Cholesky factor plus the diagonal jitter that was needed to obtain it.
#[derive(Debug, Clone)]
pub struct Factor {
    pub cholesky: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn log_det(&self) -> f64 {
        2.0 * self.cholesky.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Factors a symmetric matrix, repairing small negative eigenvalues.
///
/// If plain Cholesky fails, the smallest eigenvalue λ is inspected: when
/// `λ < -1e-8 · trace/n` the matrix is rejected, otherwise `-λ · 1.000001`
/// (plus a `1e-12 · trace/n` floor for exactly singular input) is added to
/// the diagonal and the factorization retried.
pub fn factor_with_jitter(m: &DMatrix<f64>) -> Result<Factor> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::InvalidArgument(format!("expected a non-empty square matrix, got {}x{}", n, m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance matrix has non-finite entries".into()));
    }
    if let Some(cholesky) = m.clone().cholesky() {
        return Ok(Factor { cholesky, jitter: 0.0 });
    }
    let scale = m.trace() / n as f64;
    let lambda = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if !(scale > 0.0) || lambda < -PSD_REPAIR_LIMIT * scale {
        return Err(Error::NotPositiveDefinite(format!(
            "smallest eigenvalue {lambda:e} with mean diagonal {scale:e}"
        )));
    }
    let jitter = (-lambda).max(0.0) * 1.000001 + 1e-12 * scale;
    let mut repaired = m.clone();
    for i in 0..n {
        repaired[(i, i)] += jitter;
    }
    let cholesky = repaired.cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite(format!("factorization failed after jitter {jitter:e}"))
    })?;
    Ok(Factor { cholesky, jitter })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_factor() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = factor_with_jitter(&m).unwrap();
        assert_eq!(f.jitter, 0.0);
        assert!((f.log_det() - 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn singular_is_repaired() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = factor_with_jitter(&m).unwrap();
        assert!(f.jitter > 0.0 && f.jitter < 1e-10);
    }

    #[test]
    fn indefinite_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(factor_with_jitter(&m), Err(Error::NotPositiveDefinite(_))));
    }
}
