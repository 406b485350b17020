use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{factor_with_jitter, Factor};

/// Design matrix `[1, ρ∘X₁, …]` and response for the evolutionary regression.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDesign {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl RegressionDesign {
    /// Builds `[1, ρ∘X₁, …, ρ∘X_{q−1}]` from per-tip slopes and predictor columns.
    pub fn new(rho: &[f64], predictors: &[&[f64]], y: &[f64]) -> Result<Self> {
        let n = y.len();
        if rho.len() != n || predictors.iter().any(|p| p.len() != n) {
            return Err(Error::InvalidArgument("design columns must all have one entry per tip".into()));
        }
        let q = predictors.len() + 1;
        let x = DMatrix::from_fn(n, q, |i, j| if j == 0 { 1.0 } else { rho[i] * predictors[j - 1][i] });
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix or response has non-finite entries".into()));
        }
        Ok(Self { x, y: DVector::from_column_slice(y) })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn residuals(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * b
    }
}

/// Least squares through a column-pivoted QR; rejects rank-deficient designs.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, q) = x.shape();
    if n < q {
        return Err(Error::RankDeficient { rank: n, columns: q });
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let scale = r[(0, 0)].abs();
    let tol = n.max(q) as f64 * f64::EPSILON * scale;
    let rank = (0..q).take_while(|&k| r[(k, k)].abs() > tol).count();
    if rank < q || scale == 0.0 {
        return Err(Error::RankDeficient { rank, columns: q });
    }
    let qty = qr.q().transpose() * y;
    let mut z = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { rank, columns: q })?;
    qr.p().inv_permute_rows(&mut z);
    Ok(z)
}

/// `b̂ = argmin ‖Y − X̃b‖²`.
pub fn ols_estimate(design: &RegressionDesign) -> Result<DVector<f64>> {
    least_squares(&design.x, &design.y)
}

fn whiten(factor: &Factor, m: &DMatrix<f64>) -> DMatrix<f64> {
    factor
        .cholesky
        .l_dirty()
        .solve_lower_triangular(m)
        .expect("Cholesky factor has a positive diagonal")
}

fn whiten_vec(factor: &Factor, v: &DVector<f64>) -> DVector<f64> {
    factor
        .cholesky
        .l_dirty()
        .solve_lower_triangular(v)
        .expect("Cholesky factor has a positive diagonal")
}

/// GLS with an already factored V: ordinary least squares on `L⁻¹X̃, L⁻¹Y`.
pub fn gls_estimate_factored(design: &RegressionDesign, factor: &Factor) -> Result<DVector<f64>> {
    least_squares(&whiten(factor, &design.x), &whiten_vec(factor, &design.y))
}

/// `b̂ = (X̃'V⁻¹X̃)⁻¹X̃'V⁻¹Y`, computed by whitening with the Cholesky factor of V.
pub fn gls_estimate(design: &RegressionDesign, v: &DMatrix<f64>) -> Result<DVector<f64>> {
    gls_estimate_factored(design, &factor_with_jitter(v)?)
}

pub fn log_likelihood_factored(design: &RegressionDesign, b: &DVector<f64>, factor: &Factor) -> f64 {
    let n = design.n() as f64;
    let w = whiten_vec(factor, &design.residuals(b));
    -0.5 * (n * (2.0 * PI).ln() + factor.log_det() + w.norm_squared())
}

/// Multivariate normal log-likelihood of the residuals `Y − X̃b` under V.
pub fn log_likelihood(design: &RegressionDesign, b: &DVector<f64>, v: &DMatrix<f64>) -> Result<f64> {
    if b.len() != design.q() || v.nrows() != design.n() {
        return Err(Error::InvalidArgument("coefficient or covariance dimensions do not match the design".into()));
    }
    Ok(log_likelihood_factored(design, b, &factor_with_jitter(v)?))
}

/// Coefficient of determination in the whitened space:
/// `1 − ‖L⁻¹(Y − X̃b)‖² / ‖L⁻¹(Y − ȳ1)‖²`, where ȳ is the GLS mean of Y.
pub fn r_squared(design: &RegressionDesign, b: &DVector<f64>, factor: &Factor) -> Result<f64> {
    let n = design.n();
    let ones = DMatrix::from_element(n, 1, 1.0);
    let wy = whiten_vec(factor, &design.y);
    let w1 = whiten(factor, &ones).column(0).into_owned();
    let mean = w1.dot(&wy) / w1.norm_squared();
    let tss = (&wy - &w1 * mean).norm_squared();
    let rss = whiten_vec(factor, &design.residuals(b)).norm_squared();
    if !(tss > 0.0) {
        return Err(Error::InvalidArgument("response has zero whitened total sum of squares".into()));
    }
    Ok(1.0 - rss / tss)
}
