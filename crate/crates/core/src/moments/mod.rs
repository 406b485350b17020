//! First and second moments of the joint process Z_t = (y_t, θ_t, σ_t):
//!
//! ```text
//! dy = α_y (θ − y) dt + σ dW^y
//! dθ = −α_θ θ dt + σ_θ dW^θ
//! dσ = τ dW^σ
//! ```
//!
//! with independent Brownian drivers. The raw second moments P_t = E[Z Zᵀ]
//! solve dP/dt = A P + P Aᵀ + E[C_t]; both a closed form and an RK4
//! integrator are provided and are expected to agree.

mod expconv;
mod params;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};

pub use expconv::exp_conv;
pub use params::{InitialState, ModelKind, ModelParams};

/// Relative gap `|α_y − α_θ| / max(α_y, α_θ, 1)` below which the coincident-rate
/// limit of `c_θ` is used.
pub const COINCIDENT_RATE_TOL: f64 = 1e-8;

/// Optimum variance at or below which ρ(t) is reported as undefined.
pub const DEGENERATE_VARIANCE: f64 = 1e-14;

/// The six distinct entries of a symmetric 3×3 second-moment matrix over
/// (y, θ, σ).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SecondMoments {
    pub yy: f64,
    pub tt: f64,
    pub ss: f64,
    pub yt: f64,
    pub ys: f64,
    pub ts: f64,
}

impl SecondMoments {
    fn as_array(&self) -> [f64; 6] {
        [self.yy, self.tt, self.ss, self.yt, self.ys, self.ts]
    }

    fn from_array(a: [f64; 6]) -> Self {
        Self { yy: a[0], tt: a[1], ss: a[2], yt: a[3], ys: a[4], ts: a[5] }
    }

    fn axpy(&self, h: f64, d: &SecondMoments) -> SecondMoments {
        let (a, b) = (self.as_array(), d.as_array());
        Self::from_array(std::array::from_fn(|i| a[i] + h * b[i]))
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.yy, self.yt, self.ys, //
            self.yt, self.tt, self.ts, //
            self.ys, self.ts, self.ss,
        )
    }
}

/// Moments of Z_t at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentState {
    pub t: f64,
    pub mean_y: f64,
    pub mean_theta: f64,
    pub mean_sigma: f64,
    /// Raw (non-central) second moments.
    pub second: SecondMoments,
}

impl MomentState {
    /// Moments of the deterministic initial state.
    pub fn initial(init: &InitialState) -> Self {
        let InitialState { y0, theta0, sigma0 } = *init;
        Self {
            t: 0.0,
            mean_y: y0,
            mean_theta: theta0,
            mean_sigma: sigma0,
            second: SecondMoments {
                yy: y0 * y0,
                tt: theta0 * theta0,
                ss: sigma0 * sigma0,
                yt: y0 * theta0,
                ys: y0 * sigma0,
                ts: theta0 * sigma0,
            },
        }
    }

    /// Central second moments (covariance matrix of Z_t).
    pub fn covariance(&self) -> Matrix3<f64> {
        let m = nalgebra::Vector3::new(self.mean_y, self.mean_theta, self.mean_sigma);
        self.second.matrix() - m * m.transpose()
    }

    pub fn var_y(&self) -> f64 {
        self.second.yy - self.mean_y * self.mean_y
    }

    pub fn var_theta(&self) -> f64 {
        self.second.tt - self.mean_theta * self.mean_theta
    }

    pub fn cov_y_theta(&self) -> f64 {
        self.second.yt - self.mean_y * self.mean_theta
    }

    /// Smallest eigenvalue of the covariance matrix.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.covariance()).eigenvalues.min()
    }
}

/// Drift matrix A of dZ = A Z dt + D dW (negative diagonal convention).
pub fn drift_matrix(params: &ModelParams) -> Matrix3<f64> {
    let (a, b) = (params.alpha_y, params.alpha_theta);
    Matrix3::new(
        -a, a, 0.0, //
        0.0, -b, 0.0, //
        0.0, 0.0, 0.0,
    )
}

/// `(c_y, c_θ)` with `E[y_t | y₀, θ₀] = c_y y₀ + c_θ θ₀`.
pub fn conditional_coefficients(params: &ModelParams, t: f64) -> Result<(f64, f64)> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("elapsed time must be >= 0, got {t}")));
    }
    Ok(coefficients_unchecked(params, t))
}

pub(crate) fn coefficients_unchecked(params: &ModelParams, t: f64) -> (f64, f64) {
    let a = params.alpha_y;
    let b = params.alpha_theta;
    let c_y = (-a * t).exp();
    let c_theta = if !params.kind.has_ou_optimum() || b == 0.0 {
        // Brownian (or constant) optimum: the α_θ → 0 limit.
        -(-a * t).exp_m1()
    } else if (a - b).abs() < COINCIDENT_RATE_TOL * a.max(b).max(1.0) {
        a * t * (-a * t).exp()
    } else {
        a / (a - b) * ((-b * t).exp() - (-a * t).exp())
    };
    (c_y, c_theta)
}

/// `E[(σ_t)²] = σ₀² + τ² t`.
pub fn expected_rate_square(params: &ModelParams, t: f64) -> f64 {
    params.sigma_y * params.sigma_y + params.tau * params.tau * t
}

/// Time derivative of the raw second moments, `A P + P Aᵀ + E[C_t]`.
///
/// The noise term for y is the state's own `E[σ²]`, which equals
/// `σ₀² + τ² t` along any trajectory started from a deterministic σ₀.
pub fn moment_ode_rhs(state: &MomentState, params: &ModelParams) -> SecondMoments {
    second_moment_rhs(&state.second, params)
}

fn second_moment_rhs(p: &SecondMoments, params: &ModelParams) -> SecondMoments {
    let a = params.alpha_y;
    let b = params.alpha_theta;
    let s2 = params.sigma_theta * params.sigma_theta;
    SecondMoments {
        tt: -2.0 * b * p.tt + s2,
        yt: a * p.tt - (a + b) * p.yt,
        yy: 2.0 * a * (p.yt - p.yy) + p.ss,
        ss: params.tau * params.tau,
        ys: a * (p.ts - p.ys),
        ts: -b * p.ts,
    }
}

fn means_at(params: &ModelParams, init: &InitialState, t: f64) -> (f64, f64, f64) {
    let (c_y, c_theta) = coefficients_unchecked(params, t);
    let mean_y = c_y * init.y0 + c_theta * init.theta0;
    let mean_theta = (-params.alpha_theta * t).exp() * init.theta0;
    (mean_y, mean_theta, init.sigma0)
}

fn check_inputs(params: &ModelParams, init: &InitialState, t: f64) -> Result<()> {
    params.validate()?;
    init.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// Fixed-step classical RK4 integration of the second-moment ODE; the final
/// partial step is shortened to land on `t`.
pub fn solve_moments_numeric(
    params: &ModelParams,
    init: &InitialState,
    t: f64,
    step: f64,
) -> Result<MomentState> {
    check_inputs(params, init, t)?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let mut state = MomentState::initial(init);
    if t == 0.0 {
        return Ok(state);
    }
    let n_full = (t / step).floor() as u64;
    let mut p = state.second;
    let mut now = 0.0;
    let mut k = 0u64;
    loop {
        let h = if k < n_full { step } else { t - (k as f64) * step };
        if h <= 0.0 {
            break;
        }
        let k1 = second_moment_rhs(&p, params);
        let k2 = second_moment_rhs(&p.axpy(0.5 * h, &k1), params);
        let k3 = second_moment_rhs(&p.axpy(0.5 * h, &k2), params);
        let k4 = second_moment_rhs(&p.axpy(h, &k3), params);
        let a = p.as_array();
        let (d1, d2, d3, d4) = (k1.as_array(), k2.as_array(), k3.as_array(), k4.as_array());
        p = SecondMoments::from_array(std::array::from_fn(|i| {
            a[i] + h / 6.0 * (d1[i] + 2.0 * d2[i] + 2.0 * d3[i] + d4[i])
        }));
        if !p.is_finite() {
            return Err(Error::NonFinite(format!(
                "moment integration blew up at t = {}",
                now + h
            )));
        }
        now += h;
        k += 1;
        if k > n_full {
            break;
        }
    }
    let (mean_y, mean_theta, mean_sigma) = means_at(params, init, t);
    state.t = t;
    state.mean_y = mean_y;
    state.mean_theta = mean_theta;
    state.mean_sigma = mean_sigma;
    state.second = p;
    Ok(state)
}

/// Central second moments `(Var y, Cov(y, θ), Var θ)` of the root-conditioned
/// process at time `t`. These do not depend on the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralMoments {
    pub var_y: f64,
    pub cov_yt: f64,
    pub var_theta: f64,
}

/// Closed-form central moments, integrating the linear ODEs in dependency
/// order from zero initial covariance:
///
/// ```text
/// Var θ     = σ_θ² (1 ∗ e^{−2α_θ·})
/// Cov(y, θ) = α_y · (Var θ ∗ e^{−(α_y+α_θ)·})
/// Var y     = (2α_y Cov(y, θ) + E[σ²]) ∗ e^{−2α_y·}
/// ```
pub fn central_moments(params: &ModelParams, sigma0: f64, t: f64) -> CentralMoments {
    let a = params.alpha_y;
    let b = params.alpha_theta;
    let s2 = params.sigma_theta * params.sigma_theta;
    let tau2 = params.tau * params.tau;
    let var_theta = s2 * exp_conv(&[0.0, 2.0 * b], t);
    let cov_yt = a * s2 * exp_conv(&[0.0, 2.0 * b, a + b], t);
    // E[σ²](u) = σ₀² + τ² u; the linear term is itself 1 ∗ 1.
    let var_y = 2.0 * a * a * s2 * exp_conv(&[0.0, 2.0 * b, a + b, 2.0 * a], t)
        + sigma0 * sigma0 * exp_conv(&[0.0, 2.0 * a], t)
        + tau2 * exp_conv(&[0.0, 0.0, 2.0 * a], t);
    CentralMoments { var_y, cov_yt, var_theta }
}

/// Closed-form moments of Z_t from a deterministic initial state.
pub fn solve_moments_closed(
    params: &ModelParams,
    init: &InitialState,
    t: f64,
) -> Result<MomentState> {
    check_inputs(params, init, t)?;
    if t == 0.0 {
        return Ok(MomentState::initial(init));
    }
    let c = central_moments(params, init.sigma0, t);
    let (my, mt, ms) = means_at(params, init, t);
    let var_sigma = params.tau * params.tau * t;
    // Cov(y, σ) and Cov(θ, σ) stay zero: their ODEs are homogeneous.
    let second = SecondMoments {
        yy: c.var_y + my * my,
        tt: c.var_theta + mt * mt,
        ss: var_sigma + ms * ms,
        yt: c.cov_yt + my * mt,
        ys: my * ms,
        ts: mt * ms,
    };
    if !second.is_finite() {
        return Err(Error::NonFinite(format!("closed-form moments at t = {t}")));
    }
    Ok(MomentState { t, mean_y: my, mean_theta: mt, mean_sigma: ms, second })
}

/// Optimal-regression slope ρ(t) = Cov[y_t, θ_t] / Var[θ_t].
pub fn rho(params: &ModelParams, init: &InitialState, t: f64) -> Result<f64> {
    check_inputs(params, init, t)?;
    let c = central_moments(params, init.sigma0, t);
    rho_from(&c, t)
}

pub(crate) fn rho_from(c: &CentralMoments, t: f64) -> Result<f64> {
    if !(c.var_theta > DEGENERATE_VARIANCE) {
        return Err(Error::DegenerateOptimumVariance { time: t, variance: c.var_theta });
    }
    Ok(c.cov_yt / c.var_theta)
}
