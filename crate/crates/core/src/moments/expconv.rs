//! Convolutions of decaying exponentials.
//!
//! `exp_conv(&[λ₁, …, λₘ], t)` is `(e^{-λ₁·} * … * e^{-λₘ·})(t)`, the m-fold
//! convolution on `[0, t]`. Every closed-form moment is a linear combination
//! of these. Coincident or nearly coincident rates are the removable
//! singularities of the textbook partial-fraction formulas; here they are
//! handled by a Taylor series of the simplex integral instead.

/// Maximum number of rates supported.
pub const MAX_RATES: usize = 6;

/// m-fold convolution of `e^{-λᵢ t}` evaluated at `t ≥ 0`.
///
/// Equals `t^{m-1} ∫_Δ exp(-t Σ wᵢλᵢ) dw` over the standard simplex, i.e.
/// `(-1)^{m-1}` times the divided difference of `λ ↦ e^{-λt}` at the rates.
pub fn exp_conv(rates: &[f64], t: f64) -> f64 {
    let m = rates.len();
    assert!((1..=MAX_RATES).contains(&m), "exp_conv takes 1..={MAX_RATES} rates");
    if m == 1 {
        return (-rates[0] * t).exp();
    }
    if t == 0.0 {
        return 0.0;
    }
    let mut x = [0.0; MAX_RATES];
    for (xi, &r) in x.iter_mut().zip(rates) {
        *xi = r * t;
    }
    let x = &mut x[..m];
    x.sort_by(f64::total_cmp);
    t.powi(m as i32 - 1) * simplex_exp(x)
}

/// `∫_Δ exp(-Σ wᵢxᵢ) dw` for sorted `x`.
fn simplex_exp(x: &[f64]) -> f64 {
    let m = x.len();
    if m == 1 {
        return (-x[0]).exp();
    }
    let spread = x[m - 1] - x[0];
    if spread < 1.0 {
        (-x[0]).exp() * simplex_series(x, x[0])
    } else {
        (simplex_exp(&x[..m - 1]) - simplex_exp(&x[1..])) / spread
    }
}

/// Series `Σ_k (-1)^k h_k(y) / (m-1+k)!` with `y = x - shift ∈ [0, 1)`, where
/// `h_k` is the complete homogeneous symmetric polynomial of degree k.
fn simplex_series(x: &[f64], shift: f64) -> f64 {
    const TERMS: usize = 40;
    let m = x.len();
    let mut h = [0.0f64; TERMS];
    h[0] = 1.0;
    for &xi in x {
        let y = xi - shift;
        for k in 1..TERMS {
            h[k] += y * h[k - 1];
        }
    }
    let mut fact = (1..m).map(|i| i as f64).product::<f64>();
    let mut sum = 0.0;
    let mut sign = 1.0;
    for (k, hk) in h.iter().enumerate() {
        let term = sign * hk / fact;
        sum += term;
        if k > 2 && term.abs() <= 1e-18 * sum.abs() {
            break;
        }
        sign = -sign;
        fact *= (m + k) as f64;
    }
    sum
}
