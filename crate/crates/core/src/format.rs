//! Locale-independent numeric formatting with a fixed number of significant
//! digits, used for every numeric artifact the crate writes.

/// Significant digits used in all text output.
pub const SIG_DIGITS: usize = 12;

/// Formats `x` with `digits` significant digits in the style of C's `%g`
/// (trailing zeros trimmed, exponent notation for very large or small values).
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    // Round first so that the exponent reflects the rounded value (9.99..→10).
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{exp}")
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

/// [`fmt_sig`] at [`SIG_DIGITS`].
pub fn fmt12(x: f64) -> String {
    fmt_sig(x, SIG_DIGITS)
}

/// Rounds to [`SIG_DIGITS`] significant digits (used before JSON serialization).
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    fmt12(x).parse().unwrap_or(x)
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_values() {
        assert_eq!(fmt12(1.0), "1");
        assert_eq!(fmt12(-2.5), "-2.5");
        assert_eq!(fmt12(0.1 + 0.2), "0.3");
        assert_eq!(fmt12(123456.789), "123456.789");
        assert_eq!(fmt12(0.0), "0");
    }

    #[test]
    fn exponent_forms() {
        assert_eq!(fmt12(1e-7), "1e-7");
        assert_eq!(fmt12(1.5e20), "1.5e20");
        assert_eq!(fmt_sig(999999.9999999, 6), "1e6");
        assert_eq!(fmt12(0.000123), "0.000123");
    }

    #[test]
    fn round_trip_precision() {
        let x = std::f64::consts::PI * 1e3;
        let y: f64 = fmt12(x).parse().unwrap();
        assert!((x - y).abs() / x < 1e-11);
        assert_eq!(round12(y), y);
    }
}
