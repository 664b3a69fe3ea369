//! Decimal rounding used for every real written to bank and report files.

/// Significant digits kept in serialized reals.
pub const SIG_DIGITS: usize = 9;

/// Rounds `x` to 9 significant decimal digits. Serializing the result with
/// a shortest round-trip formatter then yields at most 9 digits, and parsing
/// it back gives the same `f64`.
pub fn q9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIG_DIGITS - 1, x).parse().expect("formatted float parses")
}

pub fn q9_all(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| q9(x)).collect()
}
