//! Decimal formatting with a fixed number of significant digits.

/// Significant digits used by the telemetry CSV files.
pub const SIG_DIGITS: usize = 9;

/// Formats `x` like C's `%.9g`: fixed notation for moderate exponents,
/// scientific otherwise, trailing zeros trimmed.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIG_DIGITS as i32).contains(&exp) {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Rounds `x` to the double nearest its 9-significant-digit decimal form,
/// so that `format_sig` followed by parsing reproduces it bit-exactly.
pub fn quantize(x: f64) -> f64 {
    format_sig(x).parse().expect("formatted float parses")
}
