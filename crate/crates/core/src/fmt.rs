//! Number formatting shared by the text formats.

/// Formats like C's `%.9g`: nine significant digits, trailing zeros removed,
/// scientific notation for very small or very large magnitudes.
pub fn sig9(value: f64) -> String {
    sig(value, 9)
}

pub fn sig(value: f64, digits: usize) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    if !value.is_finite() {
        return format!("{value}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, value);
    let (mantissa, exponent) = sci.split_once('e').expect("exponent marker");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if exponent < -4 || exponent >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exponent)
    } else {
        let decimals = (digits as i32 - 1 - exponent).max(0) as usize;
        trim_zeros(&format!("{value:.decimals$}")).to_string()
    }
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
    use proptest::prelude::*;

    #[test]
    fn matches_printf_g() {
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(-2.5), "-2.5");
        assert_eq!(sig9(0.1), "0.1");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(123456789.4), "123456789");
        assert_eq!(sig9(1234567890.0), "1.23456789e9");
        assert_eq!(sig9(0.0001), "0.0001");
        assert_eq!(sig9(0.00001234), "1.234e-5");
        assert_eq!(sig9(999999999.6), "1e9");
        assert_eq!(sig9(520.0), "520");
    }

    proptest! {
        #[test]
        fn reprint_is_stable(v in prop::num::f64::NORMAL) {
            let s = sig9(v);
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(sig9(back), s);
            prop_assert!(((back - v) / v).abs() <= 5e-9);
        }
    }
}
