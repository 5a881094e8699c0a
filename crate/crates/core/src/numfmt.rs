//! Deterministic number formatting for artifact files.

/// Scientific form with 17 significant digits: round-trips every f64,
/// uses `.` as the decimal separator, and is byte-stable across
/// platforms and thread counts.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::fmt_f64;

    #[test]
    fn format_is_fixed_width_scientific() {
        assert_eq!(fmt_f64(0.25), "2.5000000000000000e-1");
        assert_eq!(fmt_f64(-3.0), "-3.0000000000000000e0");
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e0");
    }

    #[test]
    fn format_round_trips() {
        for v in [std::f64::consts::PI, 0.1, 1e-300, 123456789.12345679] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, v, "{s} failed to round-trip");
        }
    }
}
