//! Numeric formatting for the CSV interfaces.
//!
//! All text output uses `.` as the decimal separator, no grouping, `\n` line
//! endings. Coordinates carry 17 significant digits; other values use the
//! shortest representation that round-trips, so parse-serialize-parse is the
//! identity.

/// Cell-center coordinate with 17 significant digits.
pub fn fmt_coord(x: f64) -> String {
    format!("{x:.16e}")
}

/// Shortest round-tripping representation.
pub fn fmt_value(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_are_printed_with_17_significant_digits() {
        assert_eq!(fmt_coord(0.25), "2.5000000000000000e-1");
        assert_eq!(fmt_coord(0.35), "3.4999999999999997e-1");
    }

    #[test]
    fn values_round_trip() {
        for x in [0.1, -2.0, 1.0 / 3.0, 1e-300, 12345.6789] {
            assert_eq!(fmt_value(x).parse::<f64>().unwrap(), x);
        }
    }
}
