//! Number formatting for CSV reports.

/// Formats `x` with 6 significant digits, plain notation for moderate
/// magnitudes and exponent notation otherwise.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    // Round first so that e.g. 9.999996 moves to the next decade.
    let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    let e = rounded.abs().log10().floor() as i32;
    if (-5..6).contains(&e) {
        let decimals = (5 - e).max(0) as usize;
        let s = format!("{rounded:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{rounded:.5e}")
    }
}
