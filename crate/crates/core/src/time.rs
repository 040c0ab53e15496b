//! Time arithmetic helpers.
//!
//! All times are `f64` in arbitrary units. Comparisons go through a single
//! absolute tolerance so that utilization sums and fixed-point iterations
//! compare reliably.

use std::cmp::Ordering;

/// Global comparison tolerance.
pub const EPS: f64 = 1e-9;

pub type Time = f64;

#[inline]
pub fn approx_eq(a: Time, b: Time) -> bool {
    (a - b).abs() <= EPS
}

/// `a <= b` up to tolerance.
#[inline]
pub fn le(a: Time, b: Time) -> bool {
    a <= b + EPS
}

/// `a > b` beyond tolerance.
#[inline]
pub fn gt(a: Time, b: Time) -> bool {
    a > b + EPS
}

/// Ceiling that ignores float noise just above an integer.
#[inline]
pub fn ceil_tol(x: f64) -> f64 {
    (x - EPS).ceil()
}

/// Rounds to 11 significant digits so that values which are equal up to
/// float noise compare equal, while the comparison stays a total order.
pub fn quantize(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exp = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(10 - exp);
    if !scale.is_finite() || scale == 0.0 {
        return x;
    }
    (x * scale).round() / scale
}

/// Total order on quantized values.
#[inline]
pub fn cmp_quantized(a: f64, b: f64) -> Ordering {
    quantize(a).total_cmp(&quantize(b))
}

/// Treats values that are integral up to tolerance as integers.
pub fn as_integer(x: f64) -> Option<u64> {
    let r = x.round();
    if r >= 1.0 && (x - r).abs() <= EPS && r < u64::MAX as f64 {
        Some(r as u64)
    } else {
        None
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Least common multiple of periods that are whole multiples of some power
/// of ten down to `1e-6`; `None` if there is no such grid or the result
/// exceeds `cap`.
pub fn hyperperiod(periods: impl IntoIterator<Item = Time> + Clone, cap: Time) -> Option<Time> {
    'scale: for digits in 0..=6 {
        let scale = 10f64.powi(digits);
        let mut lcm: u128 = 1;
        for p in periods.clone() {
            let Some(q) = as_integer(p * scale) else {
                continue 'scale;
            };
            let q = u128::from(q);
            lcm = (lcm / gcd(lcm, q)).checked_mul(q)?;
            if lcm as f64 / scale > cap {
                return None;
            }
        }
        return Some(lcm as f64 / scale);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperperiods() {
        assert_eq!(hyperperiod([4.0, 6.0], 1e9), Some(12.0));
        assert_eq!(hyperperiod([2.5, 4.0], 1e9), Some(20.0));
        assert_eq!(hyperperiod([4.0, 6.0], 10.0), None);
        assert_eq!(hyperperiod([std::f64::consts::PI, 1.0], 1e9), None);
    }

    #[test]
    fn ceil_ignores_noise() {
        assert_eq!(ceil_tol(1.0 + 1e-12), 1.0);
        assert_eq!(ceil_tol(1.0), 1.0);
        assert_eq!(ceil_tol(1.1), 2.0);
        assert_eq!(ceil_tol(0.0), 0.0);
    }

    #[test]
    fn quantized_ties() {
        let a = 0.5 / 20.0;
        let b = (1.0 / 3.0 + 1.0 / 6.0) / 20.0;
        assert_eq!(cmp_quantized(a, b), Ordering::Equal);
        assert_eq!(cmp_quantized(0.05, 0.02), Ordering::Greater);
    }
}
