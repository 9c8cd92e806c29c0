//! Central finite differences and the relative-error measure used by every
//! gradient check in the crate.

use super::scalar::Real;

/// Magnitude below which errors are measured absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference<T: Real>(mut f: impl FnMut(&[T]) -> T, x: &[T], h: T) -> Vec<T> {
    let mut probe = x.to_vec();
    let two_h = h + h;
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / two_h
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error<T: Real>(analytic: T, numeric: T) -> T {
    let scale = analytic
        .abs()
        .max(numeric.abs())
        .max(T::lit(RELATIVE_ERROR_FLOOR));
    (analytic - numeric).abs() / scale
}

/// Largest per-coordinate relative error. Mismatched lengths count as infinite error.
pub fn max_relative_error<T: Real>(analytic: &[T], numeric: &[T]) -> T {
    if analytic.len() != numeric.len() {
        return T::infinity();
    }
    analytic
        .iter()
        .zip(numeric)
        .fold(T::zero(), |m, (&a, &n)| m.max(relative_error(a, n)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let d = central_difference(|v: &[f64]| v[0].powi(3) + 2.0 * v[1], &[2.0, 5.0], 1e-5);
        assert!((d[0] - 12.0).abs() < 1e-8);
        assert!((d[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, 2e-12) < 1e-5);
        assert!((relative_error(1.0f64, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!(max_relative_error(&[1.0f64], &[1.0, 2.0]).is_infinite());
    }
}
