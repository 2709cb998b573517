//! Finite-difference helpers for verifying backward passes.

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than
/// relatively; central differences cannot resolve them in `f64`.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}
