//! Huber loss, quadratic inside `±delta` and linear outside.

/// Loss of a single residual.
pub fn huber_loss(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber_loss`] with respect to the residual.
pub fn huber_grad(residual: f64, delta: f64) -> f64 {
    residual.clamp(-delta, delta)
}

/// Summed over components.
pub fn huber(y: &[f64], y_hat: &[f64], delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    y.iter()
        .zip(y_hat)
        .map(|(a, b)| huber_loss(a - b, delta))
        .sum()
}
