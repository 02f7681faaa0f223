/// Matrix Bernstein tail `2p·exp(−3y²/(6σ² + 2by))` for a sum of independent
/// zero-mean symmetric `p×p` matrices with `‖Σ E[X_i²]‖ ≤ σ²` and
/// `λmax(X_i) ≤ b`. The horizon enters only through `σ²`. Clamped to `[0, 1]`.
pub fn bernstein_bound(p: usize, variance_proxy: f64, max_eig_bound: f64, y: f64) -> f64 {
    let denom = 6.0 * variance_proxy + 2.0 * max_eig_bound * y;
    if denom <= 0.0 {
        return if y > 0.0 { 0.0 } else { 1.0 };
    }
    (2.0 * p as f64 * (-3.0 * y * y / denom).exp()).clamp(0.0, 1.0)
}

/// Matrix Azuma tail `2p·exp(−y²/(8σ²))` for a martingale difference sequence
/// with `X_i² ⪯ A_i²` and `‖Σ A_i²‖ ≤ σ²`. Clamped to `[0, 1]`.
pub fn azuma_bound(p: usize, sigma_sq: f64, y: f64) -> f64 {
    if sigma_sq <= 0.0 {
        return if y > 0.0 { 0.0 } else { 1.0 };
    }
    (2.0 * p as f64 * (-y * y / (8.0 * sigma_sq)).exp()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(bernstein_bound(3, 1.0, 1.0, 0.0), 1.0);
        let n = 40.0;
        let b = bernstein_bound(2, n, 1.0, n);
        assert!((b - 4.0 * (-3.0 * n / 8.0).exp()).abs() < 1e-15);
        assert_eq!(azuma_bound(1, 1.0, 0.0), 1.0);
        assert!((azuma_bound(1, 1.0, 4.0) - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
    }
}
