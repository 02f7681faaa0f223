use serde::{Deserialize, Serialize};

use super::eta::{eta_const, lyap_solve, Direction};
use super::BoundOpts;
use crate::dynamics::SystemSpec;
use crate::error::{Result, SysIdError};
use crate::linalg::{self, Mat};
use crate::spectral;

/// Constants of the stable-regime sample-size prescription with every
/// factor kept for auditing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StableConstants {
    pub eta: f64,
    pub eta_transpose: f64,
    pub x0_inf: f64,
    pub a0_norm2: f64,
    pub c_lambda_max: f64,
    pub k_min: f64,
    pub noise_factor: f64,
    pub lyap_matrix: Mat,
    pub c1_const: f64,
    pub c2_const: f64,
}

/// `c₁ = 288(‖x(0)‖∞∨1)² η(A₀)² η(A₀′)⁴ (‖A₀‖₂²+1)(λmax(C)+1)
/// (c₂ log 2c₁p)^{4/α} p log 8p`, where the tail factor becomes `B⁴` for
/// bounded noise, and `c₂ = 4c₁(‖A₀‖₂²∨1)λmin(K(C))⁻² + 2`.
pub fn stable_constants(spec: &SystemSpec, opts: &BoundOpts) -> Result<StableConstants> {
    let p = spec.dim();
    let jf = spec.jordan_form()?;
    if jf.max_eig_mag() >= 1.0 {
        return Err(SysIdError::Regime(format!(
            "stable constants need max |λ| < 1, got {}",
            jf.max_eig_mag()
        )));
    }
    let eta = eta_const(&jf, Direction::A, opts.tail_cutoff)?;
    let eta_transpose = eta_const(&jf, Direction::ATranspose, opts.tail_cutoff)?;
    let x0_inf = spec.x0.norm_inf();
    let a0_norm2 = linalg::norm2(&spec.a0);
    let cov = spec.noise.covariance();
    let (_, c_lambda_max) = linalg::sym_eig_extremes(&cov);
    let tail = &spec.noise.tail;
    let noise_factor = tail.quantile_scale(2.0 * tail.c1 * p as f64).powi(4);
    let pf = p as f64;
    let c1_const = 288.0
        * x0_inf.max(1.0).powi(2)
        * eta.powi(2)
        * eta_transpose.powi(4)
        * (a0_norm2.powi(2) + 1.0)
        * (c_lambda_max + 1.0)
        * noise_factor
        * pf
        * (8.0 * pf).ln();
    let reach = spectral::reachability_gramian(&spec.a0, &cov)?;
    if !reach.is_reachable() {
        return Err(SysIdError::Inconsistent(format!(
            "[A0, C] is not reachable (lambda_min(K(C)) = {:e}); c2 is undefined",
            reach.lambda_min
        )));
    }
    let k_min = reach.lambda_min;
    let c2_const = 4.0 * c1_const * a0_norm2.powi(2).max(1.0) / (k_min * k_min) + 2.0;
    let lyap_matrix = lyap_solve(&spec.a0, &cov)?;
    Ok(StableConstants {
        eta,
        eta_transpose,
        x0_inf,
        a0_norm2,
        c_lambda_max,
        k_min,
        noise_factor,
        lyap_matrix,
        c1_const,
        c2_const,
    })
}

/// Smallest `n ≥ 3` with `n/(log n)^k ≥ rhs`. The left side decreases on
/// `[3, e^k]` and increases afterwards, so the answer is 3 or lies on the
/// increasing branch, where it is found by doubling and bisection.
pub fn min_n_log_power(k: f64, rhs: f64) -> Result<u64> {
    if !rhs.is_finite() {
        return Err(SysIdError::Numeric(format!("sample-size right side is {rhs}")));
    }
    let f = |n: f64| n / n.ln().powf(k);
    if f(3.0) >= rhs {
        return Ok(3);
    }
    if k == 0.0 {
        return Ok(rhs.ceil().max(3.0) as u64);
    }
    let mut lo = k.exp().floor().max(3.0);
    if f(lo) >= rhs {
        // Only possible when lo = 3, handled above.
        return Ok(lo as u64);
    }
    let mut hi = lo.max(4.0);
    let top = u64::MAX as f64;
    while f(hi) < rhs {
        if hi >= top {
            return Err(SysIdError::SampleSizeOverflow { rhs });
        }
        hi = (hi * 2.0).min(top);
    }
    // Invariant: f(lo) < rhs <= f(hi). Above 2^53 consecutive integers are
    // no longer representable and the result is exact only to f64 spacing.
    while hi - lo > 1.0 {
        let mid = ((lo + hi) / 2.0).floor();
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= rhs {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi as u64)
}

/// `n/(log n)^{4/α} ≥ (c₂/ε²)(−log δ)^{1+4/α}`, minimal `n ≥ 3`.
pub fn stable_sample_size(spec: &SystemSpec, epsilon: f64, delta: f64, opts: &BoundOpts) -> Result<(u64, StableConstants)> {
    super::check_eps_delta(epsilon, delta)?;
    let consts = stable_constants(spec, opts)?;
    let k = spec.noise.tail.four_over_alpha();
    let rhs = consts.c2_const / (epsilon * epsilon) * (-delta.ln()).powf(1.0 + k);
    Ok((min_n_log_power(k, rhs)?, consts))
}
