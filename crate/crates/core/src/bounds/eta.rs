use serde::{Deserialize, Serialize};

use crate::error::{Result, SysIdError};
use crate::linalg::{self, Mat};
use crate::spectral::{JordanBlock, JordanForm};

/// Default absolute cutoff for the tail of truncated series.
pub const DEFAULT_TAIL_CUTOFF: f64 = 1e-12;
const MAX_TERMS: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    A,
    ATranspose,
}

fn factorial(j: usize) -> f64 {
    (1..=j).map(|k| k as f64).product()
}

/// `t^{m−1} ρ^t Σ_{j<m} ρ^{−j}/j!`.
fn block_objective(rho: f64, m: usize, t: usize) -> f64 {
    let s: f64 = (0..m).map(|j| rho.powi(t as i32 - j as i32) / factorial(j)).sum();
    (t as f64).powi(m as i32 - 1) * s
}

fn block_objective_deriv(rho: f64, m: usize, t: usize) -> f64 {
    (0..m)
        .map(|j| {
            let e = t as i32 - j as i32;
            e as f64 * rho.powi(e - 1) / factorial(j)
        })
        .sum()
}

/// `η_t(Λ_i) = inf_{ρ ≥ |λ|} t^{m−1} ρ^t Σ_{j<m} ρ^{−j}/j!` for a block of
/// size `m`, with `η_0 = 1`. The objective is convex in `ρ` and increasing
/// once `t ≥ m − 1`, where the infimum sits at `ρ = |λ|`; otherwise the
/// stationary point is found by bisection on the derivative.
pub fn eta_t_block(lambda_abs: f64, m: usize, t: usize) -> f64 {
    if t == 0 {
        return 1.0;
    }
    if t + 1 >= m {
        return block_objective(lambda_abs, m, t);
    }
    let lo0 = lambda_abs;
    if lo0 > 0.0 && block_objective_deriv(lo0, m, t) >= 0.0 {
        return block_objective(lo0, m, t);
    }
    let mut lo = lo0;
    let mut hi = lo0.max(1.0);
    while block_objective_deriv(hi, m, t) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if block_objective_deriv(mid, m, t) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rho = 0.5 * (lo + hi);
    block_objective(rho.max(lambda_abs), m, t)
}

/// `η_t(Λ) = max_i η_t(Λ_i)`.
pub fn eta_t(blocks: &[JordanBlock], t: usize) -> f64 {
    blocks
        .iter()
        .map(|b| eta_t_block(b.eigenvalue.norm(), b.size, t))
        .fold(0.0, f64::max)
}

/// Result of summing a truncated series with an explicit tail bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesSum {
    /// Partial sum plus the tail bound.
    pub value: f64,
    /// Last index summed exactly.
    pub truncation: usize,
    pub tail_bound: f64,
}

/// `Σ_{t ≥ start} η_t(Λ) g(t)` for stable blocks and a weight `g` that is
/// nondecreasing with `g(t+1)/g(t)` nonincreasing from `weight_regular_from`
/// on. Beyond the point where every per-block term ratio is decreasing, the
/// remaining series is dominated block by block by a geometric series with
/// the current ratio; summation stops once that bound falls below `cutoff`.
pub fn eta_series(
    blocks: &[JordanBlock],
    start: usize,
    weight: impl Fn(usize) -> f64,
    weight_regular_from: usize,
    cutoff: f64,
) -> Result<SeriesSum> {
    if blocks.iter().any(|b| b.eigenvalue.norm() >= 1.0) {
        return Err(SysIdError::Regime("power-bound series needs all |λ| < 1".into()));
    }
    if blocks.is_empty() {
        return Err(SysIdError::InvalidInput("no Jordan blocks".into()));
    }
    let mu = blocks.iter().map(|b| b.size).max().unwrap_or(1);
    let regular_from = weight_regular_from.max(mu).max(1);
    let mut sum = 0.0;
    let mut t = start;
    loop {
        let w = weight(t);
        sum += eta_t(blocks, t) * w;
        if t >= regular_from {
            let w_next = weight(t + 1);
            let mut tail = 0.0;
            let mut ok = true;
            for b in blocks {
                let lam = b.eigenvalue.norm();
                let a1 = eta_t_block(lam, b.size, t + 1) * w_next;
                if a1 == 0.0 {
                    continue;
                }
                let a2 = eta_t_block(lam, b.size, t + 2) * weight(t + 2);
                let r = a2 / a1;
                if !(r < 1.0) {
                    ok = false;
                    break;
                }
                tail += a1 / (1.0 - r);
            }
            if ok && tail < cutoff {
                return Ok(SeriesSum {
                    value: sum + tail,
                    truncation: t,
                    tail_bound: tail,
                });
            }
        }
        t += 1;
        if t > MAX_TERMS {
            return Err(SysIdError::Numeric(format!(
                "series did not reach tail cutoff {cutoff:e} within {MAX_TERMS} terms"
            )));
        }
    }
}

/// `Σ_{t≥0} η_t(Λ)`.
pub fn eta_sum(blocks: &[JordanBlock], tail_cutoff: f64) -> Result<SeriesSum> {
    eta_series(blocks, 0, |_| 1.0, 0, tail_cutoff)
}

/// `η(A₀) = ‖P⁻¹‖_{∞→2}‖P‖∞ Σ_t η_t(Λ)`, or for `A₀′` the prefactor
/// `‖P′‖_{∞→2}‖P′⁻¹‖∞`.
pub fn eta_const(jf: &JordanForm, direction: Direction, tail_cutoff: f64) -> Result<f64> {
    if jf.max_eig_mag() >= 1.0 {
        return Err(SysIdError::Regime(format!(
            "eta needs a stable matrix, max |λ| = {}",
            jf.max_eig_mag()
        )));
    }
    let s = eta_sum(&jf.blocks, tail_cutoff)?.value;
    Ok(prefactor(jf, direction) * s)
}

/// `η(A₀⁻¹)` for explosive `A₀`, built from blocks `(1/λ, m)` and the same
/// similarity `P`.
pub fn eta_const_inverse(jf: &JordanForm, direction: Direction, tail_cutoff: f64) -> Result<f64> {
    if jf.min_eig_mag() <= 1.0 {
        return Err(SysIdError::Regime(format!(
            "inverse eta needs an explosive matrix, min |λ| = {}",
            jf.min_eig_mag()
        )));
    }
    let s = eta_sum(&jf.inverse_blocks(), tail_cutoff)?.value;
    Ok(prefactor(jf, direction) * s)
}

fn prefactor(jf: &JordanForm, direction: Direction) -> f64 {
    match direction {
        Direction::A => jf.transfer_factor(),
        Direction::ATranspose => jf.transpose_transfer_factor(),
    }
}

const LYAP_MAX_DOUBLINGS: usize = 200;

/// Solves `X = AXA′ + C` for stable `A` by the doubling iteration
/// `X ← X + A_k X A_k′`, `A_k ← A_k²`.
pub fn lyap_solve(a: &Mat, c: &Mat) -> Result<Mat> {
    let p = linalg::check_square(a, "A")?;
    if c.nrows() != p || c.ncols() != p {
        return Err(SysIdError::InvalidInput("C must match A".into()));
    }
    let (_, rho) = crate::spectral::eig_extremes(a)?;
    if rho >= 1.0 {
        return Err(SysIdError::Regime(format!("lyap needs a stable matrix, max |λ| = {rho}")));
    }
    let mut x = c.clone();
    let mut ak = a.clone();
    for _ in 0..LYAP_MAX_DOUBLINGS {
        let incr = &ak * &x * ak.transpose();
        x += &incr;
        ak = &ak * &ak;
        let size = x.amax();
        if incr.amax() <= 1e-17 * size || size == 0.0 || ak.amax() == 0.0 {
            break;
        }
    }
    let x = (&x + x.transpose()) * 0.5;
    let resid = linalg::norm2(&(&x - a * &x * a.transpose() - c));
    let scale = linalg::norm2(&x);
    if resid > 1e-12 * scale.max(f64::MIN_POSITIVE) && resid > 0.0 {
        return Err(SysIdError::Numeric(format!(
            "lyap residual {resid:e} exceeds tolerance (|X| = {scale:e})"
        )));
    }
    Ok(x)
}
