//! Least-squares estimation of `A₀` from one trajectory, plus the Gram
//! matrix diagnostics used by the finite-time analysis.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Result, SysIdError};
use crate::linalg::{self, Mat};

/// `V_n` is treated as singular when `λmin < SINGULAR_REL_TOL · λmax`.
pub const SINGULAR_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub a_hat: Mat,
    pub gram: Mat,
    pub gram_min_eig: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
}

/// Export record: `{n, error, gram_min_eig, a_hat}` with `a_hat` row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub n: usize,
    pub error: Option<f64>,
    pub gram_min_eig: f64,
    pub a_hat: Vec<Vec<f64>>,
}

impl EstimateReport {
    pub fn with_truth(mut self, a0: &Mat) -> Self {
        self.error = Some(error_norm(&self.a_hat, a0));
        self
    }

    pub fn record(&self) -> EstimateRecord {
        EstimateRecord {
            n: self.n,
            error: self.error,
            gram_min_eig: self.gram_min_eig,
            a_hat: linalg::to_rows(&self.a_hat),
        }
    }
}

fn check_len(traj: &Trajectory, states_needed: usize) -> Result<()> {
    if traj.states.len() < states_needed {
        return Err(SysIdError::InvalidInput(format!(
            "trajectory has {} states, {states_needed} needed",
            traj.states.len()
        )));
    }
    Ok(())
}

/// `V_n = Σ_{t<n} x(t)x(t)′`.
pub fn gram(traj: &Trajectory, n: usize) -> Result<Mat> {
    check_len(traj, n)?;
    let p = traj.dim();
    let mut v = Mat::zeros(p, p);
    for x in &traj.states[..n] {
        v.ger(1.0, x, x, 1.0);
    }
    Ok(v)
}

/// `Σ_{t<n} ‖x(t+1) − A x(t)‖²`.
pub fn ls_loss(traj: &Trajectory, n: usize, a: &Mat) -> Result<f64> {
    check_len(traj, n + 1)?;
    Ok((0..n)
        .map(|t| (&traj.states[t + 1] - a * &traj.states[t]).norm_squared())
        .sum())
}

/// `Â_n = (Σ_{t<n} x(t+1)x(t)′) V_n⁻¹` (or with `V_n + ridge·I`). States are rescaled by their largest entry
/// first so that explosive trajectories do not overflow the Gram matrix.
pub fn ols(traj: &Trajectory, n: usize, ridge: f64) -> Result<EstimateReport> {
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(SysIdError::InvalidInput(format!("ridge must be >= 0, got {ridge}")));
    }
    check_len(traj, n + 1)?;
    let p = traj.dim();
    if n < p && ridge == 0.0 {
        let v = gram(traj, n)?;
        let (lo, _) = linalg::sym_eig_extremes(&v);
        return Err(SysIdError::SingularGram { lambda_min: lo.max(0.0) });
    }
    let scale = traj.states[..=n]
        .iter()
        .map(|x| x.amax())
        .fold(0.0, f64::max);
    let s = if scale > 0.0 { 1.0 / scale } else { 1.0 };
    let mut v = Mat::zeros(p, p);
    for x in &traj.states[..n] {
        let x: DVector<f64> = x * s;
        v.ger(1.0, &x, &x, 1.0);
    }
    let (lo, hi) = linalg::sym_eig_extremes(&v);
    let unscale = scale * scale;
    let gram_min_eig = lo.max(0.0) * if scale > 0.0 { unscale } else { 1.0 };
    let gram_full = if scale > 0.0 { &v * unscale } else { v.clone() };

    let ridge_scaled = if scale > 0.0 { ridge / unscale } else { ridge };
    if ridge == 0.0 && (hi <= 0.0 || lo < SINGULAR_REL_TOL * hi) {
        return Err(SysIdError::SingularGram { lambda_min: gram_min_eig });
    }
    // Least squares on the stacked design X Âᵀ ≈ Y via QR, which keeps the
    // conditioning of X rather than squaring it as the normal equations do.
    // A ridge term appends √ridge·I rows to X and zeros to Y.
    let extra = if ridge > 0.0 { p } else { 0 };
    let mut xs = Mat::zeros(n + extra, p);
    let mut ys = Mat::zeros(n + extra, p);
    for t in 0..n {
        xs.row_mut(t).tr_copy_from(&(&traj.states[t] * s));
        ys.row_mut(t).tr_copy_from(&(&traj.states[t + 1] * s));
    }
    if extra > 0 {
        xs.view_mut((n, 0), (p, p)).fill_diagonal(ridge_scaled.sqrt());
    }
    let qr = xs.qr();
    let rhs = qr.q().transpose() * ys;
    let a_hat_t = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or(SysIdError::SingularGram { lambda_min: gram_min_eig })?;
    Ok(EstimateReport {
        n,
        a_hat: a_hat_t.transpose(),
        gram: gram_full,
        gram_min_eig,
        error: None,
    })
}

/// `‖Â − A₀‖₂`.
pub fn error_norm(a_hat: &Mat, a0: &Mat) -> f64 {
    linalg::norm2(&(a_hat - a0))
}

/// Extreme eigenvalues of `A₀⁻ⁿ V_{n+1} A₀′⁻ⁿ = Σ_{t≤n} (A₀⁻ⁿx(t))(A₀⁻ⁿx(t))′`.
/// Each normalized state is obtained by repeated solves with `A₀`, so the
/// huge Gram matrix is never formed.
pub fn normalized_gram_explosive(traj: &Trajectory, a0: &Mat, n: usize) -> Result<(f64, f64)> {
    let g = normalized_gram_matrix(traj, a0, n)?;
    Ok(linalg::sym_eig_extremes(&g))
}

pub fn normalized_gram_matrix(traj: &Trajectory, a0: &Mat, n: usize) -> Result<Mat> {
    let p = linalg::check_square(a0, "A0")?;
    check_len(traj, n + 1)?;
    let lu = a0.clone().lu();
    if !lu.is_invertible() || linalg::singular_values(a0).last().is_none_or(|&s| s <= 1e-14 * linalg::norm2(a0)) {
        return Err(SysIdError::InvalidInput("A0 is singular".into()));
    }
    let mut g = Mat::zeros(p, p);
    for x in &traj.states[..=n] {
        let mut y = x.clone();
        for _ in 0..n {
            y = lu.solve(&y).ok_or_else(|| SysIdError::Numeric("solve with A0 failed".into()))?;
        }
        g.ger(1.0, &y, &y, 1.0);
    }
    Ok((&g + g.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn traj(states: Vec<DVector<f64>>) -> Trajectory {
        Trajectory {
            states,
            noises: vec![],
            seed: 0,
            overflowed_at: None,
        }
    }

    #[test]
    fn gram_examples() {
        let t = traj(vec![dvector![1.0, 0.0], dvector![0.0, 1.0]]);
        assert_eq!(gram(&t, 2).unwrap(), linalg::identity(2));
        let t = traj(vec![dvector![0.0, 0.0]; 3]);
        assert_eq!(gram(&t, 3).unwrap(), Mat::zeros(2, 2));
        let t = traj(vec![dvector![1.0], dvector![2.0], dvector![3.0]]);
        assert_eq!(gram(&t, 3).unwrap()[(0, 0)], 14.0);
    }

    #[test]
    fn error_norm_examples() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(error_norm(&a, &a), 0.0);
        let d = Mat::from_diagonal(&dvector![3.0, -4.0]);
        assert!((error_norm(&(&a + d), &a) - 4.0).abs() < 1e-12);
        let d = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!((error_norm(&(&a + d), &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_noiseless_recovery() {
        let t = traj((0..6).map(|k| dvector![2f64.powi(k)]).collect());
        let r = ols(&t, 5, 0.0).unwrap();
        assert_eq!(r.a_hat[(0, 0)], 2.0);
    }

    #[test]
    fn singular_gram_is_reported() {
        let t = traj(vec![dvector![1.0, 1.0]; 5]);
        assert!(matches!(ols(&t, 4, 0.0), Err(SysIdError::SingularGram { .. })));
        assert!(ols(&t, 4, 1e-3).is_ok());
    }

    #[test]
    fn normalized_gram_examples() {
        let v = 1.5;
        let t = traj((0..=40).map(|k| dvector![v * 2f64.powi(k)]).collect());
        let a = Mat::from_element(1, 1, 2.0);
        let (lo, hi) = normalized_gram_explosive(&t, &a, 0).unwrap();
        assert!((hi - v * v).abs() < 1e-12 && (lo - v * v).abs() < 1e-12);
        let (lo, _) = normalized_gram_explosive(&t, &a, 40).unwrap();
        assert!((lo - 4.0 / 3.0 * v * v).abs() < 1e-9);
    }
}
