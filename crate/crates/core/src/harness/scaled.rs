//! Trials at horizons where the explosive part of the state leaves the
//! floating-point range.
//!
//! With `y = Mx` split into stable `y₁` and explosive `y₂`, the estimator is
//! equivariant, `Â_x = M⁻¹Â_yM`, and with `D = diag(I, A₂⁻ⁿ)` and
//! `ŷ(t) = Dy(t)`,
//!
//! `Â_y − diag(A₁, A₂) = (Σ w_y(t+1)ŷ(t)′)(Σ ŷ(t)ŷ(t)′)⁻¹ D`.
//!
//! Every factor on the right is of moderate size. `ŷ₂(t) = A₂^{−(n−t)}u(t)`
//! with `u(t) = A₂^{−t}y₂(t)`, a convergent sequence, and terms with
//! `‖A₂^{−(n−t)}‖` below [`NEGLIGIBLE`] are dropped.

use nalgebra::DVector;

use crate::dynamics::SystemSpec;
use crate::error::{Result, SysIdError};
use crate::estimator::SINGULAR_REL_TOL;
use crate::linalg::{self, Mat};
use crate::noise::TrialRng;
use crate::spectral::{self, SpectralSplit};

/// Relative size below which `A₂⁻ᵏ` is treated as zero.
pub const NEGLIGIBLE: f64 = 1e-20;
const MAX_POWERS: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct SplitScaled {
    split: SpectralSplit,
    /// `A₂⁻ᵏ` for `k = 0..K`, with `‖A₂⁻ᴷ‖₂ < NEGLIGIBLE`.
    inv_powers: Vec<Mat>,
}

/// Outcome of one split-coordinate trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaledOutcome {
    Error(f64),
    Singular,
}

impl SplitScaled {
    pub fn new(spec: &SystemSpec, unit_gap: f64) -> Result<Self> {
        let split = spectral::stable_explosive_split(&spec.a0, unit_gap)?;
        if split.p2 == 0 {
            return Err(SysIdError::Regime("split-coordinate trials need an explosive part".into()));
        }
        let a2_inv = linalg::inverse(&split.a2)?;
        let mut inv_powers = vec![linalg::identity(split.p2)];
        loop {
            let last = inv_powers.last().unwrap();
            if linalg::norm2(last) < NEGLIGIBLE {
                break;
            }
            if inv_powers.len() >= MAX_POWERS {
                return Err(SysIdError::Numeric(format!(
                    "A2^-k does not fall below {NEGLIGIBLE:e} within {MAX_POWERS} powers"
                )));
            }
            inv_powers.push(&a2_inv * last);
        }
        Ok(Self { split, inv_powers })
    }

    pub fn split(&self) -> &SpectralSplit {
        &self.split
    }

    fn inv_power(&self, k: usize) -> Option<&Mat> {
        self.inv_powers.get(k)
    }

    /// `A₂⁻ᵏ` by repeated squaring, without the negligibility cutoff.
    fn inv_power_exact(&self, k: usize) -> Mat {
        if let Some(g) = self.inv_powers.get(k) {
            return g.clone();
        }
        let mut base = self.inv_powers[1].clone();
        let mut acc = linalg::identity(self.split.p2);
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            base = &base * &base;
            e >>= 1;
        }
        acc
    }

    /// `‖Â_n − A₀‖₂` for one trajectory drawn from `rng` exactly as
    /// [`crate::dynamics::simulate_with_rng`] draws it.
    pub fn trial(&self, spec: &SystemSpec, n: usize, rng: &mut TrialRng) -> Result<ScaledOutcome> {
        if n == 0 {
            return Err(SysIdError::InvalidInput("horizon n must be at least 1".into()));
        }
        let s = &self.split;
        let (p1, p2) = (s.p1, s.p2);
        let p = p1 + p2;
        let y0 = &s.m * spec.x0.draw(p, rng);
        let mut y1: DVector<f64> = y0.rows(0, p1).into_owned();
        let mut u: DVector<f64> = y0.rows(p1, p2).into_owned();
        let mut v = Mat::zeros(p, p);
        let mut w_cross = Mat::zeros(p, p);
        let mut yhat = DVector::zeros(p);
        for t in 0..n {
            yhat.rows_mut(0, p1).copy_from(&y1);
            match self.inv_power(n - t) {
                Some(g) => yhat.rows_mut(p1, p2).copy_from(&(g * &u)),
                None => yhat.rows_mut(p1, p2).fill(0.0),
            }
            v.ger(1.0, &yhat, &yhat, 1.0);
            let wy = &s.m * spec.noise.sample(rng);
            w_cross.ger(1.0, &wy, &yhat, 1.0);
            let w1 = wy.rows(0, p1);
            y1 = &s.a1 * &y1 + w1;
            if let Some(g) = self.inv_power(t + 1) {
                u += g * wy.rows(p1, p2);
            }
        }
        let (lo, hi) = linalg::sym_eig_extremes(&v);
        if hi <= 0.0 || lo < SINGULAR_REL_TOL * hi {
            return Ok(ScaledOutcome::Singular);
        }
        let v_inv = v.clone().cholesky().map(|c| c.inverse()).map_or_else(|| linalg::inverse(&v), Ok)?;
        let mut e = w_cross * v_inv;
        // Right factor D: the explosive columns scale by A₂⁻ⁿ.
        let tail = e.columns(p1, p2) * self.inv_power_exact(n);
        e.columns_mut(p1, p2).copy_from(&tail);
        let e_x = &s.m_inv * e * &s.m;
        Ok(ScaledOutcome::Error(linalg::norm2(&e_x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{self, InitialState};
    use crate::estimator;
    use crate::noise::{self, NoiseModel};

    #[test]
    fn matches_direct_estimate_at_small_horizon() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.4, -0.3, 1.2]);
        let a0 = linalg::inverse(&m).unwrap() * Mat::from_diagonal(&nalgebra::dvector![0.5, 2.0]) * &m;
        let spec = SystemSpec::new(a0.clone(), NoiseModel::standard_gaussian(2), InitialState::RandomUnit).unwrap();
        let sim = SplitScaled::new(&spec, 1e-6).unwrap();
        for trial in 0..20 {
            let n = 12;
            let mut rng = noise::trial_rng(5, n as u64, trial);
            let traj = dynamics::simulate_with_rng(&spec, n, &mut rng, 5).unwrap();
            let direct = estimator::ols(&traj, n, 0.0).unwrap().with_truth(&a0).error.unwrap();
            let mut rng = noise::trial_rng(5, n as u64, trial);
            let ScaledOutcome::Error(scaled) = sim.trial(&spec, n, &mut rng).unwrap() else {
                panic!("singular")
            };
            assert!((direct - scaled).abs() <= 1e-6 * direct.max(1e-3), "{direct} vs {scaled}");
        }
    }

    #[test]
    fn runs_far_beyond_overflow() {
        let spec = SystemSpec::new(Mat::from_element(1, 1, 2.0), NoiseModel::standard_gaussian(1), InitialState::zero(1)).unwrap();
        let sim = SplitScaled::new(&spec, 1e-6).unwrap();
        let mut rng = noise::trial_rng(1, 0, 0);
        match sim.trial(&spec, 5000, &mut rng).unwrap() {
            ScaledOutcome::Error(e) => assert!(e < 1e-300, "{e}"),
            ScaledOutcome::Singular => panic!("singular"),
        }
    }
}
