use serde::{Deserialize, Serialize};

use super::eta::lyap_solve;
use super::explosive::{explosive_constants, restrict_jordan, ExplosiveConstants};
use super::stable::{min_n_log_power, stable_constants, StableConstants};
use super::BoundOpts;
use crate::dynamics::SystemSpec;
use crate::error::{Result, SysIdError};
use crate::linalg::{self, Mat};
use crate::noise::NoiseModel;
use crate::spectral::{self, SpectralSplit};

/// Stable subsystem `(A₁, C₁₁)` and explosive subsystem `(A₂, C₂₂)` of
/// `M A₀ M⁻¹ = diag(A₁, A₂)`, with noise `M w` and initial state `M x(0)`
/// restricted to the corresponding rows.
pub fn split_subsystems(spec: &SystemSpec, split: &SpectralSplit) -> Result<(SystemSpec, SystemSpec)> {
    let p1 = split.p1;
    let p2 = split.p2;
    let m_top = split.m.rows(0, p1).into_owned();
    let m_bot = split.m.rows(p1, p2).into_owned();
    let sub = |a: &Mat, rows: &Mat| -> Result<SystemSpec> {
        let noise = NoiseModel::new(spec.noise.kind, rows * &spec.noise.c_sqrt)?;
        SystemSpec::new(a.clone(), noise, spec.x0.mapped(rows))
    };
    let mut s1 = sub(&split.a1, &m_top)?;
    let mut s2 = sub(&split.a2, &m_bot)?;
    if let Some(jf) = &spec.jordan {
        s1 = s1.with_jordan(restrict_jordan(jf, &split.m, 0..p1, true)?)?;
        s2 = s2.with_jordan(restrict_jordan(jf, &split.m, p1..p1 + p2, false)?)?;
    }
    Ok((s1, s2))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneralConstants {
    pub split: SpectralSplit,
    pub k1_min: f64,
    pub k1_max: f64,
    pub rho0: f64,
    pub rho3: f64,
    pub c3_const: f64,
    pub n3: f64,
    pub stable: StableConstants,
    pub explosive: ExplosiveConstants,
}

/// `ρ₀ = 1/2 − (1/2)(1 − λmin(K₁)/(9λmax(K₁)))^{1/2}`.
pub fn rho0_from(k_min: f64, k_max: f64) -> f64 {
    0.5 - 0.5 * (1.0 - k_min / (9.0 * k_max)).sqrt()
}

/// `ρ₀, ρ₃, c₃, n₃` with `K₁ = Σ_t A₁ᵗC₁₁A₁′ᵗ`,
/// `ρ₃ = 4(4λmin(K₁)⁻¹+3)^{1/2}‖M‖₂/(λmin(K₁)^{1/2}ρ₀)`,
/// `c₃ = 72p(‖M‖₂∨1)⁴ρ₃²c₂(A₁,C₁₁) + 18(α+4)/(α log λmin(A₂))`,
/// `n₃ = 12(n₂(A₂,C₂₂) + log(ρ₃‖M‖∞ ∨ 1))`.
pub fn general_constants(spec: &SystemSpec, delta: f64, opts: &BoundOpts) -> Result<GeneralConstants> {
    let split = spectral::stable_explosive_split(&spec.a0, opts.unit_gap)?;
    if split.is_degenerate() {
        return Err(SysIdError::Regime(format!(
            "split is degenerate (p1 = {}, p2 = {}); use the pure stable or explosive bounds",
            split.p1, split.p2
        )));
    }
    if !spectral::regularity_check(&spec.a0, opts.unit_gap)? {
        return Err(SysIdError::Inconsistent("A0 is not regular".into()));
    }
    let (s1, s2) = split_subsystems(spec, &split)?;
    let stable = stable_constants(&s1, opts)?;
    let explosive = explosive_constants(&s2, delta, opts)?;
    let k1 = lyap_solve(&s1.a0, &s1.noise.covariance())?;
    let (k1_min, k1_max) = linalg::sym_eig_extremes(&k1);
    if k1_min <= 0.0 {
        return Err(SysIdError::Inconsistent("K1 is singular".into()));
    }
    let rho0 = rho0_from(k1_min, k1_max);
    let m2 = linalg::norm2(&split.m);
    let rho3 = 4.0 * (4.0 / k1_min + 3.0).sqrt() * m2 / (k1_min.sqrt() * rho0);
    let p = spec.dim() as f64;
    let tail = spec.noise.tail;
    let ratio = if tail.is_bounded() {
        1.0
    } else {
        (tail.alpha + 4.0) / tail.alpha
    };
    let c3_const = 72.0 * p * m2.max(1.0).powi(4) * rho3 * rho3 * stable.c2_const
        + 18.0 * ratio / explosive.lambda_min.ln();
    let n3 = 12.0 * (explosive.n2 + (rho3 * linalg::norm_inf(&split.m)).max(1.0).ln());
    Ok(GeneralConstants {
        split,
        k1_min,
        k1_max,
        rho0,
        rho3,
        c3_const,
        n3,
        stable,
        explosive,
    })
}

/// Smallest `n` with `n/(log n)^{4/α} ≥ (c₃/ε²)((−log δ)^{1+4/α} − log φ(A₂,δ)) ∨ n₃`.
pub fn general_prescription(c: &GeneralConstants, k: f64, epsilon: f64, delta: f64) -> Result<u64> {
    let phi = c.explosive.phi.phi_hat;
    let rhs = (c.c3_const / (epsilon * epsilon) * ((-delta.ln()).powf(1.0 + k) - phi.ln())).max(c.n3);
    min_n_log_power(k, rhs)
}
