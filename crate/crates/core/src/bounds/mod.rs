//! Finite-time constants and sample-size prescriptions for the stable,
//! explosive and mixed regimes, and matrix concentration tail bounds.
//!
//! Infinite series are truncated with explicit geometric tail bounds added
//! back, so every reported constant keeps its upper-bound meaning.

mod concentration;
mod eta;
mod explosive;
mod general;
mod stable;

pub use concentration::{azuma_bound, bernstein_bound};
pub use eta::{eta_const, eta_const_inverse, eta_series, eta_sum, eta_t, eta_t_block, lyap_solve, Direction, SeriesSum, DEFAULT_TAIL_CUTOFF};
pub use explosive::{
    explosive_constants, explosive_sample_size, gaussian_phi_slope, jordan_is_regular, phi_quantile, psi_const, zeta_bar,
    ExplosiveConstants, MonteCarloOpts, PhiEstimate, PsiEstimate, PsiSearchOpts,
};
pub use general::{general_constants, general_prescription, rho0_from, split_subsystems, GeneralConstants};
pub use stable::{min_n_log_power, stable_constants, stable_sample_size, StableConstants};

use serde::{Deserialize, Serialize};

use crate::dynamics::SystemSpec;
use crate::error::{Result, SysIdError};
use crate::linalg::{self, Mat};
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundOpts {
    pub tail_cutoff: f64,
    pub unit_gap: f64,
    pub psi: PsiSearchOpts,
    pub mc: MonteCarloOpts,
}

impl Default for BoundOpts {
    fn default() -> Self {
        Self {
            tail_cutoff: DEFAULT_TAIL_CUTOFF,
            unit_gap: spectral::DEFAULT_UNIT_GAP,
            psi: PsiSearchOpts::default(),
            mc: MonteCarloOpts::default(),
        }
    }
}

pub(crate) fn check_eps_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0 && delta > 0.0 && delta < 1.0) {
        return Err(SysIdError::InvalidInput(format!(
            "epsilon and delta must lie in (0,1), got {epsilon}, {delta}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Stable,
    Explosive,
    General,
}

/// Spectral regime of `A₀`; unit roots are rejected.
pub fn classify(a0: &Mat, unit_gap: f64) -> Result<Regime> {
    let eigs = linalg::eigenvalues(a0)?;
    spectral::check_unit_gap(&eigs, unit_gap)?;
    let stable = eigs.iter().filter(|z| z.norm() < 1.0).count();
    Ok(if stable == eigs.len() {
        Regime::Stable
    } else if stable == 0 {
        Regime::Explosive
    } else {
        Regime::General
    })
}

/// Every constant of the applicable prescription. Fields that do not apply
/// to the regime are omitted from the serialized form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub regime: Regime,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_transpose: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lyap_matrix: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1_const: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c2_const: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c3_const: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n3: Option<f64>,
    pub sample_size: u64,
}

impl BoundReport {
    fn empty(regime: Regime, sample_size: u64) -> Self {
        Self {
            regime,
            eta: None,
            eta_transpose: None,
            k_min: None,
            lyap_matrix: None,
            c1_const: None,
            c2_const: None,
            psi: None,
            phi_hat: None,
            zeta_bar: None,
            n1: None,
            n2: None,
            rho0: None,
            rho3: None,
            c3_const: None,
            n3: None,
            sample_size,
        }
    }

    fn fill_stable(&mut self, c: &StableConstants) {
        self.eta = Some(c.eta);
        self.eta_transpose = Some(c.eta_transpose);
        self.k_min = Some(c.k_min);
        self.lyap_matrix = Some(linalg::to_rows(&c.lyap_matrix));
        self.c1_const = Some(c.c1_const);
        self.c2_const = Some(c.c2_const);
    }

    fn fill_explosive(&mut self, c: &ExplosiveConstants) {
        self.psi = Some(c.psi.psi);
        self.phi_hat = Some(c.phi.phi_hat);
        self.zeta_bar = Some(c.phi.zeta_bar);
        self.n1 = Some(c.n1);
        self.n2 = Some(c.n2);
    }
}

/// Sample size for the mixed regime. Systems whose split is degenerate are
/// routed to the pure stable or explosive prescription.
pub fn general_sample_size(spec: &SystemSpec, epsilon: f64, delta: f64, opts: &BoundOpts) -> Result<u64> {
    Ok(bound_report(spec, epsilon, delta, opts)?.sample_size)
}

/// Computes the prescription appropriate to the regime of `A₀`.
pub fn bound_report(spec: &SystemSpec, epsilon: f64, delta: f64, opts: &BoundOpts) -> Result<BoundReport> {
    check_eps_delta(epsilon, delta)?;
    match classify(&spec.a0, opts.unit_gap)? {
        Regime::Stable => {
            let (n, c) = stable_sample_size(spec, epsilon, delta, opts)?;
            let mut r = BoundReport::empty(Regime::Stable, n);
            r.fill_stable(&c);
            Ok(r)
        }
        Regime::Explosive => {
            let (n, c) = explosive_sample_size(spec, epsilon, delta, opts)?;
            let mut r = BoundReport::empty(Regime::Explosive, n);
            r.fill_explosive(&c);
            Ok(r)
        }
        Regime::General => {
            let c = general_constants(spec, delta, opts)?;
            let n = general_prescription(&c, spec.noise.tail.four_over_alpha(), epsilon, delta)?;
            let mut r = BoundReport::empty(Regime::General, n);
            r.fill_stable(&c.stable);
            r.fill_explosive(&c.explosive);
            r.rho0 = Some(c.rho0);
            r.rho3 = Some(c.rho3);
            r.c3_const = Some(c.c3_const);
            r.n3 = Some(c.n3);
            Ok(r)
        }
    }
}
