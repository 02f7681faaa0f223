use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eta::{eta_series, eta_sum};
use super::BoundOpts;
use crate::dynamics::SystemSpec;
use crate::error::{Result, SysIdError};
use crate::linalg::{self, CMat, Mat};
use crate::noise::{self, TailParams};
use crate::spectral::{self, JordanBlock, JordanForm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiSearchOpts {
    pub samples: usize,
    pub refine_starts: usize,
    pub refine_iters: usize,
    pub seed: u64,
}

impl Default for PsiSearchOpts {
    fn default() -> Self {
        Self {
            samples: 10_000,
            refine_starts: 10,
            refine_iters: 2_000,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiEstimate {
    pub psi: f64,
    /// Smallest objective value found on the ℓ1 sphere (before the
    /// `‖P‖_{2→∞}⁻¹` prefactor).
    pub inf_estimate: f64,
    pub argmin: Vec<f64>,
    pub samples: usize,
    pub regular: bool,
}

/// Two blocks share an eigenvalue if they differ by at most this relative amount.
const SAME_EIG_REL_TOL: f64 = 1e-8;

/// Regularity read off a Jordan form: no explosive eigenvalue owns more than
/// one block.
pub fn jordan_is_regular(jf: &JordanForm) -> bool {
    let exp: Vec<Complex64> = jf
        .blocks
        .iter()
        .filter(|b| b.eigenvalue.norm() > 1.0)
        .map(|b| b.eigenvalue)
        .collect();
    for i in 0..exp.len() {
        for j in i + 1..exp.len() {
            if (exp[i] - exp[j]).norm() <= SAME_EIG_REL_TOL * exp[i].norm() {
                return false;
            }
        }
    }
    true
}

/// Per-entry coefficient vectors of `a ↦ Σ_{i<p} a_{i+1} Λ⁻ⁱ`, restricted to
/// entries that are not identically zero (the upper triangles of the
/// diagonal blocks).
fn entry_coefficients(jf: &JordanForm) -> Result<Vec<Vec<Complex64>>> {
    let p = jf.dim();
    let lam = jf.lambda();
    let lam_inv = linalg::cinverse(&lam)?;
    let mut powers = vec![CMat::identity(p, p)];
    for i in 1..p {
        powers.push(&powers[i - 1] * &lam_inv);
    }
    let mut out = Vec::new();
    let mut off = 0;
    for b in &jf.blocks {
        for r in 0..b.size {
            for c in r..b.size {
                let (rr, cc) = (off + r, off + c);
                out.push(powers.iter().map(|m| m[(rr, cc)]).collect());
            }
        }
        off += b.size;
    }
    Ok(out)
}

/// `max |⟨a, v⟩|` over entry coefficient vectors, divided by `‖a‖₁`.
fn psi_objective(coeffs: &[Vec<Complex64>], a: &[f64]) -> f64 {
    let l1: f64 = a.iter().map(|x| x.abs()).sum();
    if l1 == 0.0 {
        return f64::INFINITY;
    }
    coeffs
        .iter()
        .map(|v| {
            v.iter()
                .zip(a)
                .map(|(z, &x)| z * x)
                .sum::<Complex64>()
                .norm()
        })
        .fold(0.0, f64::max)
        / l1
}

fn dirichlet_point<R: Rng + ?Sized>(p: usize, signs: u64, rng: &mut R) -> Vec<f64> {
    let mut a: Vec<f64> = (0..p).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = a.iter().sum();
    for (i, x) in a.iter_mut().enumerate() {
        *x /= s;
        if (signs >> (i % 64)) & 1 == 1 {
            *x = -*x;
        }
    }
    a
}

fn refine(coeffs: &[Vec<Complex64>], start: Vec<f64>, iters: usize) -> (f64, Vec<f64>) {
    let p = start.len();
    let mut a = start;
    let mut best = psi_objective(coeffs, &a);
    let mut step = 0.1;
    let mut it = 0;
    while it < iters && step > 1e-14 {
        let mut improved = false;
        for i in 0..p {
            for dir in [1.0, -1.0] {
                let mut cand = a.clone();
                cand[i] += dir * step;
                let l1: f64 = cand.iter().map(|x| x.abs()).sum();
                if l1 == 0.0 {
                    continue;
                }
                cand.iter_mut().for_each(|x| *x /= l1);
                let v = psi_objective(coeffs, &cand);
                if v < best {
                    best = v;
                    a = cand;
                    improved = true;
                }
            }
            it += 1;
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, a)
}

/// `ψ(A₀) = ‖P‖_{2→∞}⁻¹ inf_{‖a‖₁=1} g(Σ_{i<p} a_{i+1}Λ⁻ⁱ)`, with `g` the
/// largest entry magnitude (see the crate README for why the largest rather
/// than the smallest nonzero entry). The infimum is estimated from stratified
/// samples (sign patterns × Dirichlet magnitudes) refined by coordinate
/// descent; irregular matrices return 0.
pub fn psi_const(jf: &JordanForm, opts: &PsiSearchOpts) -> Result<PsiEstimate> {
    if jf.min_eig_mag() <= 1.0 {
        return Err(SysIdError::Regime(format!(
            "psi needs an explosive matrix, min |λ| = {}",
            jf.min_eig_mag()
        )));
    }
    let p = jf.dim();
    let regular = jordan_is_regular(jf);
    let coeffs = entry_coefficients(jf)?;
    let n_patterns: u64 = if p >= 63 { u64::MAX } else { 1u64 << p };
    let samples = opts.samples.max(1);
    let chunk = 256;
    let mut scored: Vec<(f64, Vec<f64>)> = (0..samples.div_ceil(chunk))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = noise::trial_rng(opts.seed, 0x9517, c as u64);
            let coeffs = &coeffs;
            (c * chunk..((c + 1) * chunk).min(samples)).map(move |k| {
                let signs = if n_patterns == u64::MAX {
                    rng.random::<u64>()
                } else {
                    k as u64 % n_patterns
                };
                let a = dirichlet_point(p, signs, &mut rng);
                (psi_objective(coeffs, &a), a)
            })
        })
        .collect();
    // Vertices of the ℓ1 sphere are cheap and often competitive.
    for i in 0..p {
        let mut a = vec![0.0; p];
        a[i] = 1.0;
        scored.push((psi_objective(&coeffs, &a), a));
    }
    scored.sort_by(|x, y| x.0.total_cmp(&y.0));
    let starts: Vec<Vec<f64>> = scored.iter().take(opts.refine_starts.max(1)).map(|s| s.1.clone()).collect();
    let refined: Vec<(f64, Vec<f64>)> = starts
        .into_par_iter()
        .map(|a| refine(&coeffs, a, opts.refine_iters))
        .collect();
    let (inf_estimate, argmin) = refined
        .into_iter()
        .chain(std::iter::once(scored[0].clone()))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .expect("nonempty");
    let norm = linalg::cnorm_2_to_inf(&jf.p);
    let psi = if regular { inf_estimate / norm } else { 0.0 };
    Ok(PsiEstimate {
        psi,
        inf_estimate,
        argmin,
        samples,
        regular,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOpts {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarloOpts {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 0x0f1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiEstimate {
    pub phi_hat: f64,
    /// 95% order-statistic confidence band for the quantile.
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Standard error implied by the band.
    pub std_err: f64,
    pub truncation: usize,
    pub zeta_bar: f64,
    pub samples: usize,
}

/// Upper tail quantile scale `(c₂ log x)^{1/α}` with the bounded-noise case.
fn tail_q(tail: &TailParams, x: f64) -> f64 {
    tail.quantile_scale(x)
}

/// First index from which `t ↦ (c₂ log(k t²))^{1/α}` has nonincreasing
/// successive ratios (needs `k t² > 1`).
fn log_weight_regular_from(k: f64) -> usize {
    if k > 1.0 {
        1
    } else {
        (1.0 / k).sqrt().ceil() as usize + 1
    }
}

/// `ζ̄(A₀,δ) = ‖x(0)‖₂ + ‖P⁻¹‖_{∞→2}‖P‖∞ Σ_{t≥1} η_t(Λ⁻¹)(c₂ log(2c₁pt²/δ))^{1/α}`.
pub fn zeta_bar(spec: &SystemSpec, jf: &JordanForm, delta: f64, tail_cutoff: f64) -> Result<f64> {
    let tail = spec.noise.tail;
    let k = 2.0 * tail.c1 * spec.dim() as f64 / delta;
    let s = eta_series(
        &jf.inverse_blocks(),
        1,
        |t| tail_q(&tail, k * (t * t) as f64),
        log_weight_regular_from(k),
        tail_cutoff,
    )?;
    Ok(spec.x0.norm2() + jf.transfer_factor() * s.value)
}

/// `δ`-quantile of `min_i |(P z_T)_i|` over draws of the truncated series
/// `z_T = x(0) + Σ_{i≤T} A₀⁻ⁱ w(i)`. `T` is the first index at which
/// `‖P‖∞ Σ_{i>T} η_i(Λ⁻¹) b_1(δ/(20i²)) < 1e−6`, so the neglected tail is
/// below `1e−6` in every coordinate with probability at least `1 − δ/10`.
pub fn phi_quantile(spec: &SystemSpec, delta: f64, mc: &MonteCarloOpts, tail_cutoff: f64) -> Result<PhiEstimate> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SysIdError::InvalidInput(format!("delta must lie in (0,1), got {delta}")));
    }
    let jf = spec.jordan_form()?;
    if jf.min_eig_mag() <= 1.0 {
        return Err(SysIdError::Regime(format!(
            "phi needs an explosive matrix, min |λ| = {}",
            jf.min_eig_mag()
        )));
    }
    let p = spec.dim();
    let cov = spec.noise.covariance();
    let reach = spectral::reachability_gramian(&spec.a0, &cov)?;
    if !reach.is_reachable() {
        log::warn!("[A0, C] is not reachable; phi may be zero");
    }
    let tail = spec.noise.tail;
    let p_inf = linalg::cnorm_inf(&jf.p);
    let k = 20.0 * tail.c1 * p as f64 / delta;
    let truncation = eta_series(
        &jf.inverse_blocks(),
        1,
        |t| tail_q(&tail, k * (t * t) as f64),
        log_weight_regular_from(k),
        1e-6 / p_inf.max(f64::MIN_POSITIVE),
    )?
    .truncation;
    let zeta = zeta_bar(spec, &jf, delta, tail_cutoff)?;

    let a_inv = linalg::inverse(&spec.a0)?;
    let samples = mc.samples.max(1);
    let chunk = 1024;
    let pm = jf.p.clone();
    let mut vals: Vec<f64> = (0..samples.div_ceil(chunk))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = noise::trial_rng(mc.seed, 0xf1, c as u64);
            let a_inv = &a_inv;
            let pm = &pm;
            (c * chunk..((c + 1) * chunk).min(samples)).map(move |_| {
                let x0 = spec.x0.draw(p, &mut rng);
                let ws: Vec<DVector<f64>> = (0..truncation).map(|_| spec.noise.sample(&mut rng)).collect();
                let mut s = DVector::zeros(p);
                for w in ws.iter().rev() {
                    s = a_inv * (w + &s);
                }
                let z = x0 + s;
                let zc = z.map(|v| Complex64::new(v, 0.0));
                let pz = pm * zc;
                pz.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min)
            })
        })
        .collect();
    vals.sort_by(f64::total_cmp);
    let m = samples as f64;
    let k = ((delta * m).ceil() as usize).clamp(1, samples);
    let half = 1.96 * (m * delta * (1.0 - delta)).sqrt();
    let lo_idx = ((k as f64 - half).floor().max(1.0) as usize).min(samples);
    let hi_idx = ((k as f64 + half).ceil() as usize).clamp(1, samples);
    let (ci_lo, ci_hi) = (vals[lo_idx - 1], vals[hi_idx - 1]);
    Ok(PhiEstimate {
        phi_hat: vals[k - 1],
        ci_lo,
        ci_hi,
        std_err: (ci_hi - ci_lo) / (2.0 * 1.96),
        truncation,
        zeta_bar: zeta,
        samples,
    })
}

/// Lower bound on the slope `c(A₀)` in `φ(A₀,δ) ≥ c(A₀)δ` for Gaussian
/// noise, `(π λmin(K(C)) / (2 λmax(A₀ⁱA₀′ⁱ)))^{1/2} p⁻¹ min_i ‖P_i‖₂`,
/// evaluated at `i = p`.
pub fn gaussian_phi_slope(spec: &SystemSpec) -> Result<f64> {
    let jf = spec.jordan_form()?;
    let p = spec.dim();
    let reach = spectral::reachability_gramian(&spec.a0, &spec.noise.covariance())?;
    let ai = (0..p).fold(linalg::identity(p), |acc, _| &acc * &spec.a0);
    let (_, top) = linalg::sym_eig_extremes(&(&ai * ai.transpose()));
    let row_min = jf
        .p
        .row_iter()
        .map(|r| r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min);
    Ok((std::f64::consts::PI * reach.lambda_min / (2.0 * top)).sqrt() / p as f64 * row_min)
}

/// Constants of the explosive-regime prescription.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplosiveConstants {
    pub psi: PsiEstimate,
    pub phi: PhiEstimate,
    pub eta_inv: f64,
    pub eta_inv_transpose: f64,
    pub transfer: f64,
    pub transfer_transpose: f64,
    pub zeta_const: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub mu: usize,
    pub lambda_min: f64,
    pub n1: f64,
    pub n2: f64,
}

fn zeta_const(spec: &SystemSpec, jf: &JordanForm, eta_inv: f64, tail_cutoff: f64) -> Result<f64> {
    let tail = spec.noise.tail;
    let k = 2.0 * tail.c1 * spec.dim() as f64;
    let s = eta_series(
        &jf.inverse_blocks(),
        1,
        |t| tail_q(&tail, k * (t * t) as f64),
        log_weight_regular_from(k),
        tail_cutoff,
    )?;
    Ok(eta_inv.powi(2) * (spec.x0.norm2() + jf.transfer_factor() * s.value).powi(2))
}

/// `ψ`, `φ̂`, `ζ̄`, `ρ₁`, `ρ₂`, `n₁` and `n₂` for an explosive system. `n₁` and
/// `n₂` are clamped at zero when their logarithms are negative.
pub fn explosive_constants(spec: &SystemSpec, delta: f64, opts: &BoundOpts) -> Result<ExplosiveConstants> {
    let jf = spec.jordan_form()?;
    let lambda_min = jf.min_eig_mag();
    if lambda_min <= 1.0 {
        return Err(SysIdError::Regime(format!(
            "explosive constants need min |λ| > 1, got {lambda_min}"
        )));
    }
    let p = spec.dim() as f64;
    let tail = spec.noise.tail;
    let psi = psi_const(&jf, &opts.psi)?;
    let phi = phi_quantile(spec, delta, &opts.mc, opts.tail_cutoff)?;
    if psi.psi <= 0.0 || phi.phi_hat <= 0.0 {
        return Err(SysIdError::Inconsistent(format!(
            "psi = {:e}, phi = {:e}",
            psi.psi, phi.phi_hat
        )));
    }
    let inv_sum = eta_sum(&jf.inverse_blocks(), opts.tail_cutoff)?.value;
    let transfer = jf.transfer_factor();
    let transfer_transpose = jf.transpose_transfer_factor();
    let eta_inv = transfer * inv_sum;
    let eta_inv_transpose = transfer_transpose * inv_sum;
    let zc = zeta_const(spec, &jf, eta_inv, opts.tail_cutoff)?;
    let p_t_inf2 = linalg::cnorm_inf_to_2(&jf.p.transpose());
    let p_t_inv_inf = linalg::cnorm_inf(&jf.p_inv.transpose());
    let rho1 = 2.0
        * (transfer * eta_inv_transpose.powi(2) + eta_inv * p_t_inf2.powi(2) * p_t_inv_inf.powi(2))
        * (2.0 * lambda_min).exp();
    let rho2 = 2.0 * eta_inv_transpose.powi(2) * (2.0 + eta_inv) * transfer * lambda_min.exp();
    let mu = jf.max_block_size();
    let six_over_alpha = if tail.is_bounded() { 0.0 } else { 6.0 / tail.alpha };
    let tail_term = tail_q(&tail, tail.c1 * p);
    let n1_raw = (3.0 * (rho1 * rho2 * zc.powi(3) * tail_term).ln() + 12.0 * mu as f64 + six_over_alpha) / lambda_min;
    let n1 = if n1_raw.is_nan() { 0.0 } else { n1_raw.max(0.0) };
    let n2_raw = n1
        + 3.0 / lambda_min * (2.0 * p * zc * eta_inv / psi.psi).ln()
        + 3.0 / lambda_min * (transfer * lambda_min.exp()).ln();
    let n2 = n2_raw.max(0.0);
    Ok(ExplosiveConstants {
        psi,
        phi,
        eta_inv,
        eta_inv_transpose,
        transfer,
        transfer_transpose,
        zeta_const: zc,
        rho1,
        rho2,
        mu,
        lambda_min,
        n1,
        n2,
    })
}

/// Left side coefficient `3(α+4)/(α log λmin)`, `3/log λmin` when bounded.
fn explosive_rate_coef(tail: &TailParams, lambda_min: f64) -> f64 {
    let r = if tail.is_bounded() {
        1.0
    } else {
        (tail.alpha + 4.0) / tail.alpha
    };
    3.0 * r / lambda_min.ln()
}

/// `n ≥ 3(α+4)/(α log λmin) · log((−log δ)/(ε φ̂)) ∨ n₂`, minimal integer `n ≥ 1`.
pub fn explosive_sample_size(spec: &SystemSpec, epsilon: f64, delta: f64, opts: &BoundOpts) -> Result<(u64, ExplosiveConstants)> {
    super::check_eps_delta(epsilon, delta)?;
    let c = explosive_constants(spec, delta, opts)?;
    let n = explosive_prescription(&spec.noise.tail, c.lambda_min, epsilon, delta, c.phi.phi_hat, c.n2);
    Ok((n, c))
}

pub(crate) fn explosive_prescription(tail: &TailParams, lambda_min: f64, epsilon: f64, delta: f64, phi: f64, n2: f64) -> u64 {
    let lhs = explosive_rate_coef(tail, lambda_min) * ((-delta.ln()) / (epsilon * phi)).ln();
    lhs.max(n2).ceil().max(1.0) as u64
}

/// Blocks of `jf` whose eigenvalues lie inside (`stable = true`) or outside
/// the unit circle.
pub(crate) fn select_blocks(jf: &JordanForm, stable: bool) -> Vec<(usize, JordanBlock)> {
    let mut off = 0;
    let mut out = Vec::new();
    for b in &jf.blocks {
        if (b.eigenvalue.norm() < 1.0) == stable {
            out.push((off, *b));
        }
        off += b.size;
    }
    out
}

/// Exact Jordan form of the restriction `M A₀ M⁻¹` to one diagonal block,
/// derived from the exact form of `A₀`: the generalized eigenvectors `V₂` of
/// the selected blocks satisfy `A₂ G = G Λ₂` with `G = (M V₂)` restricted to
/// the block rows.
pub(crate) fn restrict_jordan(jf: &JordanForm, m: &Mat, rows: std::ops::Range<usize>, stable: bool) -> Result<JordanForm> {
    let sel = select_blocks(jf, stable);
    let dim: usize = sel.iter().map(|(_, b)| b.size).sum();
    if dim != rows.len() {
        return Err(SysIdError::Numeric("Jordan blocks do not match the split".into()));
    }
    let v = &jf.p_inv;
    let mut v_sel = CMat::zeros(jf.dim(), dim);
    let mut col = 0;
    for (off, b) in &sel {
        for k in 0..b.size {
            v_sel.set_column(col, &v.column(off + k));
            col += 1;
        }
    }
    let mv = linalg::to_complex(m) * v_sel;
    let g = mv.rows(rows.start, rows.len()).into_owned();
    let p_sub = linalg::cinverse(&g)?;
    JordanForm::from_similarity(sel.into_iter().map(|(_, b)| b).collect(), p_sub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::InitialState;
    use crate::noise::NoiseModel;

    fn exact(blocks: Vec<JordanBlock>) -> JordanForm {
        let p: usize = blocks.iter().map(|b| b.size).sum();
        JordanForm::from_similarity(blocks, CMat::identity(p, p)).unwrap()
    }

    #[test]
    fn scalar_psi_is_one() {
        let est = psi_const(&exact(vec![JordanBlock::real(2.0, 1)]), &PsiSearchOpts::default()).unwrap();
        assert!((est.psi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn irregular_psi_is_zero() {
        let jf = exact(vec![JordanBlock::real(1.5, 1), JordanBlock::real(1.5, 1)]);
        let est = psi_const(&jf, &PsiSearchOpts::default()).unwrap();
        assert!(!est.regular);
        assert_eq!(est.psi, 0.0);
    }

    #[test]
    fn psi_rejects_stable() {
        let jf = exact(vec![JordanBlock::real(0.5, 1)]);
        assert!(matches!(psi_const(&jf, &PsiSearchOpts::default()), Err(SysIdError::Regime(_))));
    }

    #[test]
    fn deterministic_phi() {
        let spec = SystemSpec::new(Mat::from_element(1, 1, 2.0), NoiseModel::zero(1), InitialState::Fixed(vec![1.0])).unwrap();
        for delta in [0.01, 0.1, 0.5] {
            let mc = MonteCarloOpts { samples: 200, seed: 1 };
            let est = phi_quantile(&spec, delta, &mc, 1e-12).unwrap();
            assert!((est.phi_hat - 1.0).abs() < 1e-15);
        }
    }
}
