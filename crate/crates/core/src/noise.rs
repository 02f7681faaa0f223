//! Noise processes satisfying the sub-Weibull tail condition
//! `P(|wᵢ| > y) ≤ c₁ exp(−y^α / c₂)`, empirical tail checks, and the
//! per-trial RNG streams used throughout the crate.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Result, SysIdError};
use crate::linalg::{self, Mat};

pub type TrialRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(master_seed, n, trial)`. The stream id depends
/// only on the triple, so results do not depend on scheduling order.
pub fn trial_rng(master_seed: u64, n: u64, trial: u64) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(splitmix(splitmix(n) ^ trial.rotate_left(32)));
    rng
}

/// Tail constants `(c₁, c₂, α)`; `α = +∞` denotes noise bounded by `bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailParams {
    pub c1: f64,
    pub c2: f64,
    #[serde(with = "alpha_serde")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

// JSON has no infinity; α = +∞ is written as the string "inf".
mod alpha_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(a: &f64, s: S) -> Result<S::Ok, S::Error> {
        if a.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*a)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) if s == "inf" || s == "+inf" || s == "infinity" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid alpha {s:?}"))),
        }
    }
}

impl TailParams {
    pub fn new(c1: f64, c2: f64, alpha: f64) -> Result<Self> {
        let t = TailParams { c1, c2, alpha, bound: None };
        t.validate()?;
        Ok(t)
    }

    pub fn bounded(bound: f64) -> Result<Self> {
        let t = TailParams {
            c1: 1.0,
            c2: 1.0,
            alpha: f64::INFINITY,
            bound: Some(bound),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn is_bounded(&self) -> bool {
        self.alpha.is_infinite()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c1 > 0.0 && self.c2 > 0.0 && self.alpha > 0.0 && self.c1.is_finite() && self.c2.is_finite();
        if !ok {
            return Err(SysIdError::InvalidInput(format!(
                "tail parameters must be positive: c1={}, c2={}, alpha={}",
                self.c1, self.c2, self.alpha
            )));
        }
        if self.is_bounded() && !self.bound.is_some_and(|b| b > 0.0 && b.is_finite()) {
            return Err(SysIdError::InvalidInput(
                "alpha = inf requires a positive finite bound".into(),
            ));
        }
        Ok(())
    }

    /// `4/α`, zero in the bounded case.
    pub fn four_over_alpha(&self) -> f64 {
        if self.is_bounded() {
            0.0
        } else {
            4.0 / self.alpha
        }
    }

    /// Right-hand side `c₁ exp(−y^α/c₂)` (indicator of `y < B` when bounded).
    pub fn tail_bound(&self, y: f64) -> f64 {
        if self.is_bounded() {
            if y < self.bound.unwrap_or(0.0) {
                1.0
            } else {
                0.0
            }
        } else {
            self.c1 * (-y.powf(self.alpha) / self.c2).exp()
        }
    }

    /// `(c₂ log x)^{1/α}` for `x > 1`, `B` when bounded, 0 when `x ≤ 1`.
    pub fn quantile_scale(&self, x: f64) -> f64 {
        if self.is_bounded() {
            return self.bound.unwrap_or(0.0);
        }
        if x <= 1.0 {
            return 0.0;
        }
        (self.c2 * x.ln()).powf(1.0 / self.alpha)
    }
}

/// `b_n(δ) = (c₂ log(c₁np/δ))^{1/α}`, a bound on `max_{t≤n} ‖w(t)‖∞` holding
/// with probability at least `1 − δ`.
pub fn noise_sup_bound(n: usize, delta: f64, p: usize, tail: &TailParams) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) || n == 0 {
        return Err(SysIdError::InvalidInput(format!(
            "noise_sup_bound needs n >= 1 and delta in (0,1), got n={n}, delta={delta}"
        )));
    }
    if tail.is_bounded() {
        return Ok(tail.bound.unwrap_or(0.0));
    }
    let x = tail.c1 * n as f64 * p as f64 / delta;
    if x <= 1.0 {
        log::warn!("c1*n*p/delta = {x} <= 1: sup bound is vacuous, returning 0");
        return Ok(0.0);
    }
    Ok(tail.quantile_scale(x))
}

/// Marginal family of the unshaped draws `u`; the process is `w = C_sqrt·u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Standard normal coordinates.
    Gaussian,
    /// `s·(c₂E)^{1/α}`, `s` a random sign and `E ~ Exp(1)`; the tail
    /// `exp(−y^α/c₂)` holds with equality.
    WeibullSymmetric { alpha: f64, c2: f64 },
    /// Uniform on `[−B, B]`.
    UniformBounded { bound: f64 },
}

impl NoiseKind {
    fn base_tail(&self) -> Result<TailParams> {
        match *self {
            NoiseKind::Gaussian => TailParams::new(2.0, 2.0, 2.0),
            NoiseKind::WeibullSymmetric { alpha, c2 } => TailParams::new(1.0, c2, alpha),
            NoiseKind::UniformBounded { bound } => TailParams::bounded(bound),
        }
    }

    /// Variance of one unshaped coordinate.
    pub fn base_variance(&self) -> f64 {
        match *self {
            NoiseKind::Gaussian => 1.0,
            NoiseKind::WeibullSymmetric { alpha, c2 } => c2.powf(2.0 / alpha) * gamma(1.0 + 2.0 / alpha),
            NoiseKind::UniformBounded { bound } => bound * bound / 3.0,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseKind::Gaussian => StandardNormal.sample(rng),
            NoiseKind::WeibullSymmetric { alpha, c2 } => {
                let e: f64 = Exp1.sample(rng);
                let mag = (c2 * e).powf(1.0 / alpha);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
            NoiseKind::UniformBounded { bound } => rng.random_range(-bound..=bound),
        }
    }
}

/// Noise process `w = C_sqrt·u` with i.i.d. coordinates `u_j` of the given
/// kind. `C_sqrt` is `p×q`; it need not be square, which lets a subsystem
/// keep the shaping rows of the full process. `tail` holds the
/// per-coordinate constants of `w` after shaping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub c_sqrt: Mat,
    pub tail: TailParams,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, c_sqrt: Mat) -> Result<Self> {
        if c_sqrt.nrows() == 0 || c_sqrt.ncols() == 0 {
            return Err(SysIdError::InvalidInput("C_sqrt must be nonempty".into()));
        }
        if c_sqrt.iter().any(|x| !x.is_finite()) {
            return Err(SysIdError::InvalidInput("C_sqrt has non-finite entries".into()));
        }
        let tail = shaped_tail(&kind, &c_sqrt)?;
        Ok(NoiseModel { kind, c_sqrt, tail })
    }

    pub fn gaussian(c_sqrt: Mat) -> Result<Self> {
        Self::new(NoiseKind::Gaussian, c_sqrt)
    }

    /// Standard Gaussian noise, `C = I_p`.
    pub fn standard_gaussian(p: usize) -> Self {
        Self::gaussian(linalg::identity(p)).expect("identity is a valid C_sqrt")
    }

    /// Noiseless model (`C = 0`).
    pub fn zero(p: usize) -> Self {
        Self::gaussian(Mat::zeros(p, p)).expect("zero is a valid C_sqrt")
    }

    pub fn dim(&self) -> usize {
        self.c_sqrt.nrows()
    }

    /// `C = σ²·C_sqrt·C_sqrt′` where `σ²` is the variance of one unshaped
    /// coordinate.
    pub fn covariance(&self) -> Mat {
        &self.c_sqrt * self.c_sqrt.transpose() * self.kind.base_variance()
    }

    pub fn is_zero(&self) -> bool {
        self.c_sqrt.iter().all(|&x| x == 0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u = DVector::from_fn(self.c_sqrt.ncols(), |_, _| self.kind.draw(rng));
        &self.c_sqrt * u
    }
}

pub fn sample_noise<R: Rng + ?Sized>(model: &NoiseModel, rng: &mut R) -> DVector<f64> {
    model.sample(rng)
}

/// Conservative tail constants for coordinates of `S·u`. Each `w_i` is a sum
/// of at most `k` (row nonzeros) terms bounded by `‖S_i‖₁ max_j |u_j|`, so
/// `c₁ → k·c₁` and `c₂ → ‖S‖∞^α c₂`. Gaussian coordinates stay Gaussian and
/// get the exact constants `(2, 2·max_i C_ii, 2)`.
fn shaped_tail(kind: &NoiseKind, s: &Mat) -> Result<TailParams> {
    let base = kind.base_tail()?;
    let row_l1 = linalg::norm_inf(s);
    if row_l1 == 0.0 {
        return Ok(base);
    }
    match kind {
        NoiseKind::Gaussian => {
            let c = s * s.transpose();
            let max_var = (0..c.nrows()).map(|i| c[(i, i)]).fold(0.0, f64::max);
            TailParams::new(2.0, 2.0 * max_var, 2.0)
        }
        NoiseKind::UniformBounded { bound } => TailParams::bounded(bound * row_l1),
        NoiseKind::WeibullSymmetric { alpha, .. } => {
            let nnz = s
                .row_iter()
                .map(|r| r.iter().filter(|&&x| x != 0.0).count())
                .max()
                .unwrap_or(1);
            TailParams::new(base.c1 * nnz as f64, base.c2 * row_l1.powf(*alpha), *alpha)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailCheck {
    pub coord: usize,
    pub y: f64,
    pub empirical: f64,
    pub bound: f64,
    pub std_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailReport {
    pub samples: usize,
    pub checks: Vec<TailCheck>,
    pub pass: bool,
}

/// Compares empirical exceedance frequencies of every coordinate against
/// `c₁exp(−y^α/c₂)`, allowing 3 binomial standard errors.
pub fn verify_tail(samples: &[DVector<f64>], tail: &TailParams, grid: &[f64]) -> Result<TailReport> {
    if samples.is_empty() {
        return Err(SysIdError::InvalidInput("verify_tail needs samples".into()));
    }
    let p = samples[0].len();
    if samples.iter().any(|s| s.len() != p) {
        return Err(SysIdError::InvalidInput("samples have inconsistent dimensions".into()));
    }
    let m = samples.len() as f64;
    let mut checks = Vec::with_capacity(p * grid.len());
    for coord in 0..p {
        for &y in grid {
            let hits = samples.iter().filter(|s| s[coord].abs() > y).count();
            let empirical = hits as f64 / m;
            let bound = tail.tail_bound(y);
            let q = bound.clamp(0.0, 1.0);
            let std_err = (q * (1.0 - q) / m).sqrt();
            checks.push(TailCheck {
                coord,
                y,
                empirical,
                bound,
                std_err,
                pass: empirical <= bound + 3.0 * std_err,
            });
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(TailReport {
        samples: samples.len(),
        checks,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sup_bound_examples() {
        let t = TailParams::new(1.0, 1.0, 2.0).unwrap();
        let b = noise_sup_bound(1, (-1.0f64).exp(), 1, &t).unwrap();
        assert!((b - 1.0).abs() < 1e-12);

        let t = TailParams::bounded(3.0).unwrap();
        assert_eq!(noise_sup_bound(10, 0.5, 2, &t).unwrap(), 3.0);
        assert_eq!(noise_sup_bound(1000, 0.01, 7, &t).unwrap(), 3.0);

        let t = TailParams::new(2.0, 2.0, 1.0).unwrap();
        let b = noise_sup_bound(100, 0.05, 4, &t).unwrap();
        assert!((b - 19.3607).abs() < 1e-3, "{b}");
    }

    #[test]
    fn sup_bound_vacuous_is_zero() {
        let t = TailParams::new(0.1, 1.0, 2.0).unwrap();
        assert_eq!(noise_sup_bound(1, 0.5, 1, &t).unwrap(), 0.0);
    }

    #[test]
    fn invalid_tail_params() {
        assert!(TailParams::new(0.0, 1.0, 2.0).is_err());
        assert!(TailParams::new(1.0, 1.0, f64::INFINITY).is_err());
        assert!(TailParams::bounded(-1.0).is_err());
    }

    #[test]
    fn zero_covariance_gives_zero_draws() {
        let m = NoiseModel::zero(3);
        let mut rng = trial_rng(1, 0, 0);
        for _ in 0..10 {
            assert_eq!(m.sample(&mut rng), DVector::zeros(3));
        }
    }

    #[test]
    fn uniform_respects_bound() {
        let m = NoiseModel::new(NoiseKind::UniformBounded { bound: 1.0 }, linalg::identity(2)).unwrap();
        let mut rng = trial_rng(2, 0, 0);
        for _ in 0..10_000 {
            assert!(m.sample(&mut rng).amax() <= 1.0);
        }
    }

    #[test]
    fn shaping_scales_weibull_constants() {
        let s = Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.5]);
        let m = NoiseModel::new(NoiseKind::WeibullSymmetric { alpha: 1.0, c2: 1.0 }, s).unwrap();
        assert_eq!(m.tail.c1, 2.0);
        assert_eq!(m.tail.c2, 2.0);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = trial_rng(7, 10, 3).random();
        let b: u64 = trial_rng(7, 10, 3).random();
        let c: u64 = trial_rng(7, 10, 4).random();
        let d: u64 = trial_rng(7, 11, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn alpha_round_trips_through_json() {
        let t = TailParams::bounded(2.0).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"inf\""));
        let back: TailParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
