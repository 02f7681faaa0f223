use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{BoundOpts, MonteCarloOpts, PsiSearchOpts, DEFAULT_TAIL_CUTOFF};
use crate::dynamics::{self, InitialState, PerturbationMode, SimilaritySpec, SystemSpec};
use crate::error::{Result, SysIdError};
use crate::linalg::{self, CMat, Mat};
use crate::noise::{self, NoiseKind, NoiseModel};
use crate::spectral::JordanBlock;

use super::campaign::FitMode;

/// A campaign description. Only `system` is required.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSource,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    /// Horizon for `simulate` and `estimate`; defaults to the largest grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_mode: Option<FitMode>,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default)]
    pub simulation: SimulationMode,
    #[serde(default = "default_true")]
    pub compute_bounds: bool,
    #[serde(default)]
    pub bounds: BoundSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tails: Option<TailCheckConfig>,
}

fn default_trials() -> usize {
    400
}
fn default_epsilon() -> f64 {
    0.2
}
fn default_delta() -> f64 {
    0.1
}
fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}
fn default_true() -> bool {
    true
}

/// `direct` simulates `x(t)` as is. `split_scaled` runs trials in the
/// stable/explosive split coordinates with the explosive part rescaled, which
/// yields the same estimate at horizons where `x(t)` would overflow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    #[default]
    Direct,
    SplitScaled,
}

/// Inline system, or a path to a JSON file holding one (relative paths are
/// resolved against the config file's directory).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Path(PathBuf),
    Inline(SystemConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Row-major `A₀`. Exactly one of `a0` and `jordan` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jordan: Option<JordanConfig>,
    #[serde(default = "default_noise")]
    pub noise: NoiseKind,
    /// Row-major `C_sqrt`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sqrt: Option<Vec<Vec<f64>>>,
    /// Zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<InitialConfig>,
}

fn default_noise() -> NoiseKind {
    NoiseKind::Gaussian
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialConfig {
    Vector(Vec<f64>),
    /// `"zero"` or `"random_unit"`.
    Named(String),
}

/// `blocks` lists `(re, im, size)`; `similarity` is `"random"` (well
/// conditioned, drawn from `similarity_seed`) or a row-major real matrix with
/// an optional imaginary part.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JordanConfig {
    pub blocks: Vec<(f64, f64, usize)>,
    #[serde(default = "default_similarity")]
    pub similarity: SimilarityConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_imag: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub similarity_seed: u64,
}

fn default_similarity() -> SimilarityConfig {
    SimilarityConfig::Named("random".into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SimilarityConfig {
    Matrix(Vec<Vec<f64>>),
    Named(String),
}

/// Overrides for the Monte Carlo effort inside the bound computations.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSettings {
    #[serde(default = "default_psi_samples")]
    pub psi_samples: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_tail_cutoff")]
    pub tail_cutoff: f64,
}

fn default_psi_samples() -> usize {
    PsiSearchOpts::default().samples
}
fn default_mc_samples() -> usize {
    MonteCarloOpts::default().samples
}
fn default_tail_cutoff() -> f64 {
    DEFAULT_TAIL_CUTOFF
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            psi_samples: default_psi_samples(),
            mc_samples: default_mc_samples(),
            tail_cutoff: default_tail_cutoff(),
        }
    }
}

impl BoundSettings {
    pub fn opts(&self, seed: u64) -> BoundOpts {
        let d = BoundOpts::default();
        BoundOpts {
            tail_cutoff: self.tail_cutoff,
            psi: PsiSearchOpts {
                samples: self.psi_samples,
                seed,
                ..d.psi
            },
            mc: MonteCarloOpts {
                samples: self.mc_samples,
                seed,
            },
            ..d
        }
    }
}

/// Either an explicit `(A_x, A_u)` pair or a random instance search.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ax: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub au: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
    #[serde(default = "default_mode")]
    pub mode: PerturbationMode,
    #[serde(default = "default_magnitudes")]
    pub magnitudes: Vec<f64>,
    #[serde(default = "default_sens_trials")]
    pub trials: usize,
    #[serde(default = "default_weight")]
    pub lqr_q: f64,
    #[serde(default = "default_weight")]
    pub lqr_r: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub p: usize,
    pub r: usize,
    #[serde(default = "default_candidates")]
    pub max_candidates: usize,
}

fn default_mode() -> PerturbationMode {
    PerturbationMode::GlobalAwgn
}
/// `0, 0.005, …, 0.1`.
fn default_magnitudes() -> Vec<f64> {
    (0..=20).map(|k| k as f64 * 0.005).collect()
}
fn default_sens_trials() -> usize {
    100
}
fn default_weight() -> f64 {
    1.0
}
fn default_candidates() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailCheckConfig {
    #[serde(default = "default_tail_samples")]
    pub samples: usize,
    /// Thresholds `y`; by default ten points up to the level where the bound
    /// equals 1e-4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
}

fn default_tail_samples() -> usize {
    100_000
}

impl Default for TailCheckConfig {
    fn default() -> Self {
        Self {
            samples: default_tail_samples(),
            grid: None,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> SysIdError {
    SysIdError::Config(msg.into())
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    linalg::from_rows(rows).map_err(|e| cfg_err(format!("{what}: {e}")))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| cfg_err(format!("cannot parse config: {e}")))
    }

    /// Reads a config and inlines a referenced system file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let SystemSource::Path(rel) = &cfg.system {
            let full = path.parent().map_or(rel.clone(), |d| d.join(rel));
            let text = std::fs::read_to_string(&full)
                .map_err(|e| cfg_err(format!("cannot read system {}: {e}", full.display())))?;
            let sys: SystemConfig =
                serde_json::from_str(&text).map_err(|e| cfg_err(format!("cannot parse system {}: {e}", full.display())))?;
            cfg.system = SystemSource::Inline(sys);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(cfg_err("trials must be at least 1"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(cfg_err("n_grid must be strictly increasing"));
        }
        if self.n_grid.first() == Some(&0) {
            return Err(cfg_err("n_grid entries must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(cfg_err(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(cfg_err(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(cfg_err(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        Ok(())
    }

    pub fn system_config(&self) -> Result<&SystemConfig> {
        match &self.system {
            SystemSource::Inline(s) => Ok(s),
            SystemSource::Path(p) => Err(cfg_err(format!(
                "system reference {} was not resolved; use ExperimentConfig::load",
                p.display()
            ))),
        }
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        self.system_config()?.build()
    }

    /// SHA-256 of the canonical (key-sorted) JSON form.
    pub fn config_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn horizon(&self) -> Result<usize> {
        self.horizon
            .or_else(|| self.n_grid.last().copied())
            .ok_or_else(|| cfg_err("no horizon: set `horizon` or `n_grid`"))
    }
}

impl SystemConfig {
    pub fn build(&self) -> Result<SystemSpec> {
        match (&self.a0, &self.jordan) {
            (Some(a0), None) => {
                let a0 = matrix(a0, "a0")?;
                let p = linalg::check_square(&a0, "a0").map_err(|e| cfg_err(e.to_string()))?;
                SystemSpec::new(a0, self.noise_model(p)?, self.initial(p)?).map_err(|e| cfg_err(e.to_string()))
            }
            (None, Some(j)) => {
                let blocks: Vec<JordanBlock> = j
                    .blocks
                    .iter()
                    .map(|&(re, im, size)| JordanBlock::new(Complex64::new(re, im), size))
                    .collect();
                let p: usize = blocks.iter().map(|b| b.size).sum();
                let similarity = match &j.similarity {
                    SimilarityConfig::Named(s) if s == "random" => SimilaritySpec::RandomWellconditioned,
                    SimilarityConfig::Named(s) => return Err(cfg_err(format!("unknown similarity {s:?}"))),
                    SimilarityConfig::Matrix(rows) => {
                        let re = matrix(rows, "similarity")?;
                        let im = match &j.similarity_imag {
                            Some(r) => matrix(r, "similarity_imag")?,
                            None => Mat::zeros(re.nrows(), re.ncols()),
                        };
                        if re.shape() != im.shape() {
                            return Err(cfg_err("similarity and similarity_imag differ in shape"));
                        }
                        SimilaritySpec::Given(CMat::from_fn(re.nrows(), re.ncols(), |r, c| {
                            Complex64::new(re[(r, c)], im[(r, c)])
                        }))
                    }
                };
                let mut rng = noise::trial_rng(j.similarity_seed, u64::MAX - 1, 0);
                dynamics::make_system_from_jordan(&blocks, &similarity, self.noise_model(p)?, self.initial(p)?, &mut rng)
                    .map_err(|e| cfg_err(e.to_string()))
            }
            _ => Err(cfg_err("system needs exactly one of `a0` and `jordan`")),
        }
    }

    fn noise_model(&self, p: usize) -> Result<NoiseModel> {
        let s = match &self.noise_sqrt {
            Some(rows) => matrix(rows, "noise_sqrt")?,
            None => linalg::identity(p),
        };
        if s.nrows() != p {
            return Err(cfg_err(format!("noise_sqrt has {} rows, expected {p}", s.nrows())));
        }
        NoiseModel::new(self.noise, s).map_err(|e| cfg_err(e.to_string()))
    }

    fn initial(&self, p: usize) -> Result<InitialState> {
        match &self.x0 {
            None => Ok(InitialState::zero(p)),
            Some(InitialConfig::Vector(v)) => Ok(InitialState::Fixed(v.clone())),
            Some(InitialConfig::Named(s)) => match s.as_str() {
                "zero" => Ok(InitialState::zero(p)),
                "random_unit" => Ok(InitialState::RandomUnit),
                other => Err(cfg_err(format!("unknown x0 {other:?}"))),
            },
        }
    }
}
