use std::fmt::Write as _;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::bounds::{self, Regime};
use crate::dynamics::{self, fmt_f64, SystemSpec};
use crate::error::{Result, SysIdError};
use crate::estimator;
use crate::noise;

use super::config::{ExperimentConfig, SimulationMode};
use super::scaled::{ScaledOutcome, SplitScaled};

/// Confidence level of the one-sided binomial bounds.
pub const CONFIDENCE: f64 = 0.95;
/// Minimum number of trials with a usable error for a grid point to enter
/// a decay fit.
pub const MIN_SURVIVORS: usize = 50;
/// Minimum number of grid points in a decay fit.
pub const MIN_FIT_POINTS: usize = 4;

pub const CAMPAIGN_CSV: &str = "campaign.csv";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    ErrorExceedsEps,
    SingularGram,
    Overflow,
}

impl FailReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailReason::ErrorExceedsEps => "error_exceeds_eps",
            FailReason::SingularGram => "singular_gram",
            FailReason::Overflow => "overflow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    pub error: Option<f64>,
    pub gram_min_eig: Option<f64>,
    pub failed: bool,
    pub reason: Option<FailReason>,
}

impl TrialRecord {
    /// Trials with a finite positive error enter the decay fit.
    pub fn survived(&self) -> bool {
        matches!(self.error, Some(e) if e.is_finite() && e > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub trials: usize,
    pub failures: usize,
    pub overflows: usize,
    pub surviving: usize,
    pub fail_freq: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub median_log_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Median log-error against `n`.
    LogErrorVsN,
    /// Median log-error against `log n`.
    LoglogErrorVsN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub mode: FitMode,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    pub epsilon: f64,
    pub regime: Regime,
    pub records: Vec<TrialRecord>,
    pub per_n: Vec<NSummary>,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
    pub prescribed_n: Option<u64>,
    pub bound_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub fail_freq: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// The persisted summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub per_n: Vec<SummaryRow>,
    pub slope: Option<f64>,
    pub prescribed_n: Option<u64>,
}

impl ExperimentReport {
    pub fn summary(&self) -> Summary {
        Summary {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            per_n: self
                .per_n
                .iter()
                .map(|s| SummaryRow {
                    n: s.n,
                    fail_freq: s.fail_freq,
                    ci_lo: s.ci_lo,
                    ci_hi: s.ci_hi,
                })
                .collect(),
            slope: self.fit.as_ref().map(|f| f.slope),
            prescribed_n: self.prescribed_n,
        }
    }

    pub fn campaign_csv(&self) -> String {
        let mut out = String::from("n,trial,error,gram_min_eig,failed,reason\n");
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.n,
                r.trial,
                opt(r.error),
                opt(r.gram_min_eig),
                r.failed,
                r.reason.map_or("", |x| x.as_str())
            )
            .unwrap();
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn summary_for(&self, n: usize) -> Option<&NSummary> {
        self.per_n.iter().find(|s| s.n == n)
    }
}

/// One-sided `CONFIDENCE` Clopper-Pearson bounds for `k` failures in `m`
/// trials: `ci_lo` is a lower bound and `ci_hi` an upper bound, each
/// holding with the stated confidence.
pub fn binomial_bounds(k: usize, m: usize) -> (f64, f64) {
    if m == 0 {
        return (0.0, 1.0);
    }
    let (kf, mf) = (k as f64, m as f64);
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(kf, mf - kf + 1.0).expect("valid beta").inverse_cdf(1.0 - CONFIDENCE)
    };
    let hi = if k == m {
        1.0
    } else {
        Beta::new(kf + 1.0, mf - kf).expect("valid beta").inverse_cdf(CONFIDENCE)
    };
    (lo, hi)
}

/// Standard error of a binomial proportion estimate.
pub fn binomial_se(freq: f64, m: usize) -> f64 {
    (freq * (1.0 - freq) / m as f64).sqrt()
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    Some(if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) })
}

/// Runs one trial on stream `(seed, n, trial)`.
pub fn run_trial(spec: &SystemSpec, n: usize, trial: usize, seed: u64, epsilon: f64, ridge: f64) -> Result<TrialRecord> {
    let mut rng = noise::trial_rng(seed, n as u64, trial as u64);
    let overflow = TrialRecord {
        n,
        trial,
        error: None,
        gram_min_eig: None,
        failed: true,
        reason: Some(FailReason::Overflow),
    };
    let traj = match dynamics::simulate_with_rng(spec, n, &mut rng, seed) {
        Ok(t) => t,
        Err(SysIdError::Overflow { .. }) => return Ok(overflow),
        Err(e) => return Err(e),
    };
    if traj.overflowed_at.is_some() {
        return Ok(overflow);
    }
    match estimator::ols(&traj, n, ridge) {
        Ok(est) => {
            let error = estimator::error_norm(&est.a_hat, &spec.a0);
            let failed = !(error <= epsilon);
            Ok(TrialRecord {
                n,
                trial,
                error: Some(error),
                gram_min_eig: Some(est.gram_min_eig),
                failed,
                reason: failed.then_some(FailReason::ErrorExceedsEps),
            })
        }
        Err(SysIdError::SingularGram { lambda_min }) => Ok(TrialRecord {
            n,
            trial,
            error: None,
            gram_min_eig: Some(lambda_min),
            failed: true,
            reason: Some(FailReason::SingularGram),
        }),
        Err(e) => Err(e),
    }
}

/// Per-`n` aggregation. Depends only on the multiset of records at each `n`.
pub fn summarize(records: &[TrialRecord], n_grid: &[usize]) -> Vec<NSummary> {
    n_grid
        .iter()
        .map(|&n| {
            let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.n == n).collect();
            let trials = rs.len();
            let failures = rs.iter().filter(|r| r.failed).count();
            let overflows = rs.iter().filter(|r| r.reason == Some(FailReason::Overflow)).count();
            let mut logs: Vec<f64> = rs.iter().filter(|r| r.survived()).map(|r| r.error.unwrap().ln()).collect();
            let surviving = logs.len();
            let (ci_lo, ci_hi) = binomial_bounds(failures, trials);
            NSummary {
                n,
                trials,
                failures,
                overflows,
                surviving,
                fail_freq: if trials == 0 { 0.0 } else { failures as f64 / trials as f64 },
                ci_lo,
                ci_hi,
                median_log_error: median(&mut logs),
            }
        })
        .collect()
}

/// Least-squares line through `(x, y)` with its coefficient of determination.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// Fits the median log-error against `n` or `log n`. Every grid point needs
/// at least [`MIN_SURVIVORS`] usable trials and at least
/// [`MIN_FIT_POINTS`] grid points are required.
pub fn fit_decay_rate(per_n: &[NSummary], mode: FitMode) -> Result<DecayFit> {
    let starved: Vec<usize> = per_n
        .iter()
        .filter(|s| s.surviving < MIN_SURVIVORS || s.median_log_error.is_none())
        .map(|s| s.n)
        .collect();
    if !starved.is_empty() {
        return Err(SysIdError::InvalidInput(format!(
            "grid points with fewer than {MIN_SURVIVORS} surviving trials: {starved:?}"
        )));
    }
    if per_n.len() < MIN_FIT_POINTS {
        return Err(SysIdError::InvalidInput(format!(
            "decay fit needs at least {MIN_FIT_POINTS} grid points, got {}",
            per_n.len()
        )));
    }
    let points: Vec<(usize, f64)> = per_n.iter().map(|s| (s.n, s.median_log_error.unwrap())).collect();
    let x: Vec<f64> = points
        .iter()
        .map(|&(n, _)| match mode {
            FitMode::LogErrorVsN => n as f64,
            FitMode::LoglogErrorVsN => (n as f64).ln(),
        })
        .collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (slope, intercept, r_squared) = linear_fit(&x, &y);
    Ok(DecayFit {
        mode,
        slope,
        intercept,
        r_squared,
        points,
    })
}

/// [`run_trial`] in split coordinates; `gram_min_eig` is not available there.
pub fn run_trial_scaled(sim: &SplitScaled, spec: &SystemSpec, n: usize, trial: usize, seed: u64, epsilon: f64) -> Result<TrialRecord> {
    let mut rng = noise::trial_rng(seed, n as u64, trial as u64);
    Ok(match sim.trial(spec, n, &mut rng)? {
        ScaledOutcome::Error(error) => {
            let failed = !(error <= epsilon);
            TrialRecord {
                n,
                trial,
                error: Some(error),
                gram_min_eig: None,
                failed,
                reason: failed.then_some(FailReason::ErrorExceedsEps),
            }
        }
        ScaledOutcome::Singular => TrialRecord {
            n,
            trial,
            error: None,
            gram_min_eig: None,
            failed: true,
            reason: Some(FailReason::SingularGram),
        },
    })
}

/// All trials of the campaign, in `(n, trial)` order. Work is spread over
/// the current rayon pool; each trial owns its stream, so the result does
/// not depend on the number of threads. Split-coordinate mode falls back to
/// direct simulation for systems without an explosive part.
pub fn run_trials(spec: &SystemSpec, cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.trials).map(move |t| (n, t)))
        .collect();
    let sim = match cfg.simulation {
        SimulationMode::SplitScaled if bounds::classify(&spec.a0, cfg.bounds.opts(0).unit_gap)? != Regime::Stable => {
            Some(SplitScaled::new(spec, cfg.bounds.opts(0).unit_gap)?)
        }
        _ => None,
    };
    jobs.par_iter()
        .map(|&(n, t)| match &sim {
            Some(sim) => run_trial_scaled(sim, spec, n, t, cfg.master_seed, cfg.epsilon),
            None => run_trial(spec, n, t, cfg.master_seed, cfg.epsilon, cfg.ridge),
        })
        .collect()
}

/// Computes the campaign without touching the filesystem.
pub fn compute_report(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.n_grid.is_empty() {
        return Err(SysIdError::Config("n_grid is empty".into()));
    }
    let spec = cfg.system_spec()?;
    let opts = cfg.bounds.opts(cfg.master_seed);
    let regime = bounds::classify(&spec.a0, opts.unit_gap)?;
    let records = run_trials(&spec, cfg)?;
    let per_n = summarize(&records, &cfg.n_grid);
    let mode = cfg.fit_mode.unwrap_or(match regime {
        Regime::Explosive => FitMode::LogErrorVsN,
        _ => FitMode::LoglogErrorVsN,
    });
    let (fit, fit_error) = match fit_decay_rate(&per_n, mode) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (prescribed_n, bound_error) = if cfg.compute_bounds && cfg.epsilon < 1.0 {
        match bounds::bound_report(&spec, cfg.epsilon, cfg.delta, &opts) {
            Ok(r) => (Some(r.sample_size), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    Ok(ExperimentReport {
        config_hash: cfg.config_hash(),
        seed: cfg.master_seed,
        epsilon: cfg.epsilon,
        regime,
        records,
        per_n,
        fit,
        fit_error,
        prescribed_n,
        bound_error,
    })
}

/// Output files of a persisted campaign.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignFiles {
    pub campaign_csv: PathBuf,
    pub summary_json: PathBuf,
}

/// Creates `dir` and both output files so that an unwritable destination is
/// reported before any computation.
fn open_outputs(dir: &Path) -> Result<(CampaignFiles, File, File)> {
    std::fs::create_dir_all(dir)?;
    let files = CampaignFiles {
        campaign_csv: dir.join(CAMPAIGN_CSV),
        summary_json: dir.join(SUMMARY_JSON),
    };
    let csv = File::create(&files.campaign_csv)?;
    let json = File::create(&files.summary_json)?;
    Ok((files, csv, json))
}

/// Runs the campaign and writes `campaign.csv` and `summary.json` into
/// `cfg.outputs`.
pub fn run_montecarlo(cfg: &ExperimentConfig) -> Result<(ExperimentReport, CampaignFiles)> {
    cfg.validate()?;
    cfg.system_spec()?;
    let (files, mut csv, mut json) = open_outputs(&cfg.outputs)?;
    let report = compute_report(cfg)?;
    csv.write_all(report.campaign_csv().as_bytes())?;
    json.write_all(report.summary_json().as_bytes())?;
    Ok((report, files))
}
