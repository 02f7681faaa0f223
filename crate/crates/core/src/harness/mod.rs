//! Experiment campaigns and the command line front end: Monte Carlo
//! failure-frequency and decay-rate estimation, sensitivity reports, and
//! JSON configs describing systems and campaigns.
//!
//! A config is a JSON object:
//!
//! ```json
//! {
//!   "system": {"a0": [[0.5, 0.0], [0.0, 0.8]], "noise": {"kind": "gaussian"}},
//!   "n_grid": [100, 1000, 10000],
//!   "trials": 400, "epsilon": 0.2, "delta": 0.1,
//!   "master_seed": 7, "outputs": "out"
//! }
//! ```
//!
//! `system` may instead be a path to a JSON file with the same object, and
//! `a0` may be replaced by `"jordan": {"blocks": [[re, im, size], ...],
//! "similarity": "random" | [[...]]}`. Optional sections: `bounds`
//! (`psi_samples`, `mc_samples`, `tail_cutoff`), `sensitivity` and `tails`.

mod campaign;
mod cli;
mod config;
mod scaled;
mod sensitivity;

pub use campaign::{
    binomial_bounds, binomial_se, compute_report, fit_decay_rate, linear_fit, run_montecarlo, run_trial, run_trial_scaled, run_trials,
    summarize, CampaignFiles, DecayFit, ExperimentReport, FailReason, FitMode, NSummary, Summary, SummaryRow,
    TrialRecord, CAMPAIGN_CSV, CONFIDENCE, MIN_FIT_POINTS, MIN_SURVIVORS, SUMMARY_JSON,
};
pub use cli::{cli_dispatch, cli_dispatch_with, default_tail_grid, tail_report, THREADS_ENV, TRAJECTORY_CSV};
pub use config::{
    BoundSettings, ExperimentConfig, SimulationMode, InitialConfig, JordanConfig, SearchConfig, SensitivityConfig, SimilarityConfig,
    SystemConfig, SystemSource, TailCheckConfig,
};
pub use scaled::{ScaledOutcome, SplitScaled, NEGLIGIBLE};
pub use sensitivity::{
    magnitude_stats, run_sensitivity, sensitivity_csv, sensitivity_report, MagnitudeStats, SensitivityReport,
    SensitivityRun, SENSITIVITY_CSV, SENSITIVITY_PLOT,
};
