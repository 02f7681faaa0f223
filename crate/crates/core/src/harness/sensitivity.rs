use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, fmt_f64, ControlSystem, FeedbackDesigner, Lqr, SensitivityCurve};
use crate::error::{Result, SysIdError};
use crate::linalg;

use super::config::SensitivityConfig;

pub const SENSITIVITY_CSV: &str = "sensitivity.csv";
pub const SENSITIVITY_PLOT: &str = "sensitivity_plot.json";

/// Per-magnitude spread of `λmax`, the plot data of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeStats {
    pub magnitude: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub frac_unstable: f64,
    /// Points where the designer failed on the perturbed model.
    pub design_failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub nominal_lambda_max: f64,
    pub crossing: Option<f64>,
    pub stats: Vec<MagnitudeStats>,
    pub csv_path: PathBuf,
    pub plot_path: PathBuf,
}

pub fn magnitude_stats(curve: &SensitivityCurve) -> Vec<MagnitudeStats> {
    let mut mags: Vec<f64> = curve.points.iter().map(|p| p.magnitude).collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    mags.into_iter()
        .map(|m| {
            let all: Vec<f64> = curve.points.iter().filter(|p| p.magnitude == m).map(|p| p.lambda_max).collect();
            let mut vals: Vec<f64> = all.iter().copied().filter(|v| v.is_finite()).collect();
            vals.sort_by(f64::total_cmp);
            let k = vals.len();
            let pick = |q: f64| if k == 0 { f64::NAN } else { vals[((k - 1) as f64 * q).round() as usize] };
            MagnitudeStats {
                magnitude: m,
                min: pick(0.0),
                median: pick(0.5),
                max: pick(1.0),
                frac_unstable: all.iter().filter(|&&v| v > 1.0).count() as f64 / all.len() as f64,
                design_failures: all.len() - k,
            }
        })
        .collect()
}

pub fn sensitivity_csv(curve: &SensitivityCurve) -> String {
    let mut out = String::from("magnitude,index,lambda_max\n");
    for p in &curve.points {
        writeln!(out, "{},{},{}", fmt_f64(p.magnitude), p.index, fmt_f64(p.lambda_max)).unwrap();
    }
    out
}

/// Writes the scan CSV and the per-magnitude plot data into `out`.
pub fn sensitivity_report(curve: &SensitivityCurve, out: &Path) -> Result<SensitivityReport> {
    if curve.points.is_empty() {
        return Err(SysIdError::InvalidInput("sensitivity scan is empty".into()));
    }
    std::fs::create_dir_all(out)?;
    let stats = magnitude_stats(curve);
    let report = SensitivityReport {
        nominal_lambda_max: curve.nominal_lambda_max,
        crossing: curve.crossing(),
        stats,
        csv_path: out.join(SENSITIVITY_CSV),
        plot_path: out.join(SENSITIVITY_PLOT),
    };
    std::fs::write(&report.csv_path, sensitivity_csv(curve))?;
    let plot = serde_json::json!({
        "mode": curve.mode,
        "nominal_lambda_max": report.nominal_lambda_max,
        "crossing": report.crossing,
        "stats": report.stats,
    });
    let mut text = serde_json::to_string_pretty(&plot).expect("plot data serializes");
    text.push('\n');
    std::fs::write(&report.plot_path, text)?;
    Ok(report)
}

/// Result of a configured scan: the system studied and its curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityRun {
    pub system: ControlSystem,
    pub candidate: Option<usize>,
    pub curve: SensitivityCurve,
}

/// Runs the scan described by `cfg`: on the given `(A_x, A_u)` with the
/// nominal LQR gain, or on the first destabilizable instance of a search.
pub fn run_sensitivity(cfg: &SensitivityConfig, seed: u64) -> Result<SensitivityRun> {
    if cfg.magnitudes.is_empty() || cfg.magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(SysIdError::Config("magnitudes must be a nonempty list of values >= 0".into()));
    }
    let designer = Lqr {
        q: cfg.lqr_q,
        r: cfg.lqr_r,
        ..Lqr::default()
    };
    match (&cfg.ax, &cfg.au, &cfg.search) {
        (Some(ax), Some(au), None) => {
            let ax = linalg::from_rows(ax).map_err(|e| SysIdError::Config(format!("ax: {e}")))?;
            let au = linalg::from_rows(au).map_err(|e| SysIdError::Config(format!("au: {e}")))?;
            let l = designer.design(&ax, &au)?;
            let system = ControlSystem { ax, au, l };
            let curve = dynamics::sensitivity_scan(&system, cfg.mode, &cfg.magnitudes, cfg.trials, &designer, seed)?;
            Ok(SensitivityRun {
                system,
                candidate: None,
                curve,
            })
        }
        (None, None, Some(s)) => {
            let found = dynamics::find_sensitive_instance(s.p, s.r, &cfg.magnitudes, cfg.trials, &designer, seed, s.max_candidates)?;
            let inst = found.ok_or_else(|| {
                SysIdError::Numeric(format!(
                    "no destabilizable instance among {} candidates",
                    s.max_candidates
                ))
            })?;
            Ok(SensitivityRun {
                system: inst.system,
                candidate: Some(inst.candidate),
                curve: inst.curve,
            })
        }
        _ => Err(SysIdError::Config("sensitivity needs either `ax` and `au`, or `search`".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{PerturbationMode, SensitivityPoint};

    #[test]
    fn stats_and_crossing() {
        let pt = |magnitude, index, lambda_max| SensitivityPoint {
            magnitude,
            index,
            lambda_max,
        };
        let curve = SensitivityCurve {
            mode: PerturbationMode::GlobalAwgn,
            nominal_lambda_max: 0.5,
            points: vec![pt(0.0, 0, 0.5), pt(0.1, 0, 0.9), pt(0.1, 1, f64::NAN), pt(0.2, 0, 1.2), pt(0.2, 1, 0.8)],
        };
        let s = magnitude_stats(&curve);
        assert_eq!(s.len(), 3);
        assert_eq!(s[1].design_failures, 1);
        assert_eq!(s[2].frac_unstable, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let r = sensitivity_report(&curve, dir.path()).unwrap();
        assert_eq!(r.crossing, Some(0.2));
        let csv = std::fs::read_to_string(&r.csv_path).unwrap();
        assert!(csv.starts_with("magnitude,index,lambda_max\n"));
        assert_eq!(csv.lines().count(), 6);
    }
}
