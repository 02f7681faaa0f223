//! Report schema stability on a fixed tiny campaign. Set `UPDATE_GOLDEN=1`
//! to regenerate the reference files.

use std::path::PathBuf;

use serde_json::Value;
use unstable_sysid::harness::{self, ExperimentConfig};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn same_json(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let kx: Vec<_> = x.keys().collect();
            let ky: Vec<_> = y.keys().collect();
            assert_eq!(kx, ky, "keys at {path}");
            for k in x.keys() {
                same_json(&x[k], &y[k], &format!("{path}.{k}"));
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "length at {path}");
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                same_json(u, v, &format!("{path}[{i}]"));
            }
        }
        (Value::Number(x), Value::Number(y)) => {
            assert!(close(x.as_f64().unwrap(), y.as_f64().unwrap()), "{path}: {x} vs {y}");
        }
        _ => assert_eq!(a, b, "at {path}"),
    }
}

#[test]
fn tiny_campaign_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(
        &serde_json::json!({
            "system": {"a0": [[0.9, 0.2], [0.0, 1.3]], "x0": "random_unit"},
            "n_grid": [6, 10, 14, 18],
            "trials": 8,
            "epsilon": 0.3,
            "delta": 0.1,
            "master_seed": 42,
            "outputs": "golden-out",
            "compute_bounds": false
        })
        .to_string(),
    )
    .unwrap();
    let mut cfg = cfg;
    let hash = cfg.config_hash();
    cfg.outputs = dir.path().to_path_buf();
    let (report, files) = harness::run_montecarlo(&cfg).unwrap();
    assert_eq!(report.config_hash, cfg.config_hash());
    let csv = std::fs::read_to_string(&files.campaign_csv).unwrap();
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(&files.summary_json).unwrap()).unwrap();
    // The hash covers the output path, so compare it against the fixed config.
    let mut summary = summary;
    summary["config_hash"] = Value::String(hash);

    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(golden("campaign.csv"), &csv).unwrap();
        std::fs::write(golden("summary.json"), serde_json::to_string_pretty(&summary).unwrap() + "\n").unwrap();
    }

    let want_csv = std::fs::read_to_string(golden("campaign.csv")).unwrap();
    let got: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let want: Vec<Vec<&str>> = want_csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(got[0], ["n", "trial", "error", "gram_min_eig", "failed", "reason"]);
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.len(), w.len());
        for (a, b) in g.iter().zip(w) {
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!(close(x, y), "{a} vs {b}"),
                _ => assert_eq!(a, b),
            }
        }
    }
    let want_summary: Value = serde_json::from_str(&std::fs::read_to_string(golden("summary.json")).unwrap()).unwrap();
    same_json(&summary, &want_summary, "summary");
}
