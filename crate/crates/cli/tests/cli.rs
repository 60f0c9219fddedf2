//! End-to-end runs of the `rangequant` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const BIN: &str = env!("CARGO_BIN_EXE_rangequant");

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/demo.json")
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("RANGEQUANT_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

struct Runs {
    _tmp: tempfile::TempDir,
    first: PathBuf,
    second: PathBuf,
}

/// The demo pipeline run twice into separate directories, the second time
/// with a different thread count.
fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let first = tmp.path().join("first");
        let second = tmp.path().join("second");
        let cfg = demo_config();
        for (dir, threads) in [(&first, "4"), (&second, "1")] {
            let o = run(
                &["all", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()],
                &[("RANGEQUANT_THREADS", threads)],
            );
            assert!(o.status.success(), "pipeline failed: {}", stderr(&o));
        }
        Runs {
            _tmp: tmp,
            first,
            second,
        }
    })
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

#[test]
fn full_pipeline_emits_every_report_file() {
    let out = &runs().first;
    let mut expected: Vec<String> = [
        "table_describe.csv",
        "table_jumps.csv",
        "table_correlation_market.csv",
        "table_correlation_A01.csv",
        "table_fit.csv",
        "table_tests.csv",
        "table_restricted.csv",
        "table_berkowitz.csv",
        "table_ag.csv",
        "table_dm.csv",
    ]
    .map(String::from)
    .to_vec();
    for unit in ["market", "A01"] {
        for coef in ["const", "lag1", "mean5", "vix", "sp500", "jump"] {
            expected.push(format!("surface_{unit}_{coef}.csv"));
        }
    }
    for f in &expected {
        let path = out.join("report").join(f);
        let (_, rows) = read_csv(&path);
        assert!(!rows.is_empty(), "{f} is empty");
    }

    // Coefficient surfaces: one row per rolling window, one column per tau.
    let (header, rows) = read_csv(&out.join("report/surface_market_lag1.csv"));
    assert_eq!(header.len(), 20);
    assert_eq!(header[1], "0.05");
    assert_eq!(rows.len(), (594 - 500) / 5 + 1);

    let (header, rows) = read_csv(&out.join("report/table_ag.csv"));
    assert_eq!(header[1..3], ["ag_NW", "p_NW"]);
    assert_eq!(rows.len(), 2);
    let (header, _) = read_csv(&out.join("report/table_dm.csv"));
    assert_eq!(header[1..], ["dm_0.1", "p_0.1", "dm_0.5", "p_0.5", "dm_0.9", "p_0.9"]);

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let stages = manifest["stages"].as_array().unwrap();
    let names: Vec<&str> = stages.iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert_eq!(names, ["simulate", "estimate", "fit", "roll", "forecast", "evaluate", "report"]);
    assert!(stages.iter().all(|s| s["status"] == "ok"));
    assert_eq!(stages[0]["seeds"]["market"], 12);
    assert_eq!(stages[1]["seeds"]["lambda_seed"], 3);
    assert_eq!(stages[2]["seeds"]["bootstrap"], 4);
    let report_outputs = stages[6]["outputs"].as_array().unwrap();
    assert_eq!(report_outputs.len(), expected.len());
}

#[test]
fn restricted_fit_reports_r1_pairs_and_xi_w_per_tau() {
    let out = &runs().first;
    let (header, rows) = read_csv(&out.join("fit/market/restricted.csv"));
    assert_eq!(
        header,
        ["tau", "r1_unrestricted", "r1_restricted", "xi_w_stat", "xi_w_df", "xi_w_p_value"]
    );
    let taus: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(taus, ["0.1", "0.5", "0.9"]);
    for r in &rows {
        let v: Vec<f64> = r.iter().map(|s| s.parse().unwrap()).collect();
        assert!(v[1] >= v[2], "nesting violated at tau {}", r[0]);
        // Dropped regressors: mean5, vix, jump.
        assert_eq!(v[4], 3.0);
        assert!((0.0..=1.0).contains(&v[5]));
    }
    let (header, rows) = read_csv(&out.join("report/table_restricted.csv"));
    assert_eq!(header, ["unit", "tau", "r1_unrestricted", "r1_restricted", "xi_w_stat", "xi_w_p_value"]);
    assert_eq!(rows.len(), 6);
}

#[test]
fn reruns_are_byte_identical() {
    let r = runs();
    let mut a = tree(&r.first);
    let mut b = tree(&r.second);
    assert!(a.remove("timings.json").is_some());
    assert!(b.remove("timings.json").is_some());
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{k} differs between runs");
    }
}

#[test]
fn evaluate_restarts_from_persisted_forecasts() {
    let r = runs();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("copy");
    for (rel, bytes) in tree(&r.first) {
        if rel.starts_with("forecast/") {
            let p = dir.join(&rel);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, bytes).unwrap();
        }
    }
    let cfg = demo_config();
    let o = run(&["evaluate", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for unit in ["market", "A01"] {
        let rel = format!("evaluate/{unit}/eval.csv");
        assert_eq!(std::fs::read(dir.join(&rel)).unwrap(), std::fs::read(r.first.join(&rel)).unwrap());
    }
}

#[test]
fn file_inputs_reproduce_the_simulated_design() {
    let r = runs();
    let tmp = tempfile::tempdir().unwrap();
    let data = r.first.join("data");
    let mut intraday = serde_json::Map::new();
    for a in ["A01", "A02", "A03", "A04"] {
        intraday.insert(a.into(), data.join(format!("intraday_{a}.csv")).to_str().unwrap().into());
    }
    let cfg = serde_json::json!({
        "data": {
            "source": "files",
            "intraday": intraday,
            "sp500": data.join("sp500.csv"),
            "vix": data.join("vix.csv"),
        },
        "estimator": {"n": 39, "m": 10, "lambda_paths": 20000, "lambda_seed": 3},
        "model": {"units": ["market", "A01"]},
    });
    let path = tmp.path().join("files.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = tmp.path().join("out");
    let o = run(&["estimate", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for unit in ["market", "A01"] {
        let rel = format!("estimate/design_{unit}.csv");
        assert_eq!(std::fs::read(out.join(&rel)).unwrap(), std::fs::read(r.first.join(&rel)).unwrap());
    }
}

fn write_config(dir: &Path, patch: serde_json::Value) -> PathBuf {
    let mut cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(demo_config()).unwrap()).unwrap();
    for (k, v) in patch.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn validation_errors_exit_2_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (serde_json::json!({"roll": {"window": 500, "step": 0}}), "roll.step"),
        (serde_json::json!({"roll": {"window": 500, "stride": 2}}), "roll.stride"),
        (serde_json::json!({"fit": {"taus": [0.9, 0.1]}}), "fit.taus"),
        (serde_json::json!({"roll": {"window": 5000}}), "roll.window"),
        (serde_json::json!({"model": {"units": ["A09"]}}), "model.units[0]"),
        (serde_json::json!({"forecast": {"window": "long"}}), "forecast.window"),
    ];
    for (patch, key) in cases {
        let path = write_config(tmp.path(), patch);
        let out = tmp.path().join("out");
        let o = run(&["fit", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
        assert_eq!(o.status.code(), Some(2), "{key}: {}", stderr(&o));
        assert!(stderr(&o).contains(&format!("config key `{key}`")), "{key}: {}", stderr(&o));
        assert!(!out.exists(), "nothing is written on validation errors");
    }
    let cfg = demo_config();
    let o = run(&["fit", "--config", cfg.to_str().unwrap()], &[("RANGEQUANT_THREADS", "zero")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("RANGEQUANT_THREADS"));
}

#[test]
fn stage_failures_exit_1_and_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = demo_config();
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stage `fit` failed"), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let rec = &manifest["stages"][0];
    assert_eq!(rec["stage"], "fit");
    assert_eq!(rec["status"], "failed");
    assert!(rec["error"].as_str().unwrap().contains("design_market.csv"));
}

#[test]
fn committed_schema_matches_the_binary() {
    let o = run(&["schema"], &[]);
    assert!(o.status.success());
    let committed = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("config.schema.json")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), committed);
}
