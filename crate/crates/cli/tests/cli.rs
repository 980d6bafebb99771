use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use nolan_core::eval::{Cell, Report, ReportFormat, ReportKind};
use tempfile::TempDir;

const NOLAN: &str = env!("CARGO_BIN_EXE_nolan");

fn scratch() -> TempDir {
    tempfile::tempdir_in(env!("CARGO_TARGET_TMPDIR")).unwrap()
}

fn nolan(args: &[&str]) -> Output {
    Command::new(NOLAN).args(args).env("NOLAN_LOG", "error").output().unwrap()
}

fn run_dir(out: &Output) -> PathBuf {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout
        .lines()
        .find_map(|l| l.strip_prefix("run directory: "))
        .unwrap_or_else(|| panic!("no run directory in {stdout}\nstderr: {}", String::from_utf8_lossy(&out.stderr)));
    PathBuf::from(line)
}

fn ok(args: &[&str]) -> PathBuf {
    let out = nolan(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    run_dir(&out)
}

fn small_suite_args(out: &Path) -> Vec<String> {
    ["gen-suite", "--train-scenes", "4000", "--scenes", "40", "--setting", "adversarial", "--seed", "7", "--out"]
        .iter()
        .map(|s| s.to_string())
        .chain([out.display().to_string()])
        .collect()
}

/// One small generated suite shared by every test in this file.
fn suite() -> &'static Path {
    static SUITE: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    let (_, dir) = SUITE.get_or_init(|| {
        let tmp = scratch();
        let args = small_suite_args(tmp.path());
        let dir = ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
        (tmp, dir)
    });
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_suite_is_deterministic() {
    let tmp = scratch();
    let args = small_suite_args(tmp.path());
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let first = ok(&args);
    let second = ok(&args);
    assert_ne!(first, second, "a run directory was reused");
    let mut names: Vec<String> = fs::read_dir(&first)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"suite.jsonl".to_string()) && names.contains(&"manifest.json".to_string()));
    for name in names {
        assert_eq!(
            fs::read(first.join(&name)).unwrap(),
            fs::read(second.join(&name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn alpha_zero_matches_regular_metrics() {
    let tmp = scratch();
    let common = ["eval-pope", "--suite", s(suite()), "--out", s(tmp.path()), "--runs", "2"];
    let with_alpha: Vec<&str> = common.iter().copied().chain(["--alpha", "0"]).collect();
    let with_mode: Vec<&str> = common.iter().copied().chain(["--mode", "regular"]).collect();
    let a = ok(&with_alpha);
    let b = ok(&with_mode);
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
    let plus = ok(&common);
    assert_ne!(fs::read(a.join("metrics.json")).unwrap(), fs::read(plus.join("metrics.json")).unwrap());
}

#[test]
fn beta_sweep_has_baseline_and_five_rows() {
    let tmp = scratch();
    let dir = ok(&[
        "sweep", "--suite", s(suite()), "--out", s(tmp.path()), "--runs", "1", "--param", "beta", "--values",
        "0.2,0.4,0.6,0.8,1.0", "--format", "records",
    ]);
    let report = Report::parse(&fs::read_to_string(dir.join("report.jsonl")).unwrap(), ReportFormat::Records).unwrap();
    assert_eq!(report.kind, ReportKind::Sweep);
    assert_eq!(report.header.meta("param"), Some("beta"));
    assert_eq!(report.rows.len(), 6);
    let models: Vec<String> = (0..6)
        .map(|i| match report.cell(i, "model") {
            Some(Cell::Text(t)) => t.clone(),
            other => panic!("{other:?}"),
        })
        .collect();
    assert_eq!(models[0], "regular");
    assert!(models[1..].iter().all(|m| m == "nolan_plus"), "{models:?}");
}

#[test]
fn manifest_records_inputs_and_seeds() {
    let tmp = scratch();
    let dir = ok(&["eval-pope", "--suite", s(suite()), "--out", s(tmp.path()), "--runs", "3", "--seed", "10"]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([10, 11, 12]));
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(
        manifest["config_hash"].as_str().unwrap(),
        nolan_core::eval::config_hash(&manifest["config"])
    );
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 7);
    assert!(inputs.iter().all(|i| i["sha256"].as_str().unwrap().len() == 64));
    for name in ["metrics.json", "report.txt", "trace.jsonl", "manifest.json"] {
        assert!(dir.join(name).is_file(), "{name}");
    }
    let traces = fs::read_to_string(dir.join("trace.jsonl")).unwrap();
    let items = fs::read_to_string(suite().join("suite.jsonl")).unwrap().lines().count();
    assert_eq!(traces.lines().count(), 3 * items);
}

#[test]
fn stdio_bridge_matches_in_process() {
    let tmp = scratch();
    let server = format!("{NOLAN} serve --suite {}", s(suite()));
    let local = ok(&["eval-pope", "--suite", s(suite()), "--out", s(tmp.path()), "--runs", "1"]);
    let bridged = ok(&[
        "eval-pope", "--suite", s(suite()), "--endpoint", &server, "--out", s(tmp.path()), "--runs", "1", "--jobs", "3",
    ]);
    assert_eq!(
        fs::read(local.join("metrics.json")).unwrap(),
        fs::read(bridged.join("metrics.json")).unwrap()
    );
    let check = ok(&["serve-check", "--endpoint", &server, "--suite", s(suite()), "--out", s(tmp.path())]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(check.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 6);
}

#[test]
fn decode_writes_a_trace_per_token() {
    let tmp = scratch();
    let dir = ok(&[
        "decode", "--suite", s(suite()), "--out", s(tmp.path()), "--prompt", "describe", "--max-new-tokens", "8",
        "--sampler", "top_p:0.9", "--seed", "4",
    ]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    let steps = summary["steps"].as_u64().unwrap() as usize;
    assert!((1..=8).contains(&steps));
    assert_eq!(fs::read_to_string(dir.join("trace.jsonl")).unwrap().lines().count(), steps);
}

#[test]
fn analyze_writes_every_table() {
    let tmp = scratch();
    let dir = ok(&["analyze", "--suite", s(suite()), "--out", s(tmp.path()), "--runs", "1", "--format", "csv"]);
    for stem in ["divergence", "entropy", "position", "timing"] {
        let text = fs::read_to_string(dir.join(format!("{stem}.csv"))).unwrap();
        Report::parse(&text, ReportFormat::Csv).unwrap_or_else(|e| panic!("{stem}: {e}"));
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["mutual_information"].as_f64().unwrap() > 0.0);
}

fn diagnostic(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {stderr}"))
}

#[test]
fn config_errors_exit_two_with_a_diagnostic() {
    let tmp = scratch();
    let bad_config = tmp.path().join("bad.json");
    fs::write(&bad_config, r#"{"engine": {"mode": "sideways"}}"#).unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["eval-pope", "--out", s(tmp.path())],
        vec!["eval-pope", "--suite", s(suite()), "--alpha", "-1", "--out", s(tmp.path())],
        vec!["eval-pope", "--suite", s(suite()), "--config", s(&bad_config), "--out", s(tmp.path())],
        vec!["sweep", "--suite", s(suite()), "--param", "gamma", "--values", "1", "--out", s(tmp.path())],
        vec!["no-such-command"],
    ];
    for args in cases {
        let out = nolan(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let d = diagnostic(&out);
        assert_eq!(d["kind"], "config", "{args:?}");
        assert_eq!(d["exit_code"], 2);
    }
}

#[test]
fn unreachable_adapter_exits_one() {
    let tmp = scratch();
    let out = nolan(&[
        "eval-pope", "--suite", s(suite()), "--endpoint", "tcp://127.0.0.1:1", "--runs", "1", "--out", s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(diagnostic(&out)["kind"], "source");
    let check = nolan(&["serve-check", "--endpoint", "tcp://127.0.0.1:1", "--out", s(tmp.path())]);
    assert_eq!(check.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir(&check).join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["checks"][0]["passed"], false);
}

#[test]
fn toml_config_drives_a_run() {
    let tmp = scratch();
    let config = tmp.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "command = \"eval-pope\"\n\n[engine]\nmode = \"nolan\"\npolicy = {{ policy = \"constant\", alpha = 0.0 }}\n\n\
             [source.synthetic]\nsuite = \"{}\"\n\n[seeds]\ncount = 1\n\n[output]\nformat = \"csv\"\n",
            s(suite())
        ),
    )
    .unwrap();
    let dir = ok(&["eval-pope", "--config", s(&config), "--out", s(tmp.path())]);
    assert!(dir.join("report.csv").is_file());
    let regular = ok(&["eval-pope", "--suite", s(suite()), "--mode", "regular", "--runs", "1", "--out", s(tmp.path())]);
    assert_eq!(fs::read(dir.join("metrics.json")).unwrap(), fs::read(regular.join("metrics.json")).unwrap());
}
