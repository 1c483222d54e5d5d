use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};

fn prgf() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_prgf"));
    cmd.env_remove("PRGF_SEED");
    cmd
}

fn write_config(dir: &Path, json: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

struct Server(Child);

impl Server {
    fn start(args: &[&str]) -> (Self, String) {
        let mut child = prgf().arg("serve").args(args).stdout(Stdio::piped()).spawn().unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .expect("listening line")
            .to_string();
        (Self(child), addr)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn zero_directions_is_rejected_before_anything_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"kind": "linear", "dim": 8, "seed": 0}, "estimator": {"q": 0}}"#,
    );
    let status = prgf()
        .args(["attack", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert!(!status.success());
    assert!(!out.exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"kind": "linear", "dim": 8, "seed": 0}, "typo": true}"#,
    );
    let status = prgf()
        .args(["attack", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert!(!status.success());
}

#[test]
fn attack_writes_one_summary_row_per_method() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        r#"{
            "model": {"kind": "softplus", "dim": 32, "seed": 1},
            "methods": ["rgf", "prgf", {"method": "prgf", "lambda": 0.5}],
            "estimator": {"q": 10},
            "attack": {"max_queries": 500},
            "seeds": {"start": 0, "count": 5}
        }"#,
    );
    let status = prgf()
        .args(["attack", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let rows = csv_rows(&out.join("summary.csv"));
    assert_eq!(rows[0], "method,norm,ASR,avg_queries,seeds");
    assert_eq!(rows.len(), 4);
    assert!(rows[3].starts_with("prgf(lambda=0.5),l2,"));
    let traces = csv_rows(&out.join("traces.jsonl"));
    assert_eq!(traces.len(), 15);
    assert!(out.join("curve.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["estimator"]["q"], 10);
}

#[test]
fn seed_environment_variable_is_only_a_default() {
    let tmp = tempfile::tempdir().unwrap();
    let base =
        r#"{"model": {"kind": "linear", "dim": 8, "seed": 0}, "methods": ["rgf"], "attack": {"max_queries": 50}"#;
    let cfg = write_config(tmp.path(), &format!("{base}}}"));
    let out = tmp.path().join("a");
    let status = prgf()
        .env("PRGF_SEED", "17")
        .args(["attack", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(csv_rows(&out.join("traces.jsonl"))[0].contains(r#""seed":17"#));

    let cfg = write_config(tmp.path(), &format!(r#"{base}, "seeds": [3]}}"#));
    let out = tmp.path().join("b");
    let status = prgf()
        .env("PRGF_SEED", "17")
        .args(["attack", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(csv_rows(&out.join("traces.jsonl"))[0].contains(r#""seed":3"#));
}

#[test]
fn verify_lambda_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let output = prgf()
        .args(["verify", "--suite", "lambda", "--seed", "1", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("suite lambda seed 1: PASS"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("lambda.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn verify_rejects_unknown_suite() {
    let status = prgf()
        .args(["verify", "--suite", "bogus"])
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert!(!status.success());
}

#[test]
fn remote_attack_matches_local_schema_and_budget_is_exact() {
    let (_server, addr) = Server::start(&["--model", "linear", "--dim", "16", "--seed", "4", "--budget", "10000"]);
    let tmp = tempfile::tempdir().unwrap();
    // The threshold is out of reach, so every query up to the budget is spent.
    let cfg = write_config(
        tmp.path(),
        r#"{
            "model": {"kind": "linear", "dim": 16, "seed": 4},
            "methods": ["rgf", "prgf"],
            "estimator": {"q": 5},
            "attack": {"max_queries": 20000, "success_rule": {"kind": "loss_above", "threshold": 1e12}},
            "seeds": [0]
        }"#,
    );
    let remote = tmp.path().join("remote");
    let status = prgf()
        .args(["attack", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&remote)
        .arg("--oracle")
        .arg(format!("remote://{addr}"))
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    for line in csv_rows(&remote.join("traces.jsonl")) {
        let t: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(t["outcome"]["status"], "budget_exhausted");
        assert_eq!(t["outcome"]["queries"], 10000);
    }

    let local = tmp.path().join("local");
    let status = prgf()
        .args(["attack", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&local)
        .arg("--budget")
        .arg("10000")
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let (r, l) = (
        csv_rows(&remote.join("summary.csv")),
        csv_rows(&local.join("summary.csv")),
    );
    assert_eq!(r[0], l[0]);
    assert_eq!(r.len(), l.len());
}
