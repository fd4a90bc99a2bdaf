use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_persuasion")).args(args).output().expect("run persuasion")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_artifacts_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run_ok(&["solve", "--config", s(&config("two_uniform")), "--out", s(dir.path()), "--grid", "257"]);
    for f in ["mechanism.json", "buyer_0.csv", "buyer_1.csv", "summary.txt"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert_eq!(stdout, summary);
    assert_eq!(summary.matches("cutoff type: 0.500000").count(), 2, "{summary}");
    assert!(summary.contains("xi structure: lower"));
    assert!(summary.contains("revenue: 0.416667"));
    let csv = std::fs::read_to_string(dir.path().join("buyer_0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 258);
}

#[test]
fn irregular_instance_reports_an_ironed_interval() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run_ok(&["solve", "--config", s(&config("bimodal_xi_v")), "--out", s(dir.path())]);
    assert!(stdout.contains("regular: false"));
    let n: usize = stdout
        .lines()
        .filter_map(|l| l.trim().strip_prefix("ironed intervals: "))
        .map(|v| v.parse::<usize>().unwrap())
        .sum();
    assert!(n >= 1, "{stdout}");
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"schema\": \"persuasion.instance/v1\",\n  \"buyers\": [\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["solve", "--config", s(&bad), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    assert!(!out_dir.exists());

    std::fs::write(&bad, std::fs::read_to_string(config("two_uniform")).unwrap().replace("\"hi\": 1", "\"hi\": -1"))
        .unwrap();
    let out = run(&["solve", "--config", s(&bad), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn concave_valuation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("concave.json");
    let text = std::fs::read_to_string(config("two_uniform")).unwrap().replace(
        "\"valuation\": \"linear\"",
        r#""valuation": {"kind": "general",
            "value_type": {"kind": "power", "scale": 1, "exponent": 0.5},
            "value_quality": {"kind": "constant", "value": 1},
            "slope_type": {"kind": "power", "scale": 0.5, "exponent": -0.5},
            "slope_quality": {"kind": "constant", "value": 1}}"#,
    );
    std::fs::write(&path, text).unwrap();
    let out = run(&["solve", "--config", s(&path), "--out", s(&dir.path().join("out")), "--grid", "65"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_passes_on_solved_mechanism_and_fails_on_tampered_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("two_uniform_xi_increasing");
    run_ok(&["solve", "--config", s(&cfg), "--out", s(dir.path()), "--grid", "257"]);
    let mech = dir.path().join("mechanism.json");
    let report = run_ok(&["verify", "--config", s(&cfg), "--mechanism", s(&mech), "--grid", "257"]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["ic_max_regret"].as_array().unwrap().iter().all(|r| r.as_f64().unwrap() <= 1e-3));

    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&mech).unwrap()).unwrap();
    for p in doc["buyers"][0]["payment"].as_array_mut().unwrap() {
        if let Some(x) = p.as_f64() {
            *p = (x + 0.1).into();
        }
    }
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, doc.to_string()).unwrap();
    let out = run(&["verify", "--config", s(&cfg), "--mechanism", s(&tampered), "--grid", "257"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_reproducible() {
    let cfg = config("two_uniform");
    let args = ["simulate", "--config", s(&cfg), "--grid", "257", "--samples", "20000", "--seed", "11"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let (mean, se) = (v["revenue_mean"].as_f64().unwrap(), v["revenue_stderr"].as_f64().unwrap());
    assert!((mean - 5.0 / 12.0).abs() < 4.0 * se, "{mean} {se}");
}

#[test]
fn compare_matches_the_auction_baseline_on_constant_quality() {
    let text = run_ok(&["compare", "--config", s(&config("two_uniform")), "--grid", "257"]);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (method, revenue) = (col("method"), col("revenue"));
    let rows: Vec<(String, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[method].to_string(), r[revenue].parse().unwrap())
        })
        .collect();
    let get = |m: &str| rows.iter().find(|r| r.0 == m).unwrap().1;
    assert!((get("optimal") - get("myerson")).abs() <= 1e-6, "{rows:?}");
    assert!(get("constant_price") <= get("optimal") + 1e-9);
    assert_eq!(text, run_ok(&["compare", "--config", s(&config("two_uniform")), "--grid", "257"]));
}

#[test]
fn info_lists_acceptance_sets() {
    let text = run_ok(&["info", "--config", s(&config("two_uniform_xi_hat")), "--grid", "257", "--types", "11"]);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("buyer,type,phi_bar,segment_list,mass,posterior_mean,plateau"));
    assert_eq!(lines.count(), 22);
    // a hat-shaped xi gives two-piece acceptance sets for high types
    assert!(text.contains("];["));
}
