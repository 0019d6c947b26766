use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latentbias"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const PLANTED: &str = r#"{
  "kind": "planted",
  "planted": {"n_a": 60, "n_b": 60, "n_e": 30, "n_p": 30, "bias_strength": 1.0, "noise_sigma": 0.3},
  "permutations": 499
}"#;

fn generate(dir: &Path, recipe: &str, seed: &str) -> Output {
    let recipe_path = dir.join("recipe.json");
    std::fs::write(&recipe_path, recipe).unwrap();
    run(&["generate", s(&recipe_path), "--seed", seed, "--output", s(&dir.join("data"))])
}

#[test]
fn missing_embeddings_exit_one_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), PLANTED, "1").status.success());
    std::fs::remove_file(dir.path().join("data/embeddings.tsv")).unwrap();
    let out = run(&["audit", s(&dir.path().join("data/audit.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `ingest` failed"), "{err}");
}

#[test]
fn malformed_config_fails_in_config_stage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.json");
    std::fs::write(&path, r#"{"attribute_name": "x"}"#).unwrap();
    let out = run(&["audit", s(&path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `config` failed"));
}

#[test]
fn planted_bias_exits_ten_with_markdown_flags() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), PLANTED, "3").status.success());
    let config = dir.path().join("data/audit.json");
    let out = run(&["audit", s(&config), "--format", "markdown", "--permutations", "999", "--alpha", "0.05"]);
    assert_eq!(out.status.code(), Some(10), "{}", String::from_utf8_lossy(&out.stderr));
    let md = String::from_utf8_lossy(&out.stdout);
    assert!(md.contains("| flag |") && md.contains("FLAGGED"));
}

#[test]
fn unbiased_space_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let recipe = PLANTED.replace(
        "\"bias_strength\": 1.0",
        "\"bias_strength\": 0.0, \"e_alignment\": 0.5, \"p_alignment\": 0.5",
    );
    assert!(generate(dir.path(), &recipe, "0").status.success());
    let out = run(&["audit", s(&dir.path().join("data/audit.json"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn generate_and_audit_are_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), PLANTED, "5").status.success());
    let first = std::fs::read(dir.path().join("data/embeddings.tsv")).unwrap();
    assert!(generate(dir.path(), PLANTED, "5").status.success());
    assert_eq!(first, std::fs::read(dir.path().join("data/embeddings.tsv")).unwrap());

    let config = dir.path().join("data/audit.json");
    let one = run(&["--workers", "1", "audit", s(&config)]);
    let eight = run(&["--workers", "8", "audit", s(&config)]);
    assert_eq!(one.status.code(), eight.status.code());
    assert_eq!(one.stdout, eight.stdout);
}

#[test]
fn compare_identical_reports_gives_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), PLANTED, "2").status.success());
    let report = dir.path().join("report.json");
    let out = run(&["audit", s(&dir.path().join("data/audit.json")), "--output", s(&report)]);
    assert_eq!(out.status.code(), Some(10));
    let out = run(&["compare", s(&report), s(&report)]);
    assert!(out.status.success());
    let cmp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for m in cmp["comparisons"][0]["metrics"].as_array().unwrap() {
        assert_eq!(m["delta"].as_f64(), Some(0.0));
    }
}

#[test]
fn compare_rejects_mismatched_schemas() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), PLANTED, "2").status.success());
    let report = dir.path().join("report.json");
    run(&["audit", s(&dir.path().join("data/audit.json")), "--output", s(&report)]);
    let text = std::fs::read_to_string(&report).unwrap();
    let other = dir.path().join("other.json");
    std::fs::write(&other, text.replace("\"attribute_name\": \"planted\"", "\"attribute_name\": \"age\"")).unwrap();
    let out = run(&["compare", s(&report), s(&other)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `compare` failed"));
}

#[test]
fn mf_pair_compares_with_chi_square() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), r#"{"kind": "mf", "permutations": 499}"#, "1").status.success());
    let mut reports = Vec::new();
    for tag in ["with", "without"] {
        let report = dir.path().join(format!("{tag}.json"));
        let out = run(&["audit", s(&dir.path().join(format!("data/audit-{tag}.json"))), "-o", s(&report)]);
        assert!(matches!(out.status.code(), Some(0 | 10)), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(report);
    }
    let out = run(&["compare", s(&reports[0]), s(&reports[1]), "--format", "markdown"]);
    assert!(out.status.success());
    let md = String::from_utf8_lossy(&out.stdout);
    assert!(md.contains("deaa") && md.contains("chi-square"), "{md}");
}

#[test]
fn project_writes_scatter_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), PLANTED, "4").status.success());
    let plots = dir.path().join("plots");
    let out = run(&["project", s(&dir.path().join("data/audit.json")), "--plot-dir", s(&plots)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(plots.join("planted-projection.csv").exists());
    let svg = std::fs::read_to_string(plots.join("planted-projection.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["planted"]["pc1_centroid_cosine"].as_f64().unwrap() > 0.9);
}

#[test]
fn validate_direction_reports_three_p_values() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), PLANTED, "6").status.success());
    let out = run(&["validate-direction", s(&dir.path().join("data/audit.json"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let dirs = v[0]["directions"].as_array().unwrap();
    assert_eq!(dirs.len(), 3);
    assert!(dirs[0]["direction"]["validation"]["test3_p"].is_number());
}
