//! End-to-end CLI checks: exit codes, file outputs, round-tripping, and
//! the determinism contract.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dissipa"))
}

fn quick_conic_config(divisions: usize) -> String {
    format!(
        r#"
[model]
n = 1
m = 1
p = 1
f = ["x1^3 - 3*x1"]
h = ["x1"]
b = [[1.0]]

[region]
box_lo = [-1.0]
box_hi = [1.0]
divisions = [{divisions}]

[analysis]
mode = "conic"

[verify]
trials = 20
samples_per_simplex = 40
horizon = 2.0
seed = 0

[sweep]
divisions = [20, 40]
"#
    )
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn malformed_config_exits_one_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        "[model]\nm = 1\np = 1\nf = [\"x1\"]\nh = [\"x1\"]\n\n[region]\nbox_lo = [-1.0]\nbox_hi = [1.0]\ndivisions = [10]\n\n[analysis]\nmode = \"l2_gain\"\n",
    );
    let out = bin()
        .args(["--config", path.to_str().unwrap(), "analyze"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("model") && stderr.contains("n"), "stderr: {stderr}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = quick_conic_config(20);
    text.push_str("\n[analysis.bogus]\nkey = 1\n");
    let path = write_config(dir.path(), &text);
    let out = bin()
        .args(["--config", path.to_str().unwrap(), "analyze"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_verify_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &quick_conic_config(20));
    let out_dir = dir.path().join("out");

    let run = |suffix: &str| -> Vec<u8> {
        let out_dir = dir.path().join(suffix);
        let out = bin()
            .args([
                "--config",
                path.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "analyze",
            ])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("result.json")).unwrap()
    };

    let first = run("out");
    let second = run("out2");
    assert_eq!(first, second, "result JSON must be byte-identical across runs");

    assert!(out_dir.join("storage.csv").exists());
    let storage = std::fs::read_to_string(out_dir.join("storage.csv")).unwrap();
    assert!(storage.starts_with("x1,V\n"));

    // Re-verify the emitted result with the same seed.
    let out = bin()
        .args([
            "--config",
            path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "verify",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"), "stdout: {stdout}");
}

#[test]
fn report_summarizes_cone_and_fails_cleanly_on_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &quick_conic_config(20));
    let out_dir = dir.path().join("out");
    let out = bin()
        .args([
            "--config",
            path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "analyze",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    let result_path = out_dir.join("result.json");
    let out = bin()
        .args(["report", result_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("cone(a="), "stdout: {stdout}");
    assert!(stdout.contains("simplices"), "stdout: {stdout}");
    assert!(stdout.contains("verified"), "stdout: {stdout}");

    let missing = bin().args(["report", "/nonexistent/result.json"]).output().unwrap();
    assert_ne!(missing.status.code(), Some(0));
    assert!(missing.stdout.is_empty(), "no partial output on failure");
}

#[test]
fn l2_report_has_gain_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
[model]
n = 1
m = 1
p = 1
f = ["-x1"]
h = ["x1"]

[region]
box_lo = [-1.0]
box_hi = [1.0]
divisions = [10]

[analysis]
mode = "l2_gain"
variant = "no_affine"

[verify]
trials = 10
samples_per_simplex = 20
horizon = 1.0
"#;
    let path = write_config(dir.path(), config);
    let out_dir = dir.path().join("out");
    let out = bin()
        .args([
            "--config",
            path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "analyze",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let out = bin()
        .args(["report", out_dir.join("result.json").to_str().unwrap()])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("L2 gain gamma = "), "stdout: {stdout}");
}

#[test]
fn mesh_subcommand_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &quick_conic_config(20));
    let out_dir = dir.path().join("out");
    let out = bin()
        .args([
            "--config",
            path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "mesh",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let vertices = std::fs::read_to_string(out_dir.join("mesh_vertices.csv")).unwrap();
    assert!(vertices.starts_with("id,x1\n"));
    let simplices = std::fs::read_to_string(out_dir.join("mesh_simplices.csv")).unwrap();
    // 20 cells minus the two excluded around the origin.
    assert_eq!(simplices.lines().count(), 1 + 18);
}

#[test]
fn sweep_writes_table_with_headline_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &quick_conic_config(20));
    let out_dir = dir.path().join("out");
    let out = bin()
        .args([
            "--config",
            path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "sweep",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "divisions,simplices,status,objective,headline,value_a,value_b,iterations,verified"
    );
    assert_eq!(lines.count(), 2);
    assert!(table.contains("cone"));
}

#[test]
fn infeasible_run_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // Unstable plant: x' = +x + u has no storage certificate.
    let config = r#"
[model]
n = 1
m = 1
p = 1
f = ["x1"]
h = ["x1"]
b = [[1.0]]

[region]
box_lo = [-1.0]
box_hi = [1.0]
divisions = [20]

[analysis]
mode = "l2_gain"

[verify]
trials = 5
samples_per_simplex = 10
"#;
    let path = write_config(dir.path(), config);
    let out = bin()
        .args(["--config", path.to_str().unwrap(), "analyze"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}
