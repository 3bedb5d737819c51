use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_carleman-lab"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const GOLDEN: &str = r#"
seed = 11

[grid]
dim = 1
nx = 201
nt = 401
t_final = 2.0

[[experiment]]
name = "golden"
kind = "stability"
case = "case1"
delta = [0.1, 0.01]
"#;

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.toml", GOLDEN);
    let a = run(dir.path(), &["run", "--manifest", &m, "--out", "a"]);
    let b = run(dir.path(), &["run", "--manifest", &m, "--out", "b", "--threads", "1"]);
    assert!(a.status.success() && b.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    for f in ["golden.csv", "summary.csv"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let text = std::fs::read_to_string(dir.path().join("a/golden.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("case,delta,h,tau,s,lambda,norm_rho,norm_A,norm_divA,obs_norm,ratio"));
}

#[test]
fn centre_inside_domain_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(
        dir.path(),
        "m.toml",
        "[grid]\ndim = 1\nnx = 21\nnt = 21\nt_final = 2.0\n[weight]\nx0 = [0.5]\n[[experiment]]\nname = \"c\"\nkind = \"carleman\"\n",
    );
    let out = run(dir.path(), &["run", "--manifest", &m]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("x0"), "{err}");
    assert!(!dir.path().join("results").exists());
}

#[test]
fn zero_amplitude_is_degenerate_not_failure() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(
        dir.path(),
        "m.toml",
        "[grid]\ndim = 1\nnx = 21\nnt = 41\nt_final = 2.0\n[[experiment]]\nname = \"z\"\nkind = \"stability\"\ncase = \"case1\"\ndelta = [0.0]\n",
    );
    let out = run(dir.path(), &["stability", "--manifest", &m]);
    assert_eq!(out.status.code(), Some(0));
    let summary = std::fs::read_to_string(dir.path().join("results/summary.csv")).unwrap();
    assert!(summary.contains(",degenerate,"), "{summary}");
}

#[test]
fn quadratic_cutoff_rejected_for_case3() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(
        dir.path(),
        "m.toml",
        "[grid]\ndim = 2\nnx = 11\nnt = 11\nt_final = 2.0\n[[experiment]]\nname = \"q\"\nkind = \"stability\"\ncase = \"case3\"\ncutoff = \"quadratic\"\n",
    );
    let out = run(dir.path(), &["stability", "case3", "--manifest", &m]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cutoff gradient"));
}

#[test]
fn single_parameter_check_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.toml", "[grid]\ndim = 1\nnx = 41\nnt = 81\nt_final = 2.0\n[[experiment]]\nname = \"one\"\nkind = \"carleman\"\n");
    let out = run(dir.path(), &["carleman-verify", "--manifest", &m, "--s", "50", "--members", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("results/one.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn unknown_subcommand_and_case_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_ne!(run(dir.path(), &["frobnicate"]).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["stability", "case9"]).status.code(), Some(2));
}

#[test]
fn malformed_manifest_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "m.toml", "[grid]\ndim = 1\nnx = \"many\"\n");
    let out = run(dir.path(), &["run", "--manifest", &m]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}
