//! End-to-end checks of the command-line binary: artifact layout,
//! deterministic reruns, and the stale-artifact guard.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rp4bp"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("rp4bp-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn lagrange_writes_fingerprinted_report() {
    let out = tmp_dir("lagrange");
    let o = run(&["--set", "global.mu=0.0009537", "--out", out.to_str().unwrap(), "lagrange"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("L1:") && text.contains("L2:"), "{text}");
    let csv = read(&out, "reports/lagrange.csv");
    assert!(csv.starts_with("# fingerprint: "), "{csv}");
    assert!(csv.contains("point,x,critical_jacobi"), "{csv}");
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn hill_check_flips_across_the_critical_level() {
    let out = tmp_dir("hill");
    let mu = 1e-5f64;
    let j_of = |jh: f64| 3.0 * (1.0 - mu) + mu.powf(2.0 / 3.0) * jh;
    let mut verdicts = Vec::new();
    for jh in [4.0, 4.6] {
        let o = run(&[
            "--set",
            "global.mu=0.00001",
            "--set",
            &format!("hill.j={}", j_of(jh)),
            "--out",
            out.to_str().unwrap(),
            "hill-check",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        verdicts.push(stdout(&o).contains("open = true"));
    }
    assert_eq!(verdicts, [true, false]);
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn family_runs_are_byte_identical() {
    let args = |out: &Path| {
        vec![
            "--set".into(),
            "global.mu=0.0009537".into(),
            "--set".into(),
            "family.j_target=3.035".into(),
            "--out".into(),
            out.to_str().unwrap().to_string(),
            "lyapunov-family".into(),
        ]
    };
    let (a, b) = (tmp_dir("det-a"), tmp_dir("det-b"));
    for out in [&a, &b] {
        let o = bin().args(args(out)).output().expect("binary runs");
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(read(&a, "families/family_L1.csv"), read(&b, "families/family_L1.csv"));
    std::fs::remove_dir_all(&a).ok();
    std::fs::remove_dir_all(&b).ok();
}

#[test]
fn stale_artifact_is_refused() {
    let out = tmp_dir("stale");
    let base = [
        "--set",
        "global.mu=0.0009537",
        "--set",
        "family.j_target=3.035",
        "--out",
        out.to_str().unwrap(),
        "lyapunov-family",
    ];
    let o = run(&base);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // same store, different producing parameters: the cached family must be
    // rejected, not silently reused
    let mut changed = base;
    changed[3] = "family.j_target=3.036";
    let o = run(&changed);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("refusing to load"), "{err}");
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn pipeline_without_coupling_shows_no_drift() {
    let out = tmp_dir("pipe0");
    let o = run(&[
        "--set",
        "global.mu=0.0009537",
        "--set",
        "heteroclinic.j=3.03",
        "--set",
        "planet.m=63",
        "--set",
        "fourbody.delta=0",
        "--set",
        "diffuse.budget=60",
        "--out",
        out.to_str().unwrap(),
        "pipeline",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let slope: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("diffusion_slope = "))
        .expect("pipeline prints the diffusion slope")
        .trim()
        .parse()
        .unwrap();
    assert!(slope.abs() < 1e-12, "slope {slope}");
    assert!(out.join("reports/summary.txt").exists());
    assert!(out.join("traces/diffusion.csv").exists());
    std::fs::remove_dir_all(&out).ok();
}
