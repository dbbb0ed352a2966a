use std::path::{Path, PathBuf};
use std::process::Command;

use corrspec::harness::{ConcentrationReport, LimitComparisonReport};
use corrspec_cli::parse_stieltjes_csv;
use corrspec_cli::plot::{density_overlay_csv, emit_comparison, emit_concentration};
use num_complex::Complex64;

fn corrspec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_corrspec"))
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> (i32, String) {
    let o = corrspec()
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn selftest_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"command": "selftest"}"#);
    let out = dir.path().join("out");
    let (code, err) = run(&cfg, &out, &[]);
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value = serde_json::from_str(&read(out.join("selftest.json"))).unwrap();
    assert!(report.as_array().unwrap().iter().all(|c| c["pass"] == true));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn malformed_json_is_a_validation_error_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "bad.json", "{\"command\": \"solve\",\n  \"eta\": }");
    let (code, err) = run(&cfg, &out, &[]);
    assert_eq!(code, 2);
    assert!(err.contains("line 2"), "{err}");
    assert!(!out.exists());

    let cfg = write_config(dir.path(), "unknown.json", r#"{"command": "solve", "etaa": 1}"#);
    let (code, err) = run(&cfg, &out, &[]);
    assert_eq!(code, 2);
    assert!(err.contains("etaa"), "{err}");
    assert!(!out.exists());

    // schema-valid but semantically invalid: descending sizes
    let cfg = write_config(
        dir.path(),
        "sizes.json",
        r#"{"command": "simulate", "model": {"kind": "iid", "innovation": {"distribution": "rademacher"}}, "sizes": [32, 16]}"#,
    );
    assert_eq!(run(&cfg, &out, &[]).0, 2);
    assert!(!out.exists());

    let cfg = write_config(dir.path(), "missing.json", r#"{"command": "compare", "model_file": "nope.json"}"#);
    assert_eq!(run(&cfg, &out, &[]).0, 2);
    assert!(!out.exists());
}

#[test]
fn solve_constant_kernel_gives_semicircle_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "solve.json",
        r#"{
            "command": "solve",
            "gamma": {"0,0": 1.0},
            "z_points": [[0.0, 1.0], [0.5, 0.2]],
            "solver": {"grid_size": 16},
            "energies": {"min": -3.0, "max": 3.0, "count": 3001}
        }"#,
    );
    let out = dir.path().join("out");
    let (code, err) = run(&cfg, &out, &[]);
    assert_eq!(code, 0, "{err}");
    let rows = parse_stieltjes_csv(&read(out.join("stieltjes.csv")));
    let (z, s) = rows[0];
    assert_eq!(z, Complex64::i());
    assert!((s - Complex64::new(0.0, (5f64.sqrt() - 1.0) / 2.0)).norm() < 1e-6);
    let line = read(out.join("limit_solution.csv"));
    assert!(line.starts_with("E,eta,re_s,im_s,density\n"));
    assert_eq!(line.lines().count(), 3002);
    assert!(out.join("limit_cdf.csv").exists());
}

#[test]
fn convergence_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "slow.json",
        r#"{"command": "solve", "gamma": {"0,0": 1.0}, "z_points": [[0.0, 0.01]],
            "solver": {"grid_size": 8, "max_iterations": 2}}"#,
    );
    let out = dir.path().join("out");
    let (code, err) = run(&cfg, &out, &[]);
    assert_eq!(code, 3);
    assert!(err.contains("residual"), "{err}");
    assert!(!out.exists());
}

const COMPARE: &str = r#"{
    "command": "compare",
    "model": {"kind": "iid", "innovation": {"distribution": "standard_gaussian", "variance": 1.0}},
    "ensemble": {"kind": "wigner"},
    "sizes": [64, 200],
    "replicates": 3,
    "seed": 5,
    "eta": 0.002,
    "solver": {"grid_size": 8}
}"#;

#[test]
fn compare_is_reproducible_and_overlay_integrates_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cmp.json", COMPARE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&cfg, &a, &["--threads", "1"]).0, 0);
    assert_eq!(run(&cfg, &b, &["--threads", "2"]).0, 0);
    for f in ["density_overlay.csv", "distance_vs_n.csv", "report.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs between runs");
    }
    let overlay = read(a.join("density_overlay.csv"));
    let rows: Vec<Vec<f64>> = overlay
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    for col in [1, 2] {
        let mass: f64 = rows.windows(2).map(|w| 0.5 * (w[0][col] + w[1][col]) * (w[1][0] - w[0][0])).sum();
        assert!((mass - 1.0).abs() <= 0.03, "column {col}: mass {mass}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(a.join("manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sim.json",
        r#"{"command": "simulate", "model": {"kind": "iid", "innovation": {"distribution": "centered_uniform"}},
            "sizes": [8], "replicates": 2, "seed": 1}"#,
    );
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(run(&cfg, &a, &[]).0, 0);
    assert_eq!(run(&cfg, &b, &["--seed", "1"]).0, 0);
    assert_eq!(run(&cfg, &c, &["--seed", "2"]).0, 0);
    assert_eq!(read(a.join("stieltjes.csv")), read(b.join("stieltjes.csv")));
    assert_ne!(read(a.join("stieltjes.csv")), read(c.join("stieltjes.csv")));
    assert!(a.join("spectrum_n8_r1.csv").exists());
}

#[test]
fn concentration_and_universality_commands() {
    let dir = tempfile::tempdir().unwrap();
    let model = r#"{"kind": "linear", "coefficients": [{"offset": [0, 0], "value": 1.0}, {"offset": [1, 0], "value": 0.5}],
                    "innovation": {"distribution": "rademacher"}}"#;
    std::fs::write(dir.path().join("model.json"), model).unwrap();
    let cfg = write_config(
        dir.path(),
        "conc.json",
        r#"{"command": "concentration", "model_file": "model.json", "sizes": [16, 32], "replicates": 8,
            "concentration": {"k": 2, "radii": [0.0, 0.05]}}"#,
    );
    let out = dir.path().join("conc");
    let (code, err) = run(&cfg, &out, &[]);
    assert_eq!(code, 0, "{err}");
    let tails = read(out.join("tail_vs_r.csv"));
    assert!(tails.starts_with("n,r,frequency,bound,slack\n"));
    assert_eq!(tails.lines().count(), 5);

    // K below the model's dependence range
    let cfg = write_config(
        dir.path(),
        "conc_bad.json",
        r#"{"command": "concentration", "model_file": "model.json", "sizes": [16], "replicates": 2,
            "concentration": {"k": 1, "radii": [0.1]}}"#,
    );
    assert_eq!(run(&cfg, &dir.path().join("bad"), &[]).0, 2);

    let cfg = write_config(
        dir.path(),
        "uni.json",
        r#"{"command": "universality", "model_file": "model.json", "sizes": [16, 24], "replicates": 3,
            "ensemble": {"kind": "gram", "ratio": 0.5}}"#,
    );
    let out = dir.path().join("uni");
    assert_eq!(run(&cfg, &out, &[]).0, 0);
    assert_eq!(read(out.join("gap_vs_n.csv")).lines().count(), 3);
}

#[test]
fn wigner_compare_rejects_asymmetric_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "asym.json",
        r#"{"command": "compare",
            "model": {"kind": "linear", "coefficients": [{"offset": [0, 0], "value": 1.0}, {"offset": [1, 0], "value": 0.5}],
                      "innovation": {"distribution": "standard_gaussian"}},
            "sizes": [16], "replicates": 1}"#,
    );
    let (code, err) = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(code, 2);
    assert!(err.contains("gamma(k, l) = gamma(l, k)"), "{err}");
}

#[test]
fn empty_reports_give_header_only_csvs() {
    let comparison = LimitComparisonReport {
        config_hash: String::new(),
        seed: 0,
        sizes: Vec::new(),
        eta: 1e-3,
        solver_mass: 1.0,
        energies: Vec::new(),
        solver_density: Vec::new(),
        largest_spectrum: None,
        levy_threshold: 0.05,
        within_threshold: false,
    };
    for (name, csv) in emit_comparison(&comparison) {
        assert_eq!(csv.lines().count(), 1, "{name}");
    }
    let concentration = ConcentrationReport {
        config_hash: String::new(),
        seed: 0,
        z: Complex64::i(),
        k: 1,
        tails: Vec::new(),
        std: Vec::new(),
        decay_exponent: None,
        all_within_bound: true,
    };
    for (name, csv) in emit_concentration(&concentration) {
        assert_eq!(csv.lines().count(), 1, "{name}");
    }
    assert_eq!(density_overlay_csv(&[], &[], &[]), "E,empirical,solver\n");
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"command": "selftest"}"#);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let (code, _) = run(&cfg, &blocker.join("out"), &[]);
    assert_eq!(code, 1);
}
