//! End-to-end tests of the `qbm` binary and the scenario pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qbm_core::io::{compare_runs, read_table_file, Tolerance};
use qbm_core::positivity::{CPAuditReport, Verdict};
use qbm_core::run::{run_scenario, RunManifest, MANIFEST_FILE};
use qbm_core::scenario::{parse_scenario, parse_scenario_str};

fn qbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.json");
    fs::write(&p, text).unwrap();
    p
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

const FREE_JZ: &str = r#"{
    "name": "free_jz",
    "system": {"mass": 1.0, "omega_s": 0.0},
    "bath": {"gamma": 0.1, "temperature": 2.0},
    "equation": {"variants": ["JZ"]},
    "run": {
        "t_span": [0.0, 5.0],
        "dt": 0.01,
        "record_every": 10,
        "initial_state": {"kind": "coherent", "q": 0.0, "p": 0.5}
    }
}"#;

#[test]
fn jz_run_gives_undamped_momentum_and_linear_heating() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write_scenario(dir.path(), FREE_JZ);
    let out = dir.path().join("out");
    let res = qbm(&[
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let table = read_table_file(&out.join("moments_jz.csv")).unwrap();
    let (t, p, spp) = (
        table.column("t").unwrap(),
        table.column("mean_p").unwrap(),
        table.column("s_pp").unwrap(),
    );
    // 4mγk_BT
    let slope = 4.0 * 0.1 * 2.0;
    for k in 0..t.len() {
        assert!((p[k] - 0.5).abs() < 1e-12);
        assert!((spp[k] - spp[0] - slope * t[k]).abs() < 1e-10);
    }
    let m = manifest(&out);
    assert!(m.warnings.is_empty(), "{:?}", m.warnings);
    for f in &m.outputs {
        assert!(out.join(f).exists());
    }
}

#[test]
fn validation_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write_scenario(
        dir.path(),
        &FREE_JZ.replace("\"temperature\": 2.0", "\"temperature\": -1.0"),
    );
    let res = qbm(&[
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("bath.temperature"));

    let res = qbm(&[
        "--scenario",
        dir.path().join("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = FREE_JZ
        .replace("\"gamma\": 0.1", "\"gamma\": 1000.0")
        .replace("[\"JZ\"]", "[\"CL\"]")
        .replace("\"dt\": 0.01", "\"dt\": 1.0")
        .replace("[0.0, 5.0]", "[0.0, 1000.0]");
    let scen = write_scenario(dir.path(), &text);
    let res = qbm(&[
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(
        res.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
}

#[test]
fn unknown_keys_follow_strictness() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write_scenario(
        dir.path(),
        &FREE_JZ.replace("\"mass\": 1.0", "\"mass\": 1.0, \"spin\": 0.5"),
    );
    let out = dir.path().join("out");
    let strict = qbm(&[
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(strict.status.code(), Some(2));
    let lax = qbm(&[
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--no-strict",
    ]);
    assert_eq!(lax.status.code(), Some(0));
    assert!(manifest(&out)
        .warnings
        .iter()
        .any(|w| w.contains("system.spin")));
}

#[test]
fn outputs_are_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
        "name": "det",
        "system": {"mass": 1.0, "omega_s": 1.0},
        "bath": {"gamma": 0.2, "temperature": 2.0},
        "equation": {"variants": ["CCL"]},
        "run": {
            "t_span": [0.0, 0.5],
            "dt": 0.001,
            "record_every": 100,
            "initial_state": {"kind": "coherent", "q": 1.0, "p": 0.0}
        },
        "stochastic": {"dim": 20, "n_traj": 100, "seed": 4, "record_every": 100, "estimator": "tilted"}
    }"#;
    let scen = write_scenario(dir.path(), text);
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let res = qbm(&[
            "--scenario",
            scen.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert_eq!(
            res.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
        out
    };
    let (a, b) = (run("a", "1"), run("b", "3"));
    let m = manifest(&a);
    assert!(m.outputs.contains(&"ensemble_ccl.csv".to_string()));
    for f in &m.outputs {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    let c = dir.path().join("c");
    let res = qbm(&[
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert_eq!(res.status.code(), Some(0));
    assert_ne!(manifest(&c).scenario_hash, m.scenario_hash);
    assert_ne!(
        fs::read(a.join("ensemble_ccl.csv")).unwrap(),
        fs::read(c.join("ensemble_ccl.csv")).unwrap()
    );
}

#[test]
fn compare_flag_reports_and_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write_scenario(dir.path(), FREE_JZ);
    let out = dir.path().join("out");
    qbm(&[
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = out.join("moments_jz.csv");
    let csv = csv.to_str().unwrap();
    let same = qbm(&["--compare", csv, csv]);
    assert_eq!(same.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&same.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["columns"]["s_pp"]["max_abs"], 0.0);

    // fewer rows is a grid mismatch
    let text = fs::read_to_string(csv).unwrap();
    let other = dir.path().join("other.csv");
    fs::write(&other, &text[..text.trim_end().rfind('\n').unwrap() + 1]).unwrap();
    let mismatch = qbm(&["--compare", csv, other.to_str().unwrap()]);
    assert_eq!(mismatch.status.code(), Some(2));

    // friction damps the mean momentum
    let scen = write_scenario(dir.path(), &FREE_JZ.replace("[\"JZ\"]", "[\"JZ\", \"CL\"]"));
    qbm(&[
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let fail = qbm(&[
        "--compare",
        csv,
        out.join("moments_cl.csv").to_str().unwrap(),
        "--columns",
        "mean_p",
    ]);
    assert_eq!(fail.status.code(), Some(1));
}

#[test]
fn shipped_scenarios_parse_and_round_trip() {
    for name in [
        "jz_decoherence",
        "cl_regime",
        "ccl_unraveling",
        "hpz_audit",
        "qp_coupling",
        "cl_vs_ccl",
    ] {
        let s = parse_scenario(shipped(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(s.name, name);
        let again = parse_scenario_str(&s.to_json().unwrap(), true)
            .unwrap()
            .scenario;
        assert_eq!(s, again, "{name}");
    }
}

#[test]
fn cl_and_ccl_share_mean_trajectories() {
    let mut s = parse_scenario(shipped("cl_vs_ccl")).unwrap();
    s.run
        .outputs
        .retain(|o| *o == qbm_core::scenario::Output::Moments);
    let dir = tempfile::tempdir().unwrap();
    run_scenario(&s, dir.path()).unwrap();
    let (a, b) = (
        dir.path().join("moments_cl.csv"),
        dir.path().join("moments_ccl.csv"),
    );
    let cols = ["mean_q".to_string(), "mean_p".to_string()];
    assert!(
        compare_runs(&a, &b, &cols, Tolerance::absolute(1e-6))
            .unwrap()
            .pass
    );
    // the extra momentum diffusion shows up in σ_qq
    let s_qq = ["s_qq".to_string()];
    assert!(
        !compare_runs(&a, &b, &s_qq, Tolerance::absolute(1e-6))
            .unwrap()
            .pass
    );
}

#[test]
fn hpz_audit_reports_not_cp() {
    let s = parse_scenario(shipped("hpz_audit")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = run_scenario(&s, dir.path()).unwrap();
    assert!(m.outputs.contains(&"coefficients.csv".to_string()));
    let report: CPAuditReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("audit_hpz.json")).unwrap())
            .unwrap();
    assert_eq!(report.verdict, Verdict::NotCP);
    let delta: CPAuditReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("audit_hpz_delta.json")).unwrap())
            .unwrap();
    assert_eq!(delta.verdict, Verdict::CpSemigroupForm);
    assert!(m
        .warnings
        .iter()
        .any(|w| w.starts_with("hpz:") && w.contains("NotCP")));
    let header = fs::read_to_string(dir.path().join("coefficients.csv")).unwrap();
    assert!(header.starts_with(&format!(
        "# qbm {} scenario={}",
        m.tool_version, m.scenario_hash
    )));
}

#[test]
fn stochastic_scenario_writes_ensemble_and_comparison() {
    let mut s = parse_scenario(shipped("ccl_unraveling")).unwrap();
    let st = s.stochastic.as_mut().unwrap();
    st.n_traj = 300;
    st.dim = 24;
    st.record_every = 250;
    s.run.t_span = [0.0, 1.0];
    let dir = tempfile::tempdir().unwrap();
    let m = run_scenario(&s, dir.path()).unwrap();
    let cmp = read_table_file(&dir.path().join("comparison_ccl.csv")).unwrap();
    assert_eq!(cmp.column("t").unwrap().len(), 5);
    let ens = read_table_file(&dir.path().join("ensemble_ccl.csv")).unwrap();
    let trace = ens.column("trace").unwrap();
    assert!(trace.iter().all(|v| (v - 1.0).abs() < 1e-9));
    assert!(m.outputs.contains(&"moments_ccl.csv".to_string()));
}

#[test]
fn jz_matches_delta_limit_hpz_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write_scenario(
        dir.path(),
        &FREE_JZ.replace("[\"JZ\"]", "[\"JZ\", \"HPZDelta\"]"),
    );
    let out = dir.path().join("out");
    qbm(&[
        "--scenario",
        scen.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let res = qbm(&[
        "--compare",
        out.join("moments_jz.csv").to_str().unwrap(),
        out.join("moments_hpz_delta.csv").to_str().unwrap(),
        "--tol",
        "1e-8",
    ]);
    assert_eq!(res.status.code(), Some(0));
}
