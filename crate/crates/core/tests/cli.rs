use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use apsim::config::RunConfig;
use serde_json::Value;

fn apsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| {
            r.unwrap()
                .iter()
                .map(|f| if f.is_empty() { f64::NAN } else { f.parse().unwrap() })
                .collect()
        })
        .collect();
    (header, rows)
}

fn strip_metadata(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("metadata");
    v
}

#[test]
fn shipped_default_config_is_the_built_in_default() {
    let cfg = RunConfig::load(Some(&repo_file("configs/default.toml")), &[]).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn simulate_default_operating_point() {
    let v = ok_json(&apsim(&["simulate"]));
    let r = &v["results"];
    let p = r["p_AS"]["value"].as_f64().unwrap();
    assert!((p - 2e-3).abs() < 1e-6, "{p}");
    let s = r["S"]["value"].as_f64().unwrap();
    assert!((2.45..=2.75).contains(&s), "{s}");
    let g2 = r["g2"]["value"].as_f64().unwrap();
    assert!(g2 > 20.0, "{g2}");
    assert!((r["g2_unmatched"]["value"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(r["leaked_population"].as_f64().unwrap() < 1e-6);
    assert_eq!(r["mode_match"]["left"]["counter_propagating"], Value::Bool(true));
    assert_eq!(v["config"]["eta_AS"].as_f64(), Some(0.08));
    assert!(v["metadata"]["timestamp_unix"].is_u64());
}

#[test]
fn simulate_vacuum_flags_undefined_g2() {
    let v = ok_json(&apsim(&["simulate", "--set", "chi_L=0", "--set", "chi_R=0"]));
    assert_eq!(v["results"]["g2_undefined"], Value::Bool(true));
    assert!(v["results"]["g2"].is_null());
    assert_eq!(v["results"]["p_AS"]["value"].as_f64(), Some(0.0));
}

#[test]
fn input_errors_exit_2_and_name_the_key() {
    let out = apsim(&["simulate", "--set", "eta_AS=1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("eta_AS out of range"), "{}", stderr(&out));

    let out = apsim(&["simulate", "--set", "etaAS=0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("etaAS"), "{}", stderr(&out));

    let out = apsim(&["simulate", "--config", "/nonexistent/x.toml"]);
    assert_eq!(out.status.code(), Some(2));

    let out = apsim(&["sweep", "visibility", "--grid", "0.5:0.6:2"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let out = apsim(&["sweep", "bell", "--grid", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));

    let out = apsim(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_physics_exits_3() {
    let out = apsim(&["simulate", "--set", "stokes_noise_ratio=100"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn bell_sweep_default_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let v = ok_json(&apsim(&["sweep", "bell", "--out-dir", d]));
    let (header, rows) = read_csv(&dir.path().join("bell.csv"));
    assert_eq!(header, ["tau_us", "S", "S_err", "sigma_violation"]);
    assert_eq!(rows.len(), 10);
    assert!(rows.windows(2).all(|w| w[1][1] <= w[0][1]), "{rows:?}");
    // CSV and JSON carry the same full-precision numbers
    let pts = v["result"]["points"].as_array().unwrap();
    for (row, pt) in rows.iter().zip(pts) {
        assert_eq!(row[0], pt["x"].as_f64().unwrap());
        assert_eq!(row[1], pt["estimates"]["S"]["value"].as_f64().unwrap());
    }
    assert!(dir.path().join("bell.json").exists());
}

#[test]
fn visibility_sweep_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok_json(&apsim(&["sweep", "visibility", "--grid", "2e-3:2e-3:1", "--out-dir", d]));
    let (header, rows) = read_csv(&dir.path().join("visibility.csv"));
    assert_eq!(header, ["p_AS", "V", "V_err"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], 2e-3);
    assert!(rows[0][1] > 0.85 && rows[0][1] < 0.95, "{rows:?}");
}

#[test]
fn decay_sweep_hits_anchor_bands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok_json(&apsim(&["sweep", "decay", "--out-dir", d]));
    let (header, rows) = read_csv(&dir.path().join("decay.csv"));
    assert_eq!(header, ["tau_us", "eta_retrieve", "eta_err", "g2", "g2_err"]);
    let at = |t: f64| rows.iter().find(|r| r[0] == t).unwrap();
    assert!((at(0.5)[1] - 0.122).abs() < 1e-3);
    assert!((at(20.5)[1] - 0.022).abs() < 2e-3);
    assert!((at(20.5)[3] - 9.8).abs() < 1.5);
}

#[test]
fn sampled_runs_are_reproducible() {
    let run = |dir: &Path| {
        let d = dir.to_str().unwrap();
        let v = ok_json(&apsim(&[
            "sweep", "decay", "--mode", "sampled", "--trials", "100000", "--seed", "42", "--grid", "0.5:20.5:2",
            "--set", "n_max=3", "--out-dir", d,
        ]));
        (std::fs::read(dir.join("decay.csv")).unwrap(), v)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (csv_a, json_a) = run(a.path());
    let (csv_b, json_b) = run(b.path());
    assert_eq!(csv_a, csv_b);
    let mut ja = strip_metadata(json_a);
    let mut jb = strip_metadata(json_b);
    // only the output directory differs
    for j in [&mut ja, &mut jb] {
        let o = j.as_object_mut().unwrap();
        o.remove("csv");
        o["config"].as_object_mut().unwrap().remove("out_dir");
    }
    assert_eq!(ja, jb);
    assert_eq!(ja["result"]["provenance"]["seed"].as_u64(), Some(42));

    let c = tempfile::tempdir().unwrap();
    let d = c.path().to_str().unwrap();
    ok_json(&apsim(&[
        "sweep", "decay", "--mode", "sampled", "--trials", "100000", "--seed", "43", "--grid", "0.5:20.5:2",
        "--set", "n_max=3", "--out-dir", d,
    ]));
    assert_ne!(std::fs::read(c.path().join("decay.csv")).unwrap(), csv_a);
}

#[test]
fn simulate_records_reanalyze_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let sim = ok_json(&apsim(&[
        "simulate", "--mode", "sampled", "--trials", "200000", "--seed", "7", "--set", "n_max=4", "--out-dir", d,
    ]));
    let records = dir.path().join("records.csv");
    let settings = dir.path().join("settings.csv");
    let an = ok_json(&apsim(&[
        "analyze",
        "--records",
        records.to_str().unwrap(),
        "--settings",
        settings.to_str().unwrap(),
    ]));
    assert_eq!(sim["analysis"], an["analysis"]);
    assert!(sim["analysis"]["chsh_s"]["value"].as_f64().unwrap() > 2.0);
}

#[test]
fn analyze_hand_built_perfect_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let rp = dir.path().join("r.csv");
    let sp = dir.path().join("s.csv");
    let mut text = String::from("trial_index,setting_id,pattern\n");
    for i in 0..1000 {
        let pattern = if i < 500 { 0b0101 } else { 0b1010 };
        text.push_str(&format!("{i},0,{pattern}\n"));
    }
    std::fs::write(&rp, text).unwrap();
    std::fs::write(&sp, "setting_id,theta_AS_deg,theta_S_deg,trials\n0,0.0,22.5,2000\n").unwrap();
    let v = ok_json(&apsim(&["analyze", "--records", rp.to_str().unwrap(), "--settings", sp.to_str().unwrap()]));
    let e = &v["analysis"]["correlations"][0]["e"];
    assert_eq!(e["value"].as_f64(), Some(1.0));
    assert_eq!(e["n_effective"].as_u64(), Some(1000));
}

#[test]
fn analyze_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let rp = dir.path().join("r.csv");
    let sp = dir.path().join("s.csv");
    std::fs::write(&sp, "setting_id,theta_AS_deg,theta_S_deg,trials\n0,0.0,0.0,10\n").unwrap();
    let run = || apsim(&["analyze", "--records", rp.to_str().unwrap(), "--settings", sp.to_str().unwrap()]);

    std::fs::write(&rp, "").unwrap();
    assert_eq!(run().status.code(), Some(2));

    std::fs::write(&rp, "trial_index,setting_id,pattern\n0,0,5\n1,0,five\n").unwrap();
    let out = run();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    std::fs::write(&rp, "trial_index,setting_id,pattern\n0,9,5\n").unwrap();
    assert_eq!(run().status.code(), Some(2));

    std::fs::write(&rp, "trial_index,setting_id,pattern\n0,0,16\n").unwrap();
    assert_eq!(run().status.code(), Some(2));
}

#[test]
fn calibrate_shipped_anchors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cal.toml");
    let v = ok_json(&apsim(&[
        "calibrate",
        repo_file("configs/anchors.toml").to_str().unwrap(),
        "--config-out",
        cfg.to_str().unwrap(),
    ]));
    let cal = &v["calibration"];
    let t = cal["memory"]["t_us"].as_f64().unwrap();
    assert!((t - 15.7).abs() < 0.05, "{t}");
    assert_eq!(cal["v0"].as_f64(), Some(0.95));
    assert!(!cal["residuals"].as_array().unwrap().is_empty());
    let written = RunConfig::load(Some(&cfg), &[]).unwrap();
    assert_eq!(written, RunConfig::default());
}

#[test]
fn calibrate_bad_anchor_files() {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(repo_file("configs/anchors.toml")).unwrap();
    let path = dir.path().join("a.toml");

    let flat = base.replace("value = 0.022", "value = 0.122");
    std::fs::write(&path, flat).unwrap();
    let out = apsim(&["calibrate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    let single = base.replace("    { tau_us = 20.5, value = 0.022, err = 0.001 },\n", "");
    std::fs::write(&path, single).unwrap();
    let out = apsim(&["calibrate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("insufficient"), "{}", stderr(&out));

    std::fs::write(&path, format!("{base}\nbogus = 1\n")).unwrap();
    assert_eq!(apsim(&["calibrate", path.to_str().unwrap()]).status.code(), Some(2));
}
