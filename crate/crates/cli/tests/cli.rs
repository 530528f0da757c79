use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TOY: &str = "tau1=0.95,tauc=0.03,taus=0.02";
const TOY_STOCHASTIC: &str = "tau1=0.95,tauc=0.03,taus=0.02,cyl=stochastic";

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sorl-lab-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sorl-lab")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn golden(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

#[test]
fn toy_graph_matches_golden_files() {
    let dir = scratch("golden");
    let out = dir.to_str().unwrap();
    ok_json(&["graph", "--toy", TOY, "--eta-u", "6", "--eta-l", "4", "--out", out]);
    assert_eq!(fs::read_to_string(dir.join("adjacency.csv")).unwrap(), golden("toy_adjacency.csv"));
    // eigensolver round-off may differ across platforms, so the spectrum is compared numerically
    let got: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("spectrum.json")).unwrap()).unwrap();
    let want: serde_json::Value = serde_json::from_str(&golden("toy_spectrum.json")).unwrap();
    let (got, want) = (got["values"].as_array().unwrap(), want["values"].as_array().unwrap());
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g.as_f64().unwrap() - w.as_f64().unwrap()).abs() < 1e-12);
    }
}

#[test]
fn missing_world_file_exits_with_io_code() {
    let out = run(&["graph", "--world", "/definitely/not/here.json", "--out", scratch("missing").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.json"));
    assert!(out.stdout.is_empty());
}

#[test]
fn identical_rows_exit_with_numeric_code() {
    let dir = scratch("identical");
    let world = dir.join("world.json");
    fs::write(
        &world,
        r#"{"natural_count": 4, "augmented_count": 4,
            "T": [[0.1, 0.2, 0.3, 0.4], [0.1, 0.2, 0.3, 0.4], [0.1, 0.2, 0.3, 0.4], [0.1, 0.2, 0.3, 0.4]],
            "P": [0.25, 0.25, 0.25, 0.25], "class_of": [0, 0, 1, 1],
            "labeled_classes": [], "P_l": {}}"#,
    )
    .unwrap();
    let out = run(&["eval", "--world", world.to_str().unwrap(), "--k", "1", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_errors_exit_with_code_one() {
    let dir = scratch("config");
    let d = dir.to_str().unwrap();
    assert_eq!(run(&["embed", "--toy", TOY, "--out", d]).status.code(), Some(1));
    assert_eq!(run(&["graph", "--out", d]).status.code(), Some(1));
    assert_eq!(run(&["graph", "--toy", "tau1=0.9", "--out", d]).status.code(), Some(1));
    let bad = dir.join("bad.json");
    fs::write(&bad, "{\"unknown_field\": 1}").unwrap();
    assert_eq!(run(&["graph", "--config", bad.to_str().unwrap(), "--out", d]).status.code(), Some(1));
    let threads = Command::new(env!("CARGO_BIN_EXE_sorl-lab"))
        .args(["graph", "--toy", TOY, "--out", d])
        .env("SORL_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = scratch("override");
    let cfg = dir.join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"toy": {{"tau1": 0.95, "tau_c": 0.03, "tau_s": 0.02}}, "k": 2, "out": "{}"}}"#,
            dir.join("from_file").display()
        ),
    )
    .unwrap();
    let s = ok_json(&["embed", "--config", cfg.to_str().unwrap()]);
    assert_eq!(s["k"], 2);
    assert!(dir.join("from_file/embedding.csv").exists());
    let s = ok_json(&["embed", "--config", cfg.to_str().unwrap(), "--k", "3", "--out", dir.join("flag").to_str().unwrap()]);
    assert_eq!(s["k"], 3);
    assert!(dir.join("flag/embedding.csv").exists());
}

#[test]
fn toy_eval_recovers_classes() {
    let dir = scratch("eval");
    let s = ok_json(&["eval", "--toy", TOY, "--k", "3", "--out", dir.to_str().unwrap()]);
    assert_eq!(s["accuracy_all"], 1.0);
    let csv = fs::read_to_string(dir.join("assignments.csv")).unwrap();
    assert!(csv.starts_with("index,predicted,truth\n"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn toy_perturbation_sweep() {
    let dir = scratch("perturb");
    let s = ok_json(&["perturb", "--toy", TOY_STOCHASTIC, "--k", "3", "--deltas", "0,0.001,4", "--out", dir.to_str().unwrap()]);
    let rows: Vec<Vec<f64>> = serde_json::from_value(s["delta_kms"].clone()).unwrap();
    assert_eq!(rows[0], vec![0.0, 0.0]);
    assert!(rows[2][1] > 0.0);
    let d = s["derivative"].as_f64().unwrap();
    let fd = s["finite_difference"].as_f64().unwrap();
    assert!((d - fd).abs() <= 1e-4 * fd.abs());
    let sweep = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("delta,m_kms,delta_kms,leading_term,analytic_derivative,delta_class_0,"));
    // the printed cylinder rows do not give a regular base
    let out = run(&["perturb", "--toy", TOY, "--k", "3", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_paths_recover_the_truncation() {
    for method in ["sorl", "lowrank"] {
        let dir = scratch(method);
        let s = ok_json(&["train", "--method", method, "--toy", TOY_STOCHASTIC, "--k", "3", "--out", dir.to_str().unwrap()]);
        assert!(s["recovery_error"].as_f64().unwrap() <= 1e-4);
        assert!(s["offset_check"]["difference"].as_f64().unwrap().abs() <= 1e-7);
    }
    let out = run(&["train", "--toy", TOY, "--k", "3", "--out", scratch("relaxed").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let block = scratch("block-src").join("block.json");
    fs::write(
        &block,
        r#"{"class_sizes": [4, 4, 4], "affinity": [[0.8, 0.2, 0.0], [0.2, 0.8, 0.0], [0.0, 0.0, 1.0]],
            "subgroups": 2, "class_weight": 0.6, "subgroup_weight": 0.3, "self_weight": 0.1,
            "noise": 0.05, "labeled": [{"class": 0}]}"#,
    )
    .unwrap();
    let b = block.to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--block", b, "--k", "4", "--seed", "3"],
        vec!["eval", "--block", b, "--k", "3", "--seed", "3", "--clusters", "3"],
        vec!["perturb", "--block", b, "--k", "6", "--seed", "3"],
    ];
    for (i, args) in cases.iter().enumerate() {
        let dirs = [scratch(&format!("det-{i}-a")), scratch(&format!("det-{i}-b"))];
        let outs: Vec<Output> = dirs
            .iter()
            .map(|d| {
                let mut a = args.clone();
                a.extend(["--out", d.to_str().unwrap()]);
                run(&a)
            })
            .collect();
        assert!(outs[0].status.success(), "{}", String::from_utf8_lossy(&outs[0].stderr));
        for entry in fs::read_dir(&dirs[0]).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(fs::read(dirs[0].join(&name)).unwrap(), fs::read(dirs[1].join(&name)).unwrap(), "{name:?}");
        }
    }
}
