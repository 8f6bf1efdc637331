use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sepex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sepex")).args(args).output().expect("sepex runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn mixed_dimension_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "check = \"global\"\nseed = 1\nshapes = [[8, 8], [8, 8, 8]]\n");
    let out = sepex(&["check-global", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mixes K"), "{err}");
}

#[test]
fn missing_seed_and_unknown_keys_exit_2() {
    assert_eq!(sepex(&["check-vc"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\nshapes = [[4, 4]]\nreplication = 3\n");
    assert_eq!(sepex(&["check-global", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(sepex(&["check-global", "--config", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn config_for_another_check_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "check = \"iid\"\nseed = 1\nshapes = [[16]]\n");
    assert_eq!(sepex(&["check-global", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn failed_check_exits_1() {
    // the half-interval ratios vary by a few percent over the grid
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "check = \"global\"\nseed = 7\nshapes = [[8, 8], [32, 32]]\nq = [1.0]\n\
         replications = 50\n[thresholds]\nstability = 1.0000001\n",
    );
    let out = sepex(&["check-global", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], false);
}

#[test]
fn out_dir_receives_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "check = \"global\"\nseed = 3\nshapes = [[4, 4], [8, 8]]\nq = [1.0]\nreplications = 20\n",
    );
    let out_dir = dir.path().join("out");
    let od = out_dir.to_str().unwrap();
    let a = sepex(&["check-global", "--config", &cfg, "--out", od]);
    assert!(a.status.code().unwrap() <= 1);
    assert!(a.stdout.is_empty());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["check"], "global");
    assert_eq!(report["rows"].as_array().unwrap().len(), 6);
    for row in report["rows"].as_array().unwrap() {
        let terms: f64 = row["terms"].as_array().unwrap().iter().map(|t| t["value"].as_f64().unwrap()).sum();
        assert!((terms - row["rhs"].as_f64().unwrap()).abs() <= 1e-9 * terms);
    }

    sepex(&["check-global", "--config", &cfg, "--out", od, "--format", "csv"]);
    let csv = fs::read_to_string(out_dir.join("rows.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "shape,e,q,delta,lhs,lhs_se,rhs,term_1,term_2,ratio");
    assert_eq!(lines.len(), 7);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "check = \"global\"\nseed = 3\nshapes = [[4, 4]]\nq = [1.0]\nreplications = 10\n");
    let a = sepex(&["check-global", "--config", &cfg]);
    let b = sepex(&["check-global", "--config", &cfg, "--seed", "4"]);
    let ra: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let rb: serde_json::Value = serde_json::from_slice(&b.stdout).unwrap();
    assert_eq!(ra["seed"], 3);
    assert_eq!(rb["seed"], 4);
    assert_ne!(ra["rows"], rb["rows"]);
}

#[test]
fn utility_subcommands() {
    let p = sepex(&["partition", "--shape", "3,4", "--e", "11"]);
    assert!(p.status.success());
    let v: serde_json::Value = serde_json::from_slice(&p.stdout).unwrap();
    assert_eq!(v["group_size"], 3);
    assert_eq!(v["groups"].as_array().unwrap().len(), 4);
    assert_eq!(v["verified"], true);
    assert_eq!(sepex(&["partition", "--shape", "3,4", "--e", "101"]).status.code(), Some(2));

    let s = sepex(&["sample", "--seed", "5", "--shape", "2,3", "--format", "csv"]);
    let csv = String::from_utf8(s.stdout).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("i_1,i_2,x"));

    let d = sepex(&["decompose", "--seed", "5", "--shape", "3,3"]);
    let v: serde_json::Value = serde_json::from_slice(&d.stdout).unwrap();
    let total: f64 = ["10", "01", "11"].iter().map(|k| v[*k].as_f64().unwrap()).sum();
    assert!((total - v["sample_mean"].as_f64().unwrap()).abs() < 1e-9);

    let en = sepex(&["entropy", "--seed", "5", "--grid", "4"]);
    assert!(en.status.success());
    let v: serde_json::Value = serde_json::from_slice(&en.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);
    let values = v[2]["profile"]["values"].as_array().unwrap();
    assert_eq!(values.len(), 4);
    assert!(values.windows(2).all(|w| w[0].as_f64() < w[1].as_f64()));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let cfg = sepex::harness::config::ExperimentConfig::from_toml(&text).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert_eq!(n, 5);
}
