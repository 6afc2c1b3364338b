use std::path::Path;
use std::process::{Command, Output};

fn envrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_envrec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).expect("error line is JSON")
}

fn small_config(dir: &Path) -> String {
    let default = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/default.toml"
    ))
    .unwrap();
    let mut config: toml::Table = toml::from_str(&default).unwrap();
    config["seeds"] = toml::Value::Array(vec![toml::Value::Integer(1)]);
    config["k"] = toml::Value::Integer(2);
    let path = dir.join("small.toml");
    std::fs::write(&path, toml::to_string(&config).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn help_exits_zero() {
    let out = envrec(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradcheck"));
}

#[test]
fn gradcheck_passes() {
    let out = envrec(&["gradcheck", "--seed", "3", "--batch", "4"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
}

#[test]
fn failures_emit_structured_lines() {
    let out = envrec(&["experiment", "--strategy", "9", "--out", "/nonexistent"]);
    assert!(!out.status.success());
    let e = error_line(&out);
    assert_eq!(e["error"], "invalid_argument");
    assert!(e["message"].as_str().unwrap().contains("strategy"));

    let out = envrec(&[
        "eval",
        "--checkpoint",
        "/no/such/file",
        "--dataset",
        "/no/such/file",
    ]);
    assert!(!out.status.success());
    assert_eq!(error_line(&out)["error"], "io");

    let out = envrec(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    let out = envrec(&[
        "gen-data", "--config", &config, "--folds", "3", "--out", data_s,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "target.scn",
        "auxiliary.scn",
        "auxiliary_raw.scn",
        "generic.scn",
        "folds.toml",
        "merge_map.toml",
    ] {
        assert!(data.join(f).exists(), "{f}");
    }

    let aux_ck = dir.path().join("aux.sck");
    let out = envrec(&[
        "train",
        "--config",
        &config,
        "--dataset",
        data.join("auxiliary.scn").to_str().unwrap(),
        "--stage",
        "auxiliary",
        "--out",
        aux_ck.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let target_ck = dir.path().join("target.sck");
    let out = envrec(&[
        "train",
        "--config",
        &config,
        "--dataset",
        data.join("target.scn").to_str().unwrap(),
        "--init",
        aux_ck.to_str().unwrap(),
        "--mode",
        "WL",
        "--out",
        target_ck.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let report = dir.path().join("eval.toml");
    let out = envrec(&[
        "eval",
        "--checkpoint",
        target_ck.to_str().unwrap(),
        "--dataset",
        data.join("target.scn").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(report).unwrap();
    assert!(text.contains("sla ="));

    // The target checkpoint cannot initialize training on the generic data
    // without replacing its classifier, which happens automatically.
    let out = envrec(&[
        "train",
        "--config",
        &config,
        "--dataset",
        data.join("generic.scn").to_str().unwrap(),
        "--stage",
        "generic",
        "--init",
        target_ck.to_str().unwrap(),
        "--out",
        dir.path().join("g.sck").to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn experiment_writes_reports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = envrec(&[
            "experiment",
            "--config",
            &config,
            "--strategy",
            "ablation",
            "--mode",
            "RS",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let md = String::from_utf8_lossy(&out.stdout);
        assert!(md.contains("| Ours (RS) |") && md.contains("| Ours w/o M (RS) |"));
        assert!(out_dir.join("report.toml").exists() && out_dir.join("report.md").exists());
        csvs.push(std::fs::read(out_dir.join("results.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}
