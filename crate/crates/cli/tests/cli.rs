use std::path::Path;
use std::process::{Command, Output};

fn dformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dformer")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn analyze_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "preset = full\n");
    let table = dformer(&["analyze", "--config", &cfg]);
    assert!(table.status.success(), "{}", String::from_utf8_lossy(&table.stderr));
    assert!(stdout(&table).contains("44645097"), "{}", stdout(&table));

    let json = dformer(&["analyze", "--config", &cfg, "--input", "128x128x128", "--json"]);
    assert!(json.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(v["total_params"], 44_645_097);
    assert!(v["components"].as_array().unwrap().len() > 10);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "preset = tiny\nchanels = 4\n");
    let out = dformer(&["analyze", "--config", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("chanels"), "{err}");
}

#[test]
fn gen_train_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let gen = dformer(&[
        "gen", "--seed", "1", "--count", "5", "--dims", "8x16x16", "--kind", "spheres", "--out", data.to_str().unwrap(),
    ]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    assert_eq!(std::fs::read_dir(&data).unwrap().count(), 5);

    let cfg = write_config(dir.path(), "preset = tiny\nsteps = 3\neval_every = 2\nholdout = 2\n");
    let train = dformer(&["train", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    for f in ["final.ckpt", "best.ckpt", "metrics.log", "eval.log", "run.cfg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(out.join("metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let eval = dformer(&["eval", "--checkpoint", out.join("final.ckpt").to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let text = stdout(&eval);
    assert_eq!(text.lines().filter(|l| l.starts_with("case=")).count(), 5);
    let report_file = dir.path().join("eval.txt");
    std::fs::write(&report_file, &text).unwrap();
    let report = dformer(&["report", "--eval", report_file.to_str().unwrap()]);
    assert!(report.status.success());
    assert!(stdout(&report).contains("mean DSC"));
}

#[test]
fn eval_rejects_truncated_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"DFCKPT01\x01").unwrap();
    let out = dformer(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte 8"));
}

#[test]
fn bench_reports_each_grid() {
    let out = dformer(&["bench", "--grids", "4x4x4,8x4x4", "--unit", "2x2x2", "--channels", "8", "--heads", "2", "--repeats", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols[3], cols[4], "analytic and measured differ: {row}");
    }
}
