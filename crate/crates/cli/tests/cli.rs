//! Exit codes and surface behavior of the `cfwgan` binary.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfwgan"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("cfwgan-cli-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&p).unwrap();
    p
}

#[test]
fn missing_config_file_exits_with_config_error() {
    let out = bin()
        .args(["train", "--config", "/nonexistent/path.conf"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn unknown_config_key_exits_with_config_error() {
    let dir = temp_dir("unknown-key");
    let cfg = dir.join("bad.conf");
    std::fs::write(
        &cfg,
        "model = itempop\ndataset_path = /tmp/x\ndataset_format = ml100k\nbogus = 1\n",
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_dataset_exits_with_data_error() {
    let dir = temp_dir("missing-data");
    let cfg = dir.join("cfg.conf");
    std::fs::write(
        &cfg,
        format!(
            "model = itempop\ndataset_path = {}/absent.data\ndataset_format = ml100k\n",
            dir.display()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    // The config names a dataset that does not exist.
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn malformed_dataset_exits_with_data_error() {
    let dir = temp_dir("malformed");
    let data = dir.join("u.data");
    std::fs::write(&data, "1\t2\t3\t4\nnot a row\n").unwrap();
    let cfg = dir.join("cfg.conf");
    std::fs::write(
        &cfg,
        format!(
            "model = itempop\ndataset_path = {}\ndataset_format = ml100k\nout_dir = {}/out\n",
            data.display(),
            dir.display()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_then_evaluate_round_trip() {
    let dir = temp_dir("roundtrip");
    // Tiny synthetic dataset: 12 users, 10 items, 6 interactions each.
    let mut lines = Vec::new();
    for u in 1..=12u32 {
        for j in 0..6u32 {
            lines.push(format!("{u}\t{}\t3\t5", (u + j) % 10 + 1));
        }
    }
    let data = dir.join("u.data");
    std::fs::write(&data, lines.join("\n") + "\n").unwrap();
    let cfg = dir.join("cfg.conf");
    std::fs::write(
        &cfg,
        format!(
            "model = itempop\ndataset_path = {}\ndataset_format = ml100k\nout_dir = {}/out\n",
            data.display(),
            dir.display()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let eval = bin()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("test (checkpoint)"));

    // Seed override invalidates the digest.
    let eval_bad = bin()
        .args(["evaluate", "--seed", "9", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(eval_bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&eval_bad.stderr).contains("digest"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn compare_rewrites_reference_table() {
    let dir = temp_dir("compare");
    let final_csv = dir.join("final.csv");
    std::fs::write(
        &final_csv,
        "model,seed,P5,P20,R5,R20,N5,N20\nmlc,0,0.44,0.29,0.15,0.36,0.48,0.44\n",
    )
    .unwrap();
    let out = bin()
        .args(["compare", "--dataset", "ml100k", "--final"])
        .arg(&final_csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let cmp = std::fs::read_to_string(dir.join("comparison.csv")).unwrap();
    assert!(cmp.contains("CFGAN,ml100k,published"));
    assert!(cmp.contains("mlc,ml100k,this-run"));
    std::fs::remove_dir_all(&dir).ok();
}
