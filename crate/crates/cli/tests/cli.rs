use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn egospeed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egospeed")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synth", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    egospeed(&args)
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_expected_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = synth(tmp.path(), &["--clips", "4", "--frames", "13", "--rate", "2", "--test-fraction", "0.25"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(tmp.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 52);
    assert_eq!(manifest.lines().filter(|l| l.ends_with(",test")).count(), 13);
    assert_eq!(fs::read_dir(tmp.path().join("frames")).unwrap().count(), 4);
    assert_eq!(fs::read_dir(tmp.path().join("masks/clip0002")).unwrap().count(), 13);
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["--clips", "3", "--distractors", "5", "--noise", "0.05", "--seed", "11"];
    for d in [&a, &b] {
        assert_eq!(code(&synth(d.path(), &args)), 0);
    }
    assert_eq!(code(&synth(c.path(), &["--clips", "3", "--distractors", "5", "--noise", "0.05", "--seed", "12"])), 0);
    let strip = |v: Vec<(String, Vec<u8>)>| v.into_iter().filter(|(n, _)| !n.ends_with(".json")).collect::<Vec<_>>();
    assert_eq!(strip(files_under(a.path())), strip(files_under(b.path())));
    assert_ne!(strip(files_under(a.path())), strip(files_under(c.path())));
}

#[test]
fn invalid_arguments_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = synth(tmp.path(), &["--speed-max", "25"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed"));
    assert_eq!(code(&egospeed(&["train", "--bogus"])), 1);
    assert_eq!(code(&egospeed(&["train", "--out", tmp.path().to_str().unwrap()])), 1);
    assert_eq!(code(&egospeed(&["--help"])), 0);
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("synth.cfg");
    fs::write(&cfg, "# small run\nclips = 2\nframes = 3\n").unwrap();
    let out_dir = tmp.path().join("d");
    let out = egospeed(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--frames",
        "4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 2 * 4);
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("synth_run_config.json")).unwrap()).unwrap();
    assert_eq!(run["settings"]["frames"], "4");
    assert_eq!(run["settings"]["clips"], "2");

    fs::write(&cfg, "clips = 2\nfrobnicate = 1\n").unwrap();
    let out = egospeed(&["synth", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn train_eval_and_refusals() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let model_dir = tmp.path().join("model");
    assert_eq!(code(&synth(&data, &["--clips", "5", "--frames", "10", "--speed-min", "2"])), 0);
    let d = data.to_str().unwrap();
    let m = model_dir.to_str().unwrap();
    let out = egospeed(&[
        "train", "--data", d, "--out", m, "--epochs", "1", "--batch-size", "2", "--val-fraction", "0.25",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = model_dir.join("checkpoint.bin");
    assert!(ckpt.is_file());
    let log = fs::read_to_string(model_dir.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss,seconds\n1,"));

    let ck = ckpt.to_str().unwrap();
    let out = egospeed(&["eval", "--data", d, "--checkpoint", ck, "--out", m, "--histogram"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let results = fs::read_to_string(model_dir.join("results.csv")).unwrap();
    assert!(results.starts_with("model,dataset,split,rmse,mae,n\nthreedcma,kitti,test,"));
    assert!(model_dir.join("speed_histogram.csv").is_file());

    // 2 Hz stream for a 10-frame / 1 s model: refused, not silently degraded.
    let out = egospeed(&["eval", "--data", d, "--checkpoint", ck, "--out", m, "--cross", "--target-hz", "2"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));

    // Mask-free data cannot feed the mask model.
    let plain = tmp.path().join("plain");
    fs::create_dir_all(&plain).unwrap();
    let manifest = fs::read_to_string(data.join("manifest.csv")).unwrap();
    let mut stripped = String::new();
    for (i, line) in manifest.lines().enumerate() {
        let mut f: Vec<String> = line.split(',').map(String::from).collect();
        if i > 0 {
            f[2] = format!("{}/{}", d, f[2]);
            f[3].clear();
        }
        stripped.push_str(&f.join(","));
        stripped.push('\n');
    }
    fs::write(plain.join("manifest.csv"), stripped).unwrap();
    let out = egospeed(&["train", "--data", plain.to_str().unwrap(), "--out", m, "--epochs", "1"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mask"));
}

#[test]
fn gradcheck_cli() {
    let out = egospeed(&["gradcheck", "--op", "matmul", "--op", "relu", "--seeds", "2"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.ends_with("ok")).count(), 4);

    let out = egospeed(&["gradcheck", "--op", "matmul", "--inject-sign-error"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    assert_eq!(code(&egospeed(&["gradcheck", "--op", "no_such_op"])), 1);
}
