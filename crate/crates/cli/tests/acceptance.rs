//! One PASS/FAIL line per acceptance criterion (A1–A10).

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use egospeed::data::*;
use egospeed::eval::{evaluate_model, mae, rmse};
use egospeed::gradcheck::{run_suite, SuiteOptions, CASES, DEFAULT_EPS, DEFAULT_TOLERANCE};
use egospeed::models::*;
use egospeed::ops::token_count;
use egospeed::rng;
use egospeed::train::*;
use rand::Rng as _;

type Outcome = (bool, String);

/// Clip built directly from a rendered sequence (label = last frame), so the
/// benchmark sizes are exact regardless of the stationary filter.
fn synthetic_clip(seed: u64, frames: usize, rate: f64, distractors: usize, noise: f64, with_mask: bool) -> VideoClip {
    let duration = frames as f64 / rate;
    let mut cfg = SyntheticSceneConfig::new(SpeedProfile::random_ramp(seed, 0.0, SPEED_LIMIT, duration), frames, rate);
    cfg.distractors.count = distractors;
    cfg.noise_std = noise;
    let seq = synth_generate_clip(&cfg, seed).unwrap();
    VideoClip {
        input: preprocess_clip(&seq.frames, seq.masks.as_deref(), with_mask).unwrap(),
        label_speed: seq.speeds[frames - 1],
        source_id: format!("synthetic{seed}"),
    }
}

fn a1() -> Outcome {
    let errs = [
        ("conv2d", support::conv2d_oracle_error(20)),
        ("conv3d", support::conv3d_oracle_error(20)),
        ("matmul", support::matmul_oracle_error(20)),
        ("attention", support::attention_oracle_error(20)),
    ];
    let ok = errs.iter().all(|e| e.1 <= 1e-12);
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    (ok, format!("max |Δ| over 20 seeds: {detail}"))
}

fn a2() -> Outcome {
    let opts = SuiteOptions {
        cases: CASES.iter().map(|c| c.to_string()).collect(),
        seeds: 10,
        eps: DEFAULT_EPS,
        tolerance: DEFAULT_TOLERANCE,
        ..SuiteOptions::default()
    };
    let reports = run_suite(&opts).unwrap();
    let worst = reports.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).unwrap();
    let failed = reports.iter().filter(|r| !r.passed).count();
    (
        failed == 0,
        format!(
            "{} cases x 10 seeds, {failed} failed, worst {:.2e} ({} seed {})",
            CASES.len(),
            worst.max_rel_err,
            worst.case,
            worst.seed
        ),
    )
}

fn a3() -> Outcome {
    // 18 clips with 2 held out for validation leaves 16 training clips.
    let clips: Vec<VideoClip> = (0..18).map(|i| synthetic_clip(i, 10, 10.0, 0, 0.0, true)).collect();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 300,
        patience: 300,
        val_fraction: 2.0 / 18.0,
        ..TrainConfig::default()
    };
    let mut model = Model::build(ModelSpec::threedcma(10, Preset::Reduced), 0).unwrap();
    let mut trainer = Trainer::new(&mut model, &clips, cfg).unwrap();
    assert_eq!(trainer.train_indices().len(), 16);
    let mut mse = trainer.train_mse().unwrap();
    let mut epochs = 0;
    while epochs < 300 && mse >= 0.1 {
        trainer.run_epoch().unwrap();
        epochs += 1;
        mse = trainer.train_mse().unwrap();
    }
    (mse < 0.1, format!("train MSE {mse:.4} after {epochs} epochs"))
}

const A4_EPOCHS: usize = 6;

fn a4() -> Outcome {
    let mut per_kind = Vec::new();
    for kind in [ModelKind::ThreeDCma, ModelKind::ThreeDCnnNoMask] {
        let m = kind.uses_mask();
        let train: Vec<VideoClip> = (0..200).map(|i| synthetic_clip(i, 10, 10.0, 6, 0.02, m)).collect();
        let test: Vec<VideoClip> = (0..50).map(|i| synthetic_clip(1_000_000 + i, 10, 10.0, 6, 0.02, m)).collect();
        let mut scores = Vec::new();
        for seed in 0..3 {
            let mut model = Model::build(ModelSpec::for_kind(kind, 10, Preset::Reduced), seed).unwrap();
            let cfg = TrainConfig {
                max_epochs: A4_EPOCHS,
                seed,
                ..TrainConfig::default()
            };
            train_model(&mut model, &train, &cfg).unwrap();
            scores.push(evaluate_model(&model, &test).unwrap().rmse);
        }
        scores.sort_by(f64::total_cmp);
        per_kind.push((kind, scores));
    }
    let (cma, plain) = (per_kind[0].1[1], per_kind[1].1[1]);
    (
        cma < plain,
        format!(
            "median test RMSE threedcma {cma:.3} vs threedcnn_nomask {plain:.3} (seeds {:?} / {:?}, {A4_EPOCHS} epochs)",
            per_kind[0].1.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            per_kind[1].1.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn a5() -> Outcome {
    let trace = support::shape_walk(ModelSpec::threedcma(10, Preset::Faithful));
    let shapes: Vec<Vec<usize>> = trace.iter().map(|t| t.1.clone()).collect();
    let ok = shapes == support::faithful_shapes();
    let walk = shapes
        .iter()
        .map(|s| s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"))
        .collect::<Vec<_>>()
        .join(" -> ");
    (ok, walk)
}

fn a6() -> Outcome {
    let cfg = VivitConfig::default();
    let mut ok = cfg.tubelet == [6, 8, 8] && cfg.layers == 16 && cfg.heads == 16 && cfg.dim == 128;
    let mut detail = Vec::new();
    for (frames, rate, tokens) in [(10, 10.0, 128), (13, 2.0, 192)] {
        let model = Model::build(ModelSpec::vivit(frames, cfg), 0).unwrap();
        let got = token_count(frames, 64, 64, cfg.tubelet);
        let pos = model.param("pos_embed").unwrap().shape()[0];
        let clips: Vec<VideoClip> = (0..10).map(|i| synthetic_clip(500 + i, frames, rate, 0, 0.0, false)).collect();
        let mut model = model;
        let tc = TrainConfig {
            max_epochs: 5,
            patience: 5,
            batch_size: 2,
            val_fraction: 0.2,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&mut model, &clips, tc).unwrap();
        let mut losses = vec![trainer.train_mse().unwrap()];
        for _ in 0..5 {
            trainer.run_epoch().unwrap();
            losses.push(trainer.train_mse().unwrap());
        }
        let decreasing = losses.windows(2).filter(|w| w[1] < w[0]).count();
        ok &= got == tokens && pos == tokens && decreasing >= 4;
        detail.push(format!(
            "{frames} frames: {got} tokens, loss {} ({decreasing}/5 decreasing)",
            losses.iter().map(|l| format!("{l:.2}")).collect::<Vec<_>>().join(">")
        ));
    }
    (ok, detail.join("; "))
}

fn a7() -> Outcome {
    let r = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
    let m = mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
    let mut ok = (r - 12.5f64.sqrt()).abs() <= 1e-12 && (m - 3.5).abs() <= 1e-12;
    let mut rng = rng::stream(7, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..50);
        let p = rng::uniform_vec(&mut rng, n, -30.0, 30.0);
        let g = rng::uniform_vec(&mut rng, n, 0.0, 30.0);
        ok &= rmse(&p, &g).unwrap() >= mae(&p, &g).unwrap() - 1e-12;
    }
    (ok, format!("rmse {r:.4}, mae {m:.4}; rmse >= mae on 1000 random cases"))
}

fn a8() -> Outcome {
    let mismatches = support::split_table_mismatches();
    let test: Vec<String> = kitti_drives()
        .into_iter()
        .filter(|d| d.split == Split::Test)
        .map(|d| format!("{:?} {}", d.category, &d.id[d.id.len() - 4..]))
        .collect();
    (
        mismatches.is_empty(),
        format!("{} drives, test = {}; {:?}", support::TABLE_1.len(), test.join(", "), mismatches),
    )
}

fn a9() -> Outcome {
    let ten_hz = FrameSequence {
        frames: vec![Image::filled(4, 4, 1, 0.0); 61],
        masks: None,
        timestamps_us: (0..61).map(|i| i * 100_000).collect(),
        speeds: vec![5.0; 61],
        rate_hz: 10.0,
    };
    let nu = DatasetProfile::nuimages();
    let out = decimate(&ten_hz, nu.rate_hz, nu.window_s, nu.frames).unwrap();
    let span = (out.timestamps_us[out.len() - 1] - out.timestamps_us[0]) as f64 / 1e6;
    let two_hz = FrameSequence {
        timestamps_us: (0..61).map(|i| i * 500_000).collect(),
        rate_hz: 2.0,
        ..ten_hz
    };
    let k = DatasetProfile::kitti();
    let refused = matches!(
        decimate(&two_hz, k.rate_hz, k.window_s, k.frames),
        Err(egospeed::Error::Infeasible(_))
    ) && matches!(
        decimate(&two_hz, two_hz.rate_hz, k.window_s, k.frames),
        Err(egospeed::Error::Infeasible(_))
    );
    (
        out.len() == 13 && span == 6.0 && refused,
        format!("{} frames spanning {span} s at 2 Hz; reverse request refused: {refused}", out.len()),
    )
}

fn egospeed(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_egospeed")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn log_without_timing(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

fn a10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let d = data.to_str().unwrap();
    egospeed(&["synth", "--out", d, "--clips", "10", "--distractors", "3", "--noise", "0.02", "--seed", "4"]);
    let mut runs = Vec::new();
    for name in ["run1", "run2"] {
        let out = tmp.path().join(name);
        egospeed(&[
            "train", "--data", d, "--out", out.to_str().unwrap(), "--epochs", "3", "--batch-size", "3", "--val-fraction",
            "0.25", "--seed", "9",
        ]);
        runs.push((fs::read(out.join("checkpoint.bin")).unwrap(), log_without_timing(&out.join("train_log.csv"))));
    }
    let same_ckpt = runs[0].0 == runs[1].0;
    let same_log = runs[0].1 == runs[1].1;
    (
        same_ckpt && same_log,
        format!(
            "checkpoints ({} bytes) identical: {same_ckpt}; logs identical apart from wall-clock seconds: {same_log}",
            runs[0].0.len()
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("A1", a1),
        ("A2", a2),
        ("A3", a3),
        ("A4", a4),
        ("A5", a5),
        ("A6", a6),
        ("A7", a7),
        ("A8", a8),
        ("A9", a9),
        ("A10", a10),
    ];
    let mut failed = Vec::new();
    for (id, check) in criteria {
        let start = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        println!(
            "{id:<3} {}  {detail}  [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !ok {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
