use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use egospeed::data::{
    clips_from_sequence, export_synthetic_dataset, kitti_drives, kitti_load_drive, load_manifest_sequences,
    par_map, synth_generate_clip, CameraModel, DatasetProfile, DistractorConfig, FrameSequence, LoadOptions,
    Split, SpeedProfile, SyntheticSceneConfig, VideoClip, SPEED_LIMIT,
};
use egospeed::eval::{append_results, cross_dataset_eval, evaluate_model_with, speed_histogram};
use egospeed::gradcheck::{run_suite, SuiteOptions};
use egospeed::models::{load_checkpoint, save_checkpoint, Model, ModelKind, ModelSpec, Preset, VivitConfig, INPUT_SIZE};
use egospeed::train::{train_model_with, TrainConfig};

use crate::settings::Settings;
use crate::{Common, DataArgs, EvalArgs, GradcheckArgs, SynthArgs, TrainArgs, Usage};

/// Relative tolerance when matching a dataset's frame rate to a profile.
const RATE_TOLERANCE: f64 = 0.05;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

struct Env {
    settings: Settings,
    out: PathBuf,
    seed: u64,
    workers: usize,
}

fn setup(common: &Common, default_seed: u64) -> Result<Env> {
    let settings = Settings::load(common.config.as_deref())?;
    let out: PathBuf = settings.get("out", common.out.as_ref().map(|p| p.display().to_string()), ".".into())?.into();
    let seed = settings.get("seed", common.seed, default_seed)?;
    let workers = settings.get("workers", common.workers, 1)?;
    if workers == 0 {
        return Err(usage("--workers must be >= 1"));
    }
    Ok(Env {
        settings,
        out,
        seed,
        workers,
    })
}

/// Records the fully resolved configuration of this run.
fn write_run_config(env: &Env, command: &str) -> Result<()> {
    env.settings.check_unused()?;
    fs::create_dir_all(&env.out).with_context(|| format!("creating {}", env.out.display()))?;
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "settings": env.settings.resolved(),
    });
    let path = env.out.join(format!("{command}_run_config.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let env = setup(&a.common, 0)?;
    let s = &env.settings;
    let clips = s.get("clips", a.clips, 8)?;
    let frames = s.get("frames", a.frames, 10)?;
    let rate = s.get("rate", a.rate, 10.0)?;
    let speed_min = s.get("speed-min", a.speed_min, 0.0)?;
    let speed_max = s.get("speed-max", a.speed_max, SPEED_LIMIT)?;
    let distractors = s.get("distractors", a.distractors, 0)?;
    let distractor_speed = s.get("distractor-speed", a.distractor_speed, DistractorConfig::default().max_speed_px_s)?;
    let noise = s.get("noise", a.noise, 0.0)?;
    let size = s.get("size", a.size, INPUT_SIZE)?;
    let test_fraction = s.get("test-fraction", a.test_fraction, 0.2)?;
    if !(0.0..=speed_max).contains(&speed_min) || speed_max > SPEED_LIMIT {
        return Err(usage(format!(
            "speed range [{speed_min}, {speed_max}] must lie within [0, {SPEED_LIMIT}] m/s"
        )));
    }
    if clips == 0 || frames == 0 || !(rate > 0.0) || size == 0 || !(0.0..=1.0).contains(&test_fraction) {
        return Err(usage("clips, frames, rate and size must be positive; test-fraction in [0, 1]"));
    }
    let duration = frames as f64 / rate;
    let n_test = (test_fraction * clips as f64).round() as usize;
    let ids: Vec<usize> = (0..clips).collect();
    let seed = env.seed;
    let rendered = par_map(&ids, env.workers, |&i| {
        let clip_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let config = SyntheticSceneConfig {
            speed: SpeedProfile::random_ramp(clip_seed, speed_min, speed_max, duration),
            camera: CameraModel::for_size(size, size),
            distractors: DistractorConfig {
                count: distractors,
                max_speed_px_s: distractor_speed,
                ..DistractorConfig::default()
            },
            noise_std: noise,
            width: size,
            height: size,
            ..SyntheticSceneConfig::new(SpeedProfile::Constant { speed: 0.0 }, frames, rate)
        };
        let split = if i + n_test >= clips { Split::Test } else { Split::Train };
        Ok((format!("clip{i:04}"), split, synth_generate_clip(&config, clip_seed)?))
    })?;
    fs::create_dir_all(&env.out)?;
    let records = export_synthetic_dataset(&env.out, &rendered)?;
    write_run_config(&env, "synth")?;
    println!(
        "wrote {clips} clips ({} frames, {n_test} test clips) to {}",
        records.len(),
        env.out.display()
    );
    Ok(())
}

fn parse_flag<T: std::str::FromStr>(value: &str, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| usage(format!("{what}: {e}")))
}

/// Sequences from `--data` (manifest) or `--kitti-root` (benchmark split).
fn load_sequences(
    s: &Settings,
    data: &DataArgs,
    split: Option<Split>,
    workers: usize,
) -> Result<Vec<(String, FrameSequence)>> {
    let manifest: Option<String> = s.get_opt("data", data.data.as_ref().map(|p| p.display().to_string()))?;
    let kitti: Option<String> = s.get_opt("kitti-root", data.kitti_root.as_ref().map(|p| p.display().to_string()))?;
    let opts = LoadOptions {
        workers,
        resize_to: Some(INPUT_SIZE),
    };
    let seqs: Vec<(String, FrameSequence)> = match (manifest, kitti) {
        (Some(m), None) => {
            let mut path = PathBuf::from(m);
            if path.is_dir() {
                path = path.join("manifest.csv");
            }
            if !path.is_file() {
                return Err(usage(format!("no manifest at {}", path.display())));
            }
            load_manifest_sequences(&path, &opts)?
                .into_iter()
                .filter(|m| split.is_none_or(|s| s == m.split))
                .map(|m| (m.clip_id, m.sequence))
                .collect()
        }
        (None, Some(root)) => {
            let root = PathBuf::from(root);
            let mut out = Vec::new();
            for d in kitti_drives().into_iter().filter(|d| split.is_none_or(|s| s == d.split)) {
                let dir = root.join(&d.id[..10]).join(format!("{}_sync", d.id));
                if dir.is_dir() {
                    out.push((d.id.clone(), kitti_load_drive(&root, &d.id, &opts)?));
                }
            }
            out
        }
        _ => return Err(usage("give exactly one of --data or --kitti-root")),
    };
    if seqs.is_empty() {
        return Err(usage("the selected dataset split is empty"));
    }
    Ok(seqs)
}

fn check_masks(kind: ModelKind, seqs: &[(String, FrameSequence)]) -> Result<()> {
    if kind.uses_mask() {
        if let Some((id, _)) = seqs.iter().find(|(_, s)| s.masks.is_none()) {
            return Err(usage(format!("{kind} needs lane masks but `{id}` has none")));
        }
    }
    Ok(())
}

fn check_rate(profile: &DatasetProfile, seqs: &[(String, FrameSequence)]) -> Result<()> {
    for (id, s) in seqs {
        if (s.rate_hz - profile.rate_hz).abs() > RATE_TOLERANCE * profile.rate_hz {
            return Err(usage(format!(
                "`{id}` is sampled at {:.3} Hz but profile `{}` expects {} Hz (use eval --cross for cross-rate evaluation)",
                s.rate_hz, profile.name, profile.rate_hz
            )));
        }
    }
    Ok(())
}

fn build_clips(
    seqs: &[(String, FrameSequence)],
    profile: &DatasetProfile,
    with_mask: bool,
    workers: usize,
) -> Result<Vec<VideoClip>> {
    for (id, s) in seqs {
        if s.len() < profile.frames {
            return Err(usage(format!(
                "`{id}` has {} frames; profile `{}` needs {} per clip",
                s.len(),
                profile.name,
                profile.frames
            )));
        }
    }
    let per_seq = par_map(seqs, workers, |(id, s)| Ok(clips_from_sequence(s, profile, with_mask, id)?))?;
    let clips: Vec<VideoClip> = per_seq.into_iter().flatten().collect();
    if clips.is_empty() {
        return Err(usage("no clips after windowing"));
    }
    Ok(clips)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let env = setup(&a.common, 0)?;
    let s = &env.settings;
    let profile: DatasetProfile = parse_flag(&s.get("profile", a.data.profile.clone(), "kitti".into())?, "--profile")?;
    let kind: ModelKind = parse_flag(&s.get("model", a.model.clone(), "threedcma".into())?, "--model")?;
    let preset: Preset = parse_flag(&s.get("preset", a.preset.clone(), "reduced".into())?, "--preset")?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        learning_rate: s.get("lr", a.lr, defaults.learning_rate)?,
        max_epochs: s.get("epochs", a.epochs, defaults.max_epochs)?,
        patience: s.get("patience", a.patience, defaults.patience)?,
        batch_size: s.get("batch-size", a.batch_size, defaults.batch_size)?,
        val_fraction: s.get("val-fraction", a.val_fraction, defaults.val_fraction)?,
        seed: env.seed,
        ..defaults
    };
    config.validate()?;
    let mut spec = ModelSpec::for_kind(kind, profile.frames, preset);
    if kind == ModelKind::Vivit {
        let d = VivitConfig::default();
        spec.vivit = VivitConfig {
            layers: s.get("vivit-layers", a.vivit_layers, d.layers)?,
            heads: s.get("vivit-heads", a.vivit_heads, d.heads)?,
            dim: s.get("vivit-dim", a.vivit_dim, d.dim)?,
            ..d
        };
    }
    spec.validate()?;

    let seqs = load_sequences(s, &a.data, Some(Split::Train), env.workers)?;
    check_masks(kind, &seqs)?;
    check_rate(&profile, &seqs)?;
    let clips = build_clips(&seqs, &profile, kind.uses_mask(), env.workers)?;
    write_run_config(&env, "train")?;

    let mut model = Model::build(spec, env.seed)?;
    println!(
        "training {kind} ({} parameters) on {} clips, profile {}",
        model.param_count(),
        clips.len(),
        profile.name
    );
    let history = train_model_with(&mut model, &clips, &config, |e| {
        println!(
            "epoch {:>3}  train {:.6}  val {:.6}  {:.1}s",
            e.epoch, e.train_loss, e.val_loss, e.seconds
        );
        Ok(())
    })?;
    save_checkpoint(&model, &env.out.join("checkpoint.bin"))?;
    history.save_csv(&env.out.join("train_log.csv"))?;
    println!(
        "best epoch {} (val {:.6}){}",
        history.best_epoch,
        history.best_val_loss().unwrap_or(f64::NAN),
        if history.stopped_early { ", stopped early" } else { "" }
    );
    Ok(())
}

fn profile_for(model: &Model) -> Result<DatasetProfile> {
    let frames = model.spec().input_frames;
    [DatasetProfile::kitti(), DatasetProfile::nuimages()]
        .into_iter()
        .find(|p| p.frames == frames)
        .ok_or_else(|| usage(format!("no dataset profile uses {frames} frames; pass --profile")))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let env = setup(&a.common, 0)?;
    let s = &env.settings;
    let checkpoint: String = s
        .get_opt("checkpoint", a.checkpoint.as_ref().map(|p| p.display().to_string()))?
        .ok_or_else(|| usage("--checkpoint is required"))?;
    let model = load_checkpoint(Path::new(&checkpoint))?;
    let profile = match s.get_opt("profile", a.data.profile.clone())? {
        Some(p) => parse_flag::<DatasetProfile>(&p, "--profile")?,
        None => profile_for(&model)?,
    };
    if profile.frames != model.spec().input_frames {
        return Err(usage(format!(
            "checkpoint takes {} frames, profile `{}` has {}",
            model.spec().input_frames,
            profile.name,
            profile.frames
        )));
    }
    let split = match s.get("split", a.split.clone(), "test".into())?.as_str() {
        "all" => None,
        other => Some(parse_flag::<Split>(other, "--split")?),
    };
    let cross = s.switch("cross", a.cross)?;
    let target_hz = s.get("target-hz", a.target_hz, profile.rate_hz)?;
    let histogram = s.switch("histogram", a.histogram)?;
    let bin_width = s.get("bin-width", a.bin_width, 1.0)?;
    let results: PathBuf = s
        .get("results", a.results.as_ref().map(|p| p.display().to_string()), env.out.join("results.csv").display().to_string())?
        .into();
    let dataset = s.get("dataset", a.dataset.clone(), profile.name.clone())?;

    let seqs = load_sequences(s, &a.data, split, env.workers)?;
    let kind = model.spec().kind;
    check_masks(kind, &seqs)?;
    write_run_config(&env, "eval")?;

    let (metrics, labels) = if cross {
        let m = cross_dataset_eval(&model, &seqs, &profile, target_hz, env.workers)?;
        (m, Vec::new())
    } else {
        check_rate(&profile, &seqs)?;
        let clips = build_clips(&seqs, &profile, kind.uses_mask(), env.workers)?;
        let m = evaluate_model_with(&model, &clips, env.workers)?;
        (m, clips.iter().map(|c| c.label_speed).collect())
    };
    let split_name = split.map_or("all", |s| s.name());
    append_results(&results, kind.name(), &dataset, split_name, &metrics)?;
    println!(
        "{kind} on {dataset}/{split_name}{}: rmse {:.4} mae {:.4} n {}",
        if cross { format!(" (cross, {target_hz} Hz)") } else { String::new() },
        metrics.rmse,
        metrics.mae,
        metrics.n_samples
    );
    if histogram {
        if labels.is_empty() {
            bail!(usage("--histogram is not available with --cross"));
        }
        let path = env.out.join("speed_histogram.csv");
        let mut text = String::from("lower,upper,count\n");
        for (lo, hi, c) in speed_histogram(&labels, bin_width)? {
            text.push_str(&format!("{lo},{hi},{c}\n"));
        }
        fs::write(&path, text)?;
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let env = setup(&a.common, 0)?;
    let s = &env.settings;
    let d = SuiteOptions::default();
    let opts = SuiteOptions {
        cases: s.list("op", &a.ops)?,
        seeds: s.get("seeds", a.seeds, d.seeds)?,
        eps: s.get("eps", a.eps, d.eps)?,
        tolerance: s.get("tolerance", a.tolerance, d.tolerance)?,
        param_fraction: s.get("param-fraction", a.param_fraction, d.param_fraction)?,
        inject_sign_error: s.switch("inject-sign-error", a.inject_sign_error)?,
    };
    if opts.seeds == 0 || !(opts.param_fraction > 0.0 && opts.param_fraction <= 1.0) {
        return Err(usage("--seeds must be >= 1 and --param-fraction in (0, 1]"));
    }
    s.check_unused()?;
    let reports = run_suite(&opts)?;
    let mut report_csv = String::from("case,seed,checked,kinks,max_rel_err,passed\n");
    for r in &reports {
        println!(
            "{:<14} seed {:>3}  checked {:>5}  kinks {:>2}  max rel err {:.3e}  {}",
            r.case,
            r.seed,
            r.checked,
            r.kinks,
            r.max_rel_err,
            if r.passed { "ok" } else { "FAIL" }
        );
        report_csv.push_str(&format!(
            "{},{},{},{},{:e},{}\n",
            r.case, r.seed, r.checked, r.kinks, r.max_rel_err, r.passed
        ));
    }
    if a.common.out.is_some() || s.resolved().contains_key("out") && env.out != Path::new(".") {
        write_run_config(&env, "gradcheck")?;
        fs::write(env.out.join("gradcheck.csv"), report_csv)?;
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    println!(
        "gradcheck: {}/{} passed, max rel err {worst:.3e} (tolerance {:e})",
        reports.len() - failed,
        reports.len(),
        opts.tolerance
    );
    if failed > 0 {
        bail!("{failed} gradient check(s) failed");
    }
    Ok(())
}
