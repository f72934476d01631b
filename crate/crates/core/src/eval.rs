//! RMSE / MAE and the cross-dataset protocol.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{self, clips_from_sequence, resample, DatasetProfile, FrameSequence, VideoClip};
use crate::error::{Error, Result};
use crate::models::Model;

fn check_pair(preds: &[f64], gts: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!("{} predictions vs {} targets", preds.len(), gts.len())));
    }
    Ok(())
}

pub fn rmse(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_pair(preds, gts)?;
    let sq: f64 = preds.iter().zip(gts).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok((sq / preds.len() as f64).sqrt())
}

pub fn mae(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_pair(preds, gts)?;
    let abs: f64 = preds.iter().zip(gts).map(|(p, g)| (p - g).abs()).sum();
    Ok(abs / preds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub n_samples: usize,
}

impl Metrics {
    pub fn from_predictions(preds: &[f64], gts: &[f64]) -> Result<Self> {
        Ok(Metrics {
            rmse: rmse(preds, gts)?,
            mae: mae(preds, gts)?,
            n_samples: preds.len(),
        })
    }
}

/// Forward every clip, in order, on up to `workers` threads.
pub fn predict_all(model: &Model, clips: &[VideoClip], workers: usize) -> Result<Vec<f64>> {
    let want = model.spec().input_shape();
    if let Some(c) = clips.iter().find(|c| c.input.shape() != want) {
        return Err(Error::Geometry(format!(
            "clip `{}` has shape {:?}, {} expects {want:?}",
            c.source_id,
            c.input.shape(),
            model.spec().kind
        )));
    }
    data::par_map(clips, workers, |c| model.predict(&c.input))
}

pub fn evaluate_model(model: &Model, clips: &[VideoClip]) -> Result<Metrics> {
    evaluate_model_with(model, clips, 1)
}

pub fn evaluate_model_with(model: &Model, clips: &[VideoClip], workers: usize) -> Result<Metrics> {
    let preds = predict_all(model, clips, workers)?;
    let gts: Vec<f64> = clips.iter().map(|c| c.label_speed).collect();
    Metrics::from_predictions(&preds, &gts)
}

/// Clips a model trained on `profile` sees when a stream recorded at another
/// rate is resampled to `target_hz` and windowed with the profile's frame
/// count and label frame. Non-overlapping windows.
pub fn cross_dataset_clips(
    model: &Model,
    sequences: &[(String, FrameSequence)],
    profile: &DatasetProfile,
    target_hz: f64,
) -> Result<Vec<VideoClip>> {
    data::check_window(target_hz, profile.window_s, profile.frames)?;
    let spec = model.spec();
    if spec.input_frames != profile.frames {
        return Err(Error::Geometry(format!(
            "model takes {} frames, profile `{}` has {}",
            spec.input_frames, profile.name, profile.frames
        )));
    }
    let windowing = DatasetProfile {
        stride: profile.frames,
        rate_hz: target_hz,
        ..profile.clone()
    };
    let mut clips = Vec::new();
    for (id, seq) in sequences {
        let decimated = resample(seq, target_hz)?;
        if decimated.len() < profile.frames {
            continue;
        }
        clips.extend(clips_from_sequence(&decimated, &windowing, spec.kind.uses_mask(), id)?);
    }
    if clips.is_empty() {
        return Err(Error::Data(format!(
            "no sequence covers {} frames at {target_hz} Hz",
            profile.frames
        )));
    }
    Ok(clips)
}

/// Resample → window → preprocess → evaluate. Refuses rate/window
/// combinations that cannot be met (e.g. ten frames within one second from a
/// 2 Hz stream).
pub fn cross_dataset_eval(
    model: &Model,
    sequences: &[(String, FrameSequence)],
    profile: &DatasetProfile,
    target_hz: f64,
    workers: usize,
) -> Result<Metrics> {
    let clips = cross_dataset_clips(model, sequences, profile, target_hz)?;
    evaluate_model_with(model, &clips, workers)
}

/// Appends `model,dataset,split,rmse,mae,n`, writing the header to new files.
pub fn append_results(path: &Path, model: &str, dataset: &str, split: &str, m: &Metrics) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "model,dataset,split,rmse,mae,n")?;
    }
    writeln!(f, "{model},{dataset},{split},{},{},{}", m.rmse, m.mae, m.n_samples)?;
    Ok(())
}

/// Speed histogram with `bin_width` m/s bins starting at 0:
/// `(lower, upper, count)` for every bin up to the largest speed.
pub fn speed_histogram(speeds: &[f64], bin_width: f64) -> Result<Vec<(f64, f64, usize)>> {
    if !(bin_width > 0.0) {
        return Err(Error::InvalidArgument("bin width must be positive".into()));
    }
    let max = speeds.iter().copied().fold(0.0, f64::max);
    let bins = ((max / bin_width).floor() as usize) + 1;
    let mut counts = vec![0; bins];
    for &s in speeds {
        counts[((s.max(0.0) / bin_width).floor() as usize).min(bins - 1)] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 * bin_width, (i + 1) as f64 * bin_width, c))
        .collect())
}
