use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{preprocess_clip, FrameSequence, VideoClip};
use crate::error::{Error, Result};

/// Labels below this speed (m/s) count as stationary.
pub const STATIONARY_SPEED: f64 = 0.1;

/// Temporal sampling of one dataset family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    /// Frames per clip.
    pub frames: usize,
    /// 1-based frame whose speed labels the clip.
    pub label_frame: usize,
    pub rate_hz: f64,
    /// Nominal span of one clip in seconds.
    pub window_s: f64,
    /// Start-to-start distance between consecutive windows.
    pub stride: usize,
}

impl DatasetProfile {
    /// 10 frames at 10 Hz (1 s), labeled by the 10th frame, overlapping windows.
    pub fn kitti() -> Self {
        DatasetProfile {
            name: "kitti".into(),
            frames: 10,
            label_frame: 10,
            rate_hz: 10.0,
            window_s: 1.0,
            stride: 5,
        }
    }

    /// 13 frames at 2 Hz (6 s) centred on the 7th, non-overlapping windows.
    pub fn nuimages() -> Self {
        DatasetProfile {
            name: "nuimages".into(),
            frames: 13,
            label_frame: 7,
            rate_hz: 2.0,
            window_s: 6.0,
            stride: 13,
        }
    }
}

impl FromStr for DatasetProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kitti" => Ok(Self::kitti()),
            "nuimages" => Ok(Self::nuimages()),
            other => Err(Error::InvalidArgument(format!("unknown dataset profile `{other}`"))),
        }
    }
}

/// A clip precursor: `n` frames starting at `start`, and its label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub start: usize,
    pub label_speed: f64,
}

/// Sliding windows of `n` frames every `stride` frames; the window starting at
/// `k` is labeled with the speed of frame `k + label_frame - 1`.
pub fn make_windows(seq: &FrameSequence, n: usize, label_frame: usize, stride: usize) -> Result<Vec<Window>> {
    if n == 0 || stride == 0 || !(1..=n).contains(&label_frame) {
        return Err(Error::InvalidArgument(format!(
            "need n >= 1, stride >= 1 and 1 <= label_frame <= n (n={n}, label_frame={label_frame}, stride={stride})"
        )));
    }
    if seq.len() < n {
        return Err(Error::Data(format!("sequence of {} frames is shorter than {n}", seq.len())));
    }
    Ok((0..=seq.len() - n)
        .step_by(stride)
        .map(|start| Window {
            start,
            label_speed: seq.speeds[start + label_frame - 1],
        })
        .collect())
}

/// Drops stationary windows when most of the sequence is stationary.
pub fn filter_stationary(seq: &FrameSequence, windows: Vec<Window>) -> Vec<Window> {
    let still = seq.speeds.iter().filter(|&&s| s < STATIONARY_SPEED).count();
    if 2 * still <= seq.len() {
        return windows;
    }
    windows.into_iter().filter(|w| w.label_speed >= STATIONARY_SPEED).collect()
}

/// Nearest-timestamp resampling onto a `target_hz` grid starting at the first
/// frame. Every selected frame lies within half a source period of its grid
/// point.
pub fn resample(seq: &FrameSequence, target_hz: f64) -> Result<FrameSequence> {
    if !(target_hz > 0.0) {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    // Rates estimated from rounded timestamps may sit a hair below nominal.
    if seq.rate_hz * (1.0 + 1e-4) < target_hz {
        return Err(Error::Infeasible(format!(
            "cannot sample a {} Hz stream at {target_hz} Hz",
            seq.rate_hz
        )));
    }
    if seq.is_empty() {
        return Err(Error::Data("empty sequence".into()));
    }
    let ts = &seq.timestamps_us;
    let half_src = 0.5e6 / seq.rate_hz;
    let period = 1e6 / target_hz;
    let (first, last) = (ts[0] as f64, ts[ts.len() - 1] as f64);
    let mut indices = Vec::new();
    for k in 0.. {
        let ideal = first + k as f64 * period;
        if ideal > last + half_src {
            break;
        }
        let pos = ts.partition_point(|&t| (t as f64) < ideal);
        let best = [pos.saturating_sub(1), pos.min(ts.len() - 1)]
            .into_iter()
            .min_by(|&a, &b| (ts[a] as f64 - ideal).abs().total_cmp(&(ts[b] as f64 - ideal).abs()))
            .expect("two candidates");
        let deviation = (ts[best] as f64 - ideal).abs();
        if deviation > half_src {
            return Err(Error::Data(format!(
                "no frame within {half_src} µs of grid time {ideal} (nearest is {deviation} µs away)"
            )));
        }
        indices.push(best);
    }
    Ok(seq.select(&indices, target_hz))
}

/// The first `n` frames of `seq` resampled to `target_hz`; they must fit in
/// `window_s` seconds.
pub fn decimate(seq: &FrameSequence, target_hz: f64, window_s: f64, n: usize) -> Result<FrameSequence> {
    check_window(target_hz, window_s, n)?;
    let out = resample(seq, target_hz)?;
    if out.len() < n {
        return Err(Error::Data(format!(
            "sequence spans {} frames at {target_hz} Hz, {n} needed to cover {window_s} s",
            out.len()
        )));
    }
    Ok(out.slice(0, n))
}

/// `n` frames at `hz` must span at most `window_s`.
pub(crate) fn check_window(hz: f64, window_s: f64, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let span = (n - 1) as f64 / hz;
    if span > window_s + 1e-9 {
        return Err(Error::Infeasible(format!(
            "{n} frames at {hz} Hz span {span} s, more than the {window_s} s window"
        )));
    }
    Ok(())
}

/// Windows → stationary filter → preprocessed clips for one sequence.
pub fn clips_from_sequence(
    seq: &FrameSequence,
    profile: &DatasetProfile,
    with_mask: bool,
    source_id: &str,
) -> Result<Vec<VideoClip>> {
    let windows = make_windows(seq, profile.frames, profile.label_frame, profile.stride)?;
    filter_stationary(seq, windows)
        .into_iter()
        .map(|w| {
            let frames = &seq.frames[w.start..w.start + profile.frames];
            let masks = seq.masks.as_ref().map(|m| &m[w.start..w.start + profile.frames]);
            Ok(VideoClip {
                input: preprocess_clip(frames, masks, with_mask)?,
                label_speed: w.label_speed,
                source_id: format!("{source_id}@{}", w.start),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Image;

    fn seq(len: usize, rate: f64) -> FrameSequence {
        FrameSequence {
            frames: vec![Image::filled(4, 4, 1, 0.0); len],
            masks: None,
            timestamps_us: (0..len).map(|i| (i as f64 * 1e6 / rate).round() as i64).collect(),
            speeds: (0..len).map(|i| i as f64).collect(),
            rate_hz: rate,
        }
    }

    #[test]
    fn window_count() {
        assert_eq!(make_windows(&seq(12, 10.0), 10, 10, 1).unwrap().len(), 3);
        assert!(make_windows(&seq(9, 10.0), 10, 10, 1).is_err());
        assert!(make_windows(&seq(12, 10.0), 10, 11, 1).is_err());
    }

    #[test]
    fn identity_resample() {
        let s = seq(15, 10.0);
        let r = decimate(&s, 10.0, 1.0, 10).unwrap();
        assert_eq!(r.timestamps_us, s.timestamps_us[..10]);
    }

    #[test]
    fn upsampling_refused() {
        assert!(matches!(resample(&seq(30, 2.0), 10.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn stationary_heavy_drive_filtered() {
        let mut s = seq(20, 10.0);
        s.speeds = (0..20).map(|i| if i < 15 { 0.0 } else { 5.0 }).collect();
        let w = make_windows(&s, 5, 5, 1).unwrap();
        let kept = filter_stationary(&s, w);
        assert!(kept.iter().all(|w| w.label_speed >= STATIONARY_SPEED));
        assert_eq!(kept.len(), 5);
    }
}
