//! Clip ingestion: synthetic scenes, KITTI raw drives and CSV manifests,
//! all funnelled into [`FrameSequence`] and then into [`VideoClip`]s.

mod image;
mod kitti;
mod manifest;
mod splits;
mod synth;
mod window;

pub use self::image::{load_image, preprocess_clip, resize_bilinear, resize_mask_nearest, save_png, Image};
pub use kitti::{kitti_load_drive, KITTI_RATE_HZ, kitti_parse_oxts_speed, parse_kitti_timestamp};
pub use manifest::{load_manifest, load_manifest_sequences, write_manifest, ManifestRecord, ManifestSequence};
pub use splits::{load_split_table, kitti_drives, Category, KittiDrive, Split};
pub use synth::{
    dash_offset, export_synthetic_dataset, synth_generate_clip, CameraModel, DistractorConfig, LaneGeometry,
    SpeedProfile, SyntheticSceneConfig, SPEED_LIMIT,
};
pub(crate) use window::check_window;
pub use window::{
    clips_from_sequence, decimate, filter_stationary, make_windows, resample, DatasetProfile, Window,
    STATIONARY_SPEED,
};

use crate::error::{Error, Result};
use crate::models::INPUT_SIZE;
use crate::tensor::Tensor;

/// Loader knobs shared by the KITTI and manifest readers.
#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Threads used to decode images.
    pub workers: usize,
    /// Convert to gray and shrink to `s × s` while loading, bounding memory
    /// for full-resolution drives. Preprocessing later is then a no-op resize.
    pub resize_to: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            workers: 1,
            resize_to: None,
        }
    }
}

/// Ordered frames with per-frame timestamps (µs) and speeds (m/s).
#[derive(Clone, Debug)]
pub struct FrameSequence {
    pub frames: Vec<Image>,
    pub masks: Option<Vec<Image>>,
    pub timestamps_us: Vec<i64>,
    pub speeds: Vec<f64>,
    pub rate_hz: f64,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if self.timestamps_us.len() != n || self.speeds.len() != n {
            return Err(Error::Data(format!(
                "{n} frames but {} timestamps and {} speeds",
                self.timestamps_us.len(),
                self.speeds.len()
            )));
        }
        if let Some(m) = &self.masks {
            if m.len() != n {
                return Err(Error::Data(format!("{n} frames but {} masks", m.len())));
            }
        }
        if self.timestamps_us.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("timestamps must strictly increase".into()));
        }
        if let Some(s) = self.speeds.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::Data(format!("negative or NaN speed {s}")));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::Data("rate_hz must be positive".into()));
        }
        Ok(())
    }

    /// Frames `[start, start + len)` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> FrameSequence {
        let r = start..start + len;
        FrameSequence {
            frames: self.frames[r.clone()].to_vec(),
            masks: self.masks.as_ref().map(|m| m[r.clone()].to_vec()),
            timestamps_us: self.timestamps_us[r.clone()].to_vec(),
            speeds: self.speeds[r].to_vec(),
            rate_hz: self.rate_hz,
        }
    }

    /// Keeps only the frames at `indices`, with a new nominal rate.
    pub fn select(&self, indices: &[usize], rate_hz: f64) -> FrameSequence {
        FrameSequence {
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            masks: self
                .masks
                .as_ref()
                .map(|m| indices.iter().map(|&i| m[i].clone()).collect()),
            timestamps_us: indices.iter().map(|&i| self.timestamps_us[i]).collect(),
            speeds: indices.iter().map(|&i| self.speeds[i]).collect(),
            rate_hz,
        }
    }
}

/// One model input `[c, n, 64, 64]` with its speed label.
#[derive(Clone, Debug)]
pub struct VideoClip {
    pub input: Tensor,
    pub label_speed: f64,
    pub source_id: String,
}

impl VideoClip {
    pub fn channels(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.input.shape()[1]
    }

    /// Checks channel count, pixel range, binary mask channel and label.
    pub fn validate(&self) -> Result<()> {
        let s = self.input.shape();
        if s.len() != 4 || !(1..=2).contains(&s[0]) || s[2] != INPUT_SIZE || s[3] != INPUT_SIZE {
            return Err(Error::Data(format!("bad clip shape {s:?}")));
        }
        let plane = s[1] * s[2] * s[3];
        let data = self.input.data();
        if data[..plane].iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("gray values outside [0, 1]".into()));
        }
        if s[0] == 2 && data[plane..].iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("mask channel is not binary".into()));
        }
        if !(self.label_speed >= 0.0) {
            return Err(Error::Data(format!("label speed {} < 0", self.label_speed)));
        }
        Ok(())
    }

    /// The same clip with only the gray channel.
    pub fn without_mask(&self) -> VideoClip {
        let s = self.input.shape();
        if s[0] == 1 {
            return self.clone();
        }
        let plane = s[1] * s[2] * s[3];
        VideoClip {
            input: Tensor::from_vec(&[1, s[1], s[2], s[3]], self.input.data()[..plane].to_vec())
                .expect("gray plane"),
            label_speed: self.label_speed,
            source_id: self.source_id.clone(),
        }
    }
}

/// Runs `f` over `items` on up to `workers` scoped threads, keeping order.
pub fn par_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}
