//! Synthetic dashcam scenes.
//!
//! A pinhole camera at height `h` looks along a flat road. Pixel row `y`
//! below the horizon sees ground distance `Z = f·h / (y + 0.5 − horizon)` and
//! lateral offset `X = (x + 0.5 − W/2)·Z / f`. Dashed lane lines are painted
//! in ground coordinates and shift by the distance travelled, so the image
//! motion of the dashes encodes ego speed. Distractor rectangles drift with
//! their own velocities and are drawn into the gray frame only.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{save_png, FrameSequence, Image, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::rng;

/// Highest speed (m/s) any profile may reach.
pub const SPEED_LIMIT: f64 = 20.0;

const SKY: f64 = 0.55;
const ROAD: f64 = 0.3;
const PAINT: f64 = 0.9;
/// Lane paint beyond this distance (m) is not drawn.
const DRAW_DISTANCE: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedProfile {
    Constant { speed: f64 },
    /// Linear from `start` to `end` over `duration_s`, constant afterwards.
    Ramp { start: f64, end: f64, duration_s: f64 },
    Sinusoid { mean: f64, amplitude: f64, period_s: f64 },
}

impl SpeedProfile {
    pub fn speed_at(&self, t: f64) -> f64 {
        match *self {
            SpeedProfile::Constant { speed } => speed,
            SpeedProfile::Ramp { start, end, duration_s } => start + (end - start) * (t / duration_s).clamp(0.0, 1.0),
            SpeedProfile::Sinusoid { mean, amplitude, period_s } => {
                mean + amplitude * (2.0 * std::f64::consts::PI * t / period_s).sin()
            }
        }
    }

    /// Distance travelled over `[0, t]`.
    pub fn distance(&self, t: f64) -> f64 {
        match *self {
            SpeedProfile::Constant { speed } => speed * t,
            SpeedProfile::Ramp { start, end, duration_s } => {
                let ramp_t = t.min(duration_s);
                let ramp = start * ramp_t + 0.5 * (end - start) / duration_s * ramp_t * ramp_t;
                ramp + end * (t - ramp_t)
            }
            SpeedProfile::Sinusoid { mean, amplitude, period_s } => {
                let w = 2.0 * std::f64::consts::PI / period_s;
                mean * t + amplitude / w * (1.0 - (w * t).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi, ok) = match *self {
            SpeedProfile::Constant { speed } => (speed, speed, true),
            SpeedProfile::Ramp { start, end, duration_s } => (start.min(end), start.max(end), duration_s > 0.0),
            SpeedProfile::Sinusoid { mean, amplitude, period_s } => {
                (mean - amplitude.abs(), mean + amplitude.abs(), period_s > 0.0)
            }
        };
        if !ok || !(lo >= 0.0 && hi <= SPEED_LIMIT) {
            return Err(Error::InvalidArgument(format!(
                "speed profile must stay within [0, {SPEED_LIMIT}] m/s: {self:?}"
            )));
        }
        Ok(())
    }

    /// A seeded ramp with both endpoints drawn from `[min, max]`.
    pub fn random_ramp(seed: u64, min: f64, max: f64, duration_s: f64) -> Self {
        let mut r = rng::stream(seed, 11);
        let start = r.random_range(min..=max);
        let end = (start + r.random_range(-2.0..=2.0)).clamp(min, max);
        SpeedProfile::Ramp { start, end, duration_s }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    pub lane_width_m: f64,
    pub marking_width_m: f64,
    pub dash_length_m: f64,
    pub dash_gap_m: f64,
}

impl LaneGeometry {
    pub fn period(&self) -> f64 {
        self.dash_length_m + self.dash_gap_m
    }

    /// Lateral positions of the painted lines: both edges of the ego lane
    /// and of one neighbouring lane on each side.
    pub fn line_offsets(&self) -> [f64; 4] {
        let w = self.lane_width_m;
        [-1.5 * w, -0.5 * w, 0.5 * w, 1.5 * w]
    }
}

impl Default for LaneGeometry {
    fn default() -> Self {
        LaneGeometry {
            lane_width_m: 3.5,
            marking_width_m: 0.3,
            dash_length_m: 3.0,
            dash_gap_m: 6.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub height_m: f64,
    pub focal_px: f64,
    pub horizon_row: f64,
}

impl CameraModel {
    /// Forward-looking camera for a `width × height` image.
    pub fn for_size(width: usize, height: usize) -> Self {
        CameraModel {
            height_m: 1.5,
            focal_px: 0.8 * width as f64,
            horizon_row: 0.4 * height as f64,
        }
    }

    /// Ground distance seen by pixel row `y` (center), if below the horizon.
    pub fn ground_distance(&self, y: usize) -> Option<f64> {
        let dy = y as f64 + 0.5 - self.horizon_row;
        (dy > 0.0).then(|| self.focal_px * self.height_m / dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistractorConfig {
    pub count: usize,
    /// Velocity components are drawn from `[-max, max]` px/s.
    pub max_speed_px_s: f64,
    pub min_size_px: usize,
    pub max_size_px: usize,
}

impl Default for DistractorConfig {
    fn default() -> Self {
        DistractorConfig {
            count: 0,
            max_speed_px_s: 40.0,
            min_size_px: 4,
            max_size_px: 14,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneConfig {
    pub speed: SpeedProfile,
    pub lane: LaneGeometry,
    pub camera: CameraModel,
    pub distractors: DistractorConfig,
    pub noise_std: f64,
    pub frames: usize,
    pub rate_hz: f64,
    pub width: usize,
    pub height: usize,
}

impl SyntheticSceneConfig {
    /// Noise-free, distractor-free 64×64 scene at `rate_hz`.
    pub fn new(speed: SpeedProfile, frames: usize, rate_hz: f64) -> Self {
        SyntheticSceneConfig {
            speed,
            lane: LaneGeometry::default(),
            camera: CameraModel::for_size(64, 64),
            distractors: DistractorConfig::default(),
            noise_std: 0.0,
            frames,
            rate_hz,
            width: 64,
            height: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.speed.validate()?;
        let d = &self.distractors;
        let lane = &self.lane;
        if self.frames == 0 || !(self.rate_hz > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("frames, rate and size must be positive".into()));
        }
        if !(self.noise_std >= 0.0) || d.min_size_px == 0 || d.min_size_px > d.max_size_px || !(d.max_speed_px_s >= 0.0) {
            return Err(Error::InvalidArgument("bad noise or distractor settings".into()));
        }
        if !(lane.dash_length_m > 0.0 && lane.dash_gap_m > 0.0 && lane.marking_width_m > 0.0 && lane.lane_width_m > 0.0) {
            return Err(Error::InvalidArgument("lane dimensions must be positive".into()));
        }
        if !(self.camera.height_m > 0.0 && self.camera.focal_px > 0.0) {
            return Err(Error::InvalidArgument("camera height and focal length must be positive".into()));
        }
        Ok(())
    }
}

/// Ground-plane shift of the dash pattern after `t` seconds.
pub fn dash_offset(config: &SyntheticSceneConfig, t: f64) -> f64 {
    config.speed.distance(t)
}

struct Distractor {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    w: usize,
    h: usize,
    value: f64,
}

/// Renders one seeded clip. Masks mark exactly the painted lane pixels.
pub fn synth_generate_clip(config: &SyntheticSceneConfig, seed: u64) -> Result<FrameSequence> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut setup = rng::stream(seed, 1);
    let phase = setup.random_range(0.0..config.lane.period());
    let d = config.distractors;
    let distractors: Vec<Distractor> = (0..d.count)
        .map(|_| Distractor {
            x: setup.random_range(0.0..w as f64),
            y: setup.random_range(0.0..h as f64),
            vx: setup.random_range(-d.max_speed_px_s..=d.max_speed_px_s),
            vy: setup.random_range(-d.max_speed_px_s..=d.max_speed_px_s),
            w: setup.random_range(d.min_size_px..=d.max_size_px),
            h: setup.random_range(d.min_size_px..=d.max_size_px),
            value: setup.random_range(0.0..1.0),
        })
        .collect();
    let mut noise = rng::stream(seed, 2);

    let mut frames = Vec::with_capacity(config.frames);
    let mut masks = Vec::with_capacity(config.frames);
    let mut timestamps_us = Vec::with_capacity(config.frames);
    let mut speeds = Vec::with_capacity(config.frames);
    for i in 0..config.frames {
        let t = i as f64 / config.rate_hz;
        let (gray, mask) = render(config, phase + dash_offset(config, t));
        let mut gray = gray;
        for dis in &distractors {
            let x0 = (dis.x + dis.vx * t).rem_euclid(w as f64) as usize;
            let y0 = (dis.y + dis.vy * t).rem_euclid(h as f64) as usize;
            for yy in y0..(y0 + dis.h).min(h) {
                for xx in x0..(x0 + dis.w).min(w) {
                    gray[yy * w + xx] = dis.value;
                }
            }
        }
        if config.noise_std > 0.0 {
            let n = rng::normal_vec(&mut noise, w * h, config.noise_std);
            for (g, e) in gray.iter_mut().zip(n) {
                *g = (*g + e).clamp(0.0, 1.0);
            }
        }
        frames.push(Image::new(w, h, 1, gray)?);
        masks.push(Image::new(w, h, 1, mask)?);
        timestamps_us.push((t * 1e6).round() as i64);
        speeds.push(config.speed.speed_at(t));
    }
    Ok(FrameSequence {
        frames,
        masks: Some(masks),
        timestamps_us,
        speeds,
        rate_hz: config.rate_hz,
    })
}

/// Gray frame and lane mask for a dash pattern shifted by `shift` metres.
fn render(config: &SyntheticSceneConfig, shift: f64) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (config.width, config.height);
    let cam = &config.camera;
    let lane = &config.lane;
    let half_mark = 0.5 * lane.marking_width_m;
    let mut gray = vec![SKY; w * h];
    let mut mask = vec![0.0; w * h];
    for y in 0..h {
        let Some(z) = cam.ground_distance(y) else {
            continue;
        };
        let dashed = (z + shift).rem_euclid(lane.period()) < lane.dash_length_m;
        for x in 0..w {
            let lateral = (x as f64 + 0.5 - 0.5 * w as f64) * z / cam.focal_px;
            let painted = dashed
                && z <= DRAW_DISTANCE
                && lane.line_offsets().iter().any(|&o| (lateral - o).abs() < half_mark);
            gray[y * w + x] = if painted { PAINT } else { ROAD };
            if painted {
                mask[y * w + x] = 1.0;
            }
        }
    }
    (gray, mask)
}

/// Writes `frames/<clip>/NNNN.png`, `masks/<clip>/NNNN.png` and
/// `manifest.csv` under `dir`; returns the manifest rows.
pub fn export_synthetic_dataset(dir: &Path, clips: &[(String, Split, FrameSequence)]) -> Result<Vec<ManifestRecord>> {
    let mut records = Vec::new();
    for (clip_id, split, seq) in clips {
        let frame_dir = dir.join("frames").join(clip_id);
        let mask_dir = dir.join("masks").join(clip_id);
        fs::create_dir_all(&frame_dir)?;
        if seq.masks.is_some() {
            fs::create_dir_all(&mask_dir)?;
        }
        for i in 0..seq.len() {
            let image_path = format!("frames/{clip_id}/{i:04}.png");
            save_png(&seq.frames[i], &dir.join(&image_path))?;
            let mask_path = match &seq.masks {
                Some(m) => {
                    let p = format!("masks/{clip_id}/{i:04}.png");
                    save_png(&m[i], &dir.join(&p))?;
                    p
                }
                None => String::new(),
            };
            records.push(ManifestRecord {
                clip_id: clip_id.clone(),
                frame_index: i,
                image_path,
                mask_path,
                timestamp_us: seq.timestamps_us[i],
                speed_mps: seq.speeds[i],
                split: *split,
            });
        }
    }
    super::write_manifest(&dir.join("manifest.csv"), &records)?;
    Ok(records)
}
