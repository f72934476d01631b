use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;

use super::{load_image, par_map, resize_bilinear, resize_mask_nearest, FrameSequence, Image, LoadOptions};
use crate::error::{Error, Result};

/// KITTI raw drives are synchronized at 10 Hz.
pub const KITTI_RATE_HZ: f64 = 10.0;

const OXTS_MIN_FIELDS: usize = 9;
const VN: usize = 6;
const VE: usize = 7;

/// Horizontal speed `sqrt(vn² + ve²)` from one oxts record.
pub fn kitti_parse_oxts_speed(record: &str) -> Result<f64> {
    let fields = record
        .split_whitespace()
        .map(|f| f.parse::<f64>().map_err(|_| Error::Parse(format!("non-numeric oxts field `{f}`"))))
        .collect::<Result<Vec<_>>>()?;
    if fields.len() < OXTS_MIN_FIELDS {
        return Err(Error::Parse(format!(
            "oxts record has {} fields, need at least {OXTS_MIN_FIELDS}",
            fields.len()
        )));
    }
    Ok(fields[VN].hypot(fields[VE]))
}

/// `2011-09-26 13:02:25.964389445` → microseconds since the Unix epoch.
pub fn parse_kitti_timestamp(line: &str) -> Result<i64> {
    let t = NaiveDateTime::parse_from_str(line.trim(), "%Y-%m-%d %H:%M:%S%.f")
        .map_err(|e| Error::Parse(format!("timestamp `{}`: {e}", line.trim())))?;
    Ok(t.and_utc().timestamp_micros())
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads `<root>/<date>/<drive_id>_sync`: `image_03/data/*.png`,
/// `oxts/data/*.txt` and `oxts/timestamps.txt`. Lane masks are read from a
/// parallel `mask_03/data/*.png` directory when present.
pub fn kitti_load_drive(root: &Path, drive_id: &str, opts: &LoadOptions) -> Result<FrameSequence> {
    let date = drive_id
        .get(..10)
        .ok_or_else(|| Error::InvalidArgument(format!("drive id `{drive_id}` lacks a date prefix")))?;
    let dir = root.join(date).join(format!("{drive_id}_sync"));
    let images = sorted_files(&dir.join("image_03/data"), "png")?;
    let oxts = sorted_files(&dir.join("oxts/data"), "txt")?;
    let stamps_path = dir.join("oxts/timestamps.txt");
    let stamps = fs::read_to_string(&stamps_path)
        .map_err(|e| Error::Data(format!("{}: {e}", stamps_path.display())))?;
    let timestamps_us = stamps
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_kitti_timestamp)
        .collect::<Result<Vec<_>>>()?;
    if images.len() != oxts.len() || images.len() != timestamps_us.len() {
        return Err(Error::Data(format!(
            "{drive_id}: {} images, {} oxts records, {} timestamps",
            images.len(),
            oxts.len(),
            timestamps_us.len()
        )));
    }
    if images.is_empty() {
        return Err(Error::Data(format!("{drive_id}: no frames")));
    }
    let speeds = oxts
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            kitti_parse_oxts_speed(text.lines().next().unwrap_or(""))
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = par_map(&images, opts.workers, |p| Ok(opts.shrink(load_image(p)?)))?;
    let mask_dir = dir.join("mask_03/data");
    let masks = if mask_dir.is_dir() {
        let files = sorted_files(&mask_dir, "png")?;
        if files.len() != images.len() {
            return Err(Error::Data(format!(
                "{drive_id}: {} masks for {} images",
                files.len(),
                images.len()
            )));
        }
        Some(par_map(&files, opts.workers, |p| Ok(opts.shrink_mask(load_image(p)?)))?)
    } else {
        None
    };
    let seq = FrameSequence {
        frames,
        masks,
        timestamps_us,
        speeds,
        rate_hz: KITTI_RATE_HZ,
    };
    seq.validate()?;
    Ok(seq)
}

impl LoadOptions {
    pub(crate) fn shrink(&self, img: Image) -> Image {
        match self.resize_to {
            Some(s) => resize_bilinear(&img.to_gray(), s, s),
            None => img,
        }
    }

    pub(crate) fn shrink_mask(&self, img: Image) -> Image {
        match self.resize_to {
            Some(s) => resize_mask_nearest(&img, s, s),
            None => img,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let rec = "49.0 8.4 112.0 0.02 0.01 1.2 3 4 5.0 0.1 0.0";
        assert_eq!(kitti_parse_oxts_speed(rec).unwrap(), 5.0);
    }

    #[test]
    fn short_record_rejected() {
        assert!(kitti_parse_oxts_speed("1 2 3 4 5 6 7 8").is_err());
        assert!(kitti_parse_oxts_speed("1 2 3 4 5 6 x 8 9").is_err());
    }

    #[test]
    fn timestamp_micros() {
        let a = parse_kitti_timestamp("2011-09-26 13:02:25.964389445").unwrap();
        let b = parse_kitti_timestamp("2011-09-26 13:02:26.064389445").unwrap();
        assert_eq!(b - a, 100_000);
    }
}
