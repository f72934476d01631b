use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_image, par_map, FrameSequence, LoadOptions, Split};
use crate::error::{Error, Result};

/// One row of `clip_id,frame_index,image_path,mask_path,timestamp_us,speed_mps,split`.
/// Paths are relative to the manifest's directory; an empty `mask_path`
/// means no mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub frame_index: usize,
    pub image_path: String,
    pub mask_path: String,
    pub timestamp_us: i64,
    pub speed_mps: f64,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct ManifestSequence {
    pub clip_id: String,
    pub split: Split,
    pub sequence: FrameSequence,
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let records = reader.deserialize().collect::<std::result::Result<Vec<ManifestRecord>, _>>()?;
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

/// Groups manifest rows into per-clip sequences (first-appearance order) and
/// decodes their images.
pub fn load_manifest_sequences(path: &Path, opts: &LoadOptions) -> Result<Vec<ManifestSequence>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let records = load_manifest(path)?;
    let mut order: Vec<String> = Vec::new();
    for r in &records {
        if !order.contains(&r.clip_id) {
            order.push(r.clip_id.clone());
        }
    }
    let groups: Vec<Vec<&ManifestRecord>> = order
        .iter()
        .map(|id| {
            let mut rows: Vec<&ManifestRecord> = records.iter().filter(|r| &r.clip_id == id).collect();
            rows.sort_by_key(|r| r.frame_index);
            rows
        })
        .collect();
    par_map(&groups, opts.workers, |rows| build_sequence(base, rows, opts))
}

fn build_sequence(base: &Path, rows: &[&ManifestRecord], opts: &LoadOptions) -> Result<ManifestSequence> {
    let id = &rows[0].clip_id;
    if rows.windows(2).any(|w| w[1].frame_index != w[0].frame_index + 1) {
        return Err(Error::Data(format!("clip `{id}`: frame indices are not contiguous")));
    }
    let split = rows[0].split;
    if rows.iter().any(|r| r.split != split) {
        return Err(Error::Data(format!("clip `{id}` mixes splits")));
    }
    if rows.len() < 2 {
        return Err(Error::Data(format!("clip `{id}` needs at least two frames")));
    }
    let with_masks = rows.iter().filter(|r| !r.mask_path.is_empty()).count();
    if with_masks != 0 && with_masks != rows.len() {
        return Err(Error::Data(format!("clip `{id}`: masks given for only some frames")));
    }
    let frames = rows
        .iter()
        .map(|r| Ok(opts.shrink(load_image(&base.join(&r.image_path))?)))
        .collect::<Result<Vec<_>>>()?;
    let masks = if with_masks > 0 {
        Some(
            rows.iter()
                .map(|r| Ok(opts.shrink_mask(load_image(&base.join(&r.mask_path))?)))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let timestamps_us: Vec<i64> = rows.iter().map(|r| r.timestamp_us).collect();
    let span = (timestamps_us[rows.len() - 1] - timestamps_us[0]) as f64;
    let sequence = FrameSequence {
        frames,
        masks,
        speeds: rows.iter().map(|r| r.speed_mps).collect(),
        rate_hz: if span > 0.0 { (rows.len() - 1) as f64 * 1e6 / span } else { 0.0 },
        timestamps_us,
    };
    sequence
        .validate()
        .map_err(|e| Error::Data(format!("clip `{id}`: {e}")))?;
    Ok(ManifestSequence {
        clip_id: id.clone(),
        split,
        sequence,
    })
}
