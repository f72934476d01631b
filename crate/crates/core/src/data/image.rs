use std::path::Path;

use image::{DynamicImage, GrayImage};

use crate::error::{Error, Result};
use crate::models::INPUT_SIZE;
use crate::tensor::Tensor;

/// Row-major `height × width × channels` image with values in `[0, 1]`.
/// Channels are 1 (gray or mask) or 3 (RGB).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || !matches!(channels, 1 | 3) {
            return Err(Error::Data(format!("bad image geometry {width}x{height}x{channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Data(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B`; gray images pass through.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path)?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let scale = |v: u8| f64::from(v) / 255.0;
    match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) => {
            Image::new(width, height, 1, img.to_luma8().into_raw().into_iter().map(scale).collect())
        }
        _ => Image::new(width, height, 3, img.to_rgb8().into_raw().into_iter().map(scale).collect()),
    }
}

/// Writes a single-channel image as 8-bit PNG (values rounded from `[0, 1]`).
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let gray = img.to_gray();
    let bytes = gray
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = GrayImage::from_raw(gray.width as u32, gray.height as u32, bytes)
        .ok_or_else(|| Error::Data("image buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &Image, width: usize, height: usize) -> Image {
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let taps = |dst: usize, scale: f64, len: usize| {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let c = img.channels;
    let mut data = Vec::with_capacity(width * height * c);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sy, img.height);
        for x in 0..width {
            let (x0, x1, fx) = taps(x, sx, img.width);
            for ch in 0..c {
                let top = img.at(y0, x0, ch) * (1.0 - fx) + img.at(y0, x1, ch) * fx;
                let bottom = img.at(y1, x0, ch) * (1.0 - fx) + img.at(y1, x1, ch) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Image {
        width,
        height,
        channels: c,
        data,
    }
}

/// Nearest-neighbour resampling followed by a 0.5 threshold.
pub fn resize_mask_nearest(mask: &Image, width: usize, height: usize) -> Image {
    let mask = mask.to_gray();
    let pick = |dst: usize, len: usize, out: usize| (((dst as f64 + 0.5) * len as f64 / out as f64) as usize).min(len - 1);
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = pick(y, mask.height, height);
        for x in 0..width {
            let sx = pick(x, mask.width, width);
            data.push(if mask.at(sy, sx, 0) > 0.5 { 1.0 } else { 0.0 });
        }
    }
    Image {
        width,
        height,
        channels: 1,
        data,
    }
}

/// Gray (and optionally mask) frames → `[c, n, 64, 64]`, gray channel first.
pub fn preprocess_clip(frames: &[Image], masks: Option<&[Image]>, with_mask: bool) -> Result<Tensor> {
    if frames.is_empty() {
        return Err(Error::Data("no frames to preprocess".into()));
    }
    let n = frames.len();
    let plane = INPUT_SIZE * INPUT_SIZE;
    let channels = if with_mask { 2 } else { 1 };
    let mut data = Vec::with_capacity(channels * n * plane);
    for f in frames {
        let g = resize_bilinear(&f.to_gray(), INPUT_SIZE, INPUT_SIZE);
        data.extend(g.data.iter().map(|v| v.clamp(0.0, 1.0)));
    }
    if with_mask {
        let masks = masks.ok_or_else(|| Error::Data("mask channel requested but the sequence has no masks".into()))?;
        if masks.len() != n {
            return Err(Error::Data(format!("{n} frames but {} masks", masks.len())));
        }
        for m in masks {
            data.extend(resize_mask_nearest(m, INPUT_SIZE, INPUT_SIZE).data);
        }
    }
    Tensor::from_vec(&[channels, n, INPUT_SIZE, INPUT_SIZE], data)
}
