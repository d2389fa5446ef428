//! Uniform square derivative of a dataset: aspect-preserving bicubic scale so
//! the shorter side equals the target, center crop, JPEG re-encode.

use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, RgbImage};
use serde::{Deserialize, Serialize};

use crate::catalog::{decode_image, Catalog, ImageId, ImageRecord};
use crate::error::IoContext;
use crate::phash::resample_bicubic;
use crate::{par, Error, Result};

pub const DEFAULT_TARGET: u32 = 336;
pub const DEFAULT_QUALITY: u8 = 95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizeOptions {
    pub target: u32,
    pub quality: u8,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions {
            target: DEFAULT_TARGET,
            quality: DEFAULT_QUALITY,
        }
    }
}

/// Intermediate size and crop window for one input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropPlan {
    pub scaled_w: u32,
    pub scaled_h: u32,
    pub offset_x: u32,
    pub offset_y: u32,
}

/// The shorter side becomes exactly `target`; the longer side is rounded to
/// the nearest integer and never drops below `target`. The crop offset on the
/// longer axis is `floor((L - target) / 2)`.
pub fn crop_plan(width: u32, height: u32, target: u32) -> Result<CropPlan> {
    if width == 0 || height == 0 {
        return Err(Error::Dimensions { width, height });
    }
    if target == 0 {
        return Err(Error::Dimensions {
            width: target,
            height: target,
        });
    }
    let scale_long = |long: u32, short: u32| -> u32 {
        let exact = f64::from(long) * f64::from(target) / f64::from(short);
        (exact.round() as u32).max(target)
    };
    let (scaled_w, scaled_h) = if width == height {
        (target, target)
    } else if width < height {
        (target, scale_long(height, width))
    } else {
        (scale_long(width, height), target)
    };
    Ok(CropPlan {
        scaled_w,
        scaled_h,
        offset_x: (scaled_w - target) / 2,
        offset_y: (scaled_h - target) / 2,
    })
}

pub fn resize_center_crop(image: &RgbImage, target: u32) -> Result<RgbImage> {
    let plan = crop_plan(image.width(), image.height(), target)?;
    let scaled = resample_bicubic(image, plan.scaled_w, plan.scaled_h)?;
    if plan.scaled_w == target && plan.scaled_h == target {
        return Ok(scaled);
    }
    Ok(image::imageops::crop_imm(&scaled, plan.offset_x, plan.offset_y, target, target).to_image())
}

/// Baseline JPEG at the given quality. No metadata segments are written, so
/// output depends only on pixels and quality.
pub fn encode_jpeg(image: &RgbImage, quality: u8) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, quality.clamp(1, 100))
        .encode(image.as_raw(), image.width(), image.height(), ExtendedColorType::Rgb8)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out)
}

/// `<out_dir>/<team>/<class>/<image_id>.jpg`
pub fn output_path(out_dir: &Path, record: &ImageRecord) -> PathBuf {
    out_dir
        .join(record.team.as_str())
        .join(record.class.as_str())
        .join(format!("{}.jpg", record.image_id))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeFailure {
    pub image_id: ImageId,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeReport {
    pub images_processed: usize,
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub target: u32,
    pub quality: u8,
    pub failures: Vec<NormalizeFailure>,
}

fn normalize_one(
    record: &ImageRecord,
    source_root: &Path,
    out_dir: &Path,
    options: NormalizeOptions,
) -> std::result::Result<u64, String> {
    if !record.readable {
        return Err("unreadable input".into());
    }
    let image = decode_image(&source_root.join(&record.rel_path)).map_err(|e| e.to_string())?;
    let square = resize_center_crop(&image, options.target).map_err(|e| e.to_string())?;
    let bytes = encode_jpeg(&square, options.quality).map_err(|e| e.to_string())?;
    let path = output_path(out_dir, record);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
    }
    fs::write(&path, &bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(bytes.len() as u64)
}

/// Normalizes every record of `catalog`, reading from `source_root` and
/// writing under `out_dir`. Per-image failures are collected, not raised.
pub fn process_dataset(
    catalog: &Catalog,
    source_root: &Path,
    out_dir: &Path,
    options: NormalizeOptions,
) -> Result<NormalizeReport> {
    fs::create_dir_all(out_dir).at(out_dir)?;
    let outcomes = par::map(catalog.records(), |r| {
        normalize_one(r, source_root, out_dir, options)
    });
    let mut report = NormalizeReport {
        target: options.target,
        quality: options.quality,
        ..NormalizeReport::default()
    };
    for (record, outcome) in catalog.records().iter().zip(outcomes) {
        match outcome {
            Ok(written) => {
                report.images_processed += 1;
                report.input_bytes += record.file_size_bytes;
                report.output_bytes += written;
            }
            Err(reason) => {
                log::warn!("normalize failed for {}: {reason}", record.rel_path);
                report.failures.push(NormalizeFailure {
                    image_id: record.image_id.clone(),
                    reason,
                });
            }
        }
    }
    report.failures.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn plans() {
        assert_eq!(
            crop_plan(3000, 4000, 336).unwrap(),
            CropPlan {
                scaled_w: 336,
                scaled_h: 448,
                offset_x: 0,
                offset_y: 56
            }
        );
        assert_eq!(
            crop_plan(500, 500, 336).unwrap(),
            CropPlan {
                scaled_w: 336,
                scaled_h: 336,
                offset_x: 0,
                offset_y: 0
            }
        );
        assert_eq!(
            crop_plan(200, 300, 336).unwrap(),
            CropPlan {
                scaled_w: 336,
                scaled_h: 504,
                offset_x: 0,
                offset_y: 84
            }
        );
        // near-square input: the longer side rounds back to the target
        assert_eq!(crop_plan(1001, 1000, 336).unwrap().scaled_w, 336);
        assert_eq!(crop_plan(4000, 3000, 336).unwrap().offset_x, 56);
        assert!(crop_plan(0, 10, 336).is_err());
    }

    #[test]
    fn output_is_square() {
        let img = RgbImage::from_fn(30, 50, |x, y| Rgb([x as u8 * 8, y as u8 * 5, 90]));
        let out = resize_center_crop(&img, 336).unwrap();
        assert_eq!(out.dimensions(), (336, 336));
        let jpeg = encode_jpeg(&out, 95).unwrap();
        let back = image::load_from_memory(&jpeg).unwrap();
        assert_eq!((back.width(), back.height()), (336, 336));
        assert_eq!(jpeg, encode_jpeg(&out, 95).unwrap());
    }

    #[test]
    fn empty_catalog_reports_zero() {
        let dir = tempfile::tempdir().unwrap();
        let report =
            process_dataset(&Catalog::default(), dir.path(), &dir.path().join("out"), NormalizeOptions::default())
                .unwrap();
        assert_eq!(report.images_processed, 0);
        assert_eq!(report.input_bytes, 0);
        assert!(report.failures.is_empty());
    }
}
