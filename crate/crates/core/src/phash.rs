//! 64-bit DCT perceptual hash and the bicubic resampler it shares with the
//! normalization stage.
//!
//! Hash pipeline: luma (0.299 R + 0.587 G + 0.114 B), bicubic resample to
//! 32x32, orthonormal 2-D DCT-II, keep the top-left 8x8 block (DC included),
//! snap the coefficients to a 1e-6 grid, threshold at the block median.
//! A bit is set iff its coefficient is strictly above the median. Bits are
//! row-major over the block with coefficient (0,0) in the most significant bit.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Side of the plane the DCT runs on.
pub const HASH_PLANE: usize = 32;
/// Side of the low-frequency block the bits come from.
pub const HASH_BLOCK: usize = 8;
/// Coefficients are rounded to multiples of this before thresholding, so
/// numerically-zero coefficients compare equal to exact zeros.
pub const COEFF_QUANTUM: f64 = 1e-6;

/// 64-bit perceptual hash. Serializes as 16 lowercase hex digits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash64(pub u64);

impl Hash64 {
    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }
}

impl fmt::Display for Hash64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for Hash64 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 16 {
            return Err(Error::Catalog(format!("hash {s:?} is not 16 hex digits")));
        }
        u64::from_str_radix(s, 16)
            .map(Hash64)
            .map_err(|_| Error::Catalog(format!("hash {s:?} is not hexadecimal")))
    }
}

impl Serialize for Hash64 {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash64 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Number of differing bits.
pub fn hamming(a: Hash64, b: Hash64) -> u32 {
    (a.0 ^ b.0).count_ones()
}

/// Single-channel image with real-valued samples, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane data length");
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Rec. 601 luma plane.
pub fn luma(image: &RgbImage) -> Plane {
    let data = image
        .pixels()
        .map(|Rgb([r, g, b])| 0.299 * f64::from(*r) + 0.587 * f64::from(*g) + 0.114 * f64::from(*b))
        .collect();
    Plane::new(image.width() as usize, image.height() as usize, data)
}

/// Catmull-Rom cubic (a = -0.5).
pub fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Contribution list for one output sample along one axis.
struct Taps {
    indices: Vec<usize>,
    weights: Vec<f64>,
}

/// Per-output-sample taps for resampling `src` samples to `dst`. When
/// shrinking, the kernel is stretched by the scale factor so every source
/// sample contributes; weights are renormalized to sum to one and source
/// indices are clamped at the edges.
fn axis_taps(src: usize, dst: usize) -> Vec<Taps> {
    let scale = src as f64 / dst as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let first = (center - support - 0.5).floor() as i64;
            let last = (center + support - 0.5).ceil() as i64;
            let mut indices = Vec::new();
            let mut weights = Vec::new();
            for j in first..=last {
                let w = catmull_rom((j as f64 + 0.5 - center) / stretch);
                if w != 0.0 {
                    indices.push(j.clamp(0, src as i64 - 1) as usize);
                    weights.push(w);
                }
            }
            let sum: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= sum);
            Taps { indices, weights }
        })
        .collect()
}

fn check_dims(sw: usize, sh: usize, tw: usize, th: usize) -> Result<()> {
    if sw == 0 || sh == 0 {
        return Err(Error::Dimensions {
            width: sw as u32,
            height: sh as u32,
        });
    }
    if tw == 0 || th == 0 {
        return Err(Error::Dimensions {
            width: tw as u32,
            height: th as u32,
        });
    }
    Ok(())
}

/// Separable bicubic resample of a real-valued plane. Values are not clamped.
pub fn resample_plane(plane: &Plane, target_w: usize, target_h: usize) -> Result<Plane> {
    check_dims(plane.width, plane.height, target_w, target_h)?;
    let horizontal = axis_taps(plane.width, target_w);
    let vertical = axis_taps(plane.height, target_h);

    let mut rows = vec![0.0; target_w * plane.height];
    for y in 0..plane.height {
        let src = &plane.data[y * plane.width..(y + 1) * plane.width];
        for (x, taps) in horizontal.iter().enumerate() {
            rows[y * target_w + x] = taps
                .indices
                .iter()
                .zip(&taps.weights)
                .map(|(&i, &w)| src[i] * w)
                .sum();
        }
    }

    let mut out = vec![0.0; target_w * target_h];
    for (y, taps) in vertical.iter().enumerate() {
        for x in 0..target_w {
            out[y * target_w + x] = taps
                .indices
                .iter()
                .zip(&taps.weights)
                .map(|(&i, &w)| rows[i * target_w + x] * w)
                .sum();
        }
    }
    Ok(Plane::new(target_w, target_h, out))
}

/// Bicubic resample of an RGB image with channels clamped to [0, 255].
pub fn resample_bicubic(image: &RgbImage, target_w: u32, target_h: u32) -> Result<RgbImage> {
    let (sw, sh) = (image.width() as usize, image.height() as usize);
    check_dims(sw, sh, target_w as usize, target_h as usize)?;
    if (sw, sh) == (target_w as usize, target_h as usize) {
        return Ok(image.clone());
    }
    let mut channels = Vec::with_capacity(3);
    for c in 0..3 {
        let data = image.pixels().map(|p| f64::from(p.0[c])).collect();
        channels.push(resample_plane(
            &Plane::new(sw, sh, data),
            target_w as usize,
            target_h as usize,
        )?);
    }
    let mut out = RgbImage::new(target_w, target_h);
    for (i, px) in out.pixels_mut().enumerate() {
        for c in 0..3 {
            px.0[c] = channels[c].data[i].round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// `cos(pi * (2x + 1) * u / 2n)` scaled to make the transform orthonormal,
/// indexed `[u * n + x]`.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut basis = vec![0.0; n * n];
    for u in 0..n {
        let alpha = if u == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for x in 0..n {
            basis[u * n + x] = alpha * (PI * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64).cos();
        }
    }
    basis
}

/// Orthonormal 2-D DCT-II of an `n x n` row-major block (rows then columns).
pub fn dct2(block: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(block.len(), n * n, "dct2 block size");
    let basis = dct_basis(n);
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for v in 0..n {
            tmp[y * n + v] = (0..n).map(|x| block[y * n + x] * basis[v * n + x]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            out[u * n + v] = (0..n).map(|y| tmp[y * n + v] * basis[u * n + y]).sum();
        }
    }
    out
}

/// Inverse of [`dct2`] (orthonormal DCT-III).
pub fn idct2(coeffs: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(coeffs.len(), n * n, "idct2 block size");
    let basis = dct_basis(n);
    let mut tmp = vec![0.0; n * n];
    for u in 0..n {
        for x in 0..n {
            tmp[u * n + x] = (0..n).map(|v| coeffs[u * n + v] * basis[v * n + x]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = (0..n).map(|u| tmp[u * n + x] * basis[u * n + y]).sum();
        }
    }
    out
}

/// The 32x32 luma plane the DCT is taken over.
pub fn hash_plane(image: &RgbImage) -> Result<Plane> {
    resample_plane(&luma(image), HASH_PLANE, HASH_PLANE)
}

/// Threshold an 8x8 row-major low-frequency block into a hash.
pub fn hash_from_block(block: &[f64]) -> Hash64 {
    assert_eq!(block.len(), HASH_BLOCK * HASH_BLOCK, "hash block size");
    let snapped: Vec<i64> = block
        .iter()
        .map(|c| (c / COEFF_QUANTUM).round() as i64)
        .collect();
    let mut sorted = snapped.clone();
    sorted.sort_unstable();
    // coefficient > (s[31] + s[32]) / 2, kept in integers
    let twice_median = sorted[31] + sorted[32];
    Hash64(
        snapped
            .iter()
            .fold(0u64, |bits, &c| (bits << 1) | u64::from(2 * c > twice_median)),
    )
}

/// Perceptual hash of decoded pixels.
pub fn phash64(image: &RgbImage) -> Result<Hash64> {
    let plane = hash_plane(image)?;
    let coeffs = dct2(&plane.data, HASH_PLANE);
    let mut block = Vec::with_capacity(HASH_BLOCK * HASH_BLOCK);
    for u in 0..HASH_BLOCK {
        block.extend_from_slice(&coeffs[u * HASH_PLANE..u * HASH_PLANE + HASH_BLOCK]);
    }
    Ok(hash_from_block(&block))
}

/// Decode `path` and hash it.
pub fn phash_file(path: &std::path::Path) -> Result<Hash64> {
    let image = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    phash64(&image.to_rgb8())
}
