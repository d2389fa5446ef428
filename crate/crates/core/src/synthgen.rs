//! Synthetic multi-team image sets: a class signal carried by leaf shape,
//! hue and vein texture, plus a per-team domain shift in color, exposure,
//! noise, blur and compression.
//!
//! Every image is drawn from its own random stream keyed by
//! `(seed, team, class, index)`, so output does not depend on scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::RgbImage;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::{record_from_bytes, Catalog, ClassLabel, ImageRecord, TeamId};
use crate::error::{json_err, IoContext};
use crate::normalize::encode_jpeg;
use crate::splits::SplitRng;
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub lobe_count: u32,
    /// Degrees in `[0, 360)`.
    pub base_hue: f64,
    /// Vein stripes per leaf radius.
    pub texture_freq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    /// Degrees added to every hue in the scene.
    pub hue_shift: f64,
    pub brightness_gain: f64,
    /// Gaussian noise std in gray levels.
    pub noise_sigma: f64,
    /// Box blur radius in pixels.
    pub blur_radius: u32,
    pub encode_quality: u8,
}

impl DomainParams {
    /// No shift, no degradation, quality 95.
    pub fn neutral() -> Self {
        DomainParams {
            hue_shift: 0.0,
            brightness_gain: 1.0,
            noise_sigma: 0.0,
            blur_radius: 0,
            encode_quality: 95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: ClassLabel,
    pub params: ClassParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamSpec {
    pub team: TeamId,
    pub domain: DomainParams,
    pub counts: BTreeMap<ClassLabel, usize>,
    /// Written as the EXIF Model tag when present.
    #[serde(default)]
    pub device: Option<String>,
    #[serde(default)]
    pub outlier: bool,
}

/// Copies of existing images placed in other teams' folders. Group `i` has
/// `2 + i % 6` members, so any six consecutive groups cover sizes 2 to 7.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuplicatePlan {
    pub groups: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub teams: Vec<TeamSpec>,
    pub classes: Vec<ClassSpec>,
    pub image_size: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicates: Option<DuplicatePlan>,
}

pub const DEFAULT_IMAGE_SIZE: u32 = 96;
pub const DEFAULT_PER_CELL: usize = 40;
pub const MAX_GROUP_SIZE: usize = 7;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth spec: {m}")));
        if self.teams.len() < 2 || self.classes.len() < 2 {
            return bad("need at least 2 teams and 2 classes".into());
        }
        if self.image_size < 8 {
            return bad(format!("image_size {} is below 8", self.image_size));
        }
        let classes: BTreeSet<&ClassLabel> = self.classes.iter().map(|c| &c.label).collect();
        if classes.len() != self.classes.len() {
            return bad("duplicate class label".into());
        }
        for c in &self.classes {
            let p = &c.params;
            if p.lobe_count == 0 || !(p.texture_freq > 0.0 && p.texture_freq.is_finite()) || !p.base_hue.is_finite() {
                return bad(format!("invalid parameters for class {}", c.label));
            }
        }
        let mut names = BTreeSet::new();
        for t in &self.teams {
            if t.team.as_str().is_empty() || t.team.as_str().contains(['/', '\\']) || !names.insert(&t.team) {
                return bad(format!("invalid or repeated team name {:?}", t.team.as_str()));
            }
            let d = &t.domain;
            let finite = [d.hue_shift, d.brightness_gain, d.noise_sigma].iter().all(|v| v.is_finite());
            if !finite || d.brightness_gain <= 0.0 || d.noise_sigma < 0.0 || !(50..=100).contains(&d.encode_quality) {
                return bad(format!("invalid domain parameters for team {}", t.team));
            }
            if let Some(c) = t.counts.keys().find(|c| !classes.contains(c)) {
                return bad(format!("team {} counts unknown class {c}", t.team));
            }
        }
        if self.duplicates.as_ref().is_some_and(|d| d.groups > 0) && self.teams.len() < MAX_GROUP_SIZE {
            return bad(format!("planted duplicates need at least {MAX_GROUP_SIZE} teams"));
        }
        Ok(())
    }

    pub fn total_images(&self) -> usize {
        self.teams.iter().flat_map(|t| t.counts.values()).sum()
    }

    pub fn outliers(&self) -> impl Iterator<Item = &TeamId> {
        self.teams.iter().filter(|t| t.outlier).map(|t| &t.team)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let spec: SynthSpec = serde_json::from_str(&text).map_err(json_err(path.display().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes") + "\n"
    }

    /// Same teams and classes with every cell set to `per_cell`.
    pub fn with_per_cell(mut self, per_cell: usize) -> Self {
        for t in &mut self.teams {
            for v in t.counts.values_mut() {
                *v = per_cell;
            }
        }
        self
    }
}

fn six_classes() -> Vec<ClassSpec> {
    [
        ("carob", 4, 20.0, 3.0),
        ("oak", 7, 80.0, 5.0),
        ("pepper", 1, 140.0, 2.0),
        ("ash", 5, 200.0, 4.0),
        ("pistachio", 3, 260.0, 6.0),
        ("tipu", 2, 320.0, 2.5),
    ]
    .into_iter()
    .map(|(label, lobe_count, base_hue, texture_freq)| ClassSpec {
        label: label.into(),
        params: ClassParams {
            lobe_count,
            base_hue,
            texture_freq,
        },
    })
    .collect()
}

/// Twelve teams named after the real collection, six classes, 40 images per
/// cell at 96×96, seed 42. Hue shifts are spread over ±20°; one team sits far
/// outside that range with heavy degradation.
pub fn default_spec() -> SynthSpec {
    type Row = (&'static str, f64, f64, f64, u32, u8, Option<&'static str>);
    const TEAMS: [Row; 12] = [
        ("AI-4o", -12.0, 1.05, 3.0, 0, 92, Some("iPhone 11")),
        ("AiGro", -4.0, 0.95, 5.0, 1, 85, None),
        ("CACTUS", 8.0, 1.10, 4.0, 0, 90, Some("Oppo Reno5")),
        ("CHAJARA", -16.0, 0.90, 6.0, 1, 80, None),
        ("GreenAI", 4.0, 1.00, 2.0, 0, 95, Some("Samsung Galaxy A54 5G")),
        ("PLT", 16.0, 1.15, 7.0, 1, 75, None),
        ("RUSTICUS", -8.0, 0.92, 4.0, 1, 88, Some("Oppo Reno7")),
        ("SMART AGRICULTURES", 12.0, 1.08, 3.0, 0, 90, Some("iPhone 11")),
        ("Scorpions", 0.0, 0.98, 5.0, 0, 85, None),
        ("Condimenteum", -20.0, 1.12, 8.0, 2, 70, Some("Samsung Galaxy A54 5G")),
        ("The Neural Ninjas", 20.0, 0.88, 6.0, 1, 78, None),
        ("Organization team", 45.0, 0.70, 12.0, 2, 60, Some("Oppo Reno7")),
    ];
    let classes = six_classes();
    let teams = TEAMS
        .iter()
        .map(|&(name, hue_shift, brightness_gain, noise_sigma, blur_radius, encode_quality, device)| TeamSpec {
            team: name.into(),
            domain: DomainParams {
                hue_shift,
                brightness_gain,
                noise_sigma,
                blur_radius,
                encode_quality,
            },
            counts: classes.iter().map(|c| (c.label.clone(), DEFAULT_PER_CELL)).collect(),
            device: device.map(str::to_string),
            outlier: name == "Organization team",
        })
        .collect();
    SynthSpec {
        teams,
        classes,
        image_size: DEFAULT_IMAGE_SIZE,
        seed: 42,
        duplicates: None,
    }
}

/// HSV (hue in degrees, s and v in `[0, 1]`) to RGB in `[0, 255]`.
pub fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// Hue in degrees; `None` for gray pixels.
pub fn rgb_hue(rgb: [u8; 3]) -> Option<f64> {
    let [r, g, b] = rgb.map(f64::from);
    let max = r.max(g).max(b);
    let delta = max - r.min(g).min(b);
    if delta == 0.0 {
        return None;
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    Some(60.0 * h)
}

/// Leaf outline radius relative to the nominal radius. More lobes come with
/// deeper sinuses, which also changes the enclosed area.
pub fn leaf_radius(lobes: u32, theta: f64) -> f64 {
    let depth = 0.2 + 0.5 * (1.0 - 1.0 / f64::from(lobes));
    1.0 - depth * (1.0 - (f64::from(lobes) * theta / 2.0).cos().abs())
}

/// Per-sample geometry and texture draws, taken in a fixed order.
struct Layout {
    cx: f64,
    cy: f64,
    radius: f64,
    rotation: f64,
    hue_jitter: f64,
    soil: [(f64, f64, f64); 3],
}

impl Layout {
    fn draw(size: f64, rng: &mut SplitRng) -> Self {
        let r = rng.inner_mut();
        let cx = size * (0.5 + r.random_range(-0.08..0.08));
        let cy = size * (0.5 + r.random_range(-0.08..0.08));
        let radius = size * r.random_range(0.32..0.42);
        let rotation = r.random_range(0.0..TAU);
        let hue_jitter = r.random_range(-6.0..6.0);
        let mut soil = [(0.0, 0.0, 0.0); 3];
        for s in &mut soil {
            let angle: f64 = r.random_range(0.0..TAU);
            let freq = r.random_range(2.0..6.0) * TAU / size;
            *s = (freq * angle.cos(), freq * angle.sin(), r.random_range(0.0..TAU));
        }
        Layout {
            cx,
            cy,
            radius,
            rotation,
            hue_jitter,
            soil,
        }
    }

    /// Leaf coverage in `[0, 1]` with a one-pixel soft edge, plus leaf-frame
    /// coordinates scaled by the radius.
    fn coverage(&self, lobes: u32, x: f64, y: f64) -> (f64, f64, f64) {
        let (dx, dy) = (x + 0.5 - self.cx, y + 0.5 - self.cy);
        let (s, c) = self.rotation.sin_cos();
        let (u, v) = ((dx * c + dy * s) / self.radius, (-dx * s + dy * c) / self.radius);
        let rho = (u * u + v * v).sqrt();
        let edge = leaf_radius(lobes, v.atan2(u)) - rho;
        ((edge * self.radius + 0.5).clamp(0.0, 1.0), u, v)
    }
}

/// Foreground coverage mask for one draw, before any domain effects.
pub fn render_mask(class: &ClassParams, size: u32, rng: &mut SplitRng) -> Vec<f64> {
    let layout = Layout::draw(f64::from(size), rng);
    (0..size * size)
        .map(|i| layout.coverage(class.lobe_count, f64::from(i % size), f64::from(i / size)).0)
        .collect()
}

fn blur_pass(src: &[[f64; 3]], dst: &mut [[f64; 3]], size: usize, radius: usize, horizontal: bool) {
    let norm = 1.0 / (2 * radius + 1) as f64;
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 3];
            for k in 0..=2 * radius {
                let i = ((if horizontal { x } else { y }) + k).saturating_sub(radius).min(size - 1);
                let p = if horizontal { src[y * size + i] } else { src[i * size + x] };
                for c in 0..3 {
                    acc[c] += p[c];
                }
            }
            dst[y * size + x] = acc.map(|a| a * norm);
        }
    }
}

/// Separable box filter with clamped edges.
fn box_blur(data: &mut [[f64; 3]], size: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let mut tmp = vec![[0.0; 3]; data.len()];
    blur_pass(data, &mut tmp, size, radius, true);
    blur_pass(&tmp, data, size, radius, false);
}

/// Encoded sample and its decoded pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub jpeg: Vec<u8>,
    pub image: RgbImage,
}

/// Draws one leaf over soil, applies the domain's gain, noise and blur, and
/// round-trips through JPEG at the domain's quality.
pub fn render_sample(class: &ClassParams, domain: &DomainParams, size: u32, rng: &mut SplitRng) -> Result<Sample> {
    let n = size as usize;
    let layout = Layout::draw(f64::from(size), rng);
    let leaf_hue = class.base_hue + domain.hue_shift + layout.hue_jitter;
    let soil_hue = 35.0 + domain.hue_shift + layout.hue_jitter;
    let mut pixels = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (xf, yf) = (x as f64, y as f64);
            let (alpha, u, v) = layout.coverage(class.lobe_count, xf, yf);
            let soil: f64 = layout.soil.iter().map(|(fx, fy, ph)| (fx * xf + fy * yf + ph).sin()).sum::<f64>() / 3.0;
            let bg = hsv_to_rgb(soil_hue, 0.5, 0.42 * (1.0 + 0.2 * soil));
            let veins = (TAU * class.texture_freq * u).sin();
            let midrib = (-(v * 14.0).powi(2)).exp();
            let fg = hsv_to_rgb(leaf_hue, 0.65, 0.62 * (1.0 + 0.12 * veins) * (1.0 - 0.25 * midrib));
            pixels.push(std::array::from_fn(|c| alpha * fg[c] + (1.0 - alpha) * bg[c]));
        }
    }
    let r = rng.inner_mut();
    for p in &mut pixels {
        for ch in p.iter_mut() {
            let z: f64 = r.sample(StandardNormal);
            *ch = *ch * domain.brightness_gain + domain.noise_sigma * z;
        }
    }
    box_blur(&mut pixels, n, domain.blur_radius as usize);
    let raw = RgbImage::from_fn(size, size, |x, y| {
        let p = pixels[y as usize * n + x as usize];
        image::Rgb(p.map(|v| v.round().clamp(0.0, 255.0) as u8))
    });
    let jpeg = encode_jpeg(&raw, domain.encode_quality)?;
    let image = image::load_from_memory(&jpeg)
        .map_err(|e| Error::Encode(e.to_string()))?
        .to_rgb8();
    Ok(Sample { jpeg, image })
}

/// Inserts an EXIF segment carrying only the Model tag right after SOI.
pub fn with_device_exif(jpeg: &[u8], model: &str) -> Result<Vec<u8>> {
    if jpeg.len() < 2 || jpeg[..2] != [0xFF, 0xD8] {
        return Err(Error::Encode("not a JPEG stream".into()));
    }
    let field = exif::Field {
        tag: exif::Tag::Model,
        ifd_num: exif::In::PRIMARY,
        value: exif::Value::Ascii(vec![model.as_bytes().to_vec()]),
    };
    let mut writer = exif::experimental::Writer::new();
    writer.push_field(&field);
    let mut tiff = Cursor::new(Vec::new());
    writer
        .write(&mut tiff, false)
        .map_err(|e| Error::Encode(format!("EXIF: {e}")))?;
    let tiff = tiff.into_inner();
    let len = u16::try_from(2 + 6 + tiff.len()).map_err(|_| Error::Encode("EXIF segment too large".into()))?;
    let mut out = Vec::with_capacity(jpeg.len() + len as usize + 2);
    out.extend_from_slice(&jpeg[..2]);
    out.extend_from_slice(&[0xFF, 0xE1]);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(b"Exif\0\0");
    out.extend_from_slice(&tiff);
    out.extend_from_slice(&jpeg[2..]);
    Ok(out)
}

/// Removes every APP1 segment preceding the first scan.
pub fn strip_app1(jpeg: &[u8]) -> Vec<u8> {
    let mut out = jpeg[..2.min(jpeg.len())].to_vec();
    let mut i = 2;
    while i + 4 <= jpeg.len() && jpeg[i] == 0xFF && jpeg[i + 1] != 0xDA {
        let len = usize::from(u16::from_be_bytes([jpeg[i + 2], jpeg[i + 3]]));
        let end = (i + 2 + len).min(jpeg.len());
        if jpeg[i + 1] != 0xE1 {
            out.extend_from_slice(&jpeg[i..end]);
        }
        i = end;
    }
    out.extend_from_slice(&jpeg[i..]);
    out
}

/// `<class>_<index:04>.jpg`
pub fn file_name(class: &ClassLabel, index: usize) -> String {
    format!("{class}_{index:04}.jpg")
}

/// Ground truth for one planted group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedGroup {
    pub source: String,
    pub copies: Vec<String>,
}

impl PlantedGroup {
    pub fn size(&self) -> usize {
        1 + self.copies.len()
    }
}

pub struct SynthOutput {
    /// Records for every written file, identical to what a scan yields.
    pub catalog: Catalog,
    pub planted: Vec<PlantedGroup>,
}

struct Job<'a> {
    team: &'a TeamSpec,
    class: &'a ClassSpec,
    index: usize,
    rel_path: String,
}

pub fn sample_rng(seed: u64, team: &TeamId, class: &ClassLabel, index: usize) -> SplitRng {
    SplitRng::for_label(&format!("{seed}:synth:{team}:{class}:{index}"))
}

fn write_file(root: &Path, rel_path: &str, bytes: &[u8]) -> Result<()> {
    let path = root.join(rel_path);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    fs::write(&path, bytes).at(&path)
}

/// Renders every cell of `spec` under `root` and returns the ground truth.
pub fn generate(spec: &SynthSpec, root: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    let mut jobs = Vec::with_capacity(spec.total_images());
    for team in &spec.teams {
        for class in &spec.classes {
            for index in 0..team.counts.get(&class.label).copied().unwrap_or(0) {
                jobs.push(Job {
                    team,
                    class,
                    index,
                    rel_path: format!("{}/{}/{}", team.team, class.label, file_name(&class.label, index)),
                });
            }
        }
    }
    let rendered = par::map(&jobs, |job| -> Result<(Vec<u8>, ImageRecord)> {
        let mut rng = sample_rng(spec.seed, &job.team.team, &job.class.label, job.index);
        let sample = render_sample(&job.class.params, &job.team.domain, spec.image_size, &mut rng)?;
        let bytes = match &job.team.device {
            Some(model) => with_device_exif(&sample.jpeg, model)?,
            None => sample.jpeg,
        };
        write_file(root, &job.rel_path, &bytes)?;
        let record = record_from_bytes(job.team.team.clone(), job.class.label.clone(), &job.rel_path, &bytes)?;
        Ok((bytes, record))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut planted = Vec::new();
    let mut copies = Vec::new();
    if let Some(plan) = spec.duplicates.as_ref().filter(|p| p.groups > 0) {
        if plan.groups > jobs.len() {
            return Err(Error::Config(format!("cannot plant {} groups in {} images", plan.groups, jobs.len())));
        }
        let mut rng = SplitRng::for_label(&format!("{}:synth:duplicates", spec.seed));
        let mut sources: Vec<usize> = (0..jobs.len()).collect();
        rng.shuffle(&mut sources);
        for (g, &src) in sources[..plan.groups].iter().enumerate() {
            let job = &jobs[src];
            let size = 2 + g % (MAX_GROUP_SIZE - 1);
            let mut targets: Vec<&TeamSpec> = spec.teams.iter().filter(|t| t.team != job.team.team).collect();
            rng.shuffle(&mut targets);
            let mut group = PlantedGroup {
                source: job.rel_path.clone(),
                copies: Vec::new(),
            };
            for (j, target) in targets.iter().take(size - 1).enumerate() {
                let src_bytes = &rendered[src].0;
                let bytes = match (g + j) % 3 {
                    0 => src_bytes.clone(),
                    1 => strip_app1(src_bytes),
                    _ => {
                        let mut padded = src_bytes.clone();
                        padded.resize(src_bytes.len() + 37 * (j + 1), 0);
                        padded
                    }
                };
                let rel_path = format!("{}/{}/{}_dup{g:04}_{j}.jpg", target.team, job.class.label, job.class.label);
                group.copies.push(rel_path.clone());
                copies.push((target.team.clone(), job.class.label.clone(), rel_path, bytes));
            }
            planted.push(group);
        }
    }
    let copy_records = par::map(&copies, |(team, class, rel_path, bytes)| -> Result<ImageRecord> {
        write_file(root, rel_path, bytes)?;
        record_from_bytes(team.clone(), class.clone(), rel_path, bytes)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let records = rendered.into_iter().map(|(_, r)| r).chain(copy_records).collect();
    Ok(SynthOutput {
        catalog: Catalog::from_records(records)?,
        planted,
    })
}
