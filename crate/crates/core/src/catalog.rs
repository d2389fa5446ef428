//! Dataset scanning, label normalization and per-image metadata.
//!
//! Input layout is `<root>/<team>/<class>/<file>`. Every accepted file becomes
//! one [`ImageRecord`], including files that fail to decode (those are kept
//! with `readable = false` so they can be reported and excluded later).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{json_err, IoContext};
use crate::phash::{phash64, Hash64};
use crate::{par, Error, Result};

/// File extensions picked up by the scanner (compared case-insensitively).
pub const ACCEPTED_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png", "heic", "heif", "bmp", "tif", "tiff"];

const DEFAULT_LABEL_MAP: &str = include_str!("../data/label_map.json");

macro_rules! string_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

string_newtype!(
    /// Team (domain) name, taken verbatim from the top-level folder.
    TeamId
);
string_newtype!(
    /// Canonical class token.
    ClassLabel
);
string_newtype!(
    /// Hex SHA-256 of the record's relative path.
    ImageId
);

impl ImageId {
    /// Identity is derived from the relative path only, so re-encoding a file
    /// keeps its id.
    pub fn from_rel_path(rel_path: &str) -> Self {
        ImageId(hex::encode(Sha256::digest(rel_path.as_bytes())))
    }
}

/// Container format detected from magic bytes, falling back to the extension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ImageFormat {
    Jpeg,
    Png,
    Heic,
    Bmp,
    Tiff,
    Unknown,
}

impl ImageFormat {
    pub fn from_magic(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
            Some(ImageFormat::Jpeg)
        } else if bytes.starts_with(&[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A]) {
            Some(ImageFormat::Png)
        } else if bytes.starts_with(b"BM") {
            Some(ImageFormat::Bmp)
        } else if bytes.starts_with(b"II*\0") || bytes.starts_with(b"MM\0*") {
            Some(ImageFormat::Tiff)
        } else if bytes.len() >= 12 && &bytes[4..8] == b"ftyp" {
            match &bytes[8..12] {
                b"heic" | b"heix" | b"hevc" | b"hevx" | b"heim" | b"heis" | b"mif1" | b"msf1"
                | b"heif" => Some(ImageFormat::Heic),
                _ => None,
            }
        } else {
            None
        }
    }

    pub fn from_extension(ext: &str) -> Self {
        match ext.to_ascii_lowercase().as_str() {
            "jpg" | "jpeg" => ImageFormat::Jpeg,
            "png" => ImageFormat::Png,
            "heic" | "heif" => ImageFormat::Heic,
            "bmp" => ImageFormat::Bmp,
            "tif" | "tiff" => ImageFormat::Tiff,
            _ => ImageFormat::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ImageFormat::Jpeg => "JPEG",
            ImageFormat::Png => "PNG",
            ImageFormat::Heic => "HEIC",
            ImageFormat::Bmp => "BMP",
            ImageFormat::Tiff => "TIFF",
            ImageFormat::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for ImageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One catalogued image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: ImageId,
    pub team: TeamId,
    pub class: ClassLabel,
    pub rel_path: String,
    pub format: ImageFormat,
    pub width_px: u32,
    pub height_px: u32,
    pub file_size_bytes: u64,
    pub device: Option<String>,
    pub phash: Option<Hash64>,
    pub readable: bool,
}

impl ImageRecord {
    pub fn pixel_count(&self) -> u64 {
        u64::from(self.width_px) * u64::from(self.height_px)
    }

    /// Device name as shown in reports.
    pub fn device_label(&self) -> &str {
        self.device.as_deref().unwrap_or("Unknown")
    }
}

/// Metadata read from a single file, before team/class assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileMetadata {
    pub format: ImageFormat,
    pub width_px: u32,
    pub height_px: u32,
    pub file_size_bytes: u64,
    pub device: Option<String>,
    pub readable: bool,
}

/// Folded name → canonical label lookup with a closed vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    entries: BTreeMap<String, ClassLabel>,
    vocabulary: BTreeSet<ClassLabel>,
}

/// Canonical decomposition, combining marks dropped, lowercased, trimmed.
pub fn fold_label(raw: &str) -> String {
    raw.nfd()
        .filter(|c| !is_combining_mark(*c))
        .collect::<String>()
        .to_lowercase()
        .trim()
        .to_string()
}

impl LabelMap {
    /// Builds a map from raw → canonical pairs. Keys are folded; canonical
    /// tokens always map to themselves.
    pub fn new<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut entries = BTreeMap::new();
        let mut vocabulary = BTreeSet::new();
        for (raw, canonical) in pairs {
            let canonical = canonical.as_ref().trim();
            if canonical.is_empty() {
                return Err(Error::LabelMap(format!(
                    "empty canonical label for {:?}",
                    raw.as_ref()
                )));
            }
            let label = ClassLabel::new(canonical);
            let key = fold_label(raw.as_ref());
            if let Some(prev) = entries.insert(key.clone(), label.clone()) {
                if prev != label {
                    return Err(Error::LabelMap(format!(
                        "{key:?} maps to both {prev} and {label}"
                    )));
                }
            }
            vocabulary.insert(label);
        }
        for label in &vocabulary {
            entries
                .entry(fold_label(label.as_str()))
                .or_insert_with(|| label.clone());
        }
        if vocabulary.is_empty() {
            return Err(Error::LabelMap("label map is empty".into()));
        }
        Ok(LabelMap {
            entries,
            vocabulary,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(json_err("label map"))?;
        LabelMap::new(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        LabelMap::from_json(&fs::read_to_string(path).at(path)?)
    }

    /// The six-class map that ships with the crate.
    pub fn default_six() -> Self {
        LabelMap::from_json(DEFAULT_LABEL_MAP).expect("bundled label map is valid")
    }

    pub fn vocabulary(&self) -> &BTreeSet<ClassLabel> {
        &self.vocabulary
    }

    pub fn normalize(&self, raw: &str) -> Result<ClassLabel> {
        normalize_class_label(raw, self)
    }
}

impl Default for LabelMap {
    fn default() -> Self {
        LabelMap::default_six()
    }
}

pub fn normalize_class_label(raw: &str, label_map: &LabelMap) -> Result<ClassLabel> {
    label_map
        .entries
        .get(&fold_label(raw))
        .cloned()
        .ok_or_else(|| Error::UnknownLabel(raw.to_string()))
}

/// Ordered, indexed collection of records.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Catalog {
    records: Vec<ImageRecord>,
    by_id: HashMap<ImageId, usize>,
    team_index: BTreeMap<TeamId, Vec<ImageId>>,
    cell_index: BTreeMap<(TeamId, ClassLabel), Vec<ImageId>>,
}

impl Catalog {
    /// Sorts records by `rel_path` and builds the indexes. Duplicate ids are
    /// rejected.
    pub fn from_records(mut records: Vec<ImageRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
        let mut by_id = HashMap::with_capacity(records.len());
        let mut team_index: BTreeMap<TeamId, Vec<ImageId>> = BTreeMap::new();
        let mut cell_index: BTreeMap<(TeamId, ClassLabel), Vec<ImageId>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.team.as_str().is_empty() {
                return Err(Error::Catalog(format!("record {} has an empty team", r.rel_path)));
            }
            if by_id.insert(r.image_id.clone(), i).is_some() {
                return Err(Error::Catalog(format!("duplicate image id {}", r.image_id)));
            }
            team_index
                .entry(r.team.clone())
                .or_default()
                .push(r.image_id.clone());
            cell_index
                .entry((r.team.clone(), r.class.clone()))
                .or_default()
                .push(r.image_id.clone());
        }
        Ok(Catalog {
            records,
            by_id,
            team_index,
            cell_index,
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &ImageId) -> Option<&ImageRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &ImageId) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn teams(&self) -> impl Iterator<Item = &TeamId> {
        self.team_index.keys()
    }

    pub fn team_index(&self) -> &BTreeMap<TeamId, Vec<ImageId>> {
        &self.team_index
    }

    pub fn cell_index(&self) -> &BTreeMap<(TeamId, ClassLabel), Vec<ImageId>> {
        &self.cell_index
    }

    pub fn classes(&self) -> BTreeSet<ClassLabel> {
        self.records.iter().map(|r| r.class.clone()).collect()
    }

    pub fn unreadable(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| !r.readable)
    }

    /// Records satisfying `keep`, as a new catalog.
    pub fn filtered(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> Catalog {
        Catalog::from_records(self.records.iter().filter(|r| keep(r)).cloned().collect())
            .expect("subset of a valid catalog is valid")
    }

    /// JSON lines, one record per line, in catalog order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Catalog(format!("line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line).map_err(json_err(format!("catalog line {}", n + 1)))?,
            );
        }
        Catalog::from_records(records)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).at(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes()).at(path)?;
        w.flush().at(path)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).at(path)?;
        Catalog::from_jsonl(BufReader::new(file))
    }
}

fn decode_error(path: &Path, e: impl fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Decodes a file to RGB8, honoring magic bytes over the extension.
pub fn decode_image(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).at(path)?;
    decode_bytes(&bytes).map_err(|e| decode_error(path, e))
}

fn decode_bytes(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let format = image::guess_format(bytes).map_err(|e| e.to_string())?;
    if format == image::ImageFormat::Jpeg && !jpeg_is_complete(bytes) {
        return Err("truncated JPEG stream (no end-of-image marker)".into());
    }
    image::load_from_memory_with_format(bytes, format)
        .map(|img| img.to_rgb8())
        .map_err(|e| e.to_string())
}

/// The JPEG decoder tolerates missing scan data and pads with gray, so
/// truncation is detected structurally: an end-of-image marker must follow
/// the last start-of-scan marker. Trailing bytes after it are allowed.
fn jpeg_is_complete(bytes: &[u8]) -> bool {
    let Some(last_sos) = bytes.windows(2).rposition(|w| w == [0xFF, 0xDA]) else {
        return false;
    };
    bytes[last_sos..].windows(2).any(|w| w == [0xFF, 0xD9])
}

fn read_device(bytes: &[u8]) -> Option<String> {
    let mut cursor = std::io::Cursor::new(bytes);
    let exif = exif::Reader::new().read_from_container(&mut cursor).ok()?;
    let field = exif.get_field(exif::Tag::Model, exif::In::PRIMARY)?;
    match &field.value {
        exif::Value::Ascii(parts) => {
            let text = parts
                .iter()
                .map(|p| String::from_utf8_lossy(p).into_owned())
                .collect::<Vec<_>>()
                .join(" ");
            let text = text.trim_matches(|c: char| c == '\0' || c.is_whitespace());
            (!text.is_empty()).then(|| text.to_string())
        }
        _ => None,
    }
}

fn inspect_bytes(path: &Path, bytes: &[u8]) -> (FileMetadata, Option<RgbImage>) {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let format = ImageFormat::from_magic(bytes).unwrap_or_else(|| ImageFormat::from_extension(ext));
    let device = read_device(bytes);
    let decoded = match format {
        // no HEIF decoder is bundled; catalogued by container only
        ImageFormat::Heic | ImageFormat::Unknown => None,
        _ => match decode_bytes(bytes) {
            Ok(img) if img.width() > 0 && img.height() > 0 => Some(img),
            Ok(_) => None,
            Err(reason) => {
                log::warn!("unreadable image {}: {reason}", path.display());
                None
            }
        },
    };
    let (width_px, height_px) = decoded
        .as_ref()
        .map_or((0, 0), |img| (img.width(), img.height()));
    let meta = FileMetadata {
        format,
        width_px,
        height_px,
        file_size_bytes: bytes.len() as u64,
        device,
        readable: decoded.is_some(),
    };
    (meta, decoded)
}

/// Reads format, dimensions, size and capture device. Decode failures are
/// reported through `readable = false`, not as errors.
pub fn extract_metadata(path: &Path) -> Result<FileMetadata> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .at(path)?;
    Ok(inspect_bytes(path, &bytes).0)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let entry = entry.at(dir)?;
        let path = entry.path();
        if path.is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                if !name.starts_with('.') {
                    out.push((name.to_string(), path));
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

fn is_accepted(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| ACCEPTED_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

struct PendingFile {
    team: TeamId,
    class: ClassLabel,
    rel_path: String,
    path: PathBuf,
}

/// Builds the catalog record for one file's bytes; exactly what a scan
/// produces for the same file at `rel_path`.
pub fn record_from_bytes(team: TeamId, class: ClassLabel, rel_path: &str, bytes: &[u8]) -> Result<ImageRecord> {
    let (meta, decoded) = inspect_bytes(Path::new(rel_path), bytes);
    let phash = match &decoded {
        Some(img) => Some(phash64(img)?),
        None => None,
    };
    Ok(ImageRecord {
        image_id: ImageId::from_rel_path(rel_path),
        team,
        class,
        rel_path: rel_path.to_string(),
        format: meta.format,
        width_px: meta.width_px,
        height_px: meta.height_px,
        file_size_bytes: meta.file_size_bytes,
        device: meta.device,
        phash,
        readable: meta.readable,
    })
}

/// Scans `<root>/<team>/<class>/<file>` into a catalog. Metadata extraction
/// and hashing run in parallel; the result is sorted by relative path.
pub fn scan_dataset(root: &Path, label_map: &LabelMap) -> Result<Catalog> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let mut pending = Vec::new();
    for (team_name, team_dir) in sorted_dirs(root)? {
        for (class_name, class_dir) in sorted_dirs(&team_dir)? {
            let class = normalize_class_label(&class_name, label_map).map_err(|_| {
                Error::UnknownLabel(format!("{team_name}/{class_name}"))
            })?;
            let mut files: Vec<(String, PathBuf)> = fs::read_dir(&class_dir)
                .at(&class_dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file() && is_accepted(p))
                .filter_map(|p| Some((p.file_name()?.to_str()?.to_string(), p)))
                .collect();
            files.sort();
            for (file_name, path) in files {
                pending.push(PendingFile {
                    team: TeamId::new(team_name.clone()),
                    class: class.clone(),
                    rel_path: format!("{team_name}/{class_name}/{file_name}"),
                    path,
                });
            }
        }
    }

    let records = par::map(&pending, |p| -> Result<ImageRecord> {
        let bytes = fs::read(&p.path).at(&p.path)?;
        record_from_bytes(p.team.clone(), p.class.clone(), &p.rel_path, &bytes)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let catalog = Catalog::from_records(records)?;
    let unreadable = catalog.unreadable().count();
    if unreadable > 0 {
        log::warn!("{unreadable} unreadable file(s) catalogued with readable=false");
    }
    Ok(catalog)
}

/// Per-(team, class) counts with totals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionTable {
    pub teams: Vec<TeamId>,
    pub classes: Vec<ClassLabel>,
    /// `counts[team][class]`
    pub counts: Vec<Vec<u64>>,
    pub team_totals: Vec<u64>,
    pub class_totals: Vec<u64>,
    pub grand_total: u64,
}

impl DistributionTable {
    pub fn from_counts(
        teams: Vec<TeamId>,
        classes: Vec<ClassLabel>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self> {
        if counts.len() != teams.len() || counts.iter().any(|row| row.len() != classes.len()) {
            return Err(Error::Catalog("distribution counts do not match labels".into()));
        }
        let team_totals = counts.iter().map(|row| row.iter().sum()).collect();
        let class_totals = (0..classes.len())
            .map(|c| counts.iter().map(|row| row[c]).sum())
            .collect();
        let grand_total = counts.iter().flatten().sum();
        Ok(DistributionTable {
            teams,
            classes,
            counts,
            team_totals,
            class_totals,
            grand_total,
        })
    }

    pub fn count(&self, team: &TeamId, class: &ClassLabel) -> Option<u64> {
        let t = self.teams.iter().position(|x| x == team)?;
        let c = self.classes.iter().position(|x| x == class)?;
        Some(self.counts[t][c])
    }

    pub fn team_total(&self, team: &TeamId) -> Option<u64> {
        let t = self.teams.iter().position(|x| x == team)?;
        Some(self.team_totals[t])
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["team".to_string()];
        header.extend(self.classes.iter().map(|c| c.to_string()));
        header.push("total".into());
        w.write_record(&header).expect("in-memory csv");
        for (t, team) in self.teams.iter().enumerate() {
            let mut row = vec![team.to_string()];
            row.extend(self.counts[t].iter().map(u64::to_string));
            row.push(self.team_totals[t].to_string());
            w.write_record(&row).expect("in-memory csv");
        }
        let mut footer = vec!["Total".to_string()];
        footer.extend(self.class_totals.iter().map(u64::to_string));
        footer.push(self.grand_total.to_string());
        w.write_record(&footer).expect("in-memory csv");
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }
}

/// Counts per (team, class), teams and classes in sorted order.
pub fn distribution_table(catalog: &Catalog) -> DistributionTable {
    let teams: Vec<TeamId> = catalog.teams().cloned().collect();
    let classes: Vec<ClassLabel> = catalog.classes().into_iter().collect();
    let counts = teams
        .iter()
        .map(|t| {
            classes
                .iter()
                .map(|c| {
                    catalog
                        .cell_index()
                        .get(&(t.clone(), c.clone()))
                        .map_or(0, |ids| ids.len() as u64)
                })
                .collect()
        })
        .collect();
    DistributionTable::from_counts(teams, classes, counts).expect("dimensions agree")
}

/// Format and device census plus raw counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogSummary {
    pub total_records: usize,
    pub readable_records: usize,
    pub unreadable: Vec<String>,
    pub formats: BTreeMap<String, u64>,
    pub devices: BTreeMap<String, u64>,
    pub total_bytes: u64,
    pub mean_width_px: f64,
    pub mean_height_px: f64,
}

pub fn summarize(catalog: &Catalog) -> CatalogSummary {
    let mut formats = BTreeMap::new();
    let mut devices = BTreeMap::new();
    let mut readable = 0usize;
    let (mut w_sum, mut h_sum) = (0u64, 0u64);
    for r in catalog.records() {
        *formats.entry(r.format.to_string()).or_insert(0) += 1;
        *devices.entry(r.device_label().to_string()).or_insert(0) += 1;
        if r.readable {
            readable += 1;
            w_sum += u64::from(r.width_px);
            h_sum += u64::from(r.height_px);
        }
    }
    let mean = |s: u64| if readable == 0 { 0.0 } else { s as f64 / readable as f64 };
    CatalogSummary {
        total_records: catalog.len(),
        readable_records: readable,
        unreadable: catalog.unreadable().map(|r| r.rel_path.clone()).collect(),
        formats,
        devices,
        total_bytes: catalog.records().iter().map(|r| r.file_size_bytes).sum(),
        mean_width_px: mean(w_sum),
        mean_height_px: mean(h_sum),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(team: &str, class: &str, name: &str) -> ImageRecord {
        let rel_path = format!("{team}/{class}/{name}");
        ImageRecord {
            image_id: ImageId::from_rel_path(&rel_path),
            team: team.into(),
            class: class.into(),
            rel_path,
            format: ImageFormat::Jpeg,
            width_px: 10,
            height_px: 10,
            file_size_bytes: 100,
            device: None,
            phash: Some(Hash64(1)),
            readable: true,
        }
    }

    #[test]
    fn folding_and_lookup() {
        let map = LabelMap::default_six();
        assert_eq!(map.normalize("chenes").unwrap().as_str(), "oak");
        assert_eq!(map.normalize("Chêne").unwrap().as_str(), "oak");
        assert_eq!(map.normalize("FRÊNES").unwrap().as_str(), "ash");
        assert_eq!(map.normalize("tipu").unwrap().as_str(), "tipu");
        match map.normalize("banana") {
            Err(Error::UnknownLabel(raw)) => assert_eq!(raw, "banana"),
            other => panic!("expected unknown label, got {other:?}"),
        }
        assert_eq!(map.vocabulary().len(), 6);
    }

    #[test]
    fn fold_strips_marks() {
        assert_eq!(fold_label("Chêne"), "chene");
        assert_eq!(fold_label("  Frênes "), "frenes");
        assert_eq!(fold_label("Caroubier"), "caroubier");
    }

    #[test]
    fn conflicting_label_map_is_rejected() {
        assert!(LabelMap::new([("chene", "oak"), ("Chêne", "ash")]).is_err());
        assert!(LabelMap::from_json("{}").is_err());
    }

    #[test]
    fn magic_bytes_win_over_extension() {
        assert_eq!(ImageFormat::from_magic(&[0xFF, 0xD8, 0xFF, 0xE0]), Some(ImageFormat::Jpeg));
        assert_eq!(ImageFormat::from_magic(b"II*\0rest"), Some(ImageFormat::Tiff));
        assert_eq!(
            ImageFormat::from_magic(b"\0\0\0\x18ftypheic\0\0"),
            Some(ImageFormat::Heic)
        );
        assert_eq!(ImageFormat::from_magic(b"garbage"), None);
        assert_eq!(ImageFormat::from_extension("JPG"), ImageFormat::Jpeg);
        assert_eq!(ImageFormat::from_extension("heif"), ImageFormat::Heic);
    }

    #[test]
    fn image_id_is_path_digest() {
        let id = ImageId::from_rel_path("a/b/c.jpg");
        assert_eq!(id.as_str().len(), 64);
        assert_eq!(id, ImageId::from_rel_path("a/b/c.jpg"));
        assert_ne!(id, ImageId::from_rel_path("a/b/d.jpg"));
    }

    #[test]
    fn catalog_indexes_and_order() {
        let cat = Catalog::from_records(vec![
            record("B", "oak", "2.jpg"),
            record("A", "oak", "1.jpg"),
            record("A", "ash", "1.jpg"),
        ])
        .unwrap();
        let paths: Vec<_> = cat.records().iter().map(|r| r.rel_path.as_str()).collect();
        assert_eq!(paths, ["A/ash/1.jpg", "A/oak/1.jpg", "B/oak/2.jpg"]);
        assert_eq!(cat.team_index()[&TeamId::from("A")].len(), 2);
        assert_eq!(cat.cell_index()[&(TeamId::from("B"), ClassLabel::from("oak"))].len(), 1);
        assert!(Catalog::from_records(vec![record("A", "oak", "1.jpg"), record("A", "oak", "1.jpg")]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let mut r = record("A", "oak", "1.jpg");
        r.device = Some("iPhone 11".into());
        let cat = Catalog::from_records(vec![r, record("A", "ash", "x.png")]).unwrap();
        let text = cat.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("\"phash\":\"0000000000000001\""));
        let back = Catalog::from_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, cat);
    }

    #[test]
    fn distribution_totals() {
        let empty = distribution_table(&Catalog::default());
        assert_eq!(empty.grand_total, 0);
        assert!(empty.teams.is_empty());

        let one = distribution_table(&Catalog::from_records(vec![record("A", "oak", "1.jpg")]).unwrap());
        assert_eq!(one.counts, vec![vec![1]]);
        assert_eq!(one.grand_total, 1);

        let cat = Catalog::from_records(vec![
            record("A", "oak", "1.jpg"),
            record("A", "oak", "2.jpg"),
            record("B", "ash", "1.jpg"),
        ])
        .unwrap();
        let t = distribution_table(&cat);
        assert_eq!(t.classes, vec![ClassLabel::from("ash"), ClassLabel::from("oak")]);
        assert_eq!(t.counts, vec![vec![0, 2], vec![1, 0]]);
        assert_eq!(t.team_totals, vec![2, 1]);
        assert_eq!(t.class_totals, vec![1, 2]);
        assert_eq!(t.grand_total, 3);
        assert!(t.to_csv().ends_with("Total,1,2,3\n"));
    }
}
