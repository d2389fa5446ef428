//! Cross-team split manifests.
//!
//! * TOTO (train on one team only): for each team, a class-stratified 70/30
//!   train/validation split of that team; every other team is test data.
//! * LOTO (leave one team out): for each team, the remaining teams form the
//!   pool, split 70/30 stratified by (team, class); the held-out team is test.
//!
//! Randomness comes from [`SplitRng`], a xoshiro256++ generator seeded through
//! SplitMix64 from the first 8 bytes (big-endian) of
//! `SHA-256("<seed>:<protocol>:<team>")`. Shuffles are Fisher-Yates over
//! sorted ids, drawing indices by rejection sampling, so manifests can be
//! regenerated bit-for-bit in any language.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{Catalog, ImageId, TeamId};
use crate::error::{json_err, IoContext};
use crate::phash::Hash64;
use crate::{Error, Result};

pub const DEFAULT_TRAIN_FRAC: f64 = 0.7;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum Protocol {
    TOTO,
    LOTO,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::TOTO => "TOTO",
            Protocol::LOTO => "LOTO",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TOTO" => Ok(Protocol::TOTO),
            "LOTO" => Ok(Protocol::LOTO),
            _ => Err(Error::Split(format!("unknown protocol {s:?}"))),
        }
    }
}

/// Seedable generator with a documented, portable construction.
#[derive(Clone, Debug)]
pub struct SplitRng(Xoshiro256PlusPlus);

impl SplitRng {
    pub fn from_seed_u64(seed: u64) -> Self {
        SplitRng(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    /// Stream keyed by an arbitrary label, e.g. `"42:TOTO:AiGro"`.
    pub fn for_label(label: &str) -> Self {
        Self::from_seed_u64(derive_seed(label))
    }

    pub fn for_fold(seed: u64, protocol: Protocol, team: &TeamId) -> Self {
        Self::for_label(&format!("{seed}:{protocol}:{team}"))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, n)` by rejection sampling on the top of the u64 range.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fisher-Yates, swapping from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn inner_mut(&mut self) -> &mut Xoshiro256PlusPlus {
        &mut self.0
    }
}

/// First 8 bytes (big-endian) of the SHA-256 of `label`.
pub fn derive_seed(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Number of items from a stratum of `n` that go to the first part.
pub fn first_part_size(n: usize, frac: f64) -> usize {
    match n {
        0 => 0,
        1 => 1,
        _ => ((frac * n as f64).round() as usize).clamp(1, n - 1),
    }
}

/// Splits each stratum independently: shuffle, then the first
/// `round(frac * n)` ids (at least one, at most `n - 1` when `n >= 2`) go to
/// part A. Singleton strata go entirely to part A. Strata are visited in key
/// order and share one generator.
pub fn stratified_partition<K: Ord>(
    strata: &BTreeMap<K, Vec<ImageId>>,
    frac: f64,
    rng: &mut SplitRng,
) -> Result<(Vec<ImageId>, Vec<ImageId>)> {
    check_frac(frac)?;
    if strata.is_empty() {
        return Err(Error::Split("no strata to partition".into()));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for ids in strata.values() {
        let mut ids = ids.clone();
        ids.sort();
        rng.shuffle(&mut ids);
        let k = first_part_size(ids.len(), frac);
        b.extend(ids.split_off(k));
        a.extend(ids);
    }
    Ok((a, b))
}

fn check_frac(frac: f64) -> Result<()> {
    if frac > 0.0 && frac < 1.0 {
        Ok(())
    } else {
        Err(Error::Split(format!("train fraction {frac} is not in (0, 1)")))
    }
}

/// One cross-team fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub protocol: Protocol,
    /// Trained-on team (TOTO) or held-out team (LOTO).
    pub focal_team: TeamId,
    pub train_ids: Vec<ImageId>,
    pub val_ids: Vec<ImageId>,
    pub test_ids: Vec<ImageId>,
    pub seed: u64,
    pub train_frac: f64,
}

impl SplitManifest {
    /// `<protocol>_<focal_team>`
    pub fn fold_name(&self) -> String {
        fold_name(self.protocol, &self.focal_team)
    }

    pub fn file_name(&self) -> String {
        format!("{}.json", self.fold_name())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(self.file_name());
        fs::write(&path, self.to_json()).at(&path)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(json_err(path.display().to_string()))
    }
}

pub fn fold_name(protocol: Protocol, team: &TeamId) -> String {
    format!("{protocol}_{team}")
}

/// All `TOTO_*.json` / `LOTO_*.json` manifests in `dir`, sorted by file name.
pub fn read_manifests(dir: &Path) -> Result<Vec<SplitManifest>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("TOTO_") || n.starts_with("LOTO_"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| SplitManifest::read(p)).collect()
}

/// Rejects catalogs where one perceptual hash is held by more than one team.
pub fn check_dedup_precondition(catalog: &Catalog) -> Result<()> {
    let mut owners: BTreeMap<Hash64, BTreeSet<&TeamId>> = BTreeMap::new();
    for r in catalog.records().iter().filter(|r| r.readable) {
        if let Some(h) = r.phash {
            owners.entry(h).or_default().insert(&r.team);
        }
    }
    let shared: Vec<_> = owners.iter().filter(|(_, t)| t.len() > 1).collect();
    match shared.first() {
        None => Ok(()),
        Some((h, teams)) => Err(Error::NotDeduplicated {
            count: shared.len(),
            example: format!(
                "{h} in {}",
                teams.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", ")
            ),
        }),
    }
}

/// Readable records only, grouped by team then class.
fn readable_cells(catalog: &Catalog) -> BTreeMap<TeamId, BTreeMap<String, Vec<ImageId>>> {
    let mut cells: BTreeMap<TeamId, BTreeMap<String, Vec<ImageId>>> = BTreeMap::new();
    for r in catalog.records().iter().filter(|r| r.readable) {
        cells
            .entry(r.team.clone())
            .or_default()
            .entry(r.class.to_string())
            .or_default()
            .push(r.image_id.clone());
    }
    cells
}

fn prepare(catalog: &Catalog, frac: f64) -> Result<BTreeMap<TeamId, BTreeMap<String, Vec<ImageId>>>> {
    check_frac(frac)?;
    check_dedup_precondition(catalog)?;
    let cells = readable_cells(catalog);
    if cells.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 teams, catalog has {}",
            cells.len()
        )));
    }
    let classes = catalog.classes();
    for (team, by_class) in &cells {
        for class in &classes {
            if !by_class.contains_key(class.as_str()) {
                log::warn!("team {team} has no images of class {class}; cell skipped");
            }
        }
    }
    Ok(cells)
}

fn sorted(mut ids: Vec<ImageId>) -> Vec<ImageId> {
    ids.sort();
    ids
}

pub fn toto_splits(catalog: &Catalog, frac: f64, seed: u64) -> Result<Vec<SplitManifest>> {
    let cells = prepare(catalog, frac)?;
    cells
        .keys()
        .map(|team| {
            let mut rng = SplitRng::for_fold(seed, Protocol::TOTO, team);
            let (train, val) = stratified_partition(&cells[team], frac, &mut rng)?;
            let test = cells
                .iter()
                .filter(|(t, _)| *t != team)
                .flat_map(|(_, by_class)| by_class.values().flatten().cloned())
                .collect();
            Ok(SplitManifest {
                protocol: Protocol::TOTO,
                focal_team: team.clone(),
                train_ids: sorted(train),
                val_ids: sorted(val),
                test_ids: sorted(test),
                seed,
                train_frac: frac,
            })
        })
        .collect()
}

pub fn loto_splits(catalog: &Catalog, frac: f64, seed: u64) -> Result<Vec<SplitManifest>> {
    let cells = prepare(catalog, frac)?;
    cells
        .keys()
        .map(|held_out| {
            let mut rng = SplitRng::for_fold(seed, Protocol::LOTO, held_out);
            let pool: BTreeMap<(TeamId, String), Vec<ImageId>> = cells
                .iter()
                .filter(|(t, _)| *t != held_out)
                .flat_map(|(t, by_class)| {
                    by_class
                        .iter()
                        .map(move |(c, ids)| ((t.clone(), c.clone()), ids.clone()))
                })
                .collect();
            let (train, val) = stratified_partition(&pool, frac, &mut rng)?;
            let test = cells[held_out].values().flatten().cloned().collect();
            Ok(SplitManifest {
                protocol: Protocol::LOTO,
                focal_team: held_out.clone(),
                train_ids: sorted(train),
                val_ids: sorted(val),
                test_ids: sorted(test),
                seed,
                train_frac: frac,
            })
        })
        .collect()
}

pub fn generate(catalog: &Catalog, protocol: Protocol, frac: f64, seed: u64) -> Result<Vec<SplitManifest>> {
    match protocol {
        Protocol::TOTO => toto_splits(catalog, frac, seed),
        Protocol::LOTO => loto_splits(catalog, frac, seed),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        })
    }
}

/// A reason a manifest is not a valid fold of a catalog.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    UnknownId { partition: Partition, id: ImageId },
    Overlap { a: Partition, b: Partition, id: ImageId },
    Repeated { partition: Partition, id: ImageId },
    WrongTeam { partition: Partition, id: ImageId, team: TeamId },
    Uncovered { id: ImageId },
    UnknownFocalTeam(TeamId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownId { partition, id } => write!(f, "{partition}: unknown id {id}"),
            Violation::Overlap { a, b, id } => write!(f, "{id} is in both {a} and {b}"),
            Violation::Repeated { partition, id } => write!(f, "{partition}: {id} listed twice"),
            Violation::WrongTeam {
                partition,
                id,
                team,
            } => write!(f, "{partition}: {id} belongs to team {team}"),
            Violation::Uncovered { id } => write!(f, "{id} is in no partition"),
            Violation::UnknownFocalTeam(t) => write!(f, "focal team {t} is not in the catalog"),
        }
    }
}

/// Checks disjointness, coverage of the readable catalog, id existence and
/// team membership of each partition. Empty means valid.
pub fn validate_manifest(manifest: &SplitManifest, catalog: &Catalog) -> Vec<Violation> {
    let mut violations = Vec::new();
    let focal = &manifest.focal_team;
    if !catalog.team_index().contains_key(focal) {
        violations.push(Violation::UnknownFocalTeam(focal.clone()));
    }
    let parts = [
        (Partition::Train, &manifest.train_ids),
        (Partition::Val, &manifest.val_ids),
        (Partition::Test, &manifest.test_ids),
    ];
    let mut seen: BTreeMap<&ImageId, Partition> = BTreeMap::new();
    for (partition, ids) in parts {
        let mut local = HashSet::new();
        for id in ids {
            if !local.insert(id) {
                violations.push(Violation::Repeated {
                    partition,
                    id: id.clone(),
                });
                continue;
            }
            if let Some(&prev) = seen.get(id) {
                violations.push(Violation::Overlap {
                    a: prev,
                    b: partition,
                    id: id.clone(),
                });
                continue;
            }
            seen.insert(id, partition);
            let Some(record) = catalog.get(id) else {
                violations.push(Violation::UnknownId {
                    partition,
                    id: id.clone(),
                });
                continue;
            };
            let in_focal = &record.team == focal;
            let expected_focal = !matches!(
                (manifest.protocol, partition),
                (Protocol::TOTO, Partition::Test) | (Protocol::LOTO, Partition::Train | Partition::Val)
            );
            if in_focal != expected_focal {
                violations.push(Violation::WrongTeam {
                    partition,
                    id: id.clone(),
                    team: record.team.clone(),
                });
            }
        }
    }
    for r in catalog.records().iter().filter(|r| r.readable) {
        if !seen.contains_key(&r.image_id) {
            violations.push(Violation::Uncovered {
                id: r.image_id.clone(),
            });
        }
    }
    violations
}
