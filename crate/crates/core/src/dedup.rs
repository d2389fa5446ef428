//! Cross-team duplicate removal by perceptual hash.
//!
//! Records sharing a hash form a group; one representative is kept per group
//! using this priority order:
//!
//! 1. larger file size
//! 2. more pixels (width x height)
//! 3. capture-device metadata present
//! 4. team name, ascending
//! 5. relative path, ascending
//!
//! Unreadable records never join a group and are dropped from the retained
//! catalog before grouping.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ImageId, ImageRecord};
use crate::error::{csv_err, IoContext};
use crate::phash::{hamming, Hash64};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub hash: Hash64,
    /// Members in catalog (relative path) order.
    pub member_ids: Vec<ImageId>,
    pub representative_id: ImageId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DedupResult {
    pub retained: Catalog,
    /// Non-representative group members, in group order.
    pub removed_ids: Vec<ImageId>,
    pub groups: Vec<DuplicateGroup>,
    pub bytes_recovered: u64,
    /// Unreadable records dropped before grouping.
    pub excluded_unreadable: Vec<ImageId>,
}

/// Grouping options. `max_hamming = 0` (the default) is exact hash equality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupOptions {
    pub max_hamming: u32,
}

/// Compares two records under the priority rule. `Less` means `a` is kept in
/// preference to `b`. The second element is the rule level (1-5) that
/// decided, or 0 for the same record.
pub fn compare_priority(a: &ImageRecord, b: &ImageRecord) -> (Ordering, u8) {
    let levels = [
        b.file_size_bytes.cmp(&a.file_size_bytes),
        b.pixel_count().cmp(&a.pixel_count()),
        b.device.is_some().cmp(&a.device.is_some()),
        a.team.cmp(&b.team),
        a.rel_path.cmp(&b.rel_path),
    ];
    levels
        .iter()
        .zip(1u8..)
        .find(|(ord, _)| ord.is_ne())
        .map_or((Ordering::Equal, 0), |(&ord, level)| (ord, level))
}

/// The member the priority rule keeps. Independent of member order.
pub fn select_representative<'a>(members: &[&'a ImageRecord]) -> &'a ImageRecord {
    members
        .iter()
        .copied()
        .min_by(|a, b| compare_priority(a, b).0)
        .expect("duplicate group is non-empty")
}

fn readable_hashes(catalog: &Catalog) -> Result<Vec<(&ImageRecord, Hash64)>> {
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for r in catalog.records().iter().filter(|r| r.readable) {
        match r.phash {
            Some(h) => out.push((r, h)),
            None => missing.push(r.rel_path.clone()),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(Error::MissingHash(missing))
    }
}

fn make_group(hash: Hash64, members: Vec<&ImageRecord>) -> DuplicateGroup {
    let representative_id = select_representative(&members).image_id.clone();
    DuplicateGroup {
        hash,
        member_ids: members.iter().map(|r| r.image_id.clone()).collect(),
        representative_id,
    }
}

/// One group per hash held by two or more readable records, sorted by hash.
pub fn group_duplicates(catalog: &Catalog) -> Result<Vec<DuplicateGroup>> {
    let mut by_hash: BTreeMap<Hash64, Vec<&ImageRecord>> = BTreeMap::new();
    for (r, h) in readable_hashes(catalog)? {
        by_hash.entry(h).or_default().push(r);
    }
    Ok(by_hash
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|(h, members)| make_group(h, members))
        .collect())
}

/// Near-duplicate grouping: connected components of the "Hamming distance at
/// most `max_hamming`" relation over distinct hashes. A group's `hash` is the
/// smallest member hash. Quadratic in the number of distinct hashes.
pub fn group_near_duplicates(catalog: &Catalog, max_hamming: u32) -> Result<Vec<DuplicateGroup>> {
    if max_hamming == 0 {
        return group_duplicates(catalog);
    }
    let mut by_hash: BTreeMap<Hash64, Vec<&ImageRecord>> = BTreeMap::new();
    for (r, h) in readable_hashes(catalog)? {
        by_hash.entry(h).or_default().push(r);
    }
    let hashes: Vec<Hash64> = by_hash.keys().copied().collect();
    let mut parent: Vec<usize> = (0..hashes.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            if hamming(hashes[i], hashes[j]) <= max_hamming {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut components: BTreeMap<usize, Vec<&ImageRecord>> = BTreeMap::new();
    for (i, h) in hashes.iter().enumerate() {
        let root = find(&mut parent, i);
        components.entry(root).or_default().extend(&by_hash[h]);
    }
    Ok(components
        .into_iter()
        .filter(|(_, m)| m.len() >= 2)
        .map(|(root, mut members)| {
            members.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
            make_group(hashes[root], members)
        })
        .collect())
}

pub fn apply_dedup(catalog: &Catalog) -> Result<DedupResult> {
    apply_dedup_with(catalog, DedupOptions::default())
}

pub fn apply_dedup_with(catalog: &Catalog, options: DedupOptions) -> Result<DedupResult> {
    let groups = group_near_duplicates(catalog, options.max_hamming)?;
    let mut removed_ids = Vec::new();
    let mut bytes_recovered = 0;
    for g in &groups {
        for id in g.member_ids.iter().filter(|id| **id != g.representative_id) {
            bytes_recovered += catalog.get(id).map_or(0, |r| r.file_size_bytes);
            removed_ids.push(id.clone());
        }
    }
    let removed: std::collections::HashSet<&ImageId> = removed_ids.iter().collect();
    let excluded_unreadable: Vec<ImageId> =
        catalog.unreadable().map(|r| r.image_id.clone()).collect();
    let retained = catalog.filtered(|r| r.readable && !removed.contains(&r.image_id));
    Ok(DedupResult {
        retained,
        removed_ids,
        groups,
        bytes_recovered,
        excluded_unreadable,
    })
}

/// One removal-report row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovalRow {
    pub hash: Hash64,
    pub kept_id: ImageId,
    pub removed_id: ImageId,
    pub reason_level: u8,
}

impl DedupResult {
    /// Rows of the removal report; `reason_level` is the priority rule that
    /// separated the removed record from the kept one.
    pub fn removal_rows(&self, catalog: &Catalog) -> Vec<RemovalRow> {
        let mut rows = Vec::new();
        for g in &self.groups {
            let kept = catalog.get(&g.representative_id).expect("representative in catalog");
            for id in g.member_ids.iter().filter(|id| **id != g.representative_id) {
                let removed = catalog.get(id).expect("member in catalog");
                rows.push(RemovalRow {
                    hash: g.hash,
                    kept_id: g.representative_id.clone(),
                    removed_id: id.clone(),
                    reason_level: compare_priority(kept, removed).1,
                });
            }
        }
        rows
    }

    /// Removal report as CSV: `hash,kept_id,removed_id,reason_level`.
    pub fn write_removal_csv(&self, catalog: &Catalog, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.removal_rows(catalog) {
            w.serialize(row).map_err(csv_err("removal report"))?;
        }
        w.flush().map_err(|e| csv_err("removal report")(e.into()))
    }

    pub fn save_removal_csv(&self, catalog: &Catalog, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).at(path)?;
        self.write_removal_csv(catalog, std::io::BufWriter::new(file))
    }

    pub fn involved(&self) -> usize {
        self.groups.iter().map(|g| g.member_ids.len()).sum()
    }

    pub fn summary(&self, input: &Catalog) -> DedupSummary {
        DedupSummary {
            input_records: input.len(),
            unreadable_excluded: self.excluded_unreadable.len(),
            groups: self.groups.len(),
            involved_records: self.involved(),
            removed: self.removed_ids.len(),
            retained: self.retained.len(),
            bytes_recovered: self.bytes_recovered,
            max_group_size: self.groups.iter().map(|g| g.member_ids.len()).max().unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupSummary {
    pub input_records: usize,
    pub unreadable_excluded: usize,
    pub groups: usize,
    pub involved_records: usize,
    pub removed: usize,
    pub retained: usize,
    pub bytes_recovered: u64,
    pub max_group_size: usize,
}
