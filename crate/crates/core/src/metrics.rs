//! Accuracy, validation-test gap, cross-team matrices and summary statistics.
//!
//! Accuracies are fractions in `[0, 1]` throughout, except [`vtg`], which
//! takes and returns percentage points to match how result tables are read.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ClassLabel, ImageId, TeamId};
use crate::error::{csv_err, IoContext};
use crate::splits::{Partition, Protocol, SplitManifest};
use crate::{Error, Result};

/// Which fold partition a prediction set belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRef {
    pub protocol: Protocol,
    pub focal_team: TeamId,
    pub partition: Partition,
}

impl ManifestRef {
    /// `<protocol>_<team>_<partition>.csv`
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.csv", self.protocol, self.focal_team, self.partition)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: ImageId,
    pub true_label: ClassLabel,
    pub predicted_label: ClassLabel,
}

impl Prediction {
    pub fn is_correct(&self) -> bool {
        self.true_label == self.predicted_label
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionSet {
    pub manifest_ref: ManifestRef,
    pub items: Vec<Prediction>,
}

impl PredictionSet {
    /// Ids must be unique.
    pub fn new(manifest_ref: ManifestRef, items: Vec<Prediction>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(items.len());
        if let Some(dup) = items.iter().find(|p| !seen.insert(&p.image_id)) {
            return Err(Error::Metric(format!(
                "{}: image {} predicted twice",
                manifest_ref.file_name(),
                dup.image_id
            )));
        }
        Ok(PredictionSet {
            manifest_ref,
            items,
        })
    }

    /// CSV with header `image_id,true_label,predicted_label`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let ctx = self.manifest_ref.file_name();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["image_id", "true_label", "predicted_label"])
            .map_err(csv_err(ctx.clone()))?;
        for p in &self.items {
            w.write_record([p.image_id.as_str(), p.true_label.as_str(), p.predicted_label.as_str()])
                .map_err(csv_err(ctx.clone()))?;
        }
        w.flush().map_err(|e| csv_err(ctx)(e.into()))
    }

    pub fn read_csv(manifest_ref: ManifestRef, input: impl Read) -> Result<Self> {
        let ctx = manifest_ref.file_name();
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(csv_err(ctx.clone()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["image_id", "true_label", "predicted_label"] {
            return Err(Error::Metric(format!("{ctx}: unexpected header {headers:?}")));
        }
        let items = r
            .deserialize()
            .collect::<std::result::Result<Vec<Prediction>, _>>()
            .map_err(csv_err(ctx))?;
        PredictionSet::new(manifest_ref, items)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(self.manifest_ref.file_name());
        let file = std::fs::File::create(&path).at(&path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(dir: &Path, manifest_ref: ManifestRef) -> Result<Self> {
        let path = dir.join(manifest_ref.file_name());
        let file = std::fs::File::open(&path).at(&path)?;
        PredictionSet::read_csv(manifest_ref, std::io::BufReader::new(file))
    }

    /// Every id must come from the referenced partition of `manifest`.
    pub fn check_against(&self, manifest: &SplitManifest) -> Result<()> {
        let ids: HashSet<&ImageId> = match self.manifest_ref.partition {
            Partition::Train => manifest.train_ids.iter().collect(),
            Partition::Val => manifest.val_ids.iter().collect(),
            Partition::Test => manifest.test_ids.iter().collect(),
        };
        match self.items.iter().find(|p| !ids.contains(&p.image_id)) {
            Some(p) => Err(Error::Metric(format!(
                "{}: image {} is not in the {} partition",
                self.manifest_ref.file_name(),
                p.image_id,
                self.manifest_ref.partition
            ))),
            None => Ok(()),
        }
    }
}

/// Fraction of correct predictions.
pub fn accuracy_of(items: &[Prediction]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Metric("accuracy of an empty prediction set".into()));
    }
    let correct = items.iter().filter(|p| p.is_correct()).count();
    Ok(correct as f64 / items.len() as f64)
}

pub fn accuracy(preds: &PredictionSet) -> Result<f64> {
    accuracy_of(&preds.items)
}

/// Validation minus test accuracy, in percentage points. Positive means the
/// model does worse on the test domain.
pub fn vtg(val_acc_pct: f64, test_acc_pct: f64) -> f64 {
    val_acc_pct - test_acc_pct
}

/// Pooled accuracy over all items and the unweighted mean of per-team
/// accuracies.
pub fn pooled_and_macro_test(per_team: &BTreeMap<TeamId, Vec<Prediction>>) -> Result<(f64, f64)> {
    let teams: Vec<_> = per_team.iter().filter(|(_, p)| !p.is_empty()).collect();
    if teams.is_empty() {
        return Err(Error::Metric("no test team predictions".into()));
    }
    let all: Vec<Prediction> = teams.iter().flat_map(|(_, p)| p.iter().cloned()).collect();
    let pooled = accuracy_of(&all)?;
    let per: Vec<f64> = teams
        .iter()
        .map(|(_, p)| accuracy_of(p))
        .collect::<Result<_>>()?;
    Ok((pooled, per.iter().sum::<f64>() / per.len() as f64))
}

/// Summary of one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub protocol: Protocol,
    pub focal_team: TeamId,
    pub val_acc: f64,
    pub per_team_test_acc: BTreeMap<TeamId, f64>,
    pub pooled_test_acc: f64,
    pub macro_test_acc: f64,
}

impl RunResult {
    /// Headline test accuracy (pooled).
    pub fn test_acc(&self) -> f64 {
        self.pooled_test_acc
    }

    pub fn vtg_pct(&self) -> f64 {
        vtg(100.0 * self.val_acc, 100.0 * self.test_acc())
    }

    pub fn from_predictions(val: &PredictionSet, test: &PredictionSet, catalog: &Catalog) -> Result<Self> {
        if val.manifest_ref.protocol != test.manifest_ref.protocol
            || val.manifest_ref.focal_team != test.manifest_ref.focal_team
        {
            return Err(Error::Metric("validation and test sets are from different folds".into()));
        }
        let mut per_team: BTreeMap<TeamId, Vec<Prediction>> = BTreeMap::new();
        for p in &test.items {
            let record = catalog
                .get(&p.image_id)
                .ok_or_else(|| Error::Metric(format!("test image {} is not in the catalog", p.image_id)))?;
            per_team.entry(record.team.clone()).or_default().push(p.clone());
        }
        let (pooled, macro_acc) = pooled_and_macro_test(&per_team)?;
        let per_team_test_acc = per_team
            .iter()
            .map(|(t, p)| Ok((t.clone(), accuracy_of(p)?)))
            .collect::<Result<_>>()?;
        Ok(RunResult {
            protocol: val.manifest_ref.protocol,
            focal_team: val.manifest_ref.focal_team.clone(),
            val_acc: accuracy(val)?,
            per_team_test_acc,
            pooled_test_acc: pooled,
            macro_test_acc: macro_acc,
        })
    }
}

pub const DIAGONAL_VALIDATION: &str = "validation accuracy";

/// Square accuracy grid: row = training team, column = test team.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossTeamMatrix {
    pub teams: Vec<TeamId>,
    pub values: Vec<Vec<f64>>,
    pub diagonal_semantics: String,
}

impl CrossTeamMatrix {
    pub fn new(teams: Vec<TeamId>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n = teams.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(Error::Metric(format!("matrix is not {n}x{n}")));
        }
        if values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Metric("matrix entries must lie in [0, 1]".into()));
        }
        Ok(CrossTeamMatrix {
            teams,
            values,
            diagonal_semantics: DIAGONAL_VALIDATION.to_string(),
        })
    }

    pub fn size(&self) -> usize {
        self.teams.len()
    }

    /// Row-major entries, diagonal included.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        let flat = self.flatten();
        let min = flat.iter().copied().reduce(f64::min)?;
        let max = flat.iter().copied().reduce(f64::max)?;
        Some((min, max))
    }

    /// Same matrix with teams relabeled into `order` (rows and columns move
    /// together).
    pub fn reordered(&self, order: &[TeamId]) -> Result<Self> {
        let idx: Vec<usize> = order
            .iter()
            .map(|t| {
                self.teams
                    .iter()
                    .position(|x| x == t)
                    .ok_or_else(|| Error::Metric(format!("team {t} not in matrix")))
            })
            .collect::<Result<_>>()?;
        if idx.len() != self.size() {
            return Err(Error::Metric("reorder must list every team once".into()));
        }
        let values = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| self.values[i][j]).collect())
            .collect();
        CrossTeamMatrix::new(order.to_vec(), values)
    }
}

/// Entry (i, j) is run i's accuracy on team j; the diagonal holds run i's
/// validation accuracy. Row order follows `runs`.
pub fn build_matrix(runs: &[RunResult]) -> Result<CrossTeamMatrix> {
    let teams: Vec<TeamId> = runs.iter().map(|r| r.focal_team.clone()).collect();
    let mut values = Vec::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        let row = teams
            .iter()
            .enumerate()
            .map(|(j, team)| {
                if i == j {
                    Ok(run.val_acc)
                } else {
                    run.per_team_test_acc.get(team).copied().ok_or_else(|| {
                        Error::Metric(format!("missing matrix cell ({}, {team})", run.focal_team))
                    })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        values.push(row);
    }
    CrossTeamMatrix::new(teams, values)
}

/// Off-diagonal row means (how a team's model transfers) and column means
/// (how hard a team is as a test domain).
pub fn transfer_means(matrix: &CrossTeamMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = matrix.size();
    if n < 2 {
        return Err(Error::Metric("transfer means need at least 2 teams".into()));
    }
    let denom = (n - 1) as f64;
    let rows = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| matrix.values[i][j]).sum::<f64>() / denom)
        .collect();
    let cols = (0..n)
        .map(|j| (0..n).filter(|&i| i != j).map(|i| matrix.values[i][j]).sum::<f64>() / denom)
        .collect();
    Ok((rows, cols))
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Metric(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Metric("correlation needs at least 2 points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Metric("correlation input is not finite".into()));
    }
    Ok(())
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric("correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Standard deviation divisor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdDivisor {
    /// Divide by n.
    Population,
    /// Divide by n - 1.
    Sample,
}

/// Mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    aggregate_with(values, StdDivisor::Population)
}

pub fn aggregate_with(values: &[f64], divisor: StdDivisor) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Metric("aggregate of an empty sequence".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let std = match divisor {
        StdDivisor::Population => (ss / n).sqrt(),
        StdDivisor::Sample if values.len() > 1 => (ss / (n - 1.0)).sqrt(),
        StdDivisor::Sample => 0.0,
    };
    Ok((mean, std))
}
