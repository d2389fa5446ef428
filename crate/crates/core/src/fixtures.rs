//! Published result tables shipped as CSV, for recomputation checks.
//!
//! Values are percentages exactly as printed, and so are the footer rows.
//! Nothing here is derived.

use serde::Deserialize;

use crate::catalog::{ClassLabel, DistributionTable, TeamId};
use crate::error::csv_err;
use crate::{Error, Result};

pub const DISTRIBUTION_CSV: &str = include_str!("../data/fixtures/team_distribution.csv");
pub const TOTO_CSV: &str = include_str!("../data/fixtures/toto_results.csv");
pub const LOTO_CSV: &str = include_str!("../data/fixtures/loto_results.csv");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    DenseNet121,
    Swin,
}

impl Architecture {
    pub const ALL: [Architecture; 2] = [Architecture::DenseNet121, Architecture::Swin];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::DenseNet121 => "DenseNet121",
            Architecture::Swin => "Swin Transformer",
        }
    }
}

/// One architecture's printed (val, test, vtg) triple.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triple {
    pub val: f64,
    pub test: f64,
    pub vtg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureRow {
    pub team: TeamId,
    pub densenet: Triple,
    pub swin: Triple,
}

impl FixtureRow {
    pub fn get(&self, arch: Architecture) -> Triple {
        match arch {
            Architecture::DenseNet121 => self.densenet,
            Architecture::Swin => self.swin,
        }
    }
}

/// Per-team rows plus the printed Mean and Std footers.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultsFixture {
    pub rows: Vec<FixtureRow>,
    pub mean: FixtureRow,
    pub std: FixtureRow,
}

#[derive(Deserialize)]
struct RawRow {
    team: String,
    densenet_val: f64,
    densenet_test: f64,
    densenet_vtg: f64,
    swin_val: f64,
    swin_test: f64,
    swin_vtg: f64,
}

impl From<RawRow> for FixtureRow {
    fn from(r: RawRow) -> Self {
        FixtureRow {
            team: TeamId::new(r.team),
            densenet: Triple {
                val: r.densenet_val,
                test: r.densenet_test,
                vtg: r.densenet_vtg,
            },
            swin: Triple {
                val: r.swin_val,
                test: r.swin_test,
                vtg: r.swin_vtg,
            },
        }
    }
}

impl ResultsFixture {
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut rows: Vec<FixtureRow> = Vec::new();
        let (mut mean, mut std) = (None, None);
        for raw in reader.deserialize::<RawRow>() {
            let row = FixtureRow::from(raw.map_err(csv_err("results fixture"))?);
            match row.team.as_str() {
                "Mean" => mean = Some(row),
                "Std" => std = Some(row),
                _ => rows.push(row),
            }
        }
        match (mean, std) {
            (Some(mean), Some(std)) if !rows.is_empty() => Ok(ResultsFixture { rows, mean, std }),
            _ => Err(Error::Config("results fixture needs team rows plus Mean and Std".into())),
        }
    }

    /// One printed column across all team rows.
    pub fn column(&self, arch: Architecture, pick: impl Fn(Triple) -> f64) -> Vec<f64> {
        self.rows.iter().map(|r| pick(r.get(arch))).collect()
    }
}

pub fn toto() -> ResultsFixture {
    ResultsFixture::parse(TOTO_CSV).expect("shipped TOTO fixture parses")
}

pub fn loto() -> ResultsFixture {
    ResultsFixture::parse(LOTO_CSV).expect("shipped LOTO fixture parses")
}

/// Printed distribution: table rebuilt from the cells, plus the printed team
/// totals, class totals and grand total for comparison.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistributionFixture {
    pub table: DistributionTable,
    pub printed_team_totals: Vec<u64>,
    pub printed_class_totals: Vec<u64>,
    pub printed_grand_total: u64,
}

pub fn distribution() -> Result<DistributionFixture> {
    let mut reader = csv::Reader::from_reader(DISTRIBUTION_CSV.as_bytes());
    let header = reader
        .headers()
        .map_err(csv_err("distribution fixture"))?
        .clone();
    let n = header.len();
    if n < 3 || &header[n - 1] != "total" {
        return Err(Error::Config("distribution fixture header must end with total".into()));
    }
    let classes: Vec<ClassLabel> = header.iter().skip(1).take(n - 2).map(ClassLabel::from).collect();
    let (mut teams, mut counts, mut team_totals) = (Vec::new(), Vec::new(), Vec::new());
    let mut footer = None;
    for record in reader.records() {
        let record = record.map_err(csv_err("distribution fixture"))?;
        let nums = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<u64>().map_err(|e| Error::Config(format!("distribution cell {v:?}: {e}"))))
            .collect::<Result<Vec<u64>>>()?;
        if &record[0] == "Total" {
            footer = Some(nums);
            continue;
        }
        teams.push(TeamId::from(&record[0]));
        team_totals.push(nums[n - 2]);
        counts.push(nums[..n - 2].to_vec());
    }
    let footer = footer.ok_or_else(|| Error::Config("distribution fixture lacks a Total row".into()))?;
    Ok(DistributionFixture {
        table: DistributionTable::from_counts(teams, classes, counts)?,
        printed_team_totals: team_totals,
        printed_class_totals: footer[..n - 2].to_vec(),
        printed_grand_total: footer[n - 2],
    })
}
