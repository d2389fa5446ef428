//! Stage runners and the on-disk artifact layout.
//!
//! Each stage reads the files written by earlier stages and writes its own,
//! so an external trainer can replace `train` by dropping prediction CSVs
//! where `eval` looks for them. Artifacts hold relative paths only.
//!
//! ```text
//! <workdir>/catalog.jsonl  catalog_summary.json  distribution.csv
//! <workdir>/dedup/         catalog.jsonl  removals.csv  groups.json  summary.json
//! <workdir>/normalized/    <team>/<class>/<image_id>.jpg  report.json
//! <workdir>/splits/        <PROTOCOL>_<team>.json
//! <workdir>/train/         models/  predictions/  curves/
//! <workdir>/eval/          runs_<protocol>.json  matrix_toto.json
//! <report>/                results_* curves_* matrix_toto.{svg,csv} summary.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::{self, FeatureTable, LearningCurve, ModelFile, FEATURE_SPEC_VERSION};
use crate::catalog::{self, distribution_table, summarize, Catalog, LabelMap};
use crate::config::PipelineConfig;
use crate::dedup::{apply_dedup_with, DedupSummary};
use crate::error::{json_err, IoContext};
use crate::metrics::{build_matrix, transfer_means, ManifestRef, PredictionSet, RunResult};
use crate::normalize::{output_path, process_dataset, NormalizeReport};
use crate::report::{self, ResultsTable, TableFormat};
use crate::splits::{self, Partition, Protocol, SplitManifest};
use crate::synthgen::{self, PlantedGroup, SynthSpec};
use crate::{par, Error, Result};

/// Marks a dataset root as generator output, which `synth` may replace.
pub const SYNTH_MARKER: &str = ".ctvbench-synth";

/// Artifact paths under one work directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn catalog(&self) -> PathBuf {
        self.root.join("catalog.jsonl")
    }

    pub fn dedup_dir(&self) -> PathBuf {
        self.root.join("dedup")
    }

    pub fn dedup_catalog(&self) -> PathBuf {
        self.dedup_dir().join("catalog.jsonl")
    }

    pub fn normalized_dir(&self) -> PathBuf {
        self.root.join("normalized")
    }

    pub fn splits_dir(&self) -> PathBuf {
        self.root.join("splits")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join("train/models")
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.root.join("train/predictions")
    }

    pub fn curves_dir(&self) -> PathBuf {
        self.root.join("train/curves")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn runs(&self, protocol: Protocol) -> PathBuf {
        self.eval_dir().join(format!("runs_{}.json", protocol.as_str().to_ascii_lowercase()))
    }

    pub fn matrix(&self) -> PathBuf {
        self.eval_dir().join("matrix_toto.json")
    }

    /// The deduplicated catalog when present, else the raw catalog.
    pub fn curated_catalog(&self) -> Result<Catalog> {
        let dedup = self.dedup_catalog();
        if dedup.is_file() {
            Catalog::read_jsonl(&dedup)
        } else {
            log::info!("no deduplicated catalog; using the raw catalog");
            Catalog::read_jsonl(&self.catalog())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(json_err(path.display().to_string()))?;
    fs::write(path, text + "\n").at(path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(json_err(path.display().to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    fs::write(path, text).at(path)
}

fn label_map(config: &PipelineConfig) -> Result<LabelMap> {
    match &config.label_map {
        Some(path) => LabelMap::load(path),
        None => Ok(LabelMap::default_six()),
    }
}

fn manifests_for(ws: &Workspace, protocol: Protocol) -> Result<Vec<SplitManifest>> {
    let all = splits::read_manifests(&ws.splits_dir())?;
    let chosen: Vec<_> = all.into_iter().filter(|m| m.protocol == protocol).collect();
    if chosen.is_empty() {
        return Err(Error::Split(format!("no {protocol} manifests under splits/; run split first")));
    }
    Ok(chosen)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub images: usize,
    pub planted_groups: usize,
    pub seed: u64,
}

/// Generates the configured synthetic dataset into the dataset root. A root
/// that exists, is non-empty and was not produced by `synth` is left alone.
pub fn run_synth(config: &PipelineConfig) -> Result<SynthSummary> {
    let mut spec = match &config.synth_spec {
        Some(path) => SynthSpec::load(path)?,
        None => synthgen::default_spec(),
    };
    if let Some(seed) = config.synth_seed {
        spec.seed = seed;
    }
    let root = &config.dataset_root;
    if root.exists() {
        let non_empty = fs::read_dir(root).at(root)?.next().is_some();
        if non_empty && !root.join(SYNTH_MARKER).is_file() {
            return Err(Error::Config(format!(
                "dataset root {} is not empty and was not generated; refusing to overwrite",
                root.display()
            )));
        }
        fs::remove_dir_all(root).at(root)?;
    }
    fs::create_dir_all(root).at(root)?;
    let out = synthgen::generate(&spec, root)?;
    fs::write(root.join(SYNTH_MARKER), spec.to_json()).at(root)?;

    let ws = Workspace::new(&config.workdir);
    write_text(&ws.synth_dir().join("spec.json"), &spec.to_json())?;
    write_text(&ws.synth_dir().join("ground_truth.jsonl"), &out.catalog.to_jsonl())?;
    write_json::<Vec<PlantedGroup>>(&ws.synth_dir().join("planted.json"), &out.planted)?;
    Ok(SynthSummary {
        images: out.catalog.len(),
        planted_groups: out.planted.len(),
        seed: spec.seed,
    })
}

pub fn run_catalog(config: &PipelineConfig) -> Result<Catalog> {
    let catalog = catalog::scan_dataset(&config.dataset_root, &label_map(config)?)?;
    let ws = Workspace::new(&config.workdir);
    write_text(&ws.catalog(), &catalog.to_jsonl())?;
    write_json(&ws.root().join("catalog_summary.json"), &summarize(&catalog))?;
    write_text(&ws.root().join("distribution.csv"), &distribution_table(&catalog).to_csv())?;
    Ok(catalog)
}

pub fn run_dedup(config: &PipelineConfig) -> Result<DedupSummary> {
    let ws = Workspace::new(&config.workdir);
    let catalog = Catalog::read_jsonl(&ws.catalog())?;
    let result = apply_dedup_with(&catalog, config.dedup)?;
    let dir = ws.dedup_dir();
    fs::create_dir_all(&dir).at(&dir)?;
    write_text(&ws.dedup_catalog(), &result.retained.to_jsonl())?;
    result.save_removal_csv(&catalog, &dir.join("removals.csv"))?;
    write_json(&dir.join("groups.json"), &result.groups)?;
    let summary = result.summary(&catalog);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn run_normalize(config: &PipelineConfig) -> Result<NormalizeReport> {
    let ws = Workspace::new(&config.workdir);
    let catalog = ws.curated_catalog()?;
    let report = process_dataset(&catalog, &config.dataset_root, &ws.normalized_dir(), config.normalize)?;
    write_json(&ws.normalized_dir().join("report.json"), &report)?;
    Ok(report)
}

pub fn run_split(config: &PipelineConfig, protocols: &[Protocol]) -> Result<Vec<SplitManifest>> {
    let ws = Workspace::new(&config.workdir);
    let catalog = ws.curated_catalog()?;
    let mut all = Vec::new();
    for &protocol in protocols {
        let manifests = splits::generate(&catalog, protocol, config.split.train_frac, config.split.seed)?;
        for m in &manifests {
            let violations = splits::validate_manifest(m, &catalog);
            if let Some(v) = violations.first() {
                return Err(Error::Split(format!("{}: {v}", m.fold_name())));
            }
            m.write_to_dir(&ws.splits_dir())?;
        }
        all.extend(manifests);
    }
    Ok(all)
}

/// Features for every readable curated record, read from the normalized tree.
pub fn load_features(config: &PipelineConfig, catalog: &Catalog) -> Result<FeatureTable> {
    let dir = Workspace::new(&config.workdir).normalized_dir();
    FeatureTable::extract(catalog, |r| output_path(&dir, r))
}

pub fn run_train(config: &PipelineConfig, protocols: &[Protocol]) -> Result<usize> {
    let ws = Workspace::new(&config.workdir);
    let catalog = ws.curated_catalog()?;
    let features = load_features(config, &catalog)?;
    let classes: Vec<_> = catalog.classes().into_iter().collect();
    let mut manifests = Vec::new();
    for &p in protocols {
        manifests.extend(manifests_for(&ws, p)?);
    }
    for dir in [ws.models_dir(), ws.predictions_dir(), ws.curves_dir()] {
        fs::create_dir_all(&dir).at(&dir)?;
    }
    let outcomes = par::map(&manifests, |m| -> Result<()> {
        let out = baseline::train(m, &catalog, &features, &classes, &config.train)?;
        let fold = m.fold_name();
        ModelFile {
            feature_spec_version: FEATURE_SPEC_VERSION.to_string(),
            fold: fold.clone(),
            config: config.train.clone(),
            model: out.model,
        }
        .save(&ws.models_dir().join(format!("{fold}.json")))?;
        out.val.save(&ws.predictions_dir())?;
        out.test.save(&ws.predictions_dir())?;
        let path = ws.curves_dir().join(format!("{fold}.csv"));
        let file = fs::File::create(&path).at(&path)?;
        out.curve.write_csv(std::io::BufWriter::new(file))?;
        log::info!("trained {fold}");
        Ok(())
    });
    outcomes.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(manifests.len())
}

/// Scores every fold of `protocol` from prediction CSVs in `predictions`.
pub fn evaluate_protocol(
    catalog: &Catalog,
    manifests: &[SplitManifest],
    predictions: &Path,
) -> Result<Vec<RunResult>> {
    manifests
        .iter()
        .map(|m| {
            let load = |partition| -> Result<PredictionSet> {
                let set = PredictionSet::load(
                    predictions,
                    ManifestRef {
                        protocol: m.protocol,
                        focal_team: m.focal_team.clone(),
                        partition,
                    },
                )?;
                set.check_against(m)?;
                Ok(set)
            };
            RunResult::from_predictions(&load(Partition::Val)?, &load(Partition::Test)?, catalog)
        })
        .collect()
}

pub fn run_eval(config: &PipelineConfig, protocols: &[Protocol], predictions: Option<&Path>) -> Result<()> {
    let ws = Workspace::new(&config.workdir);
    let catalog = ws.curated_catalog()?;
    let predictions = predictions.map_or_else(|| ws.predictions_dir(), Path::to_path_buf);
    for &protocol in protocols {
        let runs = evaluate_protocol(&catalog, &manifests_for(&ws, protocol)?, &predictions)?;
        write_json(&ws.runs(protocol), &runs)?;
        if protocol == Protocol::TOTO {
            write_json(&ws.matrix(), &build_matrix(&runs)?)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub protocol: Protocol,
    pub folds: usize,
    pub mean_val_pct: f64,
    pub mean_test_pct: f64,
    pub std_test_pct: f64,
    pub mean_macro_test_pct: f64,
    pub mean_vtg_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub protocols: Vec<ProtocolSummary>,
    /// Mean LOTO test minus mean TOTO test, percentage points.
    pub loto_test_gain_pct: Option<f64>,
    /// Mean TOTO VTG minus mean LOTO VTG, percentage points.
    pub vtg_reduction_pct: Option<f64>,
    /// Off-diagonal TOTO row means (transfer from each training team).
    pub toto_row_means: Option<Vec<f64>>,
    pub toto_col_means: Option<Vec<f64>>,
}

impl ReportSummary {
    pub fn get(&self, protocol: Protocol) -> Option<&ProtocolSummary> {
        self.protocols.iter().find(|p| p.protocol == protocol)
    }
}

fn summarize_runs(protocol: Protocol, runs: &[RunResult]) -> Result<ProtocolSummary> {
    let table = ResultsTable::from_runs(runs)?;
    let macro_pct: Vec<f64> = runs.iter().map(|r| 100.0 * r.macro_test_acc).collect();
    Ok(ProtocolSummary {
        protocol,
        folds: runs.len(),
        mean_val_pct: table.mean.val_acc,
        mean_test_pct: table.mean.test_acc,
        std_test_pct: table.std.test_acc,
        mean_macro_test_pct: crate::metrics::aggregate(&macro_pct)?.0,
        mean_vtg_pct: table.mean.vtg,
    })
}

fn read_curves(ws: &Workspace, manifests: &[SplitManifest]) -> Result<Option<Vec<LearningCurve>>> {
    let mut curves = Vec::new();
    for m in manifests {
        let path = ws.curves_dir().join(format!("{}.csv", m.fold_name()));
        if !path.is_file() {
            return Ok(None);
        }
        let file = fs::File::open(&path).at(&path)?;
        curves.push(LearningCurve::read_csv(std::io::BufReader::new(file))?);
    }
    Ok(Some(curves))
}

pub fn run_report(config: &PipelineConfig, protocols: &[Protocol]) -> Result<ReportSummary> {
    let ws = Workspace::new(&config.workdir);
    let out = config.report_dir();
    fs::create_dir_all(&out).at(&out)?;
    let mut summary = ReportSummary {
        protocols: Vec::new(),
        loto_test_gain_pct: None,
        vtg_reduction_pct: None,
        toto_row_means: None,
        toto_col_means: None,
    };
    for &protocol in protocols {
        let runs: Vec<RunResult> = read_json(&ws.runs(protocol))?;
        let stem = protocol.as_str().to_ascii_lowercase();
        report::emit_results_table(&runs, &out.join(format!("results_{stem}.csv")), TableFormat::Csv)?;
        report::emit_results_table(&runs, &out.join(format!("results_{stem}.json")), TableFormat::Json)?;
        if let Some(curves) = read_curves(&ws, &manifests_for(&ws, protocol)?)? {
            report::emit_curves(&curves, &out.join(format!("curves_{stem}.csv")))?;
        }
        if protocol == Protocol::TOTO {
            let matrix = build_matrix(&runs)?;
            report::emit_matrix_svg(&matrix, &out.join("matrix_toto.svg"))?;
            write_text(&out.join("matrix_toto.csv"), &report::matrix_csv(&matrix)?)?;
            if matrix.size() >= 2 {
                let (rows, cols) = transfer_means(&matrix)?;
                summary.toto_row_means = Some(rows.iter().map(|v| report::round2(100.0 * v)).collect());
                summary.toto_col_means = Some(cols.iter().map(|v| report::round2(100.0 * v)).collect());
            }
        }
        summary.protocols.push(summarize_runs(protocol, &runs)?);
    }
    let pair = summary.get(Protocol::TOTO).cloned().zip(summary.get(Protocol::LOTO).cloned());
    if let Some((toto, loto)) = pair {
        summary.loto_test_gain_pct = Some(loto.mean_test_pct - toto.mean_test_pct);
        summary.vtg_reduction_pct = Some(toto.mean_vtg_pct - loto.mean_vtg_pct);
    }
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Whether `pipeline` should (re)generate the dataset: the root is absent or
/// was produced by `synth`.
pub fn wants_synth(config: &PipelineConfig) -> bool {
    !config.dataset_root.exists() || config.dataset_root.join(SYNTH_MARKER).is_file()
}

/// All stages in order.
pub fn run_pipeline(config: &PipelineConfig, protocols: &[Protocol]) -> Result<ReportSummary> {
    config.validate()?;
    if wants_synth(config) {
        let s = run_synth(config)?;
        log::info!("synth: {} images, {} planted groups", s.images, s.planted_groups);
    }
    let catalog = run_catalog(config)?;
    log::info!("catalog: {} records", catalog.len());
    let d = run_dedup(config)?;
    log::info!("dedup: {} groups, {} removed", d.groups, d.removed);
    let n = run_normalize(config)?;
    log::info!("normalize: {} images, {} failures", n.images_processed, n.failures.len());
    let m = run_split(config, protocols)?;
    log::info!("split: {} manifests", m.len());
    let t = run_train(config, protocols)?;
    log::info!("train: {t} folds");
    run_eval(config, protocols, None)?;
    run_report(config, protocols)
}
