//! Reference classifier: fixed color/orientation histograms feeding a linear
//! softmax layer, trained with AdamW under a per-epoch cosine schedule.
//!
//! It stands in for a deep backbone so protocols can be exercised end to end
//! on a laptop. Optimizer, epochs, batch size, weight decay, dropout rate and
//! seed follow the deep-model recipe. The base learning rate is `1e-2`
//! because `1e-4` leaves a zero-initialized linear model almost untrained
//! after 20 epochs.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::catalog::{decode_image, Catalog, ClassLabel, ImageId, ImageRecord};
use crate::error::{json_err, IoContext};
use crate::metrics::{ManifestRef, Prediction, PredictionSet};
use crate::phash::{luma, resample_bicubic};
use crate::splits::{Partition, SplitManifest, SplitRng};
use crate::{par, Error, Result};

pub const FEATURE_SIZE: u32 = 224;
pub const COLOR_BINS: usize = 16;
pub const ORIENTATION_BINS: usize = 8;
pub const FEATURE_DIM: usize = 3 * COLOR_BINS + ORIENTATION_BINS;
pub const FEATURE_SPEC_VERSION: &str = "rgb16x3-orient8-v1";

/// Gradients with `|gx| + |gy|` at or below this are treated as flat.
const FLAT_GRADIENT: f64 = 1e-9;

/// `[r-hist | g-hist | b-hist | orientation-hist]`, each block summing to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::Train(format!("feature vector has {} values, expected {FEATURE_DIM}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Train("feature vector is not finite".into()));
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn color_block(&self, channel: usize) -> &[f64] {
        &self.0[channel * COLOR_BINS..(channel + 1) * COLOR_BINS]
    }

    pub fn orientation_block(&self) -> &[f64] {
        &self.0[3 * COLOR_BINS..]
    }
}

/// Orientation bin for a gradient, angles measured counter-clockwise from
/// +x in image coordinates (y grows downward). Bin k covers
/// `[k·π/4, (k+1)·π/4)`; the small bias keeps exact octant boundaries from
/// landing one bin low due to rounding in `atan2`.
pub fn orientation_bin(gx: f64, gy: f64) -> usize {
    let mut theta = gy.atan2(gx);
    if theta < 0.0 {
        theta += TAU;
    }
    ((theta / (PI / 4.0) + 1e-9).floor() as usize) % ORIENTATION_BINS
}

/// Histograms of an image used as-is (no resizing).
pub fn histogram_features(image: &RgbImage) -> Result<FeatureVector> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Dimensions { width: w, height: h });
    }
    let mut values = vec![0.0; FEATURE_DIM];
    for px in image.pixels() {
        for c in 0..3 {
            values[c * COLOR_BINS + usize::from(px[c]) * COLOR_BINS / 256] += 1.0;
        }
    }
    let n = f64::from(w) * f64::from(h);
    for v in &mut values[..3 * COLOR_BINS] {
        *v /= n;
    }

    let plane = luma(image);
    let orient = &mut values[3 * COLOR_BINS..];
    let mut counted = 0usize;
    for y in 1..plane.height.saturating_sub(1) {
        for x in 1..plane.width.saturating_sub(1) {
            let gx = plane.get(x + 1, y) - plane.get(x - 1, y);
            let gy = plane.get(x, y + 1) - plane.get(x, y - 1);
            if gx.abs() + gy.abs() > FLAT_GRADIENT {
                orient[orientation_bin(gx, gy)] += 1.0;
                counted += 1;
            }
        }
    }
    if counted == 0 {
        orient.fill(1.0 / ORIENTATION_BINS as f64);
    } else {
        for v in orient.iter_mut() {
            *v /= counted as f64;
        }
    }
    FeatureVector::new(values)
}

/// Resizes to 224×224 and computes [`histogram_features`].
pub fn extract_features(image: &RgbImage) -> Result<FeatureVector> {
    histogram_features(&resample_bicubic(image, FEATURE_SIZE, FEATURE_SIZE)?)
}

/// Features keyed by image id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTable(BTreeMap<ImageId, FeatureVector>);

impl FeatureTable {
    /// Decodes `path_of(record)` for every readable record, in parallel.
    pub fn extract(catalog: &Catalog, path_of: impl Fn(&ImageRecord) -> PathBuf + Sync) -> Result<Self> {
        let records: Vec<&ImageRecord> = catalog.records().iter().filter(|r| r.readable).collect();
        let vectors = par::map(&records, |r| decode_image(&path_of(r)).and_then(|img| extract_features(&img)));
        records
            .iter()
            .zip(vectors)
            .map(|(r, v)| Ok((r.image_id.clone(), v?)))
            .collect::<Result<_>>()
            .map(FeatureTable)
    }

    pub fn from_map(map: BTreeMap<ImageId, FeatureVector>) -> Self {
        FeatureTable(map)
    }

    pub fn get(&self, id: &ImageId) -> Result<&FeatureVector> {
        self.0
            .get(id)
            .ok_or_else(|| Error::Train(format!("no features for image {id}")))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr0: 1e-2,
            lr_min: 1e-6,
            weight_decay: 1e-4,
            dropout: 0.3,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr0 > self.lr_min && self.lr_min > 0.0) {
            return Err(Error::Config(format!("need lr0 > lr_min > 0, got {} and {}", self.lr0, self.lr_min)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `lr_min + ½(lr0 − lr_min)(1 + cos(π·epoch/total))`
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64, lr_min: f64) -> f64 {
    if total_epochs == 0 {
        return lr0;
    }
    let t = epoch.min(total_epochs) as f64 / total_epochs as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (PI * t).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxModel {
    pub classes: Vec<ClassLabel>,
    /// `C × D`
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl LinearSoftmaxModel {
    pub fn zeros(classes: Vec<ClassLabel>, dim: usize) -> Self {
        let c = classes.len();
        LinearSoftmaxModel {
            classes,
            w: vec![vec![0.0; dim]; c],
            b: vec![0.0; c],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().flatten().chain(&self.b).all(|v| v.is_finite())
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.scores(x))
    }

    /// Index of the highest score; the lowest index wins ties.
    pub fn predict_index(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Mean cross-entropy over `batch` and its gradient. Weight decay is not part
/// of the loss; the optimizer applies it separately.
pub fn loss_and_grad(model: &LinearSoftmaxModel, batch: &[(&[f64], usize)]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Train("empty batch".into()));
    }
    let (c, d) = (model.num_classes(), model.dim());
    let mut grad = Gradients {
        w: vec![vec![0.0; d]; c],
        b: vec![0.0; c],
    };
    let mut loss = 0.0;
    for (x, label) in batch {
        if x.len() != d || *label >= c {
            return Err(Error::Train(format!("sample shape mismatch (dim {}, label {label})", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Train("non-finite feature in batch".into()));
        }
        let scores = model.scores(x);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - scores[*label];
        for k in 0..c {
            let delta = (scores[k] - log_sum).exp() - if k == *label { 1.0 } else { 0.0 };
            grad.b[k] += delta;
            for (g, v) in grad.w[k].iter_mut().zip(x.iter()) {
                *g += delta * v;
            }
        }
    }
    let n = batch.len() as f64;
    for v in grad.w.iter_mut().flatten().chain(grad.b.iter_mut()) {
        *v /= n;
    }
    if !loss.is_finite() {
        return Err(Error::Train("loss is not finite".into()));
    }
    Ok((loss / n, grad))
}

/// AdamW with decoupled weight decay applied to `W` only.
#[derive(Clone, Debug)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl AdamW {
    pub fn new(model: &LinearSoftmaxModel, weight_decay: f64) -> Self {
        let zero = Gradients {
            w: vec![vec![0.0; model.dim()]; model.num_classes()],
            b: vec![0.0; model.num_classes()],
        };
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zero.clone(),
            v: zero,
        }
    }

    pub fn step(&mut self, model: &mut LinearSoftmaxModel, grad: &Gradients, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64, decay: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * ((*m / bc1) / ((*v / bc2).sqrt() + eps) + decay * *p);
        };
        for k in 0..model.num_classes() {
            for j in 0..model.dim() {
                update(
                    &mut model.w[k][j],
                    grad.w[k][j],
                    &mut self.m.w[k][j],
                    &mut self.v.w[k][j],
                    self.weight_decay,
                );
            }
            update(&mut model.b[k], grad.b[k], &mut self.m.b[k], &mut self.v.b[k], 0.0);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub epochs: Vec<EpochStats>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// `epoch,train_acc,val_acc,test_acc`; epochs are 1-based and missing
    /// partitions are left blank.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ctx = "learning curve";
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        w.write_record(["epoch", "train_acc", "val_acc", "test_acc"])
            .map_err(crate::error::csv_err(ctx))?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.6}", e.train_acc),
                fmt(e.val_acc),
                fmt(e.test_acc),
            ])
            .map_err(crate::error::csv_err(ctx))?;
        }
        w.flush().at("learning curve")
    }
}

impl LearningCurve {
    pub fn read_csv(input: impl std::io::Read) -> Result<Self> {
        let ctx = "learning curve";
        let mut r = csv::Reader::from_reader(input);
        let mut epochs = Vec::new();
        for record in r.records() {
            let record = record.map_err(crate::error::csv_err(ctx))?;
            let field = |i: usize| -> Result<Option<f64>> {
                match record.get(i).unwrap_or("") {
                    "" => Ok(None),
                    v => v
                        .parse()
                        .map(Some)
                        .map_err(|e| Error::Train(format!("{ctx}: bad value {v:?}: {e}"))),
                }
            };
            let epoch = record
                .get(0)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Train(format!("{ctx}: bad epoch column")))?;
            epochs.push(EpochStats {
                epoch,
                train_acc: field(1)?.ok_or_else(|| Error::Train(format!("{ctx}: missing train_acc")))?,
                val_acc: field(2)?,
                test_acc: field(3)?,
            });
        }
        Ok(LearningCurve { epochs })
    }
}

/// Serialized model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub feature_spec_version: String,
    pub fold: String,
    pub config: TrainConfig,
    #[serde(flatten)]
    pub model: LinearSoftmaxModel,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(json_err(path.display().to_string()))?;
        std::fs::write(path, text + "\n").at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(json_err(path.display().to_string()))
    }
}

pub struct TrainOutcome {
    pub model: LinearSoftmaxModel,
    pub curve: LearningCurve,
    pub val: PredictionSet,
    pub test: PredictionSet,
}

fn labeled<'a>(
    ids: &[ImageId],
    catalog: &Catalog,
    features: &'a FeatureTable,
    classes: &[ClassLabel],
) -> Result<Vec<(&'a [f64], usize)>> {
    ids.iter()
        .map(|id| {
            let record = catalog
                .get(id)
                .ok_or_else(|| Error::Train(format!("image {id} is not in the catalog")))?;
            let label = classes
                .binary_search(&record.class)
                .map_err(|_| Error::Train(format!("class {} is not in the model", record.class)))?;
            Ok((features.get(id)?.values(), label))
        })
        .collect()
}

fn accuracy_on(model: &LinearSoftmaxModel, samples: &[(&[f64], usize)]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let correct = samples.iter().filter(|(x, y)| model.predict_index(x) == *y).count();
    Some(correct as f64 / samples.len() as f64)
}

/// Trains on `manifest.train_ids` and predicts its val and test partitions.
/// `classes` fixes the output order and must be sorted.
pub fn train(
    manifest: &SplitManifest,
    catalog: &Catalog,
    features: &FeatureTable,
    classes: &[ClassLabel],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if manifest.train_ids.is_empty() {
        return Err(Error::Train(format!("{}: empty train partition", manifest.fold_name())));
    }
    if classes.len() < 2 || classes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Train("need at least 2 classes in sorted order".into()));
    }
    let train_set = labeled(&manifest.train_ids, catalog, features, classes)?;
    let val_set = labeled(&manifest.val_ids, catalog, features, classes)?;
    let test_set = labeled(&manifest.test_ids, catalog, features, classes)?;

    let mut model = LinearSoftmaxModel::zeros(classes.to_vec(), FEATURE_DIM);
    let mut optimizer = AdamW::new(&model, config.weight_decay);
    let mut rng = SplitRng::for_label(&format!("{}:train:{}", config.seed, manifest.fold_name()));
    let keep = 1.0 - config.dropout;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut dropped: Vec<Vec<f64>> = Vec::with_capacity(config.batch_size);
    let mut curve = LearningCurve::default();

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr0, config.lr_min);
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            dropped.clear();
            for &i in chunk {
                let x = train_set[i].0;
                let masked = if config.dropout > 0.0 {
                    x.iter()
                        .map(|v| if rng.unit_f64() < config.dropout { 0.0 } else { v / keep })
                        .collect()
                } else {
                    x.to_vec()
                };
                dropped.push(masked);
            }
            let batch: Vec<(&[f64], usize)> = dropped
                .iter()
                .zip(chunk)
                .map(|(x, &i)| (x.as_slice(), train_set[i].1))
                .collect();
            let (_, grad) = loss_and_grad(&model, &batch)?;
            optimizer.step(&mut model, &grad, lr);
        }
        if !model.is_finite() {
            return Err(Error::Train(format!("{}: parameters diverged", manifest.fold_name())));
        }
        curve.epochs.push(EpochStats {
            epoch: epoch + 1,
            train_acc: accuracy_on(&model, &train_set).unwrap_or(0.0),
            val_acc: accuracy_on(&model, &val_set),
            test_acc: accuracy_on(&model, &test_set),
        });
    }

    let reference = |partition| ManifestRef {
        protocol: manifest.protocol,
        focal_team: manifest.focal_team.clone(),
        partition,
    };
    let val = predict(&model, &manifest.val_ids, catalog, features, reference(Partition::Val))?;
    let test = predict(&model, &manifest.test_ids, catalog, features, reference(Partition::Test))?;
    Ok(TrainOutcome {
        model,
        curve,
        val,
        test,
    })
}

/// Predictions for `ids` in the given order.
pub fn predict(
    model: &LinearSoftmaxModel,
    ids: &[ImageId],
    catalog: &Catalog,
    features: &FeatureTable,
    manifest_ref: ManifestRef,
) -> Result<PredictionSet> {
    let items = ids
        .iter()
        .map(|id| {
            let record = catalog
                .get(id)
                .ok_or_else(|| Error::Train(format!("image {id} is not in the catalog")))?;
            let k = model.predict_index(features.get(id)?.values());
            Ok(Prediction {
                image_id: id.clone(),
                true_label: record.class.clone(),
                predicted_label: model.classes[k].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(manifest_ref, items)
}
