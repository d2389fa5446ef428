use std::collections::BTreeMap;

use ctvbench_core::baseline::{train, FeatureTable, FeatureVector, LearningCurve, TrainConfig, FEATURE_DIM};
use ctvbench_core::catalog::{Catalog, ClassLabel, ImageFormat, ImageId, ImageRecord};
use ctvbench_core::metrics::accuracy;
use ctvbench_core::phash::Hash64;
use ctvbench_core::splits::{toto_splits, loto_splits, SplitRng};

/// Two teams, two classes. Class `k` puts its mass on feature `k`, with
/// uniform noise elsewhere, so the problem is linearly separable.
fn separable(per_cell: usize) -> (Catalog, FeatureTable) {
    let mut rng = SplitRng::for_label("separable");
    let mut records = Vec::new();
    let mut features = BTreeMap::new();
    let mut hash = 1u64;
    for team in ["north", "south"] {
        for (k, class) in ["ash", "oak"].into_iter().enumerate() {
            for i in 0..per_cell {
                let rel_path = format!("{team}/{class}/{i}.jpg");
                let id = ImageId::from_rel_path(&rel_path);
                let mut x: Vec<f64> = (0..FEATURE_DIM).map(|_| 0.05 * rng.unit_f64()).collect();
                x[k] += 0.5 + 0.2 * rng.unit_f64();
                features.insert(id.clone(), FeatureVector::new(x).unwrap());
                records.push(ImageRecord {
                    image_id: id,
                    team: team.into(),
                    class: class.into(),
                    rel_path,
                    format: ImageFormat::Jpeg,
                    width_px: 96,
                    height_px: 96,
                    file_size_bytes: 1000,
                    device: None,
                    phash: Some(Hash64(hash)),
                    readable: true,
                });
                hash += 1;
            }
        }
    }
    (Catalog::from_records(records).unwrap(), FeatureTable::from_map(features))
}

fn classes() -> Vec<ClassLabel> {
    vec!["ash".into(), "oak".into()]
}

fn config() -> TrainConfig {
    TrainConfig {
        epochs: 8,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_problem_is_learned() {
    let (catalog, features) = separable(30);
    for m in toto_splits(&catalog, 0.7, 42).unwrap() {
        let out = train(&m, &catalog, &features, &classes(), &config()).unwrap();
        assert_eq!(accuracy(&out.val).unwrap(), 1.0, "{}", m.fold_name());
        assert_eq!(accuracy(&out.test).unwrap(), 1.0, "{}", m.fold_name());
        assert_eq!(out.curve.len(), 8);
    }
}

#[test]
fn training_is_deterministic_and_seeded() {
    let (catalog, features) = separable(20);
    let m = &loto_splits(&catalog, 0.7, 42).unwrap()[0];
    let a = train(m, &catalog, &features, &classes(), &config()).unwrap();
    let b = train(m, &catalog, &features, &classes(), &config()).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.curve, b.curve);

    let other = TrainConfig { seed: 7, ..config() };
    let c = train(m, &catalog, &features, &classes(), &other).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn final_curve_point_matches_emitted_predictions() {
    let (catalog, features) = separable(25);
    let noisy = TrainConfig {
        epochs: 3,
        lr0: 1e-3,
        ..config()
    };
    for m in toto_splits(&catalog, 0.7, 1).unwrap() {
        let out = train(&m, &catalog, &features, &classes(), &noisy).unwrap();
        let last = out.curve.epochs.last().unwrap();
        assert_eq!(last.val_acc, Some(accuracy(&out.val).unwrap()));
        assert_eq!(last.test_acc, Some(accuracy(&out.test).unwrap()));

        let mut csv = Vec::new();
        out.curve.write_csv(&mut csv).unwrap();
        let back = LearningCurve::read_csv(csv.as_slice()).unwrap();
        assert_eq!(back.len(), out.curve.len());
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let (catalog, features) = separable(5);
    let m = &toto_splits(&catalog, 0.7, 42).unwrap()[0];
    let unsorted = vec![ClassLabel::from("oak"), ClassLabel::from("ash")];
    assert!(train(m, &catalog, &features, &unsorted, &config()).is_err());
    let empty = FeatureTable::from_map(BTreeMap::new());
    assert!(train(m, &catalog, &empty, &classes(), &config()).is_err());
    let bad = TrainConfig { dropout: 1.0, ..config() };
    assert!(train(m, &catalog, &features, &classes(), &bad).is_err());
}
