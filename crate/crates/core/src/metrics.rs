//! Pose evaluation metrics: the 2D projection metric and ADD for rigid
//! objects, 3D PCK curves and mean joint error for hands.

use thiserror::Error;

use crate::scene::{CameraIntrinsics, RigidPose, Vec3};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{metric}: no records to evaluate")]
    EmptyRecords { metric: &'static str },
    #[error("{metric}: model point set is empty")]
    EmptyModelPoints { metric: &'static str },
    #[error("{metric}: diameter must be positive, got {got}")]
    BadDiameter { metric: &'static str, got: f64 },
    #[error("pck thresholds must be ascending")]
    UnsortedThresholds,
    #[error("record {index}: joint counts differ ({pred} predicted vs {truth} truth)")]
    JointCountMismatch {
        index: usize,
        pred: usize,
        truth: usize,
    },
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Predicted and ground-truth rigid pose for one test sample.
#[derive(Debug, Clone)]
pub struct ObjectRecord {
    pub predicted: RigidPose,
    pub truth: RigidPose,
}

/// Predicted and ground-truth 3D joint sets for one test sample, meters.
#[derive(Debug, Clone)]
pub struct HandRecord {
    pub predicted: Vec<Vec3>,
    pub truth: Vec<Vec3>,
}

/// Fraction of records whose mean pixel reprojection distance of the model
/// points, predicted vs true pose, is below `tau_px`. Records where the
/// prediction projects behind the camera count as incorrect.
pub fn projection_metric(
    records: &[ObjectRecord],
    model_points: &[Vec3],
    intr: &CameraIntrinsics,
    tau_px: f64,
) -> Result<f64> {
    if records.is_empty() {
        return Err(MetricError::EmptyRecords {
            metric: "projection_metric",
        });
    }
    if model_points.is_empty() {
        return Err(MetricError::EmptyModelPoints {
            metric: "projection_metric",
        });
    }
    let mut correct = 0usize;
    'rec: for r in records {
        let mut total = 0.0;
        for p in model_points {
            let qp = r.predicted.transform(p);
            let qt = r.truth.transform(p);
            if qp.z <= 0.0 || qt.z <= 0.0 {
                continue 'rec; // counts as incorrect
            }
            let du = intr.fx * (qp.x / qp.z - qt.x / qt.z);
            let dv = intr.fy * (qp.y / qp.z - qt.y / qt.z);
            total += (du * du + dv * dv).sqrt();
        }
        if total / (model_points.len() as f64) < tau_px {
            correct += 1;
        }
    }
    Ok(correct as f64 / records.len() as f64)
}

/// Mean 3D distance between model points under the two poses.
pub fn add_distance(record: &ObjectRecord, model_points: &[Vec3]) -> f64 {
    let mut total = 0.0;
    for p in model_points {
        total += (record.predicted.transform(p) - record.truth.transform(p)).norm();
    }
    total / model_points.len() as f64
}

/// ADD metric: fraction of records with mean model-point distance below
/// `kappa * diameter`.
pub fn add_metric(
    records: &[ObjectRecord],
    model_points: &[Vec3],
    diameter: f64,
    kappa: f64,
) -> Result<f64> {
    if records.is_empty() {
        return Err(MetricError::EmptyRecords { metric: "add_metric" });
    }
    if model_points.is_empty() {
        return Err(MetricError::EmptyModelPoints {
            metric: "add_metric",
        });
    }
    if !(diameter > 0.0) {
        return Err(MetricError::BadDiameter {
            metric: "add_metric",
            got: diameter,
        });
    }
    let threshold = kappa * diameter;
    let correct = records
        .iter()
        .filter(|r| add_distance(r, model_points) < threshold)
        .count();
    Ok(correct as f64 / records.len() as f64)
}

/// PCK curve values (fraction of correct joints) per threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PckCurve {
    /// Ascending thresholds, millimeters.
    pub thresholds_mm: Vec<f64>,
    /// Fraction of all pooled joints below each threshold.
    pub values: Vec<f64>,
}

/// Translate predicted joints so the first joint coincides with the truth's
/// first joint; the toy stand-in for wrist alignment.
fn align_to_first_joint(record: &HandRecord) -> Vec<Vec3> {
    let offset = record.truth[0] - record.predicted[0];
    record.predicted.iter().map(|p| p + offset).collect()
}

fn joint_errors_mm(records: &[HandRecord], align_wrist: bool) -> Result<Vec<f64>> {
    let mut errors = Vec::new();
    for (index, r) in records.iter().enumerate() {
        if r.predicted.len() != r.truth.len() || r.truth.is_empty() {
            return Err(MetricError::JointCountMismatch {
                index,
                pred: r.predicted.len(),
                truth: r.truth.len(),
            });
        }
        let pred = if align_wrist {
            align_to_first_joint(r)
        } else {
            r.predicted.clone()
        };
        for (p, t) in pred.iter().zip(&r.truth) {
            errors.push((p - t).norm() * 1000.0);
        }
    }
    Ok(errors)
}

/// 3D PCK: per threshold, the fraction of all joints (pooled over records)
/// with Euclidean error below it.
pub fn pck_curve(
    records: &[HandRecord],
    thresholds_mm: &[f64],
    align_wrist: bool,
) -> Result<PckCurve> {
    if records.is_empty() {
        return Err(MetricError::EmptyRecords { metric: "pck_curve" });
    }
    if thresholds_mm.windows(2).any(|w| w[0] > w[1]) {
        return Err(MetricError::UnsortedThresholds);
    }
    let errors = joint_errors_mm(records, align_wrist)?;
    let n = errors.len() as f64;
    let values = thresholds_mm
        .iter()
        .map(|t| errors.iter().filter(|e| **e < *t).count() as f64 / n)
        .collect();
    Ok(PckCurve {
        thresholds_mm: thresholds_mm.to_vec(),
        values,
    })
}

/// Mean Euclidean joint error over records and joints, millimeters.
pub fn mean_joint_error(records: &[HandRecord], align_wrist: bool) -> Result<f64> {
    if records.is_empty() {
        return Err(MetricError::EmptyRecords {
            metric: "mean_joint_error",
        });
    }
    let errors = joint_errors_mm(records, align_wrist)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sample_pose, ObjectModel, PoseRanges, RigidPose};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 140.0,
            fy: 140.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        }
    }

    fn perfect_records(n: usize, seed: u64) -> Vec<ObjectRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let pose = sample_pose(&mut rng, &PoseRanges::default());
                ObjectRecord {
                    predicted: pose.clone(),
                    truth: pose,
                }
            })
            .collect()
    }

    #[test]
    fn exact_predictions_score_one() {
        let model = ObjectModel::default_cuboid();
        let records = perfect_records(10, 0);
        let acc = projection_metric(&records, &model.surface_points, &intr(), 5.0).unwrap();
        assert_eq!(acc, 1.0);
        let acc = add_metric(&records, &model.surface_points, model.diameter, 0.1).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn projection_flips_exactly_at_tau() {
        let model = ObjectModel::default_cuboid();
        let truth = RigidPose::identity_at(1.0);
        // Shift laterally so the reprojection offset is uniform per point.
        let mut offset = truth.clone();
        offset.translation.x += 0.01;
        let records = vec![ObjectRecord {
            predicted: offset,
            truth,
        }];

        // Loop oracle for the mean reprojection distance.
        let mut mean = 0.0;
        for p in &model.surface_points {
            let qp = records[0].predicted.transform(p);
            let qt = records[0].truth.transform(p);
            let du = 140.0 * (qp.x / qp.z - qt.x / qt.z);
            let dv = 140.0 * (qp.y / qp.z - qt.y / qt.z);
            mean += (du * du + dv * dv).sqrt();
        }
        mean /= model.surface_points.len() as f64;

        let below =
            projection_metric(&records, &model.surface_points, &intr(), mean + 1e-9).unwrap();
        let above =
            projection_metric(&records, &model.surface_points, &intr(), mean - 1e-9).unwrap();
        assert_eq!(below, 1.0);
        assert_eq!(above, 0.0);
    }

    #[test]
    fn empty_inputs_are_contract_errors() {
        let model = ObjectModel::default_cuboid();
        assert!(matches!(
            projection_metric(&[], &model.surface_points, &intr(), 5.0),
            Err(MetricError::EmptyRecords { .. })
        ));
        let records = perfect_records(1, 1);
        assert!(matches!(
            projection_metric(&records, &[], &intr(), 5.0),
            Err(MetricError::EmptyModelPoints { .. })
        ));
        assert!(matches!(
            add_metric(&records, &model.surface_points, 0.0, 0.1),
            Err(MetricError::BadDiameter { .. })
        ));
    }

    #[test]
    fn pure_translation_offset_gives_exact_add_distance() {
        let model = ObjectModel::default_cuboid();
        let truth = RigidPose::identity_at(1.0);
        let mut pred = truth.clone();
        pred.translation += crate::scene::Vec3::new(0.003, -0.004, 0.0);
        let rec = ObjectRecord {
            predicted: pred,
            truth,
        };
        let d = add_distance(&rec, &model.surface_points);
        assert!((d - 0.005).abs() <= 1e-15, "isometry: mean distance = |delta|");
    }

    #[test]
    fn add_matches_loop_oracle_on_random_poses() {
        let model = ObjectModel::default_cuboid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let records: Vec<ObjectRecord> = (0..20)
            .map(|_| ObjectRecord {
                predicted: sample_pose(&mut rng, &PoseRanges::default()),
                truth: sample_pose(&mut rng, &PoseRanges::default()),
            })
            .collect();
        let kappa = 2.0; // large so both sides see a mix of outcomes
        let got = add_metric(&records, &model.surface_points, model.diameter, kappa).unwrap();

        let mut correct = 0;
        for r in &records {
            let mut mean = 0.0;
            for p in &model.surface_points {
                let a = r.predicted.transform(p);
                let b = r.truth.transform(p);
                mean += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
            }
            mean /= model.surface_points.len() as f64;
            if mean < kappa * model.diameter {
                correct += 1;
            }
        }
        let want = correct as f64 / records.len() as f64;
        assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn metrics_are_order_invariant() {
        let model = ObjectModel::default_cuboid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut records: Vec<ObjectRecord> = (0..9)
            .map(|_| ObjectRecord {
                predicted: sample_pose(&mut rng, &PoseRanges::default()),
                truth: sample_pose(&mut rng, &PoseRanges::default()),
            })
            .collect();
        let a = projection_metric(&records, &model.surface_points, &intr(), 50.0).unwrap();
        let b = add_metric(&records, &model.surface_points, model.diameter, 0.5).unwrap();
        records.reverse();
        assert_eq!(
            a,
            projection_metric(&records, &model.surface_points, &intr(), 50.0).unwrap()
        );
        assert_eq!(
            b,
            add_metric(&records, &model.surface_points, model.diameter, 0.5).unwrap()
        );
    }

    #[test]
    fn kappa_and_diameter_trade_exactly() {
        let model = ObjectModel::default_cuboid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let records: Vec<ObjectRecord> = (0..12)
            .map(|_| ObjectRecord {
                predicted: sample_pose(&mut rng, &PoseRanges::default()),
                truth: sample_pose(&mut rng, &PoseRanges::default()),
            })
            .collect();
        let c = 3.0;
        let a = add_metric(&records, &model.surface_points, model.diameter, 0.1 * c).unwrap();
        let b = add_metric(&records, &model.surface_points, model.diameter * c, 0.1).unwrap();
        assert_eq!(a, b);
    }

    fn hand_records() -> Vec<HandRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..4)
            .map(|_| {
                let truth: Vec<Vec3> = (0..6)
                    .map(|_| {
                        Vec3::new(
                            rng.random_range(-0.05..0.05),
                            rng.random_range(-0.05..0.05),
                            rng.random_range(-0.05..0.05),
                        )
                    })
                    .collect();
                HandRecord {
                    predicted: truth.clone(),
                    truth,
                }
            })
            .collect()
    }

    #[test]
    fn perfect_hands_give_all_ones_curve_and_zero_error() {
        let records = hand_records();
        let curve = pck_curve(&records, &[5.0, 10.0, 20.0], true).unwrap();
        assert_eq!(curve.values, vec![1.0, 1.0, 1.0]);
        assert_eq!(mean_joint_error(&records, true).unwrap(), 0.0);
    }

    #[test]
    fn single_bad_joint_counts_once() {
        let mut records = hand_records();
        // Push one joint 30 mm off (not the alignment joint).
        records[0].predicted[3].x += 0.030;
        let curve = pck_curve(&records, &[20.0, 40.0], false).unwrap();
        let total = 4.0 * 6.0;
        assert!((curve.values[0] - (total - 1.0) / total).abs() <= 1e-12);
        assert_eq!(curve.values[1], 1.0);
    }

    #[test]
    fn curve_is_non_decreasing_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let records: Vec<HandRecord> = (0..6)
            .map(|_| {
                let truth: Vec<Vec3> = (0..6).map(|_| Vec3::zeros()).collect();
                let predicted = truth
                    .iter()
                    .map(|t| t + Vec3::new(rng.random_range(-0.05..0.05), 0.0, 0.0))
                    .collect();
                HandRecord { predicted, truth }
            })
            .collect();
        let thresholds: Vec<f64> = (0..20).map(|i| i as f64 * 5.0).collect();
        let curve = pck_curve(&records, &thresholds, false).unwrap();
        for w in curve.values.windows(2) {
            assert!(w[0] <= w[1], "PCK must be non-decreasing");
        }
        // At threshold 0 only exactly-correct joints count (none here except
        // any zero-offset draws); at a huge threshold everything counts.
        let ends = pck_curve(&records, &[0.0, 1e12], false).unwrap();
        assert!(ends.values[0] <= ends.values[1]);
        assert_eq!(ends.values[1], 1.0);
    }

    #[test]
    fn uniform_offset_gives_exact_mean_error() {
        let mut records = hand_records();
        for r in &mut records {
            for p in &mut r.predicted {
                p.z += 0.010;
            }
        }
        // Without alignment the error is exactly 10 mm everywhere.
        let mje = mean_joint_error(&records, false).unwrap();
        assert!((mje - 10.0).abs() <= 1e-9);
        // First-joint alignment removes a rigid offset entirely.
        let aligned = mean_joint_error(&records, true).unwrap();
        assert!(aligned <= 1e-12);
    }

    #[test]
    fn mje_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let records: Vec<HandRecord> = (0..5)
            .map(|_| {
                let truth: Vec<Vec3> = (0..6)
                    .map(|_| Vec3::new(rng.random_range(-0.1..0.1), 0.0, 0.0))
                    .collect();
                let predicted = truth
                    .iter()
                    .map(|t| {
                        t + Vec3::new(
                            rng.random_range(-0.01..0.01),
                            rng.random_range(-0.01..0.01),
                            0.0,
                        )
                    })
                    .collect();
                HandRecord { predicted, truth }
            })
            .collect();
        let got = mean_joint_error(&records, false).unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        for r in &records {
            for (p, t) in r.predicted.iter().zip(&r.truth) {
                sum += (p - t).norm() * 1000.0;
                count += 1;
            }
        }
        assert!((got - sum / count as f64).abs() <= 1e-12);
    }
}
