//! Run-time inference (color stream only) and test-split evaluation.

use crate::metrics::{
    add_metric, mean_joint_error, pck_curve, projection_metric, HandRecord, ObjectRecord,
};
use crate::networks::Nets;
use crate::pnp::{pose_from_head_output, PnpError};
use crate::scene::{window_origin, Dataset, DatasetKind, RigidPose, TaskMode, Vec3};
use crate::Tensor;

use super::config::ExperimentConfig;
use super::{PipelineError, Result};

/// Predict the pose vector for one color window: color features, mapped to
/// the depth feature space, through the pose head. The depth extractor is
/// never touched. With the feature-mapping term ablated the mapping network
/// was never trained, so inference bypasses it (identity mapping).
pub fn infer_pose_vector(nets: &Nets, fm_on: bool, color_window: &[f64]) -> Result<Vec<f64>> {
    let bound = nets.bind();
    let x = Tensor::vector(color_window);
    let feat = nets.f_color(&bound, &x)?;
    let mapped = if fm_on {
        nets.g_map(&bound, &feat)?
    } else {
        feat
    };
    let out = nets.h_pose(&bound, &mapped, nets.spec.head_mode)?;
    Ok(out.data().to_vec())
}

/// Pose vector from the depth stream (the training-domain estimator); the
/// upper bound the color stream is measured against.
pub fn infer_depth_pose_vector(nets: &Nets, depth_window: &[f64]) -> Result<Vec<f64>> {
    let bound = nets.bind();
    let x = Tensor::vector(depth_window);
    let feat = nets.f_depth(&bound, &x)?;
    let out = nets.h_pose(&bound, &feat, nets.spec.head_mode)?;
    Ok(out.data().to_vec())
}

/// Object-mode inference result: the raw 16-vector and the recovered rigid
/// pose (the fallback pose when the geometric solve failed outright).
#[derive(Debug, Clone)]
pub struct ObjectInference {
    pub pose_vector: Vec<f64>,
    pub pose: RigidPose,
    pub pnp_failed: bool,
}

/// A pose that is always valid and always wrong at scene scale; scored as an
/// incorrect estimate by every metric.
fn fallback_pose() -> RigidPose {
    RigidPose::identity_at(100.0)
}

pub fn infer_object(
    nets: &Nets,
    fm_on: bool,
    color_window: &[f64],
    corners: &[Vec3; 8],
    window_intr: &crate::scene::CameraIntrinsics,
) -> Result<ObjectInference> {
    let pose_vector = infer_pose_vector(nets, fm_on, color_window)?;
    let (pose, pnp_failed) = solve_head(&pose_vector, corners, window_intr);
    Ok(ObjectInference {
        pose_vector,
        pose,
        pnp_failed,
    })
}

fn solve_head(
    head16: &[f64],
    corners: &[Vec3; 8],
    window_intr: &crate::scene::CameraIntrinsics,
) -> (RigidPose, bool) {
    match pose_from_head_output(head16, corners, window_intr) {
        Ok(sol) => (sol.pose, false),
        Err(PnpError::Diverged { best, .. }) => (*best, true),
        Err(_) => (fallback_pose(), true),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub threshold: f64,
    pub split: String,
    pub seed: u64,
    pub ablation: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub config_text: String,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str("# config-begin\n");
        for line in self.config_text.lines() {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
        s.push_str("# config-end\n");
        s.push_str("metric,threshold,split,seed,ablation,value\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.metric, r.threshold, r.split, r.seed, r.ablation, r.value
            ));
        }
        s
    }

    pub fn value_of(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.value)
    }
}

/// Evaluate a checkpointed model on the labeled test split. Both streams are
/// scored: the color path (the product) and the depth path (the upper bound
/// used for gap-closure accounting).
pub fn evaluate(cfg: &ExperimentConfig, nets: &Nets, test: &Dataset) -> Result<EvalReport> {
    if test.kind != DatasetKind::Test {
        return Err(PipelineError::DatasetMismatch(format!(
            "evaluate: expected a Test dataset, got {:?}",
            test.kind
        )));
    }
    if test.records.is_empty() {
        return Err(PipelineError::DatasetMismatch(
            "evaluate: test split is empty".into(),
        ));
    }
    let fm_on = cfg.fm_on;
    let seed = cfg.master_seed;
    let ablation = cfg.ablation().tag().to_string();
    let mut rows = Vec::new();
    let push = |metric: &str, threshold: f64, value: f64, rows: &mut Vec<MetricRow>| {
        rows.push(MetricRow {
            metric: metric.to_string(),
            threshold,
            split: "test".to_string(),
            seed,
            ablation: ablation.clone(),
            value,
        });
    };

    match cfg.mode {
        TaskMode::Object => {
            let scene = cfg.scene_config();
            let model = scene.nominal_model();
            let intr = scene.intrinsics();
            let mut color_records = Vec::with_capacity(test.records.len());
            let mut depth_records = Vec::with_capacity(test.records.len());
            let mut failures = 0usize;
            for r in &test.records {
                let truth = r.pose();
                let (left, top) = window_origin(&truth, &intr, cfg.window)?;
                let wintr = intr.for_window(left, top, cfg.window);

                let color = r.color.as_ref().expect("test record has color");
                let head = infer_pose_vector(nets, fm_on, color)?;
                let (pose, failed) = solve_head(&head, &model.corners, &wintr);
                if failed {
                    failures += 1;
                }
                color_records.push(ObjectRecord {
                    predicted: pose,
                    truth: truth.clone(),
                });

                let head_d = infer_depth_pose_vector(nets, &r.depth)?;
                let (pose_d, _) = solve_head(&head_d, &model.corners, &wintr);
                depth_records.push(ObjectRecord {
                    predicted: pose_d,
                    truth,
                });
            }

            let pts = &model.surface_points;
            let wintr0 = intr.for_window(0, 0, cfg.window);
            push(
                "proj2d",
                cfg.tau_px,
                projection_metric(&color_records, pts, &wintr0, cfg.tau_px)?,
                &mut rows,
            );
            push(
                "add",
                cfg.add_kappa,
                add_metric(&color_records, pts, model.diameter, cfg.add_kappa)?,
                &mut rows,
            );
            push(
                "proj2d_depth_upper",
                cfg.tau_px,
                projection_metric(&depth_records, pts, &wintr0, cfg.tau_px)?,
                &mut rows,
            );
            push(
                "add_depth_upper",
                cfg.add_kappa,
                add_metric(&depth_records, pts, model.diameter, cfg.add_kappa)?,
                &mut rows,
            );
            push(
                "pnp_failure_rate",
                0.0,
                failures as f64 / test.records.len() as f64,
                &mut rows,
            );
        }
        TaskMode::Hand => {
            let to_joints = |flat: &[f64]| -> Vec<Vec3> {
                flat.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
            };
            let mut color_records = Vec::with_capacity(test.records.len());
            let mut depth_records = Vec::with_capacity(test.records.len());
            for r in &test.records {
                let truth = to_joints(r.label.as_ref().expect("test record labeled"));
                let color = r.color.as_ref().expect("test record has color");
                let pred = to_joints(&infer_pose_vector(nets, fm_on, color)?);
                color_records.push(HandRecord {
                    predicted: pred,
                    truth: truth.clone(),
                });
                let pred_d = to_joints(&infer_depth_pose_vector(nets, &r.depth)?);
                depth_records.push(HandRecord {
                    predicted: pred_d,
                    truth,
                });
            }
            let curve = pck_curve(&color_records, &cfg.pck_thresholds, cfg.wrist_align)?;
            for (t, v) in curve.thresholds_mm.iter().zip(&curve.values) {
                push("pck", *t, *v, &mut rows);
            }
            push(
                "mean_joint_error_mm",
                0.0,
                mean_joint_error(&color_records, cfg.wrist_align)?,
                &mut rows,
            );
            let curve_d = pck_curve(&depth_records, &cfg.pck_thresholds, cfg.wrist_align)?;
            for (t, v) in curve_d.thresholds_mm.iter().zip(&curve_d.values) {
                push("pck_depth_upper", *t, *v, &mut rows);
            }
            push(
                "mean_joint_error_mm_depth_upper",
                0.0,
                mean_joint_error(&depth_records, cfg.wrist_align)?,
                &mut rows,
            );
        }
    }

    Ok(EvalReport {
        rows,
        config_text: cfg.to_text(),
    })
}
