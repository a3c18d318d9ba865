//! Toy scene generation: synthetic depth images of a known object with pose
//! labels, plus paired (pseudo-color, degraded depth) images with an injected
//! sensor gap. Stands in for a real RGB-D capture rig.

mod colorize;
mod dataset;
mod degrade;
mod filter;
mod hand;
mod model;
mod pose;
mod render;

pub use colorize::{colorize, StyleSpec};
pub use dataset::{
    build_datasets, generate_record, read_dataset, sample_seed, write_dataset, Dataset,
    DatasetKind, GeneratedSets, Record, SceneConfig, TaskMode, STREAM_PAIRS, STREAM_SYNTH,
    STREAM_TEST,
};
pub use degrade::{sensor_degrade, GapSpec};
pub use filter::{crop_color_normalize, crop_depth_normalize, median_filter_5x5};
pub use hand::{hand_label, sample_hand_articulation, HandModel, HandSpec, HAND_JOINTS};
pub use model::{AaBox, Capsule, Geometry, ObjectModel};
pub use pose::{sample_pose, viewpoint_of, PoseRanges};
pub use render::{compose_clutter, ray_cast_object, render_depth, ClutterSpec};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("object is fully outside the camera frustum")]
    OutOfView,
    #[error("corner projects behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid pose: {0}")]
    BadPose(String),
    #[error("invalid intrinsics: {0}")]
    BadIntrinsics(String),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: malformed dataset file: {reason}")]
    Malformed { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, SceneError>;

/// Rigid transform from object frame to camera frame: `p_cam = R p + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidPose {
    pub fn identity_at(z: f64) -> RigidPose {
        RigidPose {
            rotation: Mat3::identity(),
            translation: Vec3::new(0.0, 0.0, z),
        }
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Map a camera-frame point back into the object frame.
    pub fn inverse_transform(&self, p_cam: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    pub fn validate(&self) -> Result<()> {
        let should_be_identity = self.rotation.transpose() * self.rotation;
        let err = (should_be_identity - Mat3::identity()).norm();
        if err > 1e-9 {
            return Err(SceneError::BadPose(format!(
                "rotation is not orthonormal (|R^T R - I| = {err:.3e})"
            )));
        }
        if (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(SceneError::BadPose(format!(
                "rotation determinant is {}, not +1",
                self.rotation.determinant()
            )));
        }
        if self.translation.z <= 0.0 {
            return Err(SceneError::BadPose(format!(
                "object must be in front of the camera (z = {})",
                self.translation.z
            )));
        }
        Ok(())
    }

    /// Geodesic angle between two rotations, in radians.
    pub fn rotation_angle_to(&self, other: &RigidPose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos()
    }

    pub fn translation_distance_to(&self, other: &RigidPose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Unit quaternion (w, x, y, z) of the rotation.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = nalgebra::UnitQuaternion::from_matrix(&self.rotation);
        [q.w, q.i, q.j, q.k]
    }

    pub fn from_quaternion(q: [f64; 4], t: [f64; 3]) -> RigidPose {
        let quat = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[0], q[1], q[2], q[3],
        ));
        RigidPose {
            rotation: *quat.to_rotation_matrix().matrix(),
            translation: Vec3::new(t[0], t[1], t[2]),
        }
    }
}

/// Pinhole camera in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(SceneError::BadIntrinsics(format!(
                "focal lengths must be positive, got fx={}, fy={}",
                self.fx, self.fy
            )));
        }
        if self.cx < 0.0
            || self.cx >= self.width as f64
            || self.cy < 0.0
            || self.cy >= self.height as f64
        {
            return Err(SceneError::BadIntrinsics(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    /// Pinhole projection `u = fx X/Z + cx, v = fy Y/Z + cy`.
    pub fn project(&self, p_cam: &Vec3) -> Result<[f64; 2]> {
        if p_cam.z <= 0.0 {
            return Err(SceneError::BehindCamera { z: p_cam.z });
        }
        Ok([
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ])
    }

    /// Intrinsics expressed in the local frame of a crop window whose
    /// top-left pixel is (left, top).
    pub fn for_window(&self, left: i64, top: i64, window: usize) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx - left as f64,
            cy: self.cy - top as f64,
            width: window,
            height: window,
        }
    }
}

/// Depth image in meters, row-major; 0 means no return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn zeros(width: usize, height: usize) -> DepthImage {
        DepthImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }
}

/// Three-channel color image with values in [0, 1], planar layout
/// (all of channel 0, then channel 1, then channel 2; each row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoColorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl PseudoColorImage {
    pub fn zeros(width: usize, height: usize) -> PseudoColorImage {
        PseudoColorImage {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[c * self.width * self.height + y * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[c * self.width * self.height + y * self.width + x] = v;
    }
}

/// Top-left corner of the crop window centered on the projected object
/// origin (rounded to whole pixels).
pub fn window_origin(
    pose: &RigidPose,
    intr: &CameraIntrinsics,
    window: usize,
) -> Result<(i64, i64)> {
    let center = intr.project(&pose.translation)?;
    let half = (window / 2) as i64;
    Ok((
        center[0].round() as i64 - half,
        center[1].round() as i64 - half,
    ))
}

/// Pinhole projections of the 8 canonical box corners, window-local,
/// concatenated (u, v) pairs in canonical corner order.
pub fn project_corners(
    model: &ObjectModel,
    pose: &RigidPose,
    intr: &CameraIntrinsics,
    window: usize,
) -> Result<Vec<f64>> {
    let (left, top) = window_origin(pose, intr, window)?;
    let mut out = Vec::with_capacity(16);
    for corner in &model.corners {
        let cam = pose.transform(corner);
        let uv = intr.project(&cam)?;
        out.push(uv[0] - left as f64);
        out.push(uv[1] - top as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_on_axis_point() {
        let intr = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
        };
        let uv = intr.project(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(uv, [16.0, 16.0]);

        let uv = intr.project(&Vec3::new(0.1, 0.0, 1.0)).unwrap();
        assert_eq!(uv, [26.0, 16.0]);

        assert!(intr.project(&Vec3::new(0.0, 0.0, -0.5)).is_err());
    }

    #[test]
    fn corner_labels_are_window_local_and_16_long() {
        let intr = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
        };
        let model = ObjectModel::cuboid(Vec3::new(0.1, 0.08, 0.06));
        let pose = RigidPose::identity_at(1.0);
        let label = project_corners(&model, &pose, &intr, 32).unwrap();
        assert_eq!(label.len(), 16);
        // Window is centered on the projected center (16, 16), so origin is 0
        // and window-local equals global here.
        let first_cam = pose.transform(&model.corners[0]);
        let uv = intr.project(&first_cam).unwrap();
        assert_eq!(&label[0..2], &uv);
    }

    #[test]
    fn corner_behind_camera_is_rejected() {
        let intr = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
        };
        let model = ObjectModel::cuboid(Vec3::new(0.1, 0.08, 0.06));
        let pose = RigidPose::identity_at(0.01); // near face behind the camera
        assert!(matches!(
            project_corners(&model, &pose, &intr, 32),
            Err(SceneError::BehindCamera { .. })
        ));
    }

    #[test]
    fn quaternion_roundtrip() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pose = sample_pose(&mut rng, &PoseRanges::default());
        let q = pose.to_quaternion();
        let t = [pose.translation.x, pose.translation.y, pose.translation.z];
        let back = RigidPose::from_quaternion(q, t);
        assert!((back.rotation - pose.rotation).norm() < 1e-12);
    }
}
