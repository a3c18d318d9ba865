//! Articulated toy hand: a palm root with two 3-segment digit chains.
//! Labels are the camera-frame, root-relative 3D positions of the six digit
//! joints (meters); geometry is rendered as capsules.

use nalgebra::Rotation3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::{box_corners, Capsule, Geometry};
use super::{ObjectModel, RigidPose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandSpec {
    pub segment_len: f64,
    pub radius: f64,
    /// Flexion range per segment, degrees.
    pub flex_deg: (f64, f64),
    /// Base abduction range per digit, degrees.
    pub abduct_deg: (f64, f64),
}

impl Default for HandSpec {
    fn default() -> Self {
        HandSpec {
            segment_len: 0.035,
            radius: 0.012,
            flex_deg: (10.0, 60.0),
            abduct_deg: (-15.0, 15.0),
        }
    }
}

/// One articulated configuration: capsule geometry plus the object-frame
/// joint positions in a fixed order (digit 0 joints 1-3, digit 1 joints 1-3).
#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub model: ObjectModel,
    pub joints_object: Vec<Vec3>,
}

/// Number of labeled joints (two digits, three segments each).
pub const HAND_JOINTS: usize = 6;

/// Draw random digit articulation and build the corresponding model.
/// Deterministic in the generator state.
pub fn sample_hand_articulation(rng: &mut ChaCha8Rng, spec: &HandSpec) -> HandModel {
    let mut joints = Vec::with_capacity(HAND_JOINTS);
    let mut segments = Vec::new();

    // Palm: a short capsule across the digit bases.
    let base0 = Vec3::new(0.0, -0.02, 0.0);
    let base1 = Vec3::new(0.0, 0.02, 0.0);
    segments.push(Capsule {
        p0: base0,
        p1: base1,
        radius: spec.radius * 1.2,
    });

    for base in [base0, base1] {
        let abduct = rng
            .random_range(spec.abduct_deg.0..=spec.abduct_deg.1)
            .to_radians();
        // Digits extend along +x, bending about y, splayed about z.
        let splay = Rotation3::from_axis_angle(&Vec3::z_axis(), abduct);
        let mut dir = splay * Vec3::x();
        let mut prev = base;
        for _ in 0..3 {
            let flex = rng
                .random_range(spec.flex_deg.0..=spec.flex_deg.1)
                .to_radians();
            dir = Rotation3::from_axis_angle(&Vec3::y_axis(), flex) * dir;
            let next = prev + dir * spec.segment_len;
            segments.push(Capsule {
                p0: prev,
                p1: next,
                radius: spec.radius,
            });
            joints.push(next);
            prev = next;
        }
    }

    // Bounding box of the articulated geometry, inflated by the radius.
    let mut lo = Vec3::new(f64::MAX, f64::MAX, f64::MAX);
    let mut hi = Vec3::new(f64::MIN, f64::MIN, f64::MIN);
    for s in &segments {
        for p in [s.p0, s.p1] {
            lo = lo.inf(&(p - Vec3::repeat(s.radius)));
            hi = hi.sup(&(p + Vec3::repeat(s.radius)));
        }
    }
    let extents = hi - lo;
    let mut diameter: f64 = 0.0;
    for a in &joints {
        for b in &joints {
            diameter = diameter.max((a - b).norm() + 2.0 * spec.radius);
        }
    }

    HandModel {
        model: ObjectModel {
            geometry: Geometry::Capsules { segments },
            corners: box_corners(extents),
            diameter,
            surface_points: vec![],
        },
        joints_object: joints,
    }
}

/// Hand pose label: root-relative camera-frame joint positions, flattened
/// (x, y, z) per joint.
pub fn hand_label(hand: &HandModel, pose: &RigidPose) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * hand.joints_object.len());
    for j in &hand.joints_object {
        let cam_rel = pose.rotation * j;
        out.push(cam_rel.x);
        out.push(cam_rel.y);
        out.push(cam_rel.z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn articulation_has_six_joints_and_connected_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hand = sample_hand_articulation(&mut rng, &HandSpec::default());
        assert_eq!(hand.joints_object.len(), HAND_JOINTS);
        let Geometry::Capsules { segments } = &hand.model.geometry else {
            panic!("hand must be capsules");
        };
        assert_eq!(segments.len(), 7); // palm + 2 digits x 3 segments
        // Consecutive digit segments share endpoints.
        for d in 0..2 {
            for s in 0..2 {
                let a = &segments[1 + d * 3 + s];
                let b = &segments[1 + d * 3 + s + 1];
                assert!((a.p1 - b.p0).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_spacing_equals_segment_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = HandSpec::default();
        let hand = sample_hand_articulation(&mut rng, &spec);
        for d in 0..2 {
            for s in 0..2 {
                let a = hand.joints_object[d * 3 + s];
                let b = hand.joints_object[d * 3 + s + 1];
                assert!(((a - b).norm() - spec.segment_len).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn label_is_rotation_of_object_joints() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hand = sample_hand_articulation(&mut rng, &HandSpec::default());
        let pose = super::super::sample_pose(&mut rng, &super::super::PoseRanges::default());
        let label = hand_label(&hand, &pose);
        assert_eq!(label.len(), 18);
        // Rotations preserve joint-to-joint distances.
        let j0 = Vec3::new(label[0], label[1], label[2]);
        let j1 = Vec3::new(label[3], label[4], label[5]);
        let want = (hand.joints_object[0] - hand.joints_object[1]).norm();
        assert!(((j0 - j1).norm() - want).abs() < 1e-12);
    }
}
