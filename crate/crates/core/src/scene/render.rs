//! Depth rendering by per-pixel ray casting, plus synthetic background
//! clutter. Depth values are camera-frame z in meters; 0 means no return.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::{Capsule, Geometry};
use super::{CameraIntrinsics, DepthImage, ObjectModel, Result, RigidPose, SceneError, Vec3};

/// Ray through the center of pixel (x, y): origin at the camera, direction
/// with dz = 1, so the ray parameter equals camera-frame depth.
pub(super) fn pixel_ray(intr: &CameraIntrinsics, x: usize, y: usize) -> Vec3 {
    Vec3::new(
        (x as f64 + 0.5 - intr.cx) / intr.fx,
        (y as f64 + 0.5 - intr.cy) / intr.fy,
        1.0,
    )
}

/// Moeller-Trumbore ray/triangle intersection; returns the ray parameter.
fn ray_triangle(orig: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = orig - tri[0];
    let u = s.dot(&p) * inv_det;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv_det;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&q) * inv_det;
    (t > 1e-9).then_some(t)
}

/// Ray/sphere intersection: smallest positive parameter.
fn ray_sphere(orig: &Vec3, dir: &Vec3, center: &Vec3, radius: f64) -> Option<f64> {
    let oc = orig - center;
    let a = dir.dot(dir);
    let b = 2.0 * oc.dot(dir);
    let c = oc.dot(&oc) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / (2.0 * a);
    let t1 = (-b + sq) / (2.0 * a);
    if t0 > 1e-9 {
        Some(t0)
    } else if t1 > 1e-9 {
        Some(t1)
    } else {
        None
    }
}

/// Ray/capsule intersection: cylinder body plus sphere caps.
fn ray_capsule(orig: &Vec3, dir: &Vec3, cap: &Capsule) -> Option<f64> {
    let axis = cap.p1 - cap.p0;
    let len2 = axis.dot(&axis);
    let mut best: Option<f64> = None;
    let mut consider = |t: Option<f64>| {
        if let Some(t) = t {
            if best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
    };

    if len2 > 1e-18 {
        // Infinite cylinder around the axis, then clamp to the segment.
        let d_perp = dir - axis * (dir.dot(&axis) / len2);
        let oc = orig - cap.p0;
        let oc_perp = oc - axis * (oc.dot(&axis) / len2);
        let a = d_perp.dot(&d_perp);
        if a > 1e-18 {
            let b = 2.0 * d_perp.dot(&oc_perp);
            let c = oc_perp.dot(&oc_perp) - cap.radius * cap.radius;
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    if t > 1e-9 {
                        let hit = orig + dir * t;
                        let s = (hit - cap.p0).dot(&axis) / len2;
                        if (0.0..=1.0).contains(&s) {
                            consider(Some(t));
                        }
                    }
                }
            }
        }
    }
    consider(ray_sphere(orig, dir, &cap.p0, cap.radius));
    consider(ray_sphere(orig, dir, &cap.p1, cap.radius));
    best
}

/// Depth of the object along the ray of pixel (x, y), if hit.
pub fn ray_cast_object(
    model: &ObjectModel,
    pose: &RigidPose,
    intr: &CameraIntrinsics,
    x: usize,
    y: usize,
) -> Option<f64> {
    let dir_cam = pixel_ray(intr, x, y);
    match &model.geometry {
        Geometry::Boxes { .. } => {
            // Intersect in the object frame; the ray parameter is unchanged
            // by the rigid transform, and depth = parameter since dz = 1.
            let rt = pose.rotation.transpose();
            let orig = rt * (-pose.translation);
            let dir = rt * dir_cam;
            let mut best: Option<f64> = None;
            for tri in model.box_triangles() {
                if let Some(t) = ray_triangle(&orig, &dir, &tri) {
                    if best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                }
            }
            best
        }
        Geometry::Capsules { segments } => {
            let orig = Vec3::zeros();
            let mut best: Option<f64> = None;
            for seg in segments {
                let cap = Capsule {
                    p0: pose.transform(&seg.p0),
                    p1: pose.transform(&seg.p1),
                    radius: seg.radius,
                };
                if let Some(t) = ray_capsule(&orig, &dir_cam, &cap) {
                    if best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                }
            }
            best
        }
    }
}

/// Render the object alone: per-pixel nearest intersection, background 0.
/// Errors when no pixel sees the object.
pub fn render_depth(
    model: &ObjectModel,
    pose: &RigidPose,
    intr: &CameraIntrinsics,
) -> Result<DepthImage> {
    pose.validate()?;
    intr.validate()?;
    let mut img = DepthImage::zeros(intr.width, intr.height);
    let mut any = false;
    for y in 0..intr.height {
        for x in 0..intr.width {
            if let Some(t) = ray_cast_object(model, pose, intr, x, y) {
                img.set(x, y, t);
                any = true;
            }
        }
    }
    if !any {
        return Err(SceneError::OutOfView);
    }
    Ok(img)
}

/// Background clutter: fronto-parallel boxes at random depths behind the
/// object's working range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutterSpec {
    pub min_boxes: usize,
    pub max_boxes: usize,
    /// Depth range the boxes are placed in, meters.
    pub depth: (f64, f64),
    /// Fraction of the image a box edge can span.
    pub size_frac: (f64, f64),
}

impl Default for ClutterSpec {
    fn default() -> Self {
        ClutterSpec {
            min_boxes: 4,
            max_boxes: 9,
            depth: (1.3, 2.8),
            size_frac: (0.15, 0.45),
        }
    }
}

/// Composite the object depth over random clutter boxes. Object pixels win
/// wherever both are present (clutter lives behind the working range);
/// uncovered pixels stay at 0 (no return).
pub fn compose_clutter(
    object: &DepthImage,
    rng: &mut ChaCha8Rng,
    spec: &ClutterSpec,
) -> DepthImage {
    let (w, h) = (object.width, object.height);
    let mut bg = DepthImage::zeros(w, h);
    let n_boxes = rng.random_range(spec.min_boxes..=spec.max_boxes);
    for _ in 0..n_boxes {
        let bw = (rng.random_range(spec.size_frac.0..=spec.size_frac.1) * w as f64) as usize;
        let bh = (rng.random_range(spec.size_frac.0..=spec.size_frac.1) * h as f64) as usize;
        let x0 = rng.random_range(0..w);
        let y0 = rng.random_range(0..h);
        let depth = rng.random_range(spec.depth.0..=spec.depth.1);
        for y in y0..(y0 + bh).min(h) {
            for x in x0..(x0 + bw).min(w) {
                let cur = bg.at(x, y);
                if cur == 0.0 || depth < cur {
                    bg.set(x, y, depth);
                }
            }
        }
    }
    let mut out = bg;
    for i in 0..object.data.len() {
        let obj = object.data[i];
        if obj > 0.0 && (out.data[i] == 0.0 || obj < out.data[i]) {
            out.data[i] = obj;
        }
    }
    out
}
