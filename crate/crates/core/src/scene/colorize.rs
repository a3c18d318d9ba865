//! Pseudo-color synthesis for the paired stream: Lambertian shading of
//! depth-derived normals under a random light, a random striped albedo on the
//! object, and depth-banded clutter colors on the background. Deliberately
//! not invertible to depth by any per-pixel linear map.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::render::ray_cast_object;
use super::{CameraIntrinsics, DepthImage, ObjectModel, PseudoColorImage, RigidPose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleSpec {
    /// Ambient light fraction.
    pub ambient: f64,
    /// Depth of the albedo stripe modulation on the object, in [0, 1).
    pub stripe_amp: f64,
    /// Stripe spatial frequency range, cycles per meter.
    pub stripe_freq: (f64, f64),
    /// Per-channel base albedo range for the object.
    pub albedo: (f64, f64),
    /// Minimum z-component of the random light direction.
    pub light_min_z: f64,
}

impl Default for StyleSpec {
    fn default() -> Self {
        StyleSpec {
            ambient: 0.25,
            stripe_amp: 0.4,
            stripe_freq: (30.0, 90.0),
            albedo: (0.35, 1.0),
            light_min_z: 0.4,
        }
    }
}

fn hash01(mut x: u64) -> f64 {
    // splitmix64 finalizer; good enough for clutter colors.
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^= x >> 31;
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Surface normal from central depth differences, camera-facing; flat where
/// neighbors are missing. fx/fy convert pixel gradients to metric slopes.
fn normal_at(depth: &DepthImage, intr: &CameraIntrinsics, x: usize, y: usize) -> Vec3 {
    let d = depth.at(x, y);
    if d <= 0.0 {
        return Vec3::new(0.0, 0.0, 1.0);
    }
    let (w, h) = (depth.width, depth.height);
    let sample = |xx: i64, yy: i64| -> Option<f64> {
        if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
            return None;
        }
        let v = depth.at(xx as usize, yy as usize);
        (v > 0.0).then_some(v)
    };
    let gx = match (sample(x as i64 + 1, y as i64), sample(x as i64 - 1, y as i64)) {
        (Some(a), Some(b)) => (a - b) / 2.0,
        _ => 0.0,
    };
    let gy = match (sample(x as i64, y as i64 + 1), sample(x as i64, y as i64 - 1)) {
        (Some(a), Some(b)) => (a - b) / 2.0,
        _ => 0.0,
    };
    let n = Vec3::new(-gx * intr.fx / d, -gy * intr.fy / d, 1.0);
    n.normalize()
}

/// Shade the composited scene into a pseudo-color image. The object mask and
/// object-frame coordinates are recovered by casting the object's rays again,
/// so the function needs only the clean scene depth plus (model, pose).
pub fn colorize(
    scene: &DepthImage,
    model: &ObjectModel,
    pose: &RigidPose,
    intr: &CameraIntrinsics,
    rng: &mut ChaCha8Rng,
    style: &StyleSpec,
) -> PseudoColorImage {
    // Draw all style randomness up front, in a fixed order.
    let light_az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let light_z: f64 = rng.random_range(style.light_min_z..1.0);
    let lr = (1.0 - light_z * light_z).sqrt();
    let light = Vec3::new(lr * light_az.cos(), lr * light_az.sin(), light_z);
    let base: [f64; 3] = [
        rng.random_range(style.albedo.0..=style.albedo.1),
        rng.random_range(style.albedo.0..=style.albedo.1),
        rng.random_range(style.albedo.0..=style.albedo.1),
    ];
    let stripe_dir = {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() < 1e-9 {
            Vec3::x()
        } else {
            v.normalize()
        }
    };
    let freq: f64 = rng.random_range(style.stripe_freq.0..=style.stripe_freq.1);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let clutter_salt: u64 = rng.random();

    let mut img = PseudoColorImage::zeros(scene.width, scene.height);
    for y in 0..scene.height {
        for x in 0..scene.width {
            let d = scene.at(x, y);
            let n = normal_at(scene, intr, x, y);
            let lambert = n.dot(&light).max(0.0);
            let shade = style.ambient + (1.0 - style.ambient) * lambert;

            let object_hit = ray_cast_object(model, pose, intr, x, y)
                .filter(|t| (t - d).abs() < 1e-6 || d == 0.0);
            let albedo: [f64; 3] = if let Some(t) = object_hit {
                // Striped texture in object-frame coordinates.
                let dir = super::render::pixel_ray(intr, x, y);
                let p_cam = dir * t;
                let p_obj = pose.inverse_transform(&p_cam);
                let s = 1.0
                    - style.stripe_amp * (0.5 + 0.5 * (freq * p_obj.dot(&stripe_dir) + phase).sin());
                [base[0] * s, base[1] * s, base[2] * s]
            } else if d > 0.0 {
                // Clutter: one color per depth band, stable per sample.
                let band = (d / 0.15).floor() as i64 as u64;
                [
                    0.15 + 0.7 * hash01(band.wrapping_mul(3).wrapping_add(clutter_salt)),
                    0.15 + 0.7 * hash01(band.wrapping_mul(5).wrapping_add(clutter_salt)),
                    0.15 + 0.7 * hash01(band.wrapping_mul(7).wrapping_add(clutter_salt)),
                ]
            } else {
                [0.08, 0.08, 0.08]
            };

            for c in 0..3 {
                img.set(c, x, y, (albedo[c] * shade).clamp(0.0, 1.0));
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn test_intr() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 140.0,
            fy: 140.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        }
    }

    #[test]
    fn flat_wall_shades_constant_per_light_direction() {
        // Constant depth, object far out of view, stripes irrelevant.
        let mut wall = DepthImage::zeros(64, 64);
        wall.data.iter_mut().for_each(|v| *v = 1.5);
        let model = ObjectModel::default_cuboid();
        let pose = RigidPose {
            rotation: super::super::Mat3::identity(),
            translation: Vec3::new(10.0, 10.0, 1.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = colorize(&wall, &model, &pose, &test_intr(), &mut rng, &StyleSpec::default());
        for c in 0..3 {
            let v0 = img.at(c, 1, 1);
            for y in 1..63 {
                for x in 1..63 {
                    assert!(
                        (img.at(c, x, y) - v0).abs() < 1e-12,
                        "constant-normal wall must shade uniformly"
                    );
                }
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_images() {
        let model = ObjectModel::default_cuboid();
        let pose = RigidPose::identity_at(0.9);
        let intr = test_intr();
        let depth = super::super::render_depth(&model, &pose, &intr).unwrap();
        let a = colorize(
            &depth,
            &model,
            &pose,
            &intr,
            &mut ChaCha8Rng::seed_from_u64(42),
            &StyleSpec::default(),
        );
        let b = colorize(
            &depth,
            &model,
            &pose,
            &intr,
            &mut ChaCha8Rng::seed_from_u64(42),
            &StyleSpec::default(),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn object_pixels_carry_texture_variation() {
        let model = ObjectModel::default_cuboid();
        let pose = RigidPose::identity_at(0.8);
        let intr = test_intr();
        let depth = super::super::render_depth(&model, &pose, &intr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = colorize(&depth, &model, &pose, &intr, &mut rng, &StyleSpec::default());
        // Collect red-channel values over interior object pixels.
        let mut vals = Vec::new();
        for y in 20..44 {
            for x in 20..44 {
                if depth.at(x, y) > 0.0 {
                    vals.push(img.at(0, x, y));
                }
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(var.sqrt() > 0.01, "object should not be flat-shaded");
    }
}
