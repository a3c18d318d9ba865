//! Sensor-gap model for the "real" depth stream: additive noise, step
//! quantization, boundary erosion and a smooth radial distortion of values,
//! applied in that order. Zeroed parameters make each stage a no-op.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::DepthImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSpec {
    /// Stddev of additive Gaussian depth noise, meters.
    pub noise_sigma: f64,
    /// Quantization step, meters.
    pub quant_step: f64,
    /// Depth discontinuity (meters) above which a 3x3 neighborhood counts as
    /// a boundary.
    pub edge_thresh: f64,
    /// Probability that a boundary pixel is dropped to no-return.
    pub erode_prob: f64,
    /// Relative depth inflation at the image corners (quadratic in radius).
    pub radial_gain: f64,
}

impl Default for GapSpec {
    fn default() -> Self {
        GapSpec {
            noise_sigma: 0.005,
            quant_step: 0.002,
            edge_thresh: 0.05,
            erode_prob: 0.5,
            radial_gain: 0.02,
        }
    }
}

impl GapSpec {
    /// All stages disabled; `sensor_degrade` becomes the identity.
    pub fn zero() -> GapSpec {
        GapSpec {
            noise_sigma: 0.0,
            quant_step: 0.0,
            edge_thresh: 0.0,
            erode_prob: 0.0,
            radial_gain: 0.0,
        }
    }
}

/// Degrade a clean depth image into a "real sensor" one. Pixels with no
/// return (0) stay at 0; erosion can only add new no-return pixels.
pub fn sensor_degrade(clean: &DepthImage, rng: &mut ChaCha8Rng, gap: &GapSpec) -> DepthImage {
    let (w, h) = (clean.width, clean.height);
    let mut img = clean.clone();

    if gap.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, gap.noise_sigma).expect("sigma checked positive");
        for v in img.data.iter_mut() {
            if *v > 0.0 {
                *v += normal.sample(rng);
                if *v <= 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    if gap.quant_step > 0.0 {
        for v in img.data.iter_mut() {
            if *v > 0.0 {
                *v = (*v / gap.quant_step).round() * gap.quant_step;
            }
        }
    }

    if gap.edge_thresh > 0.0 && gap.erode_prob > 0.0 {
        // Decide from a snapshot so erosion does not cascade.
        let snap = img.clone();
        for y in 0..h {
            for x in 0..w {
                if snap.at(x, y) == 0.0 {
                    continue;
                }
                let mut lo = f64::MAX;
                let mut hi = f64::MIN;
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let d = snap.at(nx, ny);
                        lo = lo.min(d);
                        hi = hi.max(d);
                    }
                }
                if hi - lo > gap.edge_thresh && rng.random_range(0.0..1.0) < gap.erode_prob {
                    img.set(x, y, 0.0);
                }
            }
        }
    }

    if gap.radial_gain != 0.0 {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let r_max2 = cx * cx + cy * cy;
        for y in 0..h {
            for x in 0..w {
                let v = img.at(x, y);
                if v > 0.0 {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    let r2 = (dx * dx + dy * dy) / r_max2;
                    img.set(x, y, v * (1.0 + gap.radial_gain * r2));
                }
            }
        }
    }

    img
}
