//! Median filtering and window crop + normalization.

use super::{DepthImage, PseudoColorImage};

/// 5x5 median filter; at image borders the neighborhood is clipped to the
/// image and the median of the remaining values is used (mean of the two
/// middle values when the count is even).
pub fn median_filter_5x5(img: &DepthImage) -> DepthImage {
    let (w, h) = (img.width, img.height);
    let mut out = DepthImage::zeros(w, h);
    let mut buf: Vec<f64> = Vec::with_capacity(25);
    for y in 0..h {
        for x in 0..w {
            buf.clear();
            for ny in y.saturating_sub(2)..=(y + 2).min(h - 1) {
                for nx in x.saturating_sub(2)..=(x + 2).min(w - 1) {
                    buf.push(img.at(nx, ny));
                }
            }
            buf.sort_unstable_by(|a, b| a.partial_cmp(b).expect("depth values are finite"));
            let n = buf.len();
            let med = if n % 2 == 1 {
                buf[n / 2]
            } else {
                (buf[n / 2 - 1] + buf[n / 2]) / 2.0
            };
            out.set(x, y, med);
        }
    }
    out
}

/// Crop a depth window with top-left (left, top) and map [0, depth_max] to
/// [-1, +1]. Pixels outside the image pad with the background value 0, which
/// lands at -1. Returns a row-major window * window buffer.
pub fn crop_depth_normalize(
    img: &DepthImage,
    left: i64,
    top: i64,
    window: usize,
    depth_max: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; window * window];
    for wy in 0..window {
        for wx in 0..window {
            let sx = left + wx as i64;
            let sy = top + wy as i64;
            let raw = if sx >= 0 && sy >= 0 && (sx as usize) < img.width && (sy as usize) < img.height
            {
                img.at(sx as usize, sy as usize)
            } else {
                0.0
            };
            out[wy * window + wx] = 2.0 * raw / depth_max - 1.0;
        }
    }
    out
}

/// Crop a color window and map [0, 1] to [-1, +1]. Out-of-image pixels pad
/// with 0 (so -1 after the map). Planar layout: all of channel 0, then 1,
/// then 2.
pub fn crop_color_normalize(
    img: &PseudoColorImage,
    left: i64,
    top: i64,
    window: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; 3 * window * window];
    for c in 0..3 {
        for wy in 0..window {
            for wx in 0..window {
                let sx = left + wx as i64;
                let sy = top + wy as i64;
                let raw = if sx >= 0
                    && sy >= 0
                    && (sx as usize) < img.width
                    && (sy as usize) < img.height
                {
                    img.at(c, sx as usize, sy as usize)
                } else {
                    0.0
                };
                out[c * window * window + wy * window + wx] = 2.0 * raw - 1.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_leaves_constant_images_unchanged() {
        let mut img = DepthImage::zeros(10, 10);
        img.data.iter_mut().for_each(|v| *v = 0.7);
        assert_eq!(median_filter_5x5(&img), img);
    }

    #[test]
    fn median_removes_a_single_spike() {
        let mut img = DepthImage::zeros(11, 11);
        img.data.iter_mut().for_each(|v| *v = 1.0);
        img.set(5, 5, 9.0);
        let out = median_filter_5x5(&img);
        assert_eq!(out.at(5, 5), 1.0);
        assert!(out.data.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn median_matches_sort_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (w, h) = (17, 13);
        let mut img = DepthImage::zeros(w, h);
        img.data
            .iter_mut()
            .for_each(|v| *v = rng.random_range(0.0..3.0));
        let out = median_filter_5x5(&img);

        // Per-pixel oracle: gather, sort, take the middle.
        for y in 0..h {
            for x in 0..w {
                let mut vals = Vec::new();
                for ny in y.saturating_sub(2)..=(y + 2).min(h - 1) {
                    for nx in x.saturating_sub(2)..=(x + 2).min(w - 1) {
                        vals.push(img.at(nx, ny));
                    }
                }
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = vals.len();
                let want = if n % 2 == 1 {
                    vals[n / 2]
                } else {
                    (vals[n / 2 - 1] + vals[n / 2]) / 2.0
                };
                assert_eq!(out.at(x, y), want, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn depth_normalization_spans_full_range() {
        let mut img = DepthImage::zeros(8, 8);
        img.set(0, 0, 0.0);
        img.set(1, 0, 3.0);
        let out = crop_depth_normalize(&img, 0, 0, 8, 3.0);
        let min = out.iter().cloned().fold(f64::MAX, f64::min);
        let max = out.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(min, -1.0);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn background_maps_to_minus_one() {
        let img = DepthImage::zeros(8, 8);
        let out = crop_depth_normalize(&img, 0, 0, 8, 3.0);
        assert!(out.iter().all(|v| *v == -1.0));
    }

    #[test]
    fn corner_crop_pads_deterministically() {
        let mut img = DepthImage::zeros(8, 8);
        img.data.iter_mut().for_each(|v| *v = 1.5);
        // Crop hanging off the top-left corner: pad region is background.
        let out = crop_depth_normalize(&img, -4, -4, 8, 3.0);
        let again = crop_depth_normalize(&img, -4, -4, 8, 3.0);
        assert_eq!(out, again);
        assert_eq!(out[0], -1.0, "padded pixel is background");
        assert_eq!(out[4 * 8 + 4], 0.0, "1.5 m maps to 0 under [0,3] -> [-1,1]");
    }

    #[test]
    fn color_crop_normalizes_and_pads() {
        let mut img = PseudoColorImage::zeros(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                img.set(0, x, y, 1.0);
                img.set(1, x, y, 0.5);
            }
        }
        let out = crop_color_normalize(&img, 0, 0, 4);
        assert_eq!(out[0], 1.0);
        assert!((out[16] - 0.0).abs() < 1e-15);
        assert_eq!(out[32], -1.0);

        let shifted = crop_color_normalize(&img, 2, 0, 4);
        assert_eq!(shifted[3], -1.0, "out-of-image pixels pad to -1");
    }
}
