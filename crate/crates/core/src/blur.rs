//! Separable Gaussian blur, the defocus point-spread shared by the
//! occlusion models.
//!
//! The kernel is the discretized normal density truncated at radius
//! ceil(3*sigma) and renormalized. Borders use mirror padding that
//! duplicates the edge sample (... x1 x0 | x0 x1 ...); with a symmetric
//! normalized kernel this extension conserves total mass, so the image mean
//! is preserved exactly up to rounding.

use crate::error::{Error, Result};
use crate::raster::{Image, Plane, CHANNELS};

/// Discrete normalized Gaussian taps for radius ceil(3*sigma).
/// Returns a single centered tap when sigma is 0.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 * inv2s2).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

#[inline]
fn mirror(i: i64, n: i64) -> usize {
    let mut i = i;
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParam(format!(
            "blur sigma must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Blur a single-channel raster. sigma = 0 returns a copy.
pub fn gaussian_blur_plane(plane: &Plane, sigma: f64) -> Result<Plane> {
    check_sigma(sigma)?;
    if sigma == 0.0 {
        return Ok(plane.clone());
    }
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as i64;
    let (w, h) = (plane.width() as i64, plane.height() as i64);
    let src = plane.data();

    // Horizontal pass.
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        let row = (y * w) as usize;
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let sx = mirror(x + k as i64 - radius, w);
                acc += t * src[row + sx];
            }
            tmp[row + x as usize] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let sy = mirror(y + k as i64 - radius, h);
                acc += t * tmp[sy * w as usize + x as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    Ok(Plane::from_vec(plane.width(), plane.height(), out))
}

/// Blur an RGB image channel-wise. sigma = 0 returns a copy.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    check_sigma(sigma)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let mut out = Image::new(w, h);
    for c in 0..CHANNELS {
        let mut chan = Plane::new(w, h, 0.0);
        for y in 0..h {
            for x in 0..w {
                chan.set(x, y, img.get(x, y, c));
            }
        }
        let blurred = gaussian_blur_plane(&chan, sigma)?;
        for y in 0..h {
            for x in 0..w {
                out.set(x, y, c, blurred.get(x, y));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = RngStream::new(seed);
        let data = (0..w * h * CHANNELS).map(|_| rng.next_f64()).collect();
        Image::from_vec(w, h, data)
    }

    #[test]
    fn sigma_zero_is_identity() {
        let img = random_image(9, 7, 1);
        let out = gaussian_blur(&img, 0.0).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_image_unchanged() {
        let img = Image::constant(16, 16, [0.3, 0.5, 0.7]);
        let out = gaussian_blur(&img, 2.5).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn impulse_center_matches_kernel_weight() {
        // Oracle: evaluate the discretized normalized 2-D kernel at the origin.
        let sigma = 1.0;
        let taps = gaussian_kernel(sigma);
        let center_tap = taps[taps.len() / 2];
        let expected = center_tap * center_tap; // separable 2-D weight at (0,0)

        let mut img = Image::new(31, 31);
        img.set_pixel(15, 15, [1.0, 1.0, 1.0]);
        let out = gaussian_blur(&img, sigma).unwrap();
        for c in 0..3 {
            assert!((out.get(15, 15, c) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_preserved() {
        for seed in [3u64, 4, 5] {
            let img = random_image(24, 17, seed);
            for &sigma in &[0.5, 1.0, 3.0, 8.0] {
                let out = gaussian_blur(&img, sigma).unwrap();
                assert!(
                    (out.mean() - img.mean()).abs() < 1e-6,
                    "sigma {sigma}: mean drifted by {}",
                    (out.mean() - img.mean()).abs()
                );
            }
        }
    }

    #[test]
    fn variance_non_increasing_in_sigma() {
        let img = random_image(32, 32, 11);
        let grid = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];
        let vars: Vec<f64> = grid
            .iter()
            .map(|&s| gaussian_blur(&img, s).unwrap().variance())
            .collect();
        for pair in vars.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "variance increased along sigma grid: {vars:?}"
            );
        }
    }

    #[test]
    fn invalid_sigma_rejected() {
        let img = Image::new(4, 4);
        assert!(gaussian_blur(&img, -1.0).is_err());
        assert!(gaussian_blur(&img, f64::NAN).is_err());
        assert!(gaussian_blur(&img, f64::INFINITY).is_err());
    }

    #[test]
    fn kernel_radius_and_normalization() {
        let taps = gaussian_kernel(2.5);
        assert_eq!(taps.len(), 2 * 8 + 1); // ceil(7.5) = 8
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mirror_folds_small_domains() {
        // Radius larger than the axis keeps indices in range.
        let plane = Plane::from_vec(2, 1, vec![0.25, 0.75]);
        let out = gaussian_blur_plane(&plane, 4.0).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
        let mass_in = plane.data().iter().sum::<f64>();
        let mass_out = out.data().iter().sum::<f64>();
        assert!((mass_in - mass_out).abs() < 1e-12);
    }
}
