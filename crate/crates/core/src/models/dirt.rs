//! Soiling occlusions: opaque-ish blobs without refraction.
//!
//! Blobs are placed like raindrops but have no displacement sampling. The
//! blob color is a fixed soil tone whose brightness grows linearly with the
//! normalized radial distance from the image center (factor 0.3 at the
//! center, 1.0 at the corners). The blurred coverage is scaled by the
//! maximum-opacity parameter, so `alpha` is a hard ceiling on the overlay
//! alpha and rescaling it never changes blob geometry.

use super::{blur_layer, place_center, BlobOutline, FdStep, Overlay, ParamDesc};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Image, Plane};
use crate::rng::RngStream;

const SOIL_TONE: [f64; 3] = [0.42, 0.33, 0.24];

/// Dirt model parameters. `sigma` and `alpha` are differentiable; blob
/// frequency and size are the non-differentiable block.
#[derive(Debug, Clone)]
pub struct DirtParams {
    pub sigma: f64,
    /// Maximum opacity in [0, 1].
    pub alpha: f64,
    /// Expected blobs per megapixel.
    pub blob_frequency: f64,
    /// Mean blob radius in pixels.
    pub blob_size: f64,
    pub seed: u64,
}

impl DirtParams {
    /// Benchmark defaults: blobs cover roughly half of the frame.
    pub fn bench_default(seed: u64) -> Self {
        DirtParams {
            sigma: 2.0,
            alpha: 0.8,
            blob_frequency: 2400.0,
            blob_size: 10.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::InvalidParam(format!(
                "dirt sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParam(format!(
                "dirt alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.blob_frequency >= 0.0) {
            return Err(Error::InvalidParam("blob frequency must be >= 0".into()));
        }
        if !(self.blob_size > 0.0) {
            return Err(Error::InvalidParam("blob size must be > 0".into()));
        }
        Ok(())
    }

    pub fn diff_desc(&self) -> Vec<ParamDesc> {
        vec![
            ParamDesc {
                name: "sigma",
                lo: 0.0,
                hi: 12.0,
                fd_step: FdStep::Abs(0.05),
            },
            ParamDesc {
                name: "alpha",
                lo: 0.0,
                hi: 1.0,
                fd_step: FdStep::Abs(0.005),
            },
        ]
    }

    pub fn nd_desc(&self) -> Vec<ParamDesc> {
        vec![
            ParamDesc {
                name: "blob_frequency",
                lo: 0.0,
                hi: 400.0,
                fd_step: FdStep::Abs(5.0),
            },
            ParamDesc {
                name: "blob_size",
                lo: 2.0,
                hi: 30.0,
                fd_step: FdStep::Abs(0.25),
            },
        ]
    }
}

/// Soil color at a pixel: tone scaled by 0.3 at the image center rising
/// linearly to 1.0 at the far corner.
fn soil_color(x: usize, y: usize, width: usize, height: usize) -> [f64; 3] {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let dist = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
    let max_dist = (cx * cx + cy * cy).sqrt().max(1.0);
    let factor = 0.3 + 0.7 * (dist / max_dist).min(1.0);
    [
        SOIL_TONE[0] * factor,
        SOIL_TONE[1] * factor,
        SOIL_TONE[2] * factor,
    ]
}

/// Render the dirt layer over a scene.
pub fn render_dirt(
    scene: &Image,
    params: &DirtParams,
    rng: &mut RngStream,
    mask: Option<&BinaryMask>,
) -> Result<Overlay> {
    params.validate()?;
    let (w, h) = (scene.width(), scene.height());
    if w == 0 || h == 0 {
        return Err(Error::InvalidParam("scene must be non-empty".into()));
    }
    if let Some(m) = mask {
        if m.width() != w || m.height() != h {
            return Err(Error::dims(w, h, m.width(), m.height()));
        }
    }

    let megapixels = (w * h) as f64 / 1e6;
    let count = rng.poisson(params.blob_frequency * megapixels);
    let mut color = Image::new(w, h);
    let mut coverage = Plane::new(w, h, 0.0);
    for _ in 0..count {
        let Some((cx, cy)) = place_center(rng, w, h, mask) else {
            continue;
        };
        let outline = BlobOutline::draw(rng, params.blob_size, 0.0);
        let bound = outline.max_radius().ceil() as i64;
        let (cx, cy) = (cx as i64, cy as i64);
        for y in (cy - bound).max(0)..=(cy + bound).min(h as i64 - 1) {
            for x in (cx - bound).max(0)..=(cx + bound).min(w as i64 - 1) {
                let dx = (x - cx) as f64;
                let dy = (y - cy) as f64;
                let phi = dy.atan2(dx);
                if dx * dx + dy * dy > outline.radius(phi).powi(2) {
                    continue;
                }
                let (x, y) = (x as usize, y as usize);
                color.set_pixel(x, y, soil_color(x, y, w, h));
                coverage.set(x, y, 1.0);
            }
        }
    }

    let (color, mut alpha) = blur_layer(&color, &coverage, params.sigma)?;
    // Opacity ceiling applies after blur so geometry is alpha-independent.
    for a in alpha.data_mut() {
        *a *= params.alpha;
    }
    Ok(Overlay { color, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::compose;

    fn scene(w: usize, h: usize) -> Image {
        Image::constant(w, h, [0.5, 0.6, 0.7])
    }

    #[test]
    fn zero_alpha_is_fully_transparent() {
        let s = scene(48, 48);
        let mut params = DirtParams::bench_default(2);
        params.alpha = 0.0;
        let overlay = render_dirt(&s, &params, &mut RngStream::new(2), None).unwrap();
        assert!(overlay.alpha.data().iter().all(|&a| a == 0.0));
        assert_eq!(compose(&s, &overlay).unwrap(), s);
    }

    #[test]
    fn opaque_blob_reaches_ceiling() {
        let s = scene(64, 64);
        let mut params = DirtParams::bench_default(11);
        params.alpha = 1.0;
        params.sigma = 0.0;
        params.blob_frequency = 400.0;
        let overlay = render_dirt(&s, &params, &mut RngStream::new(11), None).unwrap();
        let ones = overlay.alpha.data().iter().filter(|&&a| a == 1.0).count();
        assert!(ones > 0, "expected opaque blob interiors");
        assert!(overlay.alpha.data().iter().all(|&a| a == 0.0 || a == 1.0));
    }

    #[test]
    fn alpha_rasters_proportional_across_alpha() {
        let s = scene(72, 72);
        let mut lo = DirtParams::bench_default(6);
        lo.alpha = 0.4;
        let mut hi = DirtParams::bench_default(6);
        hi.alpha = 1.0;
        let ov_lo = render_dirt(&s, &lo, &mut RngStream::new(6), None).unwrap();
        let ov_hi = render_dirt(&s, &hi, &mut RngStream::new(6), None).unwrap();
        // Identical geometry: support sets match exactly.
        for (a, b) in ov_lo.alpha.data().iter().zip(ov_hi.alpha.data()) {
            assert_eq!(*a == 0.0, *b == 0.0);
            assert!((a - 0.4 * b).abs() < 1e-12, "ratio violated: {a} vs {b}");
        }
    }

    #[test]
    fn alpha_never_exceeds_ceiling() {
        let s = scene(64, 64);
        for seed in 0..5 {
            let mut params = DirtParams::bench_default(seed);
            params.alpha = 0.63;
            let overlay = render_dirt(&s, &params, &mut RngStream::new(seed), None).unwrap();
            assert!(overlay.alpha.data().iter().all(|&a| a <= 0.63 + 1e-12));
        }
    }

    #[test]
    fn soil_brightens_toward_edges() {
        let center = soil_color(32, 32, 65, 65);
        let corner = soil_color(0, 0, 65, 65);
        assert!(corner[0] > center[0]);
        let ratio = corner[0] / center[0];
        assert!((ratio - 1.0 / 0.3).abs() < 1e-9, "corner/center {ratio}");
    }

    #[test]
    fn deterministic_given_seed() {
        let s = scene(48, 48);
        let params = DirtParams::bench_default(8);
        let a = render_dirt(&s, &params, &mut RngStream::new(8), None).unwrap();
        let b = render_dirt(&s, &params, &mut RngStream::new(8), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_alpha_rejected() {
        let mut p = DirtParams::bench_default(1);
        p.alpha = 1.5;
        assert!(p.validate().is_err());
    }
}
