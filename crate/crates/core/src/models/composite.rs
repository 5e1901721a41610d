//! Thin-occluder composites: a known transparent overlay (watermark, fence
//! grid, ...) placed at a random translation. Transparency is assumed fully
//! known, so the model has no estimated parameters.

use std::sync::Arc;

use super::Overlay;
use crate::error::{Error, Result};
use crate::raster::{Image, Plane};
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct CompositeParams {
    pub overlay_image: Arc<Image>,
    /// Per-pixel opacity of the overlay, same dimensions as `overlay_image`.
    pub overlay_alpha: Arc<Plane>,
    pub seed: u64,
}

impl CompositeParams {
    pub fn new(overlay_image: Image, overlay_alpha: Plane, seed: u64) -> Result<Self> {
        if overlay_image.width() != overlay_alpha.width()
            || overlay_image.height() != overlay_alpha.height()
        {
            return Err(Error::dims(
                overlay_image.width(),
                overlay_image.height(),
                overlay_alpha.width(),
                overlay_alpha.height(),
            ));
        }
        let params = CompositeParams {
            overlay_image: Arc::new(overlay_image),
            overlay_alpha: Arc::new(overlay_alpha),
            seed,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .overlay_alpha
            .data()
            .iter()
            .any(|&a| !(0.0..=1.0).contains(&a))
        {
            return Err(Error::InvalidParam(
                "overlay alpha must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Place the overlay at a translation drawn uniformly from all valid
/// offsets. Fails if the overlay does not fit inside the scene.
pub fn render_composite(
    scene: &Image,
    params: &CompositeParams,
    rng: &mut RngStream,
) -> Result<Overlay> {
    params.validate()?;
    let (w, h) = (scene.width(), scene.height());
    let (ow, oh) = (params.overlay_image.width(), params.overlay_image.height());
    if ow > w || oh > h {
        return Err(Error::dims(w, h, ow, oh));
    }
    let dx = rng.uniform_usize(w - ow + 1);
    let dy = rng.uniform_usize(h - oh + 1);

    let mut color = Image::new(w, h);
    let mut alpha = Plane::new(w, h, 0.0);
    for y in 0..oh {
        for x in 0..ow {
            color.set_pixel(dx + x, dy + y, params.overlay_image.pixel(x, y));
            alpha.set(dx + x, dy + y, params.overlay_alpha.get(x, y));
        }
    }
    Ok(Overlay { color, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::compose;

    #[test]
    fn transparent_overlay_composes_to_identity() {
        let scene = Image::constant(20, 20, [0.4, 0.4, 0.4]);
        let params =
            CompositeParams::new(Image::constant(5, 5, [1.0, 0.0, 0.0]), Plane::new(5, 5, 0.0), 3)
                .unwrap();
        let overlay = render_composite(&scene, &params, &mut RngStream::new(3)).unwrap();
        assert_eq!(compose(&scene, &overlay).unwrap(), scene);
    }

    #[test]
    fn fixed_seed_fixed_translation() {
        let scene = Image::new(50, 40);
        let params =
            CompositeParams::new(Image::constant(7, 7, [1.0; 3]), Plane::new(7, 7, 1.0), 9)
                .unwrap();
        let a = render_composite(&scene, &params, &mut RngStream::new(9)).unwrap();
        let b = render_composite(&scene, &params, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn opaque_patch_support_count() {
        let scene = Image::new(100, 100);
        let params =
            CompositeParams::new(Image::constant(10, 10, [1.0; 3]), Plane::new(10, 10, 1.0), 1)
                .unwrap();
        let overlay = render_composite(&scene, &params, &mut RngStream::new(1)).unwrap();
        let support = overlay.alpha.data().iter().filter(|&&a| a == 1.0).count();
        assert_eq!(support, 100);
    }

    #[test]
    fn oversized_overlay_rejected() {
        let scene = Image::new(8, 8);
        let params =
            CompositeParams::new(Image::constant(9, 4, [1.0; 3]), Plane::new(9, 4, 1.0), 0)
                .unwrap();
        assert!(render_composite(&scene, &params, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn translation_always_within_bounds() {
        let scene = Image::new(30, 30);
        let params =
            CompositeParams::new(Image::constant(12, 8, [0.5; 3]), Plane::new(12, 8, 1.0), 0)
                .unwrap();
        for seed in 0..50 {
            let overlay =
                render_composite(&scene, &params, &mut RngStream::new(seed)).unwrap();
            let support = overlay.alpha.data().iter().filter(|&&a| a > 0.0).count();
            assert_eq!(support, 96, "seed {seed}: overlay clipped by border");
        }
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        let img = Image::constant(3, 3, [0.0; 3]);
        let alpha = Plane::new(3, 3, 1.5);
        assert!(CompositeParams::new(img, alpha, 0).is_err());
    }
}
