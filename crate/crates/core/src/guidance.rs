//! Guidance map and injection mask.
//!
//! Where the critic reacts strongly to a source image, the local style is
//! far from the target set; injecting occluders there would fight the
//! learning signal. The guidance map averages smoothed input-gradient
//! saliency over the source dataset and normalizes it to [0, 1]; the
//! injection mask admits a pixel only where the map falls below a threshold
//! gamma.

use rayon::prelude::*;

use crate::blur::gaussian_blur_plane;
use crate::critic::RealismCritic;
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Image, Plane};

/// Pre-normalization maxima below this are treated as identically zero.
const ZERO_MAP_EPS: f64 = 1e-12;

/// Dataset-averaged saliency, min-max normalized to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMap {
    plane: Plane,
}

impl GuidanceMap {
    /// Wrap an existing raster; values must already lie in [0, 1].
    pub fn from_plane(plane: Plane) -> Result<Self> {
        if plane.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParam(
                "guidance values must lie in [0, 1]".into(),
            ));
        }
        Ok(GuidanceMap { plane })
    }

    pub fn width(&self) -> usize {
        self.plane.width()
    }

    pub fn height(&self) -> usize {
        self.plane.height()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.plane.get(x, y)
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn save_pgm(&self, path: &std::path::Path) -> Result<()> {
        self.plane.save_pgm16_unit(path)
    }
}

/// Absolute critic input gradient summed over channels, smoothed by a
/// Gaussian whose sigma equals the critic patch size.
fn saliency<C: RealismCritic + ?Sized>(critic: &C, img: &Image) -> Result<Plane> {
    let grad = critic.input_gradient(img)?;
    let mut map = Plane::new(img.width(), img.height(), 0.0);
    for (i, v) in map.data_mut().iter_mut().enumerate() {
        *v = grad[i * 3].abs() + grad[i * 3 + 1].abs() + grad[i * 3 + 2].abs();
    }
    gaussian_blur_plane(&map, critic.patch_size() as f64)
}

/// Average per-image saliency over the source dataset and min-max normalize.
///
/// A map whose pre-normalization maximum is below 1e-12 is defined as
/// identically zero; a constant non-zero map normalizes to all ones.
pub fn compute_guidance<C: RealismCritic + Sync + ?Sized>(
    critic: &C,
    sources: &[Image],
) -> Result<GuidanceMap> {
    let first = sources
        .first()
        .ok_or_else(|| Error::InvalidParam("empty source list".into()))?;
    let (w, h) = (first.width(), first.height());
    for img in sources {
        if !img.same_dims(first) {
            return Err(Error::dims(w, h, img.width(), img.height()));
        }
    }

    let maps: Vec<Plane> = sources
        .par_iter()
        .map(|img| saliency(critic, img))
        .collect::<Result<_>>()?;

    // Deterministic reduction in list order.
    let mut mean = Plane::new(w, h, 0.0);
    for map in &maps {
        for (acc, &v) in mean.data_mut().iter_mut().zip(map.data()) {
            *acc += v;
        }
    }
    let n = sources.len() as f64;
    for v in mean.data_mut() {
        *v /= n;
    }

    let max = mean.max();
    if max < ZERO_MAP_EPS {
        return Ok(GuidanceMap {
            plane: Plane::new(w, h, 0.0),
        });
    }
    let min = mean.min();
    let span = max - min;
    if span < ZERO_MAP_EPS {
        // Constant non-zero saliency: no pixel is safer than any other.
        return Ok(GuidanceMap {
            plane: Plane::new(w, h, 1.0),
        });
    }
    for v in mean.data_mut() {
        *v = ((*v - min) / span).clamp(0.0, 1.0);
    }
    Ok(GuidanceMap { plane: mean })
}

/// Threshold the guidance map: injection is allowed where `dg < gamma`.
pub fn injection_mask(dg: &GuidanceMap, gamma: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParam(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    let mut mask = BinaryMask::new(dg.width(), dg.height(), false);
    for y in 0..dg.height() {
        for x in 0..dg.width() {
            mask.set(x, y, dg.get(x, y) < gamma);
        }
    }
    Ok(mask)
}
