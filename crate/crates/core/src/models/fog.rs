//! Homogeneous fog from per-pixel scene depth.
//!
//! Transmittance follows Beer-Lambert: `tr = exp(-beta * d)`. The overlay
//! color is the constant atmospheric light and the opacity is `1 - tr`, so
//! infinite depth (sky) is fully fogged.

use super::{FdStep, Overlay, ParamDesc};
use crate::error::{Error, Result};
use crate::raster::{DepthMap, Image, Plane};

/// Default airlight, a slightly blue-tinted near-white.
pub const DEFAULT_ATMOSPHERIC_LIGHT: [f64; 3] = [0.9, 0.9, 0.92];

/// Fog parameters. `beta` is the optical extinction coefficient per depth
/// unit and is the only estimated parameter.
#[derive(Debug, Clone)]
pub struct FogParams {
    pub beta: f64,
    pub atmospheric_light: [f64; 3],
}

impl FogParams {
    pub fn new(beta: f64) -> Self {
        FogParams {
            beta,
            atmospheric_light: DEFAULT_ATMOSPHERIC_LIGHT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::InvalidParam(format!(
                "fog beta must be >= 0, got {}",
                self.beta
            )));
        }
        if self
            .atmospheric_light
            .iter()
            .any(|&c| !(0.0..=1.0).contains(&c))
        {
            return Err(Error::InvalidParam(
                "atmospheric light components must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn diff_desc(&self) -> Vec<ParamDesc> {
        vec![ParamDesc {
            name: "beta",
            lo: 0.2,
            hi: 80.0,
            fd_step: FdStep::Rel(0.005),
        }]
    }
}

/// Maximum visibility for an extinction coefficient, using the 5% contrast
/// threshold convention: `V_max = ln(20) / beta`.
pub fn max_visibility(beta: f64) -> f64 {
    20f64.ln() / beta
}

/// Extinction coefficient giving the requested maximum visibility.
pub fn beta_for_max_visibility(v_max: f64) -> f64 {
    20f64.ln() / v_max
}

/// Render the fog layer for a scene with matching depth.
pub fn render_fog(scene: &Image, depth: &DepthMap, params: &FogParams) -> Result<Overlay> {
    params.validate()?;
    let (w, h) = (scene.width(), scene.height());
    if depth.width() != w || depth.height() != h {
        return Err(Error::dims(w, h, depth.width(), depth.height()));
    }
    let mut alpha = Plane::new(w, h, 0.0);
    if params.beta > 0.0 {
        for (a, &d) in alpha.data_mut().iter_mut().zip(depth.plane().data()) {
            // exp(-inf) underflows to exactly 0, so sky gets alpha exactly 1.
            *a = 1.0 - (-params.beta * d).exp();
        }
    }
    Ok(Overlay {
        color: Image::constant(w, h, params.atmospheric_light),
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::compose;

    fn depth_map(w: usize, h: usize, value: f64) -> DepthMap {
        DepthMap::from_plane(Plane::new(w, h, value)).unwrap()
    }

    #[test]
    fn zero_beta_is_identity() {
        let scene = Image::constant(8, 8, [0.1, 0.5, 0.9]);
        let depth = depth_map(8, 8, 250.0);
        let overlay = render_fog(&scene, &depth, &FogParams::new(0.0)).unwrap();
        assert!(overlay.alpha.data().iter().all(|&a| a == 0.0));
        assert_eq!(compose(&scene, &overlay).unwrap(), scene);
    }

    #[test]
    fn infinite_depth_gives_pure_airlight() {
        let scene = Image::constant(4, 4, [0.0, 0.0, 0.0]);
        let depth = depth_map(4, 4, f64::INFINITY);
        let params = FogParams::new(0.01);
        let overlay = render_fog(&scene, &depth, &params).unwrap();
        assert!(overlay.alpha.data().iter().all(|&a| a == 1.0));
        let out = compose(&scene, &overlay).unwrap();
        assert_eq!(out.pixel(2, 2), params.atmospheric_light);
    }

    #[test]
    fn half_transmittance_at_known_depth() {
        // beta = ln(2)/100 at depth 100 gives alpha exactly 0.5.
        let scene = Image::constant(2, 2, [0.3, 0.3, 0.3]);
        let depth = depth_map(2, 2, 100.0);
        let overlay = render_fog(&scene, &depth, &FogParams::new(2f64.ln() / 100.0)).unwrap();
        for &a in overlay.alpha.data() {
            assert!((a - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_monotone_in_beta_and_depth() {
        let scene = Image::constant(3, 1, [0.2, 0.2, 0.2]);
        let mut prev = -1.0;
        for &beta in &[0.0, 0.01, 0.05, 0.2] {
            let depth = depth_map(3, 1, 60.0);
            let a = render_fog(&scene, &depth, &FogParams::new(beta)).unwrap();
            let v = a.alpha.get(0, 0);
            assert!(v >= prev);
            prev = v;
        }
        let mut prev = -1.0;
        for &d in &[1.0, 10.0, 100.0, 1000.0, f64::INFINITY] {
            let depth = depth_map(3, 1, d);
            let a = render_fog(&scene, &depth, &FogParams::new(0.02)).unwrap();
            let v = a.alpha.get(0, 0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let scene = Image::new(4, 4);
        let depth = depth_map(4, 5, 10.0);
        assert!(render_fog(&scene, &depth, &FogParams::new(0.1)).is_err());
    }

    #[test]
    fn visibility_conversion_round_trips() {
        let beta = beta_for_max_visibility(150.0);
        assert!((max_visibility(beta) - 150.0).abs() < 1e-9);
    }
}
