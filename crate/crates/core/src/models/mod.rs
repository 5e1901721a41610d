//! Parametric occlusion models and the opacity composition law.
//!
//! Each renderer produces an [`Overlay`]: a color raster plus a per-pixel
//! opacity `alpha_w` in [0, 1]. [`compose`] blends an overlay over a scene as
//! `out = (1 - alpha_w) * scene + alpha_w * color`, so alpha_w = 1 means the
//! model fully covers the pixel.
//!
//! Parameters are split into a differentiable block (estimated by gradient
//! descent) and a non-differentiable block (estimated by CMA-ES); see the
//! `estimate` module.

mod composite;
mod dirt;
mod displacement;
mod fog;
mod raindrop;

pub use composite::CompositeParams;
pub use dirt::DirtParams;
pub use displacement::DisplacementField;
pub use fog::{beta_for_max_visibility, max_visibility, render_fog, FogParams};
pub use raindrop::{raindrop_geometry, render_raindrops, DropGeometry, DropType, RaindropParams};
pub use {composite::render_composite, dirt::render_dirt};

use crate::blur::{gaussian_blur, gaussian_blur_plane};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DepthMap, Image, Plane};
use crate::rng::RngStream;

/// Rendered model layer: color raster plus blending opacity.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub color: Image,
    pub alpha: Plane,
}

impl Overlay {
    /// Fully transparent overlay of the given size.
    pub fn transparent(width: usize, height: usize) -> Self {
        Overlay {
            color: Image::new(width, height),
            alpha: Plane::new(width, height, 0.0),
        }
    }
}

/// Alpha-blend an overlay onto a scene: `(1 - a) * scene + a * color`,
/// clamped to [0, 1].
pub fn compose(scene: &Image, overlay: &Overlay) -> Result<Image> {
    if !scene.same_dims(&overlay.color) || scene.width() != overlay.alpha.width() {
        return Err(Error::dims(
            scene.width(),
            scene.height(),
            overlay.color.width(),
            overlay.color.height(),
        ));
    }
    let mut out = Image::new(scene.width(), scene.height());
    let alpha = overlay.alpha.data();
    let sd = scene.data();
    let cd = overlay.color.data();
    let od = out.data_mut();
    for i in 0..alpha.len() {
        let a = alpha[i];
        for c in 0..3 {
            od[i * 3 + c] = ((1.0 - a) * sd[i * 3 + c] + a * cd[i * 3 + c]).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Model selector used by the CLI and benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Raindrop,
    Dirt,
    Fog,
    Composite,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Raindrop => "raindrop",
            ModelKind::Dirt => "dirt",
            ModelKind::Fog => "fog",
            ModelKind::Composite => "composite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raindrop" => Ok(ModelKind::Raindrop),
            "dirt" => Ok(ModelKind::Dirt),
            "fog" => Ok(ModelKind::Fog),
            "composite" => Ok(ModelKind::Composite),
            other => Err(Error::Config(format!(
                "unknown model '{other}', expected raindrop|dirt|fog|composite"
            ))),
        }
    }
}

/// How a parameter is stepped by finite differences.
#[derive(Debug, Clone, Copy)]
pub enum FdStep {
    /// Fixed step.
    Abs(f64),
    /// Step as a fraction of the current value (with a small floor).
    Rel(f64),
}

impl FdStep {
    pub fn step_at(self, value: f64) -> f64 {
        match self {
            FdStep::Abs(h) => h,
            FdStep::Rel(f) => (value.abs() * f).max(1e-6),
        }
    }
}

/// Descriptor of one scalar parameter: name, bounds, and default
/// finite-difference step.
#[derive(Debug, Clone, Copy)]
pub struct ParamDesc {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub fd_step: FdStep,
}

/// Parameter record for any of the four models. Carries both parameter
/// blocks plus the stochastic seed `z` used when no explicit stream is
/// provided.
#[derive(Debug, Clone)]
pub enum ModelParams {
    Raindrop(RaindropParams),
    Dirt(DirtParams),
    Fog(FogParams),
    Composite(CompositeParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Raindrop(_) => ModelKind::Raindrop,
            ModelParams::Dirt(_) => ModelKind::Dirt,
            ModelParams::Fog(_) => ModelKind::Fog,
            ModelParams::Composite(_) => ModelKind::Composite,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelParams::Raindrop(p) => p.validate(),
            ModelParams::Dirt(p) => p.validate(),
            ModelParams::Fog(p) => p.validate(),
            ModelParams::Composite(p) => p.validate(),
        }
    }

    /// Render this model over a scene. `depth` is required for fog and
    /// ignored elsewhere; `mask` restricts where raindrop/dirt occluders may
    /// be placed.
    pub fn render(
        &self,
        scene: &Image,
        depth: Option<&DepthMap>,
        rng: &mut RngStream,
        mask: Option<&BinaryMask>,
    ) -> Result<Overlay> {
        match self {
            ModelParams::Raindrop(p) => render_raindrops(scene, p, rng, mask),
            ModelParams::Dirt(p) => render_dirt(scene, p, rng, mask),
            ModelParams::Fog(p) => {
                let depth = depth.ok_or_else(|| {
                    Error::InvalidParam("fog model requires a depth map".into())
                })?;
                render_fog(scene, depth, p)
            }
            ModelParams::Composite(p) => render_composite(scene, p, rng),
        }
    }

    pub fn diff_desc(&self) -> Vec<ParamDesc> {
        match self {
            ModelParams::Raindrop(p) => p.diff_desc(),
            ModelParams::Dirt(p) => p.diff_desc(),
            ModelParams::Fog(p) => p.diff_desc(),
            ModelParams::Composite(_) => Vec::new(),
        }
    }

    pub fn diff_values(&self) -> Vec<f64> {
        match self {
            ModelParams::Raindrop(p) => vec![p.sigma],
            ModelParams::Dirt(p) => vec![p.sigma, p.alpha],
            ModelParams::Fog(p) => vec![p.beta],
            ModelParams::Composite(_) => Vec::new(),
        }
    }

    /// Copy with the differentiable block replaced.
    pub fn with_diff(&self, values: &[f64]) -> Self {
        let mut out = self.clone();
        match &mut out {
            ModelParams::Raindrop(p) => p.sigma = values[0],
            ModelParams::Dirt(p) => {
                p.sigma = values[0];
                p.alpha = values[1];
            }
            ModelParams::Fog(p) => p.beta = values[0],
            ModelParams::Composite(_) => assert!(values.is_empty()),
        }
        out
    }

    pub fn nd_desc(&self) -> Vec<ParamDesc> {
        match self {
            ModelParams::Raindrop(p) => p.nd_desc(),
            ModelParams::Dirt(p) => p.nd_desc(),
            ModelParams::Fog(_) | ModelParams::Composite(_) => Vec::new(),
        }
    }

    pub fn nd_values(&self) -> Vec<f64> {
        match self {
            ModelParams::Raindrop(p) => p
                .drop_types
                .iter()
                .flat_map(|t| [t.shape, t.size, t.frequency])
                .collect(),
            ModelParams::Dirt(p) => vec![p.blob_frequency, p.blob_size],
            ModelParams::Fog(_) | ModelParams::Composite(_) => Vec::new(),
        }
    }

    /// Copy with the non-differentiable block replaced.
    pub fn with_nd(&self, values: &[f64]) -> Self {
        let mut out = self.clone();
        match &mut out {
            ModelParams::Raindrop(p) => {
                assert_eq!(values.len(), 12);
                for (i, t) in p.drop_types.iter_mut().enumerate() {
                    t.shape = values[3 * i];
                    t.size = values[3 * i + 1];
                    t.frequency = values[3 * i + 2];
                }
            }
            ModelParams::Dirt(p) => {
                p.blob_frequency = values[0];
                p.blob_size = values[1];
            }
            ModelParams::Fog(_) | ModelParams::Composite(_) => assert!(values.is_empty()),
        }
        out
    }

    /// Named parameter values for reporting (`name=value` output).
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .diff_desc()
            .iter()
            .zip(self.diff_values())
            .map(|(d, v)| (d.name.to_string(), v))
            .collect();
        out.extend(
            self.nd_desc()
                .iter()
                .zip(self.nd_values())
                .map(|(d, v)| (d.name.to_string(), v)),
        );
        out
    }
}

/// Periodic shape wobble: three low harmonics with seeded amplitude and
/// phase, magnitude bounded by ~1.08.
#[derive(Debug, Clone)]
pub(crate) struct ShapeNoise {
    coeffs: [(f64, f64); 3],
}

impl ShapeNoise {
    pub(crate) fn draw(rng: &mut RngStream) -> Self {
        let mut coeffs = [(0.0, 0.0); 3];
        for (i, c) in coeffs.iter_mut().enumerate() {
            let k = (i + 2) as f64;
            *c = (
                rng.uniform(-1.0, 1.0) / k,
                rng.uniform(0.0, std::f64::consts::TAU),
            );
        }
        ShapeNoise { coeffs }
    }

    pub(crate) fn eval(&self, phi: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &(a, p))| a * ((i + 2) as f64 * phi + p).sin())
            .sum()
    }
}

/// Radial outline of one drop/blob: `r(phi) = s * (1 + t sin(2 phi) + 0.1 n(phi))`,
/// floored at 5% of `s` so the outline never degenerates.
#[derive(Debug, Clone)]
pub(crate) struct BlobOutline {
    pub size: f64,
    pub shape: f64,
    pub noise: ShapeNoise,
}

impl BlobOutline {
    pub(crate) fn draw(rng: &mut RngStream, size: f64, shape: f64) -> Self {
        BlobOutline {
            size,
            shape,
            noise: ShapeNoise::draw(rng),
        }
    }

    pub(crate) fn radius(&self, phi: f64) -> f64 {
        let r = self.size * (1.0 + self.shape * (2.0 * phi).sin() + 0.1 * self.noise.eval(phi));
        r.max(0.05 * self.size)
    }

    /// Upper bound on the radius, for bounding-box iteration.
    pub(crate) fn max_radius(&self) -> f64 {
        self.size * (1.0 + self.shape.abs() + 0.1 * (0.5 + 1.0 / 3.0 + 0.25))
    }
}

/// Uniform placement with mask rejection: up to 64 attempts, then the
/// occluder is skipped.
pub(crate) fn place_center(
    rng: &mut RngStream,
    width: usize,
    height: usize,
    mask: Option<&BinaryMask>,
) -> Option<(usize, usize)> {
    for _ in 0..64 {
        let x = rng.uniform_usize(width);
        let y = rng.uniform_usize(height);
        if mask.is_none_or(|m| m.get(x, y)) {
            return Some((x, y));
        }
    }
    None
}

/// Blur a premultiplied occluder layer. `color` must already be zero where
/// `coverage` is zero. Returns the unpremultiplied blurred color and the
/// blurred coverage (the final alpha).
pub(crate) fn blur_layer(color: &Image, coverage: &Plane, sigma: f64) -> Result<(Image, Plane)> {
    let alpha = gaussian_blur_plane(coverage, sigma)?;
    let pm = gaussian_blur(color, sigma)?;
    let mut out = Image::new(color.width(), color.height());
    let a = alpha.data();
    let p = pm.data();
    let o = out.data_mut();
    for i in 0..a.len() {
        if a[i] > 1e-12 {
            for c in 0..3 {
                o[i * 3 + c] = (p[i * 3 + c] / a[i]).clamp(0.0, 1.0);
            }
        }
    }
    Ok((out, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_identity_when_transparent() {
        let scene = Image::constant(8, 6, [0.2, 0.4, 0.6]);
        let overlay = Overlay::transparent(8, 6);
        let out = compose(&scene, &overlay).unwrap();
        assert_eq!(out, scene);
    }

    #[test]
    fn compose_full_opacity_returns_overlay() {
        let scene = Image::constant(4, 4, [0.9, 0.9, 0.9]);
        let overlay = Overlay {
            color: Image::constant(4, 4, [0.1, 0.2, 0.3]),
            alpha: Plane::new(4, 4, 1.0),
        };
        let out = compose(&scene, &overlay).unwrap();
        assert_eq!(out, overlay.color);
    }

    #[test]
    fn compose_arithmetic() {
        let scene = Image::constant(2, 2, [0.2, 0.2, 0.2]);
        let overlay = Overlay {
            color: Image::constant(2, 2, [0.8, 0.8, 0.8]),
            alpha: Plane::new(2, 2, 0.25),
        };
        let out = compose(&scene, &overlay).unwrap();
        for &v in out.data() {
            assert!((v - 0.35).abs() < 1e-15);
        }
    }

    #[test]
    fn compose_dimension_mismatch() {
        let scene = Image::new(4, 4);
        let overlay = Overlay::transparent(3, 4);
        assert!(compose(&scene, &overlay).is_err());
    }

    #[test]
    fn compose_output_on_segment() {
        // Affine in alpha: out lies between scene and overlay color.
        let mut rng = crate::rng::RngStream::new(2);
        let scene = Image::from_vec(5, 5, (0..75).map(|_| rng.next_f64()).collect());
        let color = Image::from_vec(5, 5, (0..75).map(|_| rng.next_f64()).collect());
        let alpha = Plane::from_vec(5, 5, (0..25).map(|_| rng.next_f64()).collect());
        let out = compose(
            &scene,
            &Overlay {
                color: color.clone(),
                alpha,
            },
        )
        .unwrap();
        for i in 0..75 {
            let lo = scene.data()[i].min(color.data()[i]) - 1e-12;
            let hi = scene.data()[i].max(color.data()[i]) + 1e-12;
            assert!(out.data()[i] >= lo && out.data()[i] <= hi);
        }
    }

    #[test]
    fn shape_noise_is_periodic() {
        let mut rng = crate::rng::RngStream::new(77);
        let noise = ShapeNoise::draw(&mut rng);
        for i in 0..10 {
            let phi = i as f64 * 0.6;
            let diff = (noise.eval(phi) - noise.eval(phi + std::f64::consts::TAU)).abs();
            assert!(diff < 1e-9);
        }
    }

    #[test]
    fn outline_never_degenerates() {
        let mut rng = crate::rng::RngStream::new(3);
        for _ in 0..20 {
            let outline = BlobOutline::draw(&mut rng, 6.0, 0.3);
            for i in 0..64 {
                let phi = i as f64 * std::f64::consts::TAU / 64.0;
                let r = outline.radius(phi);
                assert!(r >= 0.3 - 1e-12 && r <= outline.max_radius() + 1e-12);
            }
        }
    }
}
