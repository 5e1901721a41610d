//! Patch moment-matching realism critic.
//!
//! The critic summarizes a target image set by per-feature mean and variance
//! over all non-overlapping patches, with 15 features per patch: channel
//! means (3), channel standard deviations (3), a soft gradient-magnitude
//! histogram (8 bins) and Laplacian energy (1).
//!
//! Scoring an image compares the image's own patch-feature population
//! against the fitted statistics: the whitened squared deviation of the
//! pooled feature means plus the whitened squared mismatch of the pooled
//! feature spreads. Matching spreads as well as means is what makes the
//! score a usable estimation loss: a scorer that only pulls patches toward
//! the target means is minimized by washing all structure out (heavy blur or
//! fog scores better than the truth), whereas this population form has its
//! minimum where the rendered statistics match the target statistics. A
//! member of the target set therefore scores near zero. The per-patch loss
//! raster (each patch's whitened squared deviation from the target means) is
//! kept alongside as a spatial diagnostic.
//!
//! All features are smooth functions of the pixels, which gives the critic
//! an analytic input gradient: the quantity the estimation and guidance
//! modules backpropagate through. Implementations are interchangeable behind
//! [`RealismCritic`]; this moment critic is the built-in one.
//!
//! Fitted statistics serialize to a small versioned binary file (`.critic`).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{Image, Plane};

/// Number of per-patch features.
pub const FEATURE_COUNT: usize = 15;
/// Variance floor applied when whitening, so constant targets cannot make
/// the distance singular. Stored variances stay raw.
pub const VARIANCE_FLOOR: f64 = 1e-8;

const HIST_BINS: usize = 8;
const HIST_RANGE: f64 = 0.5;
const HIST_BANDWIDTH: f64 = HIST_RANGE / HIST_BINS as f64;
/// Smoothing inside sqrt so gradient magnitude stays differentiable at zero.
const GRAD_EPS: f64 = 1e-6;
/// Smoothing inside the standard-deviation feature.
const STD_EPS: f64 = 1e-12;

const MAGIC: &[u8; 8] = b"OCCRIT01";

/// Scalar realism loss with a per-pixel input gradient. The estimation
/// pipeline only needs these two operations, so alternative critics (e.g. a
/// learned one) can be swapped in.
pub trait RealismCritic {
    fn score(&self, img: &Image) -> Result<CriticScore>;

    /// d(score.value)/d(pixel channel), interleaved RGB row-major.
    fn input_gradient(&self, img: &Image) -> Result<Vec<f64>>;

    fn patch_size(&self) -> usize;
}

/// Fitted critic: target feature statistics under a diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    patch_size: usize,
    means: Vec<f64>,
    vars: Vec<f64>,
}

/// Score of one image: overall value plus the raster of per-patch losses.
#[derive(Debug, Clone)]
pub struct CriticScore {
    pub value: f64,
    pub per_patch: Plane,
}

fn check_patch_fit(img: &Image, patch_size: usize) -> Result<()> {
    if img.width() < patch_size || img.height() < patch_size {
        return Err(Error::InvalidParam(format!(
            "patch size {patch_size} larger than image {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Fit target statistics over all non-overlapping patches of all targets.
pub fn critic_fit(targets: &[Image], patch_size: usize) -> Result<Critic> {
    if targets.is_empty() {
        return Err(Error::InvalidParam("empty target list".into()));
    }
    if patch_size < 4 {
        return Err(Error::InvalidParam("patch size must be >= 4".into()));
    }
    let mut sum = [0.0; FEATURE_COUNT];
    let mut sum_sq = [0.0; FEATURE_COUNT];
    let mut count = 0usize;
    for img in targets {
        check_patch_fit(img, patch_size)?;
        for y0 in (0..=img.height() - patch_size).step_by(patch_size) {
            for x0 in (0..=img.width() - patch_size).step_by(patch_size) {
                let f = patch_features(img, x0, y0, patch_size);
                for i in 0..FEATURE_COUNT {
                    sum[i] += f[i];
                    sum_sq[i] += f[i] * f[i];
                }
                count += 1;
            }
        }
    }
    let n = count as f64;
    let means: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let vars: Vec<f64> = sum_sq
        .iter()
        .zip(&means)
        .map(|(sq, m)| (sq / n - m * m).max(0.0))
        .collect();
    Ok(Critic {
        patch_size,
        means,
        vars,
    })
}

impl Critic {
    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.vars
    }

    /// Build directly from statistics; used by tests and the FFI layer.
    pub fn from_stats(patch_size: usize, means: Vec<f64>, vars: Vec<f64>) -> Result<Self> {
        if means.len() != FEATURE_COUNT || vars.len() != FEATURE_COUNT {
            return Err(Error::InvalidParam("bad feature vector length".into()));
        }
        if vars.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParam(
                "variances must be non-negative and finite".into(),
            ));
        }
        Ok(Critic {
            patch_size,
            means,
            vars,
        })
    }

    /// Patch layout and per-patch features of an image.
    fn collect_features(&self, img: &Image) -> (usize, usize, Vec<[f64; FEATURE_COUNT]>) {
        let p = self.patch_size;
        let (nx, ny) = (img.width() / p, img.height() / p);
        let mut features = Vec::with_capacity(nx * ny);
        for py in 0..ny {
            for px in 0..nx {
                features.push(patch_features(img, px * p, py * p, p));
            }
        }
        (nx, ny, features)
    }

    /// Pooled mean and spread (std with a smoothing epsilon) per feature.
    fn pooled_stats(features: &[[f64; FEATURE_COUNT]]) -> ([f64; FEATURE_COUNT], [f64; FEATURE_COUNT]) {
        let n = features.len() as f64;
        let mut mean = [0.0; FEATURE_COUNT];
        for f in features {
            for i in 0..FEATURE_COUNT {
                mean[i] += f[i];
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut spread = [0.0; FEATURE_COUNT];
        for f in features {
            for i in 0..FEATURE_COUNT {
                let d = f[i] - mean[i];
                spread[i] += d * d;
            }
        }
        for s in &mut spread {
            *s = (*s / n + STD_EPS).sqrt();
        }
        (mean, spread)
    }

    /// Target spread under the same smoothing as [`Self::pooled_stats`].
    fn target_spread(&self, i: usize) -> f64 {
        (self.vars[i] + STD_EPS).sqrt()
    }

    /// Whitened squared distance of the image's patch-feature statistics
    /// from the fitted target statistics. The per-patch raster carries each
    /// patch's whitened squared deviation from the target means.
    pub fn score(&self, img: &Image) -> Result<CriticScore> {
        check_patch_fit(img, self.patch_size)?;
        let (nx, ny, features) = self.collect_features(img);
        let mut per_patch = Plane::new(nx, ny, 0.0);
        for (idx, f) in features.iter().enumerate() {
            per_patch.set(idx % nx, idx / nx, self.patch_loss(f));
        }
        let (mean, spread) = Self::pooled_stats(&features);
        let mut value = 0.0;
        for i in 0..FEATURE_COUNT {
            let dm = mean[i] - self.means[i];
            let ds = spread[i] - self.target_spread(i);
            value += (dm * dm + ds * ds) / self.vars[i].max(VARIANCE_FLOOR);
        }
        value /= FEATURE_COUNT as f64;
        Ok(CriticScore { value, per_patch })
    }

    fn patch_loss(&self, features: &[f64; FEATURE_COUNT]) -> f64 {
        let mut acc = 0.0;
        for i in 0..FEATURE_COUNT {
            let d = features[i] - self.means[i];
            acc += d * d / self.vars[i].max(VARIANCE_FLOOR);
        }
        acc / FEATURE_COUNT as f64
    }

    /// Analytic gradient of `score(img).value` w.r.t. every pixel channel.
    /// Layout matches `Image::data()`: interleaved RGB, row-major. Pixels in
    /// the margin not covered by any patch get zero.
    pub fn input_gradient(&self, img: &Image) -> Result<Vec<f64>> {
        check_patch_fit(img, self.patch_size)?;
        let p = self.patch_size;
        let (nx, _ny, features) = self.collect_features(img);
        let (mean, spread) = Self::pooled_stats(&features);
        let n_patches = features.len() as f64;
        let fcount = FEATURE_COUNT as f64;

        let mut grad = vec![0.0; img.data().len()];
        for (idx, f) in features.iter().enumerate() {
            // d(value)/d(f[i]) for this patch: through the pooled mean and
            // through the pooled spread.
            let mut dloss = [0.0; FEATURE_COUNT];
            for i in 0..FEATURE_COUNT {
                let dm = mean[i] - self.means[i];
                let ds = spread[i] - self.target_spread(i);
                let via_mean = 2.0 * dm / n_patches;
                let via_spread = 2.0 * ds * (f[i] - mean[i]) / (n_patches * spread[i]);
                dloss[i] = (via_mean + via_spread) / (self.vars[i].max(VARIANCE_FLOOR) * fcount);
            }
            let (px, py) = (idx % nx, idx / nx);
            self.accumulate_patch_gradient(img, px * p, py * p, &dloss, &mut grad);
        }
        Ok(grad)
    }

    /// Chain rule for one patch: dloss/dfeature times dfeature/dpixel,
    /// accumulated into `grad`.
    fn accumulate_patch_gradient(
        &self,
        img: &Image,
        x0: usize,
        y0: usize,
        dloss: &[f64; FEATURE_COUNT],
        grad: &mut [f64],
    ) {
        let p = self.patch_size;
        let w = img.width();
        let f = patch_features(img, x0, y0, p);

        let n = (p * p) as f64;
        let idx = |x: usize, y: usize, c: usize| (y * w + x) * 3 + c;

        // Channel means and standard deviations.
        for c in 0..3 {
            let mean = f[c];
            let std = f[3 + c];
            for y in y0..y0 + p {
                for x in x0..x0 + p {
                    let v = img.get(x, y, c);
                    grad[idx(x, y, c)] += dloss[c] / n;
                    grad[idx(x, y, c)] += dloss[3 + c] * (v - mean) / (n * std);
                }
            }
        }

        // Gradient-magnitude histogram over luminance forward differences.
        let m = ((p - 1) * (p - 1)) as f64;
        let lum =
            |x: usize, y: usize| (img.get(x, y, 0) + img.get(x, y, 1) + img.get(x, y, 2)) / 3.0;
        for y in y0..y0 + p - 1 {
            for x in x0..x0 + p - 1 {
                let dx = lum(x + 1, y) - lum(x, y);
                let dy = lum(x, y + 1) - lum(x, y);
                let g = (dx * dx + dy * dy + GRAD_EPS).sqrt();
                let (kernels, ksum, dksum) = hist_kernels(g);
                let mut dv_dg = 0.0;
                for (b, &(k, dk)) in kernels.iter().enumerate() {
                    // w_b = k/ksum, so dw_b/dg = (dk*ksum - k*dksum)/ksum^2.
                    dv_dg += dloss[6 + b] * (dk * ksum - k * dksum) / (ksum * ksum) / m;
                }
                let dg_ddx = dx / g;
                let dg_ddy = dy / g;
                let third = 1.0 / 3.0;
                for c in 0..3 {
                    grad[idx(x + 1, y, c)] += dv_dg * dg_ddx * third;
                    grad[idx(x, y, c)] -= dv_dg * dg_ddx * third;
                    grad[idx(x, y + 1, c)] += dv_dg * dg_ddy * third;
                    grad[idx(x, y, c)] -= dv_dg * dg_ddy * third;
                }
            }
        }

        // Laplacian energy over the patch interior.
        let k = ((p - 2) * (p - 2) * 3) as f64;
        for y in y0 + 1..y0 + p - 1 {
            for x in x0 + 1..x0 + p - 1 {
                for c in 0..3 {
                    let lap = 4.0 * img.get(x, y, c)
                        - img.get(x - 1, y, c)
                        - img.get(x + 1, y, c)
                        - img.get(x, y - 1, c)
                        - img.get(x, y + 1, c);
                    let d = dloss[14] * 2.0 * lap / k;
                    grad[idx(x, y, c)] += 4.0 * d;
                    grad[idx(x - 1, y, c)] -= d;
                    grad[idx(x + 1, y, c)] -= d;
                    grad[idx(x, y - 1, c)] -= d;
                    grad[idx(x, y + 1, c)] -= d;
                }
            }
        }
    }

    /// Serialize to the versioned `.critic` binary format: magic, patch
    /// size, feature count, then little-endian f64 means and variances.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + FEATURE_COUNT * 16);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.patch_size as u32).to_le_bytes());
        buf.extend_from_slice(&(FEATURE_COUNT as u32).to_le_bytes());
        for m in &self.means {
            buf.extend_from_slice(&m.to_le_bytes());
        }
        for v in &self.vars {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::UnsupportedImage {
            path: path.into(),
            reason: reason.into(),
        };
        if bytes.len() < 16 || &bytes[0..8] != MAGIC {
            return Err(bad("not a critic file (bad magic)"));
        }
        let patch_size = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let feature_count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if feature_count != FEATURE_COUNT {
            return Err(bad("unexpected feature count"));
        }
        if bytes.len() != 16 + 2 * FEATURE_COUNT * 8 {
            return Err(bad("truncated critic file"));
        }
        let read_f64s = |off: usize| -> Vec<f64> {
            (0..FEATURE_COUNT)
                .map(|i| {
                    f64::from_le_bytes(bytes[off + i * 8..off + i * 8 + 8].try_into().unwrap())
                })
                .collect()
        };
        Ok(Critic {
            patch_size,
            means: read_f64s(16),
            vars: read_f64s(16 + FEATURE_COUNT * 8),
        })
    }
}

impl RealismCritic for Critic {
    fn score(&self, img: &Image) -> Result<CriticScore> {
        Critic::score(self, img)
    }

    fn input_gradient(&self, img: &Image) -> Result<Vec<f64>> {
        Critic::input_gradient(self, img)
    }

    fn patch_size(&self) -> usize {
        self.patch_size
    }
}

/// Gaussian soft-assignment kernels for the histogram: per bin the kernel
/// value and its derivative w.r.t. g, plus their sums.
fn hist_kernels(g: f64) -> ([(f64, f64); HIST_BINS], f64, f64) {
    let mut kernels = [(0.0, 0.0); HIST_BINS];
    let mut ksum = 0.0;
    let mut dksum = 0.0;
    let inv2h2 = 1.0 / (2.0 * HIST_BANDWIDTH * HIST_BANDWIDTH);
    for (b, slot) in kernels.iter_mut().enumerate() {
        let center = (b as f64 + 0.5) * HIST_BANDWIDTH;
        let d = g - center;
        let k = (-d * d * inv2h2).exp();
        let dk = -2.0 * d * inv2h2 * k;
        *slot = (k, dk);
        ksum += k;
        dksum += dk;
    }
    (kernels, ksum, dksum)
}

/// The 15 features of one patch.
pub(crate) fn patch_features(img: &Image, x0: usize, y0: usize, p: usize) -> [f64; FEATURE_COUNT] {
    let mut f = [0.0; FEATURE_COUNT];
    let n = (p * p) as f64;

    // Channel means.
    for y in y0..y0 + p {
        for x in x0..x0 + p {
            for c in 0..3 {
                f[c] += img.get(x, y, c);
            }
        }
    }
    for c in 0..3 {
        f[c] /= n;
    }

    // Channel standard deviations (smoothed at zero variance).
    for y in y0..y0 + p {
        for x in x0..x0 + p {
            for c in 0..3 {
                let d = img.get(x, y, c) - f[c];
                f[3 + c] += d * d;
            }
        }
    }
    for c in 0..3 {
        f[3 + c] = (f[3 + c] / n + STD_EPS).sqrt();
    }

    // Soft gradient-magnitude histogram.
    let m = ((p - 1) * (p - 1)) as f64;
    let lum = |x: usize, y: usize| (img.get(x, y, 0) + img.get(x, y, 1) + img.get(x, y, 2)) / 3.0;
    for y in y0..y0 + p - 1 {
        for x in x0..x0 + p - 1 {
            let dx = lum(x + 1, y) - lum(x, y);
            let dy = lum(x, y + 1) - lum(x, y);
            let g = (dx * dx + dy * dy + GRAD_EPS).sqrt();
            let (kernels, ksum, _) = hist_kernels(g);
            for (b, &(k, _)) in kernels.iter().enumerate() {
                f[6 + b] += k / ksum / m;
            }
        }
    }

    // Laplacian energy over the interior.
    let k = ((p - 2) * (p - 2) * 3) as f64;
    for y in y0 + 1..y0 + p - 1 {
        for x in x0 + 1..x0 + p - 1 {
            for c in 0..3 {
                let lap = 4.0 * img.get(x, y, c)
                    - img.get(x - 1, y, c)
                    - img.get(x + 1, y, c)
                    - img.get(x, y - 1, c)
                    - img.get(x, y + 1, c);
                f[14] += lap * lap / k;
            }
        }
    }
    f
}
