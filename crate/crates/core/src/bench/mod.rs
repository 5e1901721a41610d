//! Synthetic ground-truth evaluation protocol.
//!
//! Datasets are built by rendering the procedural corpus with known
//! parameters; recovery then splits the corpus into source/target halves,
//! fits a critic on the targets and regresses the parameter of interest.
//! Landscape sweeps chart the feature distance between re-rendered sources
//! and the targets across a parameter grid. Results are reported as CSV.

pub mod corpus;

pub use corpus::{generate_corpus, generate_scene};

use std::sync::Arc;
use std::time::Instant;

use crate::critic::{critic_fit, patch_features, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::estimate::{
    estimate_differentiable, fmt_g9, DiffEstimateConfig, Sources, TraceRow,
};
use crate::models::{compose, CompositeParams, ModelParams};
use crate::raster::{DepthMap, Image, Plane};
use crate::rng::RngStream;

/// Patch size shared by recovery critics and the feature distance.
pub const BENCH_PATCH_SIZE: usize = 8;

/// Outcome of one recovery run.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub model: String,
    pub parameter: String,
    pub ground_truth: f64,
    pub estimated: f64,
    pub percent_error: f64,
    pub seed: u64,
    pub wall_seconds: f64,
}

impl RecoveryReport {
    /// Equality on everything except wall-clock time.
    pub fn same_result(&self, other: &RecoveryReport) -> bool {
        self.model == other.model
            && self.parameter == other.parameter
            && self.ground_truth == other.ground_truth
            && self.estimated == other.estimated
            && self.percent_error == other.percent_error
            && self.seed == other.seed
    }
}

/// Render every clean image with the ground-truth parameters under fresh
/// sub-seeds and compose.
pub fn synthesize_ground_truth(
    clean: &[Image],
    depths: Option<&[DepthMap]>,
    model: &ModelParams,
    rng: &mut RngStream,
) -> Result<Vec<Image>> {
    if clean.is_empty() {
        return Err(Error::InvalidParam("empty clean set".into()));
    }
    clean
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut sub = RngStream::new(rng.next_u64());
            let overlay = model.render(img, depths.map(|d| &d[i]), &mut sub, None)?;
            compose(img, &overlay)
        })
        .collect()
}

/// One recovery task: ground truth, which differentiable parameter to
/// regress, and where to start it.
#[derive(Debug, Clone)]
pub struct RecoveryCase {
    /// Ground-truth parameters used to synthesize the targets.
    pub truth: ModelParams,
    /// Name of the regressed parameter within the differentiable block.
    pub parameter: &'static str,
    /// Initial value of that parameter; all others start at the truth.
    pub init: f64,
}

fn diff_index(model: &ModelParams, name: &str) -> Result<usize> {
    model
        .diff_desc()
        .iter()
        .position(|d| d.name == name)
        .ok_or_else(|| Error::InvalidParam(format!("no differentiable parameter '{name}'")))
}

/// Deterministic source/target split: indices shuffled by the seed, first
/// half sources, second half targets.
fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::substream(seed, 0x5B117);
    for i in (1..n).rev() {
        let j = rng.uniform_usize(i + 1);
        indices.swap(i, j);
    }
    let half = n / 2;
    let targets = indices.split_off(half);
    (indices, targets)
}

/// Run the recovery protocol once per seed: split, synthesize targets with
/// the ground truth, fit a critic on them, regress the case parameter on the
/// sources, and report the error.
pub fn run_recovery(
    clean: &[Image],
    depths: Option<&[DepthMap]>,
    case: &RecoveryCase,
    cfg: &DiffEstimateConfig,
    seeds: &[u64],
) -> Result<Vec<RecoveryReport>> {
    if seeds.is_empty() {
        return Err(Error::InvalidParam("need at least one seed".into()));
    }
    if clean.len() < 2 {
        return Err(Error::InvalidParam("need at least two clean images".into()));
    }
    let param_idx = diff_index(&case.truth, case.parameter)?;
    let truth_value = case.truth.diff_values()[param_idx];
    if truth_value == 0.0 {
        return Err(Error::InvalidParam(
            "ground truth must be non-zero for percent error".into(),
        ));
    }

    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let start = Instant::now();
        let (src_idx, tgt_idx) = split_indices(clean.len(), seed);
        let sources_vec: Vec<Image> = src_idx.iter().map(|&i| clean[i].clone()).collect();
        let source_depths: Option<Vec<DepthMap>> =
            depths.map(|d| src_idx.iter().map(|&i| d[i].clone()).collect());
        let target_clean: Vec<Image> = tgt_idx.iter().map(|&i| clean[i].clone()).collect();
        let target_depths: Option<Vec<DepthMap>> =
            depths.map(|d| tgt_idx.iter().map(|&i| d[i].clone()).collect());

        let mut synth_rng = RngStream::substream(seed, 0x7A46E7);
        let targets = synthesize_ground_truth(
            &target_clean,
            target_depths.as_deref(),
            &case.truth,
            &mut synth_rng,
        )?;
        let critic = critic_fit(&targets, BENCH_PATCH_SIZE)?;

        let mut init_values = case.truth.diff_values();
        init_values[param_idx] = case.init;
        let init_model = case.truth.with_diff(&init_values);

        let mut sources = Sources::new(&sources_vec);
        if let Some(d) = source_depths.as_deref() {
            sources = sources.with_depths(d);
        }
        let mut trace: Vec<TraceRow> = Vec::new();
        let est = estimate_differentiable(
            &init_model,
            &sources,
            &critic,
            cfg,
            &mut RngStream::substream(seed, 0xE57),
            0,
            &mut trace,
        )?;
        let estimated = est.values[param_idx];

        reports.push(RecoveryReport {
            model: case.truth.kind().name().to_string(),
            parameter: case.parameter.to_string(),
            ground_truth: truth_value,
            estimated,
            percent_error: 100.0 * (estimated - truth_value).abs() / truth_value.abs(),
            seed,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(reports)
}

/// Fréchet distance between diagonal-Gaussian fits of the pooled critic
/// patch features of two image sets: squared mean difference plus the
/// squared difference of per-feature standard deviations.
pub fn feature_distance(a: &[Image], b: &[Image]) -> Result<f64> {
    let stats = |set: &[Image]| -> Result<(Vec<f64>, Vec<f64>)> {
        if set.is_empty() {
            return Err(Error::InvalidParam("empty image set".into()));
        }
        let mut sum = vec![0.0; FEATURE_COUNT];
        let mut sum_sq = vec![0.0; FEATURE_COUNT];
        let mut count = 0usize;
        for img in set {
            if img.width() < BENCH_PATCH_SIZE || img.height() < BENCH_PATCH_SIZE {
                return Err(Error::InvalidParam("image smaller than patch".into()));
            }
            for y0 in (0..=img.height() - BENCH_PATCH_SIZE).step_by(BENCH_PATCH_SIZE) {
                for x0 in (0..=img.width() - BENCH_PATCH_SIZE).step_by(BENCH_PATCH_SIZE) {
                    let f = patch_features(img, x0, y0, BENCH_PATCH_SIZE);
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
        Ok((means, vars))
    };
    let (ma, va) = stats(a)?;
    let (mb, vb) = stats(b)?;
    let mut dist = 0.0;
    for i in 0..FEATURE_COUNT {
        let dm = ma[i] - mb[i];
        let ds = va[i].sqrt() - vb[i].sqrt();
        dist += dm * dm + ds * ds;
    }
    Ok(dist)
}

/// Sweep one differentiable parameter across a sorted grid: render the clean
/// set at each value (common seeds across grid points) and chart the feature
/// distance to the targets.
pub fn sweep_landscape(
    clean: &[Image],
    depths: Option<&[DepthMap]>,
    targets: &[Image],
    model: &ModelParams,
    parameter: &str,
    grid: &[f64],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if grid.len() < 3 {
        return Err(Error::InvalidParam("grid needs at least 3 points".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParam("grid must be strictly increasing".into()));
    }
    let param_idx = diff_index(model, parameter)?;
    let image_seeds: Vec<u64> = {
        let mut rng = RngStream::substream(seed, 0x5EED);
        clean.iter().map(|_| rng.next_u64()).collect()
    };
    grid.iter()
        .map(|&value| {
            let mut values = model.diff_values();
            values[param_idx] = value;
            let candidate = model.with_diff(&values);
            let rendered: Result<Vec<Image>> = clean
                .iter()
                .enumerate()
                .map(|(i, img)| {
                    let mut rng = RngStream::new(image_seeds[i]);
                    let overlay = candidate.render(img, depths.map(|d| &d[i]), &mut rng, None)?;
                    compose(img, &overlay)
                })
                .collect();
            Ok((value, feature_distance(&rendered?, targets)?))
        })
        .collect()
}

/// Write `landscape.csv` rows: value,distance.
pub fn write_landscape_csv(path: &std::path::Path, rows: &[(f64, f64)]) -> Result<()> {
    use std::io::Write;
    let mut out = String::from("value,distance\n");
    for (v, d) in rows {
        out.push_str(&format!("{},{}\n", fmt_g9(*v), fmt_g9(*d)));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Write `recovery.csv` with one row per report.
pub fn write_recovery_csv(path: &std::path::Path, reports: &[RecoveryReport]) -> Result<()> {
    use std::io::Write;
    let mut out = String::from(
        "model,parameter,ground_truth,estimated,percent_error,seed,wall_seconds\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model,
            r.parameter,
            fmt_g9(r.ground_truth),
            fmt_g9(r.estimated),
            fmt_g9(r.percent_error),
            r.seed,
            fmt_g9(r.wall_seconds)
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Procedural striped watermark used as the composite model's overlay.
pub fn watermark_params(scene_width: usize, scene_height: usize, seed: u64) -> CompositeParams {
    let w = (scene_width / 2).max(4);
    let h = (scene_height / 4).max(4);
    let mut img = Image::new(w, h);
    let mut alpha = Plane::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            if (x + 2 * y) % 8 < 3 {
                img.set_pixel(x, y, [0.85, 0.85, 0.9]);
                alpha.set(x, y, 0.45);
            }
        }
    }
    CompositeParams::new(img, alpha, seed).expect("watermark construction")
}

/// Ground-truth defaults per model for the recovery benches.
pub fn default_truth(kind: crate::models::ModelKind, seed: u64) -> ModelParams {
    use crate::models::{DirtParams, FogParams, ModelKind, RaindropParams};
    match kind {
        ModelKind::Raindrop => ModelParams::Raindrop(RaindropParams::bench_default(seed)),
        ModelKind::Dirt => ModelParams::Dirt(DirtParams::bench_default(seed)),
        ModelKind::Fog => ModelParams::Fog(FogParams::new(10.0)),
        ModelKind::Composite => {
            let params = watermark_params(128, 128, seed);
            ModelParams::Composite(CompositeParams {
                overlay_image: Arc::clone(&params.overlay_image),
                overlay_alpha: Arc::clone(&params.overlay_alpha),
                seed,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DirtParams, FogParams, ModelKind, RaindropParams};

    fn small_corpus(n: usize) -> (Vec<Image>, Vec<DepthMap>) {
        generate_corpus(64, 64, n, 77)
    }

    #[test]
    fn synthesize_fog_zero_beta_is_identity() {
        let (clean, depths) = small_corpus(3);
        let model = ModelParams::Fog(FogParams::new(0.0));
        let out = synthesize_ground_truth(&clean, Some(&depths), &model, &mut RngStream::new(1))
            .unwrap();
        for (a, b) in out.iter().zip(&clean) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn synthesize_zero_frequency_raindrop_is_identity() {
        let (clean, _) = small_corpus(2);
        let mut params = RaindropParams::bench_default(0);
        for t in &mut params.drop_types {
            t.frequency = 0.0;
        }
        let model = ModelParams::Raindrop(params);
        let out = synthesize_ground_truth(&clean, None, &model, &mut RngStream::new(2)).unwrap();
        for (a, b) in out.iter().zip(&clean) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn synthesize_opaque_dirt_paints_soil_tone() {
        let (clean, _) = small_corpus(1);
        let mut params = DirtParams::bench_default(4);
        params.alpha = 1.0;
        params.sigma = 0.0;
        params.blob_frequency = 500.0;
        let model = ModelParams::Dirt(params);
        let out = synthesize_ground_truth(&clean, None, &model, &mut RngStream::new(4)).unwrap();
        // Blob interiors equal the dirt tone exactly: find pixels that
        // changed and verify they follow the radial soil law (channel order
        // r > g > b for the fixed tone).
        let mut changed = 0;
        for y in 0..64 {
            for x in 0..64 {
                let a = out[0].pixel(x, y);
                let b = clean[0].pixel(x, y);
                if a != b {
                    changed += 1;
                    assert!(a[0] > a[1] && a[1] > a[2], "soil tone ordering at {x},{y}");
                }
            }
        }
        assert!(changed > 50, "expected opaque dirt coverage");
    }

    #[test]
    fn feature_distance_identity_and_symmetry() {
        let (clean, _) = small_corpus(3);
        let d_self = feature_distance(&clean, &clean).unwrap();
        assert_eq!(d_self, 0.0);
        let a = &clean[..2];
        let b = &clean[1..];
        let d_ab = feature_distance(a, b).unwrap();
        let d_ba = feature_distance(b, a).unwrap();
        assert!((d_ab - d_ba).abs() < 1e-12);
        assert!(d_ab >= 0.0);
    }

    #[test]
    fn feature_distance_monotone_in_fog_strength() {
        let (clean, depths) = small_corpus(3);
        let mut prev = -1.0;
        for &beta in &[0.0, 4.0, 12.0, 30.0] {
            let model = ModelParams::Fog(FogParams::new(beta));
            let fogged =
                synthesize_ground_truth(&clean, Some(&depths), &model, &mut RngStream::new(3))
                    .unwrap();
            let d = feature_distance(&clean, &fogged).unwrap();
            assert!(d >= prev, "distance not monotone at beta {beta}");
            prev = d;
        }
    }

    #[test]
    fn landscape_grid_validation() {
        let (clean, _) = small_corpus(2);
        let model = default_truth(ModelKind::Dirt, 0);
        let err = sweep_landscape(&clean, None, &clean, &model, "alpha", &[0.1, 0.2], 0);
        assert!(err.is_err());
        let err = sweep_landscape(&clean, None, &clean, &model, "alpha", &[0.3, 0.2, 0.5], 0);
        assert!(err.is_err());
    }

    #[test]
    fn recovery_reports_are_reproducible() {
        let (clean, _) = small_corpus(8);
        let mut truth = DirtParams::bench_default(0);
        truth.alpha = 0.6;
        let case = RecoveryCase {
            truth: ModelParams::Dirt(truth),
            parameter: "alpha",
            init: 0.2,
        };
        let mut cfg = DiffEstimateConfig::for_model(&case.truth);
        cfg.max_iters = 6;
        cfg.batch_size = 2;
        let a = run_recovery(&clean, None, &case, &cfg, &[5, 6]).unwrap();
        let b = run_recovery(&clean, None, &case, &cfg, &[5, 6]).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.same_result(y));
        }
        for r in &a {
            assert!((r.percent_error - 100.0 * (r.estimated - 0.6).abs() / 0.6).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_writers_format() {
        let dir = tempfile::tempdir().unwrap();
        let rec = dir.path().join("recovery.csv");
        let lan = dir.path().join("landscape.csv");
        write_recovery_csv(
            &rec,
            &[RecoveryReport {
                model: "dirt".into(),
                parameter: "alpha".into(),
                ground_truth: 0.6,
                estimated: 0.59,
                percent_error: 1.6666,
                seed: 3,
                wall_seconds: 0.25,
            }],
        )
        .unwrap();
        write_landscape_csv(&lan, &[(1.0, 0.5), (2.0, 0.25)]).unwrap();
        let rec_text = std::fs::read_to_string(&rec).unwrap();
        assert!(rec_text.starts_with(
            "model,parameter,ground_truth,estimated,percent_error,seed,wall_seconds"
        ));
        assert!(rec_text.contains("dirt,alpha,"));
        let lan_text = std::fs::read_to_string(&lan).unwrap();
        assert_eq!(lan_text.lines().count(), 3);
    }

    #[test]
    fn watermark_fits_scene() {
        let params = watermark_params(128, 128, 0);
        assert!(params.overlay_image.width() <= 128);
        assert!(params.overlay_alpha.data().iter().any(|&a| a > 0.0));
    }
}
