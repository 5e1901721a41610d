//! Alternating estimation of both parameter blocks.
//!
//! Each round runs `k_d` gradient steps on the differentiable block with the
//! non-differentiable block frozen, then `k_g` CMA-ES generations on the
//! non-differentiable block with the differentiable one frozen. Fitness is
//! the objective averaged over a fixed number of samples, with one shared
//! seed list per generation so candidates compete under the same noise. The
//! loop stops when neither block has improved by more than `tol` for two
//! consecutive rounds; the best pair ever seen is returned.
//!
//! CMA-ES runs in bound-normalized coordinates (each parameter mapped to
//! [0, 1]) so a single step size serves parameters of very different scales.

use rayon::prelude::*;

use super::cma::CmaState;
use super::{
    estimate_differentiable, objective_seeded, DiffEstimateConfig, Sources, TraceRow,
};
use crate::critic::Critic;
use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::rng::RngStream;

/// Number of images averaged per CMA-ES fitness evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FitnessSpec {
    pub n_samples: usize,
}

impl Default for FitnessSpec {
    fn default() -> Self {
        FitnessSpec { n_samples: 4 }
    }
}

/// Alternation settings.
#[derive(Debug, Clone)]
pub struct JointConfig {
    /// Gradient steps per round.
    pub k_d: usize,
    /// CMA-ES generations per round.
    pub k_g: usize,
    /// Hard cap on alternation rounds.
    pub max_rounds: usize,
    /// A round improves a block only if its best loss drops by more than this.
    pub tol: f64,
    /// CMA-ES population size.
    pub population: usize,
    /// Initial CMA-ES step size in normalized [0, 1] coordinates.
    pub cma_sigma0: f64,
    /// Optional warm-start mean for the non-differentiable block, in
    /// parameter units.
    pub warm_start: Option<Vec<f64>>,
    pub fitness: FitnessSpec,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            k_d: 20,
            k_g: 5,
            max_rounds: 8,
            tol: 1e-3,
            population: super::cma::DEFAULT_POPULATION,
            cma_sigma0: 0.3,
            warm_start: None,
            fitness: FitnessSpec::default(),
        }
    }
}

/// Result of the alternating estimation.
#[derive(Debug, Clone)]
pub struct JointEstimate {
    /// Best (w_d, w_nd) pair observed, as a full parameter record.
    pub params: ModelParams,
    pub loss: f64,
    pub rounds: usize,
}

fn normalize(values: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    values
        .iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

fn denormalize(unit: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    unit.iter()
        .zip(bounds)
        .map(|(&z, &(lo, hi))| lo + z * (hi - lo))
        .collect()
}

/// Alternate gradient descent on w_d and CMA-ES on w_nd. With an empty
/// non-differentiable block this reduces exactly to
/// [`estimate_differentiable`], including an identical trace for equal seeds.
#[allow(clippy::too_many_arguments)]
pub fn estimate_joint(
    model: &ModelParams,
    sources: &Sources,
    critic: &Critic,
    diff_cfg: &DiffEstimateConfig,
    joint_cfg: &JointConfig,
    rng: &mut RngStream,
    trace: &mut Vec<TraceRow>,
) -> Result<JointEstimate> {
    let nd_desc = model.nd_desc();
    if nd_desc.is_empty() {
        let est = estimate_differentiable(model, sources, critic, diff_cfg, rng, 0, trace)?;
        return Ok(JointEstimate {
            params: model.with_diff(&est.values),
            loss: est.loss,
            rounds: 1,
        });
    }

    let nd_bounds: Vec<(f64, f64)> = nd_desc.iter().map(|d| (d.lo, d.hi)).collect();
    let n_sources = sources.len();
    if n_sources == 0 {
        return Err(Error::InvalidParam("no source images".into()));
    }
    let n_samples = joint_cfg.fitness.n_samples.max(1).min(n_sources);

    let start_nd = match &joint_cfg.warm_start {
        Some(values) => {
            if values.len() != nd_desc.len() {
                return Err(Error::InvalidParam(
                    "warm start length does not match the non-differentiable block".into(),
                ));
            }
            values.clone()
        }
        None => model.nd_values(),
    };

    let mut current = model.with_nd(&start_nd);
    let mut cma = CmaState::new(
        normalize(&start_nd, &nd_bounds),
        joint_cfg.cma_sigma0,
        joint_cfg.population,
        vec![(0.0, 1.0); nd_bounds.len()],
    )?;

    let mut best_params = current.clone();
    let mut best_loss = f64::INFINITY;
    let mut prev_d_best = f64::INFINITY;
    let mut prev_g_best = f64::INFINITY;
    let mut stall_rounds = 0;
    let mut rounds = 0;
    let mut eval_offset = 0usize;

    for round in 0..joint_cfg.max_rounds {
        rounds = round + 1;

        // Differentiable block, w_nd frozen.
        let mut d_cfg = diff_cfg.clone();
        d_cfg.max_iters = joint_cfg.k_d;
        let d_est =
            estimate_differentiable(&current, sources, critic, &d_cfg, rng, round, trace)?;
        current = current.with_diff(&d_est.values);
        if d_est.loss < best_loss {
            best_loss = d_est.loss;
            best_params = current.clone();
        }

        // Non-differentiable block, w_d frozen.
        let mut g_best = f64::INFINITY;
        for gen in 0..joint_cfg.k_g {
            let population = cma.ask(rng);
            // One seed list and one sample batch per generation, shared by
            // all candidates.
            let indices: Vec<usize> =
                (0..n_samples).map(|i| (eval_offset + i) % n_sources).collect();
            eval_offset += n_samples;
            let seeds: Vec<u64> = (0..n_samples).map(|_| rng.next_u64()).collect();
            let fitnesses: Vec<f64> = population
                .par_iter()
                .map(|unit| {
                    let candidate = current.with_nd(&denormalize(unit, &nd_bounds));
                    objective_seeded(&candidate, sources, &indices, critic, &seeds)
                })
                .collect::<Result<_>>()?;
            cma.tell(&population, &fitnesses)?;

            let (gen_best_idx, gen_best) = fitnesses
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, &f)| (i, f))
                .unwrap();
            g_best = g_best.min(gen_best);
            trace.push(TraceRow {
                round,
                block: "cma",
                iter: gen,
                loss: gen_best,
                params: denormalize(&population[gen_best_idx], &nd_bounds),
            });
            if gen_best < best_loss {
                best_loss = gen_best;
                best_params = current.with_nd(&denormalize(&population[gen_best_idx], &nd_bounds));
            }
        }
        // Adopt the best candidate CMA-ES has ever seen.
        if let Some((unit, _)) = cma.best() {
            let unit = unit.to_vec();
            current = current.with_nd(&denormalize(&unit, &nd_bounds));
        }

        // Two consecutive rounds without improvement in either block end the
        // alternation.
        let d_improved = d_est.loss < prev_d_best - joint_cfg.tol;
        let g_improved = g_best < prev_g_best - joint_cfg.tol;
        prev_d_best = prev_d_best.min(d_est.loss);
        prev_g_best = prev_g_best.min(g_best);
        if d_improved || g_improved {
            stall_rounds = 0;
        } else {
            stall_rounds += 1;
            if stall_rounds >= 2 {
                break;
            }
        }
    }

    Ok(JointEstimate {
        params: best_params,
        loss: best_loss,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::critic_fit;
    use crate::models::{CompositeParams, DirtParams, ModelParams};
    use crate::raster::{Image, Plane};

    fn textured_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = RngStream::new(seed);
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let base = 0.25 + 0.5 * ((x + y) as f64 / (w + h) as f64);
                let n = 0.25 * rng.next_f64();
                img.set_pixel(x, y, [base + n, base, 1.0 - base + 0.5 * n]);
            }
        }
        img
    }

    #[test]
    fn empty_nd_block_reduces_to_differentiable_path() {
        // Composite has neither block; fog has only w_d. Use fog via dirt
        // with frozen nd? Composite exercises the degenerate path directly.
        let images: Vec<Image> = (0..4).map(|i| textured_image(32, 32, i)).collect();
        let critic = critic_fit(&images, 8).unwrap();
        let overlay = CompositeParams::new(
            Image::constant(8, 8, [1.0, 1.0, 1.0]),
            Plane::new(8, 8, 0.35),
            0,
        )
        .unwrap();
        let model = ModelParams::Composite(overlay);
        let diff_cfg = DiffEstimateConfig {
            learning_rate: vec![],
            step_limit: vec![],
            max_iters: 5,
            batch_size: 2,
            fd_step: vec![],
            tol: 1e-4,
            bounds: vec![],
        };
        let sources = Sources::new(&images);

        let mut trace_joint = Vec::new();
        let joint = estimate_joint(
            &model,
            &sources,
            &critic,
            &diff_cfg,
            &JointConfig::default(),
            &mut RngStream::new(99),
            &mut trace_joint,
        )
        .unwrap();

        let mut trace_diff = Vec::new();
        let diff = estimate_differentiable(
            &model,
            &sources,
            &critic,
            &diff_cfg,
            &mut RngStream::new(99),
            0,
            &mut trace_diff,
        )
        .unwrap();

        assert_eq!(trace_joint, trace_diff);
        assert_eq!(joint.loss, diff.loss);
    }

    #[test]
    fn joint_best_loss_non_increasing_across_rounds() {
        let clean: Vec<Image> = (0..6).map(|i| textured_image(48, 48, i)).collect();
        // Targets carry dirt with known parameters.
        let mut truth = DirtParams::bench_default(0);
        truth.alpha = 0.7;
        truth.sigma = 1.5;
        truth.blob_frequency = 150.0;
        let targets: Vec<Image> = clean
            .iter()
            .enumerate()
            .map(|(i, img)| {
                let mut rng = RngStream::substream(1000, i as u64);
                let overlay =
                    crate::models::render_dirt(img, &truth, &mut rng, None).unwrap();
                crate::models::compose(img, &overlay).unwrap()
            })
            .collect();
        let critic = critic_fit(&targets, 8).unwrap();
        let model = ModelParams::Dirt(DirtParams::bench_default(1));
        let mut diff_cfg = DiffEstimateConfig::for_model(&model);
        diff_cfg.batch_size = 3;
        let joint_cfg = JointConfig {
            k_d: 4,
            k_g: 2,
            max_rounds: 3,
            ..JointConfig::default()
        };
        let sources = Sources::new(&clean);
        let mut trace = Vec::new();
        let est = estimate_joint(
            &model,
            &sources,
            &critic,
            &diff_cfg,
            &joint_cfg,
            &mut RngStream::new(5),
            &mut trace,
        )
        .unwrap();

        assert!(est.loss.is_finite());
        // Per-round best losses are non-increasing for the running best.
        let mut best_so_far = f64::INFINITY;
        let mut per_round_best: Vec<f64> = Vec::new();
        for round in 0..est.rounds {
            let round_best = trace
                .iter()
                .filter(|r| r.round == round)
                .map(|r| r.loss)
                .fold(f64::INFINITY, f64::min);
            best_so_far = best_so_far.min(round_best);
            per_round_best.push(best_so_far);
        }
        for pair in per_round_best.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
        // Returned parameters respect their bounds.
        for (v, d) in est.params.nd_values().iter().zip(est.params.nd_desc()) {
            assert!(*v >= d.lo && *v <= d.hi);
        }
        for (v, d) in est.params.diff_values().iter().zip(est.params.diff_desc()) {
            assert!(*v >= d.lo && *v <= d.hi);
        }
    }

    #[test]
    fn warm_start_length_checked() {
        let images: Vec<Image> = (0..2).map(|i| textured_image(32, 32, i)).collect();
        let critic = critic_fit(&images, 8).unwrap();
        let model = ModelParams::Dirt(DirtParams::bench_default(0));
        let diff_cfg = DiffEstimateConfig::for_model(&model);
        let joint_cfg = JointConfig {
            warm_start: Some(vec![1.0]),
            ..JointConfig::default()
        };
        let sources = Sources::new(&images);
        let mut trace = Vec::new();
        let err = estimate_joint(
            &model,
            &sources,
            &critic,
            &diff_cfg,
            &joint_cfg,
            &mut RngStream::new(0),
            &mut trace,
        );
        assert!(err.is_err());
    }
}
