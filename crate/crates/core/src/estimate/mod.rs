//! Parameter regression against a fitted critic.
//!
//! Differentiable parameters are fitted by projected gradient descent with
//! central finite differences under common random numbers: within one
//! gradient evaluation every objective call reuses the same per-image seed
//! list, so differences measure parameter effects only. Non-differentiable
//! parameters go through CMA-ES (`cma`), and `joint` alternates the two
//! blocks until neither improves.

pub mod cma;
mod joint;

pub use joint::{estimate_joint, FitnessSpec, JointConfig, JointEstimate};

use rayon::prelude::*;

use crate::critic::Critic;
use crate::error::{Error, Result};
use crate::models::{FdStep, ModelParams};
use crate::raster::{BinaryMask, DepthMap, Image};
use crate::rng::RngStream;

/// Source images for estimation, with optional per-image depth (required by
/// the fog model) and an optional injection mask.
#[derive(Clone, Copy)]
pub struct Sources<'a> {
    pub images: &'a [Image],
    pub depths: Option<&'a [DepthMap]>,
    pub mask: Option<&'a BinaryMask>,
}

impl<'a> Sources<'a> {
    pub fn new(images: &'a [Image]) -> Self {
        Sources {
            images,
            depths: None,
            mask: None,
        }
    }

    pub fn with_depths(mut self, depths: &'a [DepthMap]) -> Self {
        self.depths = Some(depths);
        self
    }

    pub fn with_mask(mut self, mask: Option<&'a BinaryMask>) -> Self {
        self.mask = mask;
        self
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Settings for the differentiable-parameter descent. All vectors are
/// indexed like the model's differentiable block.
#[derive(Debug, Clone)]
pub struct DiffEstimateConfig {
    pub learning_rate: Vec<f64>,
    /// Per-step movement cap per parameter. Keeps one huge far-field
    /// gradient from throwing the iterate across the whole feasible range;
    /// near the optimum the raw step falls below the cap and convergence is
    /// governed by the learning rate again.
    pub step_limit: Vec<f64>,
    pub max_iters: usize,
    /// Images per descent step; the batch rotates through the source list.
    pub batch_size: usize,
    pub fd_step: Vec<FdStep>,
    /// Relative parameter-change stopping threshold.
    pub tol: f64,
    pub bounds: Vec<(f64, f64)>,
}

impl DiffEstimateConfig {
    /// Defaults derived from the model's parameter descriptors: bounds and
    /// finite-difference steps as declared, a movement cap of 5% of each
    /// span, and a deliberately hot learning rate (2x span) so early steps
    /// saturate the cap and late steps anneal with the shrinking gradient.
    pub fn for_model(model: &ModelParams) -> Self {
        let desc = model.diff_desc();
        DiffEstimateConfig {
            learning_rate: desc.iter().map(|d| 2.0 * (d.hi - d.lo)).collect(),
            step_limit: desc.iter().map(|d| 0.05 * (d.hi - d.lo)).collect(),
            max_iters: 60,
            batch_size: 8,
            fd_step: desc.iter().map(|d| d.fd_step).collect(),
            tol: 1e-4,
            bounds: desc.iter().map(|d| (d.lo, d.hi)).collect(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.learning_rate.len() != dim
            || self.fd_step.len() != dim
            || self.bounds.len() != dim
            || self.step_limit.len() != dim
        {
            return Err(Error::InvalidParam(
                "config vectors must match the differentiable block".into(),
            ));
        }
        if self.learning_rate.iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::InvalidParam("learning rates must be > 0".into()));
        }
        if self.step_limit.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::InvalidParam("step limits must be > 0".into()));
        }
        if self.bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidParam("bounds must satisfy lo < hi".into()));
        }
        if !(self.tol >= 0.0) || self.batch_size == 0 || self.max_iters == 0 {
            return Err(Error::InvalidParam("bad estimation settings".into()));
        }
        Ok(())
    }
}

/// One row of the optimization trace (CSV: round,block,iter,loss,params...).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub block: &'static str,
    pub iter: usize,
    pub loss: f64,
    pub params: Vec<f64>,
}

/// Format with 9 significant digits, the float convention for CSV outputs.
pub fn fmt_g9(v: f64) -> String {
    if v == 0.0 {
        return "0.0".into();
    }
    format!("{v:.8e}")
}

/// Write a trace as CSV with one row per optimization step.
pub fn write_trace_csv(
    path: &std::path::Path,
    rows: &[TraceRow],
    param_names: &[String],
) -> Result<()> {
    use std::io::Write;
    let mut out = String::from("round,block,iter,loss");
    for name in param_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}",
            row.round,
            row.block,
            row.iter,
            fmt_g9(row.loss)
        ));
        for p in &row.params {
            out.push(',');
            out.push_str(&fmt_g9(*p));
        }
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Render the selected sources with `model` under the given seeds, compose,
/// and return the mean critic score. Deterministic given (model, seeds).
pub fn objective_seeded(
    model: &ModelParams,
    sources: &Sources,
    indices: &[usize],
    critic: &Critic,
    seeds: &[u64],
) -> Result<f64> {
    assert_eq!(indices.len(), seeds.len());
    model.validate()?;
    if indices.is_empty() {
        return Err(Error::InvalidParam("no source images selected".into()));
    }
    let scores: Vec<f64> = indices
        .par_iter()
        .zip(seeds)
        .map(|(&i, &seed)| {
            let img = &sources.images[i];
            let depth = sources.depths.map(|d| &d[i]);
            let mut rng = RngStream::new(seed);
            let overlay = model.render(img, depth, &mut rng, sources.mask)?;
            let composed = crate::models::compose(img, &overlay)?;
            Ok(critic.score(&composed)?.value)
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean critic score of the model rendered over every source, with one
/// fresh sub-seed per image drawn from `rng`.
pub fn objective(
    model: &ModelParams,
    sources: &Sources,
    critic: &Critic,
    rng: &mut RngStream,
) -> Result<f64> {
    if sources.is_empty() {
        return Err(Error::InvalidParam("no source images".into()));
    }
    let indices: Vec<usize> = (0..sources.len()).collect();
    let seeds: Vec<u64> = indices.iter().map(|_| rng.next_u64()).collect();
    objective_seeded(model, sources, &indices, critic, &seeds)
}

/// Gradient estimate plus per-component metadata: whether a bound forced a
/// one-sided difference.
#[derive(Debug, Clone)]
pub struct GradientInfo {
    pub grad: Vec<f64>,
    pub one_sided: Vec<bool>,
}

/// Central finite differences of `f`, falling back to a one-sided difference
/// when a bound clips the step. `f` must be deterministic; callers enforce
/// common random numbers by baking the seed list into `f`.
pub fn fd_gradient<F>(
    f: F,
    w: &[f64],
    steps: &[f64],
    bounds: &[(f64, f64)],
    center: Option<f64>,
) -> Result<GradientInfo>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut grad = vec![0.0; w.len()];
    let mut one_sided = vec![false; w.len()];
    let mut center_cache = center;
    for i in 0..w.len() {
        let h = steps[i];
        let (lo, hi) = bounds[i];
        let up_ok = w[i] + h <= hi;
        let down_ok = w[i] - h >= lo;
        let mut probe = w.to_vec();
        grad[i] = match (up_ok, down_ok) {
            (true, true) => {
                probe[i] = w[i] + h;
                let fp = f(&probe)?;
                probe[i] = w[i] - h;
                let fm = f(&probe)?;
                (fp - fm) / (2.0 * h)
            }
            (true, false) => {
                one_sided[i] = true;
                probe[i] = w[i] + h;
                let fp = f(&probe)?;
                let fc = cached_center(&f, w, &mut center_cache)?;
                (fp - fc) / h
            }
            (false, true) => {
                one_sided[i] = true;
                probe[i] = w[i] - h;
                let fm = f(&probe)?;
                let fc = cached_center(&f, w, &mut center_cache)?;
                (fc - fm) / h
            }
            (false, false) => {
                return Err(Error::InvalidParam(format!(
                    "fd step {h} exceeds bounds around component {i}"
                )))
            }
        };
    }
    Ok(GradientInfo { grad, one_sided })
}

fn cached_center<F>(f: &F, w: &[f64], cache: &mut Option<f64>) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if let Some(v) = *cache {
        return Ok(v);
    }
    let v = f(w)?;
    *cache = Some(v);
    Ok(v)
}

/// Gradient of the estimation objective w.r.t. the differentiable block,
/// under common random numbers: one seed list is drawn from `rng` and reused
/// by every objective call.
pub fn param_gradient(
    model: &ModelParams,
    w_d: &[f64],
    sources: &Sources,
    critic: &Critic,
    cfg: &DiffEstimateConfig,
    rng: &mut RngStream,
) -> Result<GradientInfo> {
    cfg.validate(w_d.len())?;
    let indices: Vec<usize> = (0..sources.len()).collect();
    let seeds: Vec<u64> = indices.iter().map(|_| rng.next_u64()).collect();
    let steps: Vec<f64> = cfg
        .fd_step
        .iter()
        .zip(w_d)
        .map(|(s, &v)| s.step_at(v))
        .collect();
    fd_gradient(
        |w| objective_seeded(&model.with_diff(w), sources, &indices, critic, &seeds),
        w_d,
        &steps,
        &cfg.bounds,
        None,
    )
}

/// Result of a differentiable-block descent.
#[derive(Debug, Clone)]
pub struct DiffEstimate {
    /// Best-loss iterate (not necessarily the last).
    pub values: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
}

fn check_finite(loss: f64, context: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss {
            context: context.to_string(),
        })
    }
}

/// Projected gradient descent on the differentiable block with per-step
/// bound clamping and a small step-halving guard when a step would increase
/// the (same-seed) loss. Stops at `max_iters` or when the relative parameter
/// change falls below `tol`. Appends one trace row per step to `trace`,
/// which survives an abort on non-finite loss.
pub fn estimate_differentiable(
    model: &ModelParams,
    sources: &Sources,
    critic: &Critic,
    cfg: &DiffEstimateConfig,
    rng: &mut RngStream,
    round: usize,
    trace: &mut Vec<TraceRow>,
) -> Result<DiffEstimate> {
    if sources.is_empty() {
        return Err(Error::InvalidParam("no source images".into()));
    }
    let mut w = model.diff_values();
    cfg.validate(w.len())?;
    for (v, &(lo, hi)) in w.iter().zip(&cfg.bounds) {
        if *v < lo || *v > hi {
            return Err(Error::InvalidParam(format!(
                "initial value {v} outside bounds [{lo}, {hi}]"
            )));
        }
    }

    let n = sources.len();
    let batch = cfg.batch_size.min(n);

    // Degenerate block: nothing to descend, report the current loss.
    if w.is_empty() {
        let indices: Vec<usize> = (0..batch).collect();
        let seeds: Vec<u64> = (0..batch).map(|_| rng.next_u64()).collect();
        let loss = check_finite(
            objective_seeded(model, sources, &indices, critic, &seeds)?,
            "objective at fixed parameters",
        )?;
        trace.push(TraceRow {
            round,
            block: "diff",
            iter: 0,
            loss,
            params: Vec::new(),
        });
        return Ok(DiffEstimate {
            values: w,
            loss,
            iterations: 0,
        });
    }

    // One frozen seed per source for the entire descent: every objective
    // call anywhere in the run shares them (common random numbers), so the
    // optimizer walks a single deterministic surface instead of chasing
    // per-step render noise.
    let source_seeds: Vec<u64> = (0..n).map(|_| rng.next_u64()).collect();

    let mut best_w = w.clone();
    let mut best_loss = f64::INFINITY;
    let mut iterations = 0;

    for k in 0..cfg.max_iters {
        iterations = k + 1;
        // Rotating deterministic batch.
        let indices: Vec<usize> = (0..batch).map(|i| (k * batch + i) % n).collect();
        let seeds: Vec<u64> = indices.iter().map(|&i| source_seeds[i]).collect();
        let eval = |wv: &[f64]| -> Result<f64> {
            objective_seeded(&model.with_diff(wv), sources, &indices, critic, &seeds)
        };

        let center = check_finite(eval(&w)?, &format!("descent step {k}"))?;
        trace.push(TraceRow {
            round,
            block: "diff",
            iter: k,
            loss: center,
            params: w.clone(),
        });
        if center < best_loss {
            best_loss = center;
            best_w = w.clone();
        }

        let steps: Vec<f64> = cfg
            .fd_step
            .iter()
            .zip(&w)
            .map(|(s, &v)| s.step_at(v))
            .collect();
        let info = fd_gradient(&eval, &w, &steps, &cfg.bounds, Some(center))?;

        // Capped, clamped step, halved up to 4 times if it increases the
        // same-seed loss.
        let mut scale = 1.0;
        let mut w_new = w.clone();
        for _ in 0..=4 {
            for i in 0..w.len() {
                let (lo, hi) = cfg.bounds[i];
                let cap = cfg.step_limit[i];
                let step = (cfg.learning_rate[i] * info.grad[i]).clamp(-cap, cap);
                w_new[i] = (w[i] - scale * step).clamp(lo, hi);
            }
            if check_finite(eval(&w_new)?, &format!("line search at step {k}"))? <= center {
                break;
            }
            scale *= 0.5;
        }

        let delta: f64 = w_new
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        w = w_new;
        if delta / norm < cfg.tol {
            break;
        }
    }

    // Final candidate evaluated on the next batch so the last iterate can win.
    let indices: Vec<usize> = (0..batch).map(|i| (iterations * batch + i) % n).collect();
    let seeds: Vec<u64> = indices.iter().map(|&i| source_seeds[i]).collect();
    let final_loss = check_finite(
        objective_seeded(&model.with_diff(&w), sources, &indices, critic, &seeds)?,
        "final evaluation",
    )?;
    trace.push(TraceRow {
        round,
        block: "diff",
        iter: iterations,
        loss: final_loss,
        params: w.clone(),
    });
    if final_loss < best_loss {
        best_loss = final_loss;
        best_w = w;
    }

    Ok(DiffEstimate {
        values: best_w,
        loss: best_loss,
        iterations,
    })
}
