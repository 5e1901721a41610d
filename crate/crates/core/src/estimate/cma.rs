//! CMA-ES for the non-differentiable parameter block.
//!
//! Standard (mu/mu_w, lambda) covariance matrix adaptation with cumulative
//! step-size control, following Hansen's tutorial formulation. The ask/tell
//! split keeps fitness evaluation outside: `ask` samples a population from
//! N(mean, sigma^2 C) with resample-then-clamp bounds handling, `tell`
//! updates mean, evolution paths, covariance and step size from the ranked
//! fitnesses.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Default population size.
pub const DEFAULT_POPULATION: usize = 10;

/// Full optimizer state. Covariance stays symmetric positive-definite; its
/// eigendecomposition is refreshed after every update.
#[derive(Debug, Clone)]
pub struct CmaState {
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    path_c: DVector<f64>,
    path_sigma: DVector<f64>,
    generation: usize,
    lambda: usize,
    bounds: Vec<(f64, f64)>,
    best: Option<(Vec<f64>, f64)>,

    // Sampling transform B * diag(sqrt(eig)) and whitening C^{-1/2}.
    sample_transform: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,

    // Strategy constants, fixed at construction.
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_c: f64,
    c_sigma: f64,
    c1: f64,
    c_mu: f64,
    d_sigma: f64,
    chi_n: f64,
}

impl CmaState {
    /// Start at `mean` with isotropic covariance and step size `sigma`.
    /// Bounds are enforced during `ask`.
    pub fn new(mean: Vec<f64>, sigma: f64, lambda: usize, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidParam("empty CMA-ES search space".into()));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidParam("sigma_cma must be > 0".into()));
        }
        if lambda < 2 {
            return Err(Error::InvalidParam("population size must be >= 2".into()));
        }
        if bounds.len() != n || bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidParam("bad CMA-ES bounds".into()));
        }
        let nf = n as f64;
        let mu = lambda / 2;
        let mut weights: Vec<f64> = (0..mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
            .collect();
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

        Ok(CmaState {
            mean: DVector::from_vec(mean),
            sigma,
            cov: DMatrix::identity(n, n),
            path_c: DVector::zeros(n),
            path_sigma: DVector::zeros(n),
            generation: 0,
            lambda,
            bounds,
            best: None,
            sample_transform: DMatrix::identity(n, n),
            inv_sqrt: DMatrix::identity(n, n),
            mu,
            weights,
            mu_eff,
            c_c,
            c_sigma,
            c1,
            c_mu,
            d_sigma,
            chi_n,
        })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self) -> Vec<f64> {
        self.mean.iter().copied().collect()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Best candidate ever told, with its fitness.
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(v, f)| (v.as_slice(), *f))
    }

    pub fn min_covariance_eigenvalue(&self) -> f64 {
        // sample_transform columns are B_i * sqrt(eig_i).
        (0..self.dimension())
            .map(|i| self.sample_transform.column(i).norm_squared())
            .fold(f64::INFINITY, f64::min)
    }

    fn in_bounds(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    /// Sample the population: `lambda` draws from N(mean, sigma^2 C),
    /// resampled up to 100 times to respect bounds, then clamped.
    pub fn ask(&self, rng: &mut RngStream) -> Vec<Vec<f64>> {
        let n = self.dimension();
        (0..self.lambda)
            .map(|_| {
                let mut candidate = DVector::zeros(n);
                for _try in 0..100 {
                    let z = DVector::from_fn(n, |_, _| rng.normal());
                    candidate = &self.mean + self.sigma * (&self.sample_transform * z);
                    if self.in_bounds(&candidate) {
                        return candidate.iter().copied().collect();
                    }
                }
                for (v, &(lo, hi)) in candidate.iter_mut().zip(&self.bounds) {
                    *v = v.clamp(lo, hi);
                }
                candidate.iter().copied().collect()
            })
            .collect()
    }

    /// Rank the population by fitness and apply the standard CMA-ES update.
    pub fn tell(&mut self, population: &[Vec<f64>], fitnesses: &[f64]) -> Result<()> {
        let n = self.dimension();
        if population.len() != self.lambda || fitnesses.len() != self.lambda {
            return Err(Error::InvalidParam(format!(
                "expected population of {}, got {}",
                self.lambda,
                population.len()
            )));
        }
        if fitnesses.iter().any(|f| !f.is_finite()) {
            return Err(Error::NonFiniteLoss {
                context: "CMA-ES fitness".into(),
            });
        }

        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| fitnesses[a].total_cmp(&fitnesses[b]));

        let best_idx = order[0];
        if self
            .best
            .as_ref()
            .is_none_or(|(_, f)| fitnesses[best_idx] < *f)
        {
            self.best = Some((population[best_idx].clone(), fitnesses[best_idx]));
        }

        // Weighted mean of the selected steps, y_i = (x_i - m) / sigma.
        let selected: Vec<DVector<f64>> = order[..self.mu]
            .iter()
            .map(|&i| {
                (DVector::from_vec(population[i].clone()) - &self.mean) / self.sigma
            })
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in self.weights.iter().zip(&selected) {
            y_w += *w * y;
        }

        // Step-size path uses the whitened step.
        let csn = (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();
        self.path_sigma = (1.0 - self.c_sigma) * &self.path_sigma + csn * (&self.inv_sqrt * &y_w);

        let expected_decay =
            (1.0 - (1.0 - self.c_sigma).powi(2 * (self.generation as i32 + 1))).sqrt();
        let h_sigma = if self.path_sigma.norm() / expected_decay / self.chi_n
            < 1.4 + 2.0 / (n as f64 + 1.0)
        {
            1.0
        } else {
            0.0
        };

        let ccn = (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt();
        self.path_c = (1.0 - self.c_c) * &self.path_c + h_sigma * ccn * &y_w;

        // Covariance: decay, rank-one, rank-mu.
        let delta_h = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c);
        let mut cov = (1.0 - self.c1 - self.c_mu + self.c1 * delta_h) * &self.cov;
        cov += self.c1 * (&self.path_c * self.path_c.transpose());
        for (w, y) in self.weights.iter().zip(&selected) {
            cov += self.c_mu * *w * (y * y.transpose());
        }
        // Force exact symmetry against accumulation drift.
        self.cov = 0.5 * (&cov + cov.transpose());

        self.mean += self.sigma * &y_w;
        self.sigma *=
            ((self.c_sigma / self.d_sigma) * (self.path_sigma.norm() / self.chi_n - 1.0)).exp();
        self.generation += 1;

        self.refresh_decomposition();
        Ok(())
    }

    /// Recompute B*sqrt(D) and C^{-1/2}; on a failed or degenerate
    /// decomposition the covariance resets to identity.
    fn refresh_decomposition(&mut self) {
        let n = self.dimension();
        let eig = nalgebra::SymmetricEigen::try_new(self.cov.clone(), 1e-14, 256);
        let valid = eig.as_ref().is_some_and(|e| {
            e.eigenvalues.iter().all(|v| v.is_finite() && *v > 0.0)
                && e.eigenvectors.iter().all(|v| v.is_finite())
        });
        let Some(eig) = eig.filter(|_| valid) else {
            log::warn!("CMA-ES covariance decomposition failed; resetting to identity");
            self.cov = DMatrix::identity(n, n);
            self.sample_transform = DMatrix::identity(n, n);
            self.inv_sqrt = DMatrix::identity(n, n);
            return;
        };
        let basis = eig.eigenvectors;
        let sqrt_eig = eig.eigenvalues.map(|v| v.sqrt());
        let mut transform = basis.clone();
        let mut whiten = basis.clone();
        for i in 0..n {
            let s = sqrt_eig[i];
            for r in 0..n {
                transform[(r, i)] = basis[(r, i)] * s;
                whiten[(r, i)] = basis[(r, i)] / s;
            }
        }
        self.sample_transform = transform;
        self.inv_sqrt = &whiten * basis.transpose();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn run_sphere(dim: usize, lambda: usize, seed: u64, generations: usize) -> f64 {
        let bounds = vec![(-10.0, 10.0); dim];
        let mut state = CmaState::new(vec![3.0; dim], 2.0, lambda, bounds).unwrap();
        let mut rng = RngStream::new(seed);
        for _ in 0..generations {
            let pop = state.ask(&mut rng);
            let fits: Vec<f64> = pop.iter().map(|c| sphere(c)).collect();
            state.tell(&pop, &fits).unwrap();
            if state.best().unwrap().1 < 1e-9 {
                break;
            }
        }
        state.best().unwrap().1
    }

    #[test]
    fn sphere_5d_converges_within_200_generations() {
        for seed in 1..=5 {
            let best = run_sphere(5, 10, seed, 200);
            assert!(best < 1e-6, "seed {seed}: best fitness {best}");
        }
    }

    #[test]
    fn tiny_sigma_candidates_collapse_to_mean() {
        let mean = vec![0.4, -0.2, 1.0];
        let state = CmaState::new(mean.clone(), 1e-12, 10, vec![(-5.0, 5.0); 3]).unwrap();
        let pop = state.ask(&mut RngStream::new(3));
        for cand in pop {
            for (c, m) in cand.iter().zip(&mean) {
                assert!((c - m).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ask_is_deterministic() {
        let state = CmaState::new(vec![0.0; 4], 1.0, 10, vec![(-3.0, 3.0); 4]).unwrap();
        let a = state.ask(&mut RngStream::new(5));
        let b = state.ask(&mut RngStream::new(5));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_covariance_matches_requested() {
        // Empirical covariance over many draws approximates sigma^2 C.
        let sigma = 0.7;
        let state = CmaState::new(vec![0.0; 3], sigma, 10, vec![(-50.0, 50.0); 3]).unwrap();
        let mut rng = RngStream::new(11);
        let draws = 10_000;
        let mut sum = DVector::<f64>::zeros(3);
        let mut outer = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..draws / 10 {
            for cand in state.ask(&mut rng) {
                let v = DVector::from_vec(cand);
                sum += &v;
                outer += &v * v.transpose();
            }
        }
        let nf = draws as f64;
        let mean = sum / nf;
        let emp = outer / nf - &mean * mean.transpose();
        let expected = sigma * sigma * DMatrix::<f64>::identity(3, 3);
        let rel = (&emp - &expected).norm() / expected.norm();
        assert!(rel < 0.05, "empirical covariance off by {rel}");
    }

    #[test]
    fn candidates_respect_bounds() {
        let bounds = vec![(-0.5, 0.5), (0.0, 0.1)];
        let state = CmaState::new(vec![0.0, 0.05], 2.0, 20, bounds.clone()).unwrap();
        let mut rng = RngStream::new(9);
        for _ in 0..20 {
            for cand in state.ask(&mut rng) {
                for (v, (lo, hi)) in cand.iter().zip(&bounds) {
                    assert!(v >= lo && v <= hi);
                }
            }
        }
    }

    #[test]
    fn mean_step_bounded_at_symmetric_optimum() {
        // Selection on a symmetric quadratic centered at the mean favors
        // small steps, so one generation moves the mean by less than sigma.
        let sigma = 0.5;
        let mut state = CmaState::new(vec![0.0, 0.0], sigma, 10, vec![(-5.0, 5.0); 2]).unwrap();
        let before = state.mean();
        let pop = state.ask(&mut RngStream::new(21));
        let fits: Vec<f64> = pop.iter().map(|c| sphere(c)).collect();
        state.tell(&pop, &fits).unwrap();
        let after = state.mean();
        let step: f64 = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(step <= sigma, "mean moved {step} > sigma {sigma}");
    }

    #[test]
    fn best_fitness_is_monotone() {
        let mut state = CmaState::new(vec![2.0; 4], 1.0, 10, vec![(-10.0, 10.0); 4]).unwrap();
        let mut rng = RngStream::new(2);
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let pop = state.ask(&mut rng);
            let fits: Vec<f64> = pop.iter().map(|c| sphere(c)).collect();
            state.tell(&pop, &fits).unwrap();
            let best = state.best().unwrap().1;
            assert!(best <= prev);
            prev = best;
        }
    }

    #[test]
    fn covariance_stays_positive_definite() {
        let mut state = CmaState::new(vec![1.0; 3], 0.8, 10, vec![(-10.0, 10.0); 3]).unwrap();
        let mut rng = RngStream::new(6);
        for _ in 0..100 {
            let pop = state.ask(&mut rng);
            // Rosenbrock-ish coupling stresses the covariance update.
            let fits: Vec<f64> = pop
                .iter()
                .map(|c| {
                    (0..2)
                        .map(|i| {
                            100.0 * (c[i + 1] - c[i] * c[i]).powi(2) + (1.0 - c[i]).powi(2)
                        })
                        .sum()
                })
                .collect();
            state.tell(&pop, &fits).unwrap();
            assert!(
                state.min_covariance_eigenvalue() > 0.0,
                "covariance lost positive definiteness at generation {}",
                state.generation()
            );
            // Symmetry is maintained exactly.
            let c = state.covariance();
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(c[(i, j)], c[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn non_finite_fitness_rejected() {
        let mut state = CmaState::new(vec![0.0; 2], 1.0, 4, vec![(-1.0, 1.0); 2]).unwrap();
        let pop = state.ask(&mut RngStream::new(1));
        let fits = vec![1.0, f64::NAN, 0.5, 2.0];
        assert!(state.tell(&pop, &fits).is_err());
    }

    #[test]
    fn bad_construction_rejected() {
        assert!(CmaState::new(vec![], 1.0, 10, vec![]).is_err());
        assert!(CmaState::new(vec![0.0], 0.0, 10, vec![(-1.0, 1.0)]).is_err());
        assert!(CmaState::new(vec![0.0], 1.0, 1, vec![(-1.0, 1.0)]).is_err());
        assert!(CmaState::new(vec![0.0], 1.0, 10, vec![(2.0, 1.0)]).is_err());
    }
}
