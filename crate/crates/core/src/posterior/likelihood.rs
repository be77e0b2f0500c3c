//! Gaussian marginal likelihood of the responses and its maximization over
//! the kernel variances, lengthscales and the noise variance.

use std::f64::consts::PI;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::DesignMatrices;
use super::solver::{CovarianceSolver, DenseSolver, SolverPath, WoodburySolver};
use super::{sample_variance, PriorBlocks};
use crate::basis::Subdivision;
use crate::error::Result;
use crate::kernels::Kernel1D;

/// `log N(y; 0, C)` with `C = Ψ Σ Ψᵀ + τ² I`.
pub fn log_marginal_likelihood(
    y: &DVector<f64>,
    dm: &DesignMatrices,
    kernels: &[Kernel1D],
    subdivisions: &[Subdivision],
    tau2: f64,
    path: SolverPath,
) -> Result<f64> {
    let prior = PriorBlocks::new(kernels, subdivisions)?;
    let n = y.len() as f64;
    let solver: Box<dyn CovarianceSolver> = if dm.m == 0 {
        return Ok(-0.5 * y.norm_squared() / tau2 - 0.5 * n * tau2.ln() - 0.5 * n * (2.0 * PI).ln());
    } else if path.use_woodbury(dm.n, dm.m) {
        Box::new(WoodburySolver::from_design(dm, &prior.chol, tau2)?)
    } else {
        Box::new(DenseSolver::from_design(dm, &prior.sigma, tau2)?)
    };
    let alpha = solver.inverse_apply(y);
    Ok(-0.5 * y.dot(&alpha) - 0.5 * solver.log_det() - 0.5 * n * (2.0 * PI).ln())
}

/// Search settings for [`estimate_hyperparameters`]. Bounds on `σ²` and `τ²`
/// are relative to `var(y)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperSearch {
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: u64,
    pub lengthscale: (f64, f64),
    pub variance: (f64, f64),
    pub noise: (f64, f64),
    /// Keeps `τ²` at this value instead of estimating it.
    pub fixed_noise: Option<f64>,
}

impl Default for HyperSearch {
    fn default() -> Self {
        Self {
            restarts: 5,
            seed: 0,
            max_iters: 1500,
            lengthscale: (1e-2, 1e2),
            variance: (1e-6, 1e3),
            noise: (1e-8, 1.0),
            fixed_noise: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperEstimate {
    pub kernels: Vec<Kernel1D>,
    pub noise: f64,
    pub log_likelihood: f64,
    /// Set when no restart produced a finite likelihood.
    pub warning: bool,
}

const PENALTY: f64 = 1e4;

#[derive(Clone)]
struct Objective<'a> {
    y: &'a DVector<f64>,
    dm: &'a DesignMatrices,
    templates: &'a [Kernel1D],
    subdivisions: &'a [Subdivision],
    lower: Vec<f64>,
    upper: Vec<f64>,
    fixed_noise: Option<f64>,
}

impl Objective<'_> {
    fn decode(&self, p: &[f64]) -> (Vec<f64>, f64) {
        let mut excess = 0.0;
        let clamped: Vec<f64> = p
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| {
                let c = v.clamp(lo, hi);
                excess += (v - c).powi(2);
                c
            })
            .collect();
        (clamped, excess)
    }

    fn kernels(&self, q: &[f64]) -> Result<(Vec<Kernel1D>, f64)> {
        let kernels = self
            .templates
            .iter()
            .enumerate()
            .map(|(i, k)| k.with_params(q[2 * i].exp(), q[2 * i + 1].exp()))
            .collect::<Result<Vec<_>>>()?;
        let tau2 = match self.fixed_noise {
            Some(t) => t,
            None => q[2 * self.templates.len()].exp(),
        };
        Ok((kernels, tau2))
    }

    fn negative_lml(&self, p: &[f64]) -> f64 {
        let (q, excess) = self.decode(p);
        let value = self.kernels(&q).and_then(|(k, tau2)| {
            log_marginal_likelihood(self.y, self.dm, &k, self.subdivisions, tau2, SolverPath::Auto)
        });
        match value {
            Ok(v) if v.is_finite() => -v + PENALTY * excess,
            _ => f64::MAX / 4.0,
        }
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.negative_lml(p))
    }
}

/// Maximizes the marginal likelihood over log-parameters with Nelder–Mead
/// from `restarts` log-uniform starting points, run concurrently. The kernel
/// families are taken from `templates`, one per active dimension.
pub fn estimate_hyperparameters(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    active: &[usize],
    subdivisions: &[Subdivision],
    templates: &[Kernel1D],
    search: &HyperSearch,
) -> Result<HyperEstimate> {
    let dm = DesignMatrices::new(x, active, subdivisions)?;
    let var = match sample_variance(y.as_slice()) {
        v if v > 0.0 => v,
        _ => 1.0,
    };
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for _ in templates {
        lower.extend([(search.variance.0 * var).ln(), search.lengthscale.0.ln()]);
        upper.extend([(search.variance.1 * var).ln(), search.lengthscale.1.ln()]);
    }
    if search.fixed_noise.is_none() {
        lower.push((search.noise.0 * var).ln());
        upper.push((search.noise.1 * var).ln());
    }
    let objective = Objective {
        y,
        dm: &dm,
        templates,
        subdivisions,
        lower,
        upper,
        fixed_noise: search.fixed_noise,
    };
    let dim = objective.lower.len();
    if dim == 0 {
        let (kernels, noise) = objective.kernels(&[])?;
        let ll = -objective.negative_lml(&[]);
        return Ok(HyperEstimate {
            kernels,
            noise,
            log_likelihood: ll,
            warning: !ll.is_finite(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let starts: Vec<Vec<f64>> = (0..search.restarts.max(1))
        .map(|_| {
            objective
                .lower
                .iter()
                .zip(&objective.upper)
                .map(|(&lo, &hi)| rng.random_range(lo..=hi))
                .collect()
        })
        .collect();

    let results: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|start| run_nelder_mead(&objective, start, search.max_iters))
        .collect();

    let (best_cost, best) = results
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| lexicographic(&a.1, &b.1)))
        .expect("at least one restart");
    let (q, _) = objective.decode(&best);
    let (kernels, noise) = objective.kernels(&q)?;
    let warning = best_cost >= f64::MAX / 8.0;
    if warning {
        log::warn!("hyperparameter search: every restart failed");
    }
    Ok(HyperEstimate {
        kernels,
        noise,
        log_likelihood: -best_cost,
        warning,
    })
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn run_nelder_mead(objective: &Objective<'_>, start: &[f64], max_iters: u64) -> (f64, Vec<f64>) {
    let mut simplex = vec![start.to_vec()];
    for i in 0..start.len() {
        let mut v = start.to_vec();
        let step = 0.1 * (objective.upper[i] - objective.lower[i]);
        v[i] = if v[i] + step <= objective.upper[i] { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let fallback = (objective.negative_lml(start), start.to_vec());
    let Ok(solver) = NelderMead::new(simplex).with_sd_tolerance(1e-7) else {
        return fallback;
    };
    match Executor::new(objective.clone(), solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
    {
        Ok(res) => {
            let state = res.state();
            match state.get_best_param() {
                Some(p) => (state.get_best_cost(), p.clone()),
                None => fallback,
            }
        }
        Err(_) => fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn dense_lml(y: &DVector<f64>, psi: &DMatrix<f64>, sigma: &DMatrix<f64>, tau2: f64) -> f64 {
        let n = y.len();
        let c = psi * sigma * psi.transpose() + DMatrix::identity(n, n) * tau2;
        let det = c.clone().lu().determinant();
        let alpha = c.lu().solve(y).unwrap();
        -0.5 * y.dot(&alpha) - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * PI).ln()
    }

    #[test]
    fn tiny_problem_matches_dense() {
        let x = DMatrix::from_column_slice(3, 1, &[0.1, 0.5, 0.8]);
        let y = DVector::from_vec(vec![0.3, -0.2, 1.1]);
        let s = vec![Subdivision::base()];
        let k = vec![Kernel1D::matern52(1.3, 0.4).unwrap()];
        let dm = DesignMatrices::new(&x, &[0], &s).unwrap();
        let prior = PriorBlocks::new(&k, &s).unwrap();
        let expect = dense_lml(&y, &dm.psi(), &prior.dense_sigma(), 0.05);
        for path in [SolverPath::Dense, SolverPath::Woodbury, SolverPath::Auto] {
            let v = log_marginal_likelihood(&y, &dm, &k, &s, 0.05, path).unwrap();
            assert_relative_eq!(v, expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn zero_response_leaves_determinant_term() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 0.2, 0.7, 0.9]);
        let y = DVector::zeros(4);
        let s = vec![Subdivision::uniform(3).unwrap()];
        let k = vec![Kernel1D::matern52(0.7, 0.3).unwrap()];
        let dm = DesignMatrices::new(&x, &[0], &s).unwrap();
        let prior = PriorBlocks::new(&k, &s).unwrap();
        let psi = dm.psi();
        let c = &psi * prior.dense_sigma() * psi.transpose() + DMatrix::identity(4, 4) * 0.01;
        let expect = -0.5 * c.lu().determinant().ln() - 2.0 * (2.0 * PI).ln();
        let v = log_marginal_likelihood(&y, &dm, &k, &s, 0.01, SolverPath::Auto).unwrap();
        assert_relative_eq!(v, expect, max_relative = 1e-10);
    }

    fn synthetic(alpha: f64) -> (DMatrix<f64>, DVector<f64>) {
        let n = 60;
        let x = DMatrix::from_fn(n, 1, |a, _| (a as f64 + 0.5) / n as f64);
        let y = DVector::from_fn(n, |a, _| alpha * (6.0 * x[(a, 0)]).sin());
        (x, y)
    }

    #[test]
    fn variance_scales_with_response() {
        let s = vec![Subdivision::uniform(15).unwrap()];
        let t = vec![Kernel1D::matern52(1.0, 1.0).unwrap()];
        let search = HyperSearch {
            fixed_noise: Some(1e-6),
            ..HyperSearch::default()
        };
        let (x, y) = synthetic(1.0);
        let base = estimate_hyperparameters(&x, &y, &[0], &s, &t, &search).unwrap();
        let (x, y) = synthetic(3.0);
        let scaled = estimate_hyperparameters(&x, &y, &[0], &s, &t, &search).unwrap();
        assert!(!base.warning && !scaled.warning);
        let ratio = scaled.kernels[0].variance() / base.kernels[0].variance();
        assert!((ratio / 9.0 - 1.0).abs() <= 0.2, "ratio {ratio}");
    }

    #[test]
    fn estimation_beats_a_poor_guess() {
        let (x, y) = synthetic(1.0);
        let s = vec![Subdivision::uniform(10).unwrap()];
        let t = vec![Kernel1D::matern52(1.0, 1.0).unwrap()];
        let est = estimate_hyperparameters(&x, &y, &[0], &s, &t, &HyperSearch::default()).unwrap();
        let dm = DesignMatrices::new(&x, &[0], &s).unwrap();
        let poor = [Kernel1D::matern52(1e-3, 50.0).unwrap()];
        let guess = log_marginal_likelihood(&y, &dm, &poor, &s, 0.1, SolverPath::Auto).unwrap();
        assert!(est.log_likelihood > guess);
        let again = log_marginal_likelihood(&y, &dm, &est.kernels, &s, est.noise, SolverPath::Auto).unwrap();
        assert_relative_eq!(again, est.log_likelihood, max_relative = 1e-9);
    }
}
