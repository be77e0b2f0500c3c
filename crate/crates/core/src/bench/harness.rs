//! Replicated fit-and-score runs producing one results row per seed.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{DesignSpec, RandomLhd, DesignGenerator};
use super::targets::{build_target, Target, TargetSpec};
use super::q_squared;
use crate::error::{Error, Result};
use crate::kernels::Kernel1D;
use crate::model::{fit, AdditiveFunction, ConstraintSpec, FitConfig, KnotSpec};
use crate::posterior::{Dataset, HyperSearch, SolverPath};
use crate::sampler::{posterior_mean_function, sample_chains, HmcConfig, Whitened};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub target: TargetSpec,
    pub design: DesignSpec,
    /// Training size; `2 d` when absent.
    pub n: Option<usize>,
    /// Knots per active input.
    pub knots: usize,
    pub seeds: Vec<u64>,
    /// Size cap of the seed-0 LHD test set.
    pub test_budget: usize,
    /// Score on a full factorial grid with this many levels per input instead.
    pub grid_levels: Option<usize>,
    pub family: String,
    pub variance: f64,
    pub lengthscale: f64,
    pub noise: f64,
    /// Estimate kernels and noise instead of using the fixed values.
    pub estimate: bool,
    pub search: HyperSearch,
    pub constraints: ConstraintSpec,
    /// Subtract the training mean first; off by default, giving zero-mean priors.
    pub center: bool,
    pub solver: SolverPath,
    /// Sampler settings for the cGP mean; `n_samples = 0` skips sampling.
    pub hmc: HmcConfig,
    pub chains: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            target: TargetSpec {
                name: "modatan".into(),
                d: Some(10),
                ..TargetSpec::default()
            },
            design: DesignSpec::default(),
            n: None,
            knots: 5,
            seeds: (0..5).collect(),
            test_budget: 100_000,
            grid_levels: None,
            family: "matern52".into(),
            variance: 1.0,
            lengthscale: 2.0,
            noise: 1e-4,
            estimate: false,
            search: HyperSearch::default(),
            constraints: ConstraintSpec::default(),
            center: false,
            solver: SolverPath::Auto,
            hmc: HmcConfig {
                n_samples: 0,
                ..HmcConfig::default()
            },
            chains: 1,
        }
    }
}

/// One results row. Q² and timing of the mean are `NaN` when sampling is skipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub wall_time_mode: f64,
    pub wall_time_mean: f64,
    pub q2_gp_mean: f64,
    pub q2_cgp_mode: f64,
    pub q2_cgp_mean: f64,
}

/// All points of the `levels^d` grid with coordinates `k / (levels − 1)`.
pub fn factorial_grid(levels: usize, d: usize) -> Result<DMatrix<f64>> {
    if levels < 2 {
        return Err(Error::Config("grid needs at least two levels".into()));
    }
    let total = levels
        .checked_pow(d as u32)
        .filter(|&t| t <= 50_000_000)
        .ok_or_else(|| Error::Config(format!("{levels}^{d} grid is too large")))?;
    let mut x = DMatrix::zeros(total, d);
    for r in 0..total {
        let mut k = r;
        for j in 0..d {
            x[(r, j)] = (k % levels) as f64 / (levels - 1) as f64;
            k /= levels;
        }
    }
    Ok(x)
}

pub fn evaluate_rows(target: &dyn Target, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let rows: Vec<f64> = (0..x.nrows())
        .into_par_iter()
        .map(|i| target.eval(&x.row(i).iter().copied().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    Ok(DVector::from_vec(rows))
}

pub fn labelled(target: &dyn Target, x: DMatrix<f64>) -> Result<Dataset> {
    let y = evaluate_rows(target, &x)?;
    Dataset::new(x, y)
}

impl BenchmarkConfig {
    pub fn test_set(&self, target: &dyn Target) -> Result<Dataset> {
        let d = target.dim();
        let x = match self.grid_levels {
            Some(l) => factorial_grid(l, d)?,
            None => RandomLhd.generate(self.test_budget.clamp(2, 100_000), d, 0)?,
        };
        labelled(target, x)
    }

    fn fit_config(&self, d: usize) -> Result<FitConfig> {
        let kernel = Kernel1D::by_name(&self.family, self.variance, self.lengthscale)?;
        Ok(FitConfig {
            active: None,
            knots: KnotSpec::Uniform(self.knots),
            constraints: self.constraints.clone(),
            family: self.family.clone(),
            kernels: (!self.estimate).then(|| vec![kernel; d]),
            noise: (!self.estimate).then_some(self.noise),
            search: self.search.clone(),
            center: self.center,
            solver: self.solver,
        })
    }
}

fn score(f: &AdditiveFunction, test: &Dataset) -> Result<f64> {
    let pred = f.eval_rows(&test.x)?;
    q_squared(pred.as_slice(), test.y.as_slice())
}

/// Fits one replicate and scores it on `test`.
pub fn run_one(cfg: &BenchmarkConfig, target: &dyn Target, test: &Dataset, seed: u64) -> Result<BenchRow> {
    let d = target.dim();
    let n = cfg.n.unwrap_or(2 * d);
    let train = labelled(target, cfg.design.generate(n, d, seed)?)?;
    let fitted = fit(&train, &cfg.fit_config(d)?)?;
    let mode = fitted.state.mode_function();
    let gp_mean = AdditiveFunction::from_flat(
        mode.intercept,
        mode.active.clone(),
        mode.subdivisions.clone(),
        fitted.posterior.mean.as_slice(),
    )?;
    let (wall_time_mean, q2_cgp_mean) = if cfg.hmc.n_samples > 0 {
        let t0 = Instant::now();
        let w = Whitened::from_posterior(&fitted.posterior)?;
        let init = w.interior_point(&fitted.qp.x)?;
        let hmc = HmcConfig {
            seed: cfg.hmc.seed.wrapping_add(seed.wrapping_mul(1000)),
            ..cfg.hmc.clone()
        };
        let samples = sample_chains(&w, &init, &hmc, cfg.chains)?;
        let mean = posterior_mean_function(&samples, &mode)?;
        (t0.elapsed().as_secs_f64(), score(&mean, test)?)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(BenchRow {
        d,
        m: cfg.knots,
        n,
        seed,
        wall_time_mode: fitted.mode_seconds,
        wall_time_mean,
        q2_gp_mean: score(&gp_mean, test)?,
        q2_cgp_mode: score(&mode, test)?,
        q2_cgp_mean,
    })
}

/// Runs every seed concurrently; rows come back in the order of `cfg.seeds`.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<BenchRow>> {
    let target = build_target(&cfg.target)?;
    let test = cfg.test_set(target.as_ref())?;
    cfg.seeds
        .par_iter()
        .map(|&s| run_one(cfg, target.as_ref(), &test, s))
        .collect()
}

pub fn write_rows<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
