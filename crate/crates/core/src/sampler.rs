//! Exact Hamiltonian Monte Carlo for `N(μ, Σ)` truncated to `a_k·x ≥ b_k`.
//!
//! The chain runs in whitened coordinates `x = μ + R z`, `Σ = R Rᵀ`, where the
//! target is `N(0, I)` restricted to `F z + g ≥ 0` with `F_k = a_k R` and
//! `g_k = a_k·μ − b_k`. Trajectories `z(t) = v sin t + z₀ cos t` are followed
//! exactly and reflected off the walls they hit.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::StackedConstraints;
use crate::error::{Error, Result};
use crate::linalg::cholesky_jittered_from;
use crate::model::AdditiveFunction;
use crate::posterior::TruncatedPosterior;

/// Root-finding tolerance on hit times.
const TIME_TOL: f64 = 1e-12;
/// Wall bounces allowed in one trajectory.
pub const MAX_BOUNCES: usize = 10_000;
/// Distance the default initial point is pushed off the active walls.
pub const INTERIOR_PUSH: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub travel_time: f64,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            burn_in: 100,
            travel_time: FRAC_PI_2,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.travel_time > 0.0 && self.travel_time <= PI) {
            return Err(Error::Config(format!(
                "travel time must lie in (0, π], got {}",
                self.travel_time
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SampleSet {
    /// One draw per row.
    pub samples: DMatrix<f64>,
    /// Wall bounces of the trajectory that produced each draw.
    pub bounces: Vec<usize>,
    /// Trajectories whose end point failed the feasibility check and were discarded.
    pub rejected: usize,
    /// Largest relative change of `|z|² + |ż|²` seen at any bounce.
    pub max_energy_drift: f64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn mean(&self) -> DVector<f64> {
        self.samples.row_mean().transpose()
    }

    pub fn variance(&self) -> DVector<f64> {
        self.samples.row_variance().transpose()
    }

    /// Stacks sets row-wise in the given order.
    pub fn concat(sets: Vec<SampleSet>) -> SampleSet {
        let cols = sets.first().map(|s| s.samples.ncols()).unwrap_or(0);
        let rows: usize = sets.iter().map(SampleSet::len).sum();
        let mut samples = DMatrix::zeros(rows, cols);
        let mut bounces = Vec::with_capacity(rows);
        let (mut rejected, mut drift, mut off) = (0, 0.0f64, 0);
        for s in sets {
            samples.view_mut((off, 0), s.samples.shape()).copy_from(&s.samples);
            off += s.len();
            bounces.extend(s.bounces);
            rejected += s.rejected;
            drift = drift.max(s.max_energy_drift);
        }
        SampleSet {
            samples,
            bounces,
            rejected,
            max_energy_drift: drift,
        }
    }
}

/// The whitened problem shared by all chains on one posterior.
pub struct Whitened {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    f: DMatrix<f64>,
    g: DVector<f64>,
    gram: DMatrix<f64>,
    constraints: StackedConstraints,
}

impl Whitened {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>, constraints: StackedConstraints) -> Result<Self> {
        let chol = cholesky_jittered_from(cov, None, 0.0, "posterior covariance")?.l();
        let q = constraints.len();
        let m = mean.len();
        let mut f = DMatrix::zeros(q, m);
        for (k, row) in constraints.rows.iter().enumerate() {
            for &(j, a) in &row.entries {
                for c in 0..=j {
                    f[(k, c)] += a * chol[(j, c)];
                }
            }
        }
        let g = DVector::from_iterator(
            q,
            constraints
                .rows
                .iter()
                .zip(&constraints.rhs)
                .map(|(r, b)| r.dot(mean.as_slice()) - b),
        );
        let gram = &f * f.transpose();
        Ok(Self {
            mean,
            chol,
            f,
            g,
            gram,
            constraints,
        })
    }

    pub fn from_posterior(post: &TruncatedPosterior) -> Result<Self> {
        Self::new(post.mean.clone(), &post.cov, post.stacked())
    }

    pub fn to_original(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.chol * z
    }

    pub fn to_whitened(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol
            .solve_lower_triangular(&(x - &self.mean))
            .expect("nonsingular factor")
    }

    fn slacks(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.f * z + &self.g
    }

    /// Pushes `x` strictly inside: along the least-norm direction that raises
    /// every nearly active row by one unit, scaled until all slacks are positive.
    pub fn interior_point(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let cons = &self.constraints;
        let slack = cons.slacks(x.as_slice());
        let scale = 1.0 + x.amax();
        let near: Vec<usize> = (0..cons.len())
            .filter(|&k| slack[k] <= INTERIOR_PUSH * scale)
            .collect();
        let strictly_inside = |p: &DVector<f64>| {
            let z = self.to_whitened(p);
            let whitened_ok = self.slacks(&z).iter().all(|&s| s > 0.0);
            whitened_ok && cons.slacks(p.as_slice()).iter().all(|&s| s > 0.0)
        };
        if near.is_empty() && strictly_inside(x) {
            return Ok(x.clone());
        }
        let a = DMatrix::from_fn(near.len(), x.len(), |i, j| {
            cons.rows[near[i]]
                .entries
                .iter()
                .filter(|(c, _)| *c == j)
                .map(|(_, v)| v)
                .sum::<f64>()
        });
        let aat = &a * a.transpose();
        let ones = DVector::from_element(near.len(), 1.0);
        let target: DVector<f64> = ones
            - DVector::from_iterator(near.len(), near.iter().map(|&k| slack[k].min(0.0)));
        let dir = match cholesky_jittered_from(&aat, None, 0.0, "active rows") {
            Ok(c) => a.transpose() * c.solve(&target),
            Err(_) => a.transpose() * target,
        };
        let dir_scale = dir.amax().max(f64::MIN_POSITIVE);
        for exp in 0..8 {
            let step = INTERIOR_PUSH * 10f64.powi(exp) * scale / dir_scale;
            let p = x + &dir * step;
            if strictly_inside(&p) {
                return Ok(p);
            }
        }
        Err(Error::NoInteriorPoint)
    }
}

struct Chain<'a> {
    w: &'a Whitened,
    z: DVector<f64>,
    rng: ChaCha8Rng,
    travel: f64,
    drift: f64,
}

impl Chain<'_> {
    /// One trajectory of length `travel`; returns the bounce count, or `None`
    /// when the end point failed the feasibility check and the move was undone.
    fn step(&mut self) -> Result<Option<usize>> {
        let w = self.w;
        let m = self.z.len();
        let mut a: DVector<f64> = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut self.rng));
        let mut b = self.z.clone();
        let mut fa = &w.f * &a;
        let mut fb = &w.f * &b;
        let mut remaining = self.travel;
        let mut last: Option<usize> = None;
        let mut bounces = 0;
        loop {
            let mut hit: Option<(f64, usize)> = None;
            for k in 0..fa.len() {
                let u = fa[k].hypot(fb[k]);
                let g = w.g[k];
                if u <= g.abs() || u == 0.0 {
                    continue;
                }
                let phi = fa[k].atan2(fb[k]);
                let mut t = (phi + (-g / u).acos()).rem_euclid(TAU);
                if Some(k) == last && (t < TIME_TOL || TAU - t < TIME_TOL) {
                    continue;
                }
                if TAU - t < TIME_TOL {
                    t = 0.0;
                }
                if t < remaining && hit.is_none_or(|(best, _)| t < best) {
                    hit = Some((t, k));
                }
            }
            let Some((t, k)) = hit else {
                let (s, c) = remaining.sin_cos();
                let end = &a * s + &b * c;
                let slack = &w.f * &end + &w.g;
                if slack.iter().any(|&v| v < -1e-10 * (1.0 + w.g.amax())) {
                    return Ok(None);
                }
                self.z = end;
                return Ok(Some(bounces));
            };
            bounces += 1;
            if bounces > MAX_BOUNCES {
                return Err(Error::TooManyBounces(bounces));
            }
            let energy = a.norm_squared() + b.norm_squared();
            let (s, c) = t.sin_cos();
            let pos = &a * s + &b * c;
            let mut vel = &a * c - &b * s;
            let fpos = &fa * s + &fb * c;
            let mut fvel = &fa * c - &fb * s;
            let coef = 2.0 * fvel[k] / w.gram[(k, k)];
            vel.axpy(-coef, &w.f.row(k).transpose(), 1.0);
            fvel.axpy(-coef, &w.gram.column(k), 1.0);
            a = vel;
            b = pos;
            fa = fvel;
            fb = fpos;
            let after = a.norm_squared() + b.norm_squared();
            self.drift = self.drift.max((after - energy).abs() / energy.max(f64::MIN_POSITIVE));
            remaining -= t;
            last = Some(k);
        }
    }
}

/// Draws from the truncated Gaussian starting at `init`, which must be
/// strictly feasible.
pub fn sample_truncated(w: &Whitened, init: &DVector<f64>, cfg: &HmcConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let z0 = w.to_whitened(init);
    if w.slacks(&z0).iter().any(|&s| s <= 0.0) {
        return Err(Error::NoInteriorPoint);
    }
    let m = init.len();
    let mut chain = Chain {
        w,
        z: z0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        travel: cfg.travel_time,
        drift: 0.0,
    };
    let mut rejected = 0;
    for _ in 0..cfg.burn_in {
        if chain.step()?.is_none() {
            rejected += 1;
        }
    }
    let mut samples = DMatrix::zeros(cfg.n_samples, m);
    let mut bounces = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let n = match chain.step()? {
            Some(n) => n,
            None => {
                rejected += 1;
                0
            }
        };
        bounces.push(n);
        let x = w.to_original(&chain.z);
        samples.row_mut(i).copy_from(&x.transpose());
    }
    Ok(SampleSet {
        samples,
        bounces,
        rejected,
        max_energy_drift: chain.drift,
    })
}

/// Runs `chains` independent chains (seeds `seed, seed + 1, …`) concurrently
/// and stacks their draws in chain order. `n_samples` is per chain.
pub fn sample_chains(w: &Whitened, init: &DVector<f64>, cfg: &HmcConfig, chains: usize) -> Result<SampleSet> {
    let sets = (0..chains.max(1) as u64)
        .into_par_iter()
        .map(|c| {
            let cfg = HmcConfig {
                seed: cfg.seed.wrapping_add(c),
                ..cfg.clone()
            };
            sample_truncated(w, init, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet::concat(sets))
}

/// Sample-average coefficients plugged into the hat-basis expansion.
pub fn posterior_mean_function(samples: &SampleSet, template: &AdditiveFunction) -> Result<AdditiveFunction> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mean = samples.mean();
    AdditiveFunction::from_flat(
        template.intercept,
        template.active.clone(),
        template.subdivisions.clone(),
        mean.as_slice(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Subdivision;
    use crate::constraints::{ConstraintKind, LinearSystem, SparseRow};
    use rand::Rng;

    fn half_line() -> Whitened {
        let sys = LinearSystem {
            ncols: 1,
            rows: vec![SparseRow { entries: vec![(0, 1.0)] }],
            lower: vec![0.0],
            upper: vec![f64::INFINITY],
        };
        Whitened::new(
            DVector::zeros(1),
            &DMatrix::identity(1, 1),
            StackedConstraints::from_systems(&[sys]),
        )
        .unwrap()
    }

    #[test]
    fn truncated_standard_normal_mean() {
        let w = half_line();
        let init = w.interior_point(&DVector::zeros(1)).unwrap();
        assert!(init[0] > 0.0);
        let cfg = HmcConfig {
            n_samples: 100_000,
            seed: 11,
            ..HmcConfig::default()
        };
        let s = sample_truncated(&w, &init, &cfg).unwrap();
        assert!(s.samples.iter().all(|&v| v >= -1e-9));
        assert!((s.mean()[0] - (2.0 / PI).sqrt()).abs() < 0.01, "{}", s.mean()[0]);
        assert!((s.variance()[0] - (1.0 - 2.0 / PI)).abs() < 0.02);
        assert!(s.max_energy_drift <= 1e-6);
    }

    #[test]
    fn unconstrained_mean_within_monte_carlo_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 4;
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose() + DMatrix::identity(m, m) * 0.1;
        let mean = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let w = Whitened::new(mean.clone(), &cov, StackedConstraints::default().with_ncols(m)).unwrap();
        let cfg = HmcConfig {
            n_samples: 5000,
            seed: 2,
            ..HmcConfig::default()
        };
        let s = sample_truncated(&w, &mean, &cfg).unwrap();
        let band = 3.0 * (cov.diagonal().max() / cfg.n_samples as f64).sqrt();
        assert!((s.mean() - &mean).amax() <= band);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let s = Subdivision::uniform(5).unwrap();
        let sys = ConstraintKind::NonDecreasing.encode(&s).unwrap();
        let cons = StackedConstraints::from_systems(&[sys]);
        let mean = DVector::from_vec(vec![0.3, 0.1, 0.2, -0.1, 0.5]);
        let w = Whitened::new(mean, &(DMatrix::identity(5, 5) * 0.3), cons).unwrap();
        let init = w.interior_point(&DVector::from_vec(vec![0.0, 0.1, 0.1, 0.2, 0.5])).unwrap();
        let cfg = HmcConfig {
            n_samples: 300,
            seed: 9,
            ..HmcConfig::default()
        };
        let a = sample_truncated(&w, &init, &cfg).unwrap();
        let b = sample_truncated(&w, &init, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.bounces, b.bounces);
        assert!(a.bounces.iter().any(|&n| n > 0));
        assert!(a.max_energy_drift <= 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..a.len() {
            let row: Vec<f64> = a.samples.row(i).iter().copied().collect();
            assert!(w.constraints.slacks(&row).iter().all(|&v| v >= -1e-9));
            let j = rng.random_range(0..a.len());
            let lam: f64 = rng.random();
            let mix: Vec<f64> = (0..5).map(|c| lam * a.samples[(i, c)] + (1.0 - lam) * a.samples[(j, c)]).collect();
            assert!(w.constraints.slacks(&mix).iter().all(|&v| v >= -1e-9));
        }
        let chains = sample_chains(&w, &init, &cfg, 3).unwrap();
        assert_eq!(chains.len(), 900);
        assert_eq!(chains.samples.rows(0, 300), a.samples.rows(0, 300));
    }

    #[test]
    fn rejects_infeasible_start_and_bad_config() {
        let w = half_line();
        assert!(matches!(
            sample_truncated(&w, &DVector::from_vec(vec![-1.0]), &HmcConfig::default()),
            Err(Error::NoInteriorPoint)
        ));
        let bad = HmcConfig {
            travel_time: 4.0,
            ..HmcConfig::default()
        };
        assert!(sample_truncated(&w, &DVector::from_vec(vec![1.0]), &bad).is_err());
    }

    #[test]
    fn mean_function_of_identical_samples_is_that_function() {
        let f = AdditiveFunction::from_flat(0.5, vec![1], vec![Subdivision::uniform(3).unwrap()], &[0.0, 1.0, 3.0]).unwrap();
        let s = SampleSet {
            samples: DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 3.0, 0.0, 1.0, 3.0]),
            bounces: vec![0, 0],
            rejected: 0,
            max_energy_drift: 0.0,
        };
        assert_eq!(posterior_mean_function(&s, &f).unwrap(), f);
    }
}
