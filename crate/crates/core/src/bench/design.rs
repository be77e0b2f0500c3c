//! Latin hypercube designs on `[0, 1]^d`.

use std::sync::Arc;

use nalgebra::DMatrix;
use once_cell::sync::Lazy;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;

pub trait DesignGenerator: Send + Sync {
    fn generate(&self, n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>>;
}

/// One point per stratum `[k/n, (k+1)/n)` in each column, uniformly jittered.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomLhd;

/// Best of `candidates` random LHDs by minimum pairwise distance.
#[derive(Debug, Clone, Copy)]
pub struct MaximinLhd {
    pub candidates: usize,
}

fn lhd_from(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, d);
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(rng);
        for (i, &p) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            x[(i, j)] = ((p as f64 + u) / n as f64).min(1.0);
        }
    }
    x
}

/// Smallest Euclidean distance between two rows (∞ for fewer than two rows).
pub fn min_distance(x: &DMatrix<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.nrows() {
        for k in i + 1..x.nrows() {
            let d2: f64 = (0..x.ncols()).map(|j| (x[(i, j)] - x[(k, j)]).powi(2)).sum();
            best = best.min(d2);
        }
    }
    best.sqrt()
}

impl DesignGenerator for RandomLhd {
    fn generate(&self, n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::Config("design needs n ≥ 1".into()));
        }
        Ok(lhd_from(&mut ChaCha8Rng::seed_from_u64(seed), n, d))
    }
}

impl DesignGenerator for MaximinLhd {
    // The first candidate is the random LHD with the same seed.
    fn generate(&self, n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::Config("design needs n ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = lhd_from(&mut rng, n, d);
        let mut best_dist = min_distance(&best);
        for _ in 1..self.candidates.max(1) {
            let cand = lhd_from(&mut rng, n, d);
            let dist = min_distance(&cand);
            if dist > best_dist {
                best = cand;
                best_dist = dist;
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DesignSpec {
    /// `random_lhd` or `maximin_lhd`.
    pub kind: String,
    pub candidates: usize,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            kind: "random_lhd".into(),
            candidates: 50,
        }
    }
}

impl DesignSpec {
    pub fn maximin(candidates: usize) -> Self {
        Self {
            kind: "maximin_lhd".into(),
            candidates,
        }
    }

    pub fn generator(&self) -> Result<Arc<dyn DesignGenerator>> {
        if self.kind.eq_ignore_ascii_case("maximin_lhd") {
            return Ok(Arc::new(MaximinLhd {
                candidates: self.candidates,
            }));
        }
        designs().get(&self.kind)
    }

    pub fn generate(&self, n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
        self.generator()?.generate(n, d, seed)
    }
}

static DESIGNS: Lazy<Registry<dyn DesignGenerator>> = Lazy::new(|| {
    let mut reg: Registry<dyn DesignGenerator> = Registry::new("design");
    reg.register("random_lhd", Arc::new(RandomLhd));
    reg.register("maximin_lhd", Arc::new(MaximinLhd { candidates: 50 }));
    reg
});

pub fn designs() -> &'static Registry<dyn DesignGenerator> {
    &DESIGNS
}
