//! Synthetic stand-in for the 37-input flood database.
//!
//! Inputs follow the database's marginal laws: 12 friction coefficients
//! `U[20, 40]`, 12 more `U[10, 30]`, 12 bed perturbations `N(0, 1)` truncated to
//! `[−3, 3]` and an upstream flow perturbation `N(0, 50²)` truncated to
//! `[−150, 150]`. After the quantile transform `u ∈ [0, 1]^37` the response is
//!
//! ```text
//! H(u) = 5 − 2 tanh(2.5 u₁₁) + 1.5 u₃₅² + 2.5 u₃₇
//!          − 0.1 Σ_{i ≤ 24, i ≠ 11} u_i + 0.05 Σ_{25 ≤ i ≤ 36, i ≠ 35} (u_i − ½)
//! ```
//!
//! (1-based indices). It is nonincreasing in inputs 1–24, nondecreasing in
//! 25–37, and inputs 11, 35 and 37 carry almost all of its variance.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::targets::Target;
use super::transforms::{EmpiricalTransform, InputLaw};
use crate::constraints::ConstraintKind;
use crate::error::{Error, Result};
use crate::posterior::Dataset;

pub const FLOOD_DIM: usize = 37;

/// 0-based indices of the dominant inputs.
pub const FLOOD_DOMINANT: [usize; 3] = [10, 34, 36];

pub fn flood_laws() -> Vec<InputLaw> {
    (0..FLOOD_DIM)
        .map(|i| match i {
            0..=11 => InputLaw::Uniform { lo: 20.0, hi: 40.0 },
            12..=23 => InputLaw::Uniform { lo: 10.0, hi: 30.0 },
            24..=35 => InputLaw::TruncatedNormal {
                mean: 0.0,
                sd: 1.0,
                lo: -3.0,
                hi: 3.0,
            },
            _ => InputLaw::TruncatedNormal {
                mean: 0.0,
                sd: 50.0,
                lo: -150.0,
                hi: 150.0,
            },
        })
        .collect()
}

/// Expert shape information: decreasing along the first 24 inputs, increasing along the rest.
pub fn flood_constraints() -> Vec<ConstraintKind> {
    (0..FLOOD_DIM)
        .map(|i| {
            if i < 24 {
                ConstraintKind::NonIncreasing
            } else {
                ConstraintKind::NonDecreasing
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FloodSurrogate;

impl Target for FloodSurrogate {
    fn name(&self) -> String {
        "flood".into()
    }

    fn dim(&self) -> usize {
        FLOOD_DIM
    }

    fn eval_unchecked(&self, u: &[f64]) -> f64 {
        let mut h = 5.0 - 2.0 * (2.5 * u[10]).tanh() + 1.5 * u[34] * u[34] + 2.5 * u[36];
        h -= 0.1 * (0..24).filter(|&i| i != 10).map(|i| u[i]).sum::<f64>();
        h += 0.05 * (24..36).filter(|&i| i != 34).map(|i| u[i] - 0.5).sum::<f64>();
        h
    }
}

/// Surrogate database: raw inputs and the transformed dataset.
#[derive(Debug, Clone)]
pub struct FloodData {
    pub raw: DMatrix<f64>,
    pub dataset: Dataset,
}

fn flood_names() -> Vec<String> {
    (1..=FLOOD_DIM).map(|i| format!("x{i}")).collect()
}

/// Draws `n` database rows from the input laws and evaluates the surrogate.
pub fn surrogate_flood_generator(n: usize, seed: u64) -> Result<FloodData> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let laws = flood_laws();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = DMatrix::zeros(n, FLOOD_DIM);
    let mut u = DMatrix::zeros(n, FLOOD_DIM);
    for i in 0..n {
        for (j, law) in laws.iter().enumerate() {
            raw[(i, j)] = law.sample(&mut rng);
            u[(i, j)] = law.cdf(raw[(i, j)]);
        }
    }
    let y = DVector::from_iterator(n, (0..n).map(|i| FloodSurrogate.eval_unchecked(&u.row(i).iter().copied().collect::<Vec<_>>())));
    Ok(FloodData {
        raw,
        dataset: Dataset::with_names(u, y, flood_names())?,
    })
}

/// Reads a flood database CSV (37 input columns plus the response) and maps
/// every input through its empirical CDF.
pub fn load_flood_csv(path: impl AsRef<Path>, response: &str) -> Result<Dataset> {
    let raw = Dataset::from_csv(path, response)?;
    uniformize(&raw)
}

pub fn uniformize(raw: &Dataset) -> Result<Dataset> {
    let cols: Vec<Vec<f64>> = (0..raw.d()).map(|j| raw.x.column(j).iter().copied().collect()).collect();
    let t = EmpiricalTransform::fit(&cols)?;
    let x = DMatrix::from_fn(raw.n(), raw.d(), |i, j| t.apply(j, raw.x[(i, j)]));
    Dataset::with_names(x, raw.y.clone(), raw.names.clone())
}

/// For each design row, the nearest not-yet-used database row (Euclidean).
pub fn closest_subset(database: &DMatrix<f64>, design: &DMatrix<f64>) -> Result<Vec<usize>> {
    if design.ncols() != database.ncols() {
        return Err(Error::DimensionMismatch {
            what: "design columns",
            expected: database.ncols(),
            got: design.ncols(),
        });
    }
    if design.nrows() > database.nrows() {
        return Err(Error::Config(format!(
            "cannot pick {} rows from a database of {}",
            design.nrows(),
            database.nrows()
        )));
    }
    let mut used = vec![false; database.nrows()];
    let mut picked = Vec::with_capacity(design.nrows());
    for r in 0..design.nrows() {
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, &taken) in used.iter().enumerate() {
            if taken {
                continue;
            }
            let d2: f64 = (0..design.ncols()).map(|j| (database[(i, j)] - design[(r, j)]).powi(2)).sum();
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        used[best.1] = true;
        picked.push(best.1);
    }
    Ok(picked)
}

pub fn subset(ds: &Dataset, rows: &[usize]) -> Result<Dataset> {
    let x = DMatrix::from_fn(rows.len(), ds.d(), |i, j| ds.x[(rows[i], j)]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| ds.y[r]));
    Dataset::with_names(x, y, ds.names.clone())
}
