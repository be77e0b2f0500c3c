//! Componentwise quantile transforms mapping raw inputs to `[0, 1]`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Parametric marginal law of a raw input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InputLaw {
    Uniform { lo: f64, hi: f64 },
    TruncatedNormal { mean: f64, sd: f64, lo: f64, hi: f64 },
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

impl InputLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InputLaw::Uniform { lo, hi } => lo < hi,
            InputLaw::TruncatedNormal { sd, lo, hi, .. } => sd > 0.0 && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("degenerate input law {self:?}")))
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        match *self {
            InputLaw::Uniform { lo, hi } => ((v - lo) / (hi - lo)).clamp(0.0, 1.0),
            InputLaw::TruncatedNormal { mean, sd, lo, hi } => {
                let n = std_normal();
                let (a, b) = (n.cdf((lo - mean) / sd), n.cdf((hi - mean) / sd));
                ((n.cdf((v.clamp(lo, hi) - mean) / sd) - a) / (b - a)).clamp(0.0, 1.0)
            }
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            InputLaw::Uniform { lo, hi } => lo + u * (hi - lo),
            InputLaw::TruncatedNormal { mean, sd, lo, hi } => {
                let n = std_normal();
                let (a, b) = (n.cdf((lo - mean) / sd), n.cdf((hi - mean) / sd));
                (mean + sd * n.inverse_cdf(a + u * (b - a))).clamp(lo, hi)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = Uniform::new(0.0, 1.0).expect("unit interval").sample(rng);
        self.quantile(u)
    }
}

/// Per-dimension empirical CDF with linear interpolation between order statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalTransform {
    sorted: Vec<Vec<f64>>,
}

impl EmpiricalTransform {
    pub fn fit(columns: &[Vec<f64>]) -> Result<Self> {
        let mut sorted = Vec::with_capacity(columns.len());
        for c in columns {
            if c.len() < 2 {
                return Err(Error::EmptyDataset);
            }
            let mut s = c.clone();
            s.sort_by(f64::total_cmp);
            sorted.push(s);
        }
        Ok(Self { sorted })
    }

    pub fn dim(&self) -> usize {
        self.sorted.len()
    }

    pub fn apply(&self, j: usize, v: f64) -> f64 {
        let s = &self.sorted[j];
        let n = s.len();
        if v <= s[0] {
            return 0.0;
        }
        if v >= s[n - 1] {
            return 1.0;
        }
        let hi = s.partition_point(|&a| a <= v);
        let lo = s.partition_point(|&a| a < v);
        if hi > lo {
            // ties: midpoint of the tied block
            return ((lo + hi - 1) as f64 / 2.0) / (n - 1) as f64;
        }
        let (a, b) = (s[lo - 1], s[lo]);
        ((lo - 1) as f64 + (v - a) / (b - a)) / (n - 1) as f64
    }
}

/// Transforms for the laws in `laws`, one per column.
pub fn parametric_transform(laws: &[InputLaw], raw: &[f64]) -> Result<Vec<f64>> {
    if laws.len() != raw.len() {
        return Err(Error::DimensionMismatch {
            what: "input laws",
            expected: laws.len(),
            got: raw.len(),
        });
    }
    Ok(laws.iter().zip(raw).map(|(l, &v)| l.cdf(v)).collect())
}
