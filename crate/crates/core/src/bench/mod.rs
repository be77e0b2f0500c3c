//! Experiment harness: synthetic targets, designs, input transforms, scoring.

pub mod design;
pub mod expr;
pub mod flood;
pub mod harness;
pub mod targets;
pub mod transforms;

pub use design::{designs, DesignGenerator, DesignSpec, MaximinLhd, RandomLhd};
pub use flood::{surrogate_flood_generator, FloodSurrogate, FLOOD_DIM, FLOOD_DOMINANT};
pub use harness::{run_benchmark, write_rows, BenchRow, BenchmarkConfig};
pub use targets::{build_target, targets, Atan5D, ModAtan, Target, TargetSpec};

use crate::error::{Error, Result};

/// `1 − MSE / var(truth)`.
pub fn q_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.len() < 2 {
        return Err(Error::UndefinedMetric("Q² needs at least two points".into()));
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let var = truth.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(Error::UndefinedMetric("Q² of a constant truth".into()));
    }
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    Ok(1.0 - mse / var)
}

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
