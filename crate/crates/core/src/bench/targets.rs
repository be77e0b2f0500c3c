//! Synthetic test functions on `[0, 1]^d`, looked up by name.

use std::sync::Arc;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use super::expr::Expression;
use crate::error::{Error, Result};
use crate::registry::Registry;

pub trait Target: Send + Sync {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn eval_unchecked(&self, x: &[f64]) -> f64;

    fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "target input",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }
}

/// `arctan(5x₁) + arctan(2x₂) + x₃ + 2x₄² + 2 / (1 + exp(−10(x₅ − ½)))`.
#[derive(Debug, Clone, Copy)]
pub struct Atan5D;

impl Target for Atan5D {
    fn name(&self) -> String {
        "atan5d".into()
    }

    fn dim(&self) -> usize {
        5
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        (5.0 * x[0]).atan()
            + (2.0 * x[1]).atan()
            + x[2]
            + 2.0 * x[3] * x[3]
            + 2.0 / (1.0 + (-10.0 * (x[4] - 0.5)).exp())
    }
}

/// `Σ_{i ≤ d} arctan(5 (1 − i/(d+1)) x_i)`, optionally embedded in `ambient`
/// inputs of which the last `ambient − d` are inert.
#[derive(Debug, Clone, Copy)]
pub struct ModAtan {
    pub d: usize,
    pub ambient: usize,
}

impl ModAtan {
    pub fn new(d: usize, ambient: Option<usize>) -> Result<Self> {
        let ambient = ambient.unwrap_or(d);
        if d == 0 || ambient < d {
            return Err(Error::Config(format!("modatan needs 1 ≤ d ≤ ambient, got d = {d}, ambient = {ambient}")));
        }
        Ok(Self { d, ambient })
    }
}

impl Target for ModAtan {
    fn name(&self) -> String {
        format!("modatan(d={}, D={})", self.d, self.ambient)
    }

    fn dim(&self) -> usize {
        self.ambient
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.d as f64;
        x[..self.d]
            .iter()
            .enumerate()
            .map(|(i, &xi)| (5.0 * (1.0 - (i + 1) as f64 / (d + 1.0)) * xi).atan())
            .sum()
    }
}

/// A user expression in `x1, …, xd`.
#[derive(Debug, Clone)]
pub struct ExpressionTarget {
    pub expr: Expression,
    pub d: usize,
}

impl Target for ExpressionTarget {
    fn name(&self) -> String {
        format!("expr({})", self.expr.source())
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.expr.eval(x).expect("arity checked at construction")
    }
}

/// Config form of a target.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TargetSpec {
    pub name: String,
    /// Number of influential inputs (`modatan`) or inputs (`expr`).
    pub d: Option<usize>,
    /// Total number of inputs, including inert ones.
    pub ambient: Option<usize>,
    pub expression: Option<String>,
}

pub trait TargetFactory: Send + Sync {
    fn build(&self, spec: &TargetSpec) -> Result<Arc<dyn Target>>;
}

struct Atan5DFactory;
struct ModAtanFactory;
struct ExpressionFactory;
struct FloodFactory;

impl TargetFactory for Atan5DFactory {
    fn build(&self, _: &TargetSpec) -> Result<Arc<dyn Target>> {
        Ok(Arc::new(Atan5D))
    }
}

impl TargetFactory for ModAtanFactory {
    fn build(&self, spec: &TargetSpec) -> Result<Arc<dyn Target>> {
        let d = spec.d.ok_or_else(|| Error::Config("modatan needs `d`".into()))?;
        Ok(Arc::new(ModAtan::new(d, spec.ambient)?))
    }
}

impl TargetFactory for ExpressionFactory {
    fn build(&self, spec: &TargetSpec) -> Result<Arc<dyn Target>> {
        let src = spec
            .expression
            .as_deref()
            .ok_or_else(|| Error::Config("expr target needs `expression`".into()))?;
        let expr = Expression::parse(src)?;
        let d = spec.d.unwrap_or(expr.arity()).max(expr.arity());
        Ok(Arc::new(ExpressionTarget { expr, d }))
    }
}

impl TargetFactory for FloodFactory {
    fn build(&self, _: &TargetSpec) -> Result<Arc<dyn Target>> {
        Ok(Arc::new(super::flood::FloodSurrogate))
    }
}

static TARGETS: Lazy<Registry<dyn TargetFactory>> = Lazy::new(|| {
    let mut reg: Registry<dyn TargetFactory> = Registry::new("target");
    reg.register("atan5d", Arc::new(Atan5DFactory));
    reg.register("modatan", Arc::new(ModAtanFactory));
    reg.register("expr", Arc::new(ExpressionFactory));
    reg.register("flood", Arc::new(FloodFactory));
    reg
});

/// Built-in targets: `atan5d`, `modatan`, `expr`, `flood`.
pub fn targets() -> &'static Registry<dyn TargetFactory> {
    &TARGETS
}

pub fn build_target(spec: &TargetSpec) -> Result<Arc<dyn Target>> {
    targets().get(&spec.name)?.build(spec)
}
