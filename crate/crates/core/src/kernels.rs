//! Stationary one-dimensional kernels and knot-level covariance matrices.
//!
//! Each kernel family is a [`CorrelationFamily`] registered by name; a
//! [`Kernel1D`] pairs a family with its variance and lengthscale. The additive
//! kernel of a model is a list of `Kernel1D`, one per active dimension.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use once_cell::sync::Lazy;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::basis::Subdivision;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, JitteredCholesky};
use crate::registry::Registry;

/// Unit-variance stationary correlation as a function of the scaled lag `|x - y| / ℓ`.
pub trait CorrelationFamily: Send + Sync {
    fn name(&self) -> &'static str;
    fn correlation(&self, scaled_lag: f64) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct Matern52;

impl CorrelationFamily for Matern52 {
    fn name(&self) -> &'static str {
        "matern52"
    }

    fn correlation(&self, r: f64) -> f64 {
        let s = 5f64.sqrt() * r.abs();
        (1.0 + s + s * s / 3.0) * (-s).exp()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SquaredExponential;

impl CorrelationFamily for SquaredExponential {
    fn name(&self) -> &'static str {
        "sqexp"
    }

    fn correlation(&self, r: f64) -> f64 {
        (-0.5 * r * r).exp()
    }
}

static FAMILIES: Lazy<Registry<dyn CorrelationFamily>> = Lazy::new(|| {
    let mut reg: Registry<dyn CorrelationFamily> = Registry::new("kernel family");
    reg.register("matern52", Arc::new(Matern52));
    reg.register("sqexp", Arc::new(SquaredExponential));
    reg
});

/// Built-in kernel families: `matern52` (default) and `sqexp`.
pub fn families() -> &'static Registry<dyn CorrelationFamily> {
    &FAMILIES
}

/// A one-dimensional kernel `k(x, y) = σ² ρ(|x - y| / ℓ)`.
#[derive(Clone)]
pub struct Kernel1D {
    family: Arc<dyn CorrelationFamily>,
    variance: f64,
    lengthscale: f64,
}

impl Kernel1D {
    pub fn new(family: Arc<dyn CorrelationFamily>, variance: f64, lengthscale: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!("variance {variance}")));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!("lengthscale {lengthscale}")));
        }
        Ok(Self {
            family,
            variance,
            lengthscale,
        })
    }

    pub fn matern52(variance: f64, lengthscale: f64) -> Result<Self> {
        Self::new(Arc::new(Matern52), variance, lengthscale)
    }

    pub fn sqexp(variance: f64, lengthscale: f64) -> Result<Self> {
        Self::new(Arc::new(SquaredExponential), variance, lengthscale)
    }

    /// Looks the family up by name in the built-in registry.
    pub fn by_name(family: &str, variance: f64, lengthscale: f64) -> Result<Self> {
        Self::new(families().get(family)?, variance, lengthscale)
    }

    pub fn family(&self) -> &Arc<dyn CorrelationFamily> {
        &self.family
    }

    pub fn family_name(&self) -> &'static str {
        self.family.name()
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn with_params(&self, variance: f64, lengthscale: f64) -> Result<Self> {
        Self::new(self.family.clone(), variance, lengthscale)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.variance * self.family.correlation((x - y) / self.lengthscale)
    }

    /// `k(S, S)`, the `m × m` covariance of the knot values.
    pub fn knot_covariance(&self, s: &Subdivision) -> DMatrix<f64> {
        let t = s.knots();
        let m = t.len();
        DMatrix::from_fn(m, m, |i, j| self.eval(t[i], t[j]))
    }

    /// Cholesky of `k(S, S)` with diagonal jitter starting at `1e-8 σ²`.
    pub fn knot_cholesky(&self, s: &Subdivision) -> Result<JitteredCholesky> {
        cholesky_jittered(&self.knot_covariance(s), Some(self.variance), "knot covariance")
    }
}

impl fmt::Debug for Kernel1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel1D")
            .field("family", &self.family.name())
            .field("variance", &self.variance)
            .field("lengthscale", &self.lengthscale)
            .finish()
    }
}

impl PartialEq for Kernel1D {
    fn eq(&self, other: &Self) -> bool {
        self.family.name() == other.family.name()
            && self.variance == other.variance
            && self.lengthscale == other.lengthscale
    }
}

/// Serialized form `{family, variance, lengthscale}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KernelSpec {
    pub family: String,
    pub variance: f64,
    pub lengthscale: f64,
}

impl From<&Kernel1D> for KernelSpec {
    fn from(k: &Kernel1D) -> Self {
        Self {
            family: k.family_name().to_string(),
            variance: k.variance,
            lengthscale: k.lengthscale,
        }
    }
}

impl TryFrom<KernelSpec> for Kernel1D {
    type Error = Error;

    fn try_from(spec: KernelSpec) -> Result<Self> {
        Kernel1D::by_name(&spec.family, spec.variance, spec.lengthscale)
    }
}

impl Serialize for Kernel1D {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KernelSpec::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Kernel1D {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = KernelSpec::deserialize(d)?;
        Kernel1D::try_from(spec).map_err(serde::de::Error::custom)
    }
}

/// Sum of one-dimensional kernels, one per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdditiveKernel {
    pub components: Vec<Kernel1D>,
}

impl AdditiveKernel {
    pub fn new(components: Vec<Kernel1D>) -> Self {
        Self { components }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.components
            .iter()
            .zip(x.iter().zip(y))
            .map(|(k, (a, b))| k.eval(*a, *b))
            .sum()
    }
}
