//! Fitted additive models: the serializable [`ModelState`], evaluation of
//! additive piecewise-linear functions, and the fit pipeline
//! (hyperparameters, conditioning, mode).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::Subdivision;
use crate::constraints::{ConstraintKind, LinearSystem};
use crate::error::{Error, Result};
use crate::kernels::Kernel1D;
use crate::posterior::{
    condition, estimate_hyperparameters, sample_variance, Dataset, DesignMatrices, HyperEstimate,
    HyperSearch, PriorBlocks, SolverPath, TruncatedPosterior,
};
use crate::qp::{solve_mode_with, QpOptions, QpProblem, QpSolution};

/// `f(x) = b + Σ_i Σ_j c_{i,j} φ_{i,j}(x_i)` over the active dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveFunction {
    pub intercept: f64,
    pub active: Vec<usize>,
    pub subdivisions: Vec<Subdivision>,
    pub coeffs: Vec<Vec<f64>>,
}

impl AdditiveFunction {
    pub fn from_flat(intercept: f64, active: Vec<usize>, subdivisions: Vec<Subdivision>, flat: &[f64]) -> Result<Self> {
        let total: usize = subdivisions.iter().map(Subdivision::len).sum();
        if flat.len() != total {
            return Err(Error::DimensionMismatch {
                what: "coefficients",
                expected: total,
                got: flat.len(),
            });
        }
        let mut coeffs = Vec::with_capacity(subdivisions.len());
        let mut off = 0;
        for s in &subdivisions {
            coeffs.push(flat[off..off + s.len()].to_vec());
            off += s.len();
        }
        Ok(Self {
            intercept,
            active,
            subdivisions,
            coeffs,
        })
    }

    pub fn zero() -> Self {
        Self {
            intercept: 0.0,
            active: vec![],
            subdivisions: vec![],
            coeffs: vec![],
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.coeffs.concat()
    }

    /// Value at a full input point `x ∈ [0, 1]^d`; only active coordinates are read.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let mut acc = self.intercept;
        for ((&dim, s), c) in self.active.iter().zip(&self.subdivisions).zip(&self.coeffs) {
            let xi = *x.get(dim).ok_or(Error::DimensionMismatch {
                what: "input point",
                expected: dim + 1,
                got: x.len(),
            })?;
            if !(0.0..=1.0).contains(&xi) {
                return Err(Error::InputOutOfRange {
                    row: 0,
                    col: dim,
                    value: xi,
                });
            }
            acc += s.interpolate(c, xi);
        }
        Ok(acc)
    }

    /// Values at every row of `x`.
    pub fn eval_rows(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::from_element(x.nrows(), self.intercept);
        for ((&dim, s), c) in self.active.iter().zip(&self.subdivisions).zip(&self.coeffs) {
            if dim >= x.ncols() {
                return Err(Error::DimensionMismatch {
                    what: "input columns",
                    expected: dim + 1,
                    got: x.ncols(),
                });
            }
            for (row, &xi) in x.column(dim).iter().enumerate() {
                if !(0.0..=1.0).contains(&xi) {
                    return Err(Error::InputOutOfRange { row, col: dim, value: xi });
                }
                out[row] += s.interpolate(c, xi);
            }
        }
        Ok(out)
    }

    /// The univariate component of input `dim` (zero when inactive).
    pub fn component(&self, dim: usize, t: f64) -> f64 {
        self.active
            .iter()
            .position(|&d| d == dim)
            .map(|i| self.subdivisions[i].interpolate(&self.coeffs[i], t))
            .unwrap_or(0.0)
    }
}

/// Everything needed to evaluate and refit a model. `constraints` covers
/// every input dimension so that later activations know their kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub input_dim: usize,
    pub active: Vec<usize>,
    pub subdivisions: Vec<Subdivision>,
    pub kernels: Vec<Kernel1D>,
    pub constraints: Vec<ConstraintKind>,
    pub noise: f64,
    #[serde(default)]
    pub intercept: f64,
    pub mode: Vec<f64>,
    /// Active rows of the last mode computation, reused as a warm start.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qp_active: Vec<usize>,
}

impl ModelState {
    pub fn validate(&self) -> Result<()> {
        let k = self.active.len();
        for (what, got) in [("subdivisions", self.subdivisions.len()), ("kernels", self.kernels.len())] {
            if got != k {
                return Err(Error::DimensionMismatch { what, expected: k, got });
            }
        }
        if self.constraints.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "constraints",
                expected: self.input_dim,
                got: self.constraints.len(),
            });
        }
        if let Some(&bad) = self.active.iter().find(|&&d| d >= self.input_dim) {
            return Err(Error::DimensionMismatch {
                what: "active dimension index",
                expected: self.input_dim,
                got: bad,
            });
        }
        let total: usize = self.subdivisions.iter().map(Subdivision::len).sum();
        if self.mode.len() != total {
            return Err(Error::DimensionMismatch {
                what: "mode",
                expected: total,
                got: self.mode.len(),
            });
        }
        Ok(())
    }

    pub fn systems(&self) -> Result<Vec<LinearSystem>> {
        self.active
            .iter()
            .zip(&self.subdivisions)
            .map(|(&d, s)| self.constraints[d].encode(s))
            .collect()
    }

    pub fn mode_function(&self) -> AdditiveFunction {
        AdditiveFunction::from_flat(self.intercept, self.active.clone(), self.subdivisions.clone(), &self.mode)
            .expect("validated state")
    }

    /// Mode evaluated at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.mode_function().eval(x)
    }

    /// Whether the mode satisfies every constraint system within `tol`.
    pub fn mode_feasible(&self, tol: f64) -> Result<bool> {
        let f = self.mode_function();
        for (sys, c) in self.systems()?.iter().zip(&f.coeffs) {
            if !sys.check(c, tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Knot layout requested in a config: a count shared by every active
/// dimension, one count per active dimension, or explicit subdivisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnotSpec {
    Uniform(usize),
    PerDimension(Vec<usize>),
    Explicit(Vec<Subdivision>),
}

impl Default for KnotSpec {
    fn default() -> Self {
        KnotSpec::Uniform(5)
    }
}

impl KnotSpec {
    pub fn build(&self, k: usize) -> Result<Vec<Subdivision>> {
        let out = match self {
            KnotSpec::Uniform(m) => (0..k).map(|_| Subdivision::uniform(*m)).collect::<Result<Vec<_>>>()?,
            KnotSpec::PerDimension(ms) => ms.iter().map(|&m| Subdivision::uniform(m)).collect::<Result<Vec<_>>>()?,
            KnotSpec::Explicit(s) => s.clone(),
        };
        if out.len() != k {
            return Err(Error::DimensionMismatch {
                what: "knot layouts",
                expected: k,
                got: out.len(),
            });
        }
        Ok(out)
    }
}

/// Constraint kinds in a config: one kind for every input, or one per input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstraintSpec {
    All(ConstraintKind),
    PerDimension(Vec<ConstraintKind>),
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec::All(ConstraintKind::NonDecreasing)
    }
}

impl ConstraintSpec {
    pub fn expand(&self, d: usize) -> Result<Vec<ConstraintKind>> {
        match self {
            ConstraintSpec::All(k) => Ok(vec![*k; d]),
            ConstraintSpec::PerDimension(v) if v.len() == d => Ok(v.clone()),
            ConstraintSpec::PerDimension(v) => Err(Error::DimensionMismatch {
                what: "constraint kinds",
                expected: d,
                got: v.len(),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Active inputs (0-based); all inputs when absent.
    pub active: Option<Vec<usize>>,
    pub knots: KnotSpec,
    pub constraints: ConstraintSpec,
    /// Kernel family used for estimation and defaults.
    pub family: String,
    /// Fixed kernels, one per active input; estimated when absent.
    pub kernels: Option<Vec<Kernel1D>>,
    /// Fixed noise variance; estimated together with the kernels when absent.
    pub noise: Option<f64>,
    pub search: HyperSearch,
    /// Subtract the response mean before conditioning. Ignored when any
    /// input carries bound constraints.
    pub center: bool,
    pub solver: SolverPath,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            active: None,
            knots: KnotSpec::default(),
            constraints: ConstraintSpec::default(),
            family: "matern52".into(),
            kernels: None,
            noise: None,
            search: HyperSearch::default(),
            center: true,
            solver: SolverPath::Auto,
        }
    }
}

/// Output of [`fit`]: the state plus the intermediate objects.
#[derive(Debug, Clone)]
pub struct Fit {
    pub state: ModelState,
    pub posterior: TruncatedPosterior,
    pub qp: QpSolution,
    pub hyper: Option<HyperEstimate>,
    /// Seconds spent conditioning and solving for the mode.
    pub mode_seconds: f64,
}

/// Default kernel for a new active dimension: variance `var(y)` and unit lengthscale.
pub fn default_kernel(family: &str, y: &DVector<f64>) -> Result<Kernel1D> {
    let var = sample_variance(y.as_slice());
    Kernel1D::by_name(family, if var > 0.0 { var } else { 1.0 }, 1.0)
}

pub fn intercept_for(y: &DVector<f64>, constraints: &[ConstraintKind], center: bool) -> f64 {
    let bounded = constraints.iter().any(|k| matches!(k, ConstraintKind::Bounded { .. }));
    if center && !bounded {
        y.mean()
    } else {
        0.0
    }
}

/// Conditions on `ds` for the given layout and returns the truncated posterior.
#[allow(clippy::too_many_arguments)]
pub fn posterior_for(
    ds: &Dataset,
    active: &[usize],
    subdivisions: &[Subdivision],
    kernels: &[Kernel1D],
    constraints: &[ConstraintKind],
    noise: f64,
    intercept: f64,
    path: SolverPath,
) -> Result<TruncatedPosterior> {
    let dm = DesignMatrices::new(&ds.x, active, subdivisions)?;
    let prior = PriorBlocks::new(kernels, subdivisions)?;
    let systems = active
        .iter()
        .zip(subdivisions)
        .map(|(&d, s)| constraints[d].encode(s))
        .collect::<Result<Vec<_>>>()?;
    let y = ds.y.add_scalar(-intercept);
    condition(&y, &dm, &prior, noise, systems, path)
}

/// Mode of a posterior, warm-started from `hint`.
pub fn mode_of(post: &TruncatedPosterior, hint: &[usize]) -> Result<QpSolution> {
    if post.dim() == 0 {
        return Ok(QpSolution {
            x: DVector::zeros(0),
            active: vec![],
            multipliers: vec![],
            iterations: 0,
            stationarity: 0.0,
            complementarity: 0.0,
            max_violation: 0.0,
        });
    }
    solve_mode_with(&QpProblem::from_posterior(post)?, hint, QpOptions::default())
}

/// Estimates (or takes) hyperparameters, conditions, and computes the mode.
pub fn fit(ds: &Dataset, cfg: &FitConfig) -> Result<Fit> {
    let d = ds.d();
    let active = cfg.active.clone().unwrap_or_else(|| (0..d).collect());
    let subdivisions = cfg.knots.build(active.len())?;
    let constraints = cfg.constraints.expand(d)?;
    let intercept = intercept_for(&ds.y, &constraints, cfg.center);
    let yc = ds.y.add_scalar(-intercept);

    let (kernels, noise, hyper) = match (&cfg.kernels, cfg.noise) {
        (Some(k), Some(noise)) => (k.clone(), noise, None),
        _ => {
            let templates = match &cfg.kernels {
                Some(k) => k.clone(),
                None => vec![default_kernel(&cfg.family, &yc)?; active.len()],
            };
            let search = HyperSearch {
                fixed_noise: cfg.noise,
                ..cfg.search.clone()
            };
            let est = estimate_hyperparameters(&ds.x, &yc, &active, &subdivisions, &templates, &search)?;
            (est.kernels.clone(), est.noise, Some(est))
        }
    };

    let start = Instant::now();
    let posterior = posterior_for(ds, &active, &subdivisions, &kernels, &constraints, noise, intercept, cfg.solver)?;
    let qp = mode_of(&posterior, &[])?;
    let mode_seconds = start.elapsed().as_secs_f64();

    let state = ModelState {
        input_dim: d,
        active,
        subdivisions,
        kernels,
        constraints,
        noise: posterior.noise,
        intercept,
        mode: qp.x.iter().copied().collect(),
        qp_active: qp.active.clone(),
    };
    Ok(Fit {
        state,
        posterior,
        qp,
        hyper,
        mode_seconds,
    })
}

/// Rebuilds the posterior of a saved state from its training data.
pub fn refit_posterior(ds: &Dataset, state: &ModelState, path: SolverPath) -> Result<TruncatedPosterior> {
    state.validate()?;
    posterior_for(
        ds,
        &state.active,
        &state.subdivisions,
        &state.kernels,
        &state.constraints,
        state.noise,
        state.intercept,
        path,
    )
}
