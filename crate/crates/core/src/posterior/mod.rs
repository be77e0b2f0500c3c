//! Finite-dimensional GP conditioning on knot values.
//!
//! Given the design `Ψ = [Φ_1, …, Φ_d]`, the block-diagonal prior covariance
//! `Σ = bdiag(Σ_1, …, Σ_d)` of the knot values and noise `τ²`, the knot
//! values are `N(μ_c, Σ_c)` a posteriori with
//!
//! ```text
//! μ_c = Σ Ψᵀ C⁻¹ y,    Σ_c = Σ − Σ Ψᵀ C⁻¹ Ψ Σ,    C = Ψ Σ Ψᵀ + τ² I_n.
//! ```
//!
//! Truncating this Gaussian to the constraint systems gives the constrained
//! posterior whose mode and samples are computed by [`crate::qp`] and
//! [`crate::sampler`].

mod dataset;
pub mod design;
pub mod likelihood;
pub mod solver;

use nalgebra::{DMatrix, DVector};

pub use dataset::Dataset;
pub use design::{DesignMatrices, DimensionDesign};
pub use likelihood::{estimate_hyperparameters, log_marginal_likelihood, HyperEstimate, HyperSearch};
pub use solver::{fast_inverse_apply, fast_logdet, CovarianceSolver, DenseSolver, SolverPath, WoodburySolver};

use crate::basis::Subdivision;
use crate::constraints::{LinearSystem, StackedConstraints};
use crate::error::{Error, Result};
use crate::kernels::Kernel1D;
use crate::linalg::symmetrize;

/// Relative noise floor applied to `τ²`.
pub const NOISE_FLOOR: f64 = 1e-10;

/// `max(τ², 1e-10 · var(y))`, falling back to an absolute `1e-10` when `y` is constant.
pub fn floored_noise(tau2: f64, y: &DVector<f64>) -> f64 {
    let var = sample_variance(y.as_slice());
    let floor = if var > 0.0 { NOISE_FLOOR * var } else { NOISE_FLOOR };
    tau2.max(floor)
}

pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
}

/// Jittered prior blocks `Σ_i` and their lower Cholesky factors `L_i`.
#[derive(Debug, Clone)]
pub struct PriorBlocks {
    pub sigma: Vec<DMatrix<f64>>,
    pub chol: Vec<DMatrix<f64>>,
}

impl PriorBlocks {
    pub fn new(kernels: &[Kernel1D], subdivisions: &[Subdivision]) -> Result<Self> {
        if kernels.len() != subdivisions.len() {
            return Err(Error::DimensionMismatch {
                what: "kernels per active dimension",
                expected: subdivisions.len(),
                got: kernels.len(),
            });
        }
        let mut sigma = Vec::with_capacity(kernels.len());
        let mut chol = Vec::with_capacity(kernels.len());
        for (k, s) in kernels.iter().zip(subdivisions) {
            let factor = k.knot_cholesky(s)?;
            let mut block = k.knot_covariance(s);
            for i in 0..block.nrows() {
                block[(i, i)] += factor.jitter;
            }
            sigma.push(block);
            chol.push(factor.l());
        }
        Ok(Self { sigma, chol })
    }

    pub fn total_size(&self) -> usize {
        self.sigma.iter().map(|b| b.nrows()).sum()
    }

    pub fn dense_sigma(&self) -> DMatrix<f64> {
        block_diag(&self.sigma)
    }

    pub fn dense_chol(&self) -> DMatrix<f64> {
        block_diag(&self.chol)
    }
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(m, m);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), b.shape()).copy_from(b);
        off += b.nrows();
    }
    out
}

/// `N(μ_c, Σ_c)` of the knot values given the data, with the constraint
/// systems of each active dimension.
#[derive(Debug, Clone)]
pub struct TruncatedPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Start of each active dimension's coefficient block.
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
    pub systems: Vec<LinearSystem>,
    pub noise: f64,
    pub path: &'static str,
}

impl TruncatedPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn stacked(&self) -> StackedConstraints {
        StackedConstraints::from_systems(&self.systems)
    }

    /// Splits a concatenated coefficient vector into per-dimension blocks.
    pub fn split(&self, c: &[f64]) -> Vec<Vec<f64>> {
        self.offsets
            .iter()
            .zip(&self.sizes)
            .map(|(&o, &s)| c[o..o + s].to_vec())
            .collect()
    }

    /// Whether `c` satisfies every dimension's system within `tol`.
    pub fn feasible(&self, c: &[f64], tol: f64) -> bool {
        self.split(c)
            .iter()
            .zip(&self.systems)
            .all(|(block, sys)| sys.check(block, tol).unwrap_or(false))
    }
}

/// Computes `μ_c` and `Σ_c`.
///
/// With `SolverPath::Auto` the inversion-lemma route is used when `m ≤ n/2`.
/// There `μ_c = L A⁻¹ Pᵀ y` and `Σ_c = τ² L A⁻¹ Lᵀ` with `P = Ψ L` and
/// `A = τ² I + PᵀP`, which follow from applying the lemma to the
/// expressions above.
pub fn condition(
    y: &DVector<f64>,
    dm: &DesignMatrices,
    prior: &PriorBlocks,
    tau2: f64,
    systems: Vec<LinearSystem>,
    path: SolverPath,
) -> Result<TruncatedPosterior> {
    if y.len() != dm.n {
        return Err(Error::DimensionMismatch {
            what: "responses",
            expected: dm.n,
            got: y.len(),
        });
    }
    if prior.total_size() != dm.m {
        return Err(Error::DimensionMismatch {
            what: "prior size",
            expected: dm.m,
            got: prior.total_size(),
        });
    }
    let tau2 = floored_noise(tau2, y);
    let l = prior.dense_chol();
    let p = dm.times_block_diag(&prior.chol);

    let (mean, mut cov, name) = if path.use_woodbury(dm.n, dm.m) {
        let solver = WoodburySolver::new(p, tau2)?;
        let w = solver.core_solve(&solver.p.tr_mul(y));
        let mean = &l * w;
        // Σ_c = τ² (L̃⁻¹ Lᵀ)ᵀ (L̃⁻¹ Lᵀ)
        let lt = l.transpose();
        let g = solver
            .a_chol
            .l_dirty()
            .solve_lower_triangular(&lt)
            .ok_or_else(|| Error::Unsupported("singular inversion-lemma factor".into()))?;
        let cov = g.tr_mul(&g) * tau2;
        (mean, cov, "woodbury")
    } else {
        let solver = DenseSolver::from_design(dm, &prior.sigma, tau2)?;
        let lc = solver.chol.factor.l_dirty();
        // V = L_C⁻¹ P, so Pᵀ C⁻¹ P = VᵀV
        let v = lc
            .solve_lower_triangular(&p)
            .ok_or_else(|| Error::Unsupported("singular data covariance factor".into()))?;
        let z = lc
            .solve_lower_triangular(y)
            .ok_or_else(|| Error::Unsupported("singular data covariance factor".into()))?;
        let mean = &l * v.tr_mul(&z);
        let lv = &l * v.transpose();
        let cov = prior.dense_sigma() - &lv * lv.transpose();
        (mean, cov, "dense")
    };
    symmetrize(&mut cov);
    Ok(TruncatedPosterior {
        mean,
        cov,
        offsets: dm.offsets.clone(),
        sizes: dm.blocks.iter().map(|b| b.m).collect(),
        systems,
        noise: tau2,
        path: name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintKind;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Setup = (DMatrix<f64>, DVector<f64>, Vec<usize>, Vec<Subdivision>, Vec<Kernel1D>);

    fn setup(rng: &mut ChaCha8Rng, n: usize, knots: &[usize]) -> Setup {
        let d = knots.len();
        let x = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |a, _| {
            (0..d).map(|i| (3.0 * x[(a, i)]).sin() / (i + 1) as f64).sum::<f64>()
                + 0.05 * rng.random::<f64>()
        });
        let subs: Vec<Subdivision> = knots.iter().map(|&m| Subdivision::uniform(m).unwrap()).collect();
        let kernels = (0..d)
            .map(|_| Kernel1D::matern52(rng.random_range(0.5..2.0), rng.random_range(0.2..1.0)).unwrap())
            .collect();
        ((x), y, (0..d).collect(), subs, kernels)
    }

    /// `μ_c`, `Σ_c` straight from the defining formulas with a dense `n × n` inverse.
    fn direct_oracle(
        y: &DVector<f64>,
        psi: &DMatrix<f64>,
        sigma: &DMatrix<f64>,
        tau2: f64,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let n = psi.nrows();
        let c = psi * sigma * psi.transpose() + DMatrix::identity(n, n) * tau2;
        let cinv = c.try_inverse().unwrap();
        let k = sigma * psi.transpose() * &cinv;
        (&k * y, sigma - &k * psi * sigma)
    }

    #[test]
    fn fast_and_direct_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let (x, y, active, subs, kernels) = setup(&mut rng, 200, &[4, 5, 3]);
            let dm = DesignMatrices::new(&x, &active, &subs).unwrap();
            let prior = PriorBlocks::new(&kernels, &subs).unwrap();
            let systems = subs.iter().map(|s| ConstraintKind::None.encode(s).unwrap()).collect::<Vec<_>>();
            let fast = condition(&y, &dm, &prior, 1e-3, systems.clone(), SolverPath::Woodbury).unwrap();
            let dense = condition(&y, &dm, &prior, 1e-3, systems, SolverPath::Dense).unwrap();
            let (mu, cov) = direct_oracle(&y, &dm.psi(), &prior.dense_sigma(), 1e-3);
            assert_eq!(fast.path, "woodbury");
            assert_eq!(dense.path, "dense");
            for post in [&fast, &dense] {
                assert_relative_eq!(post.mean, mu, max_relative = 1e-8, epsilon = 1e-10);
                assert_relative_eq!(post.cov, cov, max_relative = 1e-8, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, _, active, subs, kernels) = setup(&mut rng, 20, &[3, 3]);
        let y = DVector::zeros(20);
        let dm = DesignMatrices::new(&x, &active, &subs).unwrap();
        let prior = PriorBlocks::new(&kernels, &subs).unwrap();
        for path in [SolverPath::Dense, SolverPath::Woodbury] {
            let post = condition(&y, &dm, &prior, 1e-2, vec![], path).unwrap();
            assert!(post.mean.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn interpolation_limit() {
        // n = m in one dimension with data at the knots: Φ = I
        let s = Subdivision::uniform(6).unwrap();
        let x = DMatrix::from_column_slice(6, 1, s.knots());
        let y = DVector::from_fn(6, |a, _| (4.0 * x[(a, 0)]).cos() + 2.0);
        let dm = DesignMatrices::new(&x, &[0], std::slice::from_ref(&s)).unwrap();
        let prior = PriorBlocks::new(&[Kernel1D::matern52(1.0, 0.5).unwrap()], &[s]).unwrap();
        let post = condition(&y, &dm, &prior, 0.0, vec![], SolverPath::Auto).unwrap();
        assert_eq!(post.path, "dense");
        let fitted = dm.apply(post.mean.as_slice());
        assert_relative_eq!(fitted, y, max_relative = 1e-4);
    }

    #[test]
    fn posterior_covariance_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (n, knots) in [(40, vec![5, 5, 5]), (100, vec![3, 4]), (10, vec![8, 8])] {
            let (x, y, active, subs, kernels) = setup(&mut rng, n, &knots);
            let dm = DesignMatrices::new(&x, &active, &subs).unwrap();
            let prior = PriorBlocks::new(&kernels, &subs).unwrap();
            let post = condition(&y, &dm, &prior, 1e-4, vec![], SolverPath::Auto).unwrap();
            let m = post.dim() as f64;
            let bound = -1e-8 * post.cov.trace() / m;
            let eig = post.cov.clone().symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e >= bound), "{eig:?}");
            assert_eq!(post.cov, post.cov.transpose());
        }
    }

    #[test]
    fn unconstrained_mean_matches_function_space_gp() {
        // the knot-space posterior mean, interpolated, equals the GP posterior
        // mean under the finite-dimensional kernel k̃(x, x') = φ(x)ᵀ Σ φ(x')
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (x, y, active, subs, kernels) = setup(&mut rng, 25, &[4, 6]);
        let tau2 = 1e-3;
        let dm = DesignMatrices::new(&x, &active, &subs).unwrap();
        let prior = PriorBlocks::new(&kernels, &subs).unwrap();
        let post = condition(&y, &dm, &prior, tau2, vec![], SolverPath::Auto).unwrap();

        let features = |pt: &[f64]| -> Vec<DVector<f64>> {
            subs.iter()
                .zip(pt)
                .map(|(s, &xi)| DVector::from_fn(s.len(), |j, _| s.hat(j).eval(xi)))
                .collect()
        };
        let ktilde = |a: &[f64], b: &[f64]| -> f64 {
            features(a)
                .iter()
                .zip(features(b))
                .zip(&prior.sigma)
                .map(|((fa, fb), sig)| (fa.transpose() * sig * fb)[(0, 0)])
                .sum()
        };
        let rows: Vec<Vec<f64>> = (0..25).map(|a| vec![x[(a, 0)], x[(a, 1)]]).collect();
        let kmat = DMatrix::from_fn(25, 25, |a, b| ktilde(&rows[a], &rows[b]))
            + DMatrix::identity(25, 25) * tau2;
        let alpha = kmat.cholesky().unwrap().solve(&y);
        let blocks = post.split(post.mean.as_slice());
        for _ in 0..200 {
            let pt = [rng.random::<f64>(), rng.random::<f64>()];
            let gp: f64 = rows.iter().zip(alpha.iter()).map(|(r, a)| ktilde(&pt, r) * a).sum();
            let knot: f64 = subs
                .iter()
                .zip(&blocks)
                .zip(pt)
                .map(|((s, c), xi)| s.interpolate(c, xi))
                .sum();
            assert!((gp - knot).abs() <= 1e-8, "{gp} vs {knot}");
        }
    }
}
