//! Two interchangeable ways of applying `C⁻¹` and computing `log |C|` for
//! `C = Ψ Σ Ψᵀ + τ² I_n`: a dense `n × n` Cholesky, and the matrix inversion
//! lemma route that only factorizes an `m × m` matrix.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::design::DesignMatrices;
use crate::error::Result;
use crate::linalg::{cholesky_jittered_from, JitteredCholesky};

/// Applies `C⁻¹` and evaluates `log |C|`.
pub trait CovarianceSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn inverse_apply(&self, rhs: &DVector<f64>) -> DVector<f64>;
    fn log_det(&self) -> f64;
}

/// Which route `condition` and the likelihood take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    /// Woodbury when `m ≤ n / 2`, dense otherwise.
    #[default]
    Auto,
    Dense,
    Woodbury,
}

impl SolverPath {
    pub fn use_woodbury(self, n: usize, m: usize) -> bool {
        match self {
            SolverPath::Auto => 2 * m <= n,
            SolverPath::Dense => false,
            SolverPath::Woodbury => true,
        }
    }
}

/// Cholesky of the full `n × n` matrix `C`.
pub struct DenseSolver {
    pub chol: JitteredCholesky,
}

impl DenseSolver {
    /// Factorizes `gram + τ² I`.
    pub fn new(mut gram: DMatrix<f64>, tau2: f64) -> Result<Self> {
        for i in 0..gram.nrows() {
            gram[(i, i)] += tau2;
        }
        let chol = cholesky_jittered_from(&gram, None, 0.0, "data covariance")?;
        Ok(Self { chol })
    }

    pub fn from_design(dm: &DesignMatrices, sigma_blocks: &[DMatrix<f64>], tau2: f64) -> Result<Self> {
        Self::new(dm.gram(sigma_blocks), tau2)
    }
}

impl CovarianceSolver for DenseSolver {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn inverse_apply(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    fn log_det(&self) -> f64 {
        self.chol.log_det()
    }
}

/// `C⁻¹ = τ⁻² [I − P A⁻¹ Pᵀ]` with `P = Ψ L`, `A = τ² I_m + PᵀP = L̃ L̃ᵀ`,
/// and `|C| = τ^{2(n−m)} |L̃|²`.
pub struct WoodburySolver {
    pub p: DMatrix<f64>,
    pub a_chol: Cholesky<f64, Dyn>,
    pub tau2: f64,
}

impl WoodburySolver {
    pub fn new(p: DMatrix<f64>, tau2: f64) -> Result<Self> {
        let m = p.ncols();
        let mut a = p.tr_mul(&p);
        for i in 0..m {
            a[(i, i)] += tau2;
        }
        let a_chol = cholesky_jittered_from(&a, None, 0.0, "inversion-lemma core")?.factor;
        Ok(Self { p, a_chol, tau2 })
    }

    /// `P = Ψ L` from the blockwise Cholesky factors of `Σ`.
    pub fn from_design(dm: &DesignMatrices, chol_blocks: &[DMatrix<f64>], tau2: f64) -> Result<Self> {
        Self::new(dm.times_block_diag(chol_blocks), tau2)
    }

    /// `A⁻¹ v`.
    pub fn core_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.a_chol.solve(v)
    }
}

impl CovarianceSolver for WoodburySolver {
    fn name(&self) -> &'static str {
        "woodbury"
    }

    fn inverse_apply(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let u = self.p.tr_mul(rhs);
        let w = self.a_chol.solve(&u);
        (rhs - &self.p * w) / self.tau2
    }

    fn log_det(&self) -> f64 {
        let l = self.a_chol.l_dirty();
        let n = self.p.nrows() as f64;
        let m = self.p.ncols() as f64;
        (n - m) * self.tau2.ln() + 2.0 * (0..l.nrows()).map(|j| l[(j, j)].ln()).sum::<f64>()
    }
}

/// `C⁻¹ rhs` through the inversion lemma, given the blockwise Cholesky factors of `Σ`.
pub fn fast_inverse_apply(
    dm: &DesignMatrices,
    chol_blocks: &[DMatrix<f64>],
    tau2: f64,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(WoodburySolver::from_design(dm, chol_blocks, tau2)?.inverse_apply(rhs))
}

/// `log |C|` through the inversion lemma.
pub fn fast_logdet(dm: &DesignMatrices, chol_blocks: &[DMatrix<f64>], tau2: f64) -> Result<f64> {
    Ok(WoodburySolver::from_design(dm, chol_blocks, tau2)?.log_det())
}
