use nalgebra::{DMatrix, DVector};

use crate::basis::Subdivision;
use crate::error::{Error, Result};

/// Sparse `Φ_i` for one active dimension: each data row touches the two knots
/// bracketing its input.
#[derive(Debug, Clone)]
pub struct DimensionDesign {
    pub dim: usize,
    pub m: usize,
    /// `(ν, φ_ν(x), φ_{ν+1}(x))` per data row.
    pub rows: Vec<(usize, f64, f64)>,
}

impl DimensionDesign {
    pub fn build(inputs: impl Iterator<Item = f64>, dim: usize, s: &Subdivision) -> Self {
        let rows = inputs.map(|x| s.locate(x)).collect();
        Self { dim, m: s.len(), rows }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows.len(), self.m);
        for (a, &(nu, w0, w1)) in self.rows.iter().enumerate() {
            out[(a, nu)] += w0;
            out[(a, nu + 1)] += w1;
        }
        out
    }
}

/// `Ψ = [Φ_1, …, Φ_d]` over the active dimensions, stored sparsely.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub n: usize,
    pub blocks: Vec<DimensionDesign>,
    /// Column offset of each block in `Ψ`.
    pub offsets: Vec<usize>,
    pub m: usize,
}

impl DesignMatrices {
    /// Builds the design for inputs `x` (n × d) and the active dimensions
    /// `active` with their subdivisions.
    pub fn new(x: &DMatrix<f64>, active: &[usize], subdivisions: &[Subdivision]) -> Result<Self> {
        if active.len() != subdivisions.len() {
            return Err(Error::DimensionMismatch {
                what: "subdivisions per active dimension",
                expected: active.len(),
                got: subdivisions.len(),
            });
        }
        for &dim in active {
            if dim >= x.ncols() {
                return Err(Error::DimensionMismatch {
                    what: "active dimension index",
                    expected: x.ncols(),
                    got: dim,
                });
            }
            if let Some((row, &value)) = x
                .column(dim)
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::InputOutOfRange { row, col: dim, value });
            }
        }
        let mut offsets = Vec::with_capacity(active.len());
        let mut m = 0;
        let blocks = active
            .iter()
            .zip(subdivisions)
            .map(|(&dim, s)| {
                offsets.push(m);
                m += s.len();
                DimensionDesign::build(x.column(dim).iter().copied(), dim, s)
            })
            .collect();
        Ok(Self {
            n: x.nrows(),
            blocks,
            offsets,
            m,
        })
    }

    pub fn psi(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.m);
        for (block, &off) in self.blocks.iter().zip(&self.offsets) {
            for (a, &(nu, w0, w1)) in block.rows.iter().enumerate() {
                out[(a, off + nu)] += w0;
                out[(a, off + nu + 1)] += w1;
            }
        }
        out
    }

    /// `Ψ ξ`.
    pub fn apply(&self, xi: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (block, &off) in self.blocks.iter().zip(&self.offsets) {
            for (a, &(nu, w0, w1)) in block.rows.iter().enumerate() {
                out[a] += w0 * xi[off + nu] + w1 * xi[off + nu + 1];
            }
        }
        out
    }

    /// `Ψ B` for a block-diagonal `B = bdiag(B_1, …)` given blockwise.
    pub fn times_block_diag(&self, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.m);
        for ((block, &off), b) in self.blocks.iter().zip(&self.offsets).zip(blocks) {
            let mi = block.m;
            for (a, &(nu, w0, w1)) in block.rows.iter().enumerate() {
                for c in 0..mi {
                    out[(a, off + c)] = w0 * b[(nu, c)] + w1 * b[(nu + 1, c)];
                }
            }
        }
        out
    }

    /// `Ψ Σ Ψᵀ` for block-diagonal `Σ`, using the two-nonzero row structure.
    pub fn gram(&self, sigma_blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
        let n = self.n;
        let mut out = DMatrix::zeros(n, n);
        for (block, s) in self.blocks.iter().zip(sigma_blocks) {
            for a in 0..n {
                let (na, wa0, wa1) = block.rows[a];
                for b in 0..=a {
                    let (nb, wb0, wb1) = block.rows[b];
                    let v = wa0 * (wb0 * s[(na, nb)] + wb1 * s[(na, nb + 1)])
                        + wa1 * (wb0 * s[(na + 1, nb)] + wb1 * s[(na + 1, nb + 1)]);
                    out[(a, b)] += v;
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                out[(b, a)] = out[(a, b)];
            }
        }
        out
    }
}
