//! Dense helpers shared by the conditioning, QP and sampling code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter tried first, as a fraction of the mean diagonal.
pub const BASE_JITTER: f64 = 1e-8;
/// Largest relative jitter before giving up.
pub const MAX_JITTER: f64 = 1e-4;

/// Cholesky factor together with the absolute jitter that was added to the diagonal.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn l(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    /// `log |A + jitter I|`.
    pub fn log_det(&self) -> f64 {
        let l = self.factor.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// Factorizes `a + εI`, where ε starts at `BASE_JITTER * scale` and grows
/// tenfold up to `MAX_JITTER * scale`. `scale` defaults to the mean diagonal.
pub fn cholesky_jittered(
    a: &DMatrix<f64>,
    scale: Option<f64>,
    what: &'static str,
) -> Result<JitteredCholesky> {
    cholesky_jittered_from(a, scale, BASE_JITTER, what)
}

/// Like [`cholesky_jittered`] but starting the escalation at relative jitter `start`
/// (zero tries the plain factorization first).
pub fn cholesky_jittered_from(
    a: &DMatrix<f64>,
    scale: Option<f64>,
    start: f64,
    what: &'static str,
) -> Result<JitteredCholesky> {
    let n = a.nrows();
    let diag = a.diagonal();
    let mean_diag = if n == 0 { 1.0 } else { diag.mean().abs() };
    let scale = scale.unwrap_or(mean_diag).max(f64::MIN_POSITIVE);
    let mut rel = start;
    loop {
        let jitter = rel * scale;
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        if let Some(factor) = Cholesky::new(m) {
            return Ok(JitteredCholesky { factor, jitter });
        }
        if rel >= MAX_JITTER * (1.0 - 1e-12) {
            let (min_diag, max_diag) = diag
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            return Err(Error::Cholesky {
                what,
                size: n,
                jitter,
                min_diag,
                max_diag,
            });
        }
        rel = if rel == 0.0 { BASE_JITTER } else { rel * 10.0 };
    }
}

/// Symmetrizes in place by averaging with the transpose.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escalates_for_singular_matrix() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let c = cholesky_jittered(&a, None, "test").unwrap();
        assert!(c.jitter > 0.0 && c.jitter <= MAX_JITTER);
    }

    #[test]
    fn fails_for_indefinite_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_jittered(&a, None, "test"),
            Err(Error::Cholesky { size: 2, .. })
        ));
    }

    #[test]
    fn log_det_matches_product() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let c = cholesky_jittered_from(&a, None, 0.0, "test").unwrap();
        assert!((c.log_det() - 11f64.ln()).abs() < 1e-12);
    }
}
