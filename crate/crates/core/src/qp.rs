//! Constrained posterior mode: `argmin (c − μ)ᵀ Σ⁻¹ (c − μ)` over `a_k·c ≥ b_k`.
//!
//! Dual active-set method of Goldfarb and Idnani. The metric `Σ⁻¹` is never
//! formed: with `Σ = R Rᵀ` the method's initial basis is `J = R`, which is
//! then updated by Givens rotations as constraints enter and leave the
//! active set.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::constraints::StackedConstraints;
use crate::error::{Error, Result};
use crate::linalg::cholesky_jittered_from;
use crate::posterior::TruncatedPosterior;

/// The quadratic program with its metric held through `Σ = R Rᵀ`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub mean: DVector<f64>,
    /// Lower Cholesky factor of the (jittered) covariance.
    pub chol: DMatrix<f64>,
    pub constraints: StackedConstraints,
}

impl QpProblem {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>, constraints: StackedConstraints) -> Result<Self> {
        if cov.nrows() != mean.len() || constraints.ncols != mean.len() {
            return Err(Error::DimensionMismatch {
                what: "quadratic program size",
                expected: mean.len(),
                got: if cov.nrows() != mean.len() { cov.nrows() } else { constraints.ncols },
            });
        }
        let chol = cholesky_jittered_from(cov, None, 0.0, "posterior covariance")?.l();
        Ok(Self {
            mean,
            chol,
            constraints,
        })
    }

    pub fn from_posterior(post: &TruncatedPosterior) -> Result<Self> {
        Self::new(post.mean.clone(), &post.cov, post.stacked())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `Σ⁻¹ v` through two triangular solves.
    pub fn metric_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let w = self.chol.solve_lower_triangular(v).expect("nonsingular factor");
        self.chol.tr_solve_lower_triangular(&w).expect("nonsingular factor")
    }

    /// `½ (c − μ)ᵀ Σ⁻¹ (c − μ)`.
    pub fn objective(&self, c: &DVector<f64>) -> f64 {
        let w = self
            .chol
            .solve_lower_triangular(&(c - &self.mean))
            .expect("nonsingular factor");
        0.5 * w.norm_squared()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Indices into the stacked one-sided rows.
    pub active: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    /// `‖Σ⁻¹(x − μ) − Σ_k λ_k a_k‖∞`.
    pub stationarity: f64,
    /// `max_k |λ_k (a_k·x − b_k)|` over the active set.
    pub complementarity: f64,
    /// Largest `b_k − a_k·x`, zero when feasible.
    pub max_violation: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct QpOptions {
    /// Violations below `tol · ‖a_k‖ · (1 + ‖x‖∞)` count as satisfied.
    pub tol: f64,
    /// Iteration cap as a multiple of `m + q`.
    pub iteration_factor: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            iteration_factor: 10,
        }
    }
}

/// Solves the program from scratch.
pub fn solve_mode(problem: &QpProblem) -> Result<QpSolution> {
    solve_mode_with(problem, &[], QpOptions::default())
}

/// Solves the program, adding violated constraints listed in `hint` first.
/// Passing the active set of a closely related program cuts the number of
/// add/drop steps.
pub fn solve_mode_with(problem: &QpProblem, hint: &[usize], opts: QpOptions) -> Result<QpSolution> {
    let m = problem.dim();
    let cons = &problem.constraints;
    let q_total = cons.len();
    let norms: Vec<f64> = cons.rows.iter().map(|r| r.norm_squared().sqrt()).collect();
    let mut preferred = vec![false; q_total];
    for &h in hint {
        if h < q_total {
            preferred[h] = true;
        }
    }

    let mut x = problem.mean.clone();
    let mut j = problem.chol.clone();
    let mut r = DMatrix::<f64>::zeros(m, m);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_active = vec![false; q_total];
    let max_iter = opts.iteration_factor * (m + q_total).max(1);
    let mut iterations = 0;

    loop {
        let scale = 1.0 + x.amax();
        let mut pick: Option<(bool, f64, usize)> = None;
        for k in 0..q_total {
            if in_active[k] || norms[k] == 0.0 {
                continue;
            }
            let s = cons.rows[k].dot(x.as_slice()) - cons.rhs[k];
            let viol = -s / norms[k];
            if viol > opts.tol * scale {
                let better = match pick {
                    None => true,
                    Some((pref, v, _)) => (preferred[k], viol) > (pref, v),
                };
                if better {
                    pick = Some((preferred[k], viol, k));
                }
            }
        }
        let Some((_, _, p)) = pick else { break };

        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                let max_violation = max_violation(cons, &x);
                return Err(Error::QpNoConvergence {
                    iterations,
                    max_violation,
                });
            }
            let q = active.len();
            let mut d = DVector::<f64>::zeros(m);
            for &(k, a) in &cons.rows[p].entries {
                d.axpy(a, &j.row(k).transpose(), 1.0);
            }
            let mut z = DVector::<f64>::zeros(m);
            for c in q..m {
                z.axpy(d[c], &j.column(c), 1.0);
            }
            let rr = if q > 0 {
                r.view((0, 0), (q, q))
                    .solve_upper_triangular(&d.rows(0, q))
                    .expect("nonsingular active factor")
            } else {
                DVector::zeros(0)
            };

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for i in 0..q {
                if rr[i] > 0.0 {
                    let ratio = u[i] / rr[i];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(i);
                    }
                }
            }
            let zn: f64 = d.rows(q, m - q).norm_squared();
            let s_p = cons.rows[p].dot(x.as_slice()) - cons.rhs[p];
            let t2 = if zn > 1e-28 * norms[p] * norms[p] {
                (-s_p / zn).max(0.0)
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible { constraint: p });
            }
            for i in 0..q {
                u[i] -= t * rr[i];
            }
            up += t;
            if t2.is_finite() {
                x.axpy(t, &z, 1.0);
            }
            if t2 <= t1 {
                add_constraint(&mut j, &mut r, &mut d, q);
                active.push(p);
                u.push(up);
                in_active[p] = true;
                break;
            }
            let l = drop.expect("finite dual step has a blocking index");
            in_active[active[l]] = false;
            active.remove(l);
            u.remove(l);
            drop_constraint(&mut j, &mut r, l, q);
        }
    }

    let mut grad = problem.metric_apply(&(&x - &problem.mean));
    let mut complementarity: f64 = 0.0;
    for (&k, &lam) in active.iter().zip(&u) {
        for &(c, a) in &cons.rows[k].entries {
            grad[c] -= lam * a;
        }
        let s = cons.rows[k].dot(x.as_slice()) - cons.rhs[k];
        complementarity = complementarity.max((lam * s).abs());
    }
    Ok(QpSolution {
        max_violation: max_violation(cons, &x),
        x,
        active,
        multipliers: u,
        iterations,
        stationarity: grad.amax(),
        complementarity,
    })
}

fn max_violation(cons: &StackedConstraints, x: &DVector<f64>) -> f64 {
    cons.slacks(x.as_slice())
        .into_iter()
        .fold(0.0, |acc, s| acc.max(-s))
}

/// Givens rotation `(c, s)` with `[c s; −s c] [a; b] = [h; 0]`.
fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0);
    }
    let h = a.hypot(b);
    (a / h, b / h)
}

fn rotate_columns(j: &mut DMatrix<f64>, c1: usize, c2: usize, c: f64, s: f64) {
    for row in 0..j.nrows() {
        let (a, b) = (j[(row, c1)], j[(row, c2)]);
        j[(row, c1)] = c * a + s * b;
        j[(row, c2)] = -s * a + c * b;
    }
}

/// Folds `d[q..]` into `d[q]` so that `J`'s columns past `q` stay orthogonal
/// to the new constraint, then appends `d[..=q]` as column `q` of `R`.
fn add_constraint(j: &mut DMatrix<f64>, r: &mut DMatrix<f64>, d: &mut DVector<f64>, q: usize) {
    let m = d.len();
    for c in (q + 1..m).rev() {
        let (cs, sn) = givens(d[c - 1], d[c]);
        if sn == 0.0 {
            continue;
        }
        d[c - 1] = cs * d[c - 1] + sn * d[c];
        d[c] = 0.0;
        rotate_columns(j, c - 1, c, cs, sn);
    }
    for i in 0..=q {
        r[(i, q)] = d[i];
    }
}

/// Removes column `l` of the `q × q` factor `R` and restores its triangular form.
fn drop_constraint(j: &mut DMatrix<f64>, r: &mut DMatrix<f64>, l: usize, q: usize) {
    for c in l..q - 1 {
        for i in 0..q {
            r[(i, c)] = r[(i, c + 1)];
        }
    }
    for i in 0..q {
        r[(i, q - 1)] = 0.0;
    }
    for k in l..q - 1 {
        let (cs, sn) = givens(r[(k, k)], r[(k + 1, k)]);
        if sn == 0.0 {
            continue;
        }
        for c in k..q - 1 {
            let (a, b) = (r[(k, c)], r[(k + 1, c)]);
            r[(k, c)] = cs * a + sn * b;
            r[(k + 1, c)] = -sn * a + cs * b;
        }
        r[(k + 1, k)] = 0.0;
        rotate_columns(j, k, k + 1, cs, sn);
    }
    for c in 0..q {
        r[(q - 1, c)] = 0.0;
    }
}
