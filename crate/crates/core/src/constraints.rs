//! Componentwise shape constraints and their encodings as linear inequality
//! systems `l ≤ Λ c ≤ u` on the knot values of one dimension.
//!
//! A constraint on the piecewise-linear interpolant holds everywhere on
//! `[0, 1]` exactly when its encoding holds at the knots.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::Subdivision;
use crate::error::{Error, Result};

/// One sparse row of `Λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn dot(&self, c: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, a)| a * c[j]).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.entries.iter().map(|&(_, a)| a * a).sum()
    }
}

/// `l ≤ Λ c ≤ u` for the `m` knot values of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub ncols: usize,
    pub rows: Vec<SparseRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearSystem {
    pub fn empty(ncols: usize) -> Self {
        Self {
            ncols,
            rows: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.dot(c)).collect()
    }

    /// Whether `l - tol ≤ Λ c ≤ u + tol` componentwise.
    pub fn check(&self, c: &[f64], tol: f64) -> Result<bool> {
        if c.len() != self.ncols {
            return Err(Error::DimensionMismatch {
                what: "knot values",
                expected: self.ncols,
                got: c.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(r, (&l, &u))| {
                let v = r.dot(c);
                v >= l - tol && v <= u + tol
            }))
    }

    /// Largest violation `max(l - Λc, Λc - u, 0)`.
    pub fn max_violation(&self, c: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(r, (&l, &u))| {
                let v = r.dot(c);
                (l - v).max(v - u).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// Dense `q × m` copy of `Λ`.
    pub fn dense(&self) -> nalgebra::DMatrix<f64> {
        let mut out = nalgebra::DMatrix::zeros(self.rows.len(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.entries {
                out[(i, j)] = a;
            }
        }
        out
    }
}

/// A shape constraint that can be encoded on any subdivision.
pub trait ShapeConstraint: Send + Sync {
    fn name(&self) -> &'static str;
    fn encode(&self, s: &Subdivision) -> Result<LinearSystem>;
    /// Whether a sampled function (values on an increasing grid) satisfies the
    /// constraint within `tol`.
    fn holds_on_grid(&self, grid: &[f64], values: &[f64], tol: f64) -> bool;
}

struct Monotone {
    increasing: bool,
}

impl ShapeConstraint for Monotone {
    fn name(&self) -> &'static str {
        if self.increasing {
            "non_decreasing"
        } else {
            "non_increasing"
        }
    }

    fn encode(&self, s: &Subdivision) -> Result<LinearSystem> {
        let m = s.len();
        let sign = if self.increasing { 1.0 } else { -1.0 };
        let rows = (1..m)
            .map(|j| SparseRow {
                entries: vec![(j - 1, -sign), (j, sign)],
            })
            .collect();
        Ok(LinearSystem {
            ncols: m,
            rows,
            lower: vec![0.0; m - 1],
            upper: vec![f64::INFINITY; m - 1],
        })
    }

    fn holds_on_grid(&self, _grid: &[f64], values: &[f64], tol: f64) -> bool {
        let sign = if self.increasing { 1.0 } else { -1.0 };
        values.windows(2).all(|w| sign * (w[1] - w[0]) >= -tol)
    }
}

struct Convexity {
    convex: bool,
}

impl ShapeConstraint for Convexity {
    fn name(&self) -> &'static str {
        if self.convex {
            "convex"
        } else {
            "concave"
        }
    }

    /// Slope-difference rows scaled by `2 h₁ h₂ / (h₁ + h₂)`, which gives
    /// `[1, -2, 1]` on equispaced knots.
    fn encode(&self, s: &Subdivision) -> Result<LinearSystem> {
        let m = s.len();
        if m < 3 {
            return Err(Error::Unsupported(format!(
                "{} constraint needs at least 3 knots, got {m}",
                self.name()
            )));
        }
        let t = s.knots();
        let sign = if self.convex { 1.0 } else { -1.0 };
        let rows = (2..m)
            .map(|j| {
                let h1 = t[j - 1] - t[j - 2];
                let h2 = t[j] - t[j - 1];
                let total = h1 + h2;
                SparseRow {
                    entries: vec![
                        (j - 2, sign * 2.0 * h2 / total),
                        (j - 1, -sign * 2.0),
                        (j, sign * 2.0 * h1 / total),
                    ],
                }
            })
            .collect();
        Ok(LinearSystem {
            ncols: m,
            rows,
            lower: vec![0.0; m - 2],
            upper: vec![f64::INFINITY; m - 2],
        })
    }

    fn holds_on_grid(&self, grid: &[f64], values: &[f64], tol: f64) -> bool {
        let sign = if self.convex { 1.0 } else { -1.0 };
        let slopes: Vec<f64> = grid
            .windows(2)
            .zip(values.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect();
        slopes.windows(2).all(|s| sign * (s[1] - s[0]) >= -tol)
    }
}

struct Bounds {
    lower: f64,
    upper: f64,
}

impl ShapeConstraint for Bounds {
    fn name(&self) -> &'static str {
        "bounded"
    }

    fn encode(&self, s: &Subdivision) -> Result<LinearSystem> {
        let m = s.len();
        Ok(LinearSystem {
            ncols: m,
            rows: (0..m)
                .map(|j| SparseRow {
                    entries: vec![(j, 1.0)],
                })
                .collect(),
            lower: vec![self.lower; m],
            upper: vec![self.upper; m],
        })
    }

    fn holds_on_grid(&self, _grid: &[f64], values: &[f64], tol: f64) -> bool {
        values
            .iter()
            .all(|&v| v >= self.lower - tol && v <= self.upper + tol)
    }
}

struct Unconstrained;

impl ShapeConstraint for Unconstrained {
    fn name(&self) -> &'static str {
        "none"
    }

    fn encode(&self, s: &Subdivision) -> Result<LinearSystem> {
        Ok(LinearSystem::empty(s.len()))
    }

    fn holds_on_grid(&self, _grid: &[f64], _values: &[f64], _tol: f64) -> bool {
        true
    }
}

/// Per-dimension constraint tag as it appears in configs.
///
/// Serializes as a plain string (`"non_decreasing"`, `"convex"`, ...) or, for
/// bounds, as `{"bounded": {"lower": l, "upper": u}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    NonDecreasing,
    NonIncreasing,
    Convex,
    Concave,
    Bounded {
        lower: f64,
        upper: f64,
    },
    #[default]
    None,
}

impl ConstraintKind {
    pub fn bounded(lower: f64, upper: f64) -> Result<Self> {
        if lower.partial_cmp(&upper) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Config(format!(
                "bounded constraint needs lower < upper, got {lower} and {upper}"
            )));
        }
        Ok(Self::Bounded { lower, upper })
    }

    pub fn strategy(&self) -> Arc<dyn ShapeConstraint> {
        match *self {
            Self::NonDecreasing => Arc::new(Monotone { increasing: true }),
            Self::NonIncreasing => Arc::new(Monotone { increasing: false }),
            Self::Convex => Arc::new(Convexity { convex: true }),
            Self::Concave => Arc::new(Convexity { convex: false }),
            Self::Bounded { lower, upper } => Arc::new(Bounds { lower, upper }),
            Self::None => Arc::new(Unconstrained),
        }
    }

    pub fn encode(&self, s: &Subdivision) -> Result<LinearSystem> {
        if let Self::Bounded { lower, upper } = *self {
            Self::bounded(lower, upper)?;
        }
        self.strategy().encode(s)
    }

    /// Whether the constant function is feasible, which guarantees a
    /// feasible quadratic program.
    pub fn contains_constants(&self) -> bool {
        match *self {
            Self::Bounded { lower, upper } => lower <= upper,
            _ => true,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Self::None)
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bounded { lower, upper } => write!(f, "bounded:{lower}:{upper}"),
            other => f.write_str(other.strategy().name()),
        }
    }
}

impl FromStr for ConstraintKind {
    type Err = Error;

    /// Accepts the snake_case tags plus a few aliases, and `bounded:l:u`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let parts: Vec<&str> = lower.split(':').collect();
        match parts.as_slice() {
            ["non_decreasing" | "nondecreasing" | "increasing" | "+"] => Ok(Self::NonDecreasing),
            ["non_increasing" | "nonincreasing" | "decreasing" | "-"] => Ok(Self::NonIncreasing),
            ["convex"] => Ok(Self::Convex),
            ["concave"] => Ok(Self::Concave),
            ["none" | "free" | "0"] => Ok(Self::None),
            ["bounded", l, u] => {
                let parse = |v: &str| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad bound `{v}` in `{s}`")))
                };
                Self::bounded(parse(l)?, parse(u)?)
            }
            _ => Err(Error::UnknownStrategy {
                kind: "constraint",
                name: s.to_string(),
                known: "non_decreasing, non_increasing, convex, concave, bounded:l:u, none".into(),
            }),
        }
    }
}

/// Constraint systems of several dimensions stacked into one block-diagonal
/// system over the concatenated coefficient vector, split into one-sided rows
/// `a·c ≥ b`.
#[derive(Debug, Clone, Default)]
pub struct StackedConstraints {
    pub ncols: usize,
    pub rows: Vec<SparseRow>,
    pub rhs: Vec<f64>,
    /// `(index of source row in the stacked two-sided system, +1 lower | -1 upper)`.
    pub origin: Vec<(usize, f64)>,
}

impl StackedConstraints {
    pub fn from_systems(systems: &[LinearSystem]) -> Self {
        let mut out = StackedConstraints::default();
        let mut offset = 0;
        let mut source = 0;
        for sys in systems {
            for (row, (&l, &u)) in sys.rows.iter().zip(sys.lower.iter().zip(&sys.upper)) {
                let shifted: Vec<(usize, f64)> =
                    row.entries.iter().map(|&(j, a)| (j + offset, a)).collect();
                if l.is_finite() {
                    out.rows.push(SparseRow {
                        entries: shifted.clone(),
                    });
                    out.rhs.push(l);
                    out.origin.push((source, 1.0));
                }
                if u.is_finite() {
                    out.rows.push(SparseRow {
                        entries: shifted.iter().map(|&(j, a)| (j, -a)).collect(),
                    });
                    out.rhs.push(-u);
                    out.origin.push((source, -1.0));
                }
                source += 1;
            }
            offset += sys.ncols;
        }
        out.ncols = offset;
        out
    }

    /// No rows over `ncols` coefficients.
    pub fn with_ncols(mut self, ncols: usize) -> Self {
        self.ncols = ncols;
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Slacks `a·c - b`, nonnegative when feasible.
    pub fn slacks(&self, c: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(r, b)| r.dot(c) - b)
            .collect()
    }

    pub fn dense(&self) -> nalgebra::DMatrix<f64> {
        let mut out = nalgebra::DMatrix::zeros(self.rows.len(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.entries {
                out[(i, j)] = a;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn monotone_encoding() {
        let s = Subdivision::uniform(3).unwrap();
        let sys = ConstraintKind::NonDecreasing.encode(&s).unwrap();
        assert_eq!(
            sys.dense(),
            nalgebra::DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0])
        );
        assert_eq!(sys.lower, vec![0.0, 0.0]);
        assert!(sys.upper.iter().all(|u| *u == f64::INFINITY));
        assert!(sys.check(&[0.0, 1.0, 2.0], 0.0).unwrap());
        assert!(!sys.check(&[0.0, 1.0, 0.5], 0.0).unwrap());
        assert!(sys.check(&[0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn convex_encoding() {
        let s = Subdivision::uniform(3).unwrap();
        let sys = ConstraintKind::Convex.encode(&s).unwrap();
        assert_eq!(sys.dense(), nalgebra::DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 1.0]));
        assert_eq!(sys.lower, vec![0.0]);
        assert!(sys.check(&[1.0, 0.0, 1.0], 0.0).unwrap());
        assert!(matches!(
            ConstraintKind::Convex.encode(&Subdivision::base()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn none_is_empty() {
        let sys = ConstraintKind::None.encode(&Subdivision::uniform(4).unwrap()).unwrap();
        assert!(sys.is_empty());
        assert!(sys.check(&[5.0, -3.0, 1.0, 0.0], 0.0).unwrap());
    }

    #[test]
    fn bounded_encoding_and_validation() {
        let kind = ConstraintKind::bounded(-1.0, 2.0).unwrap();
        let sys = kind.encode(&Subdivision::uniform(3).unwrap()).unwrap();
        assert_eq!(sys.len(), 3);
        assert!(sys.check(&[-1.0, 0.0, 2.0], 0.0).unwrap());
        assert!(!sys.check(&[-1.0, 0.0, 2.1], 0.0).unwrap());
        assert!(ConstraintKind::bounded(1.0, 1.0).is_err());
    }

    #[test]
    fn parse_and_serde() {
        assert_eq!("increasing".parse::<ConstraintKind>().unwrap(), ConstraintKind::NonDecreasing);
        assert_eq!(
            "bounded:0:1.5".parse::<ConstraintKind>().unwrap(),
            ConstraintKind::Bounded { lower: 0.0, upper: 1.5 }
        );
        assert!("wiggly".parse::<ConstraintKind>().is_err());
        let kinds: Vec<ConstraintKind> =
            serde_json::from_str(r#"["non_decreasing", "convex", {"bounded": {"lower": 0, "upper": 1}}, "none"]"#)
                .unwrap();
        assert_eq!(kinds[2], ConstraintKind::Bounded { lower: 0.0, upper: 1.0 });
        assert_eq!(serde_json::to_string(&kinds[0]).unwrap(), r#""non_decreasing""#);
    }

    fn random_subdivision(rng: &mut ChaCha8Rng, m: usize) -> Subdivision {
        loop {
            let mut knots = vec![0.0, 1.0];
            knots.extend((0..m - 2).map(|_| rng.random::<f64>()));
            if let Ok(s) = Subdivision::new(knots) {
                return s;
            }
        }
    }

    /// Random feasible knot values for each kind, generated directly from the
    /// constraint definitions rather than the encoding.
    fn feasible_values(kind: ConstraintKind, s: &Subdivision, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let t = s.knots();
        match kind {
            ConstraintKind::NonDecreasing | ConstraintKind::NonIncreasing => {
                let mut acc = rng.random_range(-1.0..1.0);
                let sign = if kind == ConstraintKind::NonDecreasing { 1.0 } else { -1.0 };
                (0..t.len())
                    .map(|j| {
                        if j > 0 && rng.random::<f64>() > 0.2 {
                            acc += sign * rng.random::<f64>();
                        }
                        acc
                    })
                    .collect()
            }
            ConstraintKind::Convex | ConstraintKind::Concave => {
                let sign = if kind == ConstraintKind::Convex { 1.0 } else { -1.0 };
                let mut slope = rng.random_range(-2.0..2.0);
                let mut vals = vec![rng.random_range(-1.0..1.0)];
                for j in 1..t.len() {
                    if j > 1 && rng.random::<f64>() > 0.2 {
                        slope += sign * rng.random::<f64>();
                    }
                    let next = vals[j - 1] + slope * (t[j] - t[j - 1]);
                    vals.push(next);
                }
                vals
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn knot_feasibility_implies_everywhere_feasibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid: Vec<f64> = (0..10_000).map(|k| k as f64 / 9_999.0).collect();
        for kind in [
            ConstraintKind::NonDecreasing,
            ConstraintKind::NonIncreasing,
            ConstraintKind::Convex,
            ConstraintKind::Concave,
        ] {
            let strategy = kind.strategy();
            for _ in 0..100 {
                let m = rng.random_range(3..=12);
                let s = random_subdivision(&mut rng, m);
                let c = feasible_values(kind, &s, &mut rng);
                let sys = kind.encode(&s).unwrap();
                assert!(sys.check(&c, 1e-12).unwrap(), "{kind} {c:?}");
                let values: Vec<f64> = grid.iter().map(|&x| s.interpolate(&c, x)).collect();
                // the slope check divides by the grid spacing, so scale its tolerance
                let tol = if matches!(kind, ConstraintKind::Convex | ConstraintKind::Concave) {
                    1e-10 * 1e4
                } else {
                    1e-10
                };
                assert!(strategy.holds_on_grid(&grid, &values, tol), "{kind}");
            }
        }
    }

    #[test]
    fn infeasible_knots_fail_on_grid() {
        // a single violated difference is visible between the knots
        let s = Subdivision::uniform(4).unwrap();
        let c = [0.0, 1.0, 0.9, 2.0];
        assert!(!ConstraintKind::NonDecreasing.encode(&s).unwrap().check(&c, 0.0).unwrap());
        let grid: Vec<f64> = (0..1001).map(|k| k as f64 / 1000.0).collect();
        let values: Vec<f64> = grid.iter().map(|&x| s.interpolate(&c, x)).collect();
        assert!(!ConstraintKind::NonDecreasing
            .strategy()
            .holds_on_grid(&grid, &values, 1e-10));
    }

    #[test]
    fn feasibility_survives_knot_insertion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [ConstraintKind::NonDecreasing, ConstraintKind::Convex] {
            for _ in 0..100 {
                let m = rng.random_range(3..=8);
                let s = random_subdivision(&mut rng, m);
                let c = feasible_values(kind, &s, &mut rng);
                let t = rng.random_range(0.001..0.999);
                let Ok((refined, _)) = s.insert(t, 1e-6) else { continue };
                let bar = s.refine_coefficients(&c, t, 1e-6).unwrap();
                assert!(kind.encode(&refined).unwrap().check(&bar, 1e-10).unwrap());
            }
        }
    }

    #[test]
    fn stacking_offsets_and_sides() {
        let a = ConstraintKind::NonDecreasing.encode(&Subdivision::base()).unwrap();
        let b = ConstraintKind::bounded(0.0, 1.0).unwrap().encode(&Subdivision::base()).unwrap();
        let st = StackedConstraints::from_systems(&[a, b]);
        assert_eq!(st.ncols, 4);
        assert_eq!(st.len(), 1 + 4);
        assert_eq!(st.rows[1].entries, vec![(2, 1.0)]);
        assert_eq!(st.rows[2].entries, vec![(2, -1.0)]);
        assert_eq!(st.rhs[2], -1.0);
        let slacks = st.slacks(&[0.0, 1.0, 0.5, 0.5]);
        assert!(slacks.iter().all(|s| *s >= 0.0));
    }
}
