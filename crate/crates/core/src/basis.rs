//! One-dimensional knot subdivisions, hat basis functions and their moments.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default minimum distance between two knots.
pub const DEFAULT_MIN_GAP: f64 = 1e-6;

/// Piecewise-linear bump equal to 1 at `v` and 0 outside `[u, w]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HatFunction {
    u: f64,
    v: f64,
    w: f64,
}

impl HatFunction {
    pub fn new(u: f64, v: f64, w: f64) -> Result<Self> {
        if !(u < v && v < w) {
            return Err(Error::InvalidHat { u, v, w });
        }
        Ok(Self { u, v, w })
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t < self.u || t > self.w {
            0.0
        } else if t <= self.v {
            (t - self.u) / (self.v - self.u)
        } else {
            (self.w - t) / (self.w - self.v)
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.u, self.w)
    }

    pub fn center(&self) -> f64 {
        self.v
    }
}

/// Ordered knots `0 = t_1 < ... < t_m = 1` of one input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Subdivision {
    knots: Vec<f64>,
}

impl Subdivision {
    /// Validates `knots` with the default minimum gap. Knots are sorted first.
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        Self::with_min_gap(knots, DEFAULT_MIN_GAP)
    }

    pub fn with_min_gap(mut knots: Vec<f64>, min_gap: f64) -> Result<Self> {
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidSubdivision("non-finite knot".into()));
        }
        knots.sort_by(f64::total_cmp);
        if knots.len() < 2 {
            return Err(Error::InvalidSubdivision(format!(
                "need at least two knots, got {}",
                knots.len()
            )));
        }
        if knots[0] != 0.0 || knots[knots.len() - 1] != 1.0 {
            return Err(Error::InvalidSubdivision(format!(
                "first and last knots must be 0 and 1, got {} and {}",
                knots[0],
                knots[knots.len() - 1]
            )));
        }
        if let Some(w) = knots.windows(2).find(|w| w[1] - w[0] < min_gap) {
            return Err(Error::InvalidSubdivision(format!(
                "knots {} and {} closer than {min_gap}",
                w[0], w[1]
            )));
        }
        Ok(Self { knots })
    }

    /// The base subdivision `{0, 1}`.
    pub fn base() -> Self {
        Self {
            knots: vec![0.0, 1.0],
        }
    }

    /// `m` equispaced knots on `[0, 1]`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidSubdivision(format!(
                "need at least two knots, got {m}"
            )));
        }
        let step = 1.0 / (m - 1) as f64;
        let mut knots: Vec<f64> = (0..m).map(|j| j as f64 * step).collect();
        knots[m - 1] = 1.0;
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Knot `j` (0-based) with the boundary conventions `t_(-1) = -1`, `t_(m) = 2`.
    fn extended_knot(&self, j: isize) -> f64 {
        if j < 0 {
            -1.0
        } else if j as usize >= self.knots.len() {
            2.0
        } else {
            self.knots[j as usize]
        }
    }

    /// Hat function centred at knot `j` (0-based).
    pub fn hat(&self, j: usize) -> HatFunction {
        let j = j as isize;
        HatFunction {
            u: self.extended_knot(j - 1),
            v: self.extended_knot(j),
            w: self.extended_knot(j + 1),
        }
    }

    /// Index `nu` of the interval `[t_nu, t_{nu+1}]` containing `x` together
    /// with the two nonzero basis weights `(phi_nu(x), phi_{nu+1}(x))`.
    /// `x` is clamped to `[0, 1]`.
    pub fn locate(&self, x: f64) -> (usize, f64, f64) {
        let x = x.clamp(0.0, 1.0);
        let m = self.knots.len();
        // first knot strictly greater than x, bounded to keep nu <= m - 2
        let upper = self.knots.partition_point(|&t| t <= x).clamp(1, m - 1);
        let nu = upper - 1;
        let (a, b) = (self.knots[nu], self.knots[nu + 1]);
        let w1 = (x - a) / (b - a);
        (nu, 1.0 - w1, w1)
    }

    /// Evaluates the piecewise-linear interpolant with knot values `coeffs` at `x`.
    pub fn interpolate(&self, coeffs: &[f64], x: f64) -> f64 {
        debug_assert_eq!(coeffs.len(), self.knots.len());
        let (nu, w0, w1) = self.locate(x);
        w0 * coeffs[nu] + w1 * coeffs[nu + 1]
    }

    /// Smallest distance from `t` to a knot.
    pub fn distance(&self, t: f64) -> f64 {
        self.knots
            .iter()
            .map(|k| (k - t).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Index `nu` with `t_nu < t < t_{nu+1}`, rejecting `t` within `min_gap` of a knot.
    pub fn interval_of(&self, t: f64, min_gap: f64) -> Result<usize> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::KnotOutOfRange(t));
        }
        if self.distance(t) < min_gap {
            return Err(Error::KnotCollision { t, min_gap });
        }
        Ok(self.knots.partition_point(|&k| k < t) - 1)
    }

    /// Returns `S ∪ {t}` and the index of the inserted knot.
    pub fn insert(&self, t: f64, min_gap: f64) -> Result<(Self, usize)> {
        let nu = self.interval_of(t, min_gap)?;
        let mut knots = self.knots.clone();
        knots.insert(nu + 1, t);
        Ok((Self { knots }, nu + 1))
    }

    /// Exact first and second moments of the hat basis over `[0, 1]`.
    pub fn moments(&self) -> MomentTable {
        let u = &self.knots;
        let m = u.len();
        let mut first = Vec::with_capacity(m);
        let mut diagonal = Vec::with_capacity(m);
        for j in 0..m {
            let left = if j == 0 { 0.0 } else { u[j] - u[j - 1] };
            let right = if j + 1 == m { 0.0 } else { u[j + 1] - u[j] };
            first.push((left + right) / 2.0);
            diagonal.push((left + right) / 3.0);
        }
        let off_diagonal = u.windows(2).map(|w| (w[1] - w[0]) / 6.0).collect();
        MomentTable {
            first,
            diagonal,
            off_diagonal,
        }
    }

    /// Re-expresses the interpolant with knot values `coeffs` on `S ∪ {t}`.
    pub fn refine_coefficients(&self, coeffs: &[f64], t: f64, min_gap: f64) -> Result<Vec<f64>> {
        if coeffs.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "coefficients",
                expected: self.len(),
                got: coeffs.len(),
            });
        }
        let nu = self.interval_of(t, min_gap)?;
        let (a, b) = (self.knots[nu], self.knots[nu + 1]);
        let inserted = coeffs[nu] * (b - t) / (b - a) + coeffs[nu + 1] * (t - a) / (b - a);
        let mut out = Vec::with_capacity(coeffs.len() + 1);
        out.extend_from_slice(&coeffs[..=nu]);
        out.push(inserted);
        out.extend_from_slice(&coeffs[nu + 1..]);
        Ok(out)
    }
}

impl Serialize for Subdivision {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.knots.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Subdivision {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let knots = Vec::<f64>::deserialize(d)?;
        Subdivision::new(knots).map_err(serde::de::Error::custom)
    }
}

/// `E_j = ∫φ_j` and the 1-band matrix `E_{j,j'} = ∫φ_j φ_{j'}` over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub first: Vec<f64>,
    pub diagonal: Vec<f64>,
    /// `off_diagonal[j] = E_{j,j+1}`.
    pub off_diagonal: Vec<f64>,
}

impl MomentTable {
    /// `E_{j,j'}`, zero outside the band.
    pub fn second(&self, j: usize, k: usize) -> f64 {
        match j.abs_diff(k) {
            0 => self.diagonal[j],
            1 => self.off_diagonal[j.min(k)],
            _ => 0.0,
        }
    }

    /// `∫ f` for the interpolant with knot values `c`.
    pub fn mean(&self, c: &[f64]) -> f64 {
        c.iter().zip(&self.first).map(|(a, e)| a * e).sum()
    }

    /// `∫ f²` for the interpolant with knot values `c`, in O(m).
    pub fn square_integral(&self, c: &[f64]) -> f64 {
        let diag: f64 = c
            .iter()
            .zip(&self.diagonal)
            .map(|(a, e)| a * a * e)
            .sum();
        let off: f64 = c
            .windows(2)
            .zip(&self.off_diagonal)
            .map(|(w, e)| w[0] * w[1] * e)
            .sum();
        diag + 2.0 * off
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson on each knot interval; exact for the piecewise
    /// quadratic integrands involved.
    fn quad<F: Fn(f64) -> f64>(s: &Subdivision, f: F) -> f64 {
        let mut total = 0.0;
        for w in s.knots().windows(2) {
            let (a, b) = (w[0], w[1]);
            let n = 16;
            let h = (b - a) / n as f64;
            let mut acc = f(a) + f(b);
            for k in 1..n {
                let x = a + k as f64 * h;
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            total += acc * h / 3.0;
        }
        total
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

    #[test]
    fn hat_values() {
        let h = HatFunction::new(0.0, 0.5, 1.0).unwrap();
        assert_eq!(h.eval(0.5), 1.0);
        assert_eq!(h.eval(0.25), 0.5);
        assert_eq!(h.eval(1.2), 0.0);
        assert_eq!(h.eval(-0.1), 0.0);
        assert!(HatFunction::new(0.5, 0.5, 1.0).is_err());
        assert!(HatFunction::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn subdivision_validation() {
        assert!(Subdivision::new(vec![0.0]).is_err());
        assert!(Subdivision::new(vec![0.1, 1.0]).is_err());
        assert!(Subdivision::new(vec![0.0, 0.9]).is_err());
        assert!(Subdivision::new(vec![0.0, 0.5, 0.5 + 1e-7, 1.0]).is_err());
        let s = Subdivision::new(vec![1.0, 0.3, 0.0]).unwrap();
        assert_eq!(s.knots(), &[0.0, 0.3, 1.0]);
    }

    #[test]
    fn base_moments() {
        let m = Subdivision::base().moments();
        assert_eq!(m.first, vec![0.5, 0.5]);
        assert_abs_diff_eq!(m.second(0, 0), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.second(0, 1), 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.second(1, 1), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn three_knot_first_moments() {
        let m = Subdivision::new(vec![0.0, 0.5, 1.0]).unwrap().moments();
        assert_eq!(m.first, vec![0.25, 0.5, 0.25]);
        assert_eq!(m.second(0, 2), 0.0);
    }

    #[test]
    fn moments_match_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m = rng.random_range(2..=20);
            let s = random_subdivision(&mut rng, m);
            let table = s.moments();
            for j in 0..m {
                let hj = s.hat(j);
                assert_abs_diff_eq!(table.first[j], quad(&s, |x| hj.eval(x)), epsilon = 1e-10);
                for k in 0..m {
                    let hk = s.hat(k);
                    let q = quad(&s, |x| hj.eval(x) * hk.eval(x));
                    assert_abs_diff_eq!(table.second(j, k), q, epsilon = 1e-10);
                }
            }
            assert_abs_diff_eq!(table.first.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn refine_examples() {
        let base = Subdivision::base();
        assert_eq!(
            base.refine_coefficients(&[0.0, 1.0], 0.5, DEFAULT_MIN_GAP).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(
            base.refine_coefficients(&[2.5, 2.5], 0.37, DEFAULT_MIN_GAP).unwrap(),
            vec![2.5, 2.5, 2.5]
        );
        let s = Subdivision::new(vec![0.0, 0.25, 1.0]).unwrap();
        let r = s.refine_coefficients(&[0.0, 1.0, 0.0], 0.5, DEFAULT_MIN_GAP).unwrap();
        assert_abs_diff_eq!(r.as_slice(), [0.0, 1.0, 2.0 / 3.0, 0.0].as_slice(), epsilon = 1e-15);
        assert!(matches!(
            s.refine_coefficients(&[0.0, 1.0, 0.0], 0.25 + 1e-9, DEFAULT_MIN_GAP),
            Err(Error::KnotCollision { .. })
        ));
    }

    #[test]
    fn locate_at_knots_gives_unit_weight() {
        let s = Subdivision::new(vec![0.0, 0.2, 0.7, 1.0]).unwrap();
        for (j, &t) in s.knots().iter().enumerate() {
            let (nu, w0, w1) = s.locate(t);
            let mut row = [0.0; 4];
            row[nu] += w0;
            row[nu + 1] += w1;
            for (k, v) in row.iter().enumerate() {
                assert_eq!(*v, if k == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn serializes_as_sorted_array() {
        let s = Subdivision::new(vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(serde_json::to_string(&s).unwrap(), "[0.0,0.5,1.0]");
        let back: Subdivision = serde_json::from_str("[1.0,0.0,0.25]").unwrap();
        assert_eq!(back.knots(), &[0.0, 0.25, 1.0]);
        assert!(serde_json::from_str::<Subdivision>("[0.0,0.5]").is_err());
    }

    fn subdivision_strategy() -> impl Strategy<Value = Subdivision> {
        proptest::collection::vec(0.001f64..0.999, 0..18).prop_filter_map("gap", |inner| {
            let mut knots = vec![0.0, 1.0];
            knots.extend(inner);
            Subdivision::new(knots).ok()
        })
    }

    proptest! {
        #[test]
        fn partition_of_unity(s in subdivision_strategy(), t in 0.0f64..=1.0) {
            let total: f64 = (0..s.len()).map(|j| s.hat(j).eval(t)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn refinement_preserves_function(
            s in subdivision_strategy(),
            seed in any::<u64>(),
            t in 0.0005f64..0.9995,
        ) {
            prop_assume!(s.distance(t) >= DEFAULT_MIN_GAP);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xi: Vec<f64> = (0..s.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (refined, _) = s.insert(t, DEFAULT_MIN_GAP).unwrap();
            let bar = s.refine_coefficients(&xi, t, DEFAULT_MIN_GAP).unwrap();
            for k in 0..=1000 {
                let x = k as f64 / 1000.0;
                let diff = (s.interpolate(&xi, x) - refined.interpolate(&bar, x)).abs();
                prop_assert!(diff <= 1e-12, "x={x} diff={diff}");
            }
        }
    }
}
