//! Closed forms of the squared `L²` distance between the current mode and a
//! candidate mode, under the uniform measure on `[0, 1]^d`.
//!
//! For a difference `h = Σ_i h_i(x_i)` of additive functions,
//! `∫ h² = Σ_i Var(h_i) + (Σ_i E h_i)²`, and each variance and mean follows
//! from the banded hat-basis moments in linear time.

use crate::basis::{MomentTable, Subdivision};
use crate::error::{Error, Result};

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}

/// Accumulates `Σ Var(h_i)` and `Σ E h_i` over components.
#[derive(Default)]
struct Accumulator {
    variance: f64,
    mean: f64,
}

impl Accumulator {
    fn add(&mut self, eta: &[f64], moments: &MomentTable) {
        let mu = moments.mean(eta);
        self.variance += moments.square_integral(eta) - mu * mu;
        self.mean += mu;
    }
}

fn difference(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Criterion for activating a new input with base subdivision `{0, 1}`.
///
/// `old[i]` and `new[i]` are the current and candidate coefficients of the
/// already active inputs on `subdivisions[i]`; `added` holds the candidate's
/// two coefficients on the new input.
pub fn criterion_new_variable(
    old: &[Vec<f64>],
    new: &[Vec<f64>],
    added: [f64; 2],
    subdivisions: &[Subdivision],
) -> Result<f64> {
    check_len("candidate components", old.len(), new.len())?;
    check_len("subdivisions", old.len(), subdivisions.len())?;
    let mut acc = Accumulator::default();
    for ((o, n), s) in old.iter().zip(new).zip(subdivisions) {
        check_len("current coefficients", s.len(), o.len())?;
        check_len("candidate coefficients", s.len(), n.len())?;
        acc.add(&difference(o, n), &s.moments());
    }
    let slope = added[1] - added[0];
    let level = added[0] + added[1];
    Ok(acc.variance + slope * slope / 12.0 + (acc.mean - level / 2.0).powi(2))
}

/// Criterion for inserting knot `t` into the subdivision of active input
/// `star` (an index into `subdivisions`). `new[star]` lives on the refined
/// subdivision and has one more coefficient than `old[star]`.
pub fn criterion_new_knot(
    old: &[Vec<f64>],
    new: &[Vec<f64>],
    subdivisions: &[Subdivision],
    star: usize,
    t: f64,
    min_gap: f64,
) -> Result<f64> {
    check_len("candidate components", old.len(), new.len())?;
    check_len("subdivisions", old.len(), subdivisions.len())?;
    if star >= subdivisions.len() {
        return Err(Error::DimensionMismatch {
            what: "refined component",
            expected: subdivisions.len(),
            got: star,
        });
    }
    let mut acc = Accumulator::default();
    for (i, ((o, n), s)) in old.iter().zip(new).zip(subdivisions).enumerate() {
        check_len("current coefficients", s.len(), o.len())?;
        if i == star {
            let (refined, _) = s.insert(t, min_gap)?;
            check_len("candidate coefficients", refined.len(), n.len())?;
            let bar = s.refine_coefficients(o, t, min_gap)?;
            acc.add(&difference(&bar, n), &refined.moments());
        } else {
            check_len("candidate coefficients", s.len(), n.len())?;
            acc.add(&difference(o, n), &s.moments());
        }
    }
    Ok(acc.variance + acc.mean * acc.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_modes_give_zero() {
        let s = vec![Subdivision::uniform(4).unwrap()];
        let c = vec![vec![0.1, 0.5, -0.3, 1.0]];
        assert_eq!(criterion_new_variable(&c, &c, [0.0, 0.0], &s).unwrap(), 0.0);
        let refined = vec![s[0].refine_coefficients(&c[0], 0.5, 1e-6).unwrap()];
        let v = criterion_new_knot(&c, &refined, &s, 0, 0.5, 1e-6).unwrap();
        assert!(v.abs() <= 1e-15);
    }

    #[test]
    fn first_activation_of_identity() {
        let v = criterion_new_variable(&[], &[], [0.0, 1.0], &[]).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn hat_at_midpoint() {
        let s = vec![Subdivision::base()];
        let v = criterion_new_knot(&[vec![0.0, 0.0]], &[vec![0.0, 1.0, 0.0]], &s, 0, 0.5, 1e-6).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_mismatched_lengths_and_existing_knots() {
        let s = vec![Subdivision::base()];
        assert!(criterion_new_variable(&[vec![0.0]], &[vec![0.0, 1.0]], [0.0, 0.0], &s).is_err());
        assert!(criterion_new_knot(&[vec![0.0, 0.0]], &[vec![0.0, 0.0, 0.0]], &s, 0, 1.0, 1e-6).is_err());
        assert!(criterion_new_knot(&[vec![0.0, 0.0]], &[vec![0.0, 0.0]], &s, 0, 0.5, 1e-6).is_err());
    }

    #[test]
    fn nonnegative_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let k = rng.random_range(1..=3);
            let subs: Vec<Subdivision> = (0..k).map(|_| Subdivision::uniform(rng.random_range(2..=7)).unwrap()).collect();
            let old: Vec<Vec<f64>> = subs.iter().map(|s| (0..s.len()).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let new: Vec<Vec<f64>> = subs.iter().map(|s| (0..s.len()).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let v = criterion_new_variable(&old, &new, [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)], &subs).unwrap();
            assert!(v >= -1e-12);
        }
    }
}
