use addcgp::basis::Subdivision;
use addcgp::bench::flood::{flood_laws, FloodSurrogate};
use addcgp::bench::Target;
use addcgp::constraints::{ConstraintKind, StackedConstraints};
use addcgp::maxmod::{criterion_new_knot, criterion_new_variable};
use addcgp::qp::{solve_mode, QpProblem};
use addcgp::sampler::{sample_truncated, HmcConfig, Whitened};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn subdivision(interior: &[f64]) -> Option<Subdivision> {
    let mut k: Vec<f64> = interior.to_vec();
    k.push(0.0);
    k.push(1.0);
    k.sort_by(f64::total_cmp);
    if k.windows(2).any(|w| w[1] - w[0] < 1e-3) {
        return None;
    }
    Subdivision::new(k).ok()
}

fn spd(entries: &[f64], m: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |i, j| entries[i * m + j]);
    &a * a.transpose() / m as f64 + DMatrix::identity(m, m) * 0.05
}

fn monotone_problem(interior: &[f64], entries: &[f64], mean: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>, StackedConstraints)> {
    let s = subdivision(interior)?;
    let m = s.len();
    let sys = ConstraintKind::NonDecreasing.encode(&s).ok()?;
    Some((DVector::from_column_slice(&mean[..m]), spd(&entries[..m * m], m), StackedConstraints::from_systems(&[sys])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn refined_mode_gives_zero_knot_criterion(
        interior in prop::collection::vec(0.01f64..0.99, 0..5),
        c in prop::collection::vec(-2.0f64..2.0, 7),
        t in 0.01f64..0.99,
    ) {
        let Some(s) = subdivision(&interior) else { return Ok(()) };
        prop_assume!(s.distance(t) > 1e-3);
        let old = vec![c[..s.len()].to_vec()];
        let new = vec![s.refine_coefficients(&old[0], t, 1e-6).unwrap()];
        let i = criterion_new_knot(&old, &new, std::slice::from_ref(&s), 0, t, 1e-6).unwrap();
        prop_assert!(i.abs() <= 1e-15, "criterion {i}");
        let subs = [s.clone()];
        prop_assert_eq!(criterion_new_variable(&old, &old, [0.0, 0.0], &subs).unwrap(), 0.0);
    }

    #[test]
    fn qp_mode_is_unique_and_complementary(
        interior in prop::collection::vec(0.01f64..0.99, 0..6),
        entries in prop::collection::vec(-1.0f64..1.0, 64),
        mean in prop::collection::vec(-2.0f64..2.0, 8),
        rot in 0usize..8,
    ) {
        let Some((mu, cov, cons)) = monotone_problem(&interior, &entries, &mean) else { return Ok(()) };
        let sol = solve_mode(&QpProblem::new(mu.clone(), &cov, cons.clone()).unwrap()).unwrap();
        let mut permuted = cons.clone();
        let q = permuted.len();
        permuted.rows.rotate_left(rot % q.max(1));
        permuted.rhs.rotate_left(rot % q.max(1));
        permuted.origin.rotate_left(rot % q.max(1));
        let other = solve_mode(&QpProblem::new(mu, &cov, permuted).unwrap()).unwrap();
        prop_assert!((&sol.x - &other.x).amax() <= 1e-8);
        prop_assert!(sol.complementarity <= 1e-7);
        prop_assert!(sol.max_violation <= 1e-9);
    }

    #[test]
    fn hmc_conserves_energy_and_stays_in_a_convex_set(
        interior in prop::collection::vec(0.01f64..0.99, 0..4),
        entries in prop::collection::vec(-1.0f64..1.0, 36),
        mean in prop::collection::vec(-2.0f64..2.0, 6),
        seed in 0u64..1000,
        w in 0.0f64..1.0,
    ) {
        let Some((mu, cov, cons)) = monotone_problem(&interior, &entries, &mean) else { return Ok(()) };
        let wh = Whitened::new(mu.clone(), &cov, cons.clone()).unwrap();
        let start = solve_mode(&QpProblem::new(mu, &cov, cons.clone()).unwrap()).unwrap().x;
        let init = wh.interior_point(&start).unwrap();
        let cfg = HmcConfig { n_samples: 40, burn_in: 5, seed, ..HmcConfig::default() };
        let set = sample_truncated(&wh, &init, &cfg).unwrap();
        prop_assert!(set.max_energy_drift <= 1e-6, "drift {}", set.max_energy_drift);
        let again = sample_truncated(&wh, &init, &cfg).unwrap();
        prop_assert_eq!(&set.samples, &again.samples);
        for k in 1..set.len() {
            let a = set.samples.row(k - 1).transpose();
            let b = set.samples.row(k).transpose();
            let mix = a * w + b * (1.0 - w);
            prop_assert!(cons.slacks(mix.as_slice()).iter().all(|&s| s >= -1e-10));
        }
    }

    #[test]
    fn transformed_flood_response_keeps_directions(raw_seed in prop::collection::vec(0.0f64..1.0, 37), dim in 0usize..37) {
        let laws = flood_laws();
        let mut raw: Vec<f64> = laws.iter().zip(&raw_seed).map(|(l, &u)| l.quantile(u)).collect();
        let (lo, hi) = (laws[dim].quantile(0.0), laws[dim].quantile(1.0));
        let mut prev: Option<f64> = None;
        for g in 0..=40 {
            raw[dim] = lo + (hi - lo) * g as f64 / 40.0;
            let u: Vec<f64> = laws.iter().zip(&raw).map(|(l, &v)| l.cdf(v)).collect();
            let h = FloodSurrogate.eval(&u).unwrap();
            if let Some(p) = prev {
                if dim < 24 { prop_assert!(h <= p + 1e-12) } else { prop_assert!(h >= p - 1e-12) }
            }
            prev = Some(h);
        }
    }
}
