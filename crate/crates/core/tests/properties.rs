//! Invariants of the γ measures and of the ψ/derivative estimators.

mod common;

use blirp::derivative::{phi_terms, phi_terms_level_one};
use blirp::ensemble::McPlan;
use blirp::interpolator::{psi_estimate, Anchor, ConfigurationSets};
use blirp::measures::{gamma_batch, normalization_audit, Family, GammaRequest, IndexTuple};
use blirp::schedule::LiftingSchedule;
use proptest::prelude::*;

fn swap(ix: IndexTuple) -> IndexTuple {
    IndexTuple {
        i1: ix.p1,
        i2: ix.p2,
        i3: ix.p3,
        p1: ix.i1,
        p2: ix.i2,
        p3: ix.i3,
    }
}

/// An observable with no symmetry between the two replicas.
fn lopsided(ix: IndexTuple) -> f64 {
    (1.0 + ix.i1 as f64) * (0.5 + ix.p2 as f64).sqrt() + 0.3 * (ix.i2 * ix.p1 + ix.i3) as f64 - 0.1 * ix.p3 as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_family_is_normalized(r in 1usize..=3, seed in 0u64..10_000, t in 0.0f64..=1.0, beta in 0.0f64..3.0) {
        let sets = common::unit_instance(4, 4, 3, seed);
        let schedule = common::random_schedule(r, seed, beta);
        let plan = McPlan::new(2, vec![3; r], seed);
        for row in normalization_audit(&Family::all(r), &sets, &schedule, t, &plan).unwrap() {
            prop_assert!(row.sum_deviation <= 1e-12, "{} off by {}", row.family, row.sum_deviation);
        }
    }

    #[test]
    fn gamma2_and_gamma21_are_identical(r in 1usize..=3, seed in 0u64..10_000, t in 0.0f64..=1.0) {
        let sets = common::raw_instance(3, 3, 3, seed);
        let schedule = common::random_schedule(r, seed, 1.0);
        let reqs = [GammaRequest::new(Family::Gamma2, 3, lopsided), GammaRequest::new(Family::Gamma21, 3, lopsided)];
        let batch = gamma_batch(&reqs, &sets, &schedule, t, &McPlan::new(2, vec![2; r], seed)).unwrap();
        for v in batch.per_outer {
            prop_assert_eq!(v[0].to_bits(), v[1].to_bits());
        }
    }

    #[test]
    fn replica_families_are_symmetric(r in 1usize..=3, seed in 0u64..10_000, t in 0.0f64..=1.0) {
        let sets = common::unit_instance(4, 3, 3, seed);
        let schedule = common::random_schedule(r, seed + 1, 1.2);
        let mut families = vec![Family::Gamma02, Family::Gamma1, Family::Gamma21, Family::Gamma22];
        families.extend((3..=r + 1).map(Family::Lifted));
        let mut reqs = Vec::new();
        for &f in &families {
            reqs.push(GammaRequest::new(f, 3, lopsided));
            reqs.push(GammaRequest::new(f, 3, |ix| lopsided(swap(ix))));
        }
        let batch = gamma_batch(&reqs, &sets, &schedule, t, &McPlan::new(2, vec![2; r], seed)).unwrap();
        for v in batch.per_outer {
            for pair in v.chunks(2) {
                prop_assert!((pair[0] - pair[1]).abs() <= 1e-12 * (1.0 + pair[0].abs()));
            }
        }
    }

    #[test]
    fn beta_zero_makes_every_family_uniform(r in 1usize..=3, seed in 0u64..10_000, t in 0.0f64..=1.0) {
        let l = 3;
        let sets = common::raw_instance(3, 4, l, seed);
        let schedule = common::random_schedule(r, seed, 0.0);
        let mut families = Family::all(r);
        families.retain(|f| *f != Family::Gamma00);
        for f in families {
            // one point of the family's domain; unused coordinates repeat the i-tuple
            let mut point = IndexTuple { i1: 1, i2: 2, i3: 0, p1: 2, p2: 0, p3: 1 };
            match f.arity() {
                3 => { point.p1 = point.i1; point.p2 = point.i2; point.p3 = point.i3; }
                4 => { point.p1 = point.i1; point.p3 = point.i3; }
                5 => point.p3 = point.i3,
                _ => {}
            }
            let req = [GammaRequest::new(f, l, |ix| (ix == point) as u8 as f64)];
            let batch = gamma_batch(&req, &sets, &schedule, t, &McPlan::new(2, vec![2; r], seed)).unwrap();
            let expected = (l as f64).powi(-(f.arity() as i32));
            for v in batch.per_outer {
                prop_assert!((v[0] - expected).abs() < 1e-14, "{f}: {} vs {expected}", v[0]);
            }
        }
    }

    #[test]
    fn exact_vanishing_when_p0_is_one(seed in 0u64..10_000, q0 in 0.2f64..=1.0, t in 0.05f64..0.95) {
        let sets = common::raw_instance(3, 3, 3, seed);
        let schedule = LiftingSchedule::new(vec![1.0, 0.6, 0.0], vec![1.0, 0.4, 0.0], vec![q0, 0.1, 0.0], 1.0, -1.0)
            .validate()
            .unwrap();
        let set = phi_terms(&sets, &schedule, t, &McPlan::new(3, vec![4], seed)).unwrap();
        prop_assert_eq!(set.phi01.value, 0.0);
        prop_assert_eq!(set.phi02.value, 0.0);
        prop_assert_eq!(set.phi01.std_error, 0.0);
        prop_assert_eq!(set.phi02.std_error, 0.0);
    }

    #[test]
    fn level_one_codepath_agrees(seed in 0u64..10_000, t in 0.05f64..0.95, p0 in 0.5f64..=1.0, group in 0.5f64..2.0) {
        let sets = common::raw_instance(3, 3, 3, seed);
        let schedule = LiftingSchedule::new(vec![1.0, 0.55, 0.0], vec![p0, 0.35, 0.0], vec![0.9, 0.45, 0.0], 0.9, -1.0)
            .with_group_exponent(group)
            .validate()
            .unwrap();
        let plan = McPlan::new(3, vec![4], seed);
        let a = phi_terms(&sets, &schedule, t, &plan).unwrap();
        let b = phi_terms_level_one(&sets, &schedule, t, &plan).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs());
        prop_assert!(close(a.phi_k[0].value, b.phi_k[0].value));
        prop_assert!(close(a.phi_k[1].value, b.phi_k[1].value));
        prop_assert!(close(a.phi22.value, b.phi22.value));
        prop_assert!(close(a.phi01.value, b.phi01.value));
        prop_assert!(close(a.phi02.value, b.phi02.value));
        prop_assert!(close(a.derivative.value, b.derivative.value));
    }

    #[test]
    fn anchor_shift_moves_psi_by_a_constant(seed in 0u64..10_000, shift in -1.0f64..1.0, t in 0.05f64..0.95) {
        let base = common::raw_instance(3, 4, 3, seed);
        let (nu, delta_bar) = (0.3, 0.1);
        let shifted = ConfigurationSets::new(
            base.x().to_vec(),
            base.x_bar().to_vec(),
            base.y().to_vec(),
            Anchor::Soft { nu, delta_bar: delta_bar - shift },
        )
        .unwrap();
        let schedule = common::random_schedule(2, seed, 1.1);
        let plan = McPlan::new(3, vec![3, 2], seed);
        let a = psi_estimate(&base, &schedule, t, &plan).unwrap();
        let b = psi_estimate(&shifted, &schedule, t, &plan).unwrap();
        // f grows by ν·shift everywhere, so ψ moves by sign(s) β ν shift / √n
        let expected = schedule.s().signum() * schedule.beta() * nu * shift / 3f64.sqrt();
        prop_assert!((b.value - a.value - expected).abs() < 1e-11);
        let da = phi_terms(&base, &schedule, t, &plan).unwrap().derivative.value;
        let db = phi_terms(&shifted, &schedule, t, &plan).unwrap().derivative.value;
        prop_assert!((da - db).abs() < 1e-11);
    }
}

#[cfg(feature = "parallel")]
#[test]
fn results_do_not_depend_on_thread_count() {
    let sets = common::unit_instance(4, 4, 3, 5);
    let schedule = common::random_schedule(2, 5, 1.0);
    let plan = McPlan::new(64, vec![4, 4], 77);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let psi = psi_estimate(&sets, &schedule, 0.4, &plan).unwrap();
                let d = phi_terms(&sets, &schedule, 0.4, &plan).unwrap();
                (psi.value.to_bits(), psi.std_error.to_bits(), d.derivative.value.to_bits())
            })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
}

#[test]
fn disjoint_seeds_agree_within_noise() {
    let sets = common::unit_instance(4, 4, 3, 8);
    let schedule = common::random_schedule(1, 8, 1.0);
    let a = psi_estimate(&sets, &schedule, 0.5, &McPlan::new(2000, vec![64], 1)).unwrap();
    let b = psi_estimate(&sets, &schedule, 0.5, &McPlan::new(2000, vec![64], 2)).unwrap();
    assert_ne!(a.value, b.value);
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.value - b.value).abs() <= 4.0 * se);
}

#[test]
fn phi1_is_not_negative_for_s_negative() {
    let sets = common::unit_instance(4, 4, 3, 2);
    let schedule = LiftingSchedule::new(vec![1.0, 0.5, 0.0], vec![1.0, 0.5, 0.0], vec![1.0, 0.5, 0.0], 1.0, -1.0)
        .validate()
        .unwrap();
    for seed in 0..5 {
        let set = phi_terms(&sets, &schedule, 0.5, &McPlan::new(100, vec![8], seed)).unwrap();
        assert!(set.phi_k[0].value >= -3.0 * set.phi_k[0].std_error);
    }
}
