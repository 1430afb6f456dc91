//! Enumeration, local entropy and the zero-temperature limit against naive
//! recomputation.

mod common;

use blirp::interpolator::{Anchor, ConfigurationSets};
use blirp::perceptron::*;
use blirp::schedule::LiftingSchedule;
use proptest::prelude::*;

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Solutions from the energy formula alone, no Gray code and no bitset.
fn naive_solutions(inst: &BinaryInstance) -> Vec<bool> {
    (0..1u64 << inst.n).map(|c| inst.energy(c) <= SOLUTION_THRESHOLD).collect()
}

/// `(best reference, count)` per distance by an all-pairs double loop.
fn naive_local_entropy(n: usize, solved: &[bool], policy: ReferencePolicy) -> Vec<Option<(u64, u64)>> {
    let total = 1u64 << n;
    let mut best: Vec<Option<(u64, u64)>> = vec![None; n + 1];
    for r in 0..total {
        if policy == ReferencePolicy::SolutionsOnly && !solved[r as usize] {
            continue;
        }
        let mut counts = vec![0u64; n + 1];
        for c in 0..total {
            if solved[c as usize] {
                let d = (0..n).filter(|&j| (r >> j & 1) != (c >> j & 1)).count();
                counts[d] += 1;
            }
        }
        for d in 0..=n {
            let better = match best[d] {
                None => counts[d] > 0,
                Some((_, c)) => counts[d] > c,
            };
            if better {
                best[d] = Some((r, counts[d]));
            }
        }
    }
    best
}

#[test]
fn census_and_local_entropy_match_naive_loops() {
    for seed in 0..3 {
        let inst = BinaryInstance::generate(8, 2, seed).unwrap();
        let census = bp_ground_state(&inst).unwrap();
        let solved = naive_solutions(&inst);
        for c in 0..1u64 << 8 {
            assert_eq!(census.is_solution(c), solved[c as usize]);
        }
        for policy in [ReferencePolicy::AllCorners, ReferencePolicy::SolutionsOnly] {
            let curve = local_entropy_curve(&census, policy).unwrap();
            let naive = naive_local_entropy(8, &solved, policy);
            for (p, q) in curve.iter().zip(&naive) {
                assert_eq!(p.best_reference.zip(Some(p.cluster_count)), *q);
                assert_eq!(p.sigma, q.map(|(_, c)| (c as f64).ln() / 8.0));
            }
        }
    }
}

#[test]
fn ground_state_energy_matches_naive_minimum_when_unsatisfiable() {
    let inst = BinaryInstance::generate(10, 30, 1).unwrap();
    let census = bp_ground_state(&inst).unwrap();
    assert_eq!(census.count, 0);
    let naive = (0..1u64 << 10).map(|c| inst.energy(c)).fold(f64::INFINITY, f64::min);
    assert!((census.ground_state_energy - naive).abs() < 1e-12);
    assert!(census.ground_state_energy > 0.0);
}

#[test]
fn enumeration_budget_is_enforced() {
    let inst = BinaryInstance::generate(25, 1, 0).unwrap();
    assert!(matches!(bp_ground_state(&inst), Err(blirp::Error::Enumeration(_))));
    let small = bp_ground_state(&BinaryInstance::generate(19, 1, 0).unwrap()).unwrap();
    assert!(local_entropy(&small, 0, ReferencePolicy::SolutionsOnly).is_err());
}

#[test]
fn satisfiable_fraction_falls_with_alpha() {
    let n = 12;
    let frac = |m: usize| {
        (0..30).filter(|&s| bp_ground_state(&BinaryInstance::generate(n, m, s).unwrap()).unwrap().count > 0).count()
    };
    let (low, high) = (frac(2), frac(14));
    assert!(low >= high, "{low} vs {high}");
}

#[test]
fn zero_temperature_gap_shrinks_with_beta() {
    let (_, xs) = build_binary_sets(5, &SubsetSpec::Random { count: 6, seed: 2 }).unwrap();
    let ys = build_sphere_samples(4, 6, true, 2).unwrap();
    let sets = ConfigurationSets::with_anchors_equal(xs, ys, Anchor::Zero).unwrap();
    let at = |beta: f64| {
        let s = LiftingSchedule::new(vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], beta, -1.0)
            .validate()
            .unwrap();
        zero_temperature_check(&sets, &s, 2000, 9).unwrap()
    };
    let (a, b) = (at(10.0), at(40.0));
    assert!(b.gap < a.gap);
    assert!(b.gap <= 6f64.ln() / 40.0 + 3.0 * b.gap_se);
    assert_eq!(a.min_max, b.min_max);
}

#[test]
fn single_pair_zero_temperature_is_the_bilinear_form() {
    let x = vec![vec![0.6, 0.8]];
    let y = vec![vec![1.0, 0.0, 0.0]];
    let sets = ConfigurationSets::with_anchors_equal(x, y, Anchor::Zero).unwrap();
    let s = LiftingSchedule::new(vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], 25.0, -1.0)
        .validate()
        .unwrap();
    let z = zero_temperature_check(&sets, &s, 200, 3).unwrap();
    // one x, one y: ψ(1)√n/β = -yᵀGx - u4 draw by draw
    assert!(z.gap < 1e-12, "{}", z.gap);
}

#[test]
fn zero_temperature_rejects_bad_inputs() {
    let sets = ConfigurationSets::with_anchors_equal(vec![vec![2.0]], vec![vec![1.0]], Anchor::Zero).unwrap();
    let s = LiftingSchedule::new(vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], 5.0, -1.0)
        .validate()
        .unwrap();
    assert_eq!(zero_temperature_check(&sets, &s, 10, 0).unwrap_err(), blirp::Error::NonUnitNorm(0));
    let unit = ConfigurationSets::with_anchors_equal(vec![vec![1.0]], vec![vec![1.0]], Anchor::Zero).unwrap();
    let lifted = LiftingSchedule::new(vec![1.0, 0.5, 0.0], vec![1.0, 0.5, 0.0], vec![1.0, 0.5, 0.0], 5.0, -1.0)
        .validate()
        .unwrap();
    assert!(zero_temperature_check(&unit, &lifted, 10, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn census_is_invariant_under_row_permutation(seed in 0u64..1000, m in 1usize..5, rot in 0usize..5) {
        let inst = BinaryInstance::generate(7, m, seed).unwrap();
        let rows: Vec<Vec<f64>> = (0..m).map(|i| inst.row((i + rot) % m).to_vec()).collect();
        let a = bp_ground_state(&inst).unwrap();
        let b = bp_ground_state(&BinaryInstance::from_rows(&rows).unwrap()).unwrap();
        prop_assert_eq!(a.bits, b.bits);
        prop_assert!((a.ground_state_energy - b.ground_state_energy).abs() < 1e-12);
    }

    #[test]
    fn negating_a_column_flips_that_coordinate(seed in 0u64..1000, m in 1usize..5, col in 0usize..7) {
        let inst = BinaryInstance::generate(7, m, seed).unwrap();
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|i| inst.row(i).iter().enumerate().map(|(j, v)| if j == col { -v } else { *v }).collect())
            .collect();
        let a = bp_ground_state(&inst).unwrap();
        let b = bp_ground_state(&BinaryInstance::from_rows(&rows).unwrap()).unwrap();
        prop_assert_eq!(a.count, b.count);
        for c in 0..1u64 << 7 {
            prop_assert_eq!(a.is_solution(c), b.is_solution(c ^ (1 << col)));
        }
    }

    #[test]
    fn local_entropy_respects_counting_bounds(seed in 0u64..1000, n in 4usize..11, m in 1usize..6) {
        let census = bp_ground_state(&BinaryInstance::generate(n, m, seed).unwrap()).unwrap();
        let all = local_entropy_curve(&census, ReferencePolicy::AllCorners).unwrap();
        let sol = local_entropy_curve(&census, ReferencePolicy::SolutionsOnly).unwrap();
        for (a, s) in all.iter().zip(&sol) {
            prop_assert!(a.cluster_count >= s.cluster_count);
            for p in [a, s] {
                prop_assert!(p.cluster_count <= binomial(n, p.d));
                prop_assert!(p.cluster_count <= census.count);
                if let Some(sigma) = p.sigma {
                    prop_assert!(sigma <= (binomial(n, p.d) as f64).ln() / n as f64);
                    prop_assert!(sigma <= (census.count as f64).ln() / n as f64);
                }
            }
        }
        if census.count > 0 {
            prop_assert_eq!(sol[0].sigma, Some(0.0));
        }
    }
}
