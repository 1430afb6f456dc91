//! The nested engine against the direct per-leaf path: partition tables built
//! from reassembled draws, then the ζ ladder.

mod common;

use blirp::engine::{leaf_log_z, Evaluator, ProjectedTree};
use blirp::ensemble::{McPlan, SampleTree};
use blirp::interpolator::{build_partition, psi_estimate, zeta_ladder, ConfigurationSets, NestedLogZ};
use blirp::schedule::ValidSchedule;

fn leaf_paths(branching: &[usize]) -> Vec<Vec<u64>> {
    // lexicographic in (j_r, ..., j_1), j_1 fastest
    let total: usize = branching.iter().product();
    (0..total)
        .map(|mut idx| {
            let mut path = vec![0u64; branching.len()];
            for (k, &n) in branching.iter().enumerate() {
                path[k] = (idx % n) as u64;
                idx /= n;
            }
            path
        })
        .collect()
}

fn check(sets: &ConfigurationSets, schedule: &ValidSchedule, plan: &McPlan, t: f64) {
    let eval = Evaluator::new(sets, schedule, &[]);
    for o in 0..plan.outer_samples {
        let tree = SampleTree::generate(sets.dims(), schedule, plan, o as u64).unwrap();
        let projected = ProjectedTree::new(sets, &tree).unwrap();
        let engine_leaves = leaf_log_z(&eval, &projected, t).unwrap();
        let mut direct = Vec::new();
        for path in leaf_paths(&plan.per_level_samples) {
            let draw = tree.path_draw(plan.seed, &path).unwrap();
            direct.extend(build_partition(&draw, sets, schedule, t).unwrap().log_z);
        }
        assert_eq!(engine_leaves.len(), direct.len());
        for (a, b) in engine_leaves.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "leaf {a} vs {b}");
        }
        let ladder = zeta_ladder(
            &NestedLogZ {
                l: sets.len(),
                branching: plan.per_level_samples.clone(),
                log_z: direct,
            },
            schedule,
        )
        .unwrap();
        let r = schedule.r();
        let psi_direct = ladder.top()
            / (schedule.group_exponent() * schedule.s().abs() * (sets.x_dim() as f64).sqrt() * schedule.m(r));
        let psi_engine = eval.evaluate(&projected, t).unwrap().psi;
        assert!((psi_engine - psi_direct).abs() < 1e-10, "{psi_engine} vs {psi_direct}");
    }
}

#[test]
fn engine_matches_direct_path_at_each_depth() {
    let sets = common::unit_instance(4, 4, 3, 11);
    let plans = [vec![5], vec![3, 4], vec![2, 3, 2]];
    for (r, branching) in (1..=3).zip(plans) {
        let schedule = common::random_schedule(r, 5 + r as u64, 1.3);
        let plan = McPlan::new(3, branching, 42);
        for t in [0.0, 0.3, 1.0] {
            check(&sets, &schedule, &plan, t);
        }
    }
}

#[test]
fn engine_matches_direct_path_with_norms_anchor_and_restriction() {
    let sets = common::raw_instance(3, 5, 4, 2)
        .with_restriction(vec![vec![0, 1], vec![1, 2, 3], vec![2], vec![0, 3]])
        .unwrap();
    let schedule = blirp::schedule::LiftingSchedule::new(
        vec![1.0, 0.6, 0.2, 0.0],
        vec![0.9, 0.5, 0.3, 0.0],
        vec![1.0, 0.8, 0.1, 0.0],
        0.7,
        -1.0,
    )
    .with_group_exponent(1.7)
    .validate()
    .unwrap();
    check(&sets, &schedule, &McPlan::new(2, vec![3, 2], 9), 0.45);

    let positive = blirp::schedule::LiftingSchedule::new(
        vec![1.0, 0.4, 0.0],
        vec![1.0, 0.5, 0.0],
        vec![0.8, 0.3, 0.0],
        1.1,
        0.5,
    )
    .validate()
    .unwrap();
    check(&sets, &positive, &McPlan::new(2, vec![4], 3), 0.7);
}

#[test]
fn psi_estimate_is_the_mean_of_per_outer_values() {
    let sets = common::unit_instance(4, 4, 3, 1);
    let schedule = common::random_schedule(2, 3, 1.0);
    let plan = McPlan::new(6, vec![3, 3], 8);
    let eval = Evaluator::new(&sets, &schedule, &[]);
    let per: Vec<f64> = (0..6)
        .map(|o| eval.evaluate(&ProjectedTree::sample(&sets, &schedule, &plan, o).unwrap(), 0.5).unwrap().psi)
        .collect();
    let est = psi_estimate(&sets, &schedule, 0.5, &plan).unwrap();
    assert!((est.value - per.iter().sum::<f64>() / 6.0).abs() < 1e-14);
}
