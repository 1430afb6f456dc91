#![allow(dead_code)]

use blirp::ensemble::{GaussianStream, LevelBlock, LevelDraw, SampleTree};
use blirp::interpolator::{Anchor, ConfigurationSets};
use blirp::perceptron::{build_binary_sets, build_sphere_samples, SubsetSpec};
use blirp::schedule::{LiftingSchedule, ValidSchedule};

/// `l` random corners of `{±1/√n}^n` against `l` unit vectors in `ℝ^m`.
pub fn unit_instance(n: usize, m: usize, l: usize, seed: u64) -> ConfigurationSets {
    let (_, x) = build_binary_sets(n, &SubsetSpec::Random { count: l, seed }).unwrap();
    let y = build_sphere_samples(m, l, false, seed ^ 0xa5a5).unwrap();
    ConfigurationSets::with_anchors_equal(x, y, Anchor::Zero).unwrap()
}

/// Gaussian vectors without normalization, to exercise the norm factors.
pub fn raw_instance(n: usize, m: usize, l: usize, seed: u64) -> ConfigurationSets {
    let mut s = GaussianStream::new(seed, &[0xfeed]);
    let mut draw = |d: usize| (0..l).map(|_| (0..d).map(|_| s.next_normal()).collect()).collect::<Vec<Vec<f64>>>();
    let x = draw(n);
    let x_bar = draw(n);
    let y = draw(m);
    ConfigurationSets::new(x, x_bar, y, Anchor::Soft { nu: 0.3, delta_bar: 0.1 }).unwrap()
}


pub fn schedule(m: &[f64], p: &[f64], q: &[f64], beta: f64, s: f64) -> ValidSchedule {
    LiftingSchedule::new(m.to_vec(), p.to_vec(), q.to_vec(), beta, s).validate().unwrap()
}

/// Nonincreasing sequence starting at `first` and ending at 0, interior
/// drawn from `u` (values in (0, 1)).
pub fn ladder(first: f64, u: &[f64]) -> Vec<f64> {
    let mut interior: Vec<f64> = u.iter().map(|v| v * first).collect();
    interior.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut out = vec![first];
    out.extend(interior);
    out.push(0.0);
    out
}

pub fn random_schedule(r: usize, seed: u64, beta: f64) -> ValidSchedule {
    let mut s = GaussianStream::new(seed, &[0xbeef, r as u64]);
    let mut u = |k: usize| (0..k).map(|_| 0.05 + 0.9 * s.next_uniform()).collect::<Vec<f64>>();
    let m = ladder(1.0, &u(r));
    let p = ladder(1.0, &u(r));
    let q = ladder(1.0, &u(r));
    LiftingSchedule::new(m, p, q, beta, -1.0).validate().unwrap()
}

/// Lifts a depth-one tree to depth two: level 1 is repeated `n2` times,
/// level 2 is identically zero and the old top becomes the new top.
pub fn lift(tree: &SampleTree, n2: usize) -> SampleTree {
    let (m, n) = (tree.dims.y_dim, tree.dims.x_dim);
    let n1 = tree.branching[0];
    let mut level1 = LevelBlock::with_capacity(n1 * n2, m, n);
    for _ in 0..n2 {
        for j in 0..n1 {
            level1.push(&tree.levels[0].get(j, m, n));
        }
    }
    let zero = LevelDraw {
        u4: 0.0,
        u2: vec![0.0; m],
        h: vec![0.0; n],
    };
    let mut level2 = LevelBlock::with_capacity(n2, m, n);
    for _ in 0..n2 {
        level2.push(&zero);
    }
    SampleTree {
        dims: tree.dims,
        outer_index: tree.outer_index,
        g: tree.g.clone(),
        top: tree.top.clone(),
        levels: vec![level1, level2],
        branching: vec![n1, n2],
    }
}

