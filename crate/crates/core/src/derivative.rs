//! Closed-form dψ/dt as a weighted sum of γ averages, and the
//! common-random-number finite-difference oracle it is checked against.

use serde::Serialize;

use crate::engine::{self, Evaluator, ProjectedTree};
use crate::ensemble::{McPlan, SampleTree};
use crate::error::{Error, Result};
use crate::interpolator::{build_partition, dot, ConfigurationSets, PartitionTable};
use crate::logspace::mean_and_stderr;
use crate::measures::{gamma00, phi_u1_weights, Family, GammaRequest, IndexTuple};
use crate::schedule::{omega, ValidSchedule};

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub const ZERO: Estimate = Estimate { value: 0.0, std_error: 0.0 };

    pub fn from_samples(samples: &[f64]) -> Self {
        let (value, std_error) = mean_and_stderr(samples);
        Self { value, std_error }
    }
}

/// The φ terms of the derivative identity at one `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiTermSet {
    pub r: usize,
    pub t: f64,
    /// `phi_k[k1-1]` for `k1 = 1..=r+1`.
    pub phi_k: Vec<Estimate>,
    pub phi22: Estimate,
    pub phi01: Estimate,
    pub phi02: Estimate,
    /// `sign(s) β² / (2√n) · (Σ φ_k1 + φ22 + φ01 + φ02)`, with the standard
    /// error of the per-outer sum.
    pub derivative: Estimate,
}

/// Which term a request feeds.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Term {
    K(usize),
    T22,
    T01,
    T02,
}

/// `(p ‖x_i‖‖x_p‖ - x_pᵀx_i)(q ‖y_i‖‖y_p‖ - y_pᵀy_i)`
fn overlap_observable(sets: &ConfigurationSets, p: f64, q: f64) -> impl Fn(IndexTuple) -> f64 + '_ {
    move |ix| {
        let xs = sets.x();
        let ys = sets.y();
        let a = p * sets.x_norm(ix.i1) * sets.x_norm(ix.p1) - dot(&xs[ix.p1], &xs[ix.i1]);
        let b = q * sets.y_norm(ix.i2) * sets.y_norm(ix.p2) - dot(&ys[ix.p2], &ys[ix.i2]);
        a * b
    }
}

/// `‖x_i1‖² (y_p2ᵀy_i2 - q0 ‖y_i2‖‖y_p2‖)`. The sign is the one that
/// reproduces the finite-difference derivative when `p0 < 1`.
fn phi02_observable(sets: &ConfigurationSets, q0: f64) -> impl Fn(IndexTuple) -> f64 + '_ {
    move |ix| {
        let ys = sets.y();
        let x2 = sets.x_norm(ix.i1).powi(2);
        x2 * (dot(&ys[ix.p2], &ys[ix.i2]) - q0 * sets.y_norm(ix.i2) * sets.y_norm(ix.p2))
    }
}

struct Assembly {
    terms: Vec<Term>,
    prefactors: Vec<f64>,
    requests: Vec<GammaRequest>,
    r: usize,
}

fn assemble(sets: &ConfigurationSets, schedule: &ValidSchedule) -> Result<Assembly> {
    let r = schedule.r();
    let l = sets.len();
    let s = schedule.s();
    let p = schedule.group_exponent();
    let mut terms = Vec::new();
    let mut prefactors = Vec::new();
    let mut requests = Vec::new();
    let mut push = |term: Term, pre: f64, req: Option<GammaRequest>| {
        if pre != 0.0 {
            if let Some(req) = req {
                terms.push(term);
                prefactors.push(pre);
                requests.push(req);
            }
        }
    };
    for k1 in 1..=r + 1 {
        let pre = -s * (schedule.m(k1 - 1) - schedule.m(k1)) * omega(k1, p)?;
        let obs = overlap_observable(sets, schedule.p(k1 - 1), schedule.q(k1 - 1));
        let req = (pre != 0.0).then(|| GammaRequest::new(Family::level(k1).unwrap(), l, obs));
        push(Term::K(k1), pre, req);
    }
    let pre22 = s * schedule.m(1) * (p - 1.0);
    let req = (pre22 != 0.0)
        .then(|| GammaRequest::new(Family::Gamma22, l, overlap_observable(sets, schedule.p(1), schedule.q(1))));
    push(Term::T22, pre22, req);
    let pre01 = (1.0 - schedule.p(0)) * (1.0 - schedule.q(0));
    let req = (pre01 != 0.0).then(|| {
        GammaRequest::new(Family::Gamma01, l, |ix| {
            sets.x_norm(ix.i1).powi(2) * sets.y_norm(ix.i2).powi(2)
        })
    });
    push(Term::T01, pre01, req);
    let pre02 = (s - 1.0) * (1.0 - schedule.p(0));
    let req = (pre02 != 0.0).then(|| GammaRequest::new(Family::Gamma02, l, phi02_observable(sets, schedule.q(0))));
    push(Term::T02, pre02, req);
    Ok(Assembly {
        terms,
        prefactors,
        requests,
        r,
    })
}

fn open_t(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::TOutOfRange(t))
    }
}

fn derivative_scale(sets: &ConfigurationSets, schedule: &ValidSchedule) -> f64 {
    schedule.s().signum() * schedule.beta().powi(2) / (2.0 * (sets.x_dim() as f64).sqrt())
}

impl Assembly {
    /// `φ` contributions of one outer sample, one entry per request.
    fn weighted(&self, gamma: &[f64]) -> Vec<f64> {
        gamma.iter().zip(&self.prefactors).map(|(g, p)| g * p).collect()
    }

    fn collect(&self, t: f64, scale: f64, per_outer: &[Vec<f64>]) -> PhiTermSet {
        let r = self.r;
        let column = |q: usize| per_outer.iter().map(|v| v[q]).collect::<Vec<f64>>();
        let mut phi_k = vec![Estimate::ZERO; r + 1];
        let (mut phi22, mut phi01, mut phi02) = (Estimate::ZERO, Estimate::ZERO, Estimate::ZERO);
        for (q, term) in self.terms.iter().enumerate() {
            let e = Estimate::from_samples(&column(q));
            match term {
                Term::K(k1) => phi_k[k1 - 1] = e,
                Term::T22 => phi22 = e,
                Term::T01 => phi01 = e,
                Term::T02 => phi02 = e,
            }
        }
        let total: Vec<f64> = per_outer.iter().map(|v| scale * v.iter().sum::<f64>()).collect();
        let derivative = if scale == 0.0 || self.terms.is_empty() {
            Estimate::ZERO
        } else {
            Estimate::from_samples(&total)
        };
        PhiTermSet {
            r,
            t,
            phi_k,
            phi22,
            phi01,
            phi02,
            derivative,
        }
    }
}

/// The φ terms estimated on the nested trees of `plan`.
pub fn phi_terms(
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    t: f64,
    plan: &McPlan,
) -> Result<PhiTermSet> {
    open_t(t)?;
    plan.check(schedule.r())?;
    let asm = assemble(sets, schedule)?;
    let eval = Evaluator::new(sets, schedule, &asm.requests);
    eval.check_requests()?;
    let per_outer = engine::map_outer(plan, |o| {
        let tree = ProjectedTree::sample(sets, schedule, plan, o)?;
        Ok(asm.weighted(&eval.evaluate(&tree, t)?.gamma))
    })?;
    Ok(asm.collect(t, derivative_scale(sets, schedule), &per_outer))
}

/// Closed-form dψ/dt.
pub fn dpsi_dt_closed(
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    t: f64,
    plan: &McPlan,
) -> Result<Estimate> {
    Ok(phi_terms(sets, schedule, t, plan)?.derivative)
}

/// The φ terms of a single projected tree; every standard error is zero.
pub fn phi_terms_on_tree(
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    tree: &ProjectedTree,
    t: f64,
) -> Result<PhiTermSet> {
    open_t(t)?;
    let asm = assemble(sets, schedule)?;
    let eval = Evaluator::new(sets, schedule, &asm.requests);
    eval.check_requests()?;
    let weighted = asm.weighted(&eval.evaluate(tree, t)?.gamma);
    Ok(asm.collect(t, derivative_scale(sets, schedule), &[weighted]))
}

fn check_step(t: f64, h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Step(h));
    }
    open_t(t - h)?;
    open_t(t + h)
}

/// Central difference `(ψ(t+h) - ψ(t-h)) / 2h` on identical draws; the
/// standard error comes from the per-outer differences.
pub fn dpsi_dt_fd(
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    t: f64,
    h: f64,
    plan: &McPlan,
) -> Result<Estimate> {
    check_step(t, h)?;
    plan.check(schedule.r())?;
    let eval = Evaluator::new(sets, schedule, &[]);
    let diffs = engine::map_outer(plan, |o| {
        let tree = ProjectedTree::sample(sets, schedule, plan, o)?;
        let up = eval.evaluate(&tree, t + h)?.psi;
        let down = eval.evaluate(&tree, t - h)?.psi;
        Ok((up - down) / (2.0 * h))
    })?;
    Ok(Estimate::from_samples(&diffs))
}

/// One line of the consistency report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub r: usize,
    pub t: f64,
    pub h: f64,
    pub closed: f64,
    pub se_closed: f64,
    pub fd: f64,
    pub se_fd: f64,
    pub z: f64,
    pub seed: u64,
    pub samples: String,
}

impl ConsistencyRow {
    pub const CSV_HEADER: &'static str = "r,t,h,closed,se_closed,fd,se_fd,z,seed,samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{},{}",
            self.r, self.t, self.h, self.closed, self.se_closed, self.fd, self.se_fd, self.z, self.seed, self.samples
        )
    }

    pub fn flagged(&self) -> bool {
        self.z.is_nan() || self.z.abs() > 3.0
    }
}

/// `z = (closed - fd) / √(SE_c² + SE_fd²)`; zero when both sides agree exactly.
pub fn z_score(closed: Estimate, fd: Estimate) -> f64 {
    let diff = closed.value - fd.value;
    let se = (closed.std_error.powi(2) + fd.std_error.powi(2)).sqrt();
    if diff == 0.0 {
        0.0
    } else {
        diff / se
    }
}

/// Closed form and finite difference at each `t`, on one shared set of trees.
pub fn consistency_report(
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    t_grid: &[f64],
    h: f64,
    plan: &McPlan,
) -> Result<Vec<ConsistencyRow>> {
    for &t in t_grid {
        check_step(t, h)?;
    }
    plan.check(schedule.r())?;
    let asm = assemble(sets, schedule)?;
    let eval = Evaluator::new(sets, schedule, &asm.requests);
    eval.check_requests()?;
    let plain = Evaluator::new(sets, schedule, &[]);
    let scale = derivative_scale(sets, schedule);
    // per_outer[o][i] = (phi contributions, fd difference) at t_grid[i]
    let per_outer = engine::map_outer(plan, |o| {
        let tree = ProjectedTree::sample(sets, schedule, plan, o)?;
        t_grid
            .iter()
            .map(|&t| {
                let phis = asm.weighted(&eval.evaluate(&tree, t)?.gamma);
                let up = plain.evaluate(&tree, t + h)?.psi;
                let down = plain.evaluate(&tree, t - h)?.psi;
                Ok((phis, (up - down) / (2.0 * h)))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let samples = format!(
        "{}x{}",
        plan.outer_samples,
        plan.per_level_samples.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    );
    Ok(t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let phis: Vec<Vec<f64>> = per_outer.iter().map(|row| row[i].0.clone()).collect();
            let closed = asm.collect(t, scale, &phis).derivative;
            let fd = Estimate::from_samples(&per_outer.iter().map(|row| row[i].1).collect::<Vec<_>>());
            ConsistencyRow {
                r: schedule.r(),
                t,
                h,
                closed: closed.value,
                se_closed: closed.std_error,
                fd: fd.value,
                se_fd: fd.std_error,
                z: z_score(closed, fd),
                seed: plan.seed,
                samples: samples.clone(),
            }
        })
        .collect())
}

pub fn consistency_csv(rows: &[ConsistencyRow]) -> String {
    let mut out = String::from(ConsistencyRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out += &r.csv_row();
        out.push('\n');
    }
    out
}

/// The five-term level-one form, computed straight from partition tables of
/// every leaf without the nested engine. Terms map as `φ1 → phi_k[0]`,
/// `φ21 → phi_k[1]`, `φ22 → phi22`.
pub fn phi_terms_level_one(
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    t: f64,
    plan: &McPlan,
) -> Result<PhiTermSet> {
    open_t(t)?;
    if schedule.r() != 1 {
        return Err(Error::NestingDepth {
            found: schedule.r(),
            required: 1,
        });
    }
    plan.check(1)?;
    let l = sets.len();
    let s = schedule.s();
    let p = schedule.group_exponent();
    let m1 = schedule.m(1);
    let (p0, q0, p1, q1) = (schedule.p(0), schedule.q(0), schedule.p(1), schedule.q(1));
    let o_first = overlap_observable(sets, p0, q0);
    let o_second = overlap_observable(sets, p1, q1);
    let o02 = phi02_observable(sets, q0);
    let pre = [
        -s * (1.0 - m1),
        -s * m1 * p,
        s * m1 * (p - 1.0),
        (1.0 - p0) * (1.0 - q0),
        (s - 1.0) * (1.0 - p0),
    ];
    let ix = |i1, i2, i3, p1, p2, p3| IndexTuple { i1, i2, i3, p1, p2, p3 };

    let per_outer = engine::map_outer(plan, |o| {
        let tree = SampleTree::generate(sets.dims(), schedule, plan, o as u64)?;
        let n1 = plan.per_level_samples[0];
        let tables: Vec<PartitionTable> = (0..n1)
            .map(|j| build_partition(&tree.path_draw(plan.seed, &[j as u64])?, sets, schedule, t))
            .collect::<Result<_>>()?;
        let mut w = Vec::with_capacity(l);
        let mut log_mean = Vec::with_capacity(l);
        for i3 in 0..l {
            let col: Vec<f64> = tables.iter().map(|tb| tb.log_z[i3]).collect();
            w.push(phi_u1_weights(&col, m1)?.weights);
            log_mean.push(crate::logspace::log_mean_exp_scaled(&col, m1));
        }
        let g00 = gamma00(&log_mean, p)?.weights;
        let gibbs = |j: usize, i1, i2, i3| tables[j].gibbs(s, i1, i2, i3);

        // ν_{i3}(i1, i2) = Σ_j w_j γ0_j
        let mut nu = vec![0.0; l * l * l];
        for i3 in 0..l {
            for i1 in 0..l {
                for i2 in 0..l {
                    nu[(i3 * l + i1) * l + i2] = (0..n1).map(|j| w[i3][j] * gibbs(j, i1, i2, i3)).sum();
                }
            }
        }
        let nu_at = |i1: usize, i2: usize, i3: usize| nu[(i3 * l + i1) * l + i2];
        let (mut g1, mut g21, mut g22, mut g01, mut g02) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i3 in 0..l {
            for i1 in 0..l {
                for i2 in 0..l {
                    g01 += g00[i3] * nu_at(i1, i2, i3) * sets.x_norm(i1).powi(2) * sets.y_norm(i2).powi(2);
                    for pp1 in 0..l {
                        for pp2 in 0..l {
                            let same = ix(i1, i2, i3, pp1, pp2, i3);
                            let leafwise: f64 = (0..n1)
                                .map(|j| w[i3][j] * gibbs(j, i1, i2, i3) * gibbs(j, pp1, pp2, i3))
                                .sum();
                            g1 += g00[i3] * leafwise * o_first(same);
                            g22 += g00[i3] * nu_at(i1, i2, i3) * nu_at(pp1, pp2, i3) * o_second(same);
                            for pp3 in 0..l {
                                g21 += g00[i3] * nu_at(i1, i2, i3) * g00[pp3] * nu_at(pp1, pp2, pp3)
                                    * o_second(ix(i1, i2, i3, pp1, pp2, pp3));
                            }
                        }
                    }
                }
            }
            for (j, tb) in tables.iter().enumerate() {
                for i1 in 0..l {
                    let marginal: f64 = (0..l).map(|i2| tb.gibbs(s, i1, i2, i3)).sum();
                    if marginal == 0.0 {
                        continue;
                    }
                    for i2 in 0..l {
                        for pp2 in 0..l {
                            let a = tb.gibbs(s, i1, i2, i3) / marginal;
                            let b = tb.gibbs(s, i1, pp2, i3) / marginal;
                            g02 += g00[i3] * w[i3][j] * marginal * a * b * o02(ix(i1, i2, i3, i1, pp2, i3));
                        }
                    }
                }
            }
        }
        Ok([g1, g21, g22, g01, g02]
            .iter()
            .zip(&pre)
            .map(|(g, c)| if *c == 0.0 { 0.0 } else { g * c })
            .collect::<Vec<f64>>())
    })?;
    let col = |q: usize| Estimate::from_samples(&per_outer.iter().map(|v| v[q]).collect::<Vec<_>>());
    let nonzero = |q: usize| if pre[q] == 0.0 { Estimate::ZERO } else { col(q) };
    let scale = derivative_scale(sets, schedule);
    let total: Vec<f64> = per_outer.iter().map(|v| scale * v.iter().sum::<f64>()).collect();
    Ok(PhiTermSet {
        r: 1,
        t,
        phi_k: vec![nonzero(0), nonzero(1)],
        phi22: nonzero(2),
        phi01: nonzero(3),
        phi02: nonzero(4),
        derivative: if scale == 0.0 { Estimate::ZERO } else { Estimate::from_samples(&total) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpolator::Anchor;
    use crate::schedule::LiftingSchedule;

    fn single_atom() -> ConfigurationSets {
        ConfigurationSets::with_anchors_equal(vec![vec![1.0]], vec![vec![1.0]], Anchor::Zero).unwrap()
    }

    fn level_one(a: f64, beta: f64) -> ValidSchedule {
        LiftingSchedule::new(vec![1.0, 0.5, 0.0], vec![1.0, a, 0.0], vec![1.0, a, 0.0], beta, -1.0)
            .validate()
            .unwrap()
    }

    #[test]
    fn single_atom_keeps_only_phi2() {
        let a = 0.3;
        let s = level_one(a, 1.0);
        let set = phi_terms(&single_atom(), &s, 0.5, &McPlan::new(3, vec![4], 1)).unwrap();
        assert_eq!(set.phi_k[0].value, 0.0);
        assert_eq!(set.phi22, Estimate::ZERO);
        assert_eq!(set.phi01, Estimate::ZERO);
        assert_eq!(set.phi02, Estimate::ZERO);
        // φ2 = -s m1 p (a - 1)²
        assert!((set.phi_k[1].value - 0.5 * (a - 1.0f64).powi(2)).abs() < 1e-12);
        let exact = -0.5 * (1.0 - a).powi(2) / 2.0;
        assert!((set.derivative.value - exact).abs() < 1e-12);
    }

    #[test]
    fn beta_zero_derivative_is_zero() {
        let s = level_one(0.5, 0.0);
        let e = dpsi_dt_closed(&single_atom(), &s, 0.5, &McPlan::new(2, vec![2], 1)).unwrap();
        assert_eq!(e, Estimate::ZERO);
    }

    #[test]
    fn step_and_range_errors() {
        let s = level_one(0.5, 1.0);
        let plan = McPlan::new(2, vec![2], 1);
        assert_eq!(dpsi_dt_fd(&single_atom(), &s, 0.5, 0.0, &plan).unwrap_err(), Error::Step(0.0));
        assert!(dpsi_dt_fd(&single_atom(), &s, 0.0005, 1e-3, &plan).is_err());
        assert!(phi_terms(&single_atom(), &s, 1.0, &plan).is_err());
        assert!(phi_terms(&single_atom(), &s, 0.0, &plan).is_err());
    }

    #[test]
    fn z_score_of_identical_values_is_zero() {
        let e = Estimate { value: 1.0, std_error: 0.0 };
        assert_eq!(z_score(e, e), 0.0);
    }
}
