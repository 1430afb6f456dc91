//! The Φ reweightings and the γ family of weighted Gibbs measures.
//!
//! Every γ average is a plug-in self-normalized estimate formed on the same
//! nested sample tree that produces ψ, so each family sums to one by
//! construction. Observables are passed as tables over the family's index
//! domain; [`Family::tabulate`] builds them from a closure.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::engine::{self, Evaluator, ProjectedTree};
use crate::ensemble::McPlan;
use crate::error::{Error, Result};
use crate::interpolator::{check_t, ConfigurationSets};
use crate::logspace::{mean_and_stderr, softmax_scaled_into};
use crate::schedule::ValidSchedule;

/// Nonnegative weights normalized to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub stored_sum: f64,
}

impl WeightVector {
    fn from_logs(values: &[f64], scale: f64) -> Self {
        let mut weights = vec![0.0; values.len()];
        softmax_scaled_into(values, scale, &mut weights);
        let stored_sum = weights.iter().sum();
        Self { weights, stored_sum }
    }

    /// `1 / Σ w²`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// `Φ_{U1}` weights `w_j ∝ Z_j^{m1}` from per-sample `log Z` at fixed `i3`.
pub fn phi_u1_weights(log_z: &[f64], m1: f64) -> Result<WeightVector> {
    if log_z.is_empty() {
        return Err(Error::Plan("Φ weights need at least one sample".into()));
    }
    Ok(WeightVector::from_logs(log_z, m1))
}

/// `Φ_{U_k}` weights `w_j ∝ ζ_{k-1,j}^{ratio}`.
pub fn phi_uk_weights(log_zeta_prev: &[f64], ratio: f64) -> Result<WeightVector> {
    phi_u1_weights(log_zeta_prev, ratio)
}

/// `γ00(i3) ∝ (E_{U1} Z_{i3}^{m1})^p` from the per-anchor log means.
pub fn gamma00(log_means: &[f64], group_exponent: f64) -> Result<WeightVector> {
    if log_means.is_empty() {
        return Err(Error::Dimension("γ00 needs at least one anchor".into()));
    }
    Ok(WeightVector::from_logs(log_means, group_exponent))
}

/// The measures of the derivative identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Distribution of `i3` alone.
    Gamma00,
    /// Inner Gibbs weight `γ0(i1, i2; i3)`, averaged uniformly over leaves and `i3`.
    Gamma0,
    Gamma01,
    /// `(i1, i2, p2)` with `i2` and `p2` drawn independently given `i1`.
    Gamma02,
    /// Two replicas `(i1, i2)`, `(p1, p2)` on the same leaf and anchor.
    Gamma1,
    /// Same measure as [`Family::Gamma21`].
    Gamma2,
    Gamma21,
    Gamma22,
    /// `γ_{k1}` for `k1 >= 3`.
    Lifted(usize),
}

/// A point of a family's index domain. Unused coordinates are repeated from
/// the `i`-tuple (`p3 = i3` when both replicas share the anchor, `p1 = i1`
/// for [`Family::Gamma02`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexTuple {
    pub i1: usize,
    pub i2: usize,
    pub i3: usize,
    pub p1: usize,
    pub p2: usize,
    pub p3: usize,
}

impl Family {
    /// `γ_{k1}` of the derivative sum: `γ1`, `γ21`, then the lifted families.
    pub fn level(k1: usize) -> Result<Self> {
        match k1 {
            0 => Err(Error::Family {
                family: "gamma0 level".into(),
                r: 0,
            }),
            1 => Ok(Family::Gamma1),
            2 => Ok(Family::Gamma21),
            k => Ok(Family::Lifted(k)),
        }
    }

    /// Families defined at depth `r`.
    pub fn all(r: usize) -> Vec<Family> {
        let mut v = vec![
            Family::Gamma00,
            Family::Gamma0,
            Family::Gamma01,
            Family::Gamma02,
            Family::Gamma1,
            Family::Gamma2,
            Family::Gamma21,
            Family::Gamma22,
        ];
        v.extend((3..=r + 1).map(Family::Lifted));
        v
    }

    pub fn check(self, r: usize) -> Result<()> {
        match self {
            Family::Lifted(k) if k < 3 || k > r + 1 => Err(Error::Family {
                family: self.to_string(),
                r,
            }),
            _ => Ok(()),
        }
    }

    /// Number of index positions of the family's domain.
    pub fn arity(self) -> u32 {
        match self {
            Family::Gamma00 => 1,
            Family::Gamma0 | Family::Gamma01 => 3,
            Family::Gamma02 => 4,
            Family::Gamma1 | Family::Gamma22 => 5,
            Family::Gamma2 | Family::Gamma21 | Family::Lifted(_) => 6,
        }
    }

    pub fn table_len(self, l: usize) -> usize {
        l.pow(self.arity())
    }

    /// Evaluates `observable` on every point of the domain, in the table
    /// layout the estimator expects.
    pub fn tabulate<F: Fn(IndexTuple) -> f64>(self, l: usize, observable: F) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.table_len(l));
        match self {
            Family::Gamma00 => {
                for i3 in 0..l {
                    out.push(observable(IndexTuple { i1: 0, i2: 0, i3, p1: 0, p2: 0, p3: i3 }));
                }
            }
            _ => {
                for i3 in 0..l {
                    for i1 in 0..l {
                        for i2 in 0..l {
                            let base = IndexTuple { i1, i2, i3, p1: i1, p2: i2, p3: i3 };
                            match self.arity() {
                                3 => out.push(observable(base)),
                                4 => {
                                    for p2 in 0..l {
                                        out.push(observable(IndexTuple { p2, ..base }));
                                    }
                                }
                                5 => {
                                    for p1 in 0..l {
                                        for p2 in 0..l {
                                            out.push(observable(IndexTuple { p1, p2, ..base }));
                                        }
                                    }
                                }
                                _ => {
                                    for p3 in 0..l {
                                        for p1 in 0..l {
                                            for p2 in 0..l {
                                                out.push(observable(IndexTuple { p1, p2, p3, ..base }));
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Gamma00 => write!(f, "gamma00"),
            Family::Gamma0 => write!(f, "gamma0"),
            Family::Gamma01 => write!(f, "gamma01"),
            Family::Gamma02 => write!(f, "gamma02"),
            Family::Gamma1 => write!(f, "gamma1"),
            Family::Gamma2 => write!(f, "gamma2"),
            Family::Gamma21 => write!(f, "gamma21"),
            Family::Gamma22 => write!(f, "gamma22"),
            Family::Lifted(k) => write!(f, "gamma{k}"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown gamma family {s:?}"));
        let rest = s.strip_prefix("gamma").ok_or_else(bad)?;
        Ok(match rest {
            "00" => Family::Gamma00,
            "0" => Family::Gamma0,
            "01" => Family::Gamma01,
            "02" => Family::Gamma02,
            "1" => Family::Gamma1,
            "2" => Family::Gamma2,
            "21" => Family::Gamma21,
            "22" => Family::Gamma22,
            k => {
                let k: usize = k.parse().map_err(|_| bad())?;
                if k < 3 {
                    return Err(bad());
                }
                Family::Lifted(k)
            }
        })
    }
}

/// A tabulated observable to average under one family.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaRequest {
    pub family: Family,
    pub table: Vec<f64>,
}

impl GammaRequest {
    pub fn new<F: Fn(IndexTuple) -> f64>(family: Family, l: usize, observable: F) -> Self {
        Self {
            family,
            table: family.tabulate(l, observable),
        }
    }

    /// The constant-one observable.
    pub fn unit(family: Family, l: usize) -> Self {
        Self {
            family,
            table: vec![1.0; family.table_len(l)],
        }
    }
}

/// One γ average with its outer-sample standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaAverage {
    pub family: String,
    pub value: f64,
    pub std_error: f64,
    pub r: usize,
}

/// Per-outer γ averages for several requests on shared trees, plus the mean
/// effective sample size per level.
pub struct GammaBatch {
    /// `per_outer[o][q]`
    pub per_outer: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
    pub ess: Vec<f64>,
}

pub fn gamma_batch(
    requests: &[GammaRequest],
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    t: f64,
    plan: &McPlan,
) -> Result<GammaBatch> {
    check_t(t)?;
    plan.check(schedule.r())?;
    let eval = Evaluator::new(sets, schedule, requests);
    eval.check_requests()?;
    let outs = engine::map_outer(plan, |o| {
        let tree = ProjectedTree::sample(sets, schedule, plan, o)?;
        eval.evaluate(&tree, t)
    })?;
    let r = schedule.r();
    let mut ess = vec![0.0; r];
    for e in &outs {
        ess.iter_mut().zip(&e.ess).for_each(|(a, b)| *a += b);
    }
    ess.iter_mut().for_each(|v| *v /= outs.len() as f64);
    Ok(GammaBatch {
        psi: outs.iter().map(|e| e.psi).collect(),
        per_outer: outs.into_iter().map(|e| e.gamma).collect(),
        ess,
    })
}

/// `⟨observable⟩` under `family`, averaged over outer samples.
pub fn gamma_average<F: Fn(IndexTuple) -> f64>(
    observable: F,
    family: Family,
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    t: f64,
    plan: &McPlan,
) -> Result<GammaAverage> {
    family.check(schedule.r())?;
    let req = [GammaRequest::new(family, sets.len(), observable)];
    let batch = gamma_batch(&req, sets, schedule, t, plan)?;
    let column: Vec<f64> = batch.per_outer.iter().map(|v| v[0]).collect();
    let (value, std_error) = mean_and_stderr(&column);
    Ok(GammaAverage {
        family: family.to_string(),
        value,
        std_error,
        r: schedule.r(),
    })
}

/// One row of the normalization audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub family: String,
    pub r: usize,
    /// `max_o |Σ γ - 1|` over outer samples.
    pub sum_deviation: f64,
    pub effective_sample_size_per_level: Vec<f64>,
}

impl AuditRow {
    pub const CSV_HEADER: &'static str = "family,r,sum_deviation,effective_sample_size_per_level";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{}",
            self.family,
            self.r,
            self.sum_deviation,
            self.effective_sample_size_per_level
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
                .join(";")
        )
    }
}

/// Averages the constant one under each family and reports the worst
/// per-outer deviation from one.
pub fn normalization_audit(
    families: &[Family],
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    t: f64,
    plan: &McPlan,
) -> Result<Vec<AuditRow>> {
    for f in families {
        f.check(schedule.r())?;
    }
    let l = sets.len();
    let requests: Vec<GammaRequest> = families.iter().map(|&f| GammaRequest::unit(f, l)).collect();
    let batch = gamma_batch(&requests, sets, schedule, t, plan)?;
    Ok(families
        .iter()
        .enumerate()
        .map(|(q, f)| AuditRow {
            family: f.to_string(),
            r: schedule.r(),
            sum_deviation: batch
                .per_outer
                .iter()
                .map(|v| (v[q] - 1.0).abs())
                .fold(0.0, f64::max),
            effective_sample_size_per_level: batch.ess.clone(),
        })
        .collect())
}

pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut out = String::from(AuditRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out += &r.csv_row();
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpolator::Anchor;
    use crate::schedule::LiftingSchedule;

    #[test]
    fn phi_u1_examples() {
        let w = phi_u1_weights(&[0.3, 0.3, 0.3], 0.7).unwrap();
        assert!(w.weights.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let w = phi_u1_weights(&[0.0, 3f64.ln()], 1.0).unwrap();
        assert!((w.weights[0] - 0.25).abs() < 1e-15 && (w.weights[1] - 0.75).abs() < 1e-15);
        let w = phi_u1_weights(&[-4.0, 0.0, 9.0], 1e-12).unwrap();
        assert!(w.weights.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-10));
        assert!(phi_u1_weights(&[], 1.0).is_err());
    }

    #[test]
    fn phi_uk_examples() {
        let e = std::f64::consts::E;
        let w = phi_uk_weights(&[1.0, 1.0], 1.0).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        assert_eq!(phi_uk_weights(&[5.0], 0.3).unwrap().weights, vec![1.0]);
        let w = phi_uk_weights(&[2.0, 4.0], 0.5).unwrap();
        assert!((w.weights[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((w.weights[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((w.weights[0] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn gamma00_examples() {
        assert_eq!(gamma00(&[1.3], 2.0).unwrap().weights, vec![1.0]);
        let w = gamma00(&[0.4; 4], 3.0).unwrap();
        assert!(w.weights.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let w = gamma00(&[0.0, 2f64.ln()], 2.0).unwrap();
        assert!((w.weights[0] - 0.2).abs() < 1e-15 && (w.weights[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn weight_vectors_survive_huge_spread() {
        let w = phi_u1_weights(&[-1000.0, 0.0, 1000.0], 1.0).unwrap();
        assert!((w.stored_sum - 1.0).abs() < 1e-12);
        assert_eq!(w.weights[2], 1.0);
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::all(4) {
            assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
        }
        assert!("gamma".parse::<Family>().is_err());
        assert!(Family::Lifted(4).check(2).is_err());
        assert!(Family::Lifted(3).check(2).is_ok());
    }

    #[test]
    fn tabulate_layout() {
        let l = 2;
        let t = Family::Gamma21.tabulate(l, |ix| (ix.i3 * 100000 + ix.i1 * 10000 + ix.i2 * 1000 + ix.p3 * 100 + ix.p1 * 10 + ix.p2) as f64);
        assert_eq!(t.len(), 64);
        assert_eq!(t[1], 1.0);
        assert_eq!(t[8 * 3 + 5], 11101.0);
        let t = Family::Gamma02.tabulate(l, |ix| (ix.p1 * 10 + ix.p2) as f64 - ix.i1 as f64 * 10.0);
        assert!(t.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    fn small_sets(l: usize) -> ConfigurationSets {
        let x: Vec<Vec<f64>> = (0..l).map(|i| vec![(i as f64).cos(), (i as f64).sin()]).collect();
        let y: Vec<Vec<f64>> = (0..l).map(|i| vec![(0.7 * i as f64).sin(), (0.7 * i as f64).cos()]).collect();
        ConfigurationSets::with_anchors_equal(x, y, Anchor::Zero).unwrap()
    }

    #[test]
    fn beta_zero_families_are_uniform() {
        let sets = small_sets(2);
        let s = LiftingSchedule::new(vec![1.0, 0.6, 0.0], vec![1.0, 0.5, 0.0], vec![1.0, 0.5, 0.0], 0.0, -1.0)
            .validate()
            .unwrap();
        let plan = McPlan::new(3, vec![4], 5);
        let y = sets.y().to_vec();
        let g = gamma_average(
            |ix| crate::interpolator::dot(&y[ix.p2], &y[ix.i2]),
            Family::Gamma02,
            &sets,
            &s,
            0.4,
            &plan,
        )
        .unwrap();
        let mut expected = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                expected += crate::interpolator::dot(&y[a], &y[b]) / 4.0;
            }
        }
        assert!((g.value - expected).abs() < 1e-14);
        assert!(g.std_error < 1e-14);
    }
}
