//! The interpolating exponent `D0`, the per-draw partition objects `A`, `C`,
//! `Z`, the ζ ladder, and the Monte Carlo estimate of ψ(t).

use std::sync::Arc;

use serde::Serialize;

use crate::engine::{self, Evaluator};
use crate::ensemble::{EnsembleDraw, McPlan, ProblemDims};
use crate::error::{Error, Result};
use crate::logspace::{log_mean_exp_scaled, log_sum_exp, log_sum_exp_scaled, mean_and_stderr};
use crate::schedule::ValidSchedule;

/// Custom anchor `f_{x̄}(x)`.
pub type AnchorFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// The anchor family `f_{x̄}(·)`.
#[derive(Clone, Default)]
pub enum Anchor {
    #[default]
    Zero,
    Constant(f64),
    /// `f(x) = ν (x̄ᵀx − δ̄)`.
    Soft { nu: f64, delta_bar: f64 },
    /// Arbitrary `f(x̄, x)`.
    Custom(AnchorFn),
}

impl std::fmt::Debug for Anchor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Anchor::Zero => write!(f, "Zero"),
            Anchor::Constant(c) => write!(f, "Constant({c})"),
            Anchor::Soft { nu, delta_bar } => write!(f, "Soft {{ nu: {nu}, delta_bar: {delta_bar} }}"),
            Anchor::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Anchor {
    pub fn eval(&self, x_bar: &[f64], x: &[f64]) -> f64 {
        match self {
            Anchor::Zero => 0.0,
            Anchor::Constant(c) => *c,
            Anchor::Soft { nu, delta_bar } => nu * (dot(x_bar, x) - delta_bar),
            Anchor::Custom(f) => f(x_bar, x),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// The finite sets `X`, `X̄`, `Y` with the anchor family and an optional
/// per-anchor hard restriction.
#[derive(Debug, Clone)]
pub struct ConfigurationSets {
    x: Vec<Vec<f64>>,
    x_bar: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    anchor: Anchor,
    x_norm: Vec<f64>,
    y_norm: Vec<f64>,
    /// `f_table[i3 * l + i1] = f_{x̄(i3)}(x(i1))`
    f_table: Vec<f64>,
    /// `allowed[i3 * l + i1]`
    allowed: Vec<bool>,
    restricted: bool,
}

impl ConfigurationSets {
    pub fn new(x: Vec<Vec<f64>>, x_bar: Vec<Vec<f64>>, y: Vec<Vec<f64>>, anchor: Anchor) -> Result<Self> {
        let l = x.len();
        if l == 0 || x_bar.len() != l || y.len() != l {
            return Err(Error::Dimension(format!(
                "sets must be nonempty with equal sizes, got |X|={l}, |X̄|={}, |Y|={}",
                x_bar.len(),
                y.len()
            )));
        }
        let n = x[0].len();
        let m = y[0].len();
        if n == 0 || m == 0 {
            return Err(Error::Dimension("vectors must have at least one component".into()));
        }
        if x.iter().chain(&x_bar).any(|v| v.len() != n) {
            return Err(Error::Dimension(format!("every x and x̄ must have {n} components")));
        }
        if y.iter().any(|v| v.len() != m) {
            return Err(Error::Dimension(format!("every y must have {m} components")));
        }
        let x_norm = x.iter().map(|v| norm(v)).collect();
        let y_norm = y.iter().map(|v| norm(v)).collect();
        let mut f_table = vec![0.0; l * l];
        for i3 in 0..l {
            for i1 in 0..l {
                f_table[i3 * l + i1] = anchor.eval(&x_bar[i3], &x[i1]);
            }
        }
        Ok(Self {
            x,
            x_bar,
            y,
            anchor,
            x_norm,
            y_norm,
            f_table,
            allowed: vec![true; l * l],
            restricted: false,
        })
    }

    /// Same vectors for `X` and `X̄`.
    pub fn with_anchors_equal(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, anchor: Anchor) -> Result<Self> {
        let x_bar = x.clone();
        Self::new(x, x_bar, y, anchor)
    }

    /// Restricts, for each anchor `i3`, the admissible `x` indices.
    pub fn with_restriction(mut self, allowed: Vec<Vec<usize>>) -> Result<Self> {
        let l = self.len();
        if allowed.len() != l {
            return Err(Error::Dimension(format!(
                "restriction lists {} anchors, expected {l}",
                allowed.len()
            )));
        }
        let mut mask = vec![false; l * l];
        for (i3, list) in allowed.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::EmptyInnerSet(i3));
            }
            for &i1 in list {
                if i1 >= l {
                    return Err(Error::Dimension(format!("restriction index {i1} out of range")));
                }
                mask[i3 * l + i1] = true;
            }
        }
        self.allowed = mask;
        self.restricted = true;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x_dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn y_dim(&self) -> usize {
        self.y[0].len()
    }

    pub fn dims(&self) -> ProblemDims {
        ProblemDims {
            x_dim: self.x_dim(),
            y_dim: self.y_dim(),
            set_size: self.len(),
        }
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn x_bar(&self) -> &[Vec<f64>] {
        &self.x_bar
    }

    pub fn y(&self) -> &[Vec<f64>] {
        &self.y
    }

    pub fn anchor(&self) -> &Anchor {
        &self.anchor
    }

    pub fn x_norm(&self, i: usize) -> f64 {
        self.x_norm[i]
    }

    pub fn y_norm(&self, i: usize) -> f64 {
        self.y_norm[i]
    }

    pub fn anchor_value(&self, i3: usize, i1: usize) -> f64 {
        self.f_table[i3 * self.len() + i1]
    }

    pub fn is_allowed(&self, i1: usize, i3: usize) -> bool {
        self.allowed[i3 * self.len() + i1]
    }

    pub fn is_restricted(&self) -> bool {
        self.restricted
    }

    /// True when every `x` and `y` has unit norm to `tol`.
    pub fn unit_norm(&self, tol: f64) -> bool {
        self.x_norm.iter().chain(&self.y_norm).all(|v| (v - 1.0).abs() <= tol)
    }
}

/// `D0(i1, i2, i3)` on one ensemble draw, or `None` when `(i1, i3)` is
/// excluded by the restriction.
pub fn exponent_d0(
    draw: &EnsembleDraw,
    sets: &ConfigurationSets,
    t: f64,
    i1: usize,
    i2: usize,
    i3: usize,
) -> Option<f64> {
    if !sets.is_allowed(i1, i3) {
        return None;
    }
    let (m, n) = (sets.y_dim(), sets.x_dim());
    let x = &sets.x()[i1];
    let y = &sets.y()[i2];
    let (xn, yn) = (sets.x_norm(i1), sets.y_norm(i2));
    let mut ygx = 0.0;
    for (j, yj) in y.iter().enumerate() {
        ygx += yj * dot(&draw.g[j * n..(j + 1) * n], x);
    }
    let mut u2 = vec![0.0; m];
    let mut h = vec![0.0; n];
    let mut u4 = 0.0;
    for lv in &draw.levels {
        u4 += lv.u4;
        u2.iter_mut().zip(&lv.u2).for_each(|(a, b)| *a += b);
        h.iter_mut().zip(&lv.h).for_each(|(a, b)| *a += b);
    }
    let (st, st1) = (t.sqrt(), (1.0 - t).sqrt());
    Some(
        st * ygx
            + st1 * xn * dot(y, &u2)
            + st * xn * yn * u4
            + st1 * yn * dot(&h, x)
            + sets.anchor_value(i3, i1),
    )
}

/// Log-domain `A`, `C`, `Z` for one draw.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionTable {
    pub l: usize,
    /// `log_a[(i3 * l + i1) * l + i2] = β D0`, `-inf` where excluded.
    pub log_a: Vec<f64>,
    /// `log_c[i3 * l + i1]`
    pub log_c: Vec<f64>,
    /// `log_z[i3]`
    pub log_z: Vec<f64>,
}

impl PartitionTable {
    /// Reduces a filled `log_a` table.
    pub fn from_log_a(l: usize, log_a: Vec<f64>, s: f64) -> Result<Self> {
        let mut log_c = vec![0.0; l * l];
        let mut log_z = vec![0.0; l];
        let mut scratch = vec![0.0; l];
        for i3 in 0..l {
            for i1 in 0..l {
                let row = &log_a[(i3 * l + i1) * l..(i3 * l + i1 + 1) * l];
                log_c[i3 * l + i1] = log_sum_exp(row);
            }
            let mut any = false;
            for i1 in 0..l {
                let c = log_c[i3 * l + i1];
                scratch[i1] = if c == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    any = true;
                    s * c
                };
            }
            if !any {
                return Err(Error::EmptyInnerSet(i3));
            }
            log_z[i3] = log_sum_exp(&scratch);
        }
        Ok(Self {
            l,
            log_a,
            log_c,
            log_z,
        })
    }

    pub fn log_a(&self, i1: usize, i2: usize, i3: usize) -> f64 {
        self.log_a[(i3 * self.l + i1) * self.l + i2]
    }

    pub fn log_c(&self, i1: usize, i3: usize) -> f64 {
        self.log_c[i3 * self.l + i1]
    }

    /// Inner Gibbs weight `γ0(i1, i2; i3) = (C^s / Z)(A / C)`.
    pub fn gibbs(&self, s: f64, i1: usize, i2: usize, i3: usize) -> f64 {
        let la = self.log_a(i1, i2, i3);
        if la == f64::NEG_INFINITY {
            return 0.0;
        }
        let lc = self.log_c(i1, i3);
        ((s - 1.0) * lc + la - self.log_z[i3]).exp()
    }

    /// CSV rows `(i1, i2, i3, log_a, log_c, log_z)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i1,i2,i3,log_a,log_c,log_z\n");
        for i3 in 0..self.l {
            for i1 in 0..self.l {
                for i2 in 0..self.l {
                    out += &format!(
                        "{i1},{i2},{i3},{:?},{:?},{:?}\n",
                        self.log_a(i1, i2, i3),
                        self.log_c(i1, i3),
                        self.log_z[i3]
                    );
                }
            }
        }
        out
    }
}

/// `A`, `C` and `Z` on one ensemble draw, computed directly from `D0`.
pub fn build_partition(
    draw: &EnsembleDraw,
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    t: f64,
) -> Result<PartitionTable> {
    check_t(t)?;
    let l = sets.len();
    let beta = schedule.beta();
    let mut log_a = vec![f64::NEG_INFINITY; l * l * l];
    for i3 in 0..l {
        for i1 in 0..l {
            for i2 in 0..l {
                if let Some(d) = exponent_d0(draw, sets, t, i1, i2, i3) {
                    log_a[(i3 * l + i1) * l + i2] = beta * d;
                }
            }
        }
    }
    PartitionTable::from_log_a(l, log_a, schedule.s())
}

pub(crate) fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TOutOfRange(t))
    }
}

/// `log ζ1 = log Σ_{i3} (mean_j Z_{j,i3}^{m1})^p` from the `log Z` values of
/// the `U_1` samples below one node, stored `samples × l` row-major.
pub fn zeta_one(log_z: &[f64], l: usize, m1: f64, p: f64) -> Result<f64> {
    if log_z.is_empty() {
        return Err(Error::Plan("zero samples at level 1".into()));
    }
    let samples = log_z.len() / l;
    let mut column = vec![0.0; samples];
    let mut per_anchor = vec![0.0; l];
    for i3 in 0..l {
        for j in 0..samples {
            column[j] = log_z[j * l + i3];
        }
        per_anchor[i3] = log_mean_exp_scaled(&column, m1);
    }
    Ok(log_sum_exp_scaled(&per_anchor, p))
}

/// `log ζ_k = log mean_j ζ_{k-1,j}^{ratio}` with `ratio = m_k / m_{k-1}`.
pub fn zeta_step(log_zeta_prev: &[f64], ratio: f64) -> Result<f64> {
    if log_zeta_prev.is_empty() {
        return Err(Error::Plan("zero samples in ζ ladder step".into()));
    }
    Ok(log_mean_exp_scaled(log_zeta_prev, ratio))
}

/// `log Z` values of every leaf of one nested tree, leaves in lexicographic
/// `(j_r, ..., j_1)` order, each leaf holding `l` values.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedLogZ {
    pub l: usize,
    /// `branching[k-1] = N_k`.
    pub branching: Vec<usize>,
    pub log_z: Vec<f64>,
}

/// The accumulated ladder for one outer sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZetaLadder {
    /// `log_zeta[k-1]` holds `log ζ_k` for each level-`k` node.
    pub log_zeta: Vec<Vec<f64>>,
    pub sample_counts: Vec<usize>,
}

impl ZetaLadder {
    pub fn depth(&self) -> usize {
        self.log_zeta.len()
    }

    /// `log ζ_r` at the root.
    pub fn top(&self) -> f64 {
        self.log_zeta.last().and_then(|v| v.first()).copied().unwrap_or(f64::NAN)
    }
}

pub fn zeta_ladder(samples: &NestedLogZ, schedule: &ValidSchedule) -> Result<ZetaLadder> {
    let r = schedule.r();
    if samples.branching.len() != r {
        return Err(Error::NestingDepth {
            found: samples.branching.len(),
            required: r,
        });
    }
    if let Some(k) = samples.branching.iter().position(|&c| c == 0) {
        return Err(Error::Plan(format!("zero samples at level {}", k + 1)));
    }
    let l = samples.l;
    let leaves: usize = samples.branching.iter().product();
    if samples.log_z.len() != leaves * l {
        return Err(Error::Dimension(format!(
            "expected {} log Z values, got {}",
            leaves * l,
            samples.log_z.len()
        )));
    }
    let n1 = samples.branching[0];
    let mut ladder = Vec::with_capacity(r);
    let level1: Vec<f64> = samples
        .log_z
        .chunks(n1 * l)
        .map(|c| zeta_one(c, l, schedule.m(1), schedule.group_exponent()))
        .collect::<Result<_>>()?;
    ladder.push(level1);
    for k in 2..=r {
        let nk = samples.branching[k - 1];
        let ratio = schedule.m(k) / schedule.m(k - 1);
        let next: Vec<f64> = ladder[k - 2]
            .chunks(nk)
            .map(|c| zeta_step(c, ratio))
            .collect::<Result<_>>()?;
        ladder.push(next);
    }
    Ok(ZetaLadder {
        log_zeta: ladder,
        sample_counts: samples.branching.clone(),
    })
}

/// A ψ(t) estimate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiEstimate {
    pub t: f64,
    pub value: f64,
    pub std_error: f64,
    pub outer_samples: usize,
    pub per_level_samples: Vec<usize>,
    pub seed: u64,
}

impl PsiEstimate {
    pub const CSV_HEADER: &'static str = "t,psi,stderr,outer_samples,per_level_samples,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{},{},{}",
            self.t,
            self.value,
            self.std_error,
            self.outer_samples,
            self.per_level_samples
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";"),
            self.seed
        )
    }
}

/// Monte Carlo estimate of ψ(t): the mean over independent `(G, U_{r+1})`
/// draws of `log ζ_r / (p |s| √n m_r)`.
pub fn psi_estimate(
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    t: f64,
    plan: &McPlan,
) -> Result<PsiEstimate> {
    check_t(t)?;
    plan.check(schedule.r())?;
    let eval = Evaluator::new(sets, schedule, &[]);
    let samples = engine::map_outer(plan, |o| {
        let tree = engine::ProjectedTree::sample(sets, schedule, plan, o)?;
        Ok(eval.evaluate(&tree, t)?.psi)
    })?;
    let (value, std_error) = mean_and_stderr(&samples);
    Ok(PsiEstimate {
        t,
        value,
        std_error,
        outer_samples: plan.outer_samples,
        per_level_samples: plan.per_level_samples.clone(),
        seed: plan.seed,
    })
}

/// ψ on a grid of `t` values; every point uses the same draws.
pub fn psi_trace(
    sets: &ConfigurationSets,
    schedule: &ValidSchedule,
    t_grid: &[f64],
    plan: &McPlan,
) -> Result<Vec<PsiEstimate>> {
    for &t in t_grid {
        check_t(t)?;
    }
    plan.check(schedule.r())?;
    let eval = Evaluator::new(sets, schedule, &[]);
    let per_outer = engine::map_outer(plan, |o| {
        let tree = engine::ProjectedTree::sample(sets, schedule, plan, o)?;
        t_grid
            .iter()
            .map(|&t| Ok(eval.evaluate(&tree, t)?.psi))
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let column: Vec<f64> = per_outer.iter().map(|row| row[i]).collect();
            let (value, std_error) = mean_and_stderr(&column);
            PsiEstimate {
                t,
                value,
                std_error,
                outer_samples: plan.outer_samples,
                per_level_samples: plan.per_level_samples.clone(),
                seed: plan.seed,
            }
        })
        .collect())
}
