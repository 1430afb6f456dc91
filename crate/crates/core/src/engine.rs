//! One recursive pass over a nested sample tree that yields `log ζ_r` and
//! any requested γ averages for a single outer sample.
//!
//! The inner Gibbs weight factorizes as `γ0(i1, i2; i3) = π(i1 | i3) a(i2 | i1)`
//! because the anchor depends on `(i3, i1)` only, so a leaf costs `O(l²)`
//! exponentials.

use crate::ensemble::{McPlan, SampleTree};
use crate::error::{Error, Result};
use crate::interpolator::{check_t, dot, ConfigurationSets};
use crate::logspace::softmax_scaled_into;
use crate::measures::{Family, GammaRequest};
use crate::schedule::ValidSchedule;

/// Per-draw projections of the Gaussian objects onto the configuration sets.
#[derive(Debug, Clone, PartialEq)]
struct ProjBlock {
    u4: Vec<f64>,
    /// `count × l`, `y_{i2}ᵀ u2`
    yu2: Vec<f64>,
    /// `count × l`, `hᵀ x_{i1}`
    hx: Vec<f64>,
}

/// A [`SampleTree`] projected onto one [`ConfigurationSets`]; independent of `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedTree {
    l: usize,
    branching: Vec<usize>,
    /// `base[i1 * l + i2] = y_{i2}ᵀ G x_{i1}`
    base: Vec<f64>,
    top: ProjBlock,
    levels: Vec<ProjBlock>,
}

impl ProjectedTree {
    pub fn new(sets: &ConfigurationSets, tree: &SampleTree) -> Result<Self> {
        let (l, n, m) = (sets.len(), sets.x_dim(), sets.y_dim());
        if tree.dims != sets.dims() {
            return Err(Error::Dimension(format!(
                "tree dims {:?} do not match sets {:?}",
                tree.dims,
                sets.dims()
            )));
        }
        let mut base = vec![0.0; l * l];
        let mut gx = vec![0.0; m];
        for i1 in 0..l {
            for (j, g) in gx.iter_mut().enumerate() {
                *g = dot(&tree.g[j * n..(j + 1) * n], &sets.x()[i1]);
            }
            for i2 in 0..l {
                base[i1 * l + i2] = dot(&sets.y()[i2], &gx);
            }
        }
        let project = |count: usize, u4: &[f64], u2: &[f64], h: &[f64]| {
            let mut yu2 = Vec::with_capacity(count * l);
            let mut hx = Vec::with_capacity(count * l);
            for a in 0..count {
                let u2a = &u2[a * m..(a + 1) * m];
                let ha = &h[a * n..(a + 1) * n];
                yu2.extend(sets.y().iter().map(|y| dot(y, u2a)));
                hx.extend(sets.x().iter().map(|x| dot(ha, x)));
            }
            ProjBlock {
                u4: u4.to_vec(),
                yu2,
                hx,
            }
        };
        let top = project(1, &[tree.top.u4], &tree.top.u2, &tree.top.h);
        let levels = tree
            .levels
            .iter()
            .map(|b| project(b.count, &b.u4, &b.u2, &b.h))
            .collect();
        Ok(Self {
            l,
            branching: tree.branching.clone(),
            base,
            top,
            levels,
        })
    }

    /// Generates and projects the tree of outer sample `outer`.
    pub fn sample(
        sets: &ConfigurationSets,
        schedule: &ValidSchedule,
        plan: &McPlan,
        outer: usize,
    ) -> Result<Self> {
        let tree = SampleTree::generate(sets.dims(), schedule, plan, outer as u64)?;
        Self::new(sets, &tree)
    }

    pub fn r(&self) -> usize {
        self.branching.len()
    }
}

/// Everything one outer sample contributes.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterEvaluation {
    pub log_zeta: f64,
    /// `log ζ_r / (p |s| √n m_r)`
    pub psi: f64,
    /// One value per request, in request order.
    pub gamma: Vec<f64>,
    /// `ess[k-1]`: mean effective sample size `1/Σw²` of the level-`k` weights.
    pub ess: Vec<f64>,
}

struct Leaf {
    log_z: Vec<f64>,
    /// `pi[i3 * l + i1] = C^s / Z`
    pi: Vec<f64>,
    /// `cond[i1 * l + i2] = A / C`
    cond: Vec<f64>,
    /// `scalars[q * l + i3]` for leaf-formed requests.
    scalars: Vec<f64>,
}

struct Node {
    log_zeta: f64,
    /// `mu[(i3 * l + i1) * l + i2]`
    mu: Vec<f64>,
    gamma: Vec<f64>,
    /// Summed (not yet averaged) ESS per level below and at this node.
    ess: Vec<f64>,
}

/// Where a request's value is first formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    /// Per-leaf scalar, per `i3`, combined at level 1 with `γ00` and `Φ_{U1}`.
    LeafWeighted,
    /// Per-leaf scalar averaged without reweighting.
    LeafUniform,
    /// Formed at the level-`k` node.
    Node(usize),
}

fn stage(family: Family) -> Stage {
    match family {
        Family::Gamma0 => Stage::LeafUniform,
        Family::Gamma02 | Family::Gamma1 => Stage::LeafWeighted,
        Family::Gamma00 | Family::Gamma01 | Family::Gamma22 | Family::Gamma2 | Family::Gamma21 => {
            Stage::Node(1)
        }
        Family::Lifted(k1) => Stage::Node(k1 - 1),
    }
}

/// Evaluates ψ and γ averages on projected trees.
pub struct Evaluator<'a> {
    sets: &'a ConfigurationSets,
    schedule: &'a ValidSchedule,
    requests: &'a [GammaRequest],
    stages: Vec<Stage>,
    need_mu: bool,
    x_norm: Vec<f64>,
    y_norm: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        sets: &'a ConfigurationSets,
        schedule: &'a ValidSchedule,
        requests: &'a [GammaRequest],
    ) -> Self {
        let stages: Vec<Stage> = requests.iter().map(|q| stage(q.family)).collect();
        let need_mu = !requests.is_empty();
        let l = sets.len();
        Self {
            sets,
            schedule,
            requests,
            stages,
            need_mu,
            x_norm: (0..l).map(|i| sets.x_norm(i)).collect(),
            y_norm: (0..l).map(|i| sets.y_norm(i)).collect(),
        }
    }

    /// Checks every request against the schedule depth and set size.
    pub fn check_requests(&self) -> Result<()> {
        let (r, l) = (self.schedule.r(), self.sets.len());
        for q in self.requests {
            q.family.check(r)?;
            if q.table.len() != q.family.table_len(l) {
                return Err(Error::Dimension(format!(
                    "observable table for {} has {} entries, expected {}",
                    q.family,
                    q.table.len(),
                    q.family.table_len(l)
                )));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, tree: &ProjectedTree, t: f64) -> Result<OuterEvaluation> {
        check_t(t)?;
        let r = self.schedule.r();
        if tree.r() != r {
            return Err(Error::NestingDepth {
                found: tree.r(),
                required: r,
            });
        }
        self.check_requests()?;
        let l = tree.l;
        let (st, st1) = (t.sqrt(), (1.0 - t).sqrt());
        let mut acc = vec![0.0; l * l];
        for (a, b) in acc.iter_mut().zip(&tree.base) {
            *a = st * b;
        }
        let root_acc = self.add_level(&acc, &tree.top, 0, st, st1, l);
        let root = self.node(tree, r, 0, &root_acc, st, st1)?;
        let s = self.schedule.s();
        let n = self.sets.x_dim() as f64;
        let scale = self.schedule.group_exponent() * s.abs() * n.sqrt() * self.schedule.m(r);
        let mut ess = root.ess;
        for (k, e) in ess.iter_mut().enumerate() {
            // level-(k+1) nodes below the root
            let nodes: usize = tree.branching[k + 1..].iter().product();
            *e /= nodes as f64;
        }
        Ok(OuterEvaluation {
            log_zeta: root.log_zeta,
            psi: root.log_zeta / scale,
            gamma: root.gamma,
            ess,
        })
    }

    fn add_level(&self, acc: &[f64], block: &ProjBlock, idx: usize, st: f64, st1: f64, l: usize) -> Vec<f64> {
        let u4 = block.u4[idx];
        let yu2 = &block.yu2[idx * l..(idx + 1) * l];
        let hx = &block.hx[idx * l..(idx + 1) * l];
        let mut out = acc.to_vec();
        for i1 in 0..l {
            let xn = self.x_norm[i1];
            for i2 in 0..l {
                let yn = self.y_norm[i2];
                out[i1 * l + i2] += st1 * xn * yu2[i2] + st * xn * yn * u4 + st1 * yn * hx[i1];
            }
        }
        out
    }

    fn node(&self, tree: &ProjectedTree, k: usize, parent: usize, acc: &[f64], st: f64, st1: f64) -> Result<Node> {
        let l = tree.l;
        let nk = tree.branching[k - 1];
        let block = &tree.levels[k - 1];
        if k == 1 {
            let leaves = (0..nk)
                .map(|j| {
                    let a = self.add_level(acc, block, parent * nk + j, st, st1, l);
                    self.leaf(&a, l)
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(self.level_one(&leaves, l));
        }
        let children = (0..nk)
            .map(|j| {
                let a = self.add_level(acc, block, parent * nk + j, st, st1, l);
                self.node(tree, k - 1, parent * nk + j, &a, st, st1)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.level_k(k, &children, l))
    }

    fn leaf(&self, acc: &[f64], l: usize) -> Result<Leaf> {
        let beta = self.schedule.beta();
        let s = self.schedule.s();
        let mut cond = vec![0.0; l * l];
        let mut row_lse = vec![0.0; l];
        let mut row = vec![0.0; l];
        for i1 in 0..l {
            for i2 in 0..l {
                row[i2] = beta * acc[i1 * l + i2];
            }
            row_lse[i1] = softmax_scaled_into(&row, 1.0, &mut cond[i1 * l..(i1 + 1) * l]);
        }
        let mut log_z = vec![0.0; l];
        let mut pi = vec![0.0; l * l];
        let mut sc = vec![0.0; l];
        for i3 in 0..l {
            for i1 in 0..l {
                sc[i1] = if self.sets.is_allowed(i1, i3) {
                    s * (beta * self.sets.anchor_value(i3, i1) + row_lse[i1])
                } else {
                    f64::NEG_INFINITY
                };
            }
            let lz = softmax_scaled_into(&sc, 1.0, &mut pi[i3 * l..(i3 + 1) * l]);
            if lz == f64::NEG_INFINITY {
                return Err(Error::EmptyInnerSet(i3));
            }
            log_z[i3] = lz;
        }
        let mut scalars = vec![0.0; self.requests.len() * l];
        for (q, req) in self.requests.iter().enumerate() {
            if !matches!(self.stages[q], Stage::LeafWeighted | Stage::LeafUniform) {
                continue;
            }
            for i3 in 0..l {
                scalars[q * l + i3] = leaf_scalar(req, &pi, &cond, i3, l);
            }
        }
        Ok(Leaf {
            log_z,
            pi,
            cond,
            scalars,
        })
    }

    fn level_one(&self, leaves: &[Leaf], l: usize) -> Node {
        let n1 = leaves.len();
        let m1 = self.schedule.m(1);
        let p = self.schedule.group_exponent();
        let ln_n = (n1 as f64).ln();
        let mut w = vec![vec![0.0; n1]; l];
        let mut log_mean = vec![0.0; l];
        let mut col = vec![0.0; n1];
        let mut ess = 0.0;
        for i3 in 0..l {
            for (j, leaf) in leaves.iter().enumerate() {
                col[j] = leaf.log_z[i3];
            }
            log_mean[i3] = softmax_scaled_into(&col, m1, &mut w[i3]) - ln_n;
            ess += 1.0 / w[i3].iter().map(|v| v * v).sum::<f64>();
        }
        let mut g00 = vec![0.0; l];
        let log_zeta = softmax_scaled_into(&log_mean, p, &mut g00);

        let mut mu = Vec::new();
        let mut nu = Vec::new();
        if self.need_mu {
            nu = vec![0.0; l * l * l];
            for (i3, w_i3) in w.iter().enumerate() {
                for (j, leaf) in leaves.iter().enumerate() {
                    let wj = w_i3[j];
                    if wj == 0.0 {
                        continue;
                    }
                    for i1 in 0..l {
                        let pw = wj * leaf.pi[i3 * l + i1];
                        if pw == 0.0 {
                            continue;
                        }
                        let base = (i3 * l + i1) * l;
                        for i2 in 0..l {
                            nu[base + i2] += pw * leaf.cond[i1 * l + i2];
                        }
                    }
                }
            }
            mu = nu.clone();
            for i3 in 0..l {
                mu[i3 * l * l..(i3 + 1) * l * l].iter_mut().for_each(|v| *v *= g00[i3]);
            }
        }

        let l3 = l * l * l;
        let gamma = self
            .requests
            .iter()
            .enumerate()
            .map(|(q, req)| match (self.stages[q], req.family) {
                (Stage::LeafUniform, _) => {
                    let total: f64 = leaves.iter().flat_map(|lf| &lf.scalars[q * l..(q + 1) * l]).sum();
                    total / (n1 * l) as f64
                }
                (Stage::LeafWeighted, _) => (0..l)
                    .map(|i3| {
                        g00[i3]
                            * leaves
                                .iter()
                                .enumerate()
                                .map(|(j, lf)| w[i3][j] * lf.scalars[q * l + i3])
                                .sum::<f64>()
                    })
                    .sum(),
                (_, Family::Gamma00) => dot(&g00, &req.table),
                (_, Family::Gamma01) => dot(&mu, &req.table),
                (_, Family::Gamma22) => (0..l)
                    .map(|i3| {
                        let blk = &nu[i3 * l * l..(i3 + 1) * l * l];
                        let tbl = &req.table[i3 * l * l * l * l..(i3 + 1) * l * l * l * l];
                        g00[i3] * quadratic(blk, tbl)
                    })
                    .sum(),
                (_, Family::Gamma2 | Family::Gamma21) => quadratic(&mu, &req.table),
                // later levels fill these in
                (_, Family::Lifted(_)) => 0.0,
                (_, f) => unreachable!("{f} is formed at a leaf"),
            })
            .collect();
        debug_assert_eq!(mu.len(), if self.need_mu { l3 } else { 0 });
        Node {
            log_zeta,
            mu,
            gamma,
            ess: vec![ess / l as f64],
        }
    }

    fn level_k(&self, k: usize, children: &[Node], _l: usize) -> Node {
        let nk = children.len();
        let ratio = self.schedule.m(k) / self.schedule.m(k - 1);
        let lz: Vec<f64> = children.iter().map(|c| c.log_zeta).collect();
        let mut w = vec![0.0; nk];
        let log_zeta = softmax_scaled_into(&lz, ratio, &mut w) - (nk as f64).ln();
        let own_ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();

        let mut mu = Vec::new();
        if self.need_mu {
            mu = vec![0.0; children[0].mu.len()];
            for (c, &wc) in children.iter().zip(&w) {
                mu.iter_mut().zip(&c.mu).for_each(|(a, b)| *a += wc * b);
            }
        }
        let gamma = self
            .requests
            .iter()
            .enumerate()
            .map(|(q, req)| match self.stages[q] {
                Stage::LeafUniform => children.iter().map(|c| c.gamma[q]).sum::<f64>() / nk as f64,
                Stage::Node(at) if at == k => quadratic(&mu, &req.table),
                Stage::Node(at) if at > k => 0.0,
                _ => children.iter().zip(&w).map(|(c, wc)| wc * c.gamma[q]).sum(),
            })
            .collect();
        let mut ess = vec![0.0; k];
        for c in children {
            ess.iter_mut().zip(&c.ess).for_each(|(a, b)| *a += b);
        }
        ess[k - 1] = own_ess;
        Node {
            log_zeta,
            mu,
            gamma,
            ess,
        }
    }
}

/// `Σ_{a,b} v[a] v[b] T[a * len + b]`.
fn quadratic(v: &[f64], table: &[f64]) -> f64 {
    let len = v.len();
    let mut total = 0.0;
    for (a, &va) in v.iter().enumerate() {
        if va == 0.0 {
            continue;
        }
        total += va * dot(v, &table[a * len..(a + 1) * len]);
    }
    total
}

fn leaf_scalar(req: &GammaRequest, pi: &[f64], cond: &[f64], i3: usize, l: usize) -> f64 {
    let t = &req.table;
    let mut total = 0.0;
    match req.family {
        Family::Gamma0 => {
            for i1 in 0..l {
                let p = pi[i3 * l + i1];
                for i2 in 0..l {
                    total += p * cond[i1 * l + i2] * t[(i3 * l + i1) * l + i2];
                }
            }
        }
        Family::Gamma02 => {
            // i1 drawn once, i2 and p2 conditionally independent given i1
            for i1 in 0..l {
                let p = pi[i3 * l + i1];
                if p == 0.0 {
                    continue;
                }
                let c = &cond[i1 * l..(i1 + 1) * l];
                for i2 in 0..l {
                    let tri = (i3 * l + i1) * l + i2;
                    total += p * c[i2] * dot(c, &t[tri * l..(tri + 1) * l]);
                }
            }
        }
        Family::Gamma1 => {
            let mut g = vec![0.0; l * l];
            for i1 in 0..l {
                for i2 in 0..l {
                    g[i1 * l + i2] = pi[i3 * l + i1] * cond[i1 * l + i2];
                }
            }
            let l2 = l * l;
            for (a, &ga) in g.iter().enumerate() {
                if ga == 0.0 {
                    continue;
                }
                let tri = i3 * l2 + a;
                total += ga * dot(&g, &t[tri * l2..(tri + 1) * l2]);
            }
        }
        _ => unreachable!(),
    }
    total
}

/// Runs `f` for every outer index and returns results in index order; the
/// first error by index wins.
pub fn map_outer<R, F>(plan: &McPlan, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let out: Vec<Result<R>> = (0..plan.outer_samples).into_par_iter().map(&f).collect();
        out.into_iter().collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..plan.outer_samples).map(f).collect()
    }
}

/// Log partition values for every leaf, lexicographic order; used to cross
/// check the engine against the direct path.
pub fn leaf_log_z(
    evaluator: &Evaluator<'_>,
    tree: &ProjectedTree,
    t: f64,
) -> Result<Vec<f64>> {
    let l = tree.l;
    let (st, st1) = (t.sqrt(), (1.0 - t).sqrt());
    let acc: Vec<f64> = tree.base.iter().map(|b| st * b).collect();
    let root = evaluator.add_level(&acc, &tree.top, 0, st, st1, l);
    let mut out = Vec::new();
    collect_leaves(evaluator, tree, tree.r(), 0, &root, st, st1, &mut out)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn collect_leaves(
    ev: &Evaluator<'_>,
    tree: &ProjectedTree,
    k: usize,
    parent: usize,
    acc: &[f64],
    st: f64,
    st1: f64,
    out: &mut Vec<f64>,
) -> Result<()> {
    let l = tree.l;
    let nk = tree.branching[k - 1];
    for j in 0..nk {
        let a = ev.add_level(acc, &tree.levels[k - 1], parent * nk + j, st, st1, l);
        if k == 1 {
            out.extend(ev.leaf(&a, l)?.log_z);
        } else {
            collect_leaves(ev, tree, k - 1, parent * nk + j, &a, st, st1, out)?;
        }
    }
    Ok(())
}
