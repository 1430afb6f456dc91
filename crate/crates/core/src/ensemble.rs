//! Reproducible Gaussian randomness.
//!
//! Every Gaussian object is a pure function of `(seed, coordinates)`. The
//! coordinate tuple is hashed into a ChaCha8 stream id, the seed picks the
//! key, and the components of a vector are successive deviates of that
//! stream. Index scheme:
//!
//! | object            | coordinates                         |
//! |-------------------|-------------------------------------|
//! | `G`               | `(TAG_G, outer)`                    |
//! | `U_{r+1}`         | `(TAG_U, r+1, outer)`               |
//! | `U_k`, `k <= r`   | `(TAG_U, k, outer, j_r, ..., j_k)`  |
//!
//! Within a `U_k` stream the draw order is `u4`, then the `m` entries of
//! `u2`, then the `n` entries of `h`. Re-sampling an inner level therefore
//! never touches the levels above it, and nothing depends on `t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{LevelVariance, ValidSchedule};

pub const TAG_G: u64 = 0x01;
pub const TAG_U: u64 = 0x02;
pub const TAG_PERCEPTRON: u64 = 0x10;
pub const TAG_SPHERE: u64 = 0x11;
pub const TAG_CORNERS: u64 = 0x12;

/// `n`, `m` and `l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemDims {
    pub x_dim: usize,
    pub y_dim: usize,
    pub set_size: usize,
}

impl ProblemDims {
    pub fn new(x_dim: usize, y_dim: usize, set_size: usize) -> Result<Self> {
        if x_dim == 0 || y_dim == 0 || set_size == 0 {
            return Err(Error::Dimension(format!(
                "all dimensions must be >= 1, got n={x_dim}, m={y_dim}, l={set_size}"
            )));
        }
        Ok(Self {
            x_dim,
            y_dim,
            set_size,
        })
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_id(coordinates: &[u64]) -> u64 {
    let mut h = mix(coordinates.len() as u64 ^ 0x9e37_79b9_7f4a_7c15);
    for &c in coordinates {
        h = mix(h ^ c.wrapping_add(0x9e37_79b9_7f4a_7c15));
    }
    h
}

/// Standard normal deviates keyed by `(seed, coordinates)`.
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64, coordinates: &[u64]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(coordinates));
        Self { rng }
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn next_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }
}

impl Iterator for GaussianStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_normal())
    }
}

/// One standard normal deviate, a pure function of `(seed, coordinates)`.
pub fn gaussian_stream(seed: u64, coordinates: &[u64]) -> f64 {
    GaussianStream::new(seed, coordinates).next_normal()
}

/// One realization of `U_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDraw {
    pub u4: f64,
    pub u2: Vec<f64>,
    pub h: Vec<f64>,
}

impl LevelDraw {
    fn generate(stream: &mut GaussianStream, var: LevelVariance, m: usize, n: usize) -> Self {
        let u4 = scaled(stream.next_normal(), var.u4);
        let sd2 = var.u2.sqrt();
        let u2 = (0..m).map(|_| scaled_sd(stream.next_normal(), sd2)).collect();
        let sdh = var.h.sqrt();
        let h = (0..n).map(|_| scaled_sd(stream.next_normal(), sdh)).collect();
        Self { u4, u2, h }
    }
}

#[inline]
fn scaled(z: f64, variance: f64) -> f64 {
    scaled_sd(z, variance.sqrt())
}

#[inline]
fn scaled_sd(z: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        sd * z
    }
}

fn generate_g(seed: u64, outer: u64, m: usize, n: usize) -> Vec<f64> {
    GaussianStream::new(seed, &[TAG_G, outer]).take(m * n).collect()
}

fn level_coordinates(k: usize, outer: u64, path: &[u64]) -> Vec<u64> {
    let mut c = Vec::with_capacity(3 + path.len());
    c.extend([TAG_U, k as u64, outer]);
    c.extend_from_slice(path);
    c
}

/// Which draw a realization came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub outer_index: u64,
    /// `perLevelIndices[k-1]` is the sample index `j_k` of level `k`.
    pub per_level_indices: Vec<u64>,
}

/// All Gaussian randomness along one root-to-leaf path: `G` and `U_1..U_{r+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDraw {
    pub dims: ProblemDims,
    /// `m × n`, row-major.
    pub g: Vec<f64>,
    /// `levels[k-1]` is `U_k`, `k = 1..=r+1`.
    pub levels: Vec<LevelDraw>,
    pub provenance: Provenance,
}

/// Draws `G` and every `U_k` for one outer sample and one path of inner
/// sample indices.
pub fn sample_ensemble(
    dims: ProblemDims,
    schedule: &ValidSchedule,
    seed: u64,
    outer_index: u64,
    per_level_indices: &[u64],
) -> Result<EnsembleDraw> {
    let r = schedule.r();
    if per_level_indices.len() < r {
        return Err(Error::NestingDepth {
            found: per_level_indices.len(),
            required: r,
        });
    }
    let (m, n) = (dims.y_dim, dims.x_dim);
    let g = generate_g(seed, outer_index, m, n);
    let mut levels = Vec::with_capacity(r + 1);
    for k in 1..=r {
        // path (j_r, ..., j_k)
        let path: Vec<u64> = (k..=r).rev().map(|j| per_level_indices[j - 1]).collect();
        let mut stream = GaussianStream::new(seed, &level_coordinates(k, outer_index, &path));
        levels.push(LevelDraw::generate(
            &mut stream,
            schedule.level_variance(k),
            m,
            n,
        ));
    }
    let mut stream = GaussianStream::new(seed, &level_coordinates(r + 1, outer_index, &[]));
    levels.push(LevelDraw::generate(
        &mut stream,
        schedule.level_variance(r + 1),
        m,
        n,
    ));
    Ok(EnsembleDraw {
        dims,
        g,
        levels,
        provenance: Provenance {
            seed,
            outer_index,
            per_level_indices: per_level_indices[..r].to_vec(),
        },
    })
}

impl EnsembleDraw {
    /// Portable text snapshot. Floats use Rust's shortest round-trip format.
    pub fn to_snapshot(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let mut out = String::from("blirp-ensemble-draw v1\n");
        out += &format!("seed {}\n", self.provenance.seed);
        out += &format!("outer {}\n", self.provenance.outer_index);
        out += &format!(
            "path {}\n",
            self.provenance
                .per_level_indices
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        );
        out += &format!(
            "dims {} {} {}\n",
            self.dims.x_dim, self.dims.y_dim, self.dims.set_size
        );
        out += &format!("G {}\n", join(&self.g));
        for (k, lv) in self.levels.iter().enumerate() {
            out += &format!("U {} u4 {:?}\n", k + 1, lv.u4);
            out += &format!("U {} u2 {}\n", k + 1, join(&lv.u2));
            out += &format!("U {} h {}\n", k + 1, join(&lv.h));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::Parse(format!("ensemble snapshot: {what}"));
        let mut lines = text.lines();
        if lines.next() != Some("blirp-ensemble-draw v1") {
            return Err(bad("missing header"));
        }
        let floats = |it: &mut dyn Iterator<Item = &str>| -> Result<Vec<f64>> {
            it.map(|t| t.parse::<f64>().map_err(|_| bad("float")))
                .collect()
        };
        let ints = |it: &mut dyn Iterator<Item = &str>| -> Result<Vec<u64>> {
            it.map(|t| t.parse::<u64>().map_err(|_| bad("integer")))
                .collect()
        };
        let mut seed = None;
        let mut outer = None;
        let mut path = Vec::new();
        let mut dims = None;
        let mut g = Vec::new();
        let mut levels: Vec<LevelDraw> = Vec::new();
        for line in lines {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("seed") => seed = ints(&mut tok)?.first().copied(),
                Some("outer") => outer = ints(&mut tok)?.first().copied(),
                Some("path") => path = ints(&mut tok)?,
                Some("dims") => {
                    let d = ints(&mut tok)?;
                    if d.len() != 3 {
                        return Err(bad("dims"));
                    }
                    dims = Some(ProblemDims::new(d[0] as usize, d[1] as usize, d[2] as usize)?);
                }
                Some("G") => g = floats(&mut tok)?,
                Some("U") => {
                    let k: usize = tok
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad("level index"))?;
                    if k == 0 || k > levels.len() + 1 {
                        return Err(bad("level order"));
                    }
                    if k == levels.len() + 1 {
                        levels.push(LevelDraw {
                            u4: 0.0,
                            u2: Vec::new(),
                            h: Vec::new(),
                        });
                    }
                    let lv = &mut levels[k - 1];
                    match tok.next() {
                        Some("u4") => {
                            lv.u4 = *floats(&mut tok)?.first().ok_or_else(|| bad("u4"))?
                        }
                        Some("u2") => lv.u2 = floats(&mut tok)?,
                        Some("h") => lv.h = floats(&mut tok)?,
                        _ => return Err(bad("level field")),
                    }
                }
                None => {}
                Some(other) => return Err(bad(&format!("unknown key {other}"))),
            }
        }
        let dims = dims.ok_or_else(|| bad("dims"))?;
        if g.len() != dims.x_dim * dims.y_dim {
            return Err(bad("G size"));
        }
        Ok(Self {
            dims,
            g,
            levels,
            provenance: Provenance {
                seed: seed.ok_or_else(|| bad("seed"))?,
                outer_index: outer.ok_or_else(|| bad("outer"))?,
                per_level_indices: path,
            },
        })
    }
}

/// Per-level sample counts plus the outer count and seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McPlan {
    pub outer_samples: usize,
    /// `per_level_samples[k-1]` is the number of `U_k` draws per parent, `k = 1..=r`.
    pub per_level_samples: Vec<usize>,
    pub seed: u64,
}

impl McPlan {
    pub fn new(outer_samples: usize, per_level_samples: Vec<usize>, seed: u64) -> Self {
        Self {
            outer_samples,
            per_level_samples,
            seed,
        }
    }

    pub fn check(&self, r: usize) -> Result<()> {
        if self.outer_samples == 0 {
            return Err(Error::Plan("outer sample count is zero".into()));
        }
        if self.per_level_samples.len() != r {
            return Err(Error::Plan(format!(
                "{} per-level counts given, r = {r} required",
                self.per_level_samples.len()
            )));
        }
        if let Some(k) = self.per_level_samples.iter().position(|&c| c == 0) {
            return Err(Error::Plan(format!("zero samples at level {}", k + 1)));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// The draws of one `U_k` level for every node of a nested tree, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBlock {
    pub count: usize,
    pub u4: Vec<f64>,
    /// `count × m`
    pub u2: Vec<f64>,
    /// `count × n`
    pub h: Vec<f64>,
}

impl LevelBlock {
    pub fn with_capacity(count: usize, m: usize, n: usize) -> Self {
        Self {
            count: 0,
            u4: Vec::with_capacity(count),
            u2: Vec::with_capacity(count * m),
            h: Vec::with_capacity(count * n),
        }
    }

    pub fn push(&mut self, d: &LevelDraw) {
        self.count += 1;
        self.u4.push(d.u4);
        self.u2.extend_from_slice(&d.u2);
        self.h.extend_from_slice(&d.h);
    }

    pub fn get(&self, i: usize, m: usize, n: usize) -> LevelDraw {
        LevelDraw {
            u4: self.u4[i],
            u2: self.u2[i * m..(i + 1) * m].to_vec(),
            h: self.h[i * n..(i + 1) * n].to_vec(),
        }
    }
}

/// All randomness for one outer sample: `G`, `U_{r+1}` and the nested inner
/// draws.
///
/// `levels[k-1]` holds the draws of `U_k` for every path `(j_r, ..., j_k)` in
/// lexicographic order, so the children of draw `a` at level `k+1` are
/// `a * N_k + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTree {
    pub dims: ProblemDims,
    pub outer_index: u64,
    pub g: Vec<f64>,
    pub top: LevelDraw,
    pub levels: Vec<LevelBlock>,
    /// `branching[k-1] = N_k`.
    pub branching: Vec<usize>,
}

impl SampleTree {
    pub fn generate(
        dims: ProblemDims,
        schedule: &ValidSchedule,
        plan: &McPlan,
        outer_index: u64,
    ) -> Result<Self> {
        let r = schedule.r();
        plan.check(r)?;
        let (m, n) = (dims.y_dim, dims.x_dim);
        let seed = plan.seed;
        let g = generate_g(seed, outer_index, m, n);
        let mut stream = GaussianStream::new(seed, &level_coordinates(r + 1, outer_index, &[]));
        let top = LevelDraw::generate(&mut stream, schedule.level_variance(r + 1), m, n);

        let branching = plan.per_level_samples.clone();
        let mut levels = Vec::with_capacity(r);
        for k in 1..=r {
            let counts = &branching[k - 1..r]; // N_k..N_r
            let total: usize = counts.iter().product();
            let var = schedule.level_variance(k);
            let mut block = LevelBlock::with_capacity(total, m, n);
            let mut path = vec![0u64; r + 1 - k]; // (j_r, ..., j_k)
            for idx in 0..total {
                let mut rem = idx;
                for (pos, &c) in counts.iter().enumerate() {
                    // counts[pos] = N_{k+pos}; path index of j_{k+pos} is r-k-pos
                    path[r - k - pos] = (rem % c) as u64;
                    rem /= c;
                }
                let mut stream =
                    GaussianStream::new(seed, &level_coordinates(k, outer_index, &path));
                block.push(&LevelDraw::generate(&mut stream, var, m, n));
            }
            levels.push(block);
        }
        Ok(Self {
            dims,
            outer_index,
            g,
            top,
            levels,
            branching,
        })
    }

    pub fn r(&self) -> usize {
        self.branching.len()
    }

    /// Reassembles the root-to-leaf path selected by `per_level_indices`.
    pub fn path_draw(&self, seed: u64, per_level_indices: &[u64]) -> Result<EnsembleDraw> {
        let r = self.r();
        if per_level_indices.len() < r {
            return Err(Error::NestingDepth {
                found: per_level_indices.len(),
                required: r,
            });
        }
        let (m, n) = (self.dims.y_dim, self.dims.x_dim);
        let mut levels = Vec::with_capacity(r + 1);
        for k in 1..=r {
            let mut idx = 0usize;
            for j in (k..=r).rev() {
                idx = idx * self.branching[j - 1] + per_level_indices[j - 1] as usize;
            }
            levels.push(self.levels[k - 1].get(idx, m, n));
        }
        levels.push(self.top.clone());
        Ok(EnsembleDraw {
            dims: self.dims,
            g: self.g.clone(),
            levels,
            provenance: Provenance {
                seed,
                outer_index: self.outer_index,
                per_level_indices: per_level_indices[..r].to_vec(),
            },
        })
    }
}
