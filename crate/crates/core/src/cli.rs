//! Experiment runner behind the `blirp` binary.
//!
//! One TOML file describes one experiment. Every run writes `<stem>.csv`
//! (canonical), optionally `<stem>.json` (mirror), and a `<stem>.log` sidecar
//! that holds the only non-reproducible data (wall time, thread count).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::derivative::{consistency_report, ConsistencyRow};
use crate::ensemble::McPlan;
use crate::error::Error;
use crate::interpolator::{psi_trace, Anchor, ConfigurationSets, PsiEstimate};
use crate::perceptron::{
    bp_ground_state, build_binary_sets, build_sphere_samples, local_entropy_curve, restrict_overlap,
    zero_temperature_check,
    BinaryInstance, ReferencePolicy, SubsetSpec,
};
use crate::schedule::{LiftingSchedule, ValidSchedule};

/// Failure classes, each with its own exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::EmptyInnerSet(_) | Error::EmptyRestriction => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PsiSweep,
    DerivativeCheck,
    PerceptronCensus,
    LocalEntropy,
    ZeroTemperature,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::PsiSweep => "psi_sweep",
            Mode::DerivativeCheck => "derivative_check",
            Mode::PerceptronCensus => "perceptron_census",
            Mode::LocalEntropy => "local_entropy",
            Mode::ZeroTemperature => "zero_temperature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetSource {
    #[default]
    Binary,
    Sphere,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    #[default]
    Random,
    Full,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsBlock {
    pub x_dim: usize,
    pub y_dim: usize,
    pub set_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SetsBlock {
    pub source: SetSource,
    pub subset: Subset,
    pub corners: Option<Vec<u64>>,
    /// Defaults to `mc.seed`.
    pub seed: Option<u64>,
    pub y_positive_orthant: bool,
    /// JSON file with `x`, `y` and optional `x_bar` arrays, relative to the
    /// config file.
    pub path: Option<String>,
    pub anchor_nu: f64,
    pub anchor_delta_bar: f64,
    /// Restricts the inner set of anchor `i3` to `x̄_i3ᵀx = δ̄`.
    pub restrict_overlap: Option<f64>,
}

impl Default for SetsBlock {
    fn default() -> Self {
        Self {
            source: SetSource::Binary,
            subset: Subset::Random,
            corners: None,
            seed: None,
            y_positive_orthant: true,
            path: None,
            anchor_nu: 0.0,
            anchor_delta_bar: 0.0,
            restrict_overlap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub r: Option<usize>,
    pub m_schedule: Vec<f64>,
    pub p_schedule: Vec<f64>,
    pub q_schedule: Vec<f64>,
    pub beta: f64,
    #[serde(default = "minus_one")]
    pub s: f64,
    #[serde(default = "one")]
    pub group_exponent: f64,
}

fn minus_one() -> f64 {
    -1.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McBlock {
    pub outer_samples: usize,
    /// Defaults to 16 per level.
    pub per_level_samples: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for McBlock {
    fn default() -> Self {
        Self {
            outer_samples: 1000,
            per_level_samples: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub mode: Mode,
    pub t_grid: Option<Vec<f64>>,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    pub beta_grid: Option<Vec<f64>>,
    pub d_grid: Option<Vec<usize>>,
    #[serde(default = "default_policy")]
    pub reference_policy: String,
}

fn default_fd_step() -> f64 {
    1e-3
}

fn default_policy() -> String {
    ReferencePolicy::SolutionsOnly.name().to_string()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// File stem; defaults to the mode name.
    pub path: Option<String>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: DimsBlock,
    #[serde(default)]
    pub sets: SetsBlock,
    pub schedule: Option<ScheduleBlock>,
    #[serde(default)]
    pub mc: McBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    fn from_table(table: toml::Table) -> CliResult<Self> {
        table.try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))
    }

    fn is_perceptron_mode(&self) -> bool {
        matches!(self.run.mode, Mode::PerceptronCensus | Mode::LocalEntropy)
    }

    /// Fills every default so the echoed config is self-describing.
    pub fn resolve(mut self) -> CliResult<Self> {
        if self.sets.seed.is_none() {
            self.sets.seed = Some(self.mc.seed);
        }
        if self.output.path.is_none() {
            self.output.path = Some(self.run.mode.name().to_string());
        }
        match self.run.mode {
            Mode::PerceptronCensus | Mode::LocalEntropy => {
                if self.run.mode == Mode::LocalEntropy && self.run.d_grid.is_none() {
                    self.run.d_grid = Some((0..=self.dims.x_dim).collect());
                }
                self.run.reference_policy.parse::<ReferencePolicy>()?;
                return Ok(self);
            }
            Mode::PsiSweep => {
                if self.run.t_grid.is_none() {
                    return Err(config_err("psi_sweep needs run.t_grid"));
                }
            }
            Mode::DerivativeCheck => {
                self.run.t_grid.get_or_insert_with(|| vec![0.25, 0.5, 0.75]);
            }
            Mode::ZeroTemperature => {}
        }
        let schedule = self
            .schedule
            .as_mut()
            .ok_or_else(|| config_err(format!("{} needs a schedule block", self.run.mode.name())))?;
        let r = schedule.m_schedule.len().saturating_sub(2);
        match schedule.r {
            Some(given) if given != r => {
                return Err(config_err(format!(
                    "schedule.r = {given} but m_schedule has length {} (r + 2)",
                    schedule.m_schedule.len()
                )))
            }
            _ => schedule.r = Some(r),
        }
        if self.run.mode == Mode::ZeroTemperature {
            let beta = schedule.beta;
            self.run.beta_grid.get_or_insert_with(|| vec![beta]);
            self.mc.per_level_samples.get_or_insert_with(|| vec![1]);
        }
        self.mc.per_level_samples.get_or_insert_with(|| vec![16; r]);
        if self.sets.source == SetSource::File && self.sets.path.is_none() {
            return Err(config_err("sets.source = \"file\" needs sets.path"));
        }
        if self.sets.source != SetSource::File && self.dims.set_size.is_none() {
            return Err(config_err("dims.set_size is required unless sets come from a file"));
        }
        if self.sets.source == SetSource::Binary && self.sets.subset == Subset::Explicit && self.sets.corners.is_none() {
            return Err(config_err("sets.subset = \"explicit\" needs sets.corners"));
        }
        Ok(self)
    }

    fn validated_schedule(&self) -> CliResult<ValidSchedule> {
        let b = self.schedule.as_ref().ok_or_else(|| config_err("missing schedule block"))?;
        LiftingSchedule::new(b.m_schedule.clone(), b.p_schedule.clone(), b.q_schedule.clone(), b.beta, b.s)
            .with_group_exponent(b.group_exponent)
            .validate()
            .map_err(|e| config_err(format!("invalid schedule: {e}")))
    }

    fn plan(&self) -> McPlan {
        McPlan::new(
            self.mc.outer_samples,
            self.mc.per_level_samples.clone().unwrap_or_default(),
            self.mc.seed,
        )
    }

    fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetFile {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    x_bar: Option<Vec<Vec<f64>>>,
}

/// Second sphere seed so `X` and `Y` never coincide.
const Y_SEED_SALT: u64 = 1 << 63;

fn build_sets(config: &mut ExperimentConfig, base_dir: &Path) -> CliResult<ConfigurationSets> {
    let sb = &config.sets;
    let seed = sb.seed.unwrap_or(config.mc.seed);
    let (n, m) = (config.dims.x_dim, config.dims.y_dim);
    let anchor = if sb.anchor_nu == 0.0 {
        Anchor::Zero
    } else {
        Anchor::Soft {
            nu: sb.anchor_nu,
            delta_bar: sb.anchor_delta_bar,
        }
    };
    let (x, x_bar, y) = match sb.source {
        SetSource::File => {
            let rel = sb.path.as_deref().unwrap_or_default();
            let path = base_dir.join(rel);
            let text = fs::read_to_string(&path)
                .map_err(|e| config_err(format!("cannot read set file {}: {e}", path.display())))?;
            let file: SetFile =
                serde_json::from_str(&text).map_err(|e| config_err(format!("set file {}: {e}", path.display())))?;
            let x_bar = file.x_bar.unwrap_or_else(|| file.x.clone());
            (file.x, x_bar, file.y)
        }
        SetSource::Binary | SetSource::Sphere => {
            let l = config.dims.set_size.unwrap_or(0);
            let x = if sb.source == SetSource::Binary {
                let spec = match sb.subset {
                    Subset::Random => SubsetSpec::Random { count: l, seed },
                    Subset::Full => SubsetSpec::Full,
                    Subset::Explicit => SubsetSpec::Explicit(sb.corners.clone().unwrap_or_default()),
                };
                build_binary_sets(n, &spec)?.1
            } else {
                build_sphere_samples(n, l, false, seed)?
            };
            let y = build_sphere_samples(m, x.len(), sb.y_positive_orthant, seed ^ Y_SEED_SALT)?;
            (x.clone(), x, y)
        }
    };
    let l = x.len();
    if let Some(expected) = config.dims.set_size {
        if expected != l {
            return Err(config_err(format!("dims.set_size = {expected} but the set source yields {l}")));
        }
    }
    config.dims.set_size = Some(l);
    let restriction = match config.sets.restrict_overlap {
        None => None,
        Some(delta_bar) => Some(
            x_bar
                .iter()
                .enumerate()
                .map(|(i3, xb)| {
                    restrict_overlap(&x, xb, delta_bar, 1e-9).map_err(|_| CliError::from(Error::EmptyInnerSet(i3)))
                })
                .collect::<CliResult<Vec<_>>>()?,
        ),
    };
    let mut sets = ConfigurationSets::new(x, x_bar, y, anchor)?;
    if let Some(allowed) = restriction {
        sets = sets.with_restriction(allowed)?;
    }
    if sets.x_dim() != n || sets.y_dim() != m {
        return Err(config_err(format!(
            "set dimensions {}x{} do not match dims {n}x{m}",
            sets.x_dim(),
            sets.y_dim()
        )));
    }
    Ok(sets)
}

/// In-memory result of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config: ExperimentConfig,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// Scalar summary used by sweeps and echoed as a footer.
    pub summary: BTreeMap<String, Value>,
    /// Extra artifacts as `(extension, contents)`.
    pub extra: Vec<(String, String)>,
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn number(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or_else(|| Value::String(format!("{x}")), Value::Number)
}

impl Report {
    fn header_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("blirp {} mode={}", env!("CARGO_PKG_VERSION"), self.config.run.mode.name())];
        lines.extend(self.config.to_toml().lines().filter(|l| !l.is_empty()).map(str::to_string));
        lines
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for line in self.header_lines() {
            out += &format!("# {line}\n");
        }
        out += &self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out += &row.iter().map(csv_cell).collect::<Vec<_>>().join(",");
            out.push('\n');
        }
        if let Some(Value::String(verdict)) = self.summary.get("verdict") {
            out += &format!("# summary: {verdict}\n");
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Object(self.columns.iter().cloned().zip(r.iter().cloned()).collect()))
            .collect();
        let doc = json!({
            "mode": self.config.run.mode.name(),
            "config": serde_json::to_value(&self.config).unwrap_or(Value::Null),
            "columns": self.columns,
            "rows": rows,
            "summary": self.summary,
        });
        serde_json::to_string_pretty(&doc).unwrap_or_default() + "\n"
    }
}

fn columns(header: &str) -> Vec<String> {
    header.split(',').map(str::to_string).collect()
}

/// Runs a resolved configuration. `base_dir` anchors relative set paths.
pub fn run_config(config: ExperimentConfig, base_dir: &Path) -> CliResult<Report> {
    let mut config = config.resolve()?;
    if config.is_perceptron_mode() {
        return run_perceptron(config);
    }
    let schedule = config.validated_schedule()?;
    let sets = build_sets(&mut config, base_dir)?;
    let plan = config.plan();
    let mut summary = BTreeMap::new();
    let (cols, rows) = match config.run.mode {
        Mode::PsiSweep => {
            let t_grid = config.run.t_grid.clone().unwrap_or_default();
            let trace = psi_trace(&sets, &schedule, &t_grid, &plan)?;
            check_finite(trace.iter().map(|p| p.value))?;
            if let Some(last) = trace.last() {
                summary.insert("psi_last".into(), number(last.value));
            }
            (columns(PsiEstimate::CSV_HEADER), trace.iter().map(psi_row).collect())
        }
        Mode::DerivativeCheck => {
            let t_grid = config.run.t_grid.clone().unwrap_or_default();
            let report = consistency_report(&sets, &schedule, &t_grid, config.run.fd_step, &plan)?;
            check_finite(report.iter().flat_map(|r| [r.closed, r.fd]))?;
            let flagged = report.iter().filter(|r| r.flagged()).count();
            let max_z = report.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
            summary.insert("max_abs_z".into(), number(max_z));
            summary.insert("flagged".into(), json!(flagged));
            summary.insert("pass".into(), json!(flagged == 0));
            let verdict = if flagged == 0 {
                "pass".to_string()
            } else {
                format!("fail ({flagged} of {} with |z| > 3)", report.len())
            };
            summary.insert("verdict".into(), json!(verdict));
            let mut cols = columns(ConsistencyRow::CSV_HEADER);
            cols.push("abs_z".into());
            (cols, report.iter().map(consistency_row).collect())
        }
        Mode::ZeroTemperature => {
            let betas = config.run.beta_grid.clone().unwrap_or_default();
            let l = sets.len() as f64;
            let mut rows = Vec::new();
            for &beta in &betas {
                let sched = schedule.with_beta(beta).map_err(|e| config_err(format!("invalid schedule: {e}")))?;
                let z = zero_temperature_check(&sets, &sched, plan.outer_samples, plan.seed)?;
                check_finite([z.psi_scaled, z.min_max, z.gap])?;
                summary.insert("beta".into(), number(beta));
                summary.insert("gap".into(), number(z.gap));
                summary.insert("gap_se".into(), number(z.gap_se));
                summary.insert("bound".into(), number(l.ln() / beta));
                rows.push(vec![
                    number(beta),
                    number(z.psi_scaled),
                    number(z.psi_sign),
                    number(z.min_max),
                    number(z.gap),
                    number(z.gap_se),
                    number(l.ln() / beta),
                    json!(z.outer_samples),
                    json!(plan.seed),
                ]);
            }
            (
                columns("beta,psi_scaled,psi_sign,min_max,gap,gap_se,log_l_over_beta,outer_samples,seed"),
                rows,
            )
        }
        Mode::PerceptronCensus | Mode::LocalEntropy => unreachable!("handled above"),
    };
    Ok(Report {
        config,
        columns: cols,
        rows,
        summary,
        extra: Vec::new(),
    })
}

fn check_finite(values: impl IntoIterator<Item = f64>) -> CliResult<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(CliError::Numerical("non-finite estimate".into()))
    }
}

fn psi_row(p: &PsiEstimate) -> Vec<Value> {
    let levels = p.per_level_samples.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
    vec![
        number(p.t),
        number(p.value),
        number(p.std_error),
        json!(p.outer_samples),
        json!(levels),
        json!(p.seed),
    ]
}

fn consistency_row(r: &ConsistencyRow) -> Vec<Value> {
    vec![
        json!(r.r),
        number(r.t),
        number(r.h),
        number(r.closed),
        number(r.se_closed),
        number(r.fd),
        number(r.se_fd),
        number(r.z),
        json!(r.seed),
        json!(r.samples),
        number(r.z.abs()),
    ]
}

fn run_perceptron(config: ExperimentConfig) -> CliResult<Report> {
    let (n, m) = (config.dims.x_dim, config.dims.y_dim);
    let seed = config.sets.seed.unwrap_or(config.mc.seed);
    let instance = BinaryInstance::generate(n, m, seed)?;
    let census = bp_ground_state(&instance)?;
    let mut summary = BTreeMap::new();
    summary.insert("count".into(), json!(census.count));
    summary.insert("satisfiable".into(), json!(census.count > 0));
    summary.insert("ground_state_energy".into(), number(census.ground_state_energy));
    let alpha = instance.alpha();
    match config.run.mode {
        Mode::PerceptronCensus => {
            let rows = vec![vec![
                json!(n),
                json!(m),
                number(alpha),
                json!(seed),
                json!(census.count),
                number(census.ground_state_energy),
                json!(census.count > 0),
            ]];
            let extra = vec![("census".to_string(), census.to_rle())];
            Ok(Report {
                config,
                columns: columns("n,m,alpha,seed,count,ground_state_energy,satisfiable"),
                rows,
                summary,
                extra,
            })
        }
        Mode::LocalEntropy => {
            let policy: ReferencePolicy = config.run.reference_policy.parse()?;
            let d_grid = config.run.d_grid.clone().unwrap_or_default();
            if let Some(&d) = d_grid.iter().find(|&&d| d > n) {
                return Err(config_err(format!("d_grid entry {d} outside [0, {n}]")));
            }
            let curve = local_entropy_curve(&census, policy)?;
            let rows: Vec<Vec<Value>> = d_grid
                .iter()
                .map(|&d| {
                    let p = &curve[d];
                    vec![
                        json!(n),
                        json!(m),
                        number(alpha),
                        json!(seed),
                        json!(d),
                        number(p.overlap),
                        json!(p.cluster_count),
                        p.sigma.map_or(json!("empty"), number),
                        json!(policy.name()),
                    ]
                })
                .collect();
            Ok(Report {
                config,
                columns: columns(crate::perceptron::LOCAL_ENTROPY_CSV_HEADER),
                rows,
                summary,
                extra: Vec::new(),
            })
        }
        _ => unreachable!("only perceptron modes reach here"),
    }
}

/// Writes `contents` to `path` through a sibling temporary file and rename.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn write_report(report: &Report, out_dir: &Path, stem: &str, elapsed_ms: u128) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    let csv = out_dir.join(format!("{stem}.csv"));
    write_atomic(&csv, &report.to_csv())?;
    written.push(csv);
    if report.config.output.format == Format::Json {
        let path = out_dir.join(format!("{stem}.json"));
        write_atomic(&path, &report.to_json())?;
        written.push(path);
    }
    for (ext, contents) in &report.extra {
        let path = out_dir.join(format!("{stem}.{ext}"));
        write_atomic(&path, contents)?;
        written.push(path);
    }
    let log = format!(
        "finished_unix_s={}\nelapsed_ms={elapsed_ms}\nthreads={}\n",
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        thread_count()
    );
    write_atomic(&out_dir.join(format!("{stem}.log")), &log)?;
    Ok(written)
}

fn thread_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

fn load_table(path: &Path) -> CliResult<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    text.parse::<toml::Table>().map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Runs one config file and writes its outputs into `out_dir`.
pub fn run_experiment(config_path: &Path, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let start = Instant::now();
    let config = ExperimentConfig::from_table(load_table(config_path)?)?;
    let report = run_config(config, &base_dir(config_path))?;
    let stem = report.config.output.path.clone().unwrap_or_default();
    write_report(&report, out_dir, &stem, start.elapsed().as_millis())
}

/// Sets a dotted key in a TOML table; the key must name a scalar (or be
/// absent).
pub fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("malformed key {key:?}")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("{key}: {part} is not a table")))?;
    }
    let leaf = parts[parts.len() - 1];
    if let Some(existing) = node.get(leaf) {
        if existing.is_table() || existing.is_array() {
            return Err(config_err(format!("{key} is not a scalar field")));
        }
    }
    node.insert(leaf.to_string(), value);
    Ok(())
}

/// Parses a sweep value as a TOML scalar, falling back to a string.
pub fn parse_scalar(raw: &str) -> CliResult<toml::Value> {
    let raw = raw.trim();
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => {
            let v = t.remove("v").unwrap_or(toml::Value::String(raw.into()));
            if v.is_array() || v.is_table() {
                Err(config_err(format!("sweep value {raw:?} is not a scalar")))
            } else {
                Ok(v)
            }
        }
        Err(_) => Ok(toml::Value::String(raw.into())),
    }
}

const SEED_KEYS: [&str; 2] = ["mc.seed", "sets.seed"];

fn bump_seed(table: &mut toml::Table, key: &str, index: usize) -> CliResult<()> {
    let (block, field) = key.split_once('.').unwrap_or_default();
    let current = table
        .get(block)
        .and_then(|b| b.get(field))
        .map(|v| v.as_integer().ok_or_else(|| config_err(format!("{key} must be an integer"))))
        .transpose()?;
    if let Some(base) = current {
        set_dotted(table, key, toml::Value::Integer(base + index as i64))?;
    } else if key == "mc.seed" {
        set_dotted(table, key, toml::Value::Integer(index as i64))?;
    }
    Ok(())
}

/// One run per value with seeds `base + index`, plus `sweep_summary.csv`.
pub fn sweep(config_path: &Path, key: &str, values: &[String], out_dir: &Path) -> CliResult<PathBuf> {
    let base = load_table(config_path)?;
    // validate the key against the base config before running anything
    let mut probe = base.clone();
    set_dotted(&mut probe, key, toml::Value::Integer(0))?;
    let mut summary_rows = Vec::new();
    let mut summary_cols: Vec<String> = Vec::new();
    let mut passes = 0usize;
    let mut pass_seen = false;
    for (index, raw) in values.iter().enumerate() {
        let start = Instant::now();
        let mut table = base.clone();
        for seed_key in SEED_KEYS {
            if seed_key != key {
                bump_seed(&mut table, seed_key, index)?;
            }
        }
        set_dotted(&mut table, key, parse_scalar(raw)?)?;
        let config = ExperimentConfig::from_table(table)?;
        let report = run_config(config, &base_dir(config_path))?;
        let stem = format!("{}_{index:03}", report.config.output.path.clone().unwrap_or_default());
        write_report(&report, out_dir, &stem, start.elapsed().as_millis())?;
        if summary_cols.is_empty() {
            summary_cols = report.summary.keys().filter(|k| *k != "verdict").cloned().collect();
        }
        if let Some(Value::Bool(p)) = report.summary.get("pass") {
            pass_seen = true;
            passes += *p as usize;
        }
        let mut row = vec![
            index.to_string(),
            key.to_string(),
            raw.trim().to_string(),
            report.config.mc.seed.to_string(),
            stem,
        ];
        row.extend(summary_cols.iter().map(|c| report.summary.get(c).map_or(String::new(), csv_cell)));
        summary_rows.push(row);
    }
    let mut out = format!("# blirp {} sweep key={key}\n", env!("CARGO_PKG_VERSION"));
    out += "index,key,value,seed,output";
    for c in &summary_cols {
        out += &format!(",{c}");
    }
    out.push('\n');
    for row in &summary_rows {
        out += &row.join(",");
        out.push('\n');
    }
    if pass_seen {
        out += &format!("# pass_fraction: {}\n", passes as f64 / summary_rows.len() as f64);
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let path = out_dir.join("sweep_summary.csv");
    write_atomic(&path, &out)?;
    Ok(path)
}

#[derive(Parser, Debug)]
#[command(name = "blirp", version, about = "Lifted interpolation experiments")]
pub struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one experiment.
    Run { config: PathBuf },
    /// Run one experiment per value of a scalar key.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        key: String,
        /// Comma-separated values; may be empty.
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        values: String,
    },
}

/// Entry point for the binary; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = (|| -> CliResult<()> {
        #[cfg(feature = "parallel")]
        if let Some(n) = cli.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| config_err(format!("--threads: {e}")))?;
        }
        #[cfg(not(feature = "parallel"))]
        let _ = cli.threads;
        match &cli.command {
            Command::Run { config } => {
                for path in run_experiment(config, &cli.out)? {
                    println!("{}", path.display());
                }
            }
            Command::Sweep { config, key, values } => {
                let values: Vec<String> =
                    values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(str::to_string).collect();
                println!("{}", sweep(config, key, &values, &cli.out)?.display());
            }
        }
        Ok(())
    })();
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("blirp: {e}");
            e.exit_code()
        }
    }
}
