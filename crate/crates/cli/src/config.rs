//! Run configuration: a TOML file with a `schema_version` key and one table
//! per concern. Every field has a default, so `[problem]` with a generator
//! name is a complete config.
//!
//! ```toml
//! schema_version = 1
//! seeds = [0, 1, 2]
//!
//! [problem]
//! generator = "one_dim"   # or "two_dim"
//! m = 1
//!
//! [solver]
//! epsilon = 3e-5
//!
//! [rl]
//! bins = [12, 28, 112]
//!
//! [sweep]
//! axis = "m"
//! values = [2, 4, 12]
//! ```

use std::path::{Path, PathBuf};

use otunfold::eval::MetricBackend;
use otunfold::ot_unfold::InitMode;
use otunfold::problems::{
    ingest_kernel_csv, BaseSampler, MixtureComponent, OneDimConfig, PriorLayout, SyntheticSampler, TransportMap,
    TwoDimConfig,
};
use otunfold::rl_unfold::{BinSpec, GridMode};
use otunfold::{RlConfig, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub problem: ProblemConfig,
    pub solver: SolverSection,
    pub rl: RlSection,
    pub eval: EvalSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seeds: vec![0],
            problem: ProblemConfig::default(),
            solver: SolverSection::default(),
            rl: RlSection::default(),
            eval: EvalSection::default(),
            sweep: None,
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum ProblemConfig {
    OneDim(OneDimSection),
    TwoDim(TwoDimSection),
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig::OneDim(OneDimSection::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapName {
    IdentityPlusHalfSign,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutName {
    Grid,
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub center: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OneDimSection {
    pub l: usize,
    pub l_prime: usize,
    pub m: usize,
    pub m_prime: usize,
    pub beta: f64,
    pub map: MapName,
    pub prior_range: [f64; 2],
    pub prior_layout: LayoutName,
    pub p: f64,
    pub mixture: Vec<Component>,
}

impl Default for OneDimSection {
    fn default() -> Self {
        let d = OneDimConfig::default();
        Self {
            l: d.l,
            l_prime: d.l_prime,
            m: d.m,
            m_prime: d.m_prime,
            beta: d.beta,
            map: MapName::IdentityPlusHalfSign,
            prior_range: [d.prior_range.0, d.prior_range.1],
            prior_layout: LayoutName::Grid,
            p: d.p,
            mixture: d
                .mixture
                .iter()
                .map(|c| Component {
                    weight: c.weight,
                    center: c.center,
                    variance: c.variance,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoDimSection {
    pub l: usize,
    pub l_prime: usize,
    pub m: usize,
    pub m_prime: usize,
    pub truth_mean: [f64; 2],
    pub truth_var: [f64; 2],
    pub p: f64,
    /// Kernel sample CSV; the synthetic sampler is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_file: Option<PathBuf>,
    pub clean: bool,
}

impl Default for TwoDimSection {
    fn default() -> Self {
        let d = TwoDimConfig::default();
        Self {
            l: d.l,
            l_prime: d.l_prime,
            m: d.m,
            m_prime: d.m_prime,
            truth_mean: d.truth_mean,
            truth_var: d.truth_var,
            p: d.p,
            samples_file: None,
            clean: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitName {
    Prior,
    Consistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub epsilon: f64,
    pub epsilon_init: f64,
    pub tau: f64,
    pub dr_iters: usize,
    pub init_sinkhorn_iters: usize,
    pub init_mode: InitName,
    pub outer_iters: usize,
    pub early_stop: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            epsilon: d.epsilon,
            epsilon_init: d.epsilon_init,
            tau: d.tau,
            dr_iters: d.dr_iters,
            init_sinkhorn_iters: d.init_sinkhorn_iters,
            init_mode: InitName::Prior,
            outer_iters: d.outer_iters,
            early_stop: d.early_stop,
        }
    }
}

/// A bin count: one number, or one per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinEntry {
    Count(usize),
    Axes(Vec<usize>),
}

impl BinEntry {
    pub fn label(&self) -> String {
        match self {
            BinEntry::Count(n) => n.to_string(),
            BinEntry::Axes(v) => v.iter().map(usize::to_string).collect::<Vec<_>>().join("x"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinCountMode {
    /// A single count applies to every axis.
    PerAxis,
    /// A single count is the total number of cells.
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridName {
    Shared,
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub bins: Vec<BinEntry>,
    pub bin_count_mode: BinCountMode,
    pub grid: GridName,
    pub epsilon_bin: f64,
    pub iters: usize,
}

impl Default for RlSection {
    fn default() -> Self {
        let d = RlConfig::default();
        Self {
            bins: vec![BinEntry::Count(12), BinEntry::Count(28), BinEntry::Count(112)],
            bin_count_mode: BinCountMode::PerAxis,
            grid: GridName::Shared,
            epsilon_bin: d.epsilon_bin,
            iters: d.iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Auto,
    Exact,
    Entropic,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub metric: MetricName,
    pub entropic_epsilon: f64,
    pub entropic_iters: usize,
    pub eval_every: usize,
    pub kde_bandwidth: f64,
    pub kde_points: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metric: MetricName::Auto,
            entropic_epsilon: 1e-3,
            entropic_iters: 1000,
            eval_every: 1,
            kde_bandwidth: otunfold::eval::DEFAULT_BANDWIDTH,
            kde_points: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    M,
    NBin,
    Epsilon,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::M => "m",
            SweepAxis::NBin => "n_bin",
            SweepAxis::Epsilon => "epsilon",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub log_y: bool,
    /// Adds wall-clock columns to traces, which makes them run dependent.
    pub record_timing: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            log_y: true,
            record_timing: false,
        }
    }
}

fn invalid(what: impl Into<String>) -> CliError {
    CliError::Config(what.into())
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<(), CliError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be at least 1")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value: toml::Table = text.parse().map_err(|e| invalid(format!("{e}")))?;
        match value.get("schema_version").and_then(toml::Value::as_integer) {
            Some(v) if v == i64::from(SCHEMA_VERSION) => {}
            Some(v) => return Err(invalid(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}"))),
            None => return Err(invalid("missing integer schema_version")),
        }
        toml::from_str(text).map_err(|e| invalid(format!("{e}")))
    }

    /// Reads a config file, or the config embedded in an artifact written by
    /// an earlier run, and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let body = crate::artifacts::extract_embedded(path, &text)?.unwrap_or(text);
        let mut config = Self::parse(&body)?;
        if let ProblemConfig::TwoDim(t) = &mut config.problem {
            if let Some(f) = &t.samples_file {
                if f.is_relative() {
                    let base = path.parent().unwrap_or(Path::new("."));
                    t.samples_file = Some(base.join(f));
                }
            }
        }
        config.resolve_paths()?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self) -> Result<(), CliError> {
        if let ProblemConfig::TwoDim(t) = &mut self.problem {
            if let Some(f) = &t.samples_file {
                let abs = std::fs::canonicalize(f)
                    .map_err(|e| invalid(format!("samples_file {}: {e}", f.display())))?;
                t.samples_file = Some(abs);
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must not be empty"));
        }
        match &self.problem {
            ProblemConfig::OneDim(c) => {
                self.one_dim(c, c.m, 0).validate().map_err(|e| invalid(e.to_string()))?;
                if c.p < 1.0 {
                    return Err(invalid(format!("p must be >= 1, got {}", c.p)));
                }
            }
            ProblemConfig::TwoDim(c) => {
                for (n, v) in [("l", c.l), ("l_prime", c.l_prime), ("m", c.m), ("m_prime", c.m_prime)] {
                    at_least_one(n, v)?;
                }
                positive("truth_var", c.truth_var[0].min(c.truth_var[1]))?;
                if c.p < 1.0 {
                    return Err(invalid(format!("p must be >= 1, got {}", c.p)));
                }
                if let Some(f) = &c.samples_file {
                    if !f.is_file() {
                        return Err(invalid(format!("samples_file {} does not exist", f.display())));
                    }
                }
            }
        }
        let s = &self.solver;
        positive("solver.epsilon", s.epsilon)?;
        positive("solver.epsilon_init", s.epsilon_init)?;
        positive("solver.tau", s.tau)?;
        at_least_one("solver.dr_iters", s.dr_iters)?;
        at_least_one("solver.init_sinkhorn_iters", s.init_sinkhorn_iters)?;
        let r = &self.rl;
        if r.bins.is_empty() {
            return Err(invalid("rl.bins must not be empty"));
        }
        if !(r.epsilon_bin > 0.0 && r.epsilon_bin < 1.0) {
            return Err(invalid(format!("rl.epsilon_bin must lie in (0, 1), got {}", r.epsilon_bin)));
        }
        let dim = self.dim();
        for b in &r.bins {
            self.bin_spec(b).per_axis(dim).map_err(|e| invalid(format!("rl.bins {}: {e}", b.label())))?;
        }
        let e = &self.eval;
        at_least_one("eval.eval_every", e.eval_every)?;
        positive("eval.kde_bandwidth", e.kde_bandwidth)?;
        at_least_one("eval.kde_points", e.kde_points)?;
        if e.metric == MetricName::Entropic {
            positive("eval.entropic_epsilon", e.entropic_epsilon)?;
            at_least_one("eval.entropic_iters", e.entropic_iters)?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(invalid("sweep.values must not be empty"));
            }
            for &v in &sweep.values {
                let integral = v >= 1.0 && v.fract() == 0.0;
                match sweep.axis {
                    SweepAxis::M | SweepAxis::NBin if !integral => {
                        return Err(invalid(format!("sweep value {v} must be a positive integer")))
                    }
                    SweepAxis::Epsilon => positive("sweep epsilon", v)?,
                    _ => {}
                }
            }
            if sweep.axis == SweepAxis::NBin {
                for &v in &sweep.values {
                    self.bin_spec(&BinEntry::Count(v as usize))
                        .per_axis(dim)
                        .map_err(|e| invalid(format!("sweep n_bin {v}: {e}")))?;
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self.problem {
            ProblemConfig::OneDim(_) => 1,
            ProblemConfig::TwoDim(_) => 2,
        }
    }

    fn one_dim(&self, c: &OneDimSection, m: usize, seed: u64) -> OneDimConfig {
        OneDimConfig {
            l: c.l,
            l_prime: c.l_prime,
            m,
            m_prime: c.m_prime,
            mixture: c
                .mixture
                .iter()
                .map(|c| MixtureComponent {
                    weight: c.weight,
                    center: c.center,
                    variance: c.variance,
                })
                .collect(),
            beta: c.beta,
            map: match c.map {
                MapName::IdentityPlusHalfSign => TransportMap::IdentityPlusHalfSign,
                MapName::Identity => TransportMap::Identity,
            },
            prior_range: (c.prior_range[0], c.prior_range[1]),
            prior_layout: match c.prior_layout {
                LayoutName::Grid => PriorLayout::Grid,
                LayoutName::Iid => PriorLayout::Iid,
            },
            p: c.p,
            seed,
        }
    }

    /// Builds the problem and the truth measure for one seed.
    pub fn build_problem(
        &self,
        seed: u64,
    ) -> Result<(otunfold::UnfoldingProblem, otunfold::DiscreteMeasure), CliError> {
        match &self.problem {
            ProblemConfig::OneDim(c) => {
                otunfold::problems::generate_1d(&self.one_dim(c, c.m, seed)).map_err(|e| invalid(e.to_string()))
            }
            ProblemConfig::TwoDim(c) => {
                let base = match &c.samples_file {
                    Some(f) => BaseSampler::Samples(ingest_kernel_csv(f, c.clean).map_err(|e| match e {
                        otunfold::Error::Io(io) => CliError::Io(format!("{}: {io}", f.display())),
                        other => invalid(format!("{}: {other}", f.display())),
                    })?),
                    None => BaseSampler::Synthetic(SyntheticSampler::default()),
                };
                otunfold::problems::generate_2d(&TwoDimConfig {
                    l: c.l,
                    l_prime: c.l_prime,
                    m: c.m,
                    m_prime: c.m_prime,
                    truth_mean: c.truth_mean,
                    truth_var: c.truth_var,
                    base,
                    p: c.p,
                    seed,
                })
                .map_err(|e| invalid(e.to_string()))
            }
        }
    }

    pub fn metric(&self) -> MetricBackend {
        match self.eval.metric {
            MetricName::Auto => MetricBackend::Auto,
            MetricName::Exact => MetricBackend::Exact,
            MetricName::None => MetricBackend::None,
            MetricName::Entropic => MetricBackend::Entropic {
                epsilon: self.eval.entropic_epsilon,
                iters: self.eval.entropic_iters,
            },
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            epsilon: s.epsilon,
            epsilon_init: s.epsilon_init,
            tau: s.tau,
            dr_iters: s.dr_iters,
            init_sinkhorn_iters: s.init_sinkhorn_iters,
            init_sinkhorn_tol: None,
            init_mode: match s.init_mode {
                InitName::Prior => InitMode::Prior,
                InitName::Consistent => InitMode::Consistent,
            },
            outer_iters: s.outer_iters,
            sigma0: None,
            early_stop: s.early_stop,
            metric: self.metric(),
            eval_every: self.eval.eval_every,
        }
    }

    pub fn bin_spec(&self, entry: &BinEntry) -> BinSpec {
        match (entry, self.rl.bin_count_mode) {
            (BinEntry::Count(n), BinCountMode::PerAxis) => BinSpec::PerAxis(*n),
            (BinEntry::Count(n), BinCountMode::Total) => BinSpec::Total(*n),
            (BinEntry::Axes(v), _) => BinSpec::Axes(v.clone()),
        }
    }

    pub fn rl_config(&self, entry: &BinEntry) -> RlConfig {
        RlConfig {
            bins: self.bin_spec(entry),
            epsilon_bin: self.rl.epsilon_bin,
            grid: match self.rl.grid {
                GridName::Shared => GridMode::Shared,
                GridName::Separate => GridMode::Separate,
            },
            iters: self.rl.iters,
            sigma0: None,
            metric: self.metric(),
            eval_every: self.eval.eval_every,
        }
    }

    /// The config of one sweep cell: the axis value applied and the sweep
    /// table removed.
    pub fn sweep_cell(&self, axis: SweepAxis, value: f64) -> RunConfig {
        let mut cell = self.clone();
        cell.sweep = None;
        match axis {
            SweepAxis::M => match &mut cell.problem {
                ProblemConfig::OneDim(c) => c.m = value as usize,
                ProblemConfig::TwoDim(c) => c.m = value as usize,
            },
            SweepAxis::NBin => cell.rl.bins = vec![BinEntry::Count(value as usize)],
            SweepAxis::Epsilon => cell.solver.epsilon = value,
        }
        cell
    }
}
