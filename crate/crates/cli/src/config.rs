//! TOML configuration: serde mirror structs, validation, and conversion
//! into the library's parameter types.
//!
//! The file is one document shared by all subcommands; `run` reads the base
//! sections, the experiment subcommands additionally read their own table
//! (`[convergence]`, `[mg_bench]`, `[compare]`). Unknown keys are rejected
//! so typos surface as config errors, with serde naming the offending field.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use flory::diagnostics::ComparisonEntry;
use flory::{GridSpec, MgConfig, Mobility, ModelParams, SchemeKind, SweepOrder};

/// Errors carry the exit-code contract: config 2, solver 3, I/O 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<flory::Error> for CliError {
    fn from(e: flory::Error) -> Self {
        match e {
            flory::Error::NonConvergence { .. } => CliError::Solver(e.to_string()),
            // every other library error is a misuse of parameters or state,
            // which traces back to the configuration
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

// ---------------------------------------------------------------------------
// serde mirror of the file
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// cs1 | be | bdf2_es | bdf2 | ac1
    pub scheme: String,
    pub grid: GridSection,
    pub model: ModelSection,
    pub time: TimeSection,
    #[serde(default)]
    pub mg: MgSection,
    pub init: InitSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mg_bench: Option<MgBenchSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub epsilon: f64,
    pub theta0: f64,
    pub delta: f64,
    /// Stabilization coefficient of the energy-stable two-step scheme;
    /// defaults to the provable threshold 1/16.
    #[serde(default = "default_stabilization")]
    pub stabilization_a: f64,
    #[serde(default)]
    pub mobility: MobilitySection,
}

fn default_stabilization() -> f64 {
    1.0 / 16.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MobilitySection {
    Constant { value: f64 },
    /// (1 - phi^2)_+ clipped from below by `floor`.
    RegularizedDegenerate { floor: f64 },
}

impl Default for MobilitySection {
    fn default() -> Self {
        MobilitySection::Constant { value: 1.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub t_final: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgSection {
    pub lambda: usize,
    pub tau: f64,
    pub max_vcycles: usize,
    pub coarsest_n: usize,
    pub coarse_sweeps: usize,
    /// red_black | lexicographic
    pub sweep: String,
}

impl Default for MgSection {
    fn default() -> Self {
        let d = MgConfig::default();
        MgSection {
            lambda: d.lambda,
            tau: d.tau,
            max_vcycles: d.max_vcycles,
            coarsest_n: d.coarsest_n,
            coarse_sweeps: d.coarse_sweeps,
            sweep: "red_black".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSection {
    /// The deterministic two-bump benchmark profile (2-D, box length 3.2).
    Profile,
    /// Uniform noise in [mean - amplitude, mean + amplitude], ChaCha8 PRNG.
    Random { mean: f64, amplitude: f64, seed: u64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
    /// Write every k-th step record (the initial and final rows always).
    pub record_every: u64,
    /// Snapshot every k-th step; 0 writes only the final state.
    pub snapshot_every: u64,
    /// Also record the stabilized-scheme Lyapunov functional per step
    /// (one extra Poisson solve each step).
    pub record_modified_energy: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: "out".into(),
            record_every: 1,
            snapshot_every: 0,
            record_modified_energy: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub resolutions: Vec<usize>,
    pub t_final: f64,
    pub dt_factor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MgBenchSection {
    pub theta0s: Vec<f64>,
    pub resolutions: Vec<usize>,
    pub dt: f64,
    pub n_steps: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub schemes: Vec<CompareSchemeSection>,
    pub dts: Vec<f64>,
    pub target_dt: f64,
    pub probes: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSchemeSection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stabilization_a: Option<f64>,
}

// ---------------------------------------------------------------------------
// loading + validation
// ---------------------------------------------------------------------------

/// Everything a subcommand needs, already validated by the library types.
pub struct Validated {
    pub raw: RunConfig,
    pub kind: SchemeKind,
    pub spec: GridSpec,
    pub params: ModelParams,
    pub mg: MgConfig,
    pub dt: f64,
    pub n_steps: u64,
}

pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Validated> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    let mut raw: RunConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let (Some(seed), InitSection::Random { seed: s, .. }) = (seed_override, &mut raw.init) {
        *s = seed;
    } else if seed_override.is_some() {
        eprintln!("note: --seed has no effect on a non-random initial condition");
    }
    validate(raw)
}

pub fn validate(raw: RunConfig) -> CliResult<Validated> {
    let kind = SchemeKind::from_str(&raw.scheme).map_err(CliError::from)?;
    let spec = GridSpec::new(raw.grid.dim, raw.grid.n, raw.grid.length).map_err(CliError::from)?;

    let mobility = match raw.model.mobility {
        MobilitySection::Constant { value } => Mobility::Constant(value),
        MobilitySection::RegularizedDegenerate { floor } => {
            Mobility::RegularizedDegenerate { floor }
        }
    };
    let params = ModelParams::new(raw.model.epsilon, raw.model.theta0, raw.model.delta)
        .map_err(CliError::from)?
        .with_stabilization(raw.model.stabilization_a)
        .with_mobility(mobility);
    params.validate().map_err(CliError::from)?;
    if kind == SchemeKind::Ac1 && params.mobility.as_constant().is_none() {
        return Err(CliError::Config(
            "scheme ac1 needs a constant mobility".into(),
        ));
    }

    let sweep = match raw.mg.sweep.as_str() {
        "red_black" => SweepOrder::RedBlack,
        "lexicographic" => SweepOrder::Lexicographic,
        other => {
            return Err(CliError::Config(format!(
                "mg.sweep: expected red_black or lexicographic, got {other}"
            )))
        }
    };
    if raw.mg.lambda == 0 || raw.mg.max_vcycles == 0 || raw.mg.coarse_sweeps == 0 {
        return Err(CliError::Config(
            "mg.lambda, mg.max_vcycles, mg.coarse_sweeps must all be >= 1".into(),
        ));
    }
    if !(raw.mg.tau > 0.0) || !raw.mg.tau.is_finite() {
        return Err(CliError::Config(format!(
            "mg.tau must be positive and finite, got {}",
            raw.mg.tau
        )));
    }
    if raw.mg.coarsest_n < 2 || raw.mg.coarsest_n > raw.grid.n {
        return Err(CliError::Config(format!(
            "mg.coarsest_n must be in [2, n], got {}",
            raw.mg.coarsest_n
        )));
    }
    let mg = MgConfig {
        lambda: raw.mg.lambda,
        tau: raw.mg.tau,
        max_vcycles: raw.mg.max_vcycles,
        coarsest_n: raw.mg.coarsest_n,
        coarse_sweeps: raw.mg.coarse_sweeps,
        sweep,
    };

    if !(raw.time.dt > 0.0) || !raw.time.dt.is_finite() {
        return Err(CliError::Config(format!(
            "time.dt must be positive and finite, got {}",
            raw.time.dt
        )));
    }
    if !(raw.time.t_final >= 0.0) || !raw.time.t_final.is_finite() {
        return Err(CliError::Config(format!(
            "time.t_final must be >= 0, got {}",
            raw.time.t_final
        )));
    }
    let steps_f = raw.time.t_final / raw.time.dt;
    let n_steps = steps_f.round();
    if (steps_f - n_steps).abs() > 1e-9 * n_steps.max(1.0) {
        return Err(CliError::Config(format!(
            "time.t_final = {} is not a whole number of dt = {} steps",
            raw.time.t_final, raw.time.dt
        )));
    }

    match raw.init {
        InitSection::Profile => {
            if raw.grid.dim != 2 || (raw.grid.length - 3.2).abs() > 1e-12 {
                return Err(CliError::Config(
                    "init.profile needs dim = 2 and length = 3.2 (the benchmark box)".into(),
                ));
            }
        }
        InitSection::Random { mean, amplitude, .. } => {
            if !(amplitude >= 0.0) || !(mean.abs() + amplitude < 1.0) {
                return Err(CliError::Config(format!(
                    "init.random needs |mean| + amplitude < 1, got mean = {mean}, \
                     amplitude = {amplitude}"
                )));
            }
        }
    }

    if raw.output.record_every == 0 {
        return Err(CliError::Config("output.record_every must be >= 1".into()));
    }

    if let Some(c) = &raw.convergence {
        if c.resolutions.len() < 2 {
            return Err(CliError::Config(
                "convergence.resolutions needs at least two entries".into(),
            ));
        }
        for w in c.resolutions.windows(2) {
            if w[1] != 2 * w[0] {
                return Err(CliError::Config(format!(
                    "convergence.resolutions must double at each level, got {} -> {}",
                    w[0], w[1]
                )));
            }
        }
    }
    if let Some(m) = &raw.mg_bench {
        if m.theta0s.is_empty() || m.resolutions.is_empty() || m.n_steps == 0 {
            return Err(CliError::Config(
                "mg_bench needs theta0s, resolutions, and n_steps >= 1".into(),
            ));
        }
    }
    if let Some(c) = &raw.compare {
        if c.schemes.is_empty() || c.dts.is_empty() || c.probes.is_empty() {
            return Err(CliError::Config(
                "compare needs schemes, dts, and probes".into(),
            ));
        }
        for s in &c.schemes {
            SchemeKind::from_str(&s.kind).map_err(CliError::from)?;
        }
    }

    let dt = raw.time.dt;
    Ok(Validated {
        raw,
        kind,
        spec,
        params,
        mg,
        dt,
        n_steps: n_steps as u64,
    })
}

impl Validated {
    pub fn compare_entries(&self) -> CliResult<Vec<ComparisonEntry>> {
        let section = self.raw.compare.as_ref().ok_or_else(|| {
            CliError::Config("this command needs a [compare] section".into())
        })?;
        section
            .schemes
            .iter()
            .map(|s| {
                Ok(ComparisonEntry {
                    kind: SchemeKind::from_str(&s.kind).map_err(CliError::from)?,
                    stabilization_a: s.stabilization_a,
                })
            })
            .collect()
    }

    pub fn dump(&self) -> CliResult<String> {
        toml::to_string_pretty(&self.raw)
            .map_err(|e| CliError::Config(format!("serializing config: {e}")))
    }
}
