//! Configuration-driven experiments: the logic behind the `qeuler` binary.
//!
//! A config is one JSON document with four sections, `system`, `run`,
//! `observe` and `output`. For short configs the system may be given by
//! name, with its parameters and the run parameters at the top level:
//!
//! ```json
//! {"system": "orszag_mclaughlin", "n": 5, "mode": "deterministic", "m": 10}
//! ```
//!
//! Every report embeds the fully resolved config (defaults filled, `epsilon`
//! and the initial vector made explicit), so rerunning a report's config
//! reproduces it byte for byte.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::driver::{
    self, branching_trials, error_bound, gamma_for, integrate, noise_study, plan_resources,
    run_deterministic, run_montecarlo, IntegrateMode, NoiseModel, ResourcePlan, RunReport,
};
use crate::error::{Error, Result};
use crate::observables::{expectation, fourier_spectrum, sample_expectation, Observable};
use crate::poly::{euler_map, OdeSystem, PolyDocument, PolynomialMap, SampleDomain};
use crate::rng;
use crate::state::AmplitudeState;
use crate::step::StepOperator;
use crate::systems::{self, GraphSpec};
use crate::C64;

pub const SCHEMA_VERSION: u32 = 1;

/// Exit code of a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code when the algorithm itself fails; a partial report is written.
pub const EXIT_FAILURE: i32 = 1;
/// Exit code for invalid configuration or unusable inputs.
pub const EXIT_CONFIG: i32 = 2;

const INITIAL_STREAM: u64 = u64::MAX - 1;
const SYSTEM_STREAM: u64 = u64::MAX - 2;
const READOUT_STREAM: u64 = 1 << 48;
const NOISE_STREAM: u64 = 1;
const VALIDATION_SAMPLES: usize = 256;

const RUN_KEYS: &[&str] =
    &["mode", "m", "t", "epsilon", "plan_base", "lambda", "seed", "eta", "trials", "initial"];
const SYSTEM_KEYS: &[&str] = &[
    "n", "degree", "sigma", "rho", "beta", "graph", "vertices", "edges", "k", "path", "document",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Validate,
    Plan,
    Iterate,
    Integrate,
    NoiseStudy,
    Observe,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Plan => "plan",
            Command::Iterate => "iterate",
            Command::Integrate => "integrate",
            Command::NoiseStudy => "noise_study",
            Command::Observe => "observe",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub observe: ObserveConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    #[default]
    Path,
    Cycle,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    OrszagMclaughlin {
        #[serde(default = "default_om_n")]
        n: usize,
    },
    Lorenz {
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    DiscreteNls {
        #[serde(default)]
        graph: GraphKind,
        #[serde(default = "default_vertices")]
        vertices: usize,
        /// Only for `graph = "custom"`.
        #[serde(default)]
        edges: Vec<(usize, usize)>,
        #[serde(default = "default_nls_k")]
        k: u32,
    },
    Identity {
        #[serde(default = "default_small_n")]
        n: usize,
    },
    Doubling,
    Tripling,
    RandomTorus {
        #[serde(default = "default_small_n")]
        n: usize,
        #[serde(default = "default_degree")]
        degree: usize,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    Map {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        document: Option<PolyDocument>,
    },
    Ode {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        document: Option<PolyDocument>,
    },
}

fn default_om_n() -> usize {
    5
}
fn default_sigma() -> f64 {
    10.0
}
fn default_rho() -> f64 {
    28.0
}
fn default_beta() -> f64 {
    8.0 / 3.0
}
fn default_vertices() -> usize {
    2
}
fn default_nls_k() -> u32 {
    2
}
fn default_small_n() -> usize {
    2
}
fn default_degree() -> usize {
    2
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Deterministic,
    Montecarlo,
    NoiseStudy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
}

/// `"auto"` resolves to `0.9 / ||H||_bound` once the operator is built.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    Value(f64),
    Auto(Auto),
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::Auto(Auto::Auto)
    }
}

impl Epsilon {
    pub fn value(self) -> Option<f64> {
        match self {
            Epsilon::Value(v) => Some(v),
            Epsilon::Auto(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_m")]
    pub m: usize,
    /// Final time for ODE systems; the step is `t / m`.
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub epsilon: Epsilon,
    #[serde(default = "default_plan_base")]
    pub plan_base: f64,
    /// Defaults to `p / 2`.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Defaults to 100 in noise studies and 1 otherwise.
    #[serde(default)]
    pub trials: Option<usize>,
    /// `[re, im]` pairs; defaults to a random unit point of the system's domain.
    /// For the NLS system this is the physical state, of any nonzero norm.
    #[serde(default)]
    pub initial: Option<Vec<[f64; 2]>>,
}

fn default_m() -> usize {
    10
}
fn default_plan_base() -> f64 {
    16.0
}
fn default_eta() -> f64 {
    1e-6
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            m: default_m(),
            t: None,
            epsilon: Epsilon::default(),
            plan_base: default_plan_base(),
            lambda: None,
            seed: 0,
            eta: default_eta(),
            trials: None,
            initial: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    Identity,
    Projector { index: usize },
    Diagonal { values: Vec<f64> },
    Fourier { k: usize },
    /// `row,col,re,im` triplets.
    File { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserveConfig {
    /// Defaults to every Fourier mode `k = 1..n`.
    #[serde(default)]
    pub observables: Vec<ObservableSpec>,
    /// Target error of sampled readout on the final state; `None` skips sampling.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// File name stem; defaults to the command name.
    #[serde(default)]
    pub prefix: Option<String>,
    /// Also write the final amplitude vector as `<prefix>_state.csv`.
    #[serde(default)]
    pub state_dump: bool,
    /// Also write the `A` operator as `<prefix>_operator.csv`.
    #[serde(default)]
    pub operator_dump: bool,
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let value = normalize(value)?;
    let config: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    check(&config)?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Moves shorthand top-level keys into their sections.
fn normalize(value: Value) -> Result<Value> {
    let Value::Object(mut top) = value else {
        return Err(Error::Config("config must be a JSON object".into()));
    };
    if let Some(Value::String(name)) = top.get("system").cloned() {
        let mut sys = Map::new();
        sys.insert("name".into(), Value::String(name));
        for &key in SYSTEM_KEYS {
            if let Some(v) = top.remove(key) {
                sys.insert(key.into(), v);
            }
        }
        top.insert("system".into(), Value::Object(sys));
    }
    let moved: Vec<(String, Value)> = RUN_KEYS
        .iter()
        .filter_map(|&key| top.remove(key).map(|v| (key.to_string(), v)))
        .collect();
    if !moved.is_empty() {
        let run = top.entry("run").or_insert_with(|| Value::Object(Map::new()));
        let Value::Object(run) = run else {
            return Err(Error::Config("`run` must be an object".into()));
        };
        for (key, v) in moved {
            if run.contains_key(&key) {
                return Err(Error::Config(format!("`{key}` given both at top level and in `run`")));
            }
            run.insert(key, v);
        }
    }
    Ok(Value::Object(top))
}

fn check(config: &ExperimentConfig) -> Result<()> {
    let run = &config.run;
    if run.m == 0 {
        return Err(Error::Config("run.m must be at least 1".into()));
    }
    if let Some(t) = run.t {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("run.t must be positive, got {t}")));
        }
    }
    if let Epsilon::Value(e) = run.epsilon {
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::Config(format!("run.epsilon must be positive or \"auto\", got {e}")));
        }
    }
    if !(run.plan_base > 0.0) {
        return Err(Error::Config("run.plan_base must be positive".into()));
    }
    if !(run.eta >= 0.0 && run.eta.is_finite()) {
        return Err(Error::Config("run.eta must be non-negative".into()));
    }
    if let Some(d) = config.observe.delta {
        if !(d > 0.0) {
            return Err(Error::Config("observe.delta must be positive".into()));
        }
    }
    if let Some(a) = config.observe.alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config("observe.alpha must lie in (0, 1)".into()));
        }
    }
    match &config.system {
        SystemConfig::Map { path, document } | SystemConfig::Ode { path, document } => {
            if path.is_some() == document.is_some() {
                return Err(Error::Config("system needs exactly one of `path` or `document`".into()));
            }
        }
        SystemConfig::DiscreteNls { graph, edges, .. } => {
            if *graph != GraphKind::Custom && !edges.is_empty() {
                return Err(Error::Config("system.edges is only allowed with graph = \"custom\"".into()));
            }
        }
        _ => {}
    }
    Ok(())
}

/// What the system section builds.
#[derive(Clone, Debug)]
pub enum Target {
    Map(PolynomialMap),
    Ode(OdeSystem),
}

impl Target {
    fn domain(&self) -> SampleDomain {
        match self {
            Target::Map(m) => m.domain(),
            Target::Ode(s) => s.domain(),
        }
    }

    fn n(&self) -> usize {
        match self {
            Target::Map(m) => m.n(),
            Target::Ode(s) => s.n(),
        }
    }
}

/// A config with its system built and its initial vector resolved.
#[derive(Clone, Debug)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub target: Target,
    /// Unit vector fed to the encoder.
    pub z0: Vec<C64>,
    /// For the NLS system, `physical = nls_scale * first half of z`.
    pub nls_scale: Option<f64>,
}

fn read_document(path: &Path) -> Result<PolyDocument> {
    let file = File::open(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn to_complex(values: &[[f64; 2]]) -> Vec<C64> {
    values.iter().map(|&[re, im]| C64::new(re, im)).collect()
}

fn from_complex(values: &[C64]) -> Vec<[f64; 2]> {
    values.iter().map(|v| [v.re, v.im]).collect()
}

/// Builds the system and resolves the initial state; paths are read and
/// replaced by inline documents.
pub fn resolve(config: &ExperimentConfig) -> Result<Setup> {
    let mut config = config.clone();
    let seed = config.run.seed;
    let initial = config.run.initial.as_deref().map(to_complex);
    let mut nls_scale = None;

    let target = match &mut config.system {
        SystemConfig::OrszagMclaughlin { n } => Target::Ode(systems::orszag_mclaughlin(*n)?),
        SystemConfig::Lorenz { sigma, rho, beta } => Target::Ode(systems::lorenz_with(*sigma, *rho, *beta)?),
        SystemConfig::DiscreteNls { graph, vertices, edges, k } => {
            let g = match graph {
                GraphKind::Path => GraphSpec::path(*vertices)?,
                GraphKind::Cycle => GraphSpec::cycle(*vertices)?,
                GraphKind::Custom => {
                    let max_degree = (0..*vertices)
                        .map(|v| edges.iter().filter(|&&(a, b)| a == v || b == v).count())
                        .max()
                        .unwrap_or(0);
                    GraphSpec::new(*vertices, edges.clone(), max_degree)?
                }
            };
            let physical = match &initial {
                Some(z) => z.clone(),
                None => SampleDomain::Complex.sample_unit(*vertices, &mut rng::stream(seed, INITIAL_STREAM)),
            };
            if physical.len() != *vertices {
                return Err(Error::Config(format!(
                    "run.initial has {} entries but the graph has {vertices} vertices",
                    physical.len()
                )));
            }
            let (doubled, scale) = systems::nls_encode(&physical)?;
            config.run.initial = Some(from_complex(&physical));
            nls_scale = Some(scale);
            let sys = systems::discrete_nls_scaled(&g, *k, scale)?;
            return finish(config, Target::Ode(sys), doubled, nls_scale);
        }
        SystemConfig::Identity { n } => Target::Map(systems::identity_map(*n)?),
        SystemConfig::Doubling => Target::Map(systems::doubling_map()),
        SystemConfig::Tripling => Target::Map(systems::tripling_map()),
        SystemConfig::RandomTorus { n, degree, seed: map_seed } => {
            let s = *map_seed.get_or_insert(seed);
            Target::Map(systems::random_torus_map(*n, *degree, &mut rng::stream(s, SYSTEM_STREAM))?)
        }
        SystemConfig::Map { path, document } => {
            if let Some(p) = path.take() {
                *document = Some(read_document(&p)?);
            }
            Target::Map(PolynomialMap::from_document(document.as_ref().expect("checked"))?)
        }
        SystemConfig::Ode { path, document } => {
            if let Some(p) = path.take() {
                *document = Some(read_document(&p)?);
            }
            Target::Ode(OdeSystem::from_document(document.as_ref().expect("checked"))?)
        }
    };

    let z0 = match initial {
        Some(z) => z,
        None => target.domain().sample_unit(target.n(), &mut rng::stream(seed, INITIAL_STREAM)),
    };
    if z0.len() != target.n() {
        return Err(Error::Config(format!(
            "run.initial has {} entries but the system has {} variables",
            z0.len(),
            target.n()
        )));
    }
    config.run.initial = Some(from_complex(&z0));
    finish(config, target, z0, nls_scale)
}

fn finish(config: ExperimentConfig, target: Target, z0: Vec<C64>, nls_scale: Option<f64>) -> Result<Setup> {
    let norm2: f64 = z0.iter().map(|v| v.norm_sqr()).sum();
    if (norm2 - 1.0).abs() > driver::ENCODE_TOL {
        return Err(Error::Config(format!("run.initial must have unit norm, got ||z||^2 = {norm2}")));
    }
    Ok(Setup { config, target, z0, nls_scale })
}

/// Result of [`execute`].
#[derive(Clone, Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
    pub message: Option<String>,
}

/// Whether an error is the user's input (exit 2) or the algorithm (exit 1).
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_)
        | Error::NoConvergence(_)
        | Error::ZeroProbability
        | Error::VanishingProbability(_)
        | Error::RegisterNotCollapsed(_)
        | Error::VanishingAnchor(_) => EXIT_FAILURE,
        _ => EXIT_CONFIG,
    }
}

struct Artifacts {
    dir: PathBuf,
    stem: String,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn path(&mut self, suffix: &str) -> PathBuf {
        let p = self.dir.join(format!("{}{suffix}", self.stem));
        self.files.push(p.clone());
        p
    }

    fn writer(&mut self, suffix: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(suffix))?))
    }
}

/// Body of a report before it is wrapped with the schema header.
struct Body {
    status: &'static str,
    exit_code: i32,
    result: Value,
    warnings: Vec<String>,
    message: Option<String>,
}

impl Body {
    fn ok(result: Value, warnings: Vec<String>) -> Self {
        Self { status: "ok", exit_code: EXIT_OK, result, warnings, message: None }
    }
}

/// Runs `command` and writes `<out>/<prefix>.json` plus CSV artifacts.
pub fn execute(command: Command, config: &ExperimentConfig, out: &Path) -> Outcome {
    let mut art = Artifacts {
        dir: out.to_path_buf(),
        stem: config.output.prefix.clone().unwrap_or_else(|| command.name().to_string()),
        files: Vec::new(),
    };
    if let Err(e) = fs::create_dir_all(out) {
        return Outcome { exit_code: EXIT_CONFIG, files: Vec::new(), message: Some(e.to_string()) };
    }
    let mut resolved = serde_json::to_value(config).unwrap_or(Value::Null);
    let body = match resolve(config) {
        Ok(mut setup) => {
            let body = run_command(command, &mut setup, &mut art);
            resolved = serde_json::to_value(&setup.config).unwrap_or(Value::Null);
            body
        }
        Err(e) => Err(e),
    };
    let body = body.unwrap_or_else(|e| Body {
        status: if exit_code_for(&e) == EXIT_CONFIG { "config_error" } else { "failure" },
        exit_code: exit_code_for(&e),
        result: Value::Null,
        warnings: Vec::new(),
        message: Some(e.to_string()),
    });
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command.name(),
        "status": body.status,
        "message": body.message,
        "warnings": body.warnings,
        "config": resolved,
        "result": body.result,
    });
    let written = art
        .writer(".json")
        .and_then(|mut w| {
            serde_json::to_writer_pretty(&mut w, &report)?;
            std::io::Write::write_all(&mut w, b"\n")?;
            std::io::Write::flush(&mut w)?;
            Ok(())
        });
    match written {
        Ok(()) => Outcome { exit_code: body.exit_code, files: art.files, message: body.message },
        Err(e) => Outcome { exit_code: EXIT_CONFIG, files: art.files, message: Some(e.to_string()) },
    }
}

fn run_command(command: Command, setup: &mut Setup, art: &mut Artifacts) -> Result<Body> {
    match command {
        Command::Validate => cmd_validate(setup),
        Command::Plan => cmd_plan(setup),
        Command::Iterate => {
            if matches!(setup.target, Target::Ode(_)) {
                return Err(Error::Config("`iterate` needs a map system; use `integrate` for ODEs".into()));
            }
            cmd_run(setup, art, setup.config.run.mode)
        }
        Command::Integrate => {
            if matches!(setup.target, Target::Map(_)) {
                return Err(Error::Config("`integrate` needs an ODE system; use `iterate` for maps".into()));
            }
            cmd_run(setup, art, setup.config.run.mode)
        }
        Command::NoiseStudy => cmd_run(setup, art, Mode::NoiseStudy),
        Command::Observe => cmd_observe(setup, art),
    }
}

/// The map applied per step: the map itself, or the Euler map with `h = t / m`.
fn step_map(setup: &Setup) -> Result<(PolynomialMap, Option<f64>)> {
    match &setup.target {
        Target::Map(m) => Ok((m.clone(), None)),
        Target::Ode(sys) => {
            let t = setup
                .config
                .run
                .t
                .ok_or_else(|| Error::Config("run.t is required for ODE systems".into()))?;
            let h = t / setup.config.run.m as f64;
            Ok((euler_map(sys, h)?, Some(h)))
        }
    }
}

fn resolve_epsilon(setup: &mut Setup, map: &PolynomialMap) -> Result<StepOperator> {
    let op = StepOperator::new(map, setup.config.run.epsilon.value())?;
    setup.config.run.epsilon = Epsilon::Value(op.epsilon());
    Ok(op)
}

fn operator_summary(op: &StepOperator) -> Value {
    json!({
        "epsilon": op.epsilon(),
        "h_norm": op.h_norm(),
        "h_norm_bound": op.h_norm_bound(),
        "sparsity": op.sparsity(),
        "a_max": op.a_max(),
        "register_dim": op.register_dim(),
    })
}

fn cmd_validate(setup: &mut Setup) -> Result<Body> {
    let (map, h) = step_map(setup)?;
    let op = resolve_epsilon(setup, &map)?;
    let seed = setup.config.run.seed;
    let validation = map.validate(VALIDATION_SAMPLES, seed)?;
    let mut warnings = Vec::new();
    let measure = match &setup.target {
        Target::Ode(sys) => {
            let check = sys.check_measure_preserving(VALIDATION_SAMPLES, 1e-9, seed)?;
            if check.preserving != sys.measure_preserving_claimed() {
                warnings.push(format!(
                    "system claims norm preservation = {} but the sampled check says {}",
                    sys.measure_preserving_claimed(),
                    check.preserving
                ));
            }
            Some(check)
        }
        Target::Map(_) => None,
    };
    Ok(Body::ok(
        json!({
            "step_size": h,
            "validation": validation,
            "measure_check": measure,
            "operator": operator_summary(&op),
        }),
        warnings,
    ))
}

fn plan_for(setup: &Setup, op: &StepOperator) -> Result<ResourcePlan> {
    let run = &setup.config.run;
    plan_resources(run.m, op.epsilon(), run.plan_base, run.lambda)
}

fn cmd_plan(setup: &mut Setup) -> Result<Body> {
    let (map, _) = step_map(setup)?;
    let op = resolve_epsilon(setup, &map)?;
    let plan = plan_for(setup, &op)?;
    let run = &setup.config.run;
    let bound = error_bound(run.eta, gamma_for(op.epsilon()), run.m)?;
    Ok(Body::ok(
        json!({
            "plan": plan,
            "operator": operator_summary(&op),
            "error_bound_at_eta": bound,
        }),
        Vec::new(),
    ))
}

fn cmd_run(setup: &mut Setup, art: &mut Artifacts, mode: Mode) -> Result<Body> {
    let (map, h) = step_map(setup)?;
    let op = resolve_epsilon(setup, &map)?;
    let eps = Some(op.epsilon());
    let run = setup.config.run.clone();
    let mut extra = Map::new();

    let report: RunReport = match (mode, &setup.target) {
        (Mode::NoiseStudy, _) => {
            let trials = *setup.config.run.trials.get_or_insert(100);
            let noise = NoiseModel { eta: run.eta, stream: NOISE_STREAM };
            let study = noise_study(&map, &setup.z0, run.m, eps, &noise, trials, run.seed)?;
            extra.insert("gamma".into(), json!(study.gamma));
            extra.insert("bounds".into(), json!(study.bounds));
            extra.insert("bound_violations".into(), json!(study.bound_violations));
            extra.insert("recurrence_violations".into(), json!(study.recurrence_violations));
            extra.insert("deltas".into(), json!(study.deltas));
            let mut report = study.run;
            if let Some(h) = h {
                report.time_step = h;
                for rec in &mut report.steps {
                    rec.t = rec.step as f64 * h;
                }
            }
            if study.bound_violations > 0 || study.recurrence_violations > 0 {
                report.success = false;
            }
            report
        }
        (Mode::Deterministic, Target::Map(_)) => run_deterministic(&map, &setup.z0, run.m, eps)?,
        (Mode::Deterministic, Target::Ode(sys)) => integrate(
            sys,
            &setup.z0,
            run.t.expect("checked by step_map"),
            run.m,
            eps,
            IntegrateMode::Deterministic,
            &mut rng::stream(run.seed, 0),
        )?,
        (Mode::Montecarlo, target) => {
            let trials = *setup.config.run.trials.get_or_insert(1);
            let plan = plan_for(setup, &op)?;
            if plan.n0.is_none() {
                return Err(Error::Config(format!(
                    "the plan needs 10^{:.2} copies, beyond exact counting; reduce m or raise epsilon",
                    plan.log10_n0
                )));
            }
            let mut rng = rng::stream(run.seed, 0);
            let report = match target {
                Target::Map(_) => run_montecarlo(&map, &setup.z0, &plan, &mut rng)?,
                Target::Ode(sys) => integrate(
                    sys,
                    &setup.z0,
                    run.t.expect("checked by step_map"),
                    run.m,
                    eps,
                    IntegrateMode::Montecarlo { base: run.plan_base, lambda: run.lambda },
                    &mut rng,
                )?,
            };
            if trials > 1 {
                let summary = branching_trials(&plan, &report.probabilities, trials, run.seed)?;
                extra.insert(
                    "trials_summary".into(),
                    json!({
                        "trials": summary.trials,
                        "successes": summary.successes,
                        "success_fraction": summary.success_fraction,
                        "mean_copies": summary.mean_copies,
                    }),
                );
            }
            extra.insert("plan".into(), json!(plan));
            report
        }
    };

    art_outputs(setup, art, &op, &report)?;
    let success = report.success;
    let warnings = report.warnings.clone();
    let mut result = Map::new();
    result.insert("operator".into(), operator_summary(&op));
    if let Some(scale) = setup.nls_scale {
        result.insert("nls_scale".into(), json!(scale));
        result.insert("physical_final".into(), json!(systems::nls_decode(report.final_iterate(), scale)));
    }
    result.insert("report".into(), json!(report));
    result.extend(extra);
    let mut body = Body::ok(Value::Object(result), warnings);
    if !success {
        body.status = "failure";
        body.exit_code = EXIT_FAILURE;
        body.message = Some(match report.failed_round {
            Some(r) => format!("copy count fell below the threshold in round {r}"),
            None => "run did not meet its success criterion".into(),
        });
    }
    Ok(body)
}

fn art_outputs(setup: &Setup, art: &mut Artifacts, op: &StepOperator, report: &RunReport) -> Result<()> {
    report.write_trajectory_csv(art.writer(".csv")?)?;
    write_dumps(setup, art, op, report)
}

fn write_dumps(setup: &Setup, art: &mut Artifacts, op: &StepOperator, report: &RunReport) -> Result<()> {
    if setup.config.output.state_dump {
        let z = report.final_iterate();
        let amps: Vec<C64> = std::iter::once(C64::new(1.0, 0.0)).chain(z.iter().copied()).collect();
        AmplitudeState::from_amplitudes(amps)?.write_csv(art.writer("_state.csv")?)?;
    }
    if setup.config.output.operator_dump {
        op.a().write_triplets_csv(art.writer("_operator.csv")?)?;
    }
    Ok(())
}

fn build_observable(spec: &ObservableSpec, n: usize) -> Result<Observable> {
    match spec {
        ObservableSpec::Identity => Observable::identity(n + 1),
        ObservableSpec::Projector { index } => Observable::projector(n + 1, *index),
        ObservableSpec::Diagonal { values } => {
            if values.len() != n + 1 {
                return Err(Error::Config(format!(
                    "diagonal observable needs {} values, got {}",
                    n + 1,
                    values.len()
                )));
            }
            Observable::diagonal(values)
        }
        ObservableSpec::Fourier { k } => Observable::fourier_k(n, *k),
        ObservableSpec::File { path } => {
            let file = File::open(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            Observable::read_triplets_csv(path.display().to_string(), file, n + 1)
        }
    }
}

fn cmd_observe(setup: &mut Setup, art: &mut Artifacts) -> Result<Body> {
    let (map, h) = step_map(setup)?;
    let op = resolve_epsilon(setup, &map)?;
    let run = setup.config.run.clone();
    let n = setup.target.n();
    if setup.config.observe.observables.is_empty() {
        setup.config.observe.observables = (1..=n).map(|k| ObservableSpec::Fourier { k }).collect();
    }
    let observables: Vec<Observable> = setup
        .config
        .observe
        .observables
        .iter()
        .map(|s| build_observable(s, n))
        .collect::<Result<_>>()?;

    let report = match &setup.target {
        Target::Map(_) => run_deterministic(&map, &setup.z0, run.m, Some(op.epsilon()))?,
        Target::Ode(sys) => integrate(
            sys,
            &setup.z0,
            run.t.expect("checked by step_map"),
            run.m,
            Some(op.epsilon()),
            IntegrateMode::Deterministic,
            &mut rng::stream(run.seed, 0),
        )?,
    };

    let states: Vec<AmplitudeState> = report
        .iterates()
        .map(|z| AmplitudeState::from_amplitudes(std::iter::once(C64::new(1.0, 0.0)).chain(z.iter().copied()).collect()))
        .collect::<Result<_>>()?;

    let mut wtr = csv::Writer::from_writer(art.writer(".csv")?);
    let mut header = vec!["step".to_string(), "t".to_string()];
    for o in &observables {
        header.push(format!("{}_state", o.name()));
        header.push(format!("{}_amplitude", o.name()));
    }
    wtr.write_record(&header)?;
    let mut table = Vec::with_capacity(states.len());
    for (rec, state) in report.steps.iter().zip(&states) {
        let values = observables.iter().map(|o| expectation(state, o)).collect::<Result<Vec<_>>>()?;
        let mut row = vec![rec.step.to_string(), rec.t.to_string()];
        for v in &values {
            row.push(v.state.to_string());
            row.push(v.amplitude.to_string());
        }
        wtr.write_record(&row)?;
        table.push(values);
    }
    wtr.flush()?;
    write_dumps(setup, art, &op, &report)?;

    let final_state = states.last().expect("report holds the initial state");
    let sampled = match setup.config.observe.delta {
        Some(delta) => {
            let alpha = *setup.config.observe.alpha.get_or_insert(0.05);
            let s = observables
                .iter()
                .enumerate()
                .map(|(i, o)| {
                    sample_expectation(final_state, o, delta, alpha, &mut rng::stream(run.seed, READOUT_STREAM + i as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(s)
        }
        None => None,
    };

    let names: Vec<&str> = observables.iter().map(|o| o.name()).collect();
    Ok(Body::ok(
        json!({
            "operator": operator_summary(&op),
            "step_size": h,
            "observables": names,
            "final": table.last(),
            "sampled": sampled,
            "fourier_final": fourier_spectrum(report.final_iterate()),
            "report": report,
        }),
        report.warnings.clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(r#"{"system": "orszag_mclaughlin", "n": 5, "mode": "deterministic", "m": 10}"#)
            .unwrap();
        assert_eq!(c.system, SystemConfig::OrszagMclaughlin { n: 5 });
        assert_eq!(c.run.m, 10);
        assert_eq!(c.run.mode, Mode::Deterministic);
        assert_eq!(c.run.epsilon, Epsilon::Auto(Auto::Auto));
        assert_eq!(c.run.plan_base, 16.0);
        assert_eq!(c.run.seed, 0);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config(r#"{"system": "doubling", "epsilonn": 0.5}"#).unwrap_err();
        assert!(err.to_string().contains("epsilonn"), "{err}");
        let err = parse_config(r#"{"system": {"name": "doubling"}, "run": {"epsilonn": 0.5}}"#).unwrap_err();
        assert!(err.to_string().contains("epsilonn"), "{err}");
        let err = parse_config(r#"{"system": {"name": "identity", "m": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("`m`"), "{err}");
    }

    #[test]
    fn epsilon_forms() {
        let c = parse_config(r#"{"system": "doubling", "epsilon": "auto"}"#).unwrap();
        assert_eq!(c.run.epsilon.value(), None);
        let c = parse_config(r#"{"system": "doubling", "epsilon": 0.5}"#).unwrap();
        assert_eq!(c.run.epsilon.value(), Some(0.5));
        assert!(parse_config(r#"{"system": "doubling", "epsilon": "big"}"#).is_err());
        assert!(parse_config(r#"{"system": "doubling", "epsilon": -1}"#).is_err());
    }

    #[test]
    fn resolution_fills_initial_and_epsilon() {
        let c = parse_config(r#"{"system": "identity", "n": 3, "seed": 4}"#).unwrap();
        let setup = resolve(&c).unwrap();
        assert_eq!(setup.config.run.initial.as_ref().unwrap().len(), 3);
        let again = resolve(&setup.config).unwrap();
        assert_eq!(again.z0, setup.z0);
    }

    #[test]
    fn unnormalised_initial_is_a_config_error() {
        let c = parse_config(r#"{"system": "doubling", "initial": [[2.0, 0.0]]}"#).unwrap();
        assert!(matches!(resolve(&c), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code_for(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code_for(&Error::VanishingProbability(0.0)), EXIT_FAILURE);
    }
}
