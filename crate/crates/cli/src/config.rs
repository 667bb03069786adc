//! Experiment configuration: loading, dotted overrides, validation and the
//! canonical hash stamped on every artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use stochflux_core::model::{AssumptionConstants, Diffusivity, Hamiltonian};
use stochflux_core::{builtin_model_by_name, Field, Grid, KickSpec, ModelSpec, SolverConfig};

/// Environment variable that replaces `seed_root` at `run` time.
pub const SEED_ENV: &str = "STOCHFLUX_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("invalid configuration:\n{}", .0.iter().map(|k| format!("  {k}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed_root: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    pub model: ModelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub kick: KickSection,
    #[serde(default)]
    pub solver: SolverConfig,
    pub experiment: Experiment,
}

fn default_output_dir() -> String {
    "runs".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusivity: Option<Diffusivity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<Hamiltonian>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantOverrides>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

impl ConstantOverrides {
    fn apply(&self, c: &mut AssumptionConstants) {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut c.kappa0, self.kappa0);
        set(&mut c.c_kappa, self.c_kappa);
        set(&mut c.lambda, self.lambda);
        set(&mut c.c1, self.c1);
        set(&mut c.c2, self.c2);
        set(&mut c.c_h, self.c_h);
        set(&mut c.q, self.q);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    pub length: f64,
    pub cells: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            length: 16.0,
            cells: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KickSection {
    pub n_modes: usize,
    pub sigma_target: f64,
    pub cutoff: f64,
}

impl Default for KickSection {
    fn default() -> Self {
        let k = KickSpec::default();
        Self {
            n_modes: k.n_modes,
            sigma_target: k.sigma_target,
            cutoff: k.cutoff,
        }
    }
}

/// Initial state `u(0−)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initial {
    Constant {
        value: f64,
    },
    /// `offset + amplitude · sin(2π·mode·x/L)`
    Sine {
        offset: f64,
        amplitude: f64,
        mode: u32,
    },
}

impl Initial {
    pub fn field(&self, grid: Grid) -> Field {
        match *self {
            Initial::Constant { value } => Field::constant(grid, value),
            Initial::Sine {
                offset,
                amplitude,
                mode,
            } => {
                let k = 2.0 * std::f64::consts::PI * f64::from(mode) / grid.length();
                Field::from_fn(grid, |x| offset + amplitude * (k * x).sin())
            }
        }
    }

    fn check(&self) -> Option<String> {
        let finite = match *self {
            Initial::Constant { value } => value.is_finite(),
            Initial::Sine {
                offset, amplitude, ..
            } => offset.is_finite() && amplitude.is_finite(),
        };
        (!finite).then(|| "values must be finite".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateParams {
    pub u_min: f64,
    pub u_max: f64,
    pub n_samples: usize,
}

impl Default for ValidateParams {
    fn default() -> Self {
        Self {
            u_min: -10.0,
            u_max: 10.0,
            n_samples: 4001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateParams {
    pub a: f64,
    pub horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<Initial>,
    pub kicked: bool,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            a: 0.0,
            horizon: 4.0,
            initial: None,
            kicked: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InvariantParams {
    pub a: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_list: Option<Vec<f64>>,
    pub horizon: f64,
    pub n_paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_cell: Option<usize>,
    /// Rerun at twice the horizon and compare.
    pub doubling: bool,
}

impl Default for InvariantParams {
    fn default() -> Self {
        Self {
            a: 0.0,
            a_list: None,
            horizon: 32.0,
            n_paths: 64,
            burn_in: None,
            probe_cell: None,
            doubling: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderingParams {
    pub initials: Vec<Initial>,
    pub horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
}

impl Default for OrderingParams {
    fn default() -> Self {
        Self {
            initials: vec![Initial::Constant { value: 0.0 }, Initial::Constant { value: 1.0 }],
            horizon: 8.0,
            burn_in: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContractionParams {
    pub initials: Vec<Initial>,
    pub horizon: f64,
    pub kicked: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
}

impl Default for ContractionParams {
    fn default() -> Self {
        Self {
            initials: vec![
                Initial::Sine {
                    offset: 0.0,
                    amplitude: 1.0,
                    mode: 1,
                },
                Initial::Sine {
                    offset: 0.5,
                    amplitude: -0.5,
                    mode: 2,
                },
            ],
            horizon: 2.0,
            kicked: false,
            ell: Some(0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColeHopfParams {
    /// Defaults to the model's `λ`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Defaults to the model's `c2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    /// Number of unit periods for the moment growth fit.
    pub horizon: usize,
    pub n_paths: usize,
    /// Length of the trajectory used for the potential gradient check.
    pub potential_horizon: f64,
    pub doubling: bool,
}

impl Default for ColeHopfParams {
    fn default() -> Self {
        Self {
            lambda: None,
            c2: None,
            horizon: 8,
            n_paths: 32,
            potential_horizon: 2.0,
            doubling: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupersolutionParams {
    pub n_samples: usize,
    pub t_list: Vec<f64>,
    /// `φ0 = exp(log_amplitude · V)` with `V` a kick sample.
    pub log_amplitude: f64,
}

impl Default for SupersolutionParams {
    fn default() -> Self {
        Self {
            n_samples: 100,
            t_list: vec![0.1, 0.5, 1.0],
            log_amplitude: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistributionParams {
    pub a: f64,
    /// Defaults to cells `N/2` and `N/4`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_cells: Option<Vec<usize>>,
    pub lag: f64,
    pub bins: usize,
    pub horizon: f64,
    pub n_paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    pub doubling: bool,
}

impl Default for DistributionParams {
    fn default() -> Self {
        Self {
            a: 0.0,
            probe_cells: None,
            lag: 0.25,
            bins: 20,
            horizon: 64.0,
            n_paths: 32,
            burn_in: None,
            doubling: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Validate(ValidateParams),
    Simulate(SimulateParams),
    Invariant(InvariantParams),
    Ordering(OrderingParams),
    Contraction(ContractionParams),
    Colehopf(ColeHopfParams),
    Supersolution(SupersolutionParams),
    Distribution(DistributionParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Validate(_) => "validate",
            Experiment::Simulate(_) => "simulate",
            Experiment::Invariant(_) => "invariant",
            Experiment::Ordering(_) => "ordering",
            Experiment::Contraction(_) => "contraction",
            Experiment::Colehopf(_) => "colehopf",
            Experiment::Supersolution(_) => "supersolution",
            Experiment::Distribution(_) => "distribution",
        }
    }
}

/// Everything an experiment needs, resolved from a validated config.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub model: ModelSpec,
    pub grid: Grid,
    pub kick: KickSpec,
}

impl ExperimentConfig {
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let mut errors = Vec::new();
        let model = match builtin_model_by_name(&self.model.name) {
            Ok(mut m) => {
                if let Some(d) = &self.model.diffusivity {
                    m.diffusivity = d.clone();
                }
                if let Some(h) = &self.model.hamiltonian {
                    m.hamiltonian = h.clone();
                }
                if let Some(c) = &self.model.constants {
                    c.apply(&mut m.constants);
                }
                if let Err(e) = m.constants.check() {
                    errors.push(format!("model.constants: {e}"));
                }
                Some(m)
            }
            Err(e) => {
                errors.push(format!("model.name: {e}"));
                None
            }
        };
        let grid = Grid::new(self.grid.length, self.grid.cells)
            .map_err(|e| errors.push(format!("grid: {e}")))
            .ok();
        let kick = KickSpec::new(self.kick.n_modes, self.kick.sigma_target, self.kick.cutoff, self.seed_root)
            .map_err(|e| errors.push(format!("kick: {e}")))
            .ok();
        if let Err(e) = self.solver.check() {
            errors.push(format!("solver: {e}"));
        }
        self.check_experiment(&mut errors);
        match (model, grid, kick) {
            (Some(model), Some(grid), Some(kick)) if errors.is_empty() => Ok(Resolved { model, grid, kick }),
            _ => Err(ConfigError::Invalid(errors)),
        }
    }

    fn check_experiment(&self, errors: &mut Vec<String>) {
        let mut need = |ok: bool, key: &str, reason: &str| {
            if !ok {
                errors.push(format!("experiment.{key}: {reason}"));
            }
        };
        let pos = |v: f64| v > 0.0 && v.is_finite();
        match &self.experiment {
            Experiment::Validate(p) => {
                need(p.u_min < p.u_max, "u_min", "must be below u_max");
                need(p.n_samples >= 2, "n_samples", "must be at least 2");
            }
            Experiment::Simulate(p) => {
                need(p.a.is_finite(), "a", "must be finite");
                need(pos(p.horizon), "horizon", "must be positive");
                if let Some(msg) = p.initial.as_ref().and_then(Initial::check) {
                    need(false, "initial", &msg);
                }
            }
            Experiment::Invariant(p) => {
                need(p.a.is_finite(), "a", "must be finite");
                if let Some(l) = &p.a_list {
                    need(!l.is_empty() && l.iter().all(|a| a.is_finite()), "a_list", "must be non-empty and finite");
                }
                need(p.horizon >= 4.0 && p.horizon.is_finite(), "horizon", "must be at least 4");
                need(p.n_paths >= 8, "n_paths", "must be at least 8");
                if let Some(b) = p.burn_in {
                    need(b >= 0.0 && b < p.horizon, "burn_in", "must lie in [0, horizon)");
                }
                if let Some(c) = p.probe_cell {
                    need(c < self.grid.cells, "probe_cell", "must be below grid.cells");
                }
            }
            Experiment::Ordering(p) => {
                need(p.initials.len() >= 2, "initials", "need at least two initial states");
                need(p.initials.iter().all(|i| i.check().is_none()), "initials", "values must be finite");
                need(pos(p.horizon), "horizon", "must be positive");
                if let Some(b) = p.burn_in {
                    need(b >= 0.0 && b < p.horizon, "burn_in", "must lie in [0, horizon)");
                }
            }
            Experiment::Contraction(p) => {
                need(p.initials.len() == 2, "initials", "need exactly two initial states");
                need(p.initials.iter().all(|i| i.check().is_none()), "initials", "values must be finite");
                need(pos(p.horizon), "horizon", "must be positive");
                if let Some(l) = p.ell {
                    need((0.0..1.0).contains(&l), "ell", "must lie in [0, 1)");
                }
            }
            Experiment::Colehopf(p) => {
                if let Some(l) = p.lambda {
                    need(pos(l), "lambda", "must be positive");
                }
                if let Some(c) = p.c2 {
                    need(c >= 0.0 && c.is_finite(), "c2", "must be non-negative");
                }
                need(p.horizon >= 2, "horizon", "must be at least 2");
                need(p.n_paths >= 8, "n_paths", "must be at least 8");
                need(pos(p.potential_horizon), "potential_horizon", "must be positive");
            }
            Experiment::Supersolution(p) => {
                need(p.n_samples >= 1, "n_samples", "must be at least 1");
                need(
                    !p.t_list.is_empty() && p.t_list.iter().all(|&t| t > 0.0 && t <= 1.0),
                    "t_list",
                    "times must lie in (0, 1]",
                );
                need(p.log_amplitude.is_finite(), "log_amplitude", "must be finite");
            }
            Experiment::Distribution(p) => {
                need(p.a.is_finite(), "a", "must be finite");
                if let Some(c) = &p.probe_cells {
                    need(
                        !c.is_empty() && c.iter().all(|&c| c < self.grid.cells),
                        "probe_cells",
                        "must be non-empty and below grid.cells",
                    );
                }
                need(pos(p.lag), "lag", "must be positive");
                need(p.bins >= 2, "bins", "must be at least 2");
                need(p.horizon >= 4.0 && p.horizon.is_finite(), "horizon", "must be at least 4");
                need(p.n_paths >= 8, "n_paths", "must be at least 8");
                if let Some(b) = p.burn_in {
                    need(b >= 0.0 && b < p.horizon, "burn_in", "must lie in [0, horizon)");
                }
            }
        }
    }

    /// Canonical JSON: sorted keys, every default spelled out, floats in
    /// shortest round-trip form.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    /// First 64 bits of the SHA-256 of [`Self::canonical_json`], as hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Float,
    Int,
    Bool,
    Str,
    Table,
    FloatList,
    IntList,
    TableList,
}

impl Kind {
    fn accepts(self, v: &Value) -> bool {
        let int = |v: &Value| v.as_u64().is_some();
        match self {
            Kind::Float => v.is_number(),
            Kind::Int => int(v),
            Kind::Bool => v.is_boolean(),
            Kind::Str => v.is_string(),
            Kind::Table => v.is_object(),
            Kind::FloatList => v.as_array().is_some_and(|a| a.iter().all(Value::is_number)),
            Kind::IntList => v.as_array().is_some_and(|a| a.iter().all(int)),
            Kind::TableList => v.as_array().is_some_and(|a| a.iter().all(Value::is_object)),
        }
    }

    fn describe(self) -> &'static str {
        match self {
            Kind::Float => "a number",
            Kind::Int => "a non-negative integer",
            Kind::Bool => "a boolean",
            Kind::Str => "a string",
            Kind::Table => "a table",
            Kind::FloatList => "a list of numbers",
            Kind::IntList => "a list of non-negative integers",
            Kind::TableList => "a list of tables",
        }
    }
}

const TOP: &[(&str, Kind)] = &[
    ("seed_root", Kind::Int),
    ("output_dir", Kind::Str),
    ("model", Kind::Table),
    ("grid", Kind::Table),
    ("kick", Kind::Table),
    ("solver", Kind::Table),
    ("experiment", Kind::Table),
];
const MODEL: &[(&str, Kind)] = &[
    ("name", Kind::Str),
    ("diffusivity", Kind::Table),
    ("hamiltonian", Kind::Table),
    ("constants", Kind::Table),
];
const CONSTANTS: &[(&str, Kind)] = &[
    ("kappa0", Kind::Float),
    ("c_kappa", Kind::Float),
    ("lambda", Kind::Float),
    ("c1", Kind::Float),
    ("c2", Kind::Float),
    ("c_h", Kind::Float),
    ("q", Kind::Float),
];
const GRID: &[(&str, Kind)] = &[("length", Kind::Float), ("cells", Kind::Int)];
const KICK: &[(&str, Kind)] = &[("n_modes", Kind::Int), ("sigma_target", Kind::Float), ("cutoff", Kind::Float)];
const SOLVER: &[(&str, Kind)] = &[
    ("cfl_safety", Kind::Float),
    ("max_dt", Kind::Float),
    ("flux_scheme", Kind::Str),
    ("record_every", Kind::Float),
    ("weighted_ells", Kind::FloatList),
];

fn experiment_schema(kind: &str) -> Option<&'static [(&'static str, Kind)]> {
    Some(match kind {
        "validate" => &[("u_min", Kind::Float), ("u_max", Kind::Float), ("n_samples", Kind::Int)],
        "simulate" => &[
            ("a", Kind::Float),
            ("horizon", Kind::Float),
            ("initial", Kind::Table),
            ("kicked", Kind::Bool),
        ],
        "invariant" => &[
            ("a", Kind::Float),
            ("a_list", Kind::FloatList),
            ("horizon", Kind::Float),
            ("n_paths", Kind::Int),
            ("burn_in", Kind::Float),
            ("probe_cell", Kind::Int),
            ("doubling", Kind::Bool),
        ],
        "ordering" => &[("initials", Kind::TableList), ("horizon", Kind::Float), ("burn_in", Kind::Float)],
        "contraction" => &[
            ("initials", Kind::TableList),
            ("horizon", Kind::Float),
            ("kicked", Kind::Bool),
            ("ell", Kind::Float),
        ],
        "colehopf" => &[
            ("lambda", Kind::Float),
            ("c2", Kind::Float),
            ("horizon", Kind::Int),
            ("n_paths", Kind::Int),
            ("potential_horizon", Kind::Float),
            ("doubling", Kind::Bool),
        ],
        "supersolution" => &[
            ("n_samples", Kind::Int),
            ("t_list", Kind::FloatList),
            ("log_amplitude", Kind::Float),
        ],
        "distribution" => &[
            ("a", Kind::Float),
            ("probe_cells", Kind::IntList),
            ("lag", Kind::Float),
            ("bins", Kind::Int),
            ("horizon", Kind::Float),
            ("n_paths", Kind::Int),
            ("burn_in", Kind::Float),
            ("doubling", Kind::Bool),
        ],
        _ => return None,
    })
}

const EXPERIMENT_KINDS: &str =
    "validate, simulate, invariant, ordering, contraction, colehopf, supersolution, distribution";

fn check_table(prefix: &str, table: &Map<String, Value>, schema: &[(&str, Kind)], errors: &mut Vec<String>) {
    for (key, value) in table {
        let path = format!("{prefix}{key}");
        match schema.iter().find(|(k, _)| k == key) {
            None => errors.push(format!("{path}: unknown key")),
            Some((_, kind)) if !kind.accepts(value) => {
                errors.push(format!("{path}: expected {}", kind.describe()))
            }
            Some(_) => {}
        }
    }
}

fn check_nested<T: serde::de::DeserializeOwned>(path: &str, v: Option<&Value>, errors: &mut Vec<String>) {
    if let Some(v) = v.filter(|v| v.is_object()) {
        if let Err(e) = serde_json::from_value::<T>(v.clone()) {
            errors.push(format!("{path}: {e}"));
        }
    }
}

/// Structural check of the raw document, reporting every offending key.
fn check_structure(doc: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    let Some(top) = doc.as_object() else {
        return vec!["<root>: expected a table".into()];
    };
    check_table("", top, TOP, &mut errors);
    let section = |name: &str| top.get(name).and_then(Value::as_object);

    match section("model") {
        Some(m) => {
            check_table("model.", m, MODEL, &mut errors);
            if !m.contains_key("name") {
                errors.push("model.name: missing".into());
            }
            if let Some(c) = m.get("constants").and_then(Value::as_object) {
                check_table("model.constants.", c, CONSTANTS, &mut errors);
            }
            check_nested::<Diffusivity>("model.diffusivity", m.get("diffusivity"), &mut errors);
            check_nested::<Hamiltonian>("model.hamiltonian", m.get("hamiltonian"), &mut errors);
        }
        None if !top.contains_key("model") => errors.push("model: missing".into()),
        None => {}
    }
    if let Some(g) = section("grid") {
        check_table("grid.", g, GRID, &mut errors);
    }
    if let Some(k) = section("kick") {
        check_table("kick.", k, KICK, &mut errors);
    }
    if let Some(s) = section("solver") {
        check_table("solver.", s, SOLVER, &mut errors);
        if let Some(f) = s.get("flux_scheme").filter(|f| f.is_string()) {
            if serde_json::from_value::<stochflux_core::FluxScheme>(f.clone()).is_err() {
                errors.push(format!(
                    "solver.flux_scheme: unknown scheme {f}; expected engquist_osher, lax_friedrichs_local or central"
                ));
            }
        }
    }
    match section("experiment") {
        Some(e) => match e.get("kind").and_then(Value::as_str) {
            Some(kind) => match experiment_schema(kind) {
                Some(schema) => {
                    let rest: Map<String, Value> =
                        e.iter().filter(|(k, _)| *k != "kind").map(|(k, v)| (k.clone(), v.clone())).collect();
                    check_table("experiment.", &rest, schema, &mut errors);
                    if let Some(i) = rest.get("initial") {
                        check_nested::<Initial>("experiment.initial", Some(i), &mut errors);
                    }
                    if let Some(list) = rest.get("initials").and_then(Value::as_array) {
                        for (n, i) in list.iter().enumerate() {
                            check_nested::<Initial>(&format!("experiment.initials[{n}]"), Some(i), &mut errors);
                        }
                    }
                }
                None => errors.push(format!("experiment.kind: unknown kind `{kind}`; expected one of {EXPERIMENT_KINDS}")),
            },
            None => errors.push(format!("experiment.kind: missing; expected one of {EXPERIMENT_KINDS}")),
        },
        None if !top.contains_key("experiment") => errors.push("experiment: missing".into()),
        None => {}
    }
    errors
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_override_value(raw: &str) -> Value {
    toml::from_str::<Map<String, Value>>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut m| m.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(node: &mut Value, keys: &[&str], value: Value) -> bool {
    let Some(obj) = node.as_object_mut() else {
        return false;
    };
    match keys {
        [last] => {
            obj.insert(last.to_string(), value);
            true
        }
        [first, rest @ ..] => {
            let child = obj.entry(first.to_string()).or_insert_with(|| Value::Object(Map::new()));
            set_path(child, rest, value)
        }
        [] => false,
    }
}

/// Applies `key.path=value` overrides (a leading `--` is optional).
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), ConfigError> {
    let mut errors = Vec::new();
    for raw in overrides {
        let body = raw.strip_prefix("--").unwrap_or(raw);
        let Some((path, value)) = body.split_once('=') else {
            errors.push(format!("{raw}: override must look like --key.path=value"));
            continue;
        };
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            errors.push(format!("{raw}: empty key segment"));
            continue;
        }
        if !set_path(doc, &keys, parse_override_value(value)) {
            errors.push(format!("{raw}: `{path}` does not lead into a table"));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(errors))
    }
}

/// Parses a TOML or JSON document (chosen by extension) into a JSON value.
pub fn read_document(path: &Path) -> Result<Value, ConfigError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: shown.clone(),
        reason: e.to_string(),
    })?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str::<Value>(&text).map_err(|e| e.to_string()),
        Some("toml") => toml::from_str::<Value>(&text).map_err(|e| e.to_string()),
        other => Err(format!("unsupported extension {other:?}; use .toml or .json")),
    };
    parsed.map_err(|reason| ConfigError::Parse { path: shown, reason })
}

/// Validates a raw document and builds the typed config.
pub fn from_document(doc: &Value) -> Result<ExperimentConfig, ConfigError> {
    let errors = check_structure(doc);
    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors));
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(doc.clone()).map_err(|e| ConfigError::Invalid(vec![format!("<root>: {e}")]))?;
    cfg.resolve()?;
    Ok(cfg)
}

/// Reads `path`, applies overrides and the seed environment variable.
pub fn load(path: &Path, overrides: &[String], env_seed: Option<&str>) -> Result<ExperimentConfig, ConfigError> {
    let mut doc = read_document(path)?;
    apply_overrides(&mut doc, overrides)?;
    if let Some(s) = env_seed {
        let seed: u64 = s
            .trim()
            .parse()
            .map_err(|_| ConfigError::Invalid(vec![format!("{SEED_ENV}: `{s}` is not a non-negative integer")]))?;
        if let Some(obj) = doc.as_object_mut() {
            obj.insert("seed_root".into(), Value::from(seed));
        }
    }
    from_document(&doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed_root = 3
        [model]
        name = "burgers"
        [grid]
        length = 16
        cells = 256
        [experiment]
        kind = "invariant"
        a = 1
        horizon = 8
    "#;

    fn doc(text: &str) -> Value {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn integer_literals_fill_float_fields() {
        let cfg = from_document(&doc(MINIMAL)).unwrap();
        assert_eq!(cfg.grid.length, 16.0);
        match cfg.experiment {
            Experiment::Invariant(p) => {
                assert_eq!(p.a, 1.0);
                assert_eq!(p.n_paths, 64);
            }
            other => panic!("wrong experiment {other:?}"),
        }
    }

    #[test]
    fn round_trips_through_toml_and_json() {
        let mut cfg = from_document(&doc(MINIMAL)).unwrap();
        cfg.model.constants = Some(ConstantOverrides {
            c2: Some(0.5),
            ..Default::default()
        });
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let back: ExperimentConfig = serde_json::from_str(&cfg.canonical_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn hash_ignores_literal_spelling_and_key_order() {
        let a = from_document(&doc(MINIMAL)).unwrap();
        let reordered = r#"
            [experiment]
            horizon = 8.0
            a = 1.0
            kind = "invariant"
            [grid]
            cells = 256
            length = 16.0
            [model]
            name = "burgers"
            [kick]
            sigma_target = 0.5
        "#;
        let mut d = doc(reordered);
        d.as_object_mut().unwrap().insert("seed_root".into(), Value::from(3u64));
        let b = from_document(&d).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn hash_changes_with_seed() {
        let a = from_document(&doc(MINIMAL)).unwrap();
        let mut b = a.clone();
        b.seed_root += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn overrides_parse_typed_values_and_create_tables() {
        let mut d = doc(MINIMAL);
        apply_overrides(
            &mut d,
            &[
                "--experiment.a=0".into(),
                "--kick.sigma_target=0".into(),
                "--experiment.a_list=[0, 1.5]".into(),
                "model.name=tanh_kappa_subquadratic".into(),
                "--solver.flux_scheme=central".into(),
            ],
        )
        .unwrap();
        let cfg = from_document(&d).unwrap();
        assert_eq!(cfg.kick.sigma_target, 0.0);
        assert_eq!(cfg.model.name, "tanh_kappa_subquadratic");
        assert_eq!(cfg.solver.flux_scheme, stochflux_core::FluxScheme::Central);
        match cfg.experiment {
            Experiment::Invariant(p) => assert_eq!(p.a_list, Some(vec![0.0, 1.5])),
            other => panic!("wrong experiment {other:?}"),
        }
    }

    #[test]
    fn malformed_override_is_rejected() {
        let mut d = doc(MINIMAL);
        let err = apply_overrides(&mut d, &["--grid.cells".into(), "--seed_root.x=1".into()]).unwrap_err();
        match err {
            ConfigError::Invalid(list) => assert_eq!(list.len(), 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn every_offending_key_is_listed() {
        let bad = r#"
            seed_root = -1
            colour = "red"
            [model]
            name = "burgers"
            [model.constants]
            kappa9 = 1.0
            [grid]
            cells = "many"
            [solver]
            flux_scheme = "upwind"
            [experiment]
            kind = "invariant"
            horizon = "long"
            n_pathz = 3
        "#;
        let err = from_document(&doc(bad)).unwrap_err();
        let ConfigError::Invalid(list) = err else {
            panic!("expected a key list");
        };
        for key in [
            "seed_root",
            "colour",
            "model.constants.kappa9",
            "grid.cells",
            "solver.flux_scheme",
            "experiment.horizon",
            "experiment.n_pathz",
        ] {
            assert!(list.iter().any(|l| l.starts_with(&format!("{key}:"))), "{key} missing from {list:?}");
        }
    }

    #[test]
    fn semantic_errors_are_collected() {
        let text = r#"
            [model]
            name = "burgers"
            [grid]
            cells = 4
            [kick]
            sigma_target = -1.0
            [experiment]
            kind = "invariant"
            n_paths = 2
        "#;
        let ConfigError::Invalid(list) = from_document(&doc(text)).unwrap_err() else {
            panic!("expected a key list");
        };
        for key in ["grid", "kick", "experiment.n_paths"] {
            assert!(list.iter().any(|l| l.starts_with(&format!("{key}:"))), "{key} missing from {list:?}");
        }
    }

    #[test]
    fn unknown_model_and_kind_are_reported() {
        let text = r#"
            [model]
            name = "kdv"
            [experiment]
            kind = "fly"
        "#;
        let ConfigError::Invalid(list) = from_document(&doc(text)).unwrap_err() else {
            panic!("expected a key list");
        };
        assert!(list.iter().any(|l| l.starts_with("experiment.kind:")));
        let text = r#"
            [model]
            name = "kdv"
            [experiment]
            kind = "validate"
        "#;
        let ConfigError::Invalid(list) = from_document(&doc(text)).unwrap_err() else {
            panic!("expected a key list");
        };
        assert!(list.iter().any(|l| l.starts_with("model.name:")));
    }

    #[test]
    fn model_overrides_reach_the_spec() {
        let text = r#"
            [model]
            name = "burgers"
            diffusivity = { kind = "affine", intercept = 1.0, slope = 0.5 }
            [model.constants]
            c2 = 0.25
            [experiment]
            kind = "validate"
        "#;
        let cfg = from_document(&doc(text)).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.model.constants.c2, 0.25);
        assert_eq!(r.model.diffusivity, Diffusivity::Affine { intercept: 1.0, slope: 0.5 });
    }
}
