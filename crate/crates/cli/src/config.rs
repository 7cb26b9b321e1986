//! Experiment configuration: parsing, validation and canonical form.
//!
//! A config is a TOML document (JSON is accepted too):
//!
//! ```toml
//! kind = "ising_sample"
//! name = "ising_5x5"
//! seeds = [0, 1, 2]
//!
//! [model]
//! type = "ising"
//! rows = 5
//! cols = 5
//! a = 0.1
//! b = 0.2
//!
//! [[samplers]]
//! kind = "dmala"
//! alpha = 0.4
//!
//! [run]
//! steps = 100000
//! ```
//!
//! Top-level keys: `kind`, `name`, `seeds`, `output_dir`, `model`,
//! `samplers`, `run`, `sweep`. Samplers that need a stepsize take exactly one
//! of `alpha`, `alphas` (a list) or `alpha_grid` (`{min, max, count}`,
//! geometric); a list or grid expands into one run per value. LB-1 without
//! a stepsize drops the distance penalty.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Theorem1Sweep,
    Theorem2Sweep,
    IsingSample,
    PreconditionerDemo,
    RbmSample,
    StochasticProbe,
    StepsizeAblation,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Theorem1Sweep,
        ExperimentKind::Theorem2Sweep,
        ExperimentKind::IsingSample,
        ExperimentKind::PreconditionerDemo,
        ExperimentKind::RbmSample,
        ExperimentKind::StochasticProbe,
        ExperimentKind::StepsizeAblation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Theorem1Sweep => "theorem1_sweep",
            ExperimentKind::Theorem2Sweep => "theorem2_sweep",
            ExperimentKind::IsingSample => "ising_sample",
            ExperimentKind::PreconditionerDemo => "preconditioner_demo",
            ExperimentKind::RbmSample => "rbm_sample",
            ExperimentKind::StochasticProbe => "stochastic_probe",
            ExperimentKind::StepsizeAblation => "stepsize_ablation",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::Theorem1Sweep => {
                "exact DULA bias against the log-quadratic bound over a stepsize grid"
            }
            ExperimentKind::Theorem2Sweep => {
                "exact DULA bias on the perturbed one-spin model as epsilon varies"
            }
            ExperimentKind::IsingSample => "lattice Ising sampling: acceptance, flips, RMSE, ESS",
            ExperimentKind::PreconditionerDemo => {
                "diagonal quadratic with mismatched scales, with and without a preconditioner"
            }
            ExperimentKind::RbmSample => "RBM sampling compared with block Gibbs by MMD and TV",
            ExperimentKind::StochasticProbe => {
                "bias of the stochastic-gradient proposal against its bound as noise varies"
            }
            ExperimentKind::StepsizeAblation => {
                "DMALA acceptance with and without the stepsize term"
            }
        }
    }

    /// File name of the bundled default config.
    pub fn default_config(self) -> &'static str {
        match self {
            ExperimentKind::Theorem1Sweep => "theorem1.toml",
            ExperimentKind::Theorem2Sweep => "theorem2.toml",
            ExperimentKind::IsingSample => "ising.toml",
            ExperimentKind::PreconditionerDemo => "preconditioner.toml",
            ExperimentKind::RbmSample => "rbm.toml",
            ExperimentKind::StochasticProbe => "stochastic.toml",
            ExperimentKind::StepsizeAblation => "ablation.toml",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    Spin,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainName {
    Binary,
    Spin,
    Categorical,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub prototypes: usize,
    pub density: f64,
    pub noise_min: f64,
    pub noise_max: f64,
    pub samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default = "one")]
    pub gibbs_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Ising {
        rows: usize,
        cols: usize,
        a: f64,
        b: f64,
        #[serde(default)]
        periodic: bool,
        #[serde(default)]
        encoding: Encoding,
    },
    #[serde(rename = "perturbed_1d")]
    Perturbed1d {
        a: f64,
        b: f64,
        #[serde(default)]
        epsilon: f64,
    },
    LogQuadratic {
        domain: DomainName,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        levels: Option<usize>,
        w: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<f64>>,
    },
    Rbm {
        visible: usize,
        hidden: usize,
        #[serde(default = "default_weight_scale")]
        weight_scale: f64,
        #[serde(default)]
        model_seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights_file: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train: Option<TrainSpec>,
    },
}

impl ModelSpec {
    pub fn type_name(&self) -> &'static str {
        match self {
            ModelSpec::Ising { .. } => "ising",
            ModelSpec::Perturbed1d { .. } => "perturbed_1d",
            ModelSpec::LogQuadratic { .. } => "log_quadratic",
            ModelSpec::Rbm { .. } => "rbm",
        }
    }

    /// Number of coordinates.
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Ising { rows, cols, .. } => rows * cols,
            ModelSpec::Perturbed1d { .. } => 1,
            ModelSpec::LogQuadratic { domain, levels, w, .. } => match (domain, levels) {
                (DomainName::OneHot, Some(s)) if *s > 0 => w.len() / s,
                _ => w.len(),
            },
            ModelSpec::Rbm { visible, .. } => *visible,
        }
    }

    pub fn is_log_quadratic(&self) -> bool {
        matches!(self, ModelSpec::Ising { .. } | ModelSpec::LogQuadratic { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerName {
    Dula,
    Dmala,
    Gibbs1,
    Lb1,
    Gradflip1,
    RbmBlockGibbs,
}

impl SamplerName {
    pub fn name(self) -> &'static str {
        match self {
            SamplerName::Dula => "dula",
            SamplerName::Dmala => "dmala",
            SamplerName::Gibbs1 => "gibbs1",
            SamplerName::Lb1 => "lb1",
            SamplerName::Gradflip1 => "gradflip1",
            SamplerName::RbmBlockGibbs => "rbm_block_gibbs",
        }
    }

    fn is_dlp(self) -> bool {
        matches!(self, SamplerName::Dula | SamplerName::Dmala)
    }

    fn takes_alpha(self) -> bool {
        matches!(self, SamplerName::Dula | SamplerName::Dmala | SamplerName::Lb1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    /// Penalty scaled by `alpha * g_i^2`.
    Coordinate,
    /// Penalty scaled by `alpha * g_i`.
    Stepsize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreconditionerSpec {
    pub kind: PreconditionerKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Systematic,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AlphaGrid {
    /// Geometric grid from `min` to `max` inclusive.
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let ratio = (self.max / self.min).ln() / (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                if k + 1 == self.count {
                    self.max
                } else {
                    self.min * (ratio * k as f64).exp()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub kind: SamplerName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_grid: Option<AlphaGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preconditioner: Option<PreconditionerSpec>,
    #[serde(default = "yes")]
    pub stepsize_term: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Order>,
}

impl SamplerSpec {
    pub fn new(kind: SamplerName) -> Self {
        Self {
            kind,
            label: None,
            alpha: None,
            alphas: None,
            alpha_grid: None,
            preconditioner: None,
            stepsize_term: true,
            batch_size: None,
            order: None,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    /// Stepsizes this entry expands to. Samplers without a stepsize yield a
    /// single `None`; LB-1 without one uses no distance penalty.
    pub fn alpha_values(&self) -> Vec<Option<f64>> {
        if let Some(a) = self.alpha {
            vec![Some(a)]
        } else if let Some(list) = &self.alphas {
            list.iter().map(|a| Some(*a)).collect()
        } else if let Some(grid) = &self.alpha_grid {
            grid.values().into_iter().map(Some).collect()
        } else {
            vec![None]
        }
    }

    /// The label, or the kind name marked with `-precond`, `-nostep` and
    /// `-sg` for non-default proposals.
    pub fn display_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let mut out = self.kind.name().to_string();
        if self.preconditioner.is_some() {
            out.push_str("-precond");
        }
        if !self.stepsize_term {
            out.push_str("-nostep");
        }
        if self.batch_size.is_some() {
            out.push_str("-sg");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Defaults to 10% of `steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default = "one")]
    pub thin: usize,
    /// Points on the running-estimate curves.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Length of the exact-sampler chain used for the true mean when the
    /// state space is too large to enumerate.
    #[serde(default = "default_reference_steps")]
    pub reference_steps: usize,
    #[serde(default = "default_reference_alpha")]
    pub reference_alpha: f64,
    /// Evenly spaced samples per chain used for MMD.
    #[serde(default = "default_mmd_samples")]
    pub mmd_samples: usize,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            burn_in: None,
            thin: 1,
            checkpoints: default_checkpoints(),
            reference_steps: default_reference_steps(),
            reference_alpha: default_reference_alpha(),
            mmd_samples: default_mmd_samples(),
            permutations: default_permutations(),
        }
    }
}

impl RunSpec {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.steps / 10)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub model: ModelSpec,
    pub samplers: Vec<SamplerSpec>,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    /// Experiment id used in output rows.
    pub fn id(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn sweep(&self) -> SweepSpec {
        self.sweep.clone().unwrap_or_default()
    }

    /// Canonical TOML text: every default filled in, fixed key order.
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical form without `output_dir`, which does not
    /// affect results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let digest = Sha256::digest(c.to_canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_weight_scale() -> f64 {
    0.1
}

fn default_steps() -> usize {
    10_000
}

fn default_checkpoints() -> usize {
    20
}

fn default_reference_steps() -> usize {
    1_000_000
}

fn default_reference_alpha() -> f64 {
    0.4
}

fn default_mmd_samples() -> usize {
    500
}

fn default_permutations() -> usize {
    200
}

/// One problem found in a config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// Dotted field path, empty for document-level problems.
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigIssue {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.path.is_empty()) {
            (Some(l), true) => write!(f, "line {l}: {}", self.message),
            (Some(l), false) => write!(f, "line {l}: {}: {}", self.path, self.message),
            (None, true) => f.write_str(&self.message),
            (None, false) => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    /// JSON if the text opens with `{`, TOML otherwise.
    pub fn sniff(text: &str) -> Self {
        if text.trim_start().starts_with('{') {
            Format::Json
        } else {
            Format::Toml
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Non-finite floats become strings so they fail type checks by name
/// instead of turning into `null`.
fn toml_to_json(v: toml::Value) -> Value {
    match v {
        toml::Value::String(s) => Value::String(s),
        toml::Value::Integer(i) => Value::from(i),
        toml::Value::Float(f) => serde_json::Number::from_f64(f)
            .map(Value::Number)
            .unwrap_or_else(|| Value::String(f.to_string())),
        toml::Value::Boolean(b) => Value::Bool(b),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
        toml::Value::Array(a) => Value::Array(a.into_iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => Value::Object(t.into_iter().map(|(k, v)| (k, toml_to_json(v))).collect()),
    }
}

/// Parse the document into a generic tree, reporting syntax errors with
/// line numbers.
pub fn parse_document(text: &str, format: Format) -> Result<Map<String, Value>, Vec<ConfigIssue>> {
    let value = match format {
        Format::Toml => match text.parse::<toml::Table>() {
            Ok(t) => toml_to_json(toml::Value::Table(t)),
            Err(e) => {
                let line = e.span().map(|s| line_of(text, s.start));
                return Err(vec![ConfigIssue {
                    path: String::new(),
                    line,
                    message: e.message().to_string(),
                }]);
            }
        },
        Format::Json => serde_json::from_str::<Value>(text).map_err(|e| {
            vec![ConfigIssue {
                path: String::new(),
                line: Some(e.line()),
                message: e.to_string(),
            }]
        })?,
    };
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(vec![ConfigIssue::at("", "the document must be a table")]),
    }
}

const TOP_LEVEL: [&str; 8] = [
    "kind", "name", "seeds", "output_dir", "model", "samplers", "run", "sweep",
];

fn field<T: DeserializeOwned>(
    map: &Map<String, Value>,
    key: &str,
    required: bool,
    issues: &mut Vec<ConfigIssue>,
) -> Option<T> {
    match map.get(key) {
        None if required => {
            issues.push(ConfigIssue::at(key, "missing required field"));
            None
        }
        None => None,
        Some(v) => match serde_json::from_value(v.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                issues.push(ConfigIssue::at(key, e.to_string()));
                None
            }
        },
    }
}

/// Parse and fully validate a config, reporting every problem found.
pub fn validate_config(text: &str) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
    validate_config_as(text, Format::sniff(text))
}

pub fn validate_config_as(text: &str, format: Format) -> Result<ExperimentConfig, Vec<ConfigIssue>> {
    let map = parse_document(text, format)?;
    let mut issues = Vec::new();
    for key in map.keys() {
        if !TOP_LEVEL.contains(&key.as_str()) {
            issues.push(ConfigIssue::at(
                key.clone(),
                format!("unknown field, expected one of {}", TOP_LEVEL.join(", ")),
            ));
        }
    }
    let kind: Option<ExperimentKind> = field(&map, "kind", true, &mut issues);
    let name: Option<String> = field(&map, "name", false, &mut issues);
    let seeds: Option<Vec<u64>> = field(&map, "seeds", true, &mut issues);
    let output_dir: Option<String> = field(&map, "output_dir", false, &mut issues);
    let model: Option<ModelSpec> = field(&map, "model", true, &mut issues);
    let run: Option<RunSpec> = field(&map, "run", false, &mut issues);
    let sweep: Option<SweepSpec> = field(&map, "sweep", false, &mut issues);
    let samplers = match map.get("samplers") {
        None => {
            issues.push(ConfigIssue::at("samplers", "missing required field"));
            None
        }
        Some(Value::Array(items)) => {
            let mut out = Vec::new();
            for (i, item) in items.iter().enumerate() {
                match serde_json::from_value::<SamplerSpec>(item.clone()) {
                    Ok(s) => out.push(s),
                    Err(e) => issues.push(ConfigIssue::at(format!("samplers[{i}]"), e.to_string())),
                }
            }
            Some(out)
        }
        Some(_) => {
            issues.push(ConfigIssue::at("samplers", "expected an array of tables"));
            None
        }
    };
    match (kind, seeds, model, samplers) {
        (Some(kind), Some(seeds), Some(model), Some(samplers)) if issues.is_empty() => {
            let cfg = ExperimentConfig {
                kind,
                name,
                seeds,
                output_dir,
                model,
                samplers,
                run: run.unwrap_or_default(),
                sweep,
            };
            let semantic = check(&cfg);
            if semantic.is_empty() {
                Ok(cfg)
            } else {
                Err(semantic)
            }
        }
        (kind, seeds, model, samplers) => {
            // Report semantic problems of the parts that did parse as well.
            if let (Some(kind), Some(seeds), Some(model)) = (kind, seeds, model) {
                let cfg = ExperimentConfig {
                    kind,
                    name,
                    seeds,
                    output_dir,
                    model,
                    samplers: samplers.unwrap_or_default(),
                    run: run.unwrap_or_default(),
                    sweep,
                };
                issues.extend(check(&cfg).into_iter().filter(|i| i.path != "samplers"));
            }
            Err(issues)
        }
    }
}

fn positive(path: &str, what: &str, v: f64, issues: &mut Vec<ConfigIssue>) {
    if !(v > 0.0 && v.is_finite()) {
        issues.push(ConfigIssue::at(path, format!("{what} must be positive, got {v}")));
    }
}

fn finite(path: &str, v: f64, issues: &mut Vec<ConfigIssue>) {
    if !v.is_finite() {
        issues.push(ConfigIssue::at(path, format!("must be finite, got {v}")));
    }
}

/// Semantic checks on a structurally valid config.
/// Largest seed a TOML integer can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

pub fn check(cfg: &ExperimentConfig) -> Vec<ConfigIssue> {
    let mut issues = Vec::new();
    if cfg.seeds.is_empty() {
        issues.push(ConfigIssue::at("seeds", "at least one seed is required"));
    }
    for (i, seed) in cfg.seeds.iter().enumerate() {
        if *seed > MAX_SEED {
            issues.push(ConfigIssue::at(format!("seeds[{i}]"), format!("seed must be at most {MAX_SEED}")));
        }
    }
    if let Some(name) = &cfg.name {
        if name.is_empty() || name.contains(|c: char| c == ',' || c == '/' || c.is_control()) {
            issues.push(ConfigIssue::at("name", "must be non-empty without commas or slashes"));
        }
    }
    check_model(&cfg.model, &mut issues);
    check_run(&cfg.run, &mut issues);
    if cfg.samplers.is_empty() {
        issues.push(ConfigIssue::at("samplers", "sampler list is empty"));
    }
    let dim = cfg.model.dim();
    for (i, s) in cfg.samplers.iter().enumerate() {
        check_sampler(&format!("samplers[{i}]"), s, cfg, dim, &mut issues);
    }
    check_kind(cfg, &mut issues);
    issues
}

fn check_model(model: &ModelSpec, issues: &mut Vec<ConfigIssue>) {
    match model {
        ModelSpec::Ising { rows, cols, a, b, .. } => {
            if *rows == 0 || *cols == 0 {
                issues.push(ConfigIssue::at("model", "lattice rows and cols must be at least 1"));
            }
            finite("model.a", *a, issues);
            finite("model.b", *b, issues);
        }
        ModelSpec::Perturbed1d { a, b, epsilon } => {
            finite("model.a", *a, issues);
            finite("model.b", *b, issues);
            finite("model.epsilon", *epsilon, issues);
        }
        ModelSpec::LogQuadratic { domain, levels, w, b } => {
            let n = w.len();
            if n == 0 {
                issues.push(ConfigIssue::at("model.w", "matrix is empty"));
            }
            if let Some(row) = w.iter().position(|r| r.len() != n) {
                issues.push(ConfigIssue::at(format!("model.w[{row}]"), format!("row must have {n} entries")));
            }
            if w.iter().flatten().any(|v| !v.is_finite()) {
                issues.push(ConfigIssue::at("model.w", "entries must be finite"));
            }
            if let Some(b) = b {
                if b.len() != n {
                    issues.push(ConfigIssue::at("model.b", format!("must have {n} entries, got {}", b.len())));
                }
            }
            match (domain, levels) {
                (DomainName::Categorical | DomainName::OneHot, None) => {
                    issues.push(ConfigIssue::at("model.levels", "required for categorical domains"));
                }
                (DomainName::Categorical | DomainName::OneHot, Some(s)) if *s < 2 => {
                    issues.push(ConfigIssue::at("model.levels", "must be at least 2"));
                }
                (DomainName::OneHot, Some(s)) if n % s != 0 => {
                    issues.push(ConfigIssue::at("model.w", format!("size {n} is not a multiple of {s} levels")));
                }
                (DomainName::Binary | DomainName::Spin, Some(_)) => {
                    issues.push(ConfigIssue::at("model.levels", "only used by categorical domains"));
                }
                _ => {}
            }
        }
        ModelSpec::Rbm {
            visible,
            hidden,
            weight_scale,
            weights_file,
            train,
            model_seed,
            ..
        } => {
            if *model_seed > MAX_SEED {
                issues.push(ConfigIssue::at("model.model_seed", format!("seed must be at most {MAX_SEED}")));
            }
            if *visible == 0 || *hidden == 0 {
                issues.push(ConfigIssue::at("model", "visible and hidden must be at least 1"));
            }
            if !(*weight_scale >= 0.0 && weight_scale.is_finite()) {
                issues.push(ConfigIssue::at("model.weight_scale", "must be finite and non-negative"));
            }
            if weights_file.is_some() && train.is_some() {
                issues.push(ConfigIssue::at("model", "give either weights_file or train, not both"));
            }
            if let Some(t) = train {
                for (k, v) in [("density", t.density), ("noise_min", t.noise_min), ("noise_max", t.noise_max)] {
                    if !(0.0..=1.0).contains(&v) {
                        issues.push(ConfigIssue::at(format!("model.train.{k}"), "must lie in [0, 1]"));
                    }
                }
                if t.noise_min > t.noise_max {
                    issues.push(ConfigIssue::at("model.train", "noise_min exceeds noise_max"));
                }
                for (k, v) in [
                    ("prototypes", t.prototypes),
                    ("samples", t.samples),
                    ("epochs", t.epochs),
                    ("batch_size", t.batch_size),
                    ("gibbs_steps", t.gibbs_steps),
                ] {
                    if v == 0 {
                        issues.push(ConfigIssue::at(format!("model.train.{k}"), "must be positive"));
                    }
                }
                positive("model.train.learning_rate", "learning rate", t.learning_rate, issues);
            }
        }
    }
}

fn check_run(run: &RunSpec, issues: &mut Vec<ConfigIssue>) {
    for (k, v) in [
        ("steps", run.steps),
        ("thin", run.thin),
        ("checkpoints", run.checkpoints),
        ("reference_steps", run.reference_steps),
        ("mmd_samples", run.mmd_samples),
        ("permutations", run.permutations),
    ] {
        if v == 0 {
            issues.push(ConfigIssue::at(format!("run.{k}"), "must be positive"));
        }
    }
    if run.burn_in() >= run.steps {
        issues.push(ConfigIssue::at(
            "run.burn_in",
            format!("must be below the {} steps", run.steps),
        ));
    }
    positive("run.reference_alpha", "stepsize", run.reference_alpha, issues);
}

fn check_sampler(path: &str, s: &SamplerSpec, cfg: &ExperimentConfig, dim: usize, issues: &mut Vec<ConfigIssue>) {
    let given = [s.alpha.is_some(), s.alphas.is_some(), s.alpha_grid.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if given > 1 {
        issues.push(ConfigIssue::at(path, "give only one of alpha, alphas, alpha_grid"));
    }
    if s.kind.takes_alpha() {
        if given == 0 && s.kind.is_dlp() {
            issues.push(ConfigIssue::at(path, "needs a stepsize: alpha, alphas or alpha_grid"));
        }
        let check_alpha = |p: String, a: f64, issues: &mut Vec<ConfigIssue>| {
            if !(a > 0.0 && a.is_finite()) {
                issues.push(ConfigIssue::at(p, format!("stepsize must be positive, got {a}")));
            }
        };
        if let Some(a) = s.alpha {
            check_alpha(format!("{path}.alpha"), a, issues);
        }
        if let Some(list) = &s.alphas {
            if list.is_empty() {
                issues.push(ConfigIssue::at(format!("{path}.alphas"), "list is empty"));
            }
            for (k, a) in list.iter().enumerate() {
                check_alpha(format!("{path}.alphas[{k}]"), *a, issues);
            }
        }
        if let Some(g) = &s.alpha_grid {
            check_alpha(format!("{path}.alpha_grid.min"), g.min, issues);
            check_alpha(format!("{path}.alpha_grid.max"), g.max, issues);
            if g.count == 0 {
                issues.push(ConfigIssue::at(format!("{path}.alpha_grid.count"), "must be positive"));
            }
            if g.max < g.min {
                issues.push(ConfigIssue::at(format!("{path}.alpha_grid"), "max is below min"));
            }
        }
    } else if given > 0 {
        issues.push(ConfigIssue::at(path, format!("{} takes no stepsize", s.kind.name())));
    }
    if !s.kind.is_dlp() {
        if s.preconditioner.is_some() || !s.stepsize_term {
            issues.push(ConfigIssue::at(
                path,
                "preconditioner and stepsize_term apply to dula and dmala only",
            ));
        }
    }
    if let Some(p) = &s.preconditioner {
        if p.values.len() != dim {
            issues.push(ConfigIssue::at(
                format!("{path}.preconditioner.values"),
                format!("must have {dim} entries, got {}", p.values.len()),
            ));
        }
        if let Some(v) = p.values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            issues.push(ConfigIssue::at(
                format!("{path}.preconditioner.values"),
                format!("entries must be positive, got {v}"),
            ));
        }
    }
    if let Some(b) = s.batch_size {
        if s.kind != SamplerName::Dula {
            issues.push(ConfigIssue::at(
                format!("{path}.batch_size"),
                "stochastic gradients are supported by dula only",
            ));
        }
        if b == 0 {
            issues.push(ConfigIssue::at(format!("{path}.batch_size"), "must be positive"));
        }
    }
    if s.order.is_some() && s.kind != SamplerName::Gibbs1 {
        issues.push(ConfigIssue::at(format!("{path}.order"), "only gibbs1 takes a coordinate order"));
    }
    if s.kind == SamplerName::RbmBlockGibbs && !matches!(cfg.model, ModelSpec::Rbm { .. }) {
        issues.push(ConfigIssue::at(path, "rbm_block_gibbs needs an rbm model"));
    }
    if let Some(l) = &s.label {
        if l.is_empty() || l.contains(|c: char| c == ',' || c == '/' || c.is_control()) {
            issues.push(ConfigIssue::at(format!("{path}.label"), "must be non-empty without commas or slashes"));
        }
    }
}

fn check_kind(cfg: &ExperimentConfig, issues: &mut Vec<ConfigIssue>) {
    let sweep = cfg.sweep();
    let only = |names: &[SamplerName], issues: &mut Vec<ConfigIssue>| {
        for (i, s) in cfg.samplers.iter().enumerate() {
            if !names.contains(&s.kind) {
                let allowed: Vec<&str> = names.iter().map(|n| n.name()).collect();
                issues.push(ConfigIssue::at(
                    format!("samplers[{i}].kind"),
                    format!("{} experiments use {}", cfg.kind, allowed.join(" or ")),
                ));
            }
        }
    };
    let exact_dula = |issues: &mut Vec<ConfigIssue>| {
        for (i, s) in cfg.samplers.iter().enumerate() {
            if s.batch_size.is_some() {
                issues.push(ConfigIssue::at(
                    format!("samplers[{i}].batch_size"),
                    "exact sweeps use full-batch gradients",
                ));
            }
        }
    };
    match cfg.kind {
        ExperimentKind::Theorem1Sweep => {
            if !cfg.model.is_log_quadratic() {
                issues.push(ConfigIssue::at("model.type", "theorem1_sweep needs ising or log_quadratic"));
            }
            only(&[SamplerName::Dula], issues);
            exact_dula(issues);
        }
        ExperimentKind::Theorem2Sweep => {
            if !matches!(cfg.model, ModelSpec::Perturbed1d { .. }) {
                issues.push(ConfigIssue::at("model.type", "theorem2_sweep needs perturbed_1d"));
            }
            only(&[SamplerName::Dula], issues);
            exact_dula(issues);
            match &sweep.epsilons {
                None => issues.push(ConfigIssue::at("sweep.epsilons", "required for theorem2_sweep")),
                Some(e) if e.is_empty() => issues.push(ConfigIssue::at("sweep.epsilons", "list is empty")),
                Some(e) => {
                    for (k, v) in e.iter().enumerate() {
                        finite(&format!("sweep.epsilons[{k}]"), *v, issues);
                    }
                }
            }
        }
        ExperimentKind::RbmSample => {
            if !matches!(cfg.model, ModelSpec::Rbm { .. }) {
                issues.push(ConfigIssue::at("model.type", "rbm_sample needs an rbm model"));
            }
        }
        ExperimentKind::StochasticProbe => {
            only(&[SamplerName::Dula], issues);
            match &sweep.noise {
                None => issues.push(ConfigIssue::at("sweep.noise", "required for stochastic_probe")),
                Some(n) if n.is_empty() => issues.push(ConfigIssue::at("sweep.noise", "list is empty")),
                Some(n) => {
                    for (k, v) in n.iter().enumerate() {
                        if !(*v >= 0.0 && v.is_finite()) {
                            issues.push(ConfigIssue::at(
                                format!("sweep.noise[{k}]"),
                                format!("noise must be finite and non-negative, got {v}"),
                            ));
                        }
                    }
                }
            }
            if sweep.draws == Some(0) {
                issues.push(ConfigIssue::at("sweep.draws", "must be positive"));
            }
            if !matches!(
                cfg.model,
                ModelSpec::Ising {
                    encoding: Encoding::Binary,
                    ..
                } | ModelSpec::LogQuadratic {
                    domain: DomainName::Binary,
                    ..
                } | ModelSpec::Rbm { .. }
            ) {
                issues.push(ConfigIssue::at(
                    "model.type",
                    "stochastic_probe needs a binary model: binary ising, binary log_quadratic or rbm",
                ));
            }
        }
        ExperimentKind::StepsizeAblation => {
            only(&[SamplerName::Dula, SamplerName::Dmala], issues);
        }
        ExperimentKind::IsingSample | ExperimentKind::PreconditionerDemo => {}
    }
    if cfg.kind != ExperimentKind::Theorem2Sweep && sweep.epsilons.is_some() {
        issues.push(ConfigIssue::at("sweep.epsilons", format!("not used by {}", cfg.kind)));
    }
    if cfg.kind != ExperimentKind::StochasticProbe && (sweep.noise.is_some() || sweep.draws.is_some()) {
        issues.push(ConfigIssue::at("sweep", format!("noise and draws are not used by {}", cfg.kind)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "theorem1_sweep"
seeds = [0]

[model]
type = "ising"
rows = 2
cols = 2
a = 0.1
b = 0.2

[[samplers]]
kind = "dula"
alpha_grid = { min = 0.05, max = 1.0, count = 12 }
"#;

    #[test]
    fn minimal_config_round_trips() {
        let cfg = validate_config(MINIMAL).unwrap();
        let text = cfg.to_canonical();
        let again = validate_config(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, again.to_canonical());
    }

    #[test]
    fn json_input_matches_toml() {
        let cfg = validate_config(MINIMAL).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(validate_config(&json).unwrap(), cfg);
    }

    #[test]
    fn negative_stepsize_is_reported() {
        let text = MINIMAL.replace("alpha_grid = { min = 0.05, max = 1.0, count = 12 }", "alpha = -0.1");
        let err = validate_config(&text).unwrap_err();
        assert!(err.iter().any(|e| e.to_string().contains("stepsize must be positive")), "{err:?}");
        assert!(err.iter().any(|e| e.path == "samplers[0].alpha"));
    }

    #[test]
    fn unknown_sampler_lists_valid_kinds() {
        let text = MINIMAL.replace("kind = \"dula\"", "kind = \"hmc\"");
        let err = validate_config(&text).unwrap_err();
        let msg = err[0].to_string();
        assert!(msg.contains("samplers[0]"));
        for k in ["dula", "dmala", "gibbs1", "lb1", "gradflip1", "rbm_block_gibbs"] {
            assert!(msg.contains(k), "{msg}");
        }
    }

    #[test]
    fn empty_sampler_list_is_an_error() {
        let text = MINIMAL.split("[[samplers]]").next().unwrap();
        let text = text.replace("seeds = [0]", "seeds = [0]\nsamplers = []");
        let err = validate_config(&text).unwrap_err();
        assert!(err.iter().any(|e| e.message.contains("sampler list is empty")), "{err:?}");
    }

    #[test]
    fn all_errors_reported_at_once() {
        let text = r#"
kind = "ising_sample"
seeds = []
colour = "blue"

[model]
type = "ising"
rows = 0
cols = 3
a = 0.1
b = 0.2

[[samplers]]
kind = "dmala"
alpha = 0.0

[[samplers]]
kind = "gibbs1"
alpha = 0.3

[run]
steps = 100
burn_in = 200
"#;
        let err = validate_config(text).unwrap_err();
        let paths: Vec<&str> = err.iter().map(|e| e.path.as_str()).collect();
        assert!(paths.contains(&"colour"), "{paths:?}");
        let text = text.replace("colour = \"blue\"\n", "");
        let err = validate_config(&text).unwrap_err();
        let paths: Vec<&str> = err.iter().map(|e| e.path.as_str()).collect();
        for p in ["seeds", "model", "samplers[0].alpha", "samplers[1]", "run.burn_in"] {
            assert!(paths.contains(&p), "missing {p} in {paths:?}");
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = validate_config("kind = \"ising_sample\"\nseeds = [0\n").unwrap_err();
        assert_eq!(err.len(), 1);
        assert!(err[0].line.is_some());
        let err = validate_config("{\n\"kind\": }").unwrap_err();
        assert_eq!(err[0].line, Some(2));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let cfg = validate_config(MINIMAL).unwrap();
        let mut moved = cfg.clone();
        moved.output_dir = Some("elsewhere".into());
        assert_eq!(cfg.hash(), moved.hash());
        let mut changed = cfg.clone();
        changed.seeds = vec![1];
        assert_ne!(cfg.hash(), changed.hash());
        let mut changed = cfg.clone();
        changed.run.steps += 1;
        assert_ne!(cfg.hash(), changed.hash());
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = AlphaGrid { min: 0.05, max: 1.0, count: 12 };
        let v = g.values();
        assert_eq!(v.len(), 12);
        assert_eq!(v[0], 0.05);
        assert_eq!(v[11], 1.0);
        assert!(v.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn lb1_without_stepsize_has_no_penalty() {
        let text = r#"
kind = "ising_sample"
seeds = [1]
[model]
type = "ising"
rows = 2
cols = 2
a = 0.1
b = 0.2
[[samplers]]
kind = "lb1"
"#;
        let cfg = validate_config(text).unwrap();
        assert_eq!(cfg.samplers[0].alpha_values(), vec![None]);
        let err = validate_config(&format!("{text}alpha = inf\n")).unwrap_err();
        assert!(err[0].path.starts_with("samplers[0]"), "{err:?}");
        assert!(err[0].message.contains("inf"), "{err:?}");
    }
}
