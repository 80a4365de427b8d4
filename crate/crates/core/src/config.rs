//! Experiment configuration.
//!
//! A config is one JSON document. Top-level keys may be dotted paths
//! (`"policy.keep_alive_s": 60`), which are expanded into nested objects
//! before parsing. Environment variables named `SIM_<SECTION>__<KEY>` override
//! individual fields, e.g. `SIM_POLICY__KEEP_ALIVE_S=60`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::bundled::Bundled;
use crate::cluster::{DelayComponent, DelayModel};
use crate::dist::DelayDist;
use crate::engine::SimSettings;
use crate::expedited::ExpeditedConfig;
use crate::metrics::{CostModel, DEFAULT_CDF_QUANTILES};
use crate::policy::{PolicyConfig, PolicyKind};
use crate::time::{SimDuration, SimTime};
use crate::workload::{load_trace, Generated, SyntheticWorkloadSpec, DEFAULT_IAT_MIN_SAMPLES, DEFAULT_IAT_WINDOW};

pub const ENV_PREFIX: &str = "SIM_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("workload: {0}")]
    Workload(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadConfig {
    Bundled { name: Bundled },
    Trace { trace: PathBuf, manifest: PathBuf },
    Synthetic { spec: SyntheticWorkloadSpec },
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig::Bundled { name: Bundled::Bursty }
    }
}

impl WorkloadConfig {
    pub fn load(&self) -> Result<Generated, ConfigError> {
        let w = |e: crate::workload::WorkloadError| ConfigError::Workload(e.to_string());
        match self {
            WorkloadConfig::Bundled { name } => name.load().map_err(w),
            WorkloadConfig::Trace { trace, manifest } => {
                let workload = load_trace(trace, manifest).map_err(w)?;
                let classes = vec![0; workload.functions.len()];
                Ok(Generated { workload, classes, warnings: Vec::new() })
            }
            WorkloadConfig::Synthetic { spec } => crate::workload::generate_synthetic(spec).map_err(w),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let WorkloadConfig::Trace { trace, manifest } = self {
            for p in [trace, manifest] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    /// Four constant components summing to 1.25 s.
    Breakdown,
    /// One lognormal component truncated to 1-3 s.
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModelConfig {
    #[serde(default = "breakdown")]
    pub mode: DelayMode,
    /// Replaces the mode's regular components.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regular: Option<Vec<DelayComponent>>,
    /// Shorthand for a single constant regular creation delay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regular_ms: Option<f64>,
    #[serde(default = "zero_delay")]
    pub routing_ms: DelayDist,
}

fn breakdown() -> DelayMode {
    DelayMode::Breakdown
}
fn zero_delay() -> DelayDist {
    DelayDist::constant_ms(0.0)
}

impl Default for DelayModelConfig {
    fn default() -> Self {
        DelayModelConfig { mode: DelayMode::Breakdown, regular: None, regular_ms: None, routing_ms: zero_delay() }
    }
}

impl DelayModelConfig {
    pub fn build(&self, emergency: &DelayDist) -> DelayModel {
        let mut m = match self.mode {
            DelayMode::Breakdown => DelayModel::breakdown(),
            DelayMode::Aggregate => DelayModel::aggregate(),
        };
        if let Some(r) = &self.regular {
            m.regular = r.clone();
        }
        if let Some(ms) = self.regular_ms {
            m = m.with_constant_regular(ms);
        }
        m.emergency = emergency.clone();
        m.routing = self.routing_ms.clone();
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    #[serde(default = "d_nodes")]
    pub node_count: usize,
    #[serde(default = "d_cpu")]
    pub cpu_millicores: u32,
    #[serde(default = "d_mem")]
    pub memory_mb: u64,
    /// Per-instance queue slots beyond the concurrency limit.
    #[serde(default)]
    pub queue_cap: u32,
    #[serde(default)]
    pub delay_model: DelayModelConfig,
}

fn d_nodes() -> usize {
    8
}
fn d_cpu() -> u32 {
    16_000
}
fn d_mem() -> u64 {
    65_536
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            node_count: d_nodes(),
            cpu_millicores: d_cpu(),
            memory_mb: d_mem(),
            queue_cap: 0,
            delay_model: DelayModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    #[serde(default = "d_iat_window")]
    pub window: usize,
    #[serde(default = "d_iat_min")]
    pub min_samples: usize,
}

fn d_iat_window() -> usize {
    DEFAULT_IAT_WINDOW
}
fn d_iat_min() -> usize {
    DEFAULT_IAT_MIN_SAMPLES
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { window: DEFAULT_IAT_WINDOW, min_samples: DEFAULT_IAT_MIN_SAMPLES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "d_sample")]
    pub sample_period_s: f64,
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default = "d_quantiles")]
    pub cdf_quantiles: Vec<f64>,
}

fn d_sample() -> f64 {
    1.0
}
fn d_quantiles() -> Vec<f64> {
    DEFAULT_CDF_QUANTILES.to_vec()
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { sample_period_s: 1.0, cost_model: CostModel::default(), cdf_quantiles: d_quantiles() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_horizon")]
    pub horizon_s: f64,
    #[serde(default = "d_warmup")]
    pub warmup_s: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_horizon() -> f64 {
    3600.0
}
fn d_warmup() -> f64 {
    1200.0
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { horizon_s: d_horizon(), warmup_s: d_warmup(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "d_out")]
    pub dir: PathBuf,
    /// Also write `event_log.csv`.
    #[serde(default)]
    pub event_log: bool,
    /// Also write `invocations.csv`.
    #[serde(default)]
    pub invocations: bool,
}

fn d_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: d_out(), event_log: false, invocations: false }
    }
}

fn d_policy() -> PolicyConfig {
    PolicyConfig::new(PolicyKind::DualTrack)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default = "d_policy")]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub expedited: ExpeditedConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            workload: WorkloadConfig::default(),
            cluster: ClusterConfig::default(),
            policy: d_policy(),
            expedited: ExpeditedConfig::default(),
            tracker: TrackerConfig::default(),
            metrics: MetricsConfig::default(),
            run: RunConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Splits dotted object keys into nested objects, recursively.
pub fn expand_dotted(value: Value) -> Result<Value, ConfigError> {
    let Value::Object(map) = value else { return Ok(value) };
    let mut out = Value::Object(Map::new());
    for (k, v) in map {
        let v = expand_dotted(v)?;
        if k.contains('.') {
            set_path(&mut out, &k, v)?;
        } else {
            merge_into(&mut out, &k, v)?;
        }
    }
    Ok(out)
}

fn merge_into(target: &mut Value, key: &str, v: Value) -> Result<(), ConfigError> {
    let obj = target.as_object_mut().expect("object target");
    match (obj.get_mut(key), v) {
        (Some(Value::Object(existing)), Value::Object(new)) => {
            let mut existing = Value::Object(std::mem::take(existing));
            for (k, v) in new {
                merge_into(&mut existing, &k, v)?;
            }
            obj.insert(key.to_string(), existing);
        }
        (Some(_), _) => return Err(ConfigError::Parse(format!("key `{key}` given twice"))),
        (None, v) => {
            obj.insert(key.to_string(), v);
        }
    }
    Ok(())
}

/// Sets `path` (dot-separated) inside `root`, creating objects as needed and
/// replacing any existing value.
pub fn set_path(root: &mut Value, path: &str, v: Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Parse(format!("malformed key path `{path}`")));
    }
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            return Err(ConfigError::Parse(format!("`{path}`: `{p}` is inside a non-object value")));
        }
        cur = cur.as_object_mut().unwrap().entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let Some(obj) = cur.as_object_mut() else {
        return Err(ConfigError::Parse(format!("`{path}` is inside a non-object value")));
    };
    obj.insert(parts[parts.len() - 1].to_string(), v);
    Ok(())
}

/// Applies `SIM_SECTION__KEY=value` overrides. Values are read as JSON when
/// they parse, and as plain strings otherwise.
pub fn apply_env_overrides<I, K, V>(root: &mut Value, vars: I) -> Result<Vec<String>, ConfigError>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut applied = Vec::new();
    let mut vars: Vec<(String, String)> =
        vars.into_iter().map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string())).collect();
    vars.sort();
    for (k, v) in vars {
        let Some(rest) = k.strip_prefix(ENV_PREFIX) else { continue };
        let path = rest.to_ascii_lowercase().replace("__", ".");
        let value = serde_json::from_str(&v).unwrap_or(Value::String(v));
        set_path(root, &path, value)?;
        applied.push(path);
    }
    Ok(applied)
}

impl ExperimentConfig {
    /// Parses a config value (after dotted-key expansion) and validates it.
    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        let value = expand_dotted(value)?;
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_value(serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?)
    }

    /// Reads a config file, applies environment overrides and resolves
    /// relative trace paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let value = read_json(path)?;
        let mut value = expand_dotted(value)?;
        apply_env_overrides(&mut value, std::env::vars())?;
        let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.workload.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let r = &self.run;
        if !(r.warmup_s.is_finite() && r.warmup_s >= 0.0) {
            return bad(format!("run.warmup_s must be >= 0, got {}", r.warmup_s));
        }
        if !(r.horizon_s.is_finite() && r.horizon_s > r.warmup_s) {
            return bad(format!("run.horizon_s ({}) must exceed run.warmup_s ({})", r.horizon_s, r.warmup_s));
        }
        let c = &self.cluster;
        if c.node_count == 0 {
            return bad("cluster.node_count must be >= 1".into());
        }
        if c.memory_mb == 0 || c.cpu_millicores == 0 {
            return bad("cluster.memory_mb and cluster.cpu_millicores must be > 0".into());
        }
        if let Some(ms) = c.delay_model.regular_ms {
            if !(ms.is_finite() && ms >= 0.0) {
                return bad(format!("cluster.delay_model.regular_ms must be >= 0, got {ms}"));
            }
        }
        c.delay_model.build(&self.expedited.delay_ms).validate().map_err(|e| ConfigError::Invalid(format!("cluster.delay_model: {e}")))?;
        self.policy.validate().map_err(ConfigError::Invalid)?;
        self.expedited.validate(c.node_count).map_err(ConfigError::Invalid)?;
        if self.tracker.window == 0 || self.tracker.min_samples == 0 {
            return bad("tracker.window and tracker.min_samples must be >= 1".into());
        }
        let m = &self.metrics;
        if !(m.sample_period_s.is_finite() && m.sample_period_s > 0.0) || SimDuration::from_secs_f64(m.sample_period_s).0 == 0 {
            return bad(format!("metrics.sample_period_s must be > 0, got {}", m.sample_period_s));
        }
        if m.cdf_quantiles.is_empty() || m.cdf_quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return bad("metrics.cdf_quantiles must be a non-empty list of values in [0, 1]".into());
        }
        if m.cdf_quantiles.windows(2).any(|w| w[0] > w[1]) {
            return bad("metrics.cdf_quantiles must be ascending".into());
        }
        let cm = &m.cost_model;
        for (k, v) in [
            ("regular_creation_cpu_ms", cm.regular_creation_cpu_ms),
            ("emergency_creation_cpu_ms", cm.emergency_creation_cpu_ms),
            ("tick_cpu_ms", cm.tick_cpu_ms),
            ("lr_inference_cpu_ms", cm.lr_inference_cpu_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("metrics.cost_model.{k} must be >= 0, got {v}"));
            }
        }
        if let WorkloadConfig::Trace { trace, manifest } = &self.workload {
            for p in [trace, manifest] {
                if !p.exists() {
                    return bad(format!("workload file {} does not exist", p.display()));
                }
            }
        }
        if let WorkloadConfig::Synthetic { spec } = &self.workload {
            spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// The config with every kind-dependent default filled in.
    pub fn effective(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.policy.resolve(c.run.warmup_s);
        c
    }

    pub fn settings(&self) -> SimSettings {
        let c = self.effective();
        SimSettings {
            node_count: c.cluster.node_count,
            cpu_millicores: c.cluster.cpu_millicores,
            memory_mb: c.cluster.memory_mb,
            queue_cap: c.cluster.queue_cap,
            delays: c.cluster.delay_model.build(&c.expedited.delay_ms),
            policy: c.policy,
            expedited: c.expedited,
            iat_window: c.tracker.window,
            iat_min_samples: c.tracker.min_samples,
            sample_period: SimDuration::from_secs_f64(c.metrics.sample_period_s),
            cost_model: c.metrics.cost_model,
            cdf_quantiles: c.metrics.cdf_quantiles,
            horizon: SimTime::ZERO + SimDuration::from_secs_f64(c.run.horizon_s),
            warmup: SimTime::ZERO + SimDuration::from_secs_f64(c.run.warmup_s),
            seed: c.run.seed,
            event_log: c.output.event_log,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn read_json(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
}
