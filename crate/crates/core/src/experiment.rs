//! Single runs, parameter sweeps and policy comparisons.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::{read_json, set_path, ConfigError, ExperimentConfig};
use crate::engine::{is_invariant_violation, simulate, SimOutcome, SimSettings};
use crate::kernel::EVENT_LOG_HEADER;
use crate::metrics::{export, ExportError, MetricsError, MetricsReport};
use crate::workload::Workload;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("empty results: {0}")]
    Empty(MetricsError),
    #[error("metrics: {0}")]
    Metrics(MetricsError),
    #[error("{0}")]
    Invariant(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Empty(_) => 3,
            ExperimentError::Invariant(_) | ExperimentError::Metrics(_) => 4,
            ExperimentError::Simulation(_) | ExperimentError::Export(_) | ExperimentError::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: MetricsReport,
    pub outcome: SimOutcome,
    pub settings: SimSettings,
    pub warnings: Vec<String>,
}

/// Simulates a config against an already-loaded workload.
pub fn run_on(config: &ExperimentConfig, workload: &Workload) -> Result<RunResult, ExperimentError> {
    let settings = config.settings();
    let outcome = simulate(workload, &settings).map_err(|e| {
        if is_invariant_violation(&e) {
            ExperimentError::Invariant(e.to_string())
        } else {
            ExperimentError::Simulation(e.to_string())
        }
    })?;
    let report = outcome.report(workload, &settings).map_err(|e| match e {
        MetricsError::Empty => ExperimentError::Empty(e),
        e => ExperimentError::Metrics(e),
    })?;
    Ok(RunResult { report, outcome, settings, warnings: Vec::new() })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult, ExperimentError> {
    let generated = config.workload.load()?;
    let mut r = run_on(config, &generated.workload)?;
    r.warnings = generated.warnings;
    Ok(r)
}

/// Writes the report CSVs plus the effective config, and the optional
/// invocation table and event log.
pub fn write_outputs(config: &ExperimentConfig, result: &RunResult, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut paths = export(&result.report, dir)?;
    let cfg_path = dir.join("effective_config.json");
    std::fs::write(&cfg_path, config.effective().to_json_pretty() + "\n").map_err(io_err(&cfg_path))?;
    paths.push(cfg_path);
    if config.output.invocations {
        let p = dir.join("invocations.csv");
        write_invocations(&result.outcome, &p)?;
        paths.push(p);
    }
    if let Some(log) = &result.outcome.event_log {
        let p = dir.join("event_log.csv");
        let mut w = BufWriter::new(std::fs::File::create(&p).map_err(io_err(&p))?);
        writeln!(w, "{EVENT_LOG_HEADER}").map_err(io_err(&p))?;
        for e in log {
            writeln!(w, "{e}").map_err(io_err(&p))?;
        }
        w.flush().map_err(io_err(&p))?;
        paths.push(p);
    }
    Ok(paths)
}

pub const INVOCATIONS_HEADER: &str = "invocation,function,arrival_us,duration_us,exec_start_us,completion_us,track,instance,cold,reported";

pub fn invocations_csv(outcome: &SimOutcome) -> String {
    let opt = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut s = format!("{INVOCATIONS_HEADER}\n");
    for (i, r) in outcome.invocations.iter().enumerate() {
        s += &format!(
            "{i},{},{},{},{},{},{},{},{},{}\n",
            r.function,
            r.arrival.0,
            r.duration.0,
            opt(r.exec_start.map(|t| t.0)),
            opt(r.completion.map(|t| t.0)),
            r.track.as_str(),
            r.instance.map(|i| i.to_string()).unwrap_or_default(),
            r.cold as u8,
            r.reported as u8,
        );
    }
    s
}

fn write_invocations(outcome: &SimOutcome, p: &Path) -> Result<(), ExperimentError> {
    std::fs::write(p, invocations_csv(outcome)).map_err(io_err(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted config path, e.g. `policy.keep_alive_s`.
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Inline config object, or a path to a config file.
    pub base: Value,
    pub axis: SweepAxis,
    #[serde(default = "one")]
    pub parallelism: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: Value,
    pub result: Result<MetricsReport, String>,
}

/// Sweep columns after `axis_value,status`.
pub const SWEEP_METRICS: [&str; 10] = [
    "perf_slowdown_geomean_p99",
    "normalized_cost",
    "creation_rate_mean",
    "creation_rate_regular",
    "creation_rate_emergency",
    "cpu_overhead_fraction",
    "emergency_memory_fraction",
    "reported_fraction",
    "cold_start_fraction",
    "invocations",
];

impl SweepSpec {
    pub fn load(path: &Path) -> Result<SweepSpec, ConfigError> {
        let v = read_json(path)?;
        let mut spec: SweepSpec = serde_json::from_value(v).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Value::String(p) = &spec.base {
            let p = path.parent().unwrap_or(Path::new(".")).join(p);
            spec.base = read_json(&p)?;
        }
        Ok(spec)
    }

    /// The config of every point, in axis order.
    pub fn point_configs(&self) -> Result<Vec<ExperimentConfig>, ConfigError> {
        if self.axis.values.is_empty() {
            return Err(ConfigError::Invalid("sweep axis needs at least one value".into()));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("sweep parallelism must be >= 1".into()));
        }
        let base = crate::config::expand_dotted(self.base.clone())?;
        self.axis
            .values
            .iter()
            .map(|v| {
                let mut c = base.clone();
                set_path(&mut c, &self.axis.path, v.clone())?;
                ExperimentConfig::from_value(c).map_err(|e| match e {
                    ConfigError::Parse(m) => ConfigError::Invalid(format!("sweep axis `{}` = {v}: {m}", self.axis.path)),
                    e => e,
                })
            })
            .collect()
    }
}

/// Runs every point on up to `parallelism` worker threads. Points are
/// independent, so results do not depend on the level of parallelism. A
/// failing point is reported in its slot and does not stop the others.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepPoint>, ExperimentError> {
    let configs = spec.point_configs()?;
    let shared = if spec.axis.path.starts_with("workload") { None } else { Some(configs[0].workload.load()?.workload) };
    let run_point = |c: &ExperimentConfig| -> Result<MetricsReport, String> {
        let r = match &shared {
            Some(w) => run_on(c, w),
            None => run_experiment(c),
        };
        r.map(|r| r.report).map_err(|e| e.to_string())
    };
    let workers = spec.parallelism.min(configs.len()).max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut results: Vec<Option<Result<MetricsReport, String>>> = vec![None; configs.len()];
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let r = run_point(&configs[i]);
                slots.lock().expect("sweep slots")[i] = Some(r);
            });
        }
    });
    Ok(spec
        .axis
        .values
        .iter()
        .zip(results)
        .map(|(v, r)| SweepPoint { value: v.clone(), result: r.expect("every point ran") })
        .collect())
}

fn axis_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        v => v.to_string(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = format!("axis_value,status,{},error\n", SWEEP_METRICS.join(","));
    for p in points {
        s += &csv_field(&axis_label(&p.value));
        match &p.result {
            Ok(r) => {
                s += ",ok";
                for m in SWEEP_METRICS {
                    s += &format!(",{}", r.scalar(m).expect("known metric"));
                }
                s += ",\n";
            }
            Err(e) => {
                s += ",failed";
                s += &",".repeat(SWEEP_METRICS.len());
                s += &format!(",{}\n", csv_field(e));
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub label: String,
    pub policy: String,
    pub keep_alive_s: f64,
    pub report: MetricsReport,
}

pub const TRADEOFF_HEADER: &str =
    "label,policy,keep_alive_s,perf_slowdown_geomean_p99,normalized_cost,creation_rate_mean,cpu_overhead_fraction";

/// Runs each config on the shared workload. All configs must agree on the
/// workload and the cluster.
pub fn compare(configs: &[(String, ExperimentConfig)]) -> Result<Vec<TradeoffRow>, ExperimentError> {
    if configs.len() < 2 {
        return Err(ConfigError::Invalid("compare needs at least two configs".into()).into());
    }
    let (_, first) = &configs[0];
    for (label, c) in &configs[1..] {
        if c.workload != first.workload {
            return Err(ConfigError::Invalid(format!("config `{label}` uses a different workload")).into());
        }
        if c.cluster != first.cluster || c.run != first.run {
            return Err(ConfigError::Invalid(format!("config `{label}` uses a different cluster or run window")).into());
        }
    }
    let workload = first.workload.load()?.workload;
    let results: Vec<Result<RunResult, ExperimentError>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|(_, c)| s.spawn(|| run_on(c, &workload))).collect();
        handles.into_iter().map(|h| h.join().expect("compare worker")).collect()
    });
    configs
        .iter()
        .zip(results)
        .map(|((label, c), r)| {
            let e = c.effective();
            Ok(TradeoffRow {
                label: label.clone(),
                policy: format!("{:?}", e.policy.kind),
                keep_alive_s: e.policy.keep_alive_s.expect("resolved"),
                report: r?.report,
            })
        })
        .collect()
}

pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut s = format!("{TRADEOFF_HEADER}\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{},{}\n",
            csv_field(&r.label),
            r.policy,
            r.keep_alive_s,
            r.report.perf_slowdown_geomean_p99,
            r.report.normalized_cost,
            r.report.creation_rate_mean,
            r.report.cpu_overhead_fraction
        );
    }
    s
}
