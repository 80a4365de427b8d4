//! Performance and cost metrics.
//!
//! Performance is the geometric mean over functions of each function's
//! nearest-rank p99 slowdown. Cost is the memory-time of all instances
//! divided by the memory-time of instances executing at least one invocation.
//! All percentiles are nearest-rank.

mod export;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::MemorySnapshot;
use crate::ids::{FunctionIdx, InstanceId};
use crate::time::{SimDuration, SimTime};
use crate::workload::FunctionSpec;

pub use export::{
    export, parse_summary, read_summary, ExportError, PER_FUNCTION_HEADER, SCHED_DELAY_CDF_HEADER, SUMMARY_HEADER, TIMESERIES_HEADER,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("end-to-end time {e2e_us}us shorter than execution time {duration_us}us")]
    NegativeDelay { e2e_us: u64, duration_us: u64 },
    #[error("execution duration must be positive")]
    ZeroDuration,
    #[error("no invocations were served after warm-up")]
    Empty,
}

/// End-to-end time over execution time.
pub fn slowdown(e2e: SimDuration, duration: SimDuration) -> Result<f64, MetricsError> {
    if duration.0 == 0 {
        return Err(MetricsError::ZeroDuration);
    }
    if e2e < duration {
        return Err(MetricsError::NegativeDelay { e2e_us: e2e.0, duration_us: duration.0 });
    }
    Ok(e2e.0 as f64 / duration.0 as f64)
}

/// Nearest-rank quantile of an ascending slice.
pub fn nearest_rank<T: Copy>(sorted: &[T], q: f64) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    Some(sorted[crate::workload::iat_nearest_rank_index(sorted.len(), q)])
}

pub fn geomean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

/// Declared control-plane CPU cost model, in CPU-milliseconds per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    #[serde(default = "c25")]
    pub regular_creation_cpu_ms: f64,
    #[serde(default = "c5")]
    pub emergency_creation_cpu_ms: f64,
    /// Charged per function evaluated at each autoscaler tick.
    #[serde(default = "c1")]
    pub tick_cpu_ms: f64,
    /// Extra per-function, per-tick charge for predictor inference.
    #[serde(default = "c10")]
    pub lr_inference_cpu_ms: f64,
}

fn c25() -> f64 {
    25.0
}
fn c5() -> f64 {
    5.0
}
fn c1() -> f64 {
    1.0
}
fn c10() -> f64 {
    10.0
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { regular_creation_cpu_ms: 25.0, emergency_creation_cpu_ms: 5.0, tick_cpu_ms: 1.0, lr_inference_cpu_ms: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Pending,
    Regular,
    Emergency,
    Rejected,
}

impl Track {
    pub fn as_str(self) -> &'static str {
        match self {
            Track::Pending => "pending",
            Track::Regular => "regular",
            Track::Emergency => "emergency",
            Track::Rejected => "rejected",
        }
    }
}

/// One invocation's simulated outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvocationRecord {
    pub function: FunctionIdx,
    pub arrival: SimTime,
    pub duration: SimDuration,
    pub exec_start: Option<SimTime>,
    pub completion: Option<SimTime>,
    pub track: Track,
    pub instance: Option<InstanceId>,
    /// Could not be served by an already-available instance on arrival.
    pub cold: bool,
    /// Expedited and reported to the standard track.
    pub reported: bool,
    /// Contributes to the autoscaler's concurrency signal.
    pub counted: bool,
    pub attempts: u8,
}

impl InvocationRecord {
    pub fn new(function: FunctionIdx, arrival: SimTime, duration: SimDuration) -> Self {
        InvocationRecord {
            function,
            arrival,
            duration,
            exec_start: None,
            completion: None,
            track: Track::Pending,
            instance: None,
            cold: false,
            reported: false,
            counted: false,
            attempts: 0,
        }
    }

    pub fn is_served(&self) -> bool {
        self.completion.is_some() && matches!(self.track, Track::Regular | Track::Emergency)
    }

    pub fn scheduling_delay(&self) -> Option<SimDuration> {
        self.exec_start.map(|s| s - self.arrival)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemorySample {
    pub t: SimTime,
    pub memory: MemorySnapshot,
    pub creations_regular: u64,
    pub creations_emergency: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ControlPlaneCounters {
    pub autoscaler_evaluations: u64,
    pub lr_inferences: u64,
    pub deferrals: u64,
}

pub struct ReportInputs<'a> {
    pub functions: &'a [FunctionSpec],
    pub invocations: &'a [InvocationRecord],
    /// Samples after warm-up, in time order.
    pub samples: &'a [MemorySample],
    pub sample_period: SimDuration,
    pub counters: ControlPlaneCounters,
    pub warmup: SimTime,
    pub horizon: SimTime,
    pub cost_model: &'a CostModel,
    pub cdf_quantiles: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionMetrics {
    pub function_id: String,
    /// `None` when no invocation of the function was served after warm-up.
    pub p99_slowdown: Option<f64>,
    pub invocations: u64,
    pub cold_starts: u64,
    pub emergency_served: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub invocations: u64,
    pub served: u64,
    pub cold_starts: u64,
    pub emergency_served: u64,
    pub rejected: u64,
    pub unfinished: u64,
    pub expedited: u64,
    pub reported: u64,
    /// Share of expedited invocations reported to the standard track.
    pub reported_fraction: f64,
    pub regular_creations: u64,
    pub emergency_creations: u64,
    pub deferrals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub perf_slowdown_geomean_p99: f64,
    pub per_function: Vec<FunctionMetrics>,
    pub normalized_cost: f64,
    /// Instance creations (regular + emergency) per second after warm-up.
    pub creation_rate_mean: f64,
    pub creation_rate_regular: f64,
    pub creation_rate_emergency: f64,
    pub memory_series: Vec<MemorySample>,
    pub busy_memory_time_mb_s: f64,
    pub idle_memory_time_mb_s: f64,
    pub emergency_memory_time_mb_s: f64,
    /// Emergency memory-time over busy (executing) memory-time.
    pub emergency_memory_fraction: f64,
    /// Modeled control-plane CPU over instance execution CPU.
    pub cpu_overhead_fraction: f64,
    /// Share of execution time served without a cold start.
    pub warm_exec_fraction: f64,
    pub cold_start_fraction: f64,
    pub sched_delay_cdf: Vec<(f64, u64)>,
    pub counts: Counts,
}

pub const DEFAULT_CDF_QUANTILES: [f64; 13] = [0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 0.999, 0.9999, 1.0];

pub fn aggregate(inputs: &ReportInputs<'_>) -> Result<MetricsReport, MetricsError> {
    let nf = inputs.functions.len();
    let mut per_fn_slowdowns: Vec<Vec<f64>> = vec![Vec::new(); nf];
    let mut fm: Vec<FunctionMetrics> = inputs
        .functions
        .iter()
        .map(|f| FunctionMetrics {
            function_id: f.id.clone(),
            p99_slowdown: None,
            invocations: 0,
            cold_starts: 0,
            emergency_served: 0,
        })
        .collect();
    let mut counts = Counts::default();
    let mut delays = Vec::new();
    let mut exec_total = 0u128;
    let mut exec_warm = 0u128;

    for r in inputs.invocations.iter().filter(|r| r.arrival >= inputs.warmup && r.arrival < inputs.horizon) {
        let f = &mut fm[r.function.index()];
        counts.invocations += 1;
        f.invocations += 1;
        if r.cold {
            counts.cold_starts += 1;
            f.cold_starts += 1;
        }
        if r.track == Track::Emergency || (r.track == Track::Rejected && r.attempts > 0) {
            counts.expedited += 1;
            if r.reported {
                counts.reported += 1;
            }
        }
        match r.track {
            Track::Rejected => counts.rejected += 1,
            _ if !r.is_served() || r.completion.is_some_and(|c| c > inputs.horizon) => counts.unfinished += 1,
            _ => {
                let completion = r.completion.expect("served");
                let s = slowdown(completion - r.arrival, r.duration)?;
                per_fn_slowdowns[r.function.index()].push(s);
                delays.push(r.scheduling_delay().expect("served").0);
                counts.served += 1;
                exec_total += r.duration.0 as u128;
                if !r.cold {
                    exec_warm += r.duration.0 as u128;
                }
                if r.track == Track::Emergency {
                    counts.emergency_served += 1;
                    f.emergency_served += 1;
                }
            }
        }
    }
    if counts.served == 0 {
        return Err(MetricsError::Empty);
    }
    counts.reported_fraction = if counts.expedited == 0 { 0.0 } else { counts.reported as f64 / counts.expedited as f64 };

    let mut p99s = Vec::new();
    for (f, mut s) in fm.iter_mut().zip(per_fn_slowdowns) {
        if s.is_empty() {
            continue;
        }
        s.sort_by(f64::total_cmp);
        let p = nearest_rank(&s, 0.99).expect("non-empty");
        f.p99_slowdown = Some(p);
        p99s.push(p);
    }
    let perf = geomean(&p99s).expect("at least one served function");

    delays.sort_unstable();
    let sched_delay_cdf = inputs
        .cdf_quantiles
        .iter()
        .map(|&q| (q, nearest_rank(&delays, q).expect("non-empty")))
        .collect();

    let dt = inputs.sample_period.as_secs_f64();
    let (mut busy, mut idle, mut emerg, mut emerg_busy) = (0.0, 0.0, 0.0, 0.0);
    for s in inputs.samples {
        busy += s.memory.busy_mb as f64 * dt;
        idle += s.memory.idle_mb as f64 * dt;
        emerg += s.memory.emergency_mb as f64 * dt;
        emerg_busy += s.memory.emergency_busy_mb as f64 * dt;
        counts.regular_creations += s.creations_regular;
        counts.emergency_creations += s.creations_emergency;
    }
    counts.deferrals = inputs.counters.deferrals;
    let executing = busy + emerg_busy;
    let normalized_cost = if executing > 0.0 { (busy + idle + emerg) / executing } else { f64::INFINITY };
    let emergency_memory_fraction = if executing > 0.0 { emerg / executing } else { 0.0 };

    let span_s = inputs.horizon.saturating_since(inputs.warmup).as_secs_f64();
    let rate = |n: u64| if span_s > 0.0 { n as f64 / span_s } else { 0.0 };

    let cm = inputs.cost_model;
    let control_ms = cm.regular_creation_cpu_ms * counts.regular_creations as f64
        + cm.emergency_creation_cpu_ms * counts.emergency_creations as f64
        + cm.tick_cpu_ms * inputs.counters.autoscaler_evaluations as f64
        + cm.lr_inference_cpu_ms * inputs.counters.lr_inferences as f64;
    let exec_ms = exec_total as f64 / 1000.0;

    Ok(MetricsReport {
        perf_slowdown_geomean_p99: perf,
        per_function: fm,
        normalized_cost,
        creation_rate_mean: rate(counts.regular_creations + counts.emergency_creations),
        creation_rate_regular: rate(counts.regular_creations),
        creation_rate_emergency: rate(counts.emergency_creations),
        memory_series: inputs.samples.to_vec(),
        busy_memory_time_mb_s: busy,
        idle_memory_time_mb_s: idle,
        emergency_memory_time_mb_s: emerg,
        emergency_memory_fraction,
        cpu_overhead_fraction: if exec_ms > 0.0 { control_ms / exec_ms } else { 0.0 },
        warm_exec_fraction: exec_warm as f64 / exec_total as f64,
        cold_start_fraction: counts.cold_starts as f64 / counts.invocations as f64,
        sched_delay_cdf,
        counts,
    })
}

impl MetricsReport {
    /// Scalar metrics in a fixed order, as written to `summary.csv`.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        let c = &self.counts;
        vec![
            ("perf_slowdown_geomean_p99", self.perf_slowdown_geomean_p99),
            ("normalized_cost", self.normalized_cost),
            ("creation_rate_mean", self.creation_rate_mean),
            ("creation_rate_regular", self.creation_rate_regular),
            ("creation_rate_emergency", self.creation_rate_emergency),
            ("cpu_overhead_fraction", self.cpu_overhead_fraction),
            ("busy_memory_time_mb_s", self.busy_memory_time_mb_s),
            ("idle_memory_time_mb_s", self.idle_memory_time_mb_s),
            ("emergency_memory_time_mb_s", self.emergency_memory_time_mb_s),
            ("emergency_memory_fraction", self.emergency_memory_fraction),
            ("warm_exec_fraction", self.warm_exec_fraction),
            ("cold_start_fraction", self.cold_start_fraction),
            ("invocations", c.invocations as f64),
            ("served", c.served as f64),
            ("cold_starts", c.cold_starts as f64),
            ("emergency_served", c.emergency_served as f64),
            ("rejected", c.rejected as f64),
            ("unfinished", c.unfinished as f64),
            ("expedited", c.expedited as f64),
            ("reported", c.reported as f64),
            ("reported_fraction", c.reported_fraction),
            ("regular_creations", c.regular_creations as f64),
            ("emergency_creations", c.emergency_creations as f64),
            ("deferrals", c.deferrals as f64),
        ]
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars().into_iter().find(|(k, _)| *k == name).map(|(_, v)| v)
    }
}
