//! Control-plane architectures: routing, track choice, autoscaling and the
//! dual-track metric filter.

pub mod autoscale;
pub mod lr;

use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::ids::{FunctionIdx, InstanceId};
use crate::time::SimDuration;
use crate::workload::{IatTracker, QuantileError};

pub use autoscale::{ceil_count, instances_for, scale_from_zero, window_desired, ConcurrencySample, ConcurrencySeries, LoadMeter};
pub use lr::{ConcurrencyPredictor, LinearModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Creates an instance on the invocation's critical path when none is available.
    Sync,
    /// Knative-style: invocations wait while a window-averaged autoscaler reacts.
    AsyncWindow,
    /// Asynchronous autoscaling driven by a linear-regression forecast.
    PredictiveLR,
    /// Regular instances via the window autoscaler, misses served by emergency instances.
    DualTrack,
    /// AsyncWindow with a fast constant creation delay.
    FastAsync,
}

impl PolicyKind {
    pub fn all() -> [PolicyKind; 5] {
        [PolicyKind::Sync, PolicyKind::AsyncWindow, PolicyKind::PredictiveLR, PolicyKind::DualTrack, PolicyKind::FastAsync]
    }

    /// Policies whose regular instances are driven by a periodic desired count.
    pub fn is_autoscaled(self) -> bool {
        !matches!(self, PolicyKind::Sync)
    }

    pub fn default_keep_alive_s(self) -> f64 {
        match self {
            PolicyKind::Sync => 600.0,
            PolicyKind::DualTrack => 60.0,
            PolicyKind::AsyncWindow | PolicyKind::PredictiveLR | PolicyKind::FastAsync => DEFAULT_TICK_S,
        }
    }
}

pub const DEFAULT_TICK_S: f64 = 2.0;
pub const DEFAULT_WINDOW_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrConfig {
    #[serde(default = "default_lags")]
    pub lags: usize,
    /// Length of the initial history the models are fitted on; defaults to the run's warm-up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_horizon_s: Option<f64>,
}

fn default_lags() -> usize {
    8
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig { lags: default_lags(), training_horizon_s: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Idle retention of regular instances; defaults per kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_alive_s: Option<f64>,
    #[serde(default = "default_window_s")]
    pub window_s: f64,
    #[serde(default = "default_tick_s")]
    pub tick_s: f64,
    #[serde(default = "default_filter_quantile")]
    pub filter_quantile: f64,
    /// With the filter off every expedited invocation is reported.
    #[serde(default = "yes")]
    pub filter_enabled: bool,
    #[serde(default)]
    pub lr: LrConfig,
    #[serde(default = "default_fast_async_delay_ms")]
    pub fast_async_delay_ms: f64,
}

fn default_window_s() -> f64 {
    DEFAULT_WINDOW_S
}
fn default_tick_s() -> f64 {
    DEFAULT_TICK_S
}
fn default_filter_quantile() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}
fn default_fast_async_delay_ms() -> f64 {
    100.0
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind,
            keep_alive_s: None,
            window_s: DEFAULT_WINDOW_S,
            tick_s: DEFAULT_TICK_S,
            filter_quantile: default_filter_quantile(),
            filter_enabled: true,
            lr: LrConfig::default(),
            fast_async_delay_ms: default_fast_async_delay_ms(),
        }
    }

    pub fn with_keep_alive_s(mut self, s: f64) -> Self {
        self.keep_alive_s = Some(s);
        self
    }

    pub fn keep_alive(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.keep_alive_s.unwrap_or_else(|| self.kind.default_keep_alive_s()))
    }

    pub fn window(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.window_s)
    }

    pub fn tick(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.tick_s)
    }

    pub fn fast_async_delay(&self) -> SimDuration {
        SimDuration::from_millis_f64(self.fast_async_delay_ms)
    }

    /// Fills kind-dependent defaults so the serialized form is self-contained.
    pub fn resolve(&mut self, warmup_s: f64) {
        if self.keep_alive_s.is_none() {
            self.keep_alive_s = Some(self.kind.default_keep_alive_s());
        }
        if self.lr.training_horizon_s.is_none() {
            self.lr.training_horizon_s = Some(warmup_s);
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("policy.{name} must be > 0, got {v}"))
            }
        };
        if let Some(ka) = self.keep_alive_s {
            positive("keep_alive_s", ka)?;
        }
        positive("window_s", self.window_s)?;
        positive("tick_s", self.tick_s)?;
        positive("fast_async_delay_ms", self.fast_async_delay_ms)?;
        if self.tick().0 == 0 || self.window().0 == 0 {
            return Err("policy.tick_s and policy.window_s must be at least 1us".into());
        }
        if !(0.0..=1.0).contains(&self.filter_quantile) {
            return Err(format!("policy.filter_quantile must be in [0, 1], got {}", self.filter_quantile));
        }
        if self.lr.lags == 0 {
            return Err("policy.lr.lags must be >= 1".into());
        }
        if let Some(h) = self.lr.training_horizon_s {
            if !(h.is_finite() && h >= 0.0) {
                return Err(format!("policy.lr.training_horizon_s must be >= 0, got {h}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RoutingTarget {
    ExistingInstance(InstanceId),
    Expedited,
    WaitInCentralQueue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RoutingDecision {
    pub target: RoutingTarget,
    /// Whether the invocation counts toward the standard track's concurrency.
    pub reported_to_standard_track: bool,
}

/// Track choice for an invocation of `function` that just arrived.
pub fn route(
    policy: &PolicyConfig,
    cluster: &Cluster,
    tracker: &IatTracker,
    function: FunctionIdx,
) -> Result<RoutingDecision, QuantileError> {
    if let Some(id) = cluster.pick_available(function) {
        return Ok(RoutingDecision { target: RoutingTarget::ExistingInstance(id), reported_to_standard_track: true });
    }
    Ok(match policy.kind {
        PolicyKind::DualTrack => RoutingDecision {
            target: RoutingTarget::Expedited,
            reported_to_standard_track: filter_metric(policy, tracker, function)?,
        },
        _ => RoutingDecision { target: RoutingTarget::WaitInCentralQueue, reported_to_standard_track: true },
    })
}

/// Reports an expedited invocation only when the function's IAT quantile is
/// known and shorter than the keep-alive; an unknown quantile counts as sporadic.
pub fn filter_metric(policy: &PolicyConfig, tracker: &IatTracker, function: FunctionIdx) -> Result<bool, QuantileError> {
    if !policy.filter_enabled {
        return Ok(true);
    }
    Ok(tracker.quantile(function, policy.filter_quantile)?.is_some_and(|iat| iat < policy.keep_alive()))
}
