//! The simulation: event handlers driving the cluster under one policy.

use std::collections::VecDeque;

use thiserror::Error;

use crate::cluster::{Assignment, Cluster, Completion, DelayModel, InstanceKind, Phase};
use crate::expedited::{ExpeditedConfig, ExpeditedTrack, WorkletState};
use crate::ids::{FunctionIdx, InstanceId, InvocationId};
use crate::kernel::{EventKind, Handler, Kernel, KernelError, LogEntry, RunError, SimEvent};
use crate::metrics::{
    self, ControlPlaneCounters, CostModel, InvocationRecord, MemorySample, MetricsError, MetricsReport, ReportInputs,
    Track,
};
use crate::policy::{
    self, instances_for, scale_from_zero, window_desired, ConcurrencyPredictor, ConcurrencySample, ConcurrencySeries,
    LinearModel, LoadMeter, PolicyConfig, PolicyKind, RoutingTarget,
};
use crate::rng::{substream, SimRng};
use crate::time::{SimDuration, SimTime};
use crate::workload::{IatTracker, QuantileError, Workload, DEFAULT_IAT_MIN_SAMPLES, DEFAULT_IAT_WINDOW};

/// Everything a run needs besides the workload.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub node_count: usize,
    pub cpu_millicores: u32,
    pub memory_mb: u64,
    pub queue_cap: u32,
    pub delays: DelayModel,
    pub policy: PolicyConfig,
    pub expedited: ExpeditedConfig,
    pub iat_window: usize,
    pub iat_min_samples: usize,
    pub sample_period: SimDuration,
    pub cost_model: CostModel,
    pub cdf_quantiles: Vec<f64>,
    pub horizon: SimTime,
    pub warmup: SimTime,
    pub seed: u64,
    pub event_log: bool,
}

impl SimSettings {
    pub fn new(policy: PolicyConfig, horizon: SimTime, warmup: SimTime) -> Self {
        SimSettings {
            node_count: 8,
            cpu_millicores: 16_000,
            memory_mb: 65_536,
            queue_cap: 0,
            delays: DelayModel::breakdown(),
            policy,
            expedited: ExpeditedConfig::default(),
            iat_window: DEFAULT_IAT_WINDOW,
            iat_min_samples: DEFAULT_IAT_MIN_SAMPLES,
            sample_period: SimDuration::from_secs(1),
            cost_model: CostModel::default(),
            cdf_quantiles: metrics::DEFAULT_CDF_QUANTILES.to_vec(),
            horizon,
            warmup,
            seed: 0,
            event_log: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Quantile(#[from] QuantileError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type SimError = RunError<EngineError>;

pub fn is_invariant_violation(e: &SimError) -> bool {
    matches!(e.source, EngineError::Invariant(_))
}

#[derive(Debug, Clone)]
struct FunctionRuntime {
    load: LoadMeter,
    series: ConcurrencySeries,
    /// Window mean at each tick, oldest first.
    history: Vec<f64>,
    model: Option<LinearModel>,
    desired: u32,
    waiting: VecDeque<InvocationId>,
    deferred: VecDeque<InvocationId>,
    seen: bool,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub invocations: Vec<InvocationRecord>,
    /// Memory samples taken after warm-up.
    pub samples: Vec<MemorySample>,
    pub counters: ControlPlaneCounters,
    pub event_log: Option<Vec<LogEntry>>,
    pub digest: u64,
    pub events_dispatched: u64,
    pub worklets: Vec<WorkletState>,
    pub regular_created: u64,
    pub emergency_created: u64,
}

impl SimOutcome {
    pub fn report(&self, workload: &Workload, settings: &SimSettings) -> Result<MetricsReport, MetricsError> {
        metrics::aggregate(&ReportInputs {
            functions: &workload.functions,
            invocations: &self.invocations,
            samples: &self.samples,
            sample_period: settings.sample_period,
            counters: self.counters,
            warmup: settings.warmup,
            horizon: settings.horizon,
            cost_model: &settings.cost_model,
            cdf_quantiles: &settings.cdf_quantiles,
        })
    }
}

pub struct Simulation<'a> {
    workload: &'a Workload,
    settings: &'a SimSettings,
    cluster: Cluster,
    expedited: ExpeditedTrack,
    tracker: IatTracker,
    fns: Vec<FunctionRuntime>,
    invocations: Vec<InvocationRecord>,
    regular_rng: SimRng,
    routing_rng: SimRng,
    keep_alive: SimDuration,
    lr_trained: bool,
    samples: Vec<MemorySample>,
    last_created: (u64, u64),
    counters: ControlPlaneCounters,
}

/// Runs `workload` to the horizon under `settings`.
pub fn simulate(workload: &Workload, settings: &SimSettings) -> Result<SimOutcome, SimError> {
    let mut kernel = if settings.event_log { Kernel::new().with_event_log() } else { Kernel::new() };
    let mut sim = Simulation::new(workload, settings);
    let boot = |e: KernelError| RunError { at: SimTime::ZERO, seq: 0, kind: "boot", source: EngineError::from(e) };
    sim.boot(&mut kernel).map_err(boot)?;
    kernel.run(settings.horizon, &mut sim)?;
    Ok(sim.finish(&mut kernel))
}

impl<'a> Simulation<'a> {
    pub fn new(workload: &'a Workload, settings: &'a SimSettings) -> Self {
        let n = workload.functions.len();
        let ids: Vec<String> = workload.functions.iter().map(|f| f.id.clone()).collect();
        let window = settings.policy.window();
        Simulation {
            workload,
            settings,
            cluster: Cluster::new(
                settings.node_count,
                settings.cpu_millicores,
                settings.memory_mb,
                settings.queue_cap,
                &workload.functions,
            ),
            expedited: ExpeditedTrack::new(
                settings.node_count,
                &settings.expedited,
                &ids,
                substream(settings.seed, "expedited"),
                substream(settings.seed, "expedited/fault"),
            ),
            tracker: IatTracker::new(n, settings.iat_window, settings.iat_min_samples),
            fns: vec![
                FunctionRuntime {
                    load: LoadMeter::default(),
                    series: ConcurrencySeries::new(window),
                    history: Vec::new(),
                    model: None,
                    desired: 0,
                    waiting: VecDeque::new(),
                    deferred: VecDeque::new(),
                    seen: false,
                };
                n
            ],
            invocations: Vec::with_capacity(workload.events.len()),
            regular_rng: substream(settings.seed, "cluster"),
            routing_rng: substream(settings.seed, "routing"),
            keep_alive: settings.policy.keep_alive(),
            lr_trained: false,
            samples: Vec::new(),
            last_created: (0, 0),
            counters: ControlPlaneCounters::default(),
        }
    }

    fn boot(&mut self, kernel: &mut Kernel) -> Result<(), KernelError> {
        if let Some(first) = self.workload.events.first() {
            kernel.schedule(first.arrival, EventKind::Arrival { invocation: InvocationId(0) })?;
        }
        kernel.schedule(SimTime::ZERO + self.settings.policy.tick(), EventKind::AutoscalerTick)?;
        kernel.schedule(SimTime::ZERO + self.settings.sample_period, EventKind::MetricsSample)?;
        Ok(())
    }

    fn finish(mut self, kernel: &mut Kernel) -> SimOutcome {
        self.counters.deferrals = self.cluster.deferrals;
        SimOutcome {
            invocations: self.invocations,
            samples: self.samples,
            counters: self.counters,
            event_log: kernel.take_log(),
            digest: kernel.digest(),
            events_dispatched: kernel.dispatched(),
            worklets: self.expedited.worklets.clone(),
            regular_created: self.cluster.regular_created,
            emergency_created: self.cluster.emergency_created,
        }
    }

    fn kind(&self) -> PolicyKind {
        self.settings.policy.kind
    }

    fn regular_delay(&mut self) -> SimDuration {
        match self.kind() {
            PolicyKind::FastAsync => self.settings.policy.fast_async_delay(),
            _ => self.settings.delays.sample_regular(&mut self.regular_rng),
        }
    }

    fn on_arrival(&mut self, inv: InvocationId, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        let next = inv.index() + 1;
        if let Some(ev) = self.workload.events.get(next) {
            kernel.schedule(ev.arrival, EventKind::Arrival { invocation: InvocationId::from(next) })?;
        }
        let ev = &self.workload.events[inv.index()];
        let f = ev.function;
        debug_assert_eq!(self.invocations.len(), inv.index());
        self.invocations.push(InvocationRecord::new(f, t, ev.duration));
        self.tracker.record_arrival(f, t);
        self.fns[f.index()].seen = true;

        let decision = policy::route(&self.settings.policy, &self.cluster, &self.tracker, f)?;
        let rec = &mut self.invocations[inv.index()];
        rec.reported = decision.reported_to_standard_track && decision.target == RoutingTarget::Expedited;
        rec.counted = decision.reported_to_standard_track;
        rec.cold = !matches!(decision.target, RoutingTarget::ExistingInstance(_));
        if rec.counted {
            self.fns[f.index()].load.increment(t);
        }
        match decision.target {
            RoutingTarget::ExistingInstance(id) => {
                self.invocations[inv.index()].track = Track::Regular;
                self.dispatch(id, inv, t, kernel)?;
            }
            RoutingTarget::WaitInCentralQueue if self.kind() == PolicyKind::Sync => {
                self.invocations[inv.index()].track = Track::Regular;
                let delay = self.regular_delay();
                match self.cluster.admit_regular(f, t, delay, kernel)? {
                    Some(id) => {
                        self.cluster.bind(id, inv);
                        self.invocations[inv.index()].instance = Some(id);
                    }
                    None => self.fns[f.index()].deferred.push_back(inv),
                }
            }
            RoutingTarget::WaitInCentralQueue => {
                self.invocations[inv.index()].track = Track::Regular;
                self.fns[f.index()].waiting.push_back(inv);
                self.poke_from_zero(f, t, kernel)?;
            }
            RoutingTarget::Expedited => {
                self.invocations[inv.index()].track = Track::Emergency;
                self.expedite(inv, t, kernel)?;
                if decision.reported_to_standard_track {
                    self.poke_from_zero(f, t, kernel)?;
                }
            }
        }
        Ok(())
    }

    /// Scale-from-zero is decided on arrival rather than at the next tick.
    fn poke_from_zero(&mut self, f: FunctionIdx, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        if self.cluster.regular_count(f) > 0 {
            return Ok(());
        }
        let inst = self.fns[f.index()].load.current();
        let d = scale_from_zero(0, 0, inst, self.cluster.target_concurrency(f));
        self.fns[f.index()].desired = self.fns[f.index()].desired.max(d);
        self.reconcile(f, d, t, kernel)
    }

    fn expedite(&mut self, inv: InvocationId, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        let f = self.invocations[inv.index()].function;
        self.invocations[inv.index()].attempts += 1;
        let id = self.expedited.spawn_and_bind(f, inv, t, &mut self.cluster, kernel)?;
        self.invocations[inv.index()].instance = Some(id);
        Ok(())
    }

    fn dispatch(&mut self, id: InstanceId, inv: InvocationId, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        self.invocations[inv.index()].instance = Some(id);
        if self.cluster.assign(id, inv, t, kernel) == Assignment::Started {
            self.start(id, inv, t, kernel)?;
        }
        Ok(())
    }

    fn start(&mut self, id: InstanceId, inv: InvocationId, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        let begin = t + self.settings.delays.routing.sample(&mut self.routing_rng);
        let rec = &mut self.invocations[inv.index()];
        rec.exec_start = Some(begin);
        rec.instance = Some(id);
        kernel.schedule(begin + rec.duration, EventKind::InvocationComplete { instance: id, invocation: inv })?;
        Ok(())
    }

    /// Hands waiting or deferred invocations to `id` while it has room.
    fn drain(&mut self, id: InstanceId, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        let f = self.cluster.instance(id).function;
        while self.cluster.can_accept(id) {
            let fr = &mut self.fns[f.index()];
            let Some(inv) = fr.waiting.pop_front().or_else(|| fr.deferred.pop_front()) else { break };
            self.dispatch(id, inv, t, kernel)?;
        }
        Ok(())
    }

    fn idle_or_keep(&mut self, id: InstanceId, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        if self.cluster.instance(id).phase == Phase::Idle {
            self.cluster.schedule_keepalive(id, t, self.keep_alive, kernel)?;
        }
        Ok(())
    }

    fn on_ready(&mut self, id: InstanceId, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        if let Some(inv) = self.cluster.mark_ready(id, t) {
            self.dispatch(id, inv, t, kernel)?;
        }
        self.drain(id, t, kernel)?;
        self.idle_or_keep(id, t, kernel)
    }

    fn on_complete(&mut self, id: InstanceId, inv: InvocationId, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        let rec = &mut self.invocations[inv.index()];
        rec.completion = Some(t);
        let f = rec.function;
        if rec.counted {
            self.fns[f.index()].load.decrement(t);
        }
        match self.cluster.complete_invocation(id, t) {
            Completion::Next(next) => self.start(id, next, t, kernel)?,
            Completion::Dispose => {
                kernel.schedule(t, EventKind::EmergencyTeardown { instance: id })?;
                return Ok(());
            }
            Completion::StillBusy | Completion::Idle => {}
        }
        self.drain(id, t, kernel)?;
        self.idle_or_keep(id, t, kernel)
    }

    fn on_keepalive(&mut self, id: InstanceId, t: SimTime, kernel: &mut Kernel) {
        let i = self.cluster.instance(id);
        if i.kind != InstanceKind::Regular || i.phase != Phase::Idle {
            return;
        }
        let f = i.function;
        if self.kind().is_autoscaled() && self.cluster.regular_count(f) <= self.fns[f.index()].desired as usize {
            return;
        }
        self.cluster.expire_keepalive(id, t, self.keep_alive, kernel);
    }

    fn on_emergency_ready(&mut self, id: InstanceId, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        let inv = self
            .cluster
            .start_emergency(id, t)
            .ok_or_else(|| EngineError::Invariant(format!("emergency instance {id} became ready without an invocation")))?;
        self.start(id, inv, t, kernel)
    }

    fn release_emergency(&mut self, id: InstanceId, failed: bool) {
        let i = self.cluster.instance(id);
        self.expedited.release(id, i.node, i.memory_mb, failed);
    }

    fn on_emergency_failed(&mut self, id: InstanceId, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        let inv = self.cluster.fail_emergency(id, t, kernel);
        self.release_emergency(id, true);
        let inv = inv.ok_or_else(|| EngineError::Invariant(format!("failed emergency instance {id} had no invocation")))?;
        if self.invocations[inv.index()].attempts < 2 {
            return self.expedite(inv, t, kernel);
        }
        let rec = &mut self.invocations[inv.index()];
        rec.track = Track::Rejected;
        rec.instance = None;
        if rec.counted {
            let f = rec.function;
            self.fns[f.index()].load.decrement(t);
        }
        Ok(())
    }

    fn desired_for(&mut self, f: FunctionIdx, t: SimTime) -> u32 {
        let fr = &self.fns[f.index()];
        let tc = self.cluster.target_concurrency(f);
        let current = self.cluster.regular_count(f);
        let inst = fr.load.current();
        if self.kind() == PolicyKind::PredictiveLR && self.lr_trained {
            let pred = match &fr.model {
                Some(m) => {
                    if t > self.settings.warmup {
                        self.counters.lr_inferences += 1;
                    }
                    m.predict(&fr.history)
                }
                None => fr.history.last().copied().unwrap_or(0.0),
            };
            return scale_from_zero(instances_for(pred.max(0.0), tc), current, inst, tc);
        }
        window_desired(&fr.series, t, current, inst, tc)
    }

    fn on_tick(&mut self, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        let kind = self.kind();
        let n = self.fns.len();
        for fr in &mut self.fns {
            let (span, area) = fr.load.close_interval(t);
            fr.series.push(ConcurrencySample { end: t, span, area });
            if kind == PolicyKind::PredictiveLR {
                fr.history.push(fr.series.window_mean(t));
            }
        }
        if kind == PolicyKind::PredictiveLR && !self.lr_trained {
            let horizon = SimTime::ZERO
                + SimDuration::from_secs_f64(self.settings.policy.lr.training_horizon_s.unwrap_or(self.settings.warmup.as_secs_f64()));
            if t >= horizon {
                let lags = self.settings.policy.lr.lags;
                for fr in &mut self.fns {
                    fr.model = LinearModel::fit(&fr.history, lags);
                }
                self.lr_trained = true;
            }
        }
        for idx in 0..n {
            let f = FunctionIdx::from(idx);
            if kind.is_autoscaled() {
                if !self.fns[idx].seen {
                    continue;
                }
                if t > self.settings.warmup {
                    self.counters.autoscaler_evaluations += 1;
                }
                let d = self.desired_for(f, t);
                self.fns[idx].desired = d;
                self.reconcile(f, d, t, kernel)?;
            } else {
                while let Some(&inv) = self.fns[idx].deferred.front() {
                    let delay = self.regular_delay();
                    match self.cluster.admit_regular(f, t, delay, kernel)? {
                        Some(id) => {
                            self.fns[idx].deferred.pop_front();
                            self.cluster.bind(id, inv);
                            self.invocations[inv.index()].instance = Some(id);
                        }
                        None => break,
                    }
                }
            }
        }
        let next = t + self.settings.policy.tick();
        if next <= self.settings.horizon {
            kernel.schedule(next, EventKind::AutoscalerTick)?;
        }
        Ok(())
    }

    /// Creates up to `desired` regular instances or retires idle excess.
    fn reconcile(&mut self, f: FunctionIdx, desired: u32, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        let current = self.cluster.regular_count(f);
        let desired = desired as usize;
        if desired > current {
            for _ in current..desired {
                let delay = self.regular_delay();
                if self.cluster.admit_regular(f, t, delay, kernel)?.is_none() {
                    break;
                }
            }
        } else if desired < current {
            let mut idle: Vec<(SimTime, InstanceId)> = self
                .cluster
                .regular_of(f)
                .iter()
                .filter(|&&id| self.cluster.idle_for(id, t).is_some_and(|d| d >= self.keep_alive))
                .map(|&id| (self.cluster.instance(id).idle_since.unwrap_or(t), id))
                .collect();
            idle.sort_by(|a, b| b.cmp(a));
            for (_, id) in idle.into_iter().take(current - desired) {
                self.cluster.terminate(id, t, kernel);
            }
        }
        Ok(())
    }

    fn on_sample(&mut self, t: SimTime, kernel: &mut Kernel) -> Result<(), EngineError> {
        self.cluster.check_memory_conservation().map_err(EngineError::Invariant)?;
        self.expedited.check_invariants(&self.cluster).map_err(EngineError::Invariant)?;
        let created = (self.cluster.regular_created, self.cluster.emergency_created);
        if t > self.settings.warmup {
            self.samples.push(MemorySample {
                t,
                memory: self.cluster.memory(),
                creations_regular: created.0 - self.last_created.0,
                creations_emergency: created.1 - self.last_created.1,
            });
        }
        self.last_created = created;
        let next = t + self.settings.sample_period;
        if next <= self.settings.horizon {
            kernel.schedule(next, EventKind::MetricsSample)?;
        }
        Ok(())
    }
}

impl Handler for Simulation<'_> {
    type Error = EngineError;

    fn handle(&mut self, event: &SimEvent, kernel: &mut Kernel) -> Result<(), EngineError> {
        let t = event.fire_at;
        match event.kind {
            EventKind::Arrival { invocation } => self.on_arrival(invocation, t, kernel),
            EventKind::InstanceReady { instance } => self.on_ready(instance, t, kernel),
            EventKind::InvocationComplete { instance, invocation } => self.on_complete(instance, invocation, t, kernel),
            EventKind::KeepAliveExpiry { instance } => {
                self.on_keepalive(instance, t, kernel);
                Ok(())
            }
            EventKind::AutoscalerTick => self.on_tick(t, kernel),
            EventKind::EmergencyReady { instance } => self.on_emergency_ready(instance, t, kernel),
            EventKind::EmergencyTeardown { instance } => {
                self.cluster.terminate(instance, t, kernel);
                self.release_emergency(instance, false);
                Ok(())
            }
            EventKind::EmergencyFailed { instance } => self.on_emergency_failed(instance, t, kernel),
            EventKind::MetricsSample => self.on_sample(t, kernel),
        }
    }

    fn function_of(&self, event: &SimEvent) -> Option<FunctionIdx> {
        if let Some(id) = event.kind.instance() {
            return Some(self.cluster.instance(id).function);
        }
        event.kind.invocation().map(|inv| self.workload.events[inv.index()].function)
    }
}
