//! Worker nodes, instance lifecycle and memory meters.
//!
//! Regular instances are charged against a node's allocatable memory and may
//! be refused (deferred) when nothing fits. Emergency instances are charged
//! to a separate per-node margin meter and are never refused.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dist::DelayDist;
use crate::ids::{FunctionIdx, InstanceId, InvocationId, NodeId};
use crate::kernel::{EventHandle, EventKind, Kernel, KernelError};
use crate::rng::SimRng;
use crate::time::{SimDuration, SimTime};
use crate::workload::FunctionSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Regular,
    Emergency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Creating,
    Idle,
    Busy,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayComponent {
    pub name: String,
    pub dist: DelayDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModel {
    /// Regular creation delay is the sum of one sample per component.
    pub regular: Vec<DelayComponent>,
    pub emergency: DelayDist,
    pub routing: DelayDist,
}

impl DelayModel {
    /// Component magnitudes of a Knative instance creation: readiness probes,
    /// namespace and network setup, proxy and sandbox, runtime init.
    pub fn breakdown() -> Self {
        let c = |name: &str, ms: f64| DelayComponent { name: name.into(), dist: DelayDist::constant_ms(ms) };
        DelayModel {
            regular: vec![
                c("readiness_probe", 500.0),
                c("namespace_network", 400.0),
                c("proxy_sandbox", 250.0),
                c("runtime_init", 100.0),
            ],
            emergency: DelayDist::constant_ms(150.0),
            routing: DelayDist::constant_ms(0.0),
        }
    }

    /// A single lognormal creation delay truncated to 1-3 s.
    pub fn aggregate() -> Self {
        DelayModel {
            regular: vec![DelayComponent {
                name: "creation".into(),
                dist: DelayDist::Lognormal { median_ms: 1000.0, sigma: 0.35, min_ms: Some(1000.0), max_ms: Some(3000.0) },
            }],
            ..Self::breakdown()
        }
    }

    pub fn zero() -> Self {
        DelayModel {
            regular: vec![DelayComponent { name: "creation".into(), dist: DelayDist::constant_ms(0.0) }],
            emergency: DelayDist::constant_ms(0.0),
            routing: DelayDist::constant_ms(0.0),
        }
    }

    /// Replaces the regular components with one constant delay.
    pub fn with_constant_regular(mut self, ms: f64) -> Self {
        self.regular = vec![DelayComponent { name: "creation".into(), dist: DelayDist::constant_ms(ms) }];
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.regular.is_empty() {
            return Err("delay model needs at least one regular component".into());
        }
        for c in &self.regular {
            c.dist.validate().map_err(|e| format!("regular component `{}`: {e}", c.name))?;
        }
        self.emergency.validate().map_err(|e| format!("emergency delay: {e}"))?;
        self.routing.validate().map_err(|e| format!("routing delay: {e}"))
    }

    pub fn sample_regular(&self, rng: &mut SimRng) -> SimDuration {
        self.regular.iter().fold(SimDuration::ZERO, |acc, c| acc + c.dist.sample(rng))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeState {
    pub id: NodeId,
    pub cpu_millicores_capacity: u32,
    pub memory_mb_capacity: u64,
    /// Memory held by regular instances.
    pub allocated_mb: u64,
    /// Memory held by emergency instances.
    pub margin_mb: u64,
    pub margin_peak_mb: u64,
    pub resident: BTreeSet<InstanceId>,
}

impl NodeState {
    pub fn free_mb(&self) -> u64 {
        self.memory_mb_capacity.saturating_sub(self.allocated_mb)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceState {
    pub id: InstanceId,
    pub function: FunctionIdx,
    pub node: NodeId,
    pub kind: InstanceKind,
    pub phase: Phase,
    pub memory_mb: u32,
    pub requested_at: SimTime,
    pub ready_at: Option<SimTime>,
    pub last_used_at: SimTime,
    /// Start of the current idle period.
    pub idle_since: Option<SimTime>,
    pub terminated_at: Option<SimTime>,
    /// Waiting invocations (bounded by the queue capacity).
    pub queue: VecDeque<InvocationId>,
    pub in_flight: u32,
    /// Invocation reserved for this instance before it became ready.
    pub bound: Option<InvocationId>,
    pub served: u32,
    pub failed: bool,
    #[serde(skip)]
    pub keepalive: Option<EventHandle>,
}

impl InstanceState {
    pub fn is_live(&self) -> bool {
        self.phase != Phase::Terminated
    }
}

/// Outcome of finishing an invocation on an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    /// The instance dequeued and must start this invocation now.
    Next(InvocationId),
    /// Still busy with other in-flight invocations.
    StillBusy,
    /// Regular instance has nothing to do.
    Idle,
    /// Emergency instance finished its one invocation.
    Dispose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Started,
    Queued,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    /// Regular instances with at least one in-flight invocation.
    pub busy_mb: u64,
    /// Regular instances that are creating or idle.
    pub idle_mb: u64,
    /// All live emergency instances.
    pub emergency_mb: u64,
    /// Emergency instances currently executing.
    pub emergency_busy_mb: u64,
}

impl MemorySnapshot {
    pub fn total_mb(&self) -> u64 {
        self.busy_mb + self.idle_mb + self.emergency_mb
    }
}

#[derive(Debug)]
pub struct Cluster {
    pub nodes: Vec<NodeState>,
    instances: Vec<InstanceState>,
    live: BTreeSet<InstanceId>,
    regular_by_fn: Vec<Vec<InstanceId>>,
    memory_by_fn: Vec<u32>,
    concurrency_by_fn: Vec<u32>,
    queue_cap: u32,
    pub regular_created: u64,
    pub emergency_created: u64,
    pub deferrals: u64,
}

impl Cluster {
    pub fn new(node_count: usize, cpu_millicores: u32, memory_mb: u64, queue_cap: u32, functions: &[FunctionSpec]) -> Self {
        let nodes = (0..node_count)
            .map(|i| NodeState {
                id: NodeId::from(i),
                cpu_millicores_capacity: cpu_millicores,
                memory_mb_capacity: memory_mb,
                allocated_mb: 0,
                margin_mb: 0,
                margin_peak_mb: 0,
                resident: BTreeSet::new(),
            })
            .collect();
        Cluster {
            nodes,
            instances: Vec::new(),
            live: BTreeSet::new(),
            regular_by_fn: vec![Vec::new(); functions.len()],
            memory_by_fn: functions.iter().map(|f| f.memory_mb).collect(),
            concurrency_by_fn: functions.iter().map(|f| f.target_concurrency).collect(),
            queue_cap,
            regular_created: 0,
            emergency_created: 0,
            deferrals: 0,
        }
    }

    pub fn instance(&self, id: InstanceId) -> &InstanceState {
        &self.instances[id.index()]
    }

    fn instance_mut(&mut self, id: InstanceId) -> &mut InstanceState {
        &mut self.instances[id.index()]
    }

    pub fn instances(&self) -> &[InstanceState] {
        &self.instances
    }

    pub fn live(&self) -> impl Iterator<Item = &InstanceState> + '_ {
        self.live.iter().map(|id| &self.instances[id.index()])
    }

    /// Non-terminated regular instances of a function (creating, idle or busy).
    pub fn regular_of(&self, f: FunctionIdx) -> &[InstanceId] {
        &self.regular_by_fn[f.index()]
    }

    pub fn regular_count(&self, f: FunctionIdx) -> usize {
        self.regular_by_fn[f.index()].len()
    }

    pub fn target_concurrency(&self, f: FunctionIdx) -> u32 {
        self.concurrency_by_fn[f.index()]
    }

    /// Ready instance whose per-instance queue is not full.
    pub fn can_accept(&self, id: InstanceId) -> bool {
        let i = self.instance(id);
        matches!(i.phase, Phase::Idle | Phase::Busy)
            && i.kind == InstanceKind::Regular
            && (i.in_flight < self.concurrency_by_fn[i.function.index()] || (i.queue.len() as u32) < self.queue_cap)
    }

    /// Least-loaded available instance; ties go to the most recently used.
    pub fn pick_available(&self, f: FunctionIdx) -> Option<InstanceId> {
        self.regular_by_fn[f.index()]
            .iter()
            .copied()
            .filter(|&id| self.can_accept(id))
            .min_by_key(|&id| {
                let i = self.instance(id);
                (i.in_flight + i.queue.len() as u32, std::cmp::Reverse(i.last_used_at), std::cmp::Reverse(id))
            })
    }

    fn new_instance(&mut self, f: FunctionIdx, node: NodeId, kind: InstanceKind, t: SimTime) -> InstanceId {
        let id = InstanceId::from(self.instances.len());
        self.instances.push(InstanceState {
            id,
            function: f,
            node,
            kind,
            phase: Phase::Creating,
            memory_mb: self.memory_by_fn[f.index()],
            requested_at: t,
            ready_at: None,
            last_used_at: t,
            idle_since: None,
            terminated_at: None,
            queue: VecDeque::new(),
            in_flight: 0,
            bound: None,
            served: 0,
            failed: false,
            keepalive: None,
        });
        self.live.insert(id);
        self.nodes[node.index()].resident.insert(id);
        id
    }

    /// Worst-fit (most free memory) node that can hold `mb`, lowest id on ties.
    fn place_regular(&self, mb: u64) -> Option<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.free_mb() >= mb)
            .max_by_key(|n| (n.free_mb(), std::cmp::Reverse(n.id)))
            .map(|n| n.id)
    }

    /// Starts creating a regular instance; `Ok(None)` means no node fits and
    /// the creation was deferred.
    pub fn admit_regular(
        &mut self,
        f: FunctionIdx,
        t: SimTime,
        delay: SimDuration,
        kernel: &mut Kernel,
    ) -> Result<Option<InstanceId>, KernelError> {
        let mb = self.memory_by_fn[f.index()] as u64;
        let Some(node) = self.place_regular(mb) else {
            self.deferrals += 1;
            return Ok(None);
        };
        let id = self.new_instance(f, node, InstanceKind::Regular, t);
        self.nodes[node.index()].allocated_mb += mb;
        self.regular_by_fn[f.index()].push(id);
        self.regular_created += 1;
        kernel.schedule(t + delay, EventKind::InstanceReady { instance: id })?;
        Ok(Some(id))
    }

    /// Starts an emergency instance bound to one invocation. With `fail_after`
    /// set, the worklet reports a failure after that timeout instead of readiness.
    #[allow(clippy::too_many_arguments)]
    pub fn admit_emergency(
        &mut self,
        f: FunctionIdx,
        node: NodeId,
        invocation: InvocationId,
        t: SimTime,
        delay: SimDuration,
        fail_after: Option<SimDuration>,
        kernel: &mut Kernel,
    ) -> Result<InstanceId, KernelError> {
        let id = self.new_instance(f, node, InstanceKind::Emergency, t);
        let mb = self.memory_by_fn[f.index()] as u64;
        let n = &mut self.nodes[node.index()];
        n.margin_mb += mb;
        n.margin_peak_mb = n.margin_peak_mb.max(n.margin_mb);
        self.emergency_created += 1;
        self.instance_mut(id).bound = Some(invocation);
        match fail_after {
            None => kernel.schedule(t + delay, EventKind::EmergencyReady { instance: id })?,
            Some(timeout) => kernel.schedule(t + timeout, EventKind::EmergencyFailed { instance: id })?,
        };
        Ok(id)
    }

    /// Creating → Idle. Returns the invocation bound to this instance, if any.
    pub fn mark_ready(&mut self, id: InstanceId, t: SimTime) -> Option<InvocationId> {
        let i = self.instance_mut(id);
        debug_assert_eq!(i.phase, Phase::Creating);
        i.phase = Phase::Idle;
        i.ready_at = Some(t);
        i.last_used_at = t;
        i.idle_since = Some(t);
        i.bound.take()
    }

    pub fn bind(&mut self, id: InstanceId, invocation: InvocationId) {
        let i = self.instance_mut(id);
        debug_assert!(i.bound.is_none());
        i.bound = Some(invocation);
    }

    /// Hands an invocation to a ready instance, cancelling any pending keep-alive expiry.
    pub fn assign(&mut self, id: InstanceId, invocation: InvocationId, t: SimTime, kernel: &mut Kernel) -> Assignment {
        let tc = self.concurrency_by_fn[self.instance(id).function.index()];
        let i = self.instance_mut(id);
        debug_assert!(matches!(i.phase, Phase::Idle | Phase::Busy));
        if let Some(h) = i.keepalive.take() {
            kernel.cancel(h);
        }
        i.last_used_at = t;
        if i.in_flight < tc {
            i.in_flight += 1;
            i.phase = Phase::Busy;
            i.idle_since = None;
            Assignment::Started
        } else {
            i.queue.push_back(invocation);
            Assignment::Queued
        }
    }

    pub fn complete_invocation(&mut self, id: InstanceId, t: SimTime) -> Completion {
        let i = self.instance_mut(id);
        debug_assert!(i.in_flight > 0);
        i.in_flight -= 1;
        i.served += 1;
        i.last_used_at = t;
        if i.kind == InstanceKind::Emergency {
            return Completion::Dispose;
        }
        if let Some(next) = i.queue.pop_front() {
            i.in_flight += 1;
            return Completion::Next(next);
        }
        if i.in_flight > 0 {
            return Completion::StillBusy;
        }
        i.phase = Phase::Idle;
        i.idle_since = Some(t);
        Completion::Idle
    }

    pub fn schedule_keepalive(
        &mut self,
        id: InstanceId,
        t: SimTime,
        keep_alive: SimDuration,
        kernel: &mut Kernel,
    ) -> Result<(), KernelError> {
        let h = kernel.schedule(t + keep_alive, EventKind::KeepAliveExpiry { instance: id })?;
        if let Some(old) = self.instance_mut(id).keepalive.replace(h) {
            kernel.cancel(old);
        }
        Ok(())
    }

    /// How long an idle instance has been idle at `t`.
    pub fn idle_for(&self, id: InstanceId, t: SimTime) -> Option<SimDuration> {
        let i = self.instance(id);
        (i.phase == Phase::Idle).then(|| t.saturating_since(i.idle_since.unwrap_or(t)))
    }

    /// Terminates an idle instance whose keep-alive has run out; stale expiries are no-ops.
    pub fn expire_keepalive(&mut self, id: InstanceId, t: SimTime, keep_alive: SimDuration, kernel: &mut Kernel) -> bool {
        match self.idle_for(id, t) {
            Some(idle) if idle >= keep_alive => {
                self.terminate(id, t, kernel);
                true
            }
            _ => false,
        }
    }

    pub fn terminate(&mut self, id: InstanceId, t: SimTime, kernel: &mut Kernel) {
        let (f, node, kind, mb) = {
            let i = self.instance_mut(id);
            debug_assert!(i.is_live(), "double termination of {id}");
            debug_assert!(i.in_flight == 0 && i.queue.is_empty(), "terminating busy instance {id}");
            if let Some(h) = i.keepalive.take() {
                kernel.cancel(h);
            }
            i.phase = Phase::Terminated;
            i.terminated_at = Some(t);
            i.idle_since = None;
            (i.function, i.node, i.kind, i.memory_mb as u64)
        };
        self.live.remove(&id);
        let n = &mut self.nodes[node.index()];
        n.resident.remove(&id);
        match kind {
            InstanceKind::Regular => {
                n.allocated_mb -= mb;
                self.regular_by_fn[f.index()].retain(|&x| x != id);
            }
            InstanceKind::Emergency => n.margin_mb -= mb,
        }
    }

    /// Marks a failed emergency instance and releases it.
    pub fn fail_emergency(&mut self, id: InstanceId, t: SimTime, kernel: &mut Kernel) -> Option<InvocationId> {
        let bound = {
            let i = self.instance_mut(id);
            i.failed = true;
            i.bound.take()
        };
        self.terminate(id, t, kernel);
        bound
    }

    /// Emergency instance readiness: starts its bound invocation.
    pub fn start_emergency(&mut self, id: InstanceId, t: SimTime) -> Option<InvocationId> {
        let i = self.instance_mut(id);
        i.phase = Phase::Busy;
        i.ready_at = Some(t);
        i.last_used_at = t;
        let inv = i.bound.take();
        if inv.is_some() {
            i.in_flight += 1;
        }
        inv
    }

    pub fn memory(&self) -> MemorySnapshot {
        let mut m = MemorySnapshot::default();
        for i in self.live() {
            let mb = i.memory_mb as u64;
            match (i.kind, i.in_flight > 0) {
                (InstanceKind::Regular, true) => m.busy_mb += mb,
                (InstanceKind::Regular, false) => m.idle_mb += mb,
                (InstanceKind::Emergency, busy) => {
                    m.emergency_mb += mb;
                    if busy {
                        m.emergency_busy_mb += mb;
                    }
                }
            }
        }
        m
    }

    /// Node meters must equal the footprints of live instances.
    pub fn check_memory_conservation(&self) -> Result<(), String> {
        let mut regular = vec![0u64; self.nodes.len()];
        let mut margin = vec![0u64; self.nodes.len()];
        for i in self.live() {
            match i.kind {
                InstanceKind::Regular => regular[i.node.index()] += i.memory_mb as u64,
                InstanceKind::Emergency => margin[i.node.index()] += i.memory_mb as u64,
            }
        }
        for n in &self.nodes {
            let k = n.id.index();
            if n.allocated_mb != regular[k] || n.margin_mb != margin[k] {
                return Err(format!(
                    "node {}: meters (regular {}, margin {}) disagree with live footprints (regular {}, margin {})",
                    n.id, n.allocated_mb, n.margin_mb, regular[k], margin[k]
                ));
            }
            if n.allocated_mb > n.memory_mb_capacity {
                return Err(format!("node {} over-allocated: {} > {}", n.id, n.allocated_mb, n.memory_mb_capacity));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Handler, SimEvent};
    use crate::rng::substream;

    fn functions(n: usize, mb: u32) -> Vec<FunctionSpec> {
        (0..n).map(|i| FunctionSpec { id: format!("f{i}"), memory_mb: mb, target_concurrency: 1 }).collect()
    }

    struct Collect(Vec<SimEvent>);
    impl Handler for Collect {
        type Error = KernelError;
        fn handle(&mut self, e: &SimEvent, _: &mut Kernel) -> Result<(), KernelError> {
            self.0.push(*e);
            Ok(())
        }
    }

    const F: FunctionIdx = FunctionIdx(0);

    #[test]
    fn breakdown_delay_is_component_sum() {
        let mut rng = substream(0, "c");
        assert_eq!(DelayModel::breakdown().sample_regular(&mut rng), SimDuration::from_millis(1250));
        assert_eq!(DelayModel::zero().sample_regular(&mut rng), SimDuration::ZERO);
    }

    #[test]
    fn lognormal_components_match_analytic_mean() {
        let sigmas = [0.3, 0.5, 0.2, 0.4];
        let medians = [500.0, 400.0, 250.0, 100.0];
        let model = DelayModel {
            regular: medians
                .iter()
                .zip(sigmas)
                .map(|(&m, s)| DelayComponent {
                    name: "c".into(),
                    dist: DelayDist::Lognormal { median_ms: m, sigma: s, min_ms: None, max_ms: None },
                })
                .collect(),
            ..DelayModel::breakdown()
        };
        let analytic: f64 = medians.iter().zip(sigmas).map(|(m, s)| m * (s * s / 2.0f64).exp()).sum();
        let mut rng = substream(4, "cluster");
        let n = 1000;
        let mean = (0..n).map(|_| model.sample_regular(&mut rng).as_millis_f64()).sum::<f64>() / n as f64;
        assert!((mean - analytic).abs() / analytic < 0.05, "{mean} vs {analytic}");
    }

    #[test]
    fn admit_regular_schedules_readiness_and_charges_memory() {
        let mut k = Kernel::new();
        let mut c = Cluster::new(2, 1000, 1024, 0, &functions(1, 256));
        let t = SimTime::from_secs(3);
        let id = c.admit_regular(F, t, SimDuration::from_millis(1250), &mut k).unwrap().unwrap();
        assert_eq!(c.instance(id).phase, Phase::Creating);
        assert_eq!(c.nodes.iter().map(|n| n.allocated_mb).sum::<u64>(), 256);
        let mut h = Collect(vec![]);
        k.run(SimTime::from_secs(10), &mut h).unwrap();
        assert_eq!(h.0[0].fire_at, SimTime::from_millis(4250));
        c.check_memory_conservation().unwrap();
    }

    #[test]
    fn regular_placement_spreads_and_defers_when_full() {
        let mut k = Kernel::new();
        let mut c = Cluster::new(2, 1000, 512, 0, &functions(1, 256));
        let ids: Vec<_> = (0..4).map(|_| c.admit_regular(F, SimTime::ZERO, SimDuration::ZERO, &mut k).unwrap().unwrap()).collect();
        let nodes: Vec<_> = ids.iter().map(|&i| c.instance(i).node.0).collect();
        assert_eq!(nodes, vec![0, 1, 0, 1]);
        assert_eq!(c.admit_regular(F, SimTime::ZERO, SimDuration::ZERO, &mut k).unwrap(), None);
        assert_eq!(c.deferrals, 1);
    }

    #[test]
    fn simultaneous_emergencies_are_independent() {
        let mut k = Kernel::new();
        let mut c = Cluster::new(1, 1000, 1024, 0, &functions(1, 128));
        let d = SimDuration::from_millis(150);
        c.admit_emergency(F, NodeId(0), InvocationId(0), SimTime::ZERO, d, None, &mut k).unwrap();
        c.admit_emergency(F, NodeId(0), InvocationId(1), SimTime::ZERO, d, None, &mut k).unwrap();
        let mut h = Collect(vec![]);
        k.run(SimTime::from_secs(1), &mut h).unwrap();
        assert!(h.0.iter().all(|e| e.fire_at == SimTime::from_millis(150)));
        assert_eq!(c.nodes[0].margin_mb, 256);
        assert_eq!(c.nodes[0].allocated_mb, 0);
    }

    #[test]
    fn keepalive_expiry_and_stale_expiry() {
        let mut k = Kernel::new();
        let mut c = Cluster::new(1, 1000, 1024, 0, &functions(1, 128));
        let ka = SimDuration::from_secs(60);
        let id = c.admit_regular(F, SimTime::ZERO, SimDuration::ZERO, &mut k).unwrap().unwrap();
        c.mark_ready(id, SimTime::ZERO);
        assert_eq!(c.assign(id, InvocationId(0), SimTime::ZERO, &mut k), Assignment::Started);
        let t0 = SimTime::from_secs(1);
        assert_eq!(c.complete_invocation(id, t0), Completion::Idle);
        c.schedule_keepalive(id, t0, ka, &mut k).unwrap();
        // reused 10s later: old expiry is stale
        let t1 = SimTime::from_secs(11);
        c.assign(id, InvocationId(1), t1, &mut k);
        assert!(!c.expire_keepalive(id, t0 + ka, ka, &mut k));
        assert_eq!(c.complete_invocation(id, t1), Completion::Idle);
        assert!(!c.expire_keepalive(id, SimTime::from_secs(70), ka, &mut k));
        assert!(c.expire_keepalive(id, SimTime::from_secs(71), ka, &mut k));
        assert_eq!(c.instance(id).phase, Phase::Terminated);
        assert_eq!(c.nodes[0].allocated_mb, 0);
        c.check_memory_conservation().unwrap();
    }

    #[test]
    fn queued_invocation_starts_on_completion() {
        let mut k = Kernel::new();
        let mut c = Cluster::new(1, 1000, 1024, 1, &functions(1, 128));
        let id = c.admit_regular(F, SimTime::ZERO, SimDuration::ZERO, &mut k).unwrap().unwrap();
        c.mark_ready(id, SimTime::ZERO);
        assert_eq!(c.assign(id, InvocationId(0), SimTime::ZERO, &mut k), Assignment::Started);
        assert!(c.can_accept(id));
        assert_eq!(c.assign(id, InvocationId(1), SimTime::ZERO, &mut k), Assignment::Queued);
        assert!(!c.can_accept(id));
        assert_eq!(c.complete_invocation(id, SimTime(5)), Completion::Next(InvocationId(1)));
        assert_eq!(c.instance(id).phase, Phase::Busy);
    }

    #[test]
    fn emergency_disposes_after_one() {
        let mut k = Kernel::new();
        let mut c = Cluster::new(1, 1000, 1024, 0, &functions(1, 128));
        let id = c.admit_emergency(F, NodeId(0), InvocationId(3), SimTime::ZERO, SimDuration::ZERO, None, &mut k).unwrap();
        assert_eq!(c.start_emergency(id, SimTime::ZERO), Some(InvocationId(3)));
        assert!(!c.can_accept(id));
        assert_eq!(c.complete_invocation(id, SimTime(9)), Completion::Dispose);
        c.terminate(id, SimTime(9), &mut k);
        assert_eq!(c.instance(id).served, 1);
        assert_eq!(c.nodes[0].margin_mb, 0);
    }
}
