//! Discrete-event kernel: virtual clock, ordered event queue and the run loop.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is assigned at scheduling
//! time, so simultaneous events dispatch in the order they were scheduled.
//! Cancellation is lazy: cancelled entries stay in the heap and are skipped
//! when popped.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ids::{FunctionIdx, InstanceId, InvocationId};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EventKind {
    Arrival { invocation: InvocationId },
    InstanceReady { instance: InstanceId },
    InvocationComplete { instance: InstanceId, invocation: InvocationId },
    KeepAliveExpiry { instance: InstanceId },
    AutoscalerTick,
    EmergencyReady { instance: InstanceId },
    EmergencyTeardown { instance: InstanceId },
    /// A worklet failed to bring an emergency instance up; raised after the detection timeout.
    EmergencyFailed { instance: InstanceId },
    MetricsSample,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Arrival { .. } => "Arrival",
            EventKind::InstanceReady { .. } => "InstanceReady",
            EventKind::InvocationComplete { .. } => "InvocationComplete",
            EventKind::KeepAliveExpiry { .. } => "KeepAliveExpiry",
            EventKind::AutoscalerTick => "AutoscalerTick",
            EventKind::EmergencyReady { .. } => "EmergencyReady",
            EventKind::EmergencyTeardown { .. } => "EmergencyTeardown",
            EventKind::EmergencyFailed { .. } => "EmergencyFailed",
            EventKind::MetricsSample => "MetricsSample",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            EventKind::Arrival { .. } => 0,
            EventKind::InstanceReady { .. } => 1,
            EventKind::InvocationComplete { .. } => 2,
            EventKind::KeepAliveExpiry { .. } => 3,
            EventKind::AutoscalerTick => 4,
            EventKind::EmergencyReady { .. } => 5,
            EventKind::EmergencyTeardown { .. } => 6,
            EventKind::EmergencyFailed { .. } => 7,
            EventKind::MetricsSample => 8,
        }
    }

    pub fn instance(&self) -> Option<InstanceId> {
        match *self {
            EventKind::InstanceReady { instance }
            | EventKind::InvocationComplete { instance, .. }
            | EventKind::KeepAliveExpiry { instance }
            | EventKind::EmergencyReady { instance }
            | EventKind::EmergencyTeardown { instance }
            | EventKind::EmergencyFailed { instance } => Some(instance),
            _ => None,
        }
    }

    pub fn invocation(&self) -> Option<InvocationId> {
        match *self {
            EventKind::Arrival { invocation } | EventKind::InvocationComplete { invocation, .. } => {
                Some(invocation)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimEvent {
    pub fire_at: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

/// Identifies a scheduled event for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// One dispatched event, annotated with the function it concerns when known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub t_us: u64,
    pub seq: u64,
    pub kind: &'static str,
    pub function: Option<FunctionIdx>,
    pub instance: Option<InstanceId>,
    pub invocation: Option<InvocationId>,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn opt<T: fmt::Display>(v: Option<T>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        write!(
            f,
            "{},{},{},{},{},{}",
            self.t_us,
            self.seq,
            self.kind,
            opt(self.function),
            opt(self.instance),
            opt(self.invocation)
        )
    }
}

pub const EVENT_LOG_HEADER: &str = "t_us,seq,kind,function,instance,invocation";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event {kind} scheduled at {at} but clock is already {now}")]
    ScheduleInPast { kind: &'static str, at: SimTime, now: SimTime },
}

/// A handler failure, tagged with the event that raised it.
#[derive(Debug, Error)]
#[error("{kind} event (seq {seq}) at {at} failed: {source}")]
pub struct RunError<E: std::error::Error + 'static> {
    pub at: SimTime,
    pub seq: u64,
    pub kind: &'static str,
    #[source]
    pub source: E,
}

pub trait Handler {
    type Error: std::error::Error + 'static;

    fn handle(&mut self, event: &SimEvent, kernel: &mut Kernel) -> Result<(), Self::Error>;

    /// Function associated with an event, used only to annotate the event log.
    fn function_of(&self, _event: &SimEvent) -> Option<FunctionIdx> {
        None
    }
}

#[derive(Debug, Default)]
pub struct Kernel {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<SimEvent>>,
    pending: HashSet<u64>,
    dispatched: u64,
    log: Option<Vec<LogEntry>>,
    digest: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_mix(mut h: u64, v: u64) -> u64 {
    for b in v.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

impl Kernel {
    pub fn new() -> Self {
        Kernel { digest: FNV_OFFSET, ..Default::default() }
    }

    /// Keeps the full dispatch log in memory (the running digest is always kept).
    pub fn with_event_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn log(&self) -> Option<&[LogEntry]> {
        self.log.as_deref()
    }

    pub fn take_log(&mut self) -> Option<Vec<LogEntry>> {
        self.log.take()
    }

    /// Order-sensitive hash over every dispatched `(time, seq, kind, payload)`.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn schedule(&mut self, fire_at: SimTime, kind: EventKind) -> Result<EventHandle, KernelError> {
        if fire_at < self.now {
            return Err(KernelError::ScheduleInPast { kind: kind.name(), at: fire_at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(SimEvent { fire_at, seq, kind }));
        self.pending.insert(seq);
        Ok(EventHandle(seq))
    }

    /// Returns `false` if the event already fired or was cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.pending.remove(&handle.0)
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        self.pending.contains(&handle.0)
    }

    fn pop_live(&mut self, until: SimTime) -> Option<SimEvent> {
        while let Some(Reverse(ev)) = self.queue.peek() {
            if ev.fire_at > until {
                return None;
            }
            let ev = *ev;
            self.queue.pop();
            if self.pending.remove(&ev.seq) {
                return Some(ev);
            }
        }
        None
    }

    /// Dispatches every live event with `fire_at <= until`, then leaves the clock at `until`.
    pub fn run<H: Handler>(&mut self, until: SimTime, handler: &mut H) -> Result<u64, RunError<H::Error>> {
        let start = self.dispatched;
        while let Some(ev) = self.pop_live(until) {
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            self.dispatched += 1;
            self.record(&ev, handler.function_of(&ev));
            handler.handle(&ev, self).map_err(|source| RunError {
                at: ev.fire_at,
                seq: ev.seq,
                kind: ev.kind.name(),
                source,
            })?;
        }
        if until > self.now {
            self.now = until;
        }
        Ok(self.dispatched - start)
    }

    fn record(&mut self, ev: &SimEvent, function: Option<FunctionIdx>) {
        let mut h = fnv_mix(self.digest, ev.fire_at.0);
        h = fnv_mix(h, ev.seq);
        h = fnv_mix(h, ev.kind.tag() as u64);
        h = fnv_mix(h, ev.kind.instance().map_or(u64::MAX, |i| i.0 as u64));
        h = fnv_mix(h, ev.kind.invocation().map_or(u64::MAX, |i| i.0 as u64));
        self.digest = h;
        if let Some(log) = self.log.as_mut() {
            log.push(LogEntry {
                t_us: ev.fire_at.0,
                seq: ev.seq,
                kind: ev.kind.name(),
                function,
                instance: ev.kind.instance(),
                invocation: ev.kind.invocation(),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[derive(Default)]
    struct Recorder {
        seen: Vec<(SimTime, u64)>,
    }

    impl Handler for Recorder {
        type Error = KernelError;

        fn handle(&mut self, event: &SimEvent, kernel: &mut Kernel) -> Result<(), KernelError> {
            assert_eq!(kernel.now(), event.fire_at);
            self.seen.push((event.fire_at, event.seq));
            Ok(())
        }
    }

    #[test]
    fn ties_dispatch_in_scheduling_order() {
        let mut k = Kernel::new();
        let a = k.schedule(SimTime(0), EventKind::AutoscalerTick).unwrap();
        let b = k.schedule(SimTime(0), EventKind::MetricsSample).unwrap();
        let mut r = Recorder::default();
        k.run(SimTime(10), &mut r).unwrap();
        assert_eq!(r.seen, vec![(SimTime(0), a.0), (SimTime(0), b.0)]);
    }

    #[test]
    fn earlier_time_dispatches_first() {
        let mut k = Kernel::new();
        k.schedule(SimTime(5), EventKind::AutoscalerTick).unwrap();
        k.schedule(SimTime(3), EventKind::AutoscalerTick).unwrap();
        let mut r = Recorder::default();
        k.run(SimTime(10), &mut r).unwrap();
        let times: Vec<_> = r.seen.iter().map(|(t, _)| t.0).collect();
        assert_eq!(times, vec![3, 5]);
    }

    #[test]
    fn scheduling_in_the_past_is_an_error() {
        let mut k = Kernel::new();
        k.run(SimTime(100), &mut Recorder::default()).unwrap();
        let err = k.schedule(SimTime(99), EventKind::MetricsSample).unwrap_err();
        assert!(matches!(err, KernelError::ScheduleInPast { .. }));
    }

    #[test]
    fn cancel_before_and_after_dispatch() {
        let mut k = Kernel::new();
        let h1 = k.schedule(SimTime(5), EventKind::AutoscalerTick).unwrap();
        let h2 = k.schedule(SimTime(6), EventKind::MetricsSample).unwrap();
        assert!(k.cancel(h1));
        assert!(!k.cancel(h1));
        let mut r = Recorder::default();
        k.run(SimTime(10), &mut r).unwrap();
        assert_eq!(r.seen, vec![(SimTime(6), h2.0)]);
        assert!(!k.cancel(h2));
    }

    #[test]
    fn empty_queue_advances_clock_to_until() {
        let mut k = Kernel::new();
        assert_eq!(k.run(SimTime(42), &mut Recorder::default()).unwrap(), 0);
        assert_eq!(k.now(), SimTime(42));
    }

    #[test]
    fn events_past_until_stay_queued() {
        let mut k = Kernel::new();
        k.schedule(SimTime(10), EventKind::Arrival { invocation: InvocationId(0) }).unwrap();
        let mut r = Recorder::default();
        k.run(SimTime(5), &mut r).unwrap();
        assert!(r.seen.is_empty());
        assert_eq!(k.now(), SimTime(5));
        assert_eq!(k.pending_len(), 1);
        k.run(SimTime(10), &mut r).unwrap();
        assert_eq!(r.seen.len(), 1);
    }

    struct Failing;
    #[derive(Debug, Error)]
    #[error("boom")]
    struct Boom;
    impl Handler for Failing {
        type Error = Boom;
        fn handle(&mut self, _: &SimEvent, _: &mut Kernel) -> Result<(), Boom> {
            Err(Boom)
        }
    }

    #[test]
    fn handler_error_identifies_event() {
        let mut k = Kernel::new();
        k.schedule(SimTime(7), EventKind::MetricsSample).unwrap();
        let err = k.run(SimTime(10), &mut Failing).unwrap_err();
        assert_eq!(err.at, SimTime(7));
        assert_eq!(err.kind, "MetricsSample");
    }

    /// Handler that reschedules follow-ups from a seeded stream, so the
    /// dispatch sequence depends on both the queue and the randomness.
    struct Chain {
        rng: ChaCha8Rng,
        remaining: u32,
    }

    impl Handler for Chain {
        type Error = KernelError;
        fn handle(&mut self, _: &SimEvent, kernel: &mut Kernel) -> Result<(), KernelError> {
            if self.remaining > 0 {
                self.remaining -= 1;
                let dt = self.rng.gen_range(0..1_000);
                kernel.schedule(SimTime(kernel.now().0 + dt), EventKind::AutoscalerTick)?;
            }
            Ok(())
        }
    }

    fn random_log(seed: u64) -> Vec<LogEntry> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut k = Kernel::new().with_event_log();
        for i in 0..10_000u32 {
            let t = rng.gen_range(0..1_000_000);
            k.schedule(SimTime(t), EventKind::Arrival { invocation: InvocationId(i) }).unwrap();
        }
        let mut h = Chain { rng, remaining: 5_000 };
        k.run(SimTime(u64::MAX / 2), &mut h).unwrap();
        k.take_log().unwrap()
    }

    #[test]
    fn replay_with_same_seed_is_identical() {
        let a = random_log(99);
        let b = random_log(99);
        assert_eq!(a.len(), 15_000);
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| (w[0].t_us, w[0].seq) < (w[1].t_us, w[1].seq)));
        assert_ne!(a, random_log(100));
    }
}
