//! Concurrency measurement and window-averaged desired-count computation.

use std::collections::VecDeque;

use crate::time::{SimDuration, SimTime};

/// Time-weighted in-flight concurrency of one function.
///
/// Accumulates the integral of concurrency over time so each autoscaler
/// tick can read the exact mean over the interval since the previous tick.
#[derive(Debug, Clone, Default)]
pub struct LoadMeter {
    current: u32,
    area: u128,
    last_change: SimTime,
    area_at_tick: u128,
    last_tick: SimTime,
}

impl LoadMeter {
    fn advance(&mut self, t: SimTime) {
        debug_assert!(t >= self.last_change);
        self.area += self.current as u128 * t.saturating_since(self.last_change).0 as u128;
        self.last_change = t;
    }

    pub fn increment(&mut self, t: SimTime) {
        self.advance(t);
        self.current += 1;
    }

    pub fn decrement(&mut self, t: SimTime) {
        self.advance(t);
        debug_assert!(self.current > 0, "concurrency underflow");
        self.current = self.current.saturating_sub(1);
    }

    pub fn current(&self) -> u32 {
        self.current
    }

    /// Closes the interval ending at `t`, returning its span and concurrency-time area.
    pub fn close_interval(&mut self, t: SimTime) -> (SimDuration, u128) {
        self.advance(t);
        let span = t.saturating_since(self.last_tick);
        let area = self.area - self.area_at_tick;
        self.area_at_tick = self.area;
        self.last_tick = t;
        (span, area)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcurrencySample {
    pub end: SimTime,
    pub span: SimDuration,
    /// Concurrency integrated over the span, in invocation-microseconds.
    pub area: u128,
}

impl ConcurrencySample {
    pub fn mean(&self) -> f64 {
        if self.span.0 == 0 {
            0.0
        } else {
            self.area as f64 / self.span.0 as f64
        }
    }
}

/// Time-ordered interval samples covering at most one window.
#[derive(Debug, Clone)]
pub struct ConcurrencySeries {
    window: SimDuration,
    samples: VecDeque<ConcurrencySample>,
}

impl ConcurrencySeries {
    pub fn new(window: SimDuration) -> Self {
        assert!(window.0 > 0, "window must be positive");
        ConcurrencySeries { window, samples: VecDeque::new() }
    }

    pub fn window(&self) -> SimDuration {
        self.window
    }

    pub fn push(&mut self, sample: ConcurrencySample) {
        debug_assert!(self.samples.back().is_none_or(|s| s.end <= sample.end));
        let horizon = sample.end.0.saturating_sub(self.window.0);
        self.samples.push_back(sample);
        while self.samples.front().is_some_and(|s| s.end.0 <= horizon) {
            self.samples.pop_front();
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = &ConcurrencySample> {
        self.samples.iter()
    }

    pub fn last(&self) -> Option<&ConcurrencySample> {
        self.samples.back()
    }

    /// Mean concurrency over `(now - window, now]`; time before the first sample counts as zero.
    pub fn window_mean(&self, now: SimTime) -> f64 {
        let start = now.0.saturating_sub(self.window.0);
        let mut whole: u128 = 0;
        let mut partial = 0.0;
        for s in &self.samples {
            if s.end.0 <= start {
                continue;
            }
            let begin = s.end.0 - s.span.0;
            if begin >= start {
                whole += s.area;
            } else {
                partial += s.mean() * (s.end.0 - start) as f64;
            }
        }
        (whole as f64 + partial) / self.window.0 as f64
    }
}

/// `ceil`, tolerant of floating-point noise just above an integer.
pub fn ceil_count(x: f64) -> u32 {
    if x <= 0.0 {
        return 0;
    }
    (x - 1e-9).ceil().max(0.0) as u32
}

/// Instances needed for `concurrency` at `target_concurrency` per instance.
pub fn instances_for(concurrency: f64, target_concurrency: u32) -> u32 {
    ceil_count(concurrency / target_concurrency.max(1) as f64)
}

/// Window-averaged desired count. When the function has no instances, the
/// instantaneous concurrency is used so scale-from-zero does not wait for
/// the window average to build up.
pub fn window_desired(
    series: &ConcurrencySeries,
    now: SimTime,
    current_instances: usize,
    instantaneous: u32,
    target_concurrency: u32,
) -> u32 {
    let d = instances_for(series.window_mean(now), target_concurrency);
    scale_from_zero(d, current_instances, instantaneous, target_concurrency)
}

pub fn scale_from_zero(desired: u32, current_instances: usize, instantaneous: u32, target_concurrency: u32) -> u32 {
    if current_instances == 0 && instantaneous > 0 {
        desired.max(instances_for(instantaneous as f64, target_concurrency))
    } else {
        desired
    }
}
