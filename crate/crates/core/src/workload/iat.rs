use std::collections::VecDeque;

use thiserror::Error;

use crate::ids::FunctionIdx;
use crate::time::{SimDuration, SimTime};

pub const DEFAULT_IAT_WINDOW: usize = 128;
pub const DEFAULT_IAT_MIN_SAMPLES: usize = 2;

#[derive(Debug, Error, PartialEq)]
#[error("quantile {0} outside [0, 1]")]
pub struct QuantileError(pub f64);

#[derive(Debug, Clone, Default)]
struct FunctionIats {
    last_arrival: Option<SimTime>,
    samples: VecDeque<u64>,
    arrivals: u64,
}

/// Sliding window of the most recent inter-arrival times of each function.
///
/// Zero gaps (simultaneous arrivals) are not stored, so every retained
/// sample is strictly positive.
#[derive(Debug, Clone)]
pub struct IatTracker {
    window: usize,
    min_samples: usize,
    functions: Vec<FunctionIats>,
}

impl IatTracker {
    pub fn new(function_count: usize, window: usize, min_samples: usize) -> Self {
        assert!(window > 0, "IAT window must hold at least one sample");
        IatTracker { window, min_samples: min_samples.max(1), functions: vec![FunctionIats::default(); function_count] }
    }

    pub fn with_defaults(function_count: usize) -> Self {
        Self::new(function_count, DEFAULT_IAT_WINDOW, DEFAULT_IAT_MIN_SAMPLES)
    }

    pub fn record_arrival(&mut self, function: FunctionIdx, t: SimTime) {
        let window = self.window;
        let f = &mut self.functions[function.index()];
        if let Some(last) = f.last_arrival {
            debug_assert!(t >= last, "arrivals must be recorded in time order");
            let gap = t.saturating_since(last).0;
            if gap > 0 {
                if f.samples.len() == window {
                    f.samples.pop_front();
                }
                f.samples.push_back(gap);
            }
        }
        f.last_arrival = Some(t);
        f.arrivals += 1;
    }

    pub fn arrivals(&self, function: FunctionIdx) -> u64 {
        self.functions[function.index()].arrivals
    }

    /// Retained samples, oldest first.
    pub fn samples(&self, function: FunctionIdx) -> impl Iterator<Item = SimDuration> + '_ {
        self.functions[function.index()].samples.iter().map(|&s| SimDuration(s))
    }

    /// Nearest-rank quantile of the retained window; `None` below the minimum sample count.
    pub fn quantile(&self, function: FunctionIdx, q: f64) -> Result<Option<SimDuration>, QuantileError> {
        if !(0.0..=1.0).contains(&q) {
            return Err(QuantileError(q));
        }
        let f = &self.functions[function.index()];
        if f.samples.len() < self.min_samples {
            return Ok(None);
        }
        let mut sorted: Vec<u64> = f.samples.iter().copied().collect();
        sorted.sort_unstable();
        Ok(Some(SimDuration(sorted[nearest_rank_index(sorted.len(), q)])))
    }
}

/// Zero-based index of the nearest-rank `q`-quantile in a sorted slice of length `n > 0`.
pub(crate) fn nearest_rank_index(n: usize, q: f64) -> usize {
    let rank = (q * n as f64).ceil() as usize;
    rank.clamp(1, n) - 1
}
