//! Function tables, invocation traces, synthetic trace generation and
//! per-function inter-arrival-time tracking.

mod iat;
mod synthetic;
mod trace;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::FunctionIdx;
use crate::time::{SimDuration, SimTime};

pub use iat::{IatTracker, QuantileError, DEFAULT_IAT_MIN_SAMPLES, DEFAULT_IAT_WINDOW};
pub(crate) use iat::nearest_rank_index as iat_nearest_rank_index;
pub use synthetic::{
    generate_synthetic, BurstSpec, DurationSpec, Generated, IatFamily, IatSpec, LogUniform, RateClass,
    SyntheticWorkloadSpec,
};
pub use trace::{
    load_trace, parse_trace, write_trace, write_trace_to, MANIFEST_HEADER, TRACE_HEADER,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub id: String,
    pub memory_mb: u32,
    /// Invocations one instance executes at once.
    pub target_concurrency: u32,
}

/// One invocation as it appears in the trace. Outcomes live in the
/// simulation's invocation records, indexed by trace position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub function: FunctionIdx,
    pub arrival: SimTime,
    /// Pure execution time.
    pub duration: SimDuration,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Workload {
    pub functions: Vec<FunctionSpec>,
    /// Sorted by arrival; ties keep their original order.
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: expected header `{expected}`, found `{found}`")]
    Header { file: String, expected: &'static str, found: String },
    #[error("{file}:{line}: {message}")]
    Row { file: String, line: u64, message: String },
    #[error("{file}:{line}: unknown function id `{id}`")]
    UnknownFunction { file: String, line: u64, id: String },
    #[error("invalid synthetic workload spec: {0}")]
    Spec(String),
}

impl Workload {
    /// Builds a workload from raw parts, sorting events stably by arrival.
    pub fn new(functions: Vec<FunctionSpec>, mut events: Vec<TraceEvent>) -> Self {
        events.sort_by_key(|e| e.arrival);
        Workload { functions, events }
    }

    pub fn function_index(&self) -> HashMap<&str, FunctionIdx> {
        self.functions.iter().enumerate().map(|(i, f)| (f.id.as_str(), FunctionIdx::from(i))).collect()
    }

    pub fn function(&self, idx: FunctionIdx) -> &FunctionSpec {
        &self.functions[idx.index()]
    }

    /// Keeps only events that arrive strictly before `end`.
    pub fn truncated(&self, end: SimTime) -> Workload {
        Workload {
            functions: self.functions.clone(),
            events: self.events.iter().copied().filter(|e| e.arrival < end).collect(),
        }
    }
}
