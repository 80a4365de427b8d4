//! Workloads shipped with the crate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ids::FunctionIdx;
use crate::time::{SimDuration, SimTime};
use crate::workload::{generate_synthetic, FunctionSpec, Generated, SyntheticWorkloadSpec, TraceEvent, Workload, WorkloadError};

const BURSTY: &str = include_str!("../data/bursty.json");
const STEADY: &str = include_str!("../data/steady.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bundled {
    /// Five invocations of one function; small enough to trace by hand.
    Micro,
    /// ~200 functions mixing hot, periodic, rare and bursty classes.
    Bursty,
    /// Renewal-only arrivals without bursts.
    Steady,
}

impl Bundled {
    pub const ALL: [Bundled; 3] = [Bundled::Micro, Bundled::Bursty, Bundled::Steady];

    pub fn name(self) -> &'static str {
        match self {
            Bundled::Micro => "micro",
            Bundled::Bursty => "bursty",
            Bundled::Steady => "steady",
        }
    }

    /// Generator spec, for the synthetic workloads.
    pub fn spec(self) -> Option<SyntheticWorkloadSpec> {
        let text = match self {
            Bundled::Micro => return None,
            Bundled::Bursty => BURSTY,
            Bundled::Steady => STEADY,
        };
        Some(serde_json::from_str(text).expect("bundled spec parses"))
    }

    pub fn load(self) -> Result<Generated, WorkloadError> {
        match self.spec() {
            Some(spec) => generate_synthetic(&spec),
            None => Ok(Generated { workload: micro(), classes: vec![0], warnings: Vec::new() }),
        }
    }
}

impl fmt::Display for Bundled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Bundled {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Bundled::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown bundled workload `{s}` (expected micro, bursty or steady)"))
    }
}

/// Arrivals at 1.0, 1.2, 4.0, 4.1 and 30 s.
pub fn micro() -> Workload {
    let ev = |arrival_ms: u64, duration_ms: u64| TraceEvent {
        function: FunctionIdx(0),
        arrival: SimTime::from_millis(arrival_ms),
        duration: SimDuration::from_millis(duration_ms),
    };
    Workload::new(
        vec![FunctionSpec { id: "micro".into(), memory_mb: 256, target_concurrency: 1 }],
        vec![ev(1000, 500), ev(1200, 500), ev(4000, 200), ev(4100, 300), ev(30_000, 100)],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for b in Bundled::ALL {
            assert_eq!(b.name().parse::<Bundled>().unwrap(), b);
        }
        assert!("nope".parse::<Bundled>().is_err());
    }

    #[test]
    fn specs_are_valid() {
        for b in [Bundled::Bursty, Bundled::Steady] {
            b.spec().unwrap().validate().unwrap();
        }
    }

    #[test]
    fn micro_has_five_invocations() {
        assert_eq!(micro().events.len(), 5);
    }
}
