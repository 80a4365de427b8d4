//! Synthetic traces: per-function renewal processes with optional bursts.
//!
//! Every function belongs to one rate class. Per-function parameters (mean
//! IAT, median duration, memory) are drawn once from the class ranges; the
//! arrival process of each function then runs on its own random stream.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use super::{FunctionSpec, TraceEvent, Workload, WorkloadError};
use crate::ids::FunctionIdx;
use crate::rng::{substream, SimRng};
use crate::time::{SimDuration, SimTime};

/// A range sampled log-uniformly; `min == max` pins the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogUniform {
    pub min: f64,
    pub max: f64,
}

impl LogUniform {
    pub fn fixed(v: f64) -> Self {
        LogUniform { min: v, max: v }
    }

    fn validate(&self, what: &str) -> Result<(), WorkloadError> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min > 0.0 && self.max >= self.min) {
            return Err(WorkloadError::Spec(format!("{what}: need 0 < min <= max, got [{}, {}]", self.min, self.max)));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut SimRng) -> f64 {
        if self.max == self.min {
            return self.min;
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        rng.gen_range(lo..hi).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum IatFamily {
    Exponential,
    Lognormal { sigma: f64 },
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IatSpec {
    #[serde(flatten)]
    pub family: IatFamily,
    /// Per-function mean inter-arrival time, in seconds.
    pub mean_s: LogUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationSpec {
    /// Per-function median execution time, in milliseconds.
    pub median_ms: LogUniform,
    /// Lognormal spread of individual invocations around the median; 0 makes them constant.
    #[serde(default)]
    pub sigma: f64,
}

/// With probability `prob`, an arrival is replaced by `size` back-to-back arrivals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstSpec {
    pub prob: f64,
    pub size_min: u32,
    pub size_max: u32,
    #[serde(default)]
    pub spacing_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateClass {
    pub name: String,
    pub weight: f64,
    pub iat: IatSpec,
    pub duration: DurationSpec,
    /// Footprint choices, drawn uniformly per function.
    pub memory_mb: Vec<u32>,
    #[serde(default = "one")]
    pub target_concurrency: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burst: Option<BurstSpec>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticWorkloadSpec {
    pub function_count: usize,
    pub horizon_s: f64,
    pub seed: u64,
    pub classes: Vec<RateClass>,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub workload: Workload,
    /// Class of each function, by function index.
    pub classes: Vec<usize>,
    pub warnings: Vec<String>,
}

impl SyntheticWorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let err = |m: String| Err(WorkloadError::Spec(m));
        if self.classes.is_empty() {
            return err("at least one rate class is required".into());
        }
        if !(self.horizon_s.is_finite() && self.horizon_s > 0.0) {
            return err(format!("horizon_s must be > 0, got {}", self.horizon_s));
        }
        let total: f64 = self.classes.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return err(format!("class weights sum to {total}, expected 1"));
        }
        for c in &self.classes {
            let ctx = |f: &str| format!("class `{}` {f}", c.name);
            if c.weight.is_nan() || c.weight < 0.0 {
                return err(ctx("weight must be >= 0"));
            }
            c.iat.mean_s.validate(&ctx("iat.mean_s"))?;
            if let IatFamily::Lognormal { sigma } = c.iat.family {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return err(ctx("iat sigma must be > 0"));
                }
            }
            c.duration.median_ms.validate(&ctx("duration.median_ms"))?;
            if !(c.duration.sigma.is_finite() && c.duration.sigma >= 0.0) {
                return err(ctx("duration.sigma must be >= 0"));
            }
            if c.memory_mb.is_empty() || c.memory_mb.contains(&0) {
                return err(ctx("memory_mb needs at least one positive choice"));
            }
            if c.target_concurrency == 0 {
                return err(ctx("target_concurrency must be >= 1"));
            }
            if let Some(b) = &c.burst {
                if !(0.0..=1.0).contains(&b.prob) || b.size_min == 0 || b.size_max < b.size_min || b.spacing_ms.is_nan() || b.spacing_ms < 0.0 {
                    return err(ctx("burst needs prob in [0,1], 1 <= size_min <= size_max, spacing_ms >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Largest-remainder split of `function_count` across classes by weight.
    pub fn class_counts(&self) -> Vec<usize> {
        let n = self.function_count;
        let exact: Vec<f64> = self.classes.iter().map(|c| c.weight * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
        let mut left = n.saturating_sub(counts.iter().sum());
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - counts[a] as f64;
            let fb = exact[b] - counts[b] as f64;
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

fn gap_sampler(family: IatFamily, mean_s: f64) -> Box<dyn FnMut(&mut SimRng) -> f64> {
    match family {
        IatFamily::Deterministic => Box::new(move |_| mean_s),
        IatFamily::Exponential => {
            let d = Exp::new(1.0 / mean_s).expect("validated rate");
            Box::new(move |rng| d.sample(rng))
        }
        IatFamily::Lognormal { sigma } => {
            let d = LogNormal::new(mean_s.ln() - sigma * sigma / 2.0, sigma).expect("validated lognormal");
            Box::new(move |rng| d.sample(rng))
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticWorkloadSpec) -> Result<Generated, WorkloadError> {
    spec.validate()?;
    let horizon = SimTime::from_secs_f64(spec.horizon_s);
    let mut params_rng = substream(spec.seed, "workload/params");
    let mut functions = Vec::with_capacity(spec.function_count);
    let mut classes = Vec::with_capacity(spec.function_count);
    let mut events = Vec::new();
    let mut warnings = Vec::new();

    for (ci, count) in spec.class_counts().into_iter().enumerate() {
        let class = &spec.classes[ci];
        for k in 0..count {
            let idx = FunctionIdx::from(functions.len());
            let mean_iat_s = class.iat.mean_s.sample(&mut params_rng);
            let median_ms = class.duration.median_ms.sample(&mut params_rng);
            let memory_mb = *class.memory_mb.choose(&mut params_rng).expect("validated non-empty");
            let id = format!("{}-{k:04}", class.name);

            let mut rng = substream(spec.seed, &format!("workload/fn/{}", idx.0));
            let mut next_gap = gap_sampler(class.iat.family, mean_iat_s);
            let dur = (class.duration.sigma > 0.0)
                .then(|| LogNormal::new(median_ms.ln(), class.duration.sigma).expect("validated lognormal"));
            let duration = |rng: &mut SimRng| {
                let ms = dur.as_ref().map_or(median_ms, |d| d.sample(rng));
                SimDuration(SimDuration::from_millis_f64(ms).0.max(1))
            };

            let before = events.len();
            let mut t = 0.0f64;
            loop {
                t += next_gap(&mut rng);
                let at = SimTime::from_secs_f64(t);
                if at > horizon {
                    break;
                }
                let size = match &class.burst {
                    Some(b) if b.prob > 0.0 && rng.gen_bool(b.prob) => rng.gen_range(b.size_min..=b.size_max),
                    _ => 1,
                };
                let spacing = class.burst.as_ref().map_or(0.0, |b| b.spacing_ms);
                for j in 0..size {
                    let at = at + SimDuration::from_millis_f64(spacing * j as f64);
                    if at > horizon {
                        break;
                    }
                    events.push(TraceEvent { function: idx, arrival: at, duration: duration(&mut rng) });
                }
            }
            if events.len() == before {
                let msg = format!("function `{id}` emits no arrivals before the {}s horizon", spec.horizon_s);
                log::warn!("{msg}");
                warnings.push(msg);
            }
            functions.push(FunctionSpec { id, memory_mb, target_concurrency: class.target_concurrency });
            classes.push(ci);
        }
    }
    Ok(Generated { workload: Workload::new(functions, events), classes, warnings })
}
