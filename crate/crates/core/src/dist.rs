//! Delay distributions used by the cluster and expedited-track models.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::time::SimDuration;

/// Parameters are in milliseconds; samples are rounded to whole microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayDist {
    Constant {
        ms: f64,
    },
    Uniform {
        low_ms: f64,
        high_ms: f64,
    },
    /// Lognormal with the given median; `min_ms`/`max_ms` truncate the support
    /// (out-of-range draws are rejected and redrawn).
    Lognormal {
        median_ms: f64,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_ms: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_ms: Option<f64>,
    },
}

const MAX_REJECTIONS: usize = 10_000;

impl DelayDist {
    pub fn constant_ms(ms: f64) -> Self {
        DelayDist::Constant { ms }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        match *self {
            DelayDist::Constant { ms } if !finite_nonneg(ms) => Err(format!("constant delay {ms} ms must be >= 0")),
            DelayDist::Uniform { low_ms, high_ms } if !(finite_nonneg(low_ms) && high_ms >= low_ms && high_ms.is_finite()) => {
                Err(format!("uniform delay needs 0 <= low_ms <= high_ms, got [{low_ms}, {high_ms}]"))
            }
            DelayDist::Lognormal { median_ms, sigma, min_ms, max_ms } => {
                if !(median_ms.is_finite() && median_ms > 0.0) {
                    return Err(format!("lognormal median_ms must be > 0, got {median_ms}"));
                }
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(format!("lognormal sigma must be >= 0, got {sigma}"));
                }
                let lo = min_ms.unwrap_or(0.0);
                let hi = max_ms.unwrap_or(f64::INFINITY);
                if !(lo >= 0.0 && hi > lo) {
                    return Err(format!("lognormal truncation needs 0 <= min_ms < max_ms, got [{lo}, {hi}]"));
                }
                if sigma == 0.0 && !(median_ms >= lo && median_ms <= hi) {
                    return Err("degenerate lognormal median lies outside its truncation range".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// True when sampling never consumes randomness.
    pub fn is_constant(&self) -> bool {
        matches!(self, DelayDist::Constant { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimDuration {
        let ms = match *self {
            DelayDist::Constant { ms } => ms,
            DelayDist::Uniform { low_ms, high_ms } => {
                if high_ms > low_ms {
                    rng.gen_range(low_ms..high_ms)
                } else {
                    low_ms
                }
            }
            DelayDist::Lognormal { median_ms, sigma, min_ms, max_ms } => {
                let d = LogNormal::new(median_ms.ln(), sigma).expect("validated lognormal");
                let lo = min_ms.unwrap_or(0.0);
                let hi = max_ms.unwrap_or(f64::INFINITY);
                let mut v = d.sample(rng);
                let mut tries = 0;
                while !(v >= lo && v <= hi) && tries < MAX_REJECTIONS {
                    v = d.sample(rng);
                    tries += 1;
                }
                v.clamp(lo, hi)
            }
        };
        SimDuration::from_millis_f64(ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn constant_and_uniform() {
        let mut rng = substream(0, "t");
        assert_eq!(DelayDist::constant_ms(150.0).sample(&mut rng), SimDuration::from_millis(150));
        let u = DelayDist::Uniform { low_ms: 10.0, high_ms: 20.0 };
        for _ in 0..1000 {
            let s = u.sample(&mut rng);
            assert!(s >= SimDuration::from_millis(10) && s <= SimDuration::from_millis(20));
        }
    }

    #[test]
    fn truncated_lognormal_respects_support() {
        let d = DelayDist::Lognormal { median_ms: 1000.0, sigma: 0.35, min_ms: Some(1000.0), max_ms: Some(3000.0) };
        d.validate().unwrap();
        let mut rng = substream(3, "t");
        for _ in 0..5000 {
            let s = d.sample(&mut rng).as_millis_f64();
            assert!((1000.0..=3000.0).contains(&s), "{s}");
        }
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(DelayDist::constant_ms(-1.0).validate().is_err());
        assert!(DelayDist::Uniform { low_ms: 5.0, high_ms: 1.0 }.validate().is_err());
        assert!(DelayDist::Lognormal { median_ms: 0.0, sigma: 1.0, min_ms: None, max_ms: None }.validate().is_err());
    }
}
