//! Browser bindings. Each export returns a JSON string.

use std::cell::RefCell;
use std::collections::hash_map::Entry;
use std::collections::HashMap;

use faas_sim::bundled::Bundled;
use faas_sim::config::ExperimentConfig;
use faas_sim::experiment::run_on;
use faas_sim::metrics::MetricsReport;
use faas_sim::workload::Workload;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

thread_local! {
    static WORKLOADS: RefCell<HashMap<Bundled, Workload>> = RefCell::new(HashMap::new());
}

fn run(workload: &str, policy: &str, keep_alive_s: Option<f64>) -> Result<MetricsReport, String> {
    let bundled: Bundled = workload.parse()?;
    let mut v = json!({"workload": {"source": "bundled", "name": workload}, "policy.kind": policy});
    if let Some(ka) = keep_alive_s {
        v["policy.keep_alive_s"] = json!(ka);
    }
    if bundled == Bundled::Micro {
        v["run"] = json!({"horizon_s": 40, "warmup_s": 0});
    }
    let cfg = ExperimentConfig::from_value(v).map_err(|e| e.to_string())?;
    WORKLOADS.with(|cache| {
        let mut cache = cache.borrow_mut();
        let workload = match cache.entry(bundled) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(bundled.load().map_err(|e| e.to_string())?.workload),
        };
        run_on(&cfg, workload).map(|r| r.report).map_err(|e| e.to_string())
    })
}

/// Headline metrics of one run.
pub fn summary_json(workload: &str, policy: &str, keep_alive_s: Option<f64>) -> Result<String, String> {
    let r = run(workload, policy, keep_alive_s)?;
    let scalars: serde_json::Map<String, Value> = r.scalars().into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    Ok(Value::Object(scalars).to_string())
}

/// Slowdown and cost at each keep-alive value.
pub fn keep_alive_curve_json(workload: &str, policy: &str, keep_alive_s: &[f64]) -> Result<String, String> {
    let points = keep_alive_s
        .iter()
        .map(|&ka| {
            let r = run(workload, policy, Some(ka))?;
            Ok(json!({"keep_alive_s": ka, "slowdown": r.perf_slowdown_geomean_p99, "cost": r.normalized_cost}))
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(Value::Array(points).to_string())
}

/// Scheduling-delay CDF as `[quantile, delay_ms]` pairs.
pub fn delay_cdf_json(workload: &str, policy: &str) -> Result<String, String> {
    let r = run(workload, policy, None)?;
    let pts: Vec<Value> = r.sched_delay_cdf.iter().map(|&(q, us)| json!([q, us as f64 / 1000.0])).collect();
    Ok(Value::Array(pts).to_string())
}

#[wasm_bindgen]
pub fn simulate(workload: &str, policy: &str, keep_alive_s: Option<f64>) -> Result<String, JsError> {
    summary_json(workload, policy, keep_alive_s).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn keep_alive_curve(workload: &str, policy: &str, keep_alive_s: Vec<f64>) -> Result<String, JsError> {
    keep_alive_curve_json(workload, policy, &keep_alive_s).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn delay_cdf(workload: &str, policy: &str) -> Result<String, JsError> {
    delay_cdf_json(workload, policy).map_err(|e| JsError::new(&e))
}
