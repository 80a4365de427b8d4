//! Acceptance criteria A1-A10. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use faas_sim::bundled::Bundled;
use faas_sim::config::ExperimentConfig;
use faas_sim::engine::{simulate, SimSettings};
use faas_sim::expedited::FastPlacement;
use faas_sim::experiment::{invocations_csv, run_experiment, run_on, RunResult};
use faas_sim::ids::FunctionIdx;
use faas_sim::kernel::EVENT_LOG_HEADER;
use faas_sim::metrics::{MetricsReport, Track};
use faas_sim::policy::{window_desired, ConcurrencySample, ConcurrencySeries, PolicyConfig, PolicyKind};
use faas_sim::time::{SimDuration, SimTime};
use faas_sim::workload::{FunctionSpec, IatTracker, TraceEvent, Workload};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Verdict = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn check(pass: bool, detail: String) -> Verdict {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Bursty {
    workload: Workload,
}

impl Bursty {
    fn run(&self, overrides: Value) -> MetricsReport {
        self.result(overrides).report
    }

    fn result(&self, mut overrides: Value) -> RunResult {
        overrides["workload"] = json!({"source": "bundled", "name": "bursty"});
        let c = ExperimentConfig::from_value(overrides).expect("acceptance config");
        run_on(&c, &self.workload).expect("acceptance run")
    }
}

fn a1() -> Verdict {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let mut mismatched = Vec::new();
    for (kind, tag) in [("Sync", "sync"), ("AsyncWindow", "async_window"), ("DualTrack", "dual_track")] {
        let c = ExperimentConfig::from_value(json!({
            "workload": {"source": "bundled", "name": "micro"},
            "policy.kind": kind,
            "run": {"horizon_s": 40, "warmup_s": 0},
            "output.event_log": true,
        }))
        .unwrap();
        let r = run_experiment(&c).map_err(|e| e.to_string())?;
        let mut log = format!("{EVENT_LOG_HEADER}\n");
        for e in r.outcome.event_log.as_ref().unwrap() {
            log += &format!("{e}\n");
        }
        let read = |name: String| std::fs::read_to_string(golden.join(name)).unwrap_or_default();
        if invocations_csv(&r.outcome) != read(format!("micro_{tag}_invocations.csv"))
            || log != read(format!("micro_{tag}_events.csv"))
        {
            mismatched.push(kind);
        }
    }
    check(mismatched.is_empty(), format!("golden mismatches: {mismatched:?}"))
}

fn a2() -> Verdict {
    let w = Workload::new(
        vec![FunctionSpec { id: "f".into(), memory_mb: 256, target_concurrency: 1 }],
        vec![TraceEvent { function: FunctionIdx(0), arrival: SimTime::from_secs(1), duration: SimDuration::from_millis(100) }],
    );
    let delay = |kind| {
        let s = SimSettings::new(PolicyConfig::new(kind), SimTime::from_secs(10), SimTime::ZERO);
        let out = simulate(&w, &s).expect("single invocation");
        out.invocations[0].scheduling_delay().expect("served").as_secs_f64() * 1000.0
    };
    let (regular, emergency) = (delay(PolicyKind::Sync), delay(PolicyKind::DualTrack));
    let ratio = regular / emergency;
    check(emergency == 150.0 && ratio >= 8.0, format!("regular {regular} ms, emergency {emergency} ms, ratio {ratio:.2}"))
}

fn a3(b: &Bursty) -> Verdict {
    let r = b.run(json!({"policy.kind": "Sync", "policy.keep_alive_s": 600}));
    let creating = r.cold_start_fraction;
    check(
        (0.0002..=0.005).contains(&creating) && r.warm_exec_fraction >= 0.95,
        format!("creation-triggering {:.4}%, warm execution share {:.2}%", creating * 100.0, r.warm_exec_fraction * 100.0),
    )
}

fn a4(b: &Bursty) -> Verdict {
    let kas = [2, 6, 20, 60, 200, 600];
    let reports: Vec<MetricsReport> =
        kas.iter().map(|ka| b.run(json!({"policy.kind": "DualTrack", "policy.keep_alive_s": ka}))).collect();
    let cost: Vec<f64> = reports.iter().map(|r| r.normalized_cost).collect();
    let perf: Vec<f64> = reports.iter().map(|r| r.perf_slowdown_geomean_p99).collect();
    let monotone = cost.windows(2).all(|w| w[1] >= w[0] * 0.98);
    let early = perf[0] - perf[3];
    let late = perf[3] - perf[5];
    check(
        monotone && early > 0.0 && late < 0.25 * early,
        format!("cost {:.3?}; slowdown gain 2->60 {early:.3}, 60->600 {late:.3}", cost),
    )
}

fn a5(b: &Bursty) -> Verdict {
    let d = b.run(json!({"policy.kind": "DualTrack", "policy.keep_alive_s": 60, "policy.filter_quantile": 0.5}));
    let a = b.run(json!({"policy.kind": "AsyncWindow", "policy.window_s": 60}));
    let speedup = a.perf_slowdown_geomean_p99 / d.perf_slowdown_geomean_p99;
    let cost = d.normalized_cost / a.normalized_cost;
    check(speedup >= 1.5 && cost <= 1.05, format!("slowdown ratio {speedup:.3}, cost ratio {cost:.3}"))
}

fn a6(b: &Bursty) -> Verdict {
    let d = b.run(json!({"policy.kind": "DualTrack"}));
    let a = b.run(json!({"policy.kind": "AsyncWindow"}));
    let ratio = d.creation_rate_regular / a.creation_rate_regular;
    check(
        ratio <= 0.5,
        format!("regular creations/s {:.4} vs {:.4}, ratio {ratio:.3}", d.creation_rate_regular, a.creation_rate_regular),
    )
}

fn a7(b: &Bursty) -> Verdict {
    let on = b.run(json!({"policy.kind": "DualTrack", "policy.filter_quantile": 0.5}));
    let off = b.run(json!({"policy.kind": "DualTrack", "policy.filter_enabled": false}));
    let share = on.emergency_memory_time_mb_s / on.busy_memory_time_mb_s;
    check(
        off.counts.regular_creations > on.counts.regular_creations && off.normalized_cost > on.normalized_cost && share < 0.2,
        format!(
            "regular creations {} -> {}, cost {:.3} -> {:.3}, emergency/busy memory-time {share:.3}",
            on.counts.regular_creations, off.counts.regular_creations, on.normalized_cost, off.normalized_cost
        ),
    )
}

fn a8(b: &Bursty) -> Verdict {
    let delays = [100.0, 1000.0, 10_000.0, 100_000.0];
    let sweep = |kind: &str| -> Vec<f64> {
        delays
            .iter()
            .map(|ms| b.run(json!({"policy.kind": kind, "cluster.delay_model.regular_ms": ms})).perf_slowdown_geomean_p99)
            .collect()
    };
    let d = sweep("DualTrack");
    let a = sweep("AsyncWindow");
    let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let spread = hi / lo - 1.0;
    let degrade = a[2] / a[0];
    check(spread < 0.10 && degrade > 2.0, format!("DualTrack spread {:.2}%, AsyncWindow 0.1s->10s x{degrade:.2}", spread * 100.0))
}

fn a9() -> Verdict {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // determinism, memory closure (checked by the engine at every sample) and emergency single use
    let steady = Bundled::Steady.load().unwrap().workload;
    for kind in PolicyKind::all() {
        let c = ExperimentConfig::from_value(json!({
            "workload": {"source": "bundled", "name": "steady"},
            "policy.kind": format!("{kind:?}"),
            "cluster.delay_model.mode": "aggregate",
            "run": {"horizon_s": 900, "warmup_s": 300, "seed": 5},
        }))
        .unwrap();
        match (run_on(&c, &steady), run_on(&c, &steady)) {
            (Ok(x), Ok(y)) => {
                if x.report != y.report || x.outcome.digest != y.outcome.digest {
                    failures.push(format!("{kind:?} not deterministic"));
                }
                let mut seen = HashSet::new();
                let reused = x
                    .outcome
                    .invocations
                    .iter()
                    .filter(|r| r.track == Track::Emergency)
                    .any(|r| !seen.insert(r.instance));
                if reused || seen.len() as u64 != x.outcome.emergency_created {
                    failures.push(format!("{kind:?} emergency instances not single-use"));
                }
            }
            (Err(e), _) | (_, Err(e)) => failures.push(format!("{kind:?}: {e}")),
        }
    }

    // round-robin fairness
    for n in 1..=8 {
        let mut p = FastPlacement::new(n);
        for _ in 0..n * 37 {
            p.place(None);
        }
        if p.placements().iter().any(|&c| c != 37) {
            failures.push(format!("round-robin over {n} nodes uneven"));
        }
    }

    // nearest-rank quantile against a sort
    for _ in 0..200 {
        let mut tracker = IatTracker::new(1, 128, 2);
        let mut t = 0u64;
        let mut gaps = Vec::new();
        for _ in 0..rng.gen_range(2..300) {
            let g = rng.gen_range(1..5_000_000u64);
            if t > 0 || !gaps.is_empty() {
                gaps.push(g);
            }
            t += g;
            tracker.record_arrival(FunctionIdx(0), SimTime(t));
        }
        let mut window: Vec<u64> = gaps.iter().rev().take(128).copied().collect();
        window.sort_unstable();
        let q: f64 = rng.gen();
        let expected = if window.len() < 2 {
            None
        } else {
            let rank = ((q * window.len() as f64).ceil() as usize).clamp(1, window.len());
            Some(SimDuration(window[rank - 1]))
        };
        if tracker.quantile(FunctionIdx(0), q).unwrap() != expected {
            failures.push(format!("quantile {q} mismatch"));
            break;
        }
    }

    // autoscaler step input: mean 5(t-t0)/60 reaches 4.0 at +48s, first desired 5 at +50s
    let mut series = ConcurrencySeries::new(SimDuration::from_secs(60));
    let mut crossing = None;
    let mut first_five = None;
    for k in 1..=100u64 {
        let end = 2 * k;
        let mean = if end > 100 { 5 } else { 0 };
        series.push(ConcurrencySample {
            end: SimTime::from_secs(end),
            span: SimDuration::from_secs(2),
            area: mean * 2_000_000,
        });
        let now = SimTime::from_secs(end);
        if crossing.is_none() && series.window_mean(now) >= 4.0 {
            crossing = Some(end - 100);
        }
        if first_five.is_none() && window_desired(&series, now, 1, 5, 1) == 5 {
            first_five = Some(end - 100);
        }
    }
    if crossing != Some(48) || first_five != Some(50) {
        failures.push(format!("step crossing {crossing:?}, first desired 5 at {first_five:?}"));
    }

    check(failures.is_empty(), if failures.is_empty() { "all property checks hold".into() } else { failures.join("; ") })
}

fn a10(b: &Bursty) -> Verdict {
    let lr = b.run(json!({"policy.kind": "PredictiveLR"}));
    let a = b.run(json!({"policy.kind": "AsyncWindow"}));
    check(
        lr.creation_rate_mean > a.creation_rate_mean,
        format!("creations/s PredictiveLR {:.4} vs AsyncWindow {:.4}", lr.creation_rate_mean, a.creation_rate_mean),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let bursty = Bursty { workload: Bundled::Bursty.load().expect("bursty workload").workload };
    let criteria: Vec<Criterion> = vec![
        ("A1", Box::new(a1)),
        ("A2", Box::new(a2)),
        ("A3", Box::new(|| a3(&bursty))),
        ("A4", Box::new(|| a4(&bursty))),
        ("A5", Box::new(|| a5(&bursty))),
        ("A6", Box::new(|| a6(&bursty))),
        ("A7", Box::new(|| a7(&bursty))),
        ("A8", Box::new(|| a8(&bursty))),
        ("A9", Box::new(a9)),
        ("A10", Box::new(|| a10(&bursty))),
    ];
    let mut failed = 0;
    for (id, f) in criteria {
        let start = Instant::now();
        let verdict = f();
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(d) => println!("{id} PASS ({secs:.2}s) {d}"),
            Err(d) => {
                failed += 1;
                println!("{id} FAIL ({secs:.2}s) {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
