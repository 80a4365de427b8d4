use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faas-sim")).args(args).env_remove("SIM_RUN__SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_json(dir: &Path, name: &str, v: Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

fn micro(kind: &str) -> Value {
    json!({
        "workload": {"source": "bundled", "name": "micro"},
        "policy": {"kind": kind},
        "run": {"horizon_s": 40, "warmup_s": 0},
        "output": {"invocations": true},
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_reports_matching_golden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "sync.json", micro("Sync"));
    let out = dir.path().join("out");
    let o = bin(&["run", "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    for f in ["summary.csv", "per_function.csv", "timeseries.csv", "sched_delay_cdf.csv", "effective_config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/micro_sync_invocations.csv");
    assert_eq!(fs::read_to_string(out.join("invocations.csv")).unwrap(), fs::read_to_string(golden).unwrap());
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "c.json", micro("DualTrack"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&bin(&["run", "--config", s(&cfg), "--out", s(&a), "--quiet"])), 0);
    assert_eq!(code(&bin(&["run", "--config", s(&cfg), "--out", s(&b), "--quiet"])), 0);
    for f in ["summary.csv", "per_function.csv", "timeseries.csv", "sched_delay_cdf.csv", "invocations.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "c.json", micro("Sync"));
    let out = dir.path().join("out");
    assert_eq!(code(&bin(&["run", "--config", s(&cfg), "--out", s(&out), "--seed", "42", "--quiet"])), 0);
    let eff: Value = serde_json::from_str(&fs::read_to_string(out.join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(eff["run"]["seed"], 42);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = micro("Sync");
    bad["run"] = json!({"horizon_s": 10, "warmup_s": 20});
    let horizon = write_json(dir.path(), "h.json", bad);
    let o = bin(&["run", "--config", s(&horizon), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));

    let mut unknown = micro("Sync");
    unknown["policy"]["keepalive"] = json!(5);
    let unknown = write_json(dir.path(), "u.json", unknown);
    assert_eq!(code(&bin(&["run", "--config", s(&unknown), "--out", s(dir.path())])), 2);
    assert_eq!(code(&bin(&["validate", "--config", s(&unknown)])), 2);
    assert_eq!(code(&bin(&["validate", "--config", s(&dir.path().join("missing.json"))])), 2);
}

#[test]
fn empty_window_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = micro("Sync");
    c["run"] = json!({"horizon_s": 40, "warmup_s": 35});
    let cfg = write_json(dir.path(), "c.json", c);
    assert_eq!(code(&bin(&["run", "--config", s(&cfg), "--out", s(dir.path()), "--quiet"])), 3);
}

#[test]
fn validate_prints_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "c.json", micro("AsyncWindow"));
    let o = bin(&["validate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0);
    let eff: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(eff["policy"]["kind"], "AsyncWindow");
    assert_eq!(eff["policy"]["keep_alive_s"], 2.0);
}

#[test]
fn sweep_flags_failed_points_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = micro("Sync");
    base["output"] = json!({"dir": s(&dir.path().join("default"))});
    let spec = write_json(
        dir.path(),
        "sweep.json",
        json!({"base": base, "axis": {"path": "run.warmup_s", "values": [0, 35, 5]}, "parallelism": 2}),
    );
    let o = bin(&["sweep", "--config", s(&spec), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("default/sweep.csv")).unwrap();
    let status: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(status, ["ok", "failed", "ok"]);
    assert!(csv.lines().next().unwrap().starts_with("axis_value,status,perf_slowdown_geomean_p99,normalized_cost"));
}

#[test]
fn compare_writes_tradeoff_and_rejects_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_json(dir.path(), "sync.json", micro("Sync"));
    let b = write_json(dir.path(), "dual.json", micro("DualTrack"));
    let out = dir.path().join("out");
    let o = bin(&["compare", "--config", s(&a), "--config", s(&b), "--out", s(&out), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("tradeoff.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("sync,Sync,600,"));
    assert!(rows[2].starts_with("dual,DualTrack,60,"));

    let mut other = micro("Sync");
    other["workload"] = json!({"source": "bundled", "name": "steady"});
    let c = write_json(dir.path(), "other.json", other);
    assert_eq!(code(&bin(&["compare", "--config", s(&a), "--config", s(&c), "--out", s(&out)])), 2);
}

#[test]
fn generated_trace_replays_like_the_bundled_workload() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("trace");
    let o = bin(&["gen-trace", "--bundled", "steady", "--out", s(&traces), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(traces.join("trace.csv")).unwrap().starts_with("function_id,arrival_us,duration_us\n"));

    let run = json!({"horizon_s": 900, "warmup_s": 300});
    let bundled = write_json(
        dir.path(),
        "b.json",
        json!({"workload": {"source": "bundled", "name": "steady"}, "run": run}),
    );
    let replay = write_json(
        dir.path(),
        "r.json",
        json!({"workload": {"source": "trace", "trace": "trace/trace.csv", "manifest": "trace/manifest.csv"}, "run": run}),
    );
    let (x, y) = (dir.path().join("x"), dir.path().join("y"));
    assert_eq!(code(&bin(&["run", "--config", s(&bundled), "--out", s(&x), "--quiet"])), 0);
    let o = bin(&["run", "--config", s(&replay), "--out", s(&y), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(x.join("summary.csv")).unwrap(), fs::read(y.join("summary.csv")).unwrap());
}

#[test]
fn gen_trace_from_spec_honours_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_json(
        dir.path(),
        "spec.json",
        json!({
            "function_count": 5, "horizon_s": 600, "seed": 1,
            "classes": [{
                "name": "hot", "weight": 1.0,
                "iat": {"family": "exponential", "mean_s": {"min": 5.0, "max": 20.0}},
                "duration": {"median_ms": {"min": 50.0, "max": 100.0}, "sigma": 0.3},
                "memory_mb": [128]
            }]
        }),
    );
    let gen = |seed: &str, out: &str| {
        let o = bin(&["gen-trace", "--config", s(&spec), "--seed", seed, "--out", s(&dir.path().join(out)), "--quiet"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.path().join(out).join("trace.csv")).unwrap()
    };
    assert_eq!(gen("3", "a"), gen("3", "b"));
    assert_ne!(gen("3", "a"), gen("4", "c"));
}
