use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::MetricsReport;

pub const SUMMARY_HEADER: &str = "metric,value";
pub const PER_FUNCTION_HEADER: &str = "function_id,p99_slowdown,invocations,cold_starts,emergency_served";
pub const TIMESERIES_HEADER: &str = "t_s,busy_mb,idle_mb,emergency_mb,creations_regular,creations_emergency";
pub const SCHED_DELAY_CDF_HEADER: &str = "quantile,delay_us";

#[derive(Debug, thiserror::Error)]
#[error("{}: {source}", path.display())]
pub struct ExportError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<PathBuf, ExportError> {
    let path = dir.join(name);
    let wrap = |source| ExportError { path: path.clone(), source };
    let mut w = BufWriter::new(File::create(&path).map_err(wrap)?);
    body(&mut w).and_then(|_| w.flush()).map_err(wrap)?;
    Ok(path)
}

/// Writes the four report CSVs into `dir` and returns their paths.
pub fn export(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    std::fs::create_dir_all(dir).map_err(|source| ExportError { path: dir.to_path_buf(), source })?;
    let summary = write_file(dir, "summary.csv", |w| {
        writeln!(w, "{SUMMARY_HEADER}")?;
        for (k, v) in report.scalars() {
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    })?;
    let per_function = write_file(dir, "per_function.csv", |w| {
        writeln!(w, "{PER_FUNCTION_HEADER}")?;
        for f in &report.per_function {
            let p99 = f.p99_slowdown.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{}", f.function_id, p99, f.invocations, f.cold_starts, f.emergency_served)?;
        }
        Ok(())
    })?;
    let timeseries = write_file(dir, "timeseries.csv", |w| {
        writeln!(w, "{TIMESERIES_HEADER}")?;
        for s in &report.memory_series {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.t.as_secs_f64(),
                s.memory.busy_mb,
                s.memory.idle_mb,
                s.memory.emergency_mb,
                s.creations_regular,
                s.creations_emergency
            )?;
        }
        Ok(())
    })?;
    let cdf = write_file(dir, "sched_delay_cdf.csv", |w| {
        writeln!(w, "{SCHED_DELAY_CDF_HEADER}")?;
        for (q, d) in &report.sched_delay_cdf {
            writeln!(w, "{q},{d}")?;
        }
        Ok(())
    })?;
    Ok(vec![summary, per_function, timeseries, cdf])
}

/// Parses a `summary.csv` body back into `(metric, value)` pairs.
pub fn parse_summary(text: &str) -> Result<Vec<(String, f64)>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(SUMMARY_HEADER) => {}
        other => return Err(format!("expected header {SUMMARY_HEADER:?}, found {other:?}")),
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let (k, v) = l.split_once(',').ok_or_else(|| format!("line {}: missing comma", i + 2))?;
            let v = v.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

pub fn read_summary(path: &Path) -> Result<Vec<(String, f64)>, String> {
    let mut s = String::new();
    File::open(path).and_then(|mut f| f.read_to_string(&mut s)).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_summary(&s)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    fn report() -> MetricsReport {
        MetricsReport {
            perf_slowdown_geomean_p99: 1.0 / 3.0,
            per_function: vec![
                FunctionMetrics { function_id: "a".into(), p99_slowdown: Some(2.5), invocations: 3, cold_starts: 1, emergency_served: 0 },
                FunctionMetrics { function_id: "b".into(), p99_slowdown: None, invocations: 0, cold_starts: 0, emergency_served: 0 },
            ],
            normalized_cost: std::f64::consts::PI,
            creation_rate_mean: 1e-7,
            creation_rate_regular: 0.1 + 0.2,
            creation_rate_emergency: 0.0,
            memory_series: vec![],
            busy_memory_time_mb_s: 12345.678,
            idle_memory_time_mb_s: 0.5,
            emergency_memory_time_mb_s: 0.0,
            emergency_memory_fraction: 0.0,
            cpu_overhead_fraction: 0.012,
            warm_exec_fraction: 0.99,
            cold_start_fraction: 0.01,
            sched_delay_cdf: vec![],
            counts: Counts { invocations: 3, served: 3, cold_starts: 1, ..Default::default() },
        }
    }

    #[test]
    fn summary_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        export(&r, dir.path()).unwrap();
        let parsed = read_summary(&dir.path().join("summary.csv")).unwrap();
        let expected: Vec<(String, f64)> = r.scalars().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        assert_eq!(parsed.len(), expected.len());
        for ((k1, v1), (k2, v2)) in parsed.iter().zip(&expected) {
            assert_eq!(k1, k2);
            assert_eq!(v1.to_bits(), v2.to_bits(), "{k1}");
        }
    }

    #[test]
    fn empty_series_write_headers_only_and_reexport_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        let paths = export(&r, dir.path()).unwrap();
        let first: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(std::fs::read_to_string(dir.path().join("timeseries.csv")).unwrap(), format!("{TIMESERIES_HEADER}\n"));
        assert_eq!(std::fs::read_to_string(dir.path().join("sched_delay_cdf.csv")).unwrap(), format!("{SCHED_DELAY_CDF_HEADER}\n"));
        export(&r, dir.path()).unwrap();
        let second: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn missing_p99_is_blank() {
        let dir = tempfile::tempdir().unwrap();
        export(&report(), dir.path()).unwrap();
        let body = std::fs::read_to_string(dir.path().join("per_function.csv")).unwrap();
        assert!(body.contains("\nb,,0,0,0\n"));
    }

    #[test]
    fn io_error_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = export(&report(), &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"));
    }
}
