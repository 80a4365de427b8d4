//! CSV trace and function-manifest files.
//!
//! Trace: `function_id,arrival_us,duration_us`.
//! Manifest: `function_id,memory_mb,target_concurrency`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{FunctionSpec, TraceEvent, Workload, WorkloadError};
use crate::ids::FunctionIdx;
use crate::time::{SimDuration, SimTime};

pub const TRACE_HEADER: &str = "function_id,arrival_us,duration_us";
pub const MANIFEST_HEADER: &str = "function_id,memory_mb,target_concurrency";

fn open(path: &Path) -> Result<File, WorkloadError> {
    File::open(path).map_err(|source| WorkloadError::Io { path: path.display().to_string(), source })
}

pub fn load_trace(trace: &Path, manifest: &Path) -> Result<Workload, WorkloadError> {
    parse_trace(
        open(trace)?,
        &trace.display().to_string(),
        open(manifest)?,
        &manifest.display().to_string(),
    )
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, file: &str, expected: &'static str) -> Result<(), WorkloadError> {
    let found = rdr
        .headers()
        .map_err(|e| WorkloadError::Row { file: file.into(), line: 1, message: e.to_string() })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if found != expected {
        return Err(WorkloadError::Header { file: file.into(), expected, found });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, file: &str, line: u64) -> Result<T, WorkloadError> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| WorkloadError::Row {
        file: file.into(),
        line,
        message: format!("{name}: cannot parse `{raw}`"),
    })
}

fn records<'a, R: Read + 'a>(
    rdr: &'a mut csv::Reader<R>,
    file: &str,
    width: usize,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord), WorkloadError>> + 'a {
    let file = file.to_string();
    rdr.records().map(move |r| {
        let rec = r.map_err(|e| WorkloadError::Row {
            file: file.clone(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(WorkloadError::Row {
                file: file.clone(),
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        Ok((line, rec))
    })
}

/// Parses a trace and its manifest from readers; names are only used in errors.
pub fn parse_trace<R1: Read, R2: Read>(
    trace: R1,
    trace_name: &str,
    manifest: R2,
    manifest_name: &str,
) -> Result<Workload, WorkloadError> {
    let mut functions = Vec::new();
    let mut index: HashMap<String, FunctionIdx> = HashMap::new();
    let mut mrdr = reader(manifest);
    check_header(&mut mrdr, manifest_name, MANIFEST_HEADER)?;
    for item in records(&mut mrdr, manifest_name, 3) {
        let (line, rec) = item?;
        let id = rec[0].to_string();
        let memory_mb: u32 = field(&rec, 1, "memory_mb", manifest_name, line)?;
        let target_concurrency: u32 = field(&rec, 2, "target_concurrency", manifest_name, line)?;
        let bad = |message: String| WorkloadError::Row { file: manifest_name.into(), line, message };
        if id.is_empty() {
            return Err(bad("empty function_id".into()));
        }
        if memory_mb == 0 {
            return Err(bad("memory_mb must be > 0".into()));
        }
        if target_concurrency == 0 {
            return Err(bad("target_concurrency must be >= 1".into()));
        }
        if index.insert(id.clone(), FunctionIdx::from(functions.len())).is_some() {
            return Err(bad(format!("duplicate function_id `{id}`")));
        }
        functions.push(FunctionSpec { id, memory_mb, target_concurrency });
    }

    let mut events = Vec::new();
    let mut trdr = reader(trace);
    check_header(&mut trdr, trace_name, TRACE_HEADER)?;
    for item in records(&mut trdr, trace_name, 3) {
        let (line, rec) = item?;
        let function = *index.get(&rec[0]).ok_or_else(|| WorkloadError::UnknownFunction {
            file: trace_name.into(),
            line,
            id: rec[0].to_string(),
        })?;
        let arrival: u64 = field(&rec, 1, "arrival_us", trace_name, line)?;
        let duration: u64 = field(&rec, 2, "duration_us", trace_name, line)?;
        if duration == 0 {
            return Err(WorkloadError::Row {
                file: trace_name.into(),
                line,
                message: "duration_us must be > 0".into(),
            });
        }
        events.push(TraceEvent { function, arrival: SimTime(arrival), duration: SimDuration(duration) });
    }
    Ok(Workload::new(functions, events))
}

pub fn write_trace_to<W1: Write, W2: Write>(workload: &Workload, trace: W1, manifest: W2) -> csv::Result<()> {
    let mut m = csv::Writer::from_writer(manifest);
    m.write_record(MANIFEST_HEADER.split(','))?;
    for f in &workload.functions {
        m.write_record([f.id.clone(), f.memory_mb.to_string(), f.target_concurrency.to_string()])?;
    }
    m.flush()?;
    let mut t = csv::Writer::from_writer(trace);
    t.write_record(TRACE_HEADER.split(','))?;
    for e in &workload.events {
        t.write_record([
            workload.functions[e.function.index()].id.as_str(),
            &e.arrival.0.to_string(),
            &e.duration.0.to_string(),
        ])?;
    }
    t.flush()?;
    Ok(())
}

pub fn write_trace(workload: &Workload, trace: &Path, manifest: &Path) -> Result<(), WorkloadError> {
    let create = |p: &Path| File::create(p).map_err(|source| WorkloadError::Io { path: p.display().to_string(), source });
    let tf = std::io::BufWriter::new(create(trace)?);
    let mf = std::io::BufWriter::new(create(manifest)?);
    write_trace_to(workload, tf, mf).map_err(|e| WorkloadError::Io {
        path: trace.display().to_string(),
        source: std::io::Error::other(e),
    })
}
