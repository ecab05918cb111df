//! Trace files.
//!
//! JSONL: a header object on the first line (`method, lambda_ms, corruption, n`,
//! plus `cutoff_m` for frozen runs), then one record per line with fields
//! `index, e_ms, ell_ms, batch_size, correct`.
//!
//! CSV: the record columns with a header row; the header object lives in a
//! sidecar `<stem>.meta.json` next to the CSV file.
//!
//! Millisecond fields are read from their literal decimal text, so a file
//! value of `38.7` is exactly 38 700 000 ns.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde_json::value::RawValue;

use super::{BatchRecord, FrozenRun, MethodTrace, TraceBundle};
use crate::error::{Error, Result, TraceError};
use crate::time::{DecimalError, Nanos};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()? {
            "jsonl" | "ndjson" => Some(Format::Jsonl),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown trace format `{other}` (jsonl | csv)")),
        }
    }
}

/// Metadata carried by the first JSONL line or the CSV sidecar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceHeader {
    pub method: String,
    pub lambda: Nanos,
    pub corruption: Option<String>,
    pub n: Option<usize>,
    pub relaxed_sizes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrozenHeader {
    pub trace: TraceHeader,
    pub cutoff: usize,
}

type RawMap = BTreeMap<String, Box<RawValue>>;

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Field text with JSON string quotes removed.
fn raw_text(raw: &RawValue) -> std::result::Result<String, String> {
    let text = raw.get();
    if text.starts_with('"') {
        serde_json::from_str::<String>(text).map_err(|e| e.to_string())
    } else {
        Ok(text.to_string())
    }
}

fn decimal_err(row: usize, field: &'static str, e: DecimalError) -> TraceError {
    match e {
        DecimalError::Negative(_) => TraceError::NegativeValue { row, field },
        other => TraceError::InvalidNumber { row, field, reason: other.to_string() },
    }
}

fn parse_ms_field(text: &str, row: usize, field: &'static str) -> Result<Nanos, TraceError> {
    if text.is_empty() {
        return Err(TraceError::MissingField { row, field });
    }
    Nanos::parse_ms(text).map_err(|e| decimal_err(row, field, e))
}

fn parse_count(text: &str, row: usize, field: &'static str) -> Result<u64, TraceError> {
    let t = text.trim();
    if t.is_empty() {
        return Err(TraceError::MissingField { row, field });
    }
    if let Some(rest) = t.strip_prefix('-') {
        if rest.bytes().all(|b| b.is_ascii_digit()) && rest.bytes().any(|b| b != b'0') {
            return Err(TraceError::NegativeValue { row, field });
        }
    }
    t.parse::<u64>().map_err(|e| TraceError::InvalidNumber { row, field, reason: e.to_string() })
}

fn parse_u32(text: &str, row: usize, field: &'static str) -> Result<u32, TraceError> {
    let v = parse_count(text, row, field)?;
    u32::try_from(v).map_err(|e| TraceError::InvalidNumber { row, field, reason: e.to_string() })
}

/// Builds a record from field lookups; `get` returns `None` for absent fields.
fn record_from(
    row: usize,
    get: impl Fn(&'static str) -> Option<std::result::Result<String, String>>,
) -> Result<BatchRecord, TraceError> {
    let field = |name: &'static str| -> Result<String, TraceError> {
        match get(name) {
            None => Err(TraceError::MissingField { row, field: name }),
            Some(Err(reason)) => Err(TraceError::InvalidNumber { row, field: name, reason }),
            Some(Ok(text)) => Ok(text),
        }
    };
    let index = parse_count(&field("index")?, row, "index")? as usize;
    let e = parse_ms_field(&field("e_ms")?, row, "e_ms")?;
    let ell = parse_ms_field(&field("ell_ms")?, row, "ell_ms")?;
    let batch_size = parse_u32(&field("batch_size")?, row, "batch_size")?;
    let correct = parse_u32(&field("correct")?, row, "correct")?;
    Ok(BatchRecord { index, e, ell, batch_size, correct })
}

fn parse_header(map: &RawMap) -> Result<(TraceHeader, Option<usize>), TraceError> {
    let text = |key: &str| map.get(key).map(|raw| raw_text(raw));
    let method = match text("method") {
        Some(Ok(m)) if !m.is_empty() => m,
        Some(Ok(_)) | None => return Err(TraceError::Header("missing `method`".into())),
        Some(Err(e)) => return Err(TraceError::Header(format!("method: {e}"))),
    };
    let lambda = match text("lambda_ms") {
        Some(Ok(t)) => Nanos::parse_ms(&t).map_err(|e| TraceError::Header(format!("lambda_ms: {e}")))?,
        _ => return Err(TraceError::Header("missing `lambda_ms`".into())),
    };
    let corruption = match map.get("corruption") {
        Some(raw) if raw.get() == "null" => None,
        Some(raw) => Some(raw_text(raw).map_err(|e| TraceError::Header(format!("corruption: {e}")))?),
        None => None,
    };
    let int = |key: &str| -> Result<Option<usize>, TraceError> {
        match text(key) {
            None => Ok(None),
            Some(Ok(t)) if t == "null" => Ok(None),
            Some(Ok(t)) => t.parse::<usize>().map(Some).map_err(|e| TraceError::Header(format!("{key}: {e}"))),
            Some(Err(e)) => Err(TraceError::Header(format!("{key}: {e}"))),
        }
    };
    let n = int("n")?;
    let cutoff = int("cutoff_m")?;
    let relaxed_sizes = map.get("relaxed_sizes").is_some_and(|raw| raw.get() == "true");
    Ok((TraceHeader { method, lambda, corruption, n, relaxed_sizes }, cutoff))
}

fn header_json(header: &TraceHeader, cutoff: Option<usize>) -> String {
    let mut out = format!(
        "{{\"method\":{},\"lambda_ms\":{}",
        serde_json::Value::String(header.method.clone()),
        header.lambda.to_ms_string()
    );
    match &header.corruption {
        Some(c) => out.push_str(&format!(",\"corruption\":{}", serde_json::Value::String(c.clone()))),
        None => out.push_str(",\"corruption\":null"),
    }
    if let Some(n) = header.n {
        out.push_str(&format!(",\"n\":{n}"));
    }
    if let Some(m) = cutoff {
        out.push_str(&format!(",\"cutoff_m\":{m}"));
    }
    if header.relaxed_sizes {
        out.push_str(",\"relaxed_sizes\":true");
    }
    out.push('}');
    out
}

fn record_json(r: &BatchRecord) -> String {
    format!(
        "{{\"index\":{},\"e_ms\":{},\"ell_ms\":{},\"batch_size\":{},\"correct\":{}}}",
        r.index,
        r.e.to_ms_string(),
        r.ell.to_ms_string(),
        r.batch_size,
        r.correct
    )
}

fn read_jsonl(path: &Path) -> Result<(TraceHeader, Option<usize>, Vec<BatchRecord>)> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut header = None;
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let map: RawMap = serde_json::from_str(&line).map_err(|e| match header {
            None => Error::Trace(TraceError::Header(e.to_string())),
            Some(_) => Error::Trace(TraceError::Row { row: records.len() + 1, reason: e.to_string() }),
        })?;
        if header.is_none() {
            if !map.contains_key("method") {
                return Err(TraceError::Header("first line must be the trace header".into()).into());
            }
            header = Some(parse_header(&map)?);
            continue;
        }
        let row = records.len() + 1;
        records.push(record_from(row, |name| map.get(name).map(|raw| raw_text(raw)))?);
    }
    let (h, cutoff) = header.ok_or_else(|| TraceError::Header("empty file".into()))?;
    Ok((h, cutoff, records))
}

fn read_csv(path: &Path) -> Result<(TraceHeader, Option<usize>, Vec<BatchRecord>)> {
    let meta = fs::read_to_string(sidecar_path(path)).map_err(|e| Error::from(e).in_file(sidecar_path(path)))?;
    let map: RawMap = serde_json::from_str(&meta).map_err(|e| TraceError::Header(format!("sidecar: {e}")))?;
    let (header, cutoff) = parse_header(&map)?;

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let get = |name: &'static str| {
            columns.iter().position(|c| c == name).and_then(|pos| row.get(pos)).map(|s| Ok(s.to_string()))
        };
        records.push(record_from(row_no, get)?);
    }
    Ok((header, cutoff, records))
}

fn read_any(path: &Path, format: Format) -> Result<(TraceHeader, Option<usize>, Vec<BatchRecord>)> {
    match format {
        Format::Jsonl => read_jsonl(path),
        Format::Csv => read_csv(path),
    }
}

fn check_count(header: &TraceHeader, found: usize, expected: Option<usize>) -> Result<(), TraceError> {
    if let Some(declared) = expected.or(header.n) {
        if declared != found {
            return Err(TraceError::CountMismatch { declared, found });
        }
    }
    Ok(())
}

/// Loads and validates an adapted trace.
pub fn load_trace(path: impl AsRef<Path>, format: Format) -> Result<MethodTrace> {
    let path = path.as_ref();
    let inner = || -> Result<MethodTrace> {
        let (header, _, records) = read_any(path, format)?;
        check_count(&header, records.len(), None)?;
        let trace = if header.relaxed_sizes {
            MethodTrace::with_relaxed_sizes(header.method, header.lambda, header.corruption, records)?
        } else {
            MethodTrace::new(header.method, header.lambda, header.corruption, records)?
        };
        Ok(trace)
    };
    inner().map_err(|e| e.in_file(path))
}

/// Loads a frozen run file; its header `n` is the full stream length.
pub fn load_frozen(path: impl AsRef<Path>, format: Format) -> Result<(FrozenHeader, FrozenRun)> {
    let path = path.as_ref();
    let inner = || -> Result<(FrozenHeader, FrozenRun)> {
        let (header, cutoff, records) = read_any(path, format)?;
        let cutoff = cutoff.ok_or_else(|| TraceError::Header("missing `cutoff_m`".into()))?;
        if let Some(n) = header.n {
            check_count(&header, records.len(), Some(n.saturating_sub(cutoff)))?;
        }
        let run = FrozenRun::new(cutoff, records)?;
        Ok((FrozenHeader { trace: header, cutoff }, run))
    };
    inner().map_err(|e| e.in_file(path))
}

fn format_of(path: &Path) -> Result<Format> {
    Format::from_path(path).ok_or_else(|| {
        Error::Trace(TraceError::Header("unknown file extension (expected .jsonl or .csv)".into())).in_file(path)
    })
}

/// Loads every trace and attaches the frozen runs whose header names the
/// same method and corruption. A trace that fails to load or to accept a
/// matching run is reported in place; a frozen file that fails to load is
/// an error for the whole set.
pub fn load_bundles(traces: &[PathBuf], frozen: &[PathBuf]) -> Result<Vec<(PathBuf, Result<TraceBundle>)>> {
    let runs = frozen.iter().map(|p| load_frozen(p, format_of(p)?)).collect::<Result<Vec<_>>>()?;
    Ok(traces
        .iter()
        .map(|path| {
            let bundle = (|| {
                let trace = load_trace(path, format_of(path)?)?;
                let mut bundle = TraceBundle::new(trace);
                for (header, run) in &runs {
                    let t = bundle.adapted();
                    if header.trace.method == t.method() && header.trace.corruption.as_deref() == t.corruption() {
                        bundle.insert_frozen(run.clone()).map_err(|e| Error::from(e).in_file(path))?;
                    }
                }
                Ok(bundle)
            })();
            (path.clone(), bundle)
        })
        .collect())
}

fn header_of(trace: &MethodTrace) -> TraceHeader {
    TraceHeader {
        method: trace.method().to_string(),
        lambda: trace.lambda(),
        corruption: trace.corruption().map(str::to_string),
        n: Some(trace.len()),
        relaxed_sizes: trace.relaxed_sizes(),
    }
}

fn write_records(path: &Path, format: Format, header_line: String, records: &[BatchRecord]) -> Result<()> {
    match format {
        Format::Jsonl => {
            let mut out = std::io::BufWriter::new(fs::File::create(path)?);
            writeln!(out, "{header_line}")?;
            for r in records {
                writeln!(out, "{}", record_json(r))?;
            }
            out.flush()?;
        }
        Format::Csv => {
            fs::write(sidecar_path(path), format!("{header_line}\n"))?;
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["index", "e_ms", "ell_ms", "batch_size", "correct"])?;
            for r in records {
                w.write_record([
                    r.index.to_string(),
                    r.e.to_ms_string(),
                    r.ell.to_ms_string(),
                    r.batch_size.to_string(),
                    r.correct.to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn write_trace(trace: &MethodTrace, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let header = header_json(&header_of(trace), None);
    write_records(path.as_ref(), format, header, trace.records())
}

/// Writes a frozen run for `trace`'s stream (method, lambda and N come from it).
pub fn write_frozen(trace: &MethodTrace, run: &FrozenRun, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let mut header = header_of(trace);
    header.relaxed_sizes = false;
    let line = header_json(&header, Some(run.cutoff()));
    write_records(path.as_ref(), format, line, run.records())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::tests::rec;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const HEADER: &str = r#"{"method":"ETA","lambda_ms":39.9,"corruption":"gaussian_noise","n":2}"#;

    #[test]
    fn loads_jsonl_with_exact_decimal_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"index":1,"e_ms":38.7,"ell_ms":0,"batch_size":64,"correct":12}"#,
            r#"{"index":2,"e_ms":41.1,"ell_ms":56.6,"batch_size":64,"correct":30}"#
        );
        let p = write(dir.path(), "t.jsonl", &body);
        let t = load_trace(&p, Format::Jsonl).unwrap();
        assert_eq!(t.method(), "ETA");
        assert_eq!(t.lambda(), Nanos(39_900_000));
        assert_eq!(t.corruption(), Some("gaussian_noise"));
        assert_eq!(t.records()[0].e, Nanos(38_700_000));
        assert_eq!(t.records()[0].accuracy(), 0.1875);
        assert_eq!(t.records()[1].ell, Nanos(56_600_000));
    }

    fn load_err(body: &str) -> TraceError {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t.jsonl", body);
        match load_trace(&p, Format::Jsonl).unwrap_err() {
            Error::File { source, .. } => match *source {
                Error::Trace(t) => t,
                other => panic!("unexpected {other}"),
            },
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn each_validation_failure_is_distinct() {
        let h = r#"{"method":"m","lambda_ms":40}"#;
        let ok = r#"{"index":1,"e_ms":1,"ell_ms":0,"batch_size":4,"correct":1}"#;
        assert_eq!(
            load_err(&format!("{h}\n{}\n", r#"{"index":1,"ell_ms":0,"batch_size":4,"correct":1}"#)),
            TraceError::MissingField { row: 1, field: "e_ms" }
        );
        assert_eq!(
            load_err(&format!("{h}\n{ok}\n{}\n", r#"{"index":3,"e_ms":1,"ell_ms":0,"batch_size":4,"correct":1}"#)),
            TraceError::NonContiguousIndex { row: 2, expected: 2, found: 3 }
        );
        assert_eq!(
            load_err(&format!("{h}\n{}\n", r#"{"index":1,"e_ms":-1.5,"ell_ms":0,"batch_size":4,"correct":1}"#)),
            TraceError::NegativeValue { row: 1, field: "e_ms" }
        );
        assert_eq!(
            load_err(&format!("{h}\n{}\n", r#"{"index":1,"e_ms":1,"ell_ms":0,"batch_size":4,"correct":-1}"#)),
            TraceError::NegativeValue { row: 1, field: "correct" }
        );
        assert_eq!(
            load_err(&format!("{h}\n{}\n", r#"{"index":1,"e_ms":1,"ell_ms":0,"batch_size":4,"correct":5}"#)),
            TraceError::CorrectExceedsBatch { row: 1, correct: 5, batch_size: 4 }
        );
        assert!(matches!(load_err(&format!("{ok}\n")), TraceError::Header(_)));
        assert_eq!(
            load_err(&format!("{}\n{ok}\n", r#"{"method":"m","lambda_ms":40,"n":3}"#)),
            TraceError::CountMismatch { declared: 3, found: 1 }
        );
    }

    #[test]
    fn csv_reads_sidecar_and_reports_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "t.meta.json", r#"{"method":"m","lambda_ms":"39.9"}"#);
        let p = write(dir.path(), "t.csv", "index,e_ms,ell_ms,batch_size,correct\n1,38.7,0,64,12\n2,38.7,,64,12\n");
        let err = load_trace(&p, Format::Csv).unwrap_err();
        assert!(err.to_string().contains("missing field `ell_ms` at row 2"), "{err}");
    }

    #[test]
    fn frozen_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let trace =
            MethodTrace::new("m", Nanos::from_ms(40), None, (1..=4).map(|i| rec(i, 40, 5, 8, 3)).collect()).unwrap();
        let run = FrozenRun::new(2, vec![rec(3, 39, 0, 8, 1), rec(4, 39, 0, 8, 2)]).unwrap();
        for (name, format) in [("f.jsonl", Format::Jsonl), ("f.csv", Format::Csv)] {
            let p = dir.path().join(name);
            write_frozen(&trace, &run, &p, format).unwrap();
            let (header, back) = load_frozen(&p, format).unwrap();
            assert_eq!(header.cutoff, 2);
            assert_eq!(header.trace.n, Some(4));
            assert_eq!(back, run);
        }
    }

    fn arb_trace() -> impl Strategy<Value = MethodTrace> {
        (
            1u64..100_000_000,
            prop::option::of("[a-z_]{1,12}"),
            any::<bool>(),
            prop::collection::vec((0u64..500_000_000, 0u64..500_000_000, 1u32..256, 0.0f64..=1.0), 1..40),
        )
            .prop_map(|(lambda, corruption, relaxed, rows)| {
                let records = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (e, ell, size, frac))| {
                        let size = if relaxed { size } else { 64 };
                        BatchRecord {
                            index: i + 1,
                            e: Nanos(e),
                            ell: Nanos(ell),
                            batch_size: size,
                            correct: (frac * f64::from(size)) as u32,
                        }
                    })
                    .collect();
                if relaxed {
                    MethodTrace::with_relaxed_sizes("Method \"x\"", Nanos(lambda), corruption, records).unwrap()
                } else {
                    MethodTrace::new("SHOT-IM", Nanos(lambda), corruption, records).unwrap()
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn write_then_load_is_identity(trace in arb_trace()) {
            let dir = tempfile::tempdir().unwrap();
            for (name, format) in [("t.jsonl", Format::Jsonl), ("t.csv", Format::Csv)] {
                let p = dir.path().join(name);
                write_trace(&trace, &p, format).unwrap();
                prop_assert_eq!(&load_trace(&p, format).unwrap(), &trace);
            }
        }
    }
}
