use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::MetricsFormat;
use crate::error::{Error, Result};
use crate::pipeline::{RoundDiagnostics, RunRecord};

pub const CSV_HEADER: &str = "round,loss,eval,power,wall_ms";

fn jsonl<T: Serialize, W: Write + ?Sized>(items: &[T], out: &mut W) -> Result<()> {
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<stream>", e))?;
    }
    Ok(())
}

/// Writes `records` to any sink. CSV always starts with the header row.
pub fn write_metrics<W: Write + ?Sized>(records: &[RunRecord], format: MetricsFormat, out: &mut W) -> Result<()> {
    match format {
        MetricsFormat::Jsonl => jsonl(records, out),
        MetricsFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_HEADER.split(','))
                .and_then(|_| records.iter().try_for_each(|r| w.serialize(r)))
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            w.flush().map_err(|e| Error::io("<stream>", e))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn emit_metrics(records: &[RunRecord], path: &Path, format: MetricsFormat) -> Result<()> {
    let mut out = create(path)?;
    write_metrics(records, format, &mut out).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        e => e,
    })?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Per-round diagnostics as JSONL.
pub fn emit_diagnostics(diagnostics: &[RoundDiagnostics], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    jsonl(diagnostics, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path, format: MetricsFormat) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        MetricsFormat::Jsonl => BufReader::new(file)
            .lines()
            .map(|line| {
                let line = line.map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&line).map_err(|e| Error::format(path, e.to_string()))
            })
            .collect(),
        MetricsFormat::Csv => {
            let mut r = csv::Reader::from_reader(file);
            let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?;
            if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
                return Err(Error::format(path, "unexpected header"));
            }
            r.deserialize().map(|row| row.map_err(|e| Error::format(path, e.to_string()))).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<RunRecord> {
        vec![
            RunRecord { round: 0, loss: 2.302585092994046, eval: 0.1, power: 0.1, wall_ms: 3 },
            RunRecord { round: 1, loss: 1.0 / 3.0, eval: 1e-17, power: f64::INFINITY, wall_ms: 7 },
        ]
    }

    #[test]
    fn empty_csv_is_header_only() {
        let mut buf = Vec::new();
        write_metrics(&[], MetricsFormat::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_metrics(&sample()[..1], MetricsFormat::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n0,2.302585092994046,0.1,0.1,3\n"));
    }

    #[test]
    fn jsonl_keys_in_order() {
        let mut buf = Vec::new();
        write_metrics(&sample(), MetricsFormat::Jsonl, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"round\":0,\"loss\":"));
        assert!(text.contains("\"power\":\"inf\""));
    }

    #[test]
    fn round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for format in [MetricsFormat::Csv, MetricsFormat::Jsonl] {
            let path = dir.path().join(format!("m-{format:?}"));
            emit_metrics(&sample(), &path, format).unwrap();
            assert_eq!(read_metrics(&path, format).unwrap(), sample());
        }
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = emit_metrics(&sample(), &blocker.join("out.csv"), MetricsFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
