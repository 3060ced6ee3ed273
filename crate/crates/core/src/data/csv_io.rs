use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AuxKey, Trace};
use crate::error::{Error, Result};

/// Maps trace fields to CSV header names.
///
/// `timestamp` and `throughput` must be present. Aux entries are picked up
/// when the header contains them and skipped otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub timestamp: String,
    pub throughput: String,
    pub aux: BTreeMap<AuxKey, String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            timestamp: "timestamp".to_string(),
            throughput: "throughput_mbps".to_string(),
            aux: AuxKey::ALL
                .into_iter()
                .map(|k| (k, k.column().to_string()))
                .collect(),
        }
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Trace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".to_string());
    ingest_reader(file, &name, schema)
}

/// Reads a trace from any CSV source. Rows are sorted by timestamp before
/// validation; rows are numbered from 1 (the first data row) in errors.
pub fn ingest_reader<R: Read>(reader: R, name: &str, schema: &CsvSchema) -> Result<Trace> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
    let find = |col: &str| headers.iter().position(|h| h == col);

    let ts_idx =
        find(&schema.timestamp).ok_or_else(|| Error::MissingColumn(schema.timestamp.clone()))?;
    let thr_idx =
        find(&schema.throughput).ok_or_else(|| Error::MissingColumn(schema.throughput.clone()))?;
    let aux_cols: Vec<(AuxKey, usize, &str)> = schema
        .aux
        .iter()
        .filter_map(|(k, col)| find(col).map(|i| (*k, i, col.as_str())))
        .collect();

    let mut rows: Vec<(i64, f64, Vec<f64>)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let ts: i64 = field(ts_idx).parse().map_err(|e| Error::Parse {
            row,
            column: schema.timestamp.clone(),
            message: format!("{e}"),
        })?;
        let thr = parse_f64(field(thr_idx), row, &schema.throughput)?;
        if thr < 0.0 {
            return Err(Error::NegativeThroughput { row, value: thr });
        }
        let aux = aux_cols
            .iter()
            .map(|&(_, idx, col)| parse_f64(field(idx), row, col))
            .collect::<Result<Vec<_>>>()?;
        rows.push((ts, thr, aux));
    }

    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::NonMonotoneTimestamps(w[0].0));
    }

    let timestamps = rows.iter().map(|r| r.0).collect();
    let throughput = rows.iter().map(|r| r.1).collect();
    let aux = aux_cols
        .iter()
        .enumerate()
        .map(|(j, &(key, _, _))| (key, rows.iter().map(|r| r.2[j]).collect()))
        .collect();
    Trace::new(name, timestamps, throughput, aux)
}

fn parse_f64(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.parse().map_err(|e| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("{e}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("non-finite value `{raw}`"),
        });
    }
    Ok(v)
}

/// Writes a trace in the canonical CSV format (default column names).
pub fn write_csv<W: Write>(trace: &Trace, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp", "throughput_mbps"];
    header.extend(trace.aux().keys().map(|k| k.column()));
    wtr.write_record(&header)
        .map_err(|e| Error::Io(e.to_string()))?;
    for i in 0..trace.len() {
        let mut rec = vec![
            trace.timestamps()[i].to_string(),
            trace.throughput()[i].to_string(),
        ];
        rec.extend(trace.aux().values().map(|s| s[i].to_string()));
        wtr.write_record(&rec)
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}
