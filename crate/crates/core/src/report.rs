//! Aggregation of bench records into per-(profile, size, metric) rows, with
//! CSV and whitespace-table output.
//!
//! Statistics are computed over values sorted ascending, so identical inputs
//! give identical bytes regardless of record order. Floats are written with
//! the shortest representation that parses back to the same value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::bench::{BenchRecord, Metric};

pub const CSV_HEADER: [&str; 9] = [
    "profile",
    "payload_size",
    "metric",
    "n",
    "mean",
    "median",
    "p95",
    "drop_rate",
    "ratio_vs_none",
];
pub const RECORD_HEADER: [&str; 8] = [
    "profile",
    "payload_size",
    "metric",
    "value",
    "packets_sent",
    "packets_received",
    "repetition",
    "timestamp_us",
];
pub const BASELINE_PROFILE: &str = "none";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to aggregate")]
    EmptyInput,
    #[error("no {BASELINE_PROFILE} throughput row for {0}-byte payloads")]
    MissingBaseline(usize),
    #[error("bad CSV: {0}")]
    Parse(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for ReportError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => ReportError::Io(io),
            other => ReportError::Parse(format!("{other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub profile: String,
    pub payload_size: usize,
    pub metric: Metric,
    /// Number of non-dropped values.
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub p95: Option<f64>,
    pub drop_rate: f64,
    pub ratio_vs_none: Option<f64>,
}

/// Mean of the two middle values for even counts.
pub fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Nearest-rank percentile: the ⌈p·n⌉-th smallest value.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn aggregate(records: &[BenchRecord]) -> Result<Vec<ReportRow>, ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let mut groups: BTreeMap<(&str, usize, Metric), Vec<&BenchRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.profile.as_str(), r.payload_size, r.metric))
            .or_default()
            .push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((profile, payload_size, metric), group)| {
            let mut values: Vec<f64> = group.iter().filter_map(|r| r.value).collect();
            values.sort_by(f64::total_cmp);
            let drop_rate = match metric {
                Metric::Latency => (group.len() - values.len()) as f64 / group.len() as f64,
                Metric::Throughput => {
                    let sent: u64 = group.iter().map(|r| r.packets_sent).sum();
                    let received: u64 = group.iter().map(|r| r.packets_received).sum();
                    if sent == 0 {
                        0.0
                    } else {
                        1.0 - received as f64 / sent as f64
                    }
                }
            };
            ReportRow {
                profile: profile.to_owned(),
                payload_size,
                metric,
                n: values.len(),
                mean: mean(&values),
                median: median(&values),
                p95: percentile(&values, 0.95),
                drop_rate,
                ratio_vs_none: None,
            }
        })
        .collect())
}

/// Fills `ratio_vs_none` on throughput rows with `mean / baseline mean`.
/// The ratio stays empty when the baseline has no values or a zero mean.
pub fn ratio_vs_none(rows: &mut [ReportRow]) -> Result<(), ReportError> {
    let baseline: BTreeMap<usize, Option<f64>> = rows
        .iter()
        .filter(|r| r.metric == Metric::Throughput && r.profile == BASELINE_PROFILE)
        .map(|r| (r.payload_size, r.mean))
        .collect();
    for row in rows.iter_mut().filter(|r| r.metric == Metric::Throughput) {
        let base = baseline
            .get(&row.payload_size)
            .ok_or(ReportError::MissingBaseline(row.payload_size))?;
        row.ratio_vs_none = match (row.mean, base) {
            (Some(m), Some(b)) if *b != 0.0 => Some(m / b),
            _ => None,
        };
    }
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_cell<T: std::str::FromStr>(field: &str, name: &str) -> Result<T, ReportError> {
    field
        .parse()
        .map_err(|_| ReportError::Parse(format!("bad {name} value {field:?}")))
}

fn parse_opt(field: &str, name: &str) -> Result<Option<f64>, ReportError> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_cell(field, name).map(Some)
    }
}

pub fn write_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.profile.clone(),
            r.payload_size.to_string(),
            r.metric.to_string(),
            r.n.to_string(),
            cell(r.mean),
            cell(r.median),
            cell(r.p95),
            r.drop_rate.to_string(),
            cell(r.ratio_vs_none),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(rows: &[ReportRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

pub fn emit_csv(rows: &[ReportRow], path: &Path) -> Result<(), ReportError> {
    write_csv(rows, std::fs::File::create(path)?)
}

fn check_header(reader: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<(), ReportError> {
    let header = reader.headers()?;
    if header.iter().ne(want.iter().copied()) {
        return Err(ReportError::Parse(format!("unexpected header {header:?}")));
    }
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ReportRow>, ReportError> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &CSV_HEADER)?;
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(ReportRow {
                profile: rec[0].to_owned(),
                payload_size: parse_cell(&rec[1], "payload_size")?,
                metric: rec[2].parse().map_err(ReportError::Parse)?,
                n: parse_cell(&rec[3], "n")?,
                mean: parse_opt(&rec[4], "mean")?,
                median: parse_opt(&rec[5], "median")?,
                p95: parse_opt(&rec[6], "p95")?,
                drop_rate: parse_cell(&rec[7], "drop_rate")?,
                ratio_vs_none: parse_opt(&rec[8], "ratio_vs_none")?,
            })
        })
        .collect()
}

/// Whitespace-separated columns with a `#` header line; absent values are
/// written as `NaN` so plotting tools skip them.
pub fn to_table(rows: &[ReportRow]) -> String {
    let mut out = format!("# {}\n", CSV_HEADER.join(" "));
    let nan = |v: Option<f64>| v.map_or_else(|| "NaN".to_owned(), |x| x.to_string());
    for r in rows {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {}",
            r.profile,
            r.payload_size,
            r.metric,
            r.n,
            nan(r.mean),
            nan(r.median),
            nan(r.p95),
            r.drop_rate,
            nan(r.ratio_vs_none),
        );
    }
    out
}

pub fn write_records<W: Write>(records: &[BenchRecord], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.profile.clone(),
            r.payload_size.to_string(),
            r.metric.to_string(),
            cell(r.value),
            r.packets_sent.to_string(),
            r.packets_received.to_string(),
            r.repetition.to_string(),
            r.timestamp_us.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<BenchRecord>, ReportError> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &RECORD_HEADER)?;
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(BenchRecord {
                profile: rec[0].to_owned(),
                payload_size: parse_cell(&rec[1], "payload_size")?,
                metric: rec[2].parse().map_err(ReportError::Parse)?,
                value: parse_opt(&rec[3], "value")?,
                packets_sent: parse_cell(&rec[4], "packets_sent")?,
                packets_received: parse_cell(&rec[5], "packets_received")?,
                repetition: parse_cell(&rec[6], "repetition")?,
                timestamp_us: parse_cell(&rec[7], "timestamp_us")?,
            })
        })
        .collect()
}
