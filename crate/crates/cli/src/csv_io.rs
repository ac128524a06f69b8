//! CSV emission and parsing for trajectory logs and metrics.
//!
//! Numbers are written with Rust's `Display` for `f64`, which prints the
//! shortest decimal string that parses back to the same value.

use std::io::{Read, Write};

use nid_pmpc::{LogRow, Metrics, Pose, SiPoint};
use thiserror::Error;

pub const TRAJECTORY_HEADER: [&str; 15] = [
    "t", "x1", "x2", "theta", "xsi1", "xsi2", "r1", "r2", "l", "dt", "v", "omega", "omega_r", "omega_l", "err",
];

pub const METRICS_HEADER: [&str; 5] = [
    "mean_tracking_error",
    "mean_abs_wheel_diff",
    "mean_l",
    "mean_dt",
    "max_abs_omega",
];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("unexpected header {found:?}")]
    Header { found: Vec<String> },

    #[error("record {record}: field `{field}` is not a number: `{value}`")]
    Number {
        record: usize,
        field: &'static str,
        value: String,
    },

    #[error("expected exactly one metrics record, found {0}")]
    MetricsCount(usize),
}

fn row_fields(r: &LogRow) -> [f64; 15] {
    [
        r.t,
        r.pose.x1,
        r.pose.x2,
        r.pose.theta,
        r.x_si.p1,
        r.x_si.p2,
        r.reference.p1,
        r.reference.p2,
        r.l,
        r.dt,
        r.v,
        r.omega,
        r.omega_r,
        r.omega_l,
        r.tracking_error,
    ]
}

fn metrics_fields(m: &Metrics) -> [f64; 5] {
    [m.mean_tracking_error, m.mean_abs_wheel_diff, m.mean_l, m.mean_dt, m.max_abs_omega]
}

fn write_table<W: Write, const K: usize>(out: W, header: &[&str; K], rows: &[[f64; K]]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_table<R: Read, const K: usize>(input: R, header: &[&'static str; K]) -> Result<Vec<[f64; K]>, CsvError> {
    let mut r = csv::Reader::from_reader(input);
    let found = r.headers()?;
    if found.len() != K || found.iter().zip(header).any(|(a, b)| a != *b) {
        return Err(CsvError::Header {
            found: found.iter().map(String::from).collect(),
        });
    }
    let mut rows = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut vals = [0.0; K];
        for (k, field) in header.iter().enumerate() {
            let s = rec.get(k).unwrap_or("");
            vals[k] = s.parse().map_err(|_| CsvError::Number {
                record: idx + 1,
                field,
                value: s.into(),
            })?;
        }
        rows.push(vals);
    }
    Ok(rows)
}

pub fn write_trajectory<W: Write>(out: W, rows: &[LogRow]) -> csv::Result<()> {
    let table: Vec<_> = rows.iter().map(row_fields).collect();
    write_table(out, &TRAJECTORY_HEADER, &table)
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Vec<LogRow>, CsvError> {
    Ok(read_table(input, &TRAJECTORY_HEADER)?
        .into_iter()
        .map(|f| LogRow {
            t: f[0],
            pose: Pose::new(f[1], f[2], f[3]),
            x_si: SiPoint::new(f[4], f[5]),
            reference: SiPoint::new(f[6], f[7]),
            l: f[8],
            dt: f[9],
            v: f[10],
            omega: f[11],
            omega_r: f[12],
            omega_l: f[13],
            tracking_error: f[14],
        })
        .collect())
}

pub fn write_metrics<W: Write>(out: W, m: &Metrics) -> csv::Result<()> {
    write_table(out, &METRICS_HEADER, &[metrics_fields(m)])
}

pub fn read_metrics<R: Read>(input: R) -> Result<Metrics, CsvError> {
    let rows = read_table(input, &METRICS_HEADER)?;
    match rows.as_slice() {
        [f] => Ok(Metrics {
            mean_tracking_error: f[0],
            mean_abs_wheel_diff: f[1],
            mean_l: f[2],
            mean_dt: f[3],
            max_abs_omega: f[4],
        }),
        _ => Err(CsvError::MetricsCount(rows.len())),
    }
}
