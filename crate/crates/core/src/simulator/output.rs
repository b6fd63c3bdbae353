//! CSV emission of trajectory records.
//!
//! Columns: `k,x_0..x_{n-1},xhat_0..,u_0..,eta,w_0..,e_0..`, one row per
//! step `k = 0..=N`, then a terminal row `k = N+1` carrying only the
//! state. Long format prepends a `traj` column.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::DVector;

use super::TrajectoryRecord;

pub fn trajectory_header(n: usize, m: usize) -> Vec<String> {
    fn named(h: &mut Vec<String>, prefix: &str, count: usize) {
        h.extend((0..count).map(|i| format!("{prefix}_{i}")));
    }
    let mut h = vec!["k".to_string()];
    named(&mut h, "x", n);
    named(&mut h, "xhat", n);
    named(&mut h, "u", m);
    h.push("eta".into());
    named(&mut h, "w", n);
    named(&mut h, "e", n);
    h
}

fn push_vec(row: &mut Vec<String>, v: &DVector<f64>) {
    row.extend(v.iter().map(|x| x.to_string()));
}

fn rows(record: &TrajectoryRecord) -> Vec<Vec<String>> {
    let n = record.terminal_state.len();
    let m = record.steps.first().map_or(0, |s| s.u.len());
    let mut out = Vec::with_capacity(record.steps.len() + 1);
    for s in &record.steps {
        let mut row = vec![s.k.to_string()];
        push_vec(&mut row, &s.x);
        push_vec(&mut row, &s.xhat);
        push_vec(&mut row, &s.u);
        row.push(s.eta.to_string());
        push_vec(&mut row, &s.w);
        push_vec(&mut row, &s.e);
        out.push(row);
    }
    let mut last = vec![record.steps.len().to_string()];
    push_vec(&mut last, &record.terminal_state);
    last.resize(1 + 4 * n + m + 1, String::new());
    out.push(last);
    out
}

pub fn write_trajectory<W: Write>(writer: W, record: &TrajectoryRecord) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = record.terminal_state.len();
    let m = record.steps.first().map_or(0, |s| s.u.len());
    w.write_record(trajectory_header(n, m))?;
    for row in rows(record) {
        w.write_record(row)?;
    }
    w.flush()
}

/// All records in one table with a leading `traj` column.
pub fn write_long_format<W: Write>(writer: W, records: &[TrajectoryRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = records.first() else {
        return w.flush();
    };
    let n = first.terminal_state.len();
    let m = first.steps.first().map_or(0, |s| s.u.len());
    let mut header = vec!["traj".to_string()];
    header.extend(trajectory_header(n, m));
    w.write_record(header)?;
    for r in records {
        for row in rows(r) {
            let mut full = vec![r.trajectory_index.to_string()];
            full.extend(row);
            w.write_record(full)?;
        }
    }
    w.flush()
}

pub fn write_trajectory_file(path: &Path, record: &TrajectoryRecord) -> io::Result<()> {
    write_trajectory(io::BufWriter::new(File::create(path)?), record)
}

pub fn write_long_format_file(path: &Path, records: &[TrajectoryRecord]) -> io::Result<()> {
    write_long_format(io::BufWriter::new(File::create(path)?), records)
}
