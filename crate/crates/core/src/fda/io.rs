//! Long-form CSV exchange format for task datasets.
//!
//! * curves file: `curve_id,t,x`, one row per design point, rows of a curve in
//!   ascending `t`;
//! * responses file: `curve_id,y,task_id`, one row per curve.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so export followed by import is lossless.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fda::{Curve, TaskDataset};

pub const CURVE_HEADER: [&str; 3] = ["curve_id", "t", "x"];
pub const RESPONSE_HEADER: [&str; 3] = ["curve_id", "y", "task_id"];

fn parse_err(file: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { location: format!("{file} line {line}"), message: message.into() }
}

fn check_header(file: &str, got: &csv::StringRecord, want: &[&str]) -> Result<HashMap<String, usize>> {
    let cols: HashMap<String, usize> =
        got.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect();
    for name in want {
        if !cols.contains_key(*name) {
            return Err(parse_err(file, 1, format!("missing column `{name}` (header: {got:?})")));
        }
    }
    Ok(cols)
}

fn field<'r>(
    file: &str,
    rec: &'r csv::StringRecord,
    cols: &HashMap<String, usize>,
    name: &str,
) -> Result<&'r str> {
    let line = rec.position().map_or(0, |p| p.line());
    rec.get(cols[name])
        .map(str::trim)
        .ok_or_else(|| parse_err(file, line, format!("column `{name}` is missing")))
}

fn float_field(file: &str, rec: &csv::StringRecord, cols: &HashMap<String, usize>, name: &str) -> Result<f64> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = field(file, rec, cols, name)?;
    let v: f64 = raw
        .parse()
        .map_err(|_| parse_err(file, line, format!("column `{name}`: cannot parse `{raw}` as a number")))?;
    if !v.is_finite() {
        return Err(parse_err(file, line, format!("column `{name}`: non-finite value `{raw}`")));
    }
    Ok(v)
}

/// Reads task datasets from a curves CSV and a responses CSV.
///
/// Tasks appear in order of first mention in the responses file; within a task
/// curves keep the responses-file order. Curves that share identical design
/// points share one grid allocation.
pub fn read_tasks<R1: Read, R2: Read>(curves: R1, responses: R2) -> Result<Vec<TaskDataset>> {
    let mut by_id: HashMap<String, (Vec<f64>, Vec<f64>, u64)> = HashMap::new();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(curves);
    let cols = check_header("curves", rdr.headers()?, &CURVE_HEADER)?;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = field("curves", &rec, &cols, "curve_id")?.to_string();
        let t = float_field("curves", &rec, &cols, "t")?;
        let x = float_field("curves", &rec, &cols, "x")?;
        let entry = by_id.entry(id.clone()).or_insert_with(|| (Vec::new(), Vec::new(), line));
        if let Some(&last) = entry.0.last() {
            if !(t > last) {
                return Err(parse_err(
                    "curves",
                    line,
                    format!("curve `{id}`: t={t} does not increase (previous {last})"),
                ));
            }
        }
        entry.0.push(t);
        entry.1.push(x);
    }

    let mut interned: HashMap<Vec<u64>, Arc<[f64]>> = HashMap::new();
    let mut tasks: Vec<(String, Vec<Curve>, Vec<f64>)> = Vec::new();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(responses);
    let cols = check_header("responses", rdr.headers()?, &RESPONSE_HEADER)?;
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = field("responses", &rec, &cols, "curve_id")?.to_string();
        let y = float_field("responses", &rec, &cols, "y")?;
        let task = field("responses", &rec, &cols, "task_id")?.to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err("responses", line, format!("duplicate curve_id `{id}`")));
        }
        let (grid, values, curve_line) = by_id
            .remove(&id)
            .ok_or_else(|| parse_err("responses", line, format!("curve `{id}` has no rows in the curves file")))?;
        let key: Vec<u64> = grid.iter().map(|t| t.to_bits()).collect();
        let shared = interned.entry(key).or_insert_with(|| Arc::from(grid)).clone();
        let curve = Curve::new(shared, values)
            .map_err(|e| parse_err("curves", curve_line, format!("curve `{id}`: {e}")))?;
        match tasks.iter_mut().find(|(name, _, _)| *name == task) {
            Some((_, cs, ys)) => {
                cs.push(curve);
                ys.push(y);
            }
            None => tasks.push((task, vec![curve], vec![y])),
        }
    }
    if let Some((id, (_, _, line))) = by_id.into_iter().min_by_key(|(_, v)| v.2) {
        return Err(parse_err("curves", line, format!("curve `{id}` has no response row")));
    }
    tasks
        .into_iter()
        .map(|(name, cs, ys)| TaskDataset::new(name, cs, ys))
        .collect()
}

/// Writes task datasets in the long-form CSV pair. Curve ids are `<task>/<row>`.
pub fn write_tasks<W1: Write, W2: Write>(tasks: &[TaskDataset], curves: W1, responses: W2) -> Result<()> {
    let mut cw = csv::Writer::from_writer(curves);
    let mut rw = csv::Writer::from_writer(responses);
    cw.write_record(CURVE_HEADER)?;
    rw.write_record(RESPONSE_HEADER)?;
    for task in tasks {
        for (i, (c, y)) in task.curves.iter().zip(&task.responses).enumerate() {
            let id = format!("{}/{}", task.task_id, i);
            for (t, x) in c.grid().iter().zip(c.values()) {
                cw.write_record([id.as_str(), &t.to_string(), &x.to_string()])?;
            }
            rw.write_record([id.as_str(), &y.to_string(), task.task_id.as_str()])?;
        }
    }
    cw.flush()?;
    rw.flush()?;
    Ok(())
}
