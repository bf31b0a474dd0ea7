//! Daily closes to per-sector task datasets.
//!
//! Predictor: the month-1 cumulative return curve `(s(t) − s(t₀))/s(t₀)` on
//! the trading days of that month mapped affinely to `[0, 1]`. Response: the
//! month-2 return from its first to its last close.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use fdtl::{Curve, TaskDataset};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl FromStr for Month {
    type Err = String;

    /// `YYYY-MM`.
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected YYYY-MM, got `{s}`");
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        if !(1..=12).contains(&month) || y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        Ok(Month { year, month })
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Date {
    pub month: Month,
    pub day: u32,
}

impl FromStr for Date {
    type Err = String;

    /// `YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let bad = || format!("expected YYYY-MM-DD, got `{s}`");
        if s.len() != 10 {
            return Err(bad());
        }
        let month: Month = s[..7].parse().map_err(|_| bad())?;
        if &s[7..8] != "-" {
            return Err(bad());
        }
        let day: u32 = s[8..].parse().map_err(|_| bad())?;
        if !(1..=31).contains(&day) {
            return Err(bad());
        }
        Ok(Date { month, day })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriceRow {
    pub ticker: String,
    pub sector: String,
    pub date: Date,
    pub close: f64,
}

/// Reads `ticker,sector,date,close`; errors carry the line number.
pub fn read_prices<R: Read>(input: R) -> Result<Vec<PriceRow>, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| format!("line 1: missing column `{name}` (header: {header:?})"))
    };
    let (ti, si, di, ci) = (col("ticker")?, col("sector")?, col("date")?, col("close")?);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize, name: &str| rec.get(i).map(str::trim).ok_or_else(|| format!("line {line}: missing `{name}`"));
        let date = get(di, "date")?.parse().map_err(|e| format!("line {line}, column `date`: {e}"))?;
        let raw = get(ci, "close")?;
        let close: f64 = raw.parse().map_err(|_| format!("line {line}, column `close`: cannot parse `{raw}`"))?;
        if !(close > 0.0 && close.is_finite()) {
            return Err(format!("line {line}, column `close`: price must be positive, got `{raw}`"));
        }
        rows.push(PriceRow { ticker: get(ti, "ticker")?.to_string(), sector: get(si, "sector")?.to_string(), date, close });
    }
    Ok(rows)
}

/// `(s_j − s_0)/s_0` for each close.
pub fn cumulative_returns(closes: &[f64]) -> Vec<f64> {
    closes.iter().map(|s| (s - closes[0]) / closes[0]).collect()
}

/// Return from the first to the last close.
pub fn period_return(closes: &[f64]) -> f64 {
    (closes[closes.len() - 1] - closes[0]) / closes[0]
}

#[derive(Clone, Debug)]
pub struct Ingested {
    /// One task per sector, sectors in name order.
    pub tasks: Vec<TaskDataset>,
    /// Tickers behind each task's rows, in row order.
    pub tickers: Vec<Vec<String>>,
    /// Tickers dropped for lacking two trading days in either month.
    pub skipped: Vec<String>,
}

pub fn ingest(rows: &[PriceRow], month1: Month, month2: Month) -> Result<Ingested, String> {
    // ticker → (sector, date → close)
    let mut by_ticker: BTreeMap<&str, (&str, BTreeMap<Date, f64>)> = BTreeMap::new();
    for r in rows {
        let entry = by_ticker.entry(&r.ticker).or_insert((&r.sector, BTreeMap::new()));
        if entry.0 != r.sector {
            return Err(format!("ticker `{}` listed under sectors `{}` and `{}`", r.ticker, entry.0, r.sector));
        }
        if entry.1.insert(r.date, r.close).is_some() {
            return Err(format!("ticker `{}` has two closes on {}-{:02}", r.ticker, r.date.month, r.date.day));
        }
    }
    let mut sectors: BTreeMap<&str, (Vec<Curve>, Vec<f64>, Vec<String>)> = BTreeMap::new();
    let mut skipped = Vec::new();
    for (ticker, (sector, closes)) in &by_ticker {
        let in_month = |m: Month| closes.iter().filter(|(d, _)| d.month == m).map(|(_, c)| *c).collect::<Vec<f64>>();
        let (first, second) = (in_month(month1), in_month(month2));
        if first.len() < 2 || second.len() < 2 {
            skipped.push(ticker.to_string());
            continue;
        }
        let n = first.len();
        let grid: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
        let curve = Curve::new(grid, cumulative_returns(&first)).map_err(|e| format!("ticker `{ticker}`: {e}"))?;
        let slot = sectors.entry(sector).or_default();
        slot.0.push(curve);
        slot.1.push(period_return(&second));
        slot.2.push(ticker.to_string());
    }
    if !skipped.is_empty() {
        log::warn!("skipped {} tickers without two trading days in {month1} and {month2}", skipped.len());
    }
    let mut tasks = Vec::new();
    let mut tickers = Vec::new();
    for (sector, (curves, ys, names)) in sectors {
        tasks.push(TaskDataset::new(sector, curves, ys).map_err(|e| format!("sector `{sector}`: {e}"))?);
        tickers.push(names);
    }
    Ok(Ingested { tasks, tickers, skipped })
}
