//! CSV tables: reading, provenance headers and run comparison.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One-line provenance header written (after `# `) above every CSV.
pub fn provenance_header(scenario_hash: &str) -> String {
    format!("qbm {TOOL_VERSION} scenario={scenario_hash}")
}

/// Numeric CSV table. Lines starting with `#` are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|k| self.data[k].as_slice())
            .ok_or_else(|| Error::Csv(format!("missing column '{name}'")))
    }
}

pub fn read_table<R: BufRead>(input: R) -> Result<Table> {
    let mut columns: Option<Vec<String>> = None;
    let mut data: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match &columns {
            None => {
                data = vec![Vec::new(); fields.len()];
                columns = Some(fields.iter().map(|s| s.to_string()).collect());
            }
            Some(cols) => {
                if fields.len() != cols.len() {
                    return Err(Error::Csv(format!(
                        "line {}: expected {} fields, found {}",
                        lineno + 1,
                        cols.len(),
                        fields.len()
                    )));
                }
                for (k, f) in fields.iter().enumerate() {
                    let v: f64 = f.parse().map_err(|_| {
                        Error::Csv(format!("line {}: bad number '{f}'", lineno + 1))
                    })?;
                    data[k].push(v);
                }
            }
        }
    }
    let columns = columns.ok_or_else(|| Error::Csv("no header row".into()))?;
    Ok(Table { columns, data })
}

pub fn read_table_file(path: &Path) -> Result<Table> {
    read_table(BufReader::new(File::open(path)?))
}

/// Absolute and relative tolerance; a column passes when every row
/// satisfies `|a − b| ≤ abs + rel·max(|a|, |b|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn absolute(abs: f64) -> Self {
        Self { abs, rel: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDeviation {
    pub max_abs: f64,
    pub max_rel: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: usize,
    pub tolerance: Tolerance,
    pub columns: BTreeMap<String, ColumnDeviation>,
    pub pass: bool,
}

/// Compares the named columns (all shared non-time columns when empty).
/// The `t` columns must agree to 1e−12 relative.
pub fn compare_tables(
    a: &Table,
    b: &Table,
    columns: &[String],
    tol: Tolerance,
) -> Result<CompareReport> {
    let (ta, tb) = (a.column("t")?, b.column("t")?);
    if ta.len() != tb.len() {
        return Err(Error::GridMismatch(format!(
            "{} rows vs {} rows",
            ta.len(),
            tb.len()
        )));
    }
    for (x, y) in ta.iter().zip(tb) {
        if (x - y).abs() > 1e-12 * x.abs().max(y.abs()).max(1.0) {
            return Err(Error::GridMismatch(format!("time {x} vs {y}")));
        }
    }
    let names: Vec<String> = if columns.is_empty() {
        a.columns
            .iter()
            .filter(|c| c.as_str() != "t" && b.columns.contains(c))
            .cloned()
            .collect()
    } else {
        columns.to_vec()
    };
    let mut out = BTreeMap::new();
    for name in names {
        let (ca, cb) = (a.column(&name)?, b.column(&name)?);
        let mut dev = ColumnDeviation {
            max_abs: 0.0,
            max_rel: 0.0,
            pass: true,
        };
        for (x, y) in ca.iter().zip(cb) {
            let d = (x - y).abs();
            let scale = x.abs().max(y.abs());
            dev.max_abs = dev.max_abs.max(d);
            if scale > 0.0 {
                dev.max_rel = dev.max_rel.max(d / scale);
            }
            if !(d <= tol.abs + tol.rel * scale) {
                dev.pass = false;
            }
        }
        out.insert(name, dev);
    }
    Ok(CompareReport {
        rows: ta.len(),
        tolerance: tol,
        pass: out.values().all(|d| d.pass),
        columns: out,
    })
}

pub fn compare_runs(
    csv_a: &Path,
    csv_b: &Path,
    columns: &[String],
    tol: Tolerance,
) -> Result<CompareReport> {
    compare_tables(
        &read_table_file(csv_a)?,
        &read_table_file(csv_b)?,
        columns,
        tol,
    )
}
