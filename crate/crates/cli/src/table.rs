//! Minimal numeric CSV reading for data, points and basis files.

use std::fs;
use std::path::Path;

use oucv_core::{Error, Result};

pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

fn parse_err(path: &Path, reason: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason,
    }
}

/// Comma- or whitespace-separated numbers; a first line that does not parse
/// as numbers is taken as the header. `#` starts a comment line.
pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if line.contains(',') {
            line.split(',').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        // empty cells (e.g. the first gap of a design listing) read as NaN
        let parsed: std::result::Result<Vec<f64>, _> = fields
            .iter()
            .map(|f| if f.is_empty() { Ok(f64::NAN) } else { f.parse::<f64>() })
            .collect();
        match parsed {
            Ok(v) => {
                if let Some(first) = rows.first() {
                    if first.len() != v.len() {
                        return Err(parse_err(
                            path,
                            format!("line {}: {} fields, expected {}", lineno + 1, v.len(), first.len()),
                        ));
                    }
                }
                rows.push(v);
            }
            Err(_) if header.is_none() && rows.is_empty() => {
                header = Some(fields.iter().map(|s| s.to_string()).collect());
            }
            Err(e) => return Err(parse_err(path, format!("line {}: {e}", lineno + 1))),
        }
    }
    if rows.is_empty() {
        return Err(parse_err(path, "no numeric rows".into()));
    }
    if let Some(h) = &header {
        if h.len() != rows[0].len() {
            return Err(parse_err(path, format!("header has {} names for {} columns", h.len(), rows[0].len())));
        }
    }
    Ok(Table { header, rows })
}

impl Table {
    pub fn cols(&self) -> usize {
        self.rows[0].len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn find(&self, names: &[&str]) -> Option<usize> {
        let h = self.header.as_ref()?;
        h.iter().position(|c| names.iter().any(|n| c.eq_ignore_ascii_case(n)))
    }

    /// The location column: `s`/`t` by name, else the single column, else the
    /// second of three (`index,s,value`), else the first.
    pub fn locations(&self) -> Vec<f64> {
        let j = self.find(&["s", "t"]).unwrap_or(match self.cols() {
            c if c >= 3 => 1,
            _ => 0,
        });
        self.column(j)
    }

    /// The observation column: `y`/`z` by name, else the last.
    pub fn values(&self) -> Vec<f64> {
        let j = self.find(&["y", "z"]).unwrap_or(self.cols() - 1);
        self.column(j)
    }
}
