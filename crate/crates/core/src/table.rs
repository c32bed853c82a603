//! Tables and their one-line text serialization.
//!
//! A table serializes as its rows joined by ` ⟨n⟩ `, each row's cells joined
//! by ` ⟨s⟩ `, with the header first and empty cells written as `⟨ ⟩`:
//!
//! ```text
//! ⟨ ⟩ ⟨s⟩ AST ⟨s⟩ PTS ⟨n⟩ Kevin Durant ⟨s⟩ 5 ⟨s⟩ 22
//! ```

use std::fmt;

use crate::error::{Error, Result};

pub const CELL_SEP: &str = "⟨s⟩";
pub const ROW_SEP: &str = "⟨n⟩";
pub const NULL_ROW: &str = "⟨∅⟩";
pub const EMPTY_CELL: &str = "⟨ ⟩";

/// Marker strings no cell may contain.
pub const RESERVED_MARKERS: [&str; 3] = [CELL_SEP, ROW_SEP, NULL_ROW];

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Table {
    pub header: Vec<String>,
    pub body: Vec<Vec<String>>,
}

/// One invariant violation found by [`validate`]. Row 0 is the header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub row: usize,
    pub description: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FormatReport {
    pub violations: Vec<Violation>,
}

impl FormatReport {
    pub fn well_formed(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, row: usize, description: impl Into<String>) {
        self.violations.push(Violation {
            row,
            description: description.into(),
        });
    }
}

impl fmt::Display for FormatReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.well_formed() {
            return write!(f, "well formed");
        }
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("row {}: {}", v.row, v.description))
            .collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl Table {
    pub fn new(header: Vec<String>, body: Vec<Vec<String>>) -> Self {
        Self { header, body }
    }

    pub fn columns(&self) -> usize {
        self.header.len()
    }
}

fn cell_problem(cell: &str) -> Option<String> {
    for m in RESERVED_MARKERS {
        if cell.contains(m) {
            return Some(format!("cell {cell:?} contains reserved marker {m}"));
        }
    }
    if cell.contains(['\n', '\r']) {
        return Some(format!("cell {cell:?} contains a line break"));
    }
    None
}

/// Makes arbitrary text a legal cell: markers and line breaks are removed and
/// whitespace is collapsed to single spaces.
pub fn sanitize_cell(text: &str) -> String {
    let mut t = text.replace(['\n', '\r'], " ");
    for m in RESERVED_MARKERS.iter().chain(std::iter::once(&EMPTY_CELL)) {
        t = t.replace(m, " ");
    }
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lists every invariant violation of `t`.
pub fn validate(t: &Table) -> FormatReport {
    let mut report = FormatReport::default();
    if t.header.is_empty() {
        report.push(0, "no header");
    }
    for cell in &t.header {
        if let Some(p) = cell_problem(cell) {
            report.push(0, p);
        }
    }
    let cols = t.header.len();
    for (i, row) in t.body.iter().enumerate() {
        if row.len() != cols {
            report.push(i + 1, format!("cell count {} ≠ {}", row.len(), cols));
        }
        for cell in row {
            if let Some(p) = cell_problem(cell) {
                report.push(i + 1, p);
            }
        }
    }
    report
}

fn render_row(row: &[String]) -> String {
    row.iter()
        .map(|c| if c.is_empty() { EMPTY_CELL } else { c.as_str() })
        .collect::<Vec<_>>()
        .join(&format!(" {CELL_SEP} "))
}

pub fn serialize_table(t: &Table) -> Result<String> {
    let report = validate(t);
    if !report.well_formed() {
        return Err(Error::Format(report.to_string()));
    }
    let rows: Vec<String> = std::iter::once(&t.header)
        .chain(t.body.iter())
        .map(|r| render_row(r))
        .collect();
    Ok(rows.join(&format!(" {ROW_SEP} ")))
}

fn parse_cell(raw: &str) -> String {
    let c = raw.trim();
    if c == EMPTY_CELL {
        String::new()
    } else {
        c.to_string()
    }
}

/// Parses the one-line text form. Ragged rows come back as a [`FormatReport`]
/// listing each offending row.
pub fn parse_table(s: &str) -> std::result::Result<Table, FormatReport> {
    let mut report = FormatReport::default();
    if s.trim().is_empty() {
        report.push(0, "no header");
        return Err(report);
    }
    let mut rows = s
        .split(ROW_SEP)
        .map(|r| r.split(CELL_SEP).map(parse_cell).collect::<Vec<_>>());
    let header = rows.next().expect("split yields at least one piece");
    let body: Vec<Vec<String>> = rows.collect();
    let t = Table { header, body };
    let report = validate(&t);
    if report.well_formed() {
        Ok(t)
    } else {
        Err(report)
    }
}
