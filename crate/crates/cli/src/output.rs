//! CSV and JSON artifacts.

use std::path::Path;

use serde::Serialize;

use sketchfl::sketch::fmt_f64;

/// One checked property of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

/// Machine-readable outcome of a subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub subcommand: String,
    pub seed: u64,
    pub pass: bool,
    pub assertions: Vec<Assertion>,
    pub warnings: Vec<String>,
    pub data: serde_json::Value,
}

impl Summary {
    pub fn new(subcommand: &str, seed: u64, assertions: Vec<Assertion>, warnings: Vec<String>, data: serde_json::Value) -> Self {
        Self {
            subcommand: subcommand.into(),
            seed,
            pass: assertions.iter().all(|a| a.pass),
            assertions,
            warnings,
            data,
        }
    }
}

/// Files produced by a subcommand, in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Summary,
}

impl Artifacts {
    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    /// Writes every file plus `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        std::fs::write(dir.join("summary.json"), to_json(&self.summary))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report types serialize");
    out.push(b'\n');
    out
}

/// A CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::U(n) => n.to_string(),
            Cell::S(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::F)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::U(n)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::U(n as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::S(s.into())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::S(s)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::S(b.to_string())
    }
}

/// Renders a table; floats carry 17 significant digits.
pub fn csv_bytes(header: &[String], rows: &[Vec<Cell>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Parses a table written by [`csv_bytes`].
pub fn read_csv(bytes: &[u8]) -> Result<(Vec<String>, Vec<Vec<String>>), csv::Error> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

/// Reads every numeric field of a headerless CSV, row by row.
pub fn read_vector_csv(text: &str) -> Result<Vec<f64>, String> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        for field in rec.iter().filter(|f| !f.is_empty()) {
            out.push(field.parse::<f64>().map_err(|e| format!("`{field}`: {e}"))?);
        }
    }
    Ok(out)
}

pub fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}
