//! Raw sample tables: written as CSV with a `#` preamble, read back for summaries.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::I(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::S(v)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            // 17 significant digits round-trip every f64.
            Cell::F(v) => format!("{v:.16e}"),
            Cell::I(v) => v.to_string(),
            Cell::S(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self { headers: headers.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, preamble: &[(&str, String)]) -> Result<Vec<u8>> {
        let mut head = String::new();
        for (k, v) in preamble {
            writeln!(head, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(head.into_bytes());
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| anyhow!("csv buffer: {e}"))
    }
}

/// A CSV read back from disk, addressed by column name.
pub struct Frame {
    headers: Vec<String>,
    pub records: Vec<csv::StringRecord>,
}

impl Frame {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let headers = r.headers()?.iter().map(String::from).collect();
        let records = r.records().collect::<std::result::Result<_, _>>()?;
        Ok(Self { headers, records })
    }

    #[cfg(test)]
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
        let headers = r.headers()?.iter().map(String::from).collect();
        let records = r.records().collect::<std::result::Result<_, _>>()?;
        Ok(Self { headers, records })
    }

    pub fn col(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("missing column {name}"))
    }

    /// Rows whose `source` column equals `tag`.
    pub fn rows<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a csv::StringRecord> + 'a {
        let c = self.col("source").ok();
        self.records.iter().filter(move |r| c.is_none_or(|c| &r[c] == tag))
    }

    pub fn f64s<'a>(&self, rows: impl Iterator<Item = &'a csv::StringRecord>, name: &str) -> Result<Vec<f64>> {
        let c = self.col(name)?;
        rows.map(|r| r[c].parse::<f64>().with_context(|| format!("column {name}: {:?}", &r[c]))).collect()
    }

    pub fn usizes<'a>(&self, rows: impl Iterator<Item = &'a csv::StringRecord>, name: &str) -> Result<Vec<usize>> {
        let c = self.col(name)?;
        rows.map(|r| r[c].parse::<usize>().with_context(|| format!("column {name}: {:?}", &r[c]))).collect()
    }
}
