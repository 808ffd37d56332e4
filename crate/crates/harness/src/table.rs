//! CSV persistence: `#` provenance lines, a header row, then data rows.
//!
//! Floats are written with 17 significant digits so they round-trip exactly.

use std::io::{self, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
    Empty,
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// Column name and unit (`-` when dimensionless).
pub type Column = (&'static str, &'static str);

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: &'static [Column],
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: &'static [Column]) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the schema");
        self.rows.push(row);
    }

    pub fn header(&self) -> Vec<&'static str> {
        self.columns.iter().map(|(n, _)| *n).collect()
    }

    pub fn write(&self, cfg: &ExperimentConfig, out: &mut impl Write) -> io::Result<()> {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        writeln!(out, "# experiment: {}", cfg.experiment)?;
        writeln!(out, "# config_hash: {}", cfg.hash())?;
        writeln!(out, "# seed: {}", cfg.seed)?;
        writeln!(out, "# version: {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(out, "# timestamp: {ts}")?;
        let units: Vec<_> = self.columns.iter().map(|(_, u)| *u).collect();
        writeln!(out, "# units: {}", units.join(","))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(self.header())?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()
    }

    pub fn save(&self, cfg: &ExperimentConfig, path: &Path) -> io::Result<()> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        self.write(cfg, &mut f)?;
        f.flush()
    }
}

/// A CSV read back: provenance pairs, header and raw data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub provenance: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ParsedTable {
    pub fn provenance(&self, key: &str) -> Option<&str> {
        self.provenance
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

pub fn read_table(path: &Path) -> Result<ParsedTable, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(path)?;
    let mut provenance = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix("# ") {
            Some(p) => {
                let (k, v) = p.split_once(": ").unwrap_or((p, ""));
                provenance.push((k.to_string(), v.to_string()));
            }
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok(ParsedTable {
        provenance,
        header,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn quoting_and_read_back() {
        static COLS: [Column; 2] = [("name", "-"), ("value", "m")];
        let mut t = ResultTable::new(&COLS);
        t.push(vec!["a,\"b\"".into(), 0.5.into()]);
        t.push(vec![Cell::Empty, Cell::Int(-3)]);
        let cfg = ExperimentConfig::defaults("grad-check").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.save(&cfg, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
        let back = read_table(&path).unwrap();
        assert_eq!(back.header, ["name", "value"]);
        assert_eq!(back.rows[0], ["a,\"b\"", "5.0000000000000000e-1"]);
        assert_eq!(back.rows[1], ["", "-3"]);
        assert_eq!(back.provenance("config_hash"), Some(cfg.hash().as_str()));
        assert_eq!(back.provenance("units"), Some("-,m"));
    }
}
