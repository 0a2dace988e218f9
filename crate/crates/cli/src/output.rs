//! Deterministic CSV and JSON writers. Floats are printed with 17
//! significant digits so every value re-parses to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

/// `x` with 17 significant digits; non-finite values print as `NaN`,
/// `inf` or `-inf`.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Missing,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) => format_f64(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Text(if b { "true" } else { "false" }.into())
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Float)
    }
}

/// A named CSV table whose last column is always `provenance`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        let mut header: Vec<String> = columns.iter().map(|c| c.to_string()).collect();
        header.push("provenance".into());
        Table { name: name.into(), header, rows: Vec::new() }
    }

    pub fn push(&mut self, mut cells: Vec<Cell>, provenance: &str) {
        assert_eq!(cells.len() + 1, self.header.len(), "row width of table {}", self.name);
        cells.push(Cell::Text(provenance.into()));
        self.rows.push(cells);
    }

    pub fn to_csv(&self) -> io::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| io::Error::other(e.to_string()))
    }
}

/// One headline number of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultEntry {
    pub name: String,
    pub value: f64,
    pub se: Option<f64>,
    pub provenance: String,
}

impl ResultEntry {
    pub fn new(name: impl Into<String>, value: f64, se: Option<f64>, provenance: &str) -> Self {
        ResultEntry { name: name.into(), value, se, provenance: provenance.into() }
    }
}

/// Hex SHA-256 of `text`.
pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_bytes(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn write_json(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().unwrap_or(f64::NAN);
                if x.is_finite() {
                    out.push_str(&format_f64(x));
                } else {
                    out.push_str("null");
                }
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                out.push_str(if i == 0 { "\n" } else { ",\n" });
                out.push_str(&pad(indent + 1));
                write_json(x, indent + 1, out);
            }
            out.push('\n');
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(m) if m.is_empty() => out.push_str("{}"),
        Value::Object(m) => {
            out.push('{');
            for (i, (k, x)) in m.iter().enumerate() {
                out.push_str(if i == 0 { "\n" } else { ",\n" });
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push_str(": ");
                write_json(x, indent + 1, out);
            }
            out.push('\n');
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Pretty JSON with floats at 17 significant digits and non-finite
/// floats as `null`.
pub fn to_json_string(v: &Value) -> String {
    let mut s = String::new();
    write_json(v, 0, &mut s);
    s.push('\n');
    s
}

fn float_value(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn summary_value(
    experiment: &str,
    config_hash: &str,
    config: &Value,
    results: &[ResultEntry],
    notes: &[String],
    tables: &[String],
) -> Value {
    let results: Vec<Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "name": r.name,
                "value": float_value(r.value),
                "se": r.se.map_or(Value::Null, float_value),
                "provenance": r.provenance,
            })
        })
        .collect();
    serde_json::json!({
        "version": format!("kramers-wave {}", env!("CARGO_PKG_VERSION")),
        "experiment": experiment,
        "config_hash": config_hash,
        "config": config,
        "results": results,
        "notes": notes,
        "tables": tables,
    })
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(format_f64(f64::NAN), "NaN");
        assert_eq!(format_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new("t", &["a", "b"]);
        assert_eq!(String::from_utf8(t.to_csv().unwrap()).unwrap(), "a,b,provenance\n");
    }

    #[test]
    fn json_floats_reparse() {
        let v = serde_json::json!({"x": 0.1, "n": 3, "y": [1.0 / 3.0], "z": {}});
        let s = to_json_string(&v);
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
        assert_eq!(back["y"][0].as_f64(), Some(1.0 / 3.0));
        assert_eq!(back["n"].as_u64(), Some(3));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
