//! Report tables and their CSV / JSON encodings.
//!
//! JSON floats carry 17 significant digits (`{:.16e}`), CSV floats 12
//! (`{:.11e}`); non-finite values become `null` in JSON and `NaN`/`inf` in
//! CSV. No timestamps or timings are written, so identical configs give
//! identical bytes.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
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

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => csv_float(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => Value::from(*v),
            Cell::Float(v) => Value::from(*v),
            Cell::Text(s) => Value::from(s.clone()),
            Cell::Bool(b) => Value::from(*b),
            Cell::Empty => Value::Null,
        }
    }
}

pub fn csv_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

/// Everything a command produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub command: &'static str,
    pub config: Value,
    pub summary: Map<String, Value>,
    pub table: Table,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(command: &'static str, config: Value, table: Table) -> Self {
        Report { command, config, summary: Map::new(), table, checks: Vec::new() }
    }

    pub fn summarize(&mut self, key: &str, value: impl Serialize) -> Result<(), CliError> {
        self.summary.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<(), CliError> {
        writeln!(out, "# roughvol {} {}", env!("CARGO_PKG_VERSION"), self.command)?;
        writeln!(out, "# config {}", compact_json(&self.config)?)?;
        for (k, v) in &self.summary {
            writeln!(out, "# {k} {}", compact_json(v)?)?;
        }
        for c in &self.checks {
            writeln!(out, "# check {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.table.columns)?;
        for row in &self.table.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json_value(&self) -> Value {
        let rows: Vec<Value> = self
            .table
            .rows
            .iter()
            .map(|r| Value::Object(self.table.columns.iter().zip(r).map(|(c, v)| (c.to_string(), v.json())).collect()))
            .collect();
        let mut obj = Map::new();
        obj.insert("roughvol".into(), Value::from(env!("CARGO_PKG_VERSION")));
        obj.insert("command".into(), Value::from(self.command));
        obj.insert("config".into(), self.config.clone());
        obj.insert("summary".into(), Value::Object(self.summary.clone()));
        obj.insert("checks".into(), serde_json::to_value(&self.checks).expect("checks serialize"));
        obj.insert("rows".into(), Value::Array(rows));
        Value::Object(obj)
    }

    pub fn write_json<W: Write>(&self, out: &mut W) -> Result<(), CliError> {
        write_json_value(&self.to_json_value(), out)?;
        writeln!(out)?;
        Ok(())
    }
}

/// Pretty JSON with every float written as `{:.16e}`.
struct Fixed17<'a>(PrettyFormatter<'a>);

impl Formatter for Fixed17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        write!(w, "{:.16e}", v as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn write_json_value<W: Write>(v: &Value, out: &mut W) -> Result<(), CliError> {
    let mut ser = serde_json::Serializer::with_formatter(out, Fixed17(PrettyFormatter::with_indent(b"  ")));
    v.serialize(&mut ser)?;
    Ok(())
}

/// Single-line JSON with `{:.16e}` floats.
pub fn compact_json(v: &Value) -> Result<String, CliError> {
    struct Compact17;
    impl Formatter for Compact17 {
        fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
            write!(w, "{v:.16e}")
        }
    }
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Compact17);
    v.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("json is utf-8"))
}
