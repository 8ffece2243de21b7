//! Column-stable tables rendered as CSV or JSON.

use serde_json::{Map, Number, Value};

use qbound_core::Log10;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Empty,
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    pub fn opt(v: Option<f64>) -> Self {
        v.map_or(Self::Empty, Self::Float)
    }

    pub fn text(s: impl Into<String>) -> Self {
        Self::Text(s.into())
    }

    /// `log10` of a magnitude; `-inf` for zero.
    pub fn log10(v: Log10) -> Self {
        Self::Float(v.log10())
    }

    /// Linear value, blank when it would exceed the representable limit.
    pub fn linear(v: Log10) -> Self {
        Self::opt(v.value())
    }

    fn render(&self) -> String {
        match self {
            Self::Empty => String::new(),
            Self::Int(i) => i.to_string(),
            Self::Float(f) => f.to_string(),
            Self::Text(s) => s.clone(),
            Self::Bool(b) => b.to_string(),
        }
    }

    /// Non-finite floats become JSON strings (`"-inf"`), blanks become null.
    fn json(&self) -> Value {
        match self {
            Self::Empty => Value::Null,
            Self::Int(i) => Value::from(*i),
            Self::Float(f) => Number::from_f64(*f).map_or_else(|| Value::String(f.to_string()), Value::Number),
            Self::Text(s) => Value::String(s.clone()),
            Self::Bool(b) => Value::Bool(*b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Array of objects keyed by column name, in column order.
    pub fn to_json(&self) -> Vec<u8> {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let m: Map<String, Value> =
                    self.columns.iter().zip(row).map(|(c, v)| ((*c).to_string(), v.json())).collect();
                Value::Object(m)
            })
            .collect();
        let mut out = serde_json::to_vec_pretty(&rows).expect("JSON values serialize");
        out.push(b'\n');
        out
    }
}
