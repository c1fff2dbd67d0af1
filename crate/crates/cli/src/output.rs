//! Tabular output in CSV, JSON or JSON lines.

use crate::config::Format;
use anyhow::Result;
use serde_json::{Map, Value};
use std::io::Write;

#[derive(Debug, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, format: Format, mut out: W) -> Result<()> {
        match format {
            Format::Csv => {
                writeln!(out, "{}", self.columns.join(","))?;
                for r in &self.rows {
                    let cells: Vec<String> = r.iter().map(csv_cell).collect();
                    writeln!(out, "{}", cells.join(","))?;
                }
            }
            Format::Json => {
                let all: Vec<Value> = self.rows.iter().map(|r| self.object(r)).collect();
                serde_json::to_writer_pretty(&mut out, &all)?;
                writeln!(out)?;
            }
            Format::Jsonl => {
                for r in &self.rows {
                    serde_json::to_writer(&mut out, &self.object(r))?;
                    writeln!(out)?;
                }
            }
        }
        Ok(())
    }

    fn object(&self, r: &[Value]) -> Value {
        let mut m = Map::new();
        for (k, v) in self.columns.iter().zip(r) {
            m.insert((*k).to_string(), v.clone());
        }
        Value::Object(m)
    }
}

/// Plain decimal, switching to scientific notation below `1e-4` in magnitude.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x != 0.0 && x.abs() < 1e-4 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.to_string(),
            (None, Some(i)) => i.to_string(),
            _ => format_float(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    }
}

/// JSON has no infinities; those become strings.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or_else(|| Value::String(format_float(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn small_values_switch_to_scientific() {
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(1e-4), "0.0001");
        assert_eq!(format_float(2.5e-5), "2.5e-5");
        assert_eq!(format_float(-3e-9), "-3e-9");
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(f64::INFINITY), "inf");
    }

    #[test]
    fn csv_and_jsonl() {
        let mut t = Table::new(&["n", "p", "tag"]);
        t.push(vec![json!(3), num(1.5e-6), json!("a,b")]);
        let mut buf = Vec::new();
        t.write(Format::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "n,p,tag\n3,1.5e-6,\"a,b\"\n");
        let mut buf = Vec::new();
        t.write(Format::Jsonl, &mut buf).unwrap();
        let line: Value = serde_json::from_slice(buf.split(|&b| b == b'\n').next().unwrap()).unwrap();
        assert_eq!(line["n"], 3);
        assert_eq!(num(f64::NAN), json!("nan"));
    }
}
