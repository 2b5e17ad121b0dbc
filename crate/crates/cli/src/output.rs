//! Writers for the result files. Every float is printed with 17 significant
//! digits, so files round-trip exactly and are byte-stable across runs.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Pretty JSON with floats in 17-digit scientific notation.
struct Digits17<'a>(PrettyFormatter<'a>);

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
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

pub fn to_json<S: Serialize>(value: &S) -> anyhow::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf)?)
}

/// Collects output files under one directory and remembers what was written.
pub struct OutDir {
    root: PathBuf,
    pub written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) -> anyhow::Result<()> {
        self.text(name, &to_json(value)?)
    }

    pub fn csv(&mut self, name: &str, table: &Csv) -> anyhow::Result<()> {
        self.text(name, &table.0)
    }

    pub fn text(&mut self, name: &str, body: &str) -> anyhow::Result<()> {
        fs::write(self.root.join(name), body)?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// A CSV table with a fixed header; cells are already formatted strings.
pub struct Csv(String);

pub enum Cell<'a> {
    Int(usize),
    Num(f64),
    Str(&'a str),
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self(header.join(",") + "\n")
    }

    pub fn row(&mut self, cells: &[Cell]) {
        let line: Vec<String> = cells
            .iter()
            .map(|c| match c {
                Cell::Int(i) => i.to_string(),
                Cell::Num(x) => fmt17(*x),
                Cell::Str(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
                Cell::Str(s) => s.to_string(),
            })
            .collect();
        self.0.push_str(&line.join(","));
        self.0.push('\n');
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2e-300, 12345.678901234567] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let digits = s.split('e').next().unwrap().replace(['.', '-'], "");
            assert_eq!(digits.len(), 17);
        }
    }

    #[test]
    fn json_floats_use_fixed_digits() {
        let s = to_json(&serde_json::json!({"x": 0.5, "v": [1.0, f64::NAN]})).unwrap();
        assert!(s.contains("5.0000000000000000e-1"));
        assert!(s.contains("null"));
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"], 0.5);
    }

    #[test]
    fn csv_quotes_labels_with_commas() {
        let mut t = Csv::new(&["t", "label", "mass"]);
        t.row(&[Cell::Int(0), Cell::Str("(2,4)"), Cell::Num(0.25)]);
        assert_eq!(t.0, "t,label,mass\n0,\"(2,4)\",2.5000000000000000e-1\n");
    }
}
