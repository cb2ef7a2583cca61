//! Minimal CSV tables: UTF-8, comma separated, `.` decimal point, numbers in
//! shortest round-trip scientific notation.

use std::fmt::Write as _;
use std::io::{self, Write};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self, out: &mut String) {
        match self {
            Cell::Num(v) => write!(out, "{v:e}").unwrap(),
            Cell::Int(v) => write!(out, "{v}").unwrap(),
            Cell::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Cell::Text(s) => {
                if s.contains([',', '"', '\n']) {
                    out.push('"');
                    out.push_str(&s.replace('"', "\"\""));
                    out.push('"');
                } else {
                    out.push_str(s);
                }
            }
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
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

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push_numbers(&mut self, values: impl IntoIterator<Item = f64>) {
        self.push_row(values.into_iter().map(Cell::Num).collect());
    }

    pub fn push_row(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Writes `# `-prefixed preamble lines, the header, then the rows.
    pub fn write_csv<W: Write>(&self, mut w: W, preamble: &[String]) -> io::Result<()> {
        for line in preamble {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "{}", self.columns.join(","))?;
        let mut buf = String::new();
        for row in &self.rows {
            buf.clear();
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    buf.push(',');
                }
                c.render(&mut buf);
            }
            buf.push('\n');
            w.write_all(buf.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self, preamble: &[String]) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out, preamble).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("csv output is UTF-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_cells() {
        let mut t = Table::new(["a", "b", "c"]);
        t.push_row(vec![Cell::Num(0.5), Cell::Text("x,y".into()), Cell::Bool(true)]);
        let s = t.to_csv_string(&["schema 1".into()]);
        assert_eq!(s, "# schema 1\na,b,c\n5e-1,\"x,y\",true\n");
    }

    #[test]
    fn numbers_round_trip() {
        let v = 1.0202013400267558f64;
        let mut s = String::new();
        Cell::Num(v).render(&mut s);
        assert_eq!(s.parse::<f64>().unwrap(), v);
    }
}
