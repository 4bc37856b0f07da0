//! Artifact writers. Every file starts with the SHA-256 of the config that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// `x` with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Cell of a table row.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => fmt_f64(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Writes output files under one directory, stamping each with the config hash.
pub struct Writer {
    pub dir: PathBuf,
    pub config_hash: String,
}

impl Writer {
    pub fn new(dir: &Path, config_hash: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
        let probe = dir.join(".ahx-write-probe");
        fs::write(&probe, b"").map_err(|e| CliError::Config(format!("{} is not writable: {e}", dir.display())))?;
        let _ = fs::remove_file(probe);
        Ok(Writer { dir: dir.to_path_buf(), config_hash })
    }

    /// RFC-4180 body preceded by a `# config-sha256: …` comment line.
    pub fn csv(&self, name: &str, table: &Table) -> Result<PathBuf, CliError> {
        let mut body = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut body);
            w.write_record(&table.columns).map_err(io)?;
            for r in &table.rows {
                w.write_record(r.iter().map(Cell::render)).map_err(io)?;
            }
            w.flush().map_err(|e| CliError::Io(e.to_string()))?;
        }
        let mut out = format!("# config-sha256: {}\r\n", self.config_hash).into_bytes();
        out.extend(body);
        self.put(name, &out)
    }

    /// JSON object with a `config_sha256` field added at the top level.
    pub fn json<S: Serialize>(&self, name: &str, value: &S) -> Result<PathBuf, CliError> {
        let mut v = serde_json::to_value(value).map_err(|e| CliError::Io(e.to_string()))?;
        let obj = match v {
            serde_json::Value::Object(ref mut m) => m,
            _ => return Err(CliError::Io("JSON artifacts must be objects".into())),
        };
        obj.insert("config_sha256".into(), serde_json::Value::String(self.config_hash.clone()));
        let mut s = serde_json::to_string_pretty(&v).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.put(name, s.as_bytes())
    }

    /// Static line chart of one or more polylines.
    pub fn svg(&self, name: &str, title: &str, xlabel: &str, ylabel: &str, series: &[Vec<(f64, f64)>]) -> Result<PathBuf, CliError> {
        let s = line_chart(&self.config_hash, title, xlabel, ylabel, series);
        self.put(name, s.as_bytes())
    }

    fn put(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.dir.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        Ok(p)
    }
}

fn io(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn line_chart(hash: &str, title: &str, xlabel: &str, ylabel: &str, series: &[Vec<(f64, f64)>]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let pts = series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if !(y1 > y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <!-- config-sha256: {hash} -->\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n\
         <rect x=\"{M}\" y=\"{M}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        W / 2.0,
        escape(title),
        W - 2.0 * M,
        H - 2.0 * M,
        W / 2.0,
        H - 12.0,
        escape(xlabel),
        H / 2.0,
        H / 2.0,
        escape(ylabel),
    );
    s += &format!(
        "<text x=\"{M}\" y=\"{}\" font-size=\"10\">{x0:.4}</text><text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{x1:.4}</text>\n",
        H - M + 14.0,
        W - M,
        H - M + 14.0
    );
    s += &format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{y0:.4}</text><text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{y1:.4}</text>\n",
        M - 4.0,
        H - M,
        M - 4.0,
        M + 10.0
    );
    for (k, line) in series.iter().enumerate() {
        let p: Vec<String> = line
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s += &format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            colours[k % colours.len()],
            p.join(" ")
        );
    }
    s += "</svg>\n";
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A parsed CSV artifact.
#[derive(Clone, Debug)]
pub struct CsvArtifact {
    pub config_hash: Option<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvArtifact {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric column; non-numeric cells become NaN.
    pub fn floats(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column(name)?;
        Some(self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect())
    }
}

/// Reader for the CSV files written by [`Writer::csv`].
pub fn read_csv(path: &Path) -> Result<CsvArtifact, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let config_hash = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# config-sha256: "))
        .map(|h| h.trim().to_string());
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let columns = r.headers().map_err(io)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(io)?.iter().map(String::from).collect());
    }
    Ok(CsvArtifact { config_hash, columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [std::f64::consts::PI, 1e-300, -2.0 / 3.0, 0.1 + 0.2, f64::MAX] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn csv_reads_back_through_the_reader() {
        let dir = tempfile::tempdir().unwrap();
        let w = Writer::new(dir.path(), "abc".into()).unwrap();
        let mut t = Table::new(["x", "status"]);
        t.push(vec![Cell::Num(1.0 / 3.0), Cell::Text("ok".into())]);
        t.push(vec![Cell::Num(f64::NAN), Cell::Text("failed: a, \"b\"".into())]);
        let p = w.csv("t.csv", &t).unwrap();
        let a = read_csv(&p).unwrap();
        assert_eq!(a.config_hash.as_deref(), Some("abc"));
        assert_eq!(a.floats("x").unwrap()[0], 1.0 / 3.0);
        assert!(a.floats("x").unwrap()[1].is_nan());
        assert_eq!(a.rows[1][1], "failed: a, \"b\"");
    }

    #[test]
    fn svg_carries_the_hash() {
        let s = line_chart("feed", "t", "x", "y", &[vec![(0.0, 0.0), (1.0, 2.0)]]);
        assert!(s.contains("config-sha256: feed"));
        assert!(s.contains("<polyline"));
    }
}
