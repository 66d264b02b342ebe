//! CSV artifacts: `#`-prefixed `key = value` metadata lines followed by a
//! comma-separated table with a header row. Floats are written in Rust's
//! shortest round-trip form so that reading back is lossless.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to `path` through a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Serializes a table with metadata into CSV bytes.
pub fn render_csv(meta: &[(String, String)], header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (k, v) in meta {
        writeln!(out, "# {k} = {v}").expect("writing to a Vec cannot fail");
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Config(format!("csv flush failed: {e}")))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv error: {e}"))
}

pub fn write_csv(path: &Path, meta: &[(String, String)], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &render_csv(meta, header, rows)?)
}

pub fn write_numeric_csv<I>(path: &Path, meta: &[(String, String)], header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let rows: Vec<Vec<String>> = rows
        .into_iter()
        .map(|r| r.iter().map(|x| format!("{x}")).collect())
        .collect();
    write_csv(path, meta, header, &rows)
}

/// A parsed CSV artifact with string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// 1-based line number of the first data row.
    pub first_data_line: usize,
}

impl CsvTable {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, path: &Path, key: &str) -> Result<T> {
        let raw = self.meta(key).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing metadata key {key:?}"),
        })?;
        raw.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("metadata {key:?} has unparsable value {raw:?}"),
        })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn parse_csv(path: &Path, text: &str) -> Result<CsvTable> {
    let mut meta = Vec::new();
    let mut body_start = 0;
    let mut meta_lines = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
            body_start += line.len();
            meta_lines += 1;
        } else {
            break;
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(&text.as_bytes()[body_start..]);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, meta_lines + 1, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, meta_lines + 2 + k, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(CsvTable {
        meta,
        header,
        rows,
        first_data_line: meta_lines + 2,
    })
}

fn parse_err(path: &Path, line: usize, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(path, &text)
}

/// A CSV whose cells are all real numbers.
#[derive(Debug, Clone)]
pub struct NumericTable {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub first_data_line: usize,
}

impl NumericTable {
    pub fn meta_parse<T: std::str::FromStr>(&self, path: &Path, key: &str) -> Result<T> {
        CsvTable {
            meta: self.meta.clone(),
            header: Vec::new(),
            rows: Vec::new(),
            first_data_line: 0,
        }
        .meta_parse(path, key)
    }
}

pub fn read_numeric_csv(path: &Path) -> Result<NumericTable> {
    let t = read_csv(path)?;
    let mut rows = Vec::with_capacity(t.rows.len());
    for (k, row) in t.rows.iter().enumerate() {
        let parsed: Result<Vec<f64>> = row
            .iter()
            .map(|cell| {
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: t.first_data_line + k,
                    message: format!("not a number: {cell:?}"),
                })
            })
            .collect();
        rows.push(parsed?);
    }
    Ok(NumericTable {
        meta: t.meta,
        header: t.header,
        rows,
        first_data_line: t.first_data_line,
    })
}

pub fn expect_columns(path: &Path, header: &[String], expected: &[&str]) -> Result<()> {
    if header.len() != expected.len() || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected columns {expected:?}, found {header:?}"),
        });
    }
    Ok(())
}
