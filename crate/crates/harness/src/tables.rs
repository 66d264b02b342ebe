//! Typed CSV tables emitted by the pipeline.
//!
//! Moment tables share the columns `n,m,i,j,value,mode`; Monte Carlo tables
//! insert `stderr` before `mode`. Indices are 0-based in descending energy
//! order for both bare levels (`n`, `m`) and dressed states (`i`, `j`).

use std::path::Path;

use num_complex::Complex64;
use overlap_core::table::{read_csv, write_csv, CsvTable};

use crate::config::ProbeKind;
use crate::error::{HarnessError, Result};

pub type Meta = Vec<(String, String)>;

pub const MOMENT_COLUMNS: [&str; 6] = ["n", "m", "i", "j", "value", "mode"];
pub const MOMENT_MC_COLUMNS: [&str; 7] = ["n", "m", "i", "j", "value", "stderr", "mode"];

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub n: usize,
    pub m: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
    pub stderr: Option<f64>,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MomentTable {
    pub meta: Meta,
    pub rows: Vec<MomentRow>,
}

impl MomentTable {
    pub fn new(meta: Meta) -> Self {
        MomentTable { meta, rows: Vec::new() }
    }

    pub fn push(&mut self, key: (usize, usize, usize, usize), value: f64, stderr: Option<f64>, mode: &str) {
        let (n, m, i, j) = key;
        self.rows.push(MomentRow {
            n,
            m,
            i,
            j,
            value,
            stderr,
            mode: mode.to_string(),
        });
    }

    /// True when the table carries a `stderr` column.
    pub fn has_stderr(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.stderr.is_some())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let with_se = self.has_stderr();
        if !with_se && self.rows.iter().any(|r| r.stderr.is_some()) {
            return Err(HarnessError::Comparison(format!(
                "{}: stderr must be given for every row or none",
                path.display()
            )));
        }
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![
                    r.n.to_string(),
                    r.m.to_string(),
                    r.i.to_string(),
                    r.j.to_string(),
                    r.value.to_string(),
                ];
                if let Some(se) = r.stderr {
                    cells.push(se.to_string());
                }
                cells.push(r.mode.clone());
                cells
            })
            .collect();
        let header: &[&str] = if with_se { &MOMENT_MC_COLUMNS } else { &MOMENT_COLUMNS };
        Ok(write_csv(path, &self.meta, header, &rows)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let t = read_csv(path)?;
        let with_se = if header_is(&t, &MOMENT_MC_COLUMNS) {
            true
        } else if header_is(&t, &MOMENT_COLUMNS) {
            false
        } else {
            return Err(HarnessError::Comparison(format!(
                "{}: columns {:?} match neither {:?} nor {:?}",
                path.display(),
                t.header,
                MOMENT_COLUMNS,
                MOMENT_MC_COLUMNS
            )));
        };
        let mut rows = Vec::with_capacity(t.rows.len());
        for (k, cells) in t.rows.iter().enumerate() {
            let line = t.first_data_line + k;
            let idx = |c: usize| parse_cell::<usize>(path, line, &cells[c]);
            let num = |c: usize| parse_cell::<f64>(path, line, &cells[c]);
            let (stderr, mode) = if with_se {
                (Some(num(5)?), cells[6].clone())
            } else {
                (None, cells[5].clone())
            };
            rows.push(MomentRow {
                n: idx(0)?,
                m: idx(1)?,
                i: idx(2)?,
                j: idx(3)?,
                value: num(4)?,
                stderr,
                mode,
            });
        }
        Ok(MomentTable { meta: t.meta, rows })
    }
}

pub const COVARIANCE_COLUMNS: [&str; 10] = [
    "kind", "n", "m", "re_z1", "im_z1", "re_z2", "im_z2", "re_value", "im_value", "mode",
];
pub const COVARIANCE_MC_COLUMNS: [&str; 12] = [
    "kind", "n", "m", "re_z1", "im_z1", "re_z2", "im_z2", "re_value", "im_value", "re_stderr", "im_stderr",
    "mode",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceRow {
    pub kind: ProbeKind,
    pub n: usize,
    pub m: usize,
    pub z1: Complex64,
    pub z2: Complex64,
    pub value: Complex64,
    pub stderr: Option<(f64, f64)>,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovarianceTable {
    pub meta: Meta,
    pub rows: Vec<CovarianceRow>,
}

impl CovarianceTable {
    pub fn write(&self, path: &Path) -> Result<()> {
        let with_se = !self.rows.is_empty() && self.rows.iter().all(|r| r.stderr.is_some());
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![
                    r.kind.name().to_string(),
                    r.n.to_string(),
                    r.m.to_string(),
                    r.z1.re.to_string(),
                    r.z1.im.to_string(),
                    r.z2.re.to_string(),
                    r.z2.im.to_string(),
                    r.value.re.to_string(),
                    r.value.im.to_string(),
                ];
                if let (true, Some((a, b))) = (with_se, r.stderr) {
                    cells.push(a.to_string());
                    cells.push(b.to_string());
                }
                cells.push(r.mode.clone());
                cells
            })
            .collect();
        let header: &[&str] = if with_se { &COVARIANCE_MC_COLUMNS } else { &COVARIANCE_COLUMNS };
        Ok(write_csv(path, &self.meta, header, &rows)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let t = read_csv(path)?;
        let with_se = if header_is(&t, &COVARIANCE_MC_COLUMNS) {
            true
        } else if header_is(&t, &COVARIANCE_COLUMNS) {
            false
        } else {
            return Err(HarnessError::Comparison(format!(
                "{}: columns {:?} match neither {:?} nor {:?}",
                path.display(),
                t.header,
                COVARIANCE_COLUMNS,
                COVARIANCE_MC_COLUMNS
            )));
        };
        let mut rows = Vec::with_capacity(t.rows.len());
        for (k, cells) in t.rows.iter().enumerate() {
            let line = t.first_data_line + k;
            let num = |c: usize| parse_cell::<f64>(path, line, &cells[c]);
            let kind = match cells[0].as_str() {
                "extradiag" => ProbeKind::Extradiag,
                "diag" => ProbeKind::Diag,
                other => {
                    return Err(overlap_core::Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: format!("unknown probe kind {other:?}"),
                    }
                    .into())
                }
            };
            let (stderr, mode) = if with_se {
                (Some((num(9)?, num(10)?)), cells[11].clone())
            } else {
                (None, cells[9].clone())
            };
            rows.push(CovarianceRow {
                kind,
                n: parse_cell(path, line, &cells[1])?,
                m: parse_cell(path, line, &cells[2])?,
                z1: Complex64::new(num(3)?, num(4)?),
                z2: Complex64::new(num(5)?, num(6)?),
                value: Complex64::new(num(7)?, num(8)?),
                stderr,
                mode,
            });
        }
        Ok(CovarianceTable { meta: t.meta, rows })
    }
}

fn header_is(t: &CsvTable, expected: &[&str]) -> bool {
    t.header.len() == expected.len() && t.header.iter().zip(expected).all(|(a, b)| a == b)
}

fn parse_cell<T: std::str::FromStr>(path: &Path, line: usize, cell: &str) -> Result<T> {
    cell.parse::<T>().map_err(|_| {
        overlap_core::Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("cannot parse cell {cell:?}"),
        }
        .into()
    })
}
