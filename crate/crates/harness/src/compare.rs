//! Pointwise comparison of two moment tables.
//!
//! The first table is the reference (usually theory); its magnitude defines
//! the comparison mask per `(n, m)` group. Standard errors from both tables
//! are combined in quadrature, so two Monte Carlo tables can be compared too.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::tables::MomentTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub mask_fraction: f64,
    pub rel_tol: f64,
    pub z_tol: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            mask_fraction: 0.01,
            rel_tol: 0.15,
            z_tol: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub key: (usize, usize, usize, usize),
    pub reference: f64,
    pub candidate: f64,
    /// Combined standard error; zero when neither table carries one.
    pub stderr: f64,
    pub z: f64,
    pub rel_err: f64,
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub options: CompareOptions,
    pub rows: Vec<ComparisonRow>,
    pub masked_count: usize,
    /// Largest `|z|` on the mask.
    pub max_abs_z: f64,
    /// Largest relative error on the mask.
    pub max_rel_err: f64,
    /// Fraction of masked points with `|z| <= z_tol`.
    pub within_z_fraction: f64,
    /// Pearson correlation over all rows; `None` when either side is constant.
    pub correlation: Option<f64>,
    pub reference_config_hash: Option<String>,
    pub candidate_config_hash: Option<String>,
    pub reference_sha256: Option<String>,
    pub candidate_sha256: Option<String>,
}

impl ComparisonReport {
    pub fn z_passed(&self) -> bool {
        self.max_abs_z <= self.options.z_tol
    }

    pub fn rel_passed(&self) -> bool {
        self.max_rel_err <= self.options.rel_tol
    }

    pub fn passed(&self) -> bool {
        self.z_passed() && self.rel_passed()
    }

    /// Fraction of points with `|reference| >= sign_mask * peak` whose signs agree.
    pub fn sign_agreement(&self, sign_mask: f64) -> f64 {
        let peak = self.rows.iter().fold(0.0f64, |p, r| p.max(r.reference.abs()));
        let scored: Vec<&ComparisonRow> = self
            .rows
            .iter()
            .filter(|r| peak > 0.0 && r.reference.abs() >= sign_mask * peak)
            .collect();
        if scored.is_empty() {
            return 0.0;
        }
        let agree = scored
            .iter()
            .filter(|r| r.reference.signum() == r.candidate.signum())
            .count();
        agree as f64 / scored.len() as f64
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let o = &self.options;
        for (label, hash) in [
            ("reference sha256", &self.reference_sha256),
            ("candidate sha256", &self.candidate_sha256),
            ("reference config_hash", &self.reference_config_hash),
            ("candidate config_hash", &self.candidate_config_hash),
        ] {
            if let Some(h) = hash {
                writeln!(s, "{label}: {h}").unwrap();
            }
        }
        writeln!(s, "rows: {} (masked {} at {} of peak)", self.rows.len(), self.masked_count, o.mask_fraction).unwrap();
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        writeln!(s, "max |z| on mask: {:.4} (tolerance {}) {}", self.max_abs_z, o.z_tol, verdict(self.z_passed())).unwrap();
        writeln!(
            s,
            "max relative error on mask: {:.4} (tolerance {}) {}",
            self.max_rel_err,
            o.rel_tol,
            verdict(self.rel_passed())
        )
        .unwrap();
        writeln!(s, "fraction of mask with |z| <= {}: {:.4}", o.z_tol, self.within_z_fraction).unwrap();
        match self.correlation {
            Some(c) => writeln!(s, "pearson correlation: {c:.6}").unwrap(),
            None => writeln!(s, "pearson correlation: undefined").unwrap(),
        }
        writeln!(s, "overall: {}", verdict(self.passed())).unwrap();
        s
    }

    /// Writes the per-point rows with the summary as metadata.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut meta = Vec::new();
        let mut put = |k: &str, v: String| meta.push((k.to_string(), v));
        if let Some(h) = &self.reference_config_hash {
            put("reference_config_hash", h.clone());
        }
        if let Some(h) = &self.candidate_config_hash {
            put("candidate_config_hash", h.clone());
        }
        put("mask_fraction", self.options.mask_fraction.to_string());
        put("max_abs_z", self.max_abs_z.to_string());
        put("max_rel_err", self.max_rel_err.to_string());
        put(
            "correlation",
            self.correlation.map_or("undefined".to_string(), |c| c.to_string()),
        );
        let header = ["n", "m", "i", "j", "reference", "candidate", "stderr", "z", "rel_err", "masked"];
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.key.0.to_string(),
                    r.key.1.to_string(),
                    r.key.2.to_string(),
                    r.key.3.to_string(),
                    r.reference.to_string(),
                    r.candidate.to_string(),
                    r.stderr.to_string(),
                    r.z.to_string(),
                    r.rel_err.to_string(),
                    (r.masked as u8).to_string(),
                ]
            })
            .collect();
        Ok(overlap_core::table::write_csv(path, &meta, &header, &rows)?)
    }
}

fn meta_value(t: &MomentTable, key: &str) -> Option<String> {
    t.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone())
}

/// Compares `candidate` against `reference` row by row. Both tables must
/// cover exactly the same `(n, m, i, j)` keys.
pub fn compare(reference: &MomentTable, candidate: &MomentTable, options: CompareOptions) -> Result<ComparisonReport> {
    let mut cand = BTreeMap::new();
    for r in &candidate.rows {
        if cand.insert((r.n, r.m, r.i, r.j), r).is_some() {
            return Err(HarnessError::Comparison(format!(
                "candidate has a repeated row ({}, {}, {}, {})",
                r.n, r.m, r.i, r.j
            )));
        }
    }
    if cand.len() != reference.rows.len() {
        return Err(HarnessError::Comparison(format!(
            "row counts differ: reference {} vs candidate {}",
            reference.rows.len(),
            cand.len()
        )));
    }
    let mut peaks: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for r in &reference.rows {
        let p = peaks.entry((r.n, r.m)).or_insert(0.0);
        *p = p.max(r.value.abs());
    }
    let mut rows = Vec::with_capacity(reference.rows.len());
    for r in &reference.rows {
        let key = (r.n, r.m, r.i, r.j);
        let c = cand.get(&key).ok_or_else(|| {
            HarnessError::Comparison(format!("row {key:?} of the reference is missing from the candidate"))
        })?;
        let se_a = r.stderr.unwrap_or(0.0);
        let se_b = c.stderr.unwrap_or(0.0);
        let stderr = se_a.hypot(se_b);
        let diff = c.value - r.value;
        let z = if diff == 0.0 {
            0.0
        } else if stderr > 0.0 {
            diff / stderr
        } else {
            f64::INFINITY.copysign(diff)
        };
        let rel_err = if diff == 0.0 { 0.0 } else { (diff / r.value).abs() };
        let peak = peaks[&(r.n, r.m)];
        let masked = peak > 0.0 && r.value.abs() >= options.mask_fraction * peak;
        rows.push(ComparisonRow {
            key,
            reference: r.value,
            candidate: c.value,
            stderr,
            z,
            rel_err,
            masked,
        });
    }
    let on_mask = || rows.iter().filter(|r| r.masked);
    let masked_count = on_mask().count();
    let max_abs_z = on_mask().fold(0.0f64, |m, r| m.max(r.z.abs()));
    let max_rel_err = on_mask().fold(0.0f64, |m, r| m.max(r.rel_err));
    let within_z_fraction = if masked_count == 0 {
        0.0
    } else {
        on_mask().filter(|r| r.z.abs() <= options.z_tol).count() as f64 / masked_count as f64
    };
    let xs: Vec<f64> = rows.iter().map(|r| r.reference).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.candidate).collect();
    let correlation = pearson(&xs, &ys);
    Ok(ComparisonReport {
        options,
        rows,
        masked_count,
        max_abs_z,
        max_rel_err,
        within_z_fraction,
        correlation,
        reference_config_hash: meta_value(reference, "config_hash"),
        candidate_config_hash: meta_value(candidate, "config_hash"),
        reference_sha256: None,
        candidate_sha256: None,
    })
}

pub fn compare_files(reference: &Path, candidate: &Path, options: CompareOptions) -> Result<ComparisonReport> {
    let a = MomentTable::read(reference)?;
    let b = MomentTable::read(candidate)?;
    let mut report = compare(&a, &b, options)?;
    report.reference_sha256 = Some(file_sha256(reference)?);
    report.candidate_sha256 = Some(file_sha256(candidate)?);
    Ok(report)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
