//! Human-readable summary of a finished run directory.

use std::fmt::Write as _;
use std::path::Path;

use crate::compare::file_sha256;
use crate::error::{HarnessError, Result};
use crate::pipeline::{Bound, RunSummary, CONFIG_FILE, REPORT_FILE, SUMMARY_FILE};

/// Renders the parameter echo, band-center delocalization, criteria table and
/// file manifest. Fails with the list of absent files if anything is missing.
pub fn report(dir: &Path) -> Result<String> {
    let base = [CONFIG_FILE, REPORT_FILE, SUMMARY_FILE];
    let missing: Vec<String> = base
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::MissingArtifacts {
            dir: dir.to_path_buf(),
            missing,
        });
    }
    let summary = RunSummary::read(dir)?;
    let missing: Vec<String> = summary
        .files
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::MissingArtifacts {
            dir: dir.to_path_buf(),
            missing,
        });
    }

    let mut out = String::new();
    writeln!(out, "run directory: {}", dir.display()).unwrap();
    writeln!(out, "experiment: {}", summary.experiment).unwrap();
    writeln!(out, "config hash: {}", summary.config_hash).unwrap();
    writeln!(out, "\nparameters:").unwrap();
    let config_path = dir.join(CONFIG_FILE);
    let config = std::fs::read_to_string(&config_path).map_err(|e| HarnessError::io(&config_path, e))?;
    for line in config.lines() {
        writeln!(out, "  {line}").unwrap();
    }

    let deloc: Vec<_> = summary
        .metrics
        .iter()
        .filter(|(k, _)| k.starts_with("gamma_over_d"))
        .collect();
    if !deloc.is_empty() {
        writeln!(out, "\nband-center delocalization Gamma/D:").unwrap();
        for (k, v) in deloc {
            writeln!(out, "  {k}: {v:.3}").unwrap();
        }
    }
    let others: Vec<_> = summary
        .metrics
        .iter()
        .filter(|(k, _)| !k.starts_with("gamma_over_d"))
        .collect();
    if !others.is_empty() {
        writeln!(out, "\nmetrics:").unwrap();
        for (k, v) in others {
            writeln!(out, "  {k}: {v:.6e}").unwrap();
        }
    }

    writeln!(out, "\ncriteria:").unwrap();
    let width = summary.criteria.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &summary.criteria {
        let op = match c.bound {
            Bound::Max => "<=",
            Bound::Min => ">=",
        };
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "  {verdict}  {:width$}  {:.6e} {op} {:e}", c.name, c.value, c.threshold).unwrap();
    }
    writeln!(
        out,
        "overall: {}",
        if summary.passed { "PASS" } else { "FAIL" }
    )
    .unwrap();

    writeln!(out, "\nfiles:").unwrap();
    for f in &summary.files {
        let path = dir.join(f);
        let size = std::fs::metadata(&path).map_err(|e| HarnessError::io(&path, e))?.len();
        writeln!(out, "  {}  {:>10}  {f}", file_sha256(&path)?, size).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_lists_every_base_file() {
        let dir = tempfile::tempdir().unwrap();
        match report(dir.path()) {
            Err(HarnessError::MissingArtifacts { missing, .. }) => {
                assert_eq!(missing, vec![CONFIG_FILE, REPORT_FILE, SUMMARY_FILE]);
            }
            other => panic!("expected missing artifacts, got {other:?}"),
        }
    }
}
