//! Flat `key = value` experiment configuration.
//!
//! Every key except `version` and `experiment` has an experiment-dependent
//! default. The canonical rendering lists every resolved value explicitly,
//! so parsing it back yields the same configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use overlap_core::{CovarianceMode, CyclicMode, Ensemble};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Fig1SecondMoment,
    Fig2FourthMoment,
    SemicircleOracle,
    CovarianceCheck,
    Custom,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Fig1SecondMoment,
        Experiment::Fig2FourthMoment,
        Experiment::SemicircleOracle,
        Experiment::CovarianceCheck,
        Experiment::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig1SecondMoment => "fig1-second-moment",
            Experiment::Fig2FourthMoment => "fig2-fourth-moment",
            Experiment::SemicircleOracle => "semicircle-oracle",
            Experiment::CovarianceCheck => "covariance-check",
            Experiment::Custom => "custom",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
                format!("unknown experiment {s:?}, expected one of {names:?}")
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumChoice {
    Gaussian { sigma0: f64, seed: u64 },
    Constant { level: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    /// `Cov(G_nm(z1), G_mn(z2))`
    Extradiag,
    /// `Cov(G_nn(z1), G_mm(z2))`
    Diag,
}

impl ProbeKind {
    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::Extradiag => "extradiag",
            ProbeKind::Diag => "diag",
        }
    }
}

/// A covariance probe at `z1 = lambda_i + i eta`, `z2 = lambda_j - i eta`,
/// where `lambda_k` are the predicted mean dressed positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    pub n: usize,
    pub m: usize,
    pub i: usize,
    pub j: usize,
}

impl fmt::Display for ProbeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}:{}", self.kind.name(), self.n, self.m, self.i, self.j)
    }
}

impl FromStr for ProbeSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != 4 && parts.len() != 5 {
            return Err(format!("probe {s:?} must look like kind:n:m:i or kind:n:m:i:j"));
        }
        let kind = match parts[0] {
            "extradiag" => ProbeKind::Extradiag,
            "diag" => ProbeKind::Diag,
            other => return Err(format!("unknown probe kind {other:?}")),
        };
        let idx = |t: &str| t.parse::<usize>().map_err(|_| format!("bad index {t:?} in probe {s:?}"));
        let (n, m, i) = (idx(parts[1])?, idx(parts[2])?, idx(parts[3])?);
        let j = if parts.len() == 5 { idx(parts[4])? } else { i };
        Ok(ProbeSpec { kind, n, m, i, j })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverOverrides {
    pub eta_final: Option<f64>,
    pub grid_points: Option<usize>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub damping: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    /// Comparison mask: points where the reference is at least this fraction of its peak.
    pub mask_fraction: f64,
    pub rel_tol: f64,
    pub z_tol: f64,
    pub min_correlation: f64,
    /// Sign agreement is scored where `|theory|` is at least this fraction of its peak.
    pub sign_mask: f64,
    pub min_sign_agreement: f64,
    pub factorized_fraction: f64,
    pub factorized_z_tol: f64,
    pub probe_z_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            mask_fraction: 0.01,
            rel_tol: 0.15,
            z_tol: 4.0,
            min_correlation: 0.9,
            sign_mask: 0.1,
            min_sign_agreement: 0.9,
            factorized_fraction: 0.95,
            factorized_z_tol: 3.0,
            probe_z_tol: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment: Experiment,
    pub n: usize,
    pub spectrum: SpectrumChoice,
    pub ensemble: Ensemble,
    pub sigma_w: Vec<f64>,
    /// Zero runs the theory pipeline only.
    pub realizations: u64,
    pub master_seed: u64,
    /// Bare indices whose full second-moment rows are tabulated.
    pub rows: Vec<usize>,
    pub cyclic_pairs: Vec<(usize, usize)>,
    pub factorized_pairs: Vec<(usize, usize)>,
    pub probes: Vec<ProbeSpec>,
    pub probe_eta: f64,
    pub mode: CyclicMode,
    pub covariance_mode: CovarianceMode,
    pub block_size: u64,
    pub checkpoint_every: u64,
    pub solver: SolverOverrides,
    pub thresholds: Thresholds,
    pub output: PathBuf,
    /// Worker threads; 0 picks the machine default. Never affects results.
    pub threads: usize,
}

impl ExperimentConfig {
    /// Configuration with every default filled in for `experiment`.
    pub fn preset(experiment: Experiment) -> Self {
        let n = match experiment {
            Experiment::Fig1SecondMoment => 256,
            Experiment::SemicircleOracle => 64,
            _ => 128,
        };
        let mut c = ExperimentConfig {
            version: CONFIG_VERSION,
            experiment,
            n,
            spectrum: SpectrumChoice::Gaussian { sigma0: 1.0, seed: 1 },
            ensemble: Ensemble::Goe,
            sigma_w: vec![0.2],
            realizations: 1000,
            master_seed: 1,
            rows: Vec::new(),
            cyclic_pairs: Vec::new(),
            factorized_pairs: Vec::new(),
            probes: Vec::new(),
            probe_eta: 0.05,
            mode: CyclicMode::default(),
            covariance_mode: CovarianceMode::default(),
            block_size: 50,
            checkpoint_every: 10_000,
            solver: SolverOverrides::default(),
            thresholds: Thresholds::default(),
            output: PathBuf::from("runs").join(experiment.name()),
            threads: 0,
        };
        c.apply_n_defaults(n);
        match experiment {
            Experiment::Fig1SecondMoment => {
                c.sigma_w = vec![0.08, 0.2, 0.65];
                c.realizations = 2000;
            }
            Experiment::Fig2FourthMoment => {
                // 0.4 is taken as sigma_w, not sigma_w^2.
                c.sigma_w = vec![0.4];
                c.realizations = 100_000;
            }
            Experiment::SemicircleOracle => {
                c.spectrum = SpectrumChoice::Constant { level: 0.0 };
                c.sigma_w = vec![1.0];
                c.realizations = 0;
            }
            Experiment::CovarianceCheck => {
                c.sigma_w = vec![0.4];
                c.realizations = 100_000;
            }
            Experiment::Custom => {}
        }
        c
    }

    /// Index-dependent defaults, rescaled whenever `n` changes before the lists are set.
    fn apply_n_defaults(&mut self, n: usize) {
        self.n = n;
        let (q1, q3) = (n / 4, 3 * n / 4);
        self.rows.clear();
        self.cyclic_pairs.clear();
        self.factorized_pairs.clear();
        self.probes.clear();
        match self.experiment {
            Experiment::Fig1SecondMoment => self.rows = vec![q1, n / 2, q3],
            Experiment::Fig2FourthMoment => {
                self.cyclic_pairs = vec![(q1, q3)];
                self.factorized_pairs = vec![(q1, q3)];
            }
            Experiment::CovarianceCheck => self.probes = default_probes(n),
            _ => {}
        }
    }

    /// Parses the text form. Unknown, repeated and malformed keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::usage("config", format!("line {}: expected `key = value`, found {line:?}", k + 1))
            })?;
            let key = key.trim().to_string();
            if entries.iter().any(|(_, k2, _)| *k2 == key) {
                return Err(HarnessError::usage(&key, format!("line {}: key given twice", k + 1)));
            }
            entries.push((k + 1, key, value.trim().to_string()));
        }
        let take = |name: &str| entries.iter().find(|(_, k, _)| k == name).map(|(_, _, v)| v.as_str());

        let version: u32 = parse_field("version", take("version").ok_or_else(|| {
            HarnessError::usage("version", "missing required key")
        })?)?;
        if version != CONFIG_VERSION {
            return Err(HarnessError::usage(
                "version",
                format!("unsupported version {version}, this build reads version {CONFIG_VERSION}"),
            ));
        }
        let experiment: Experiment = parse_field("experiment", take("experiment").ok_or_else(|| {
            HarnessError::usage("experiment", "missing required key")
        })?)?;

        let mut c = ExperimentConfig::preset(experiment);
        if let Some(v) = take("n") {
            let n: usize = parse_field("n", v)?;
            c.apply_n_defaults(n);
        }

        let spectrum_kind = take("spectrum").unwrap_or(match c.spectrum {
            SpectrumChoice::Gaussian { .. } => "gaussian",
            SpectrumChoice::Constant { .. } => "constant",
            SpectrumChoice::File { .. } => "file",
        });
        let allowed: &[&str] = match spectrum_kind {
            "gaussian" => &["sigma0", "spectrum_seed"],
            "constant" => &["constant_level"],
            "file" => &["spectrum_path"],
            other => {
                return Err(HarnessError::usage(
                    "spectrum",
                    format!("unknown spectrum kind {other:?}, expected gaussian, constant or file"),
                ))
            }
        };
        for key in ["sigma0", "spectrum_seed", "constant_level", "spectrum_path"] {
            if take(key).is_some() && !allowed.contains(&key) {
                return Err(HarnessError::usage(key, format!("not used with spectrum = {spectrum_kind}")));
            }
        }
        c.spectrum = match spectrum_kind {
            "gaussian" => SpectrumChoice::Gaussian {
                sigma0: take("sigma0").map(|v| parse_field("sigma0", v)).transpose()?.unwrap_or(1.0),
                seed: take("spectrum_seed").map(|v| parse_field("spectrum_seed", v)).transpose()?.unwrap_or(1),
            },
            "constant" => SpectrumChoice::Constant {
                level: take("constant_level").map(|v| parse_field("constant_level", v)).transpose()?.unwrap_or(0.0),
            },
            _ => SpectrumChoice::File {
                path: PathBuf::from(
                    take("spectrum_path").ok_or_else(|| HarnessError::usage("spectrum_path", "required with spectrum = file"))?,
                ),
            },
        };

        for (_, key, value) in &entries {
            let v = value.as_str();
            let key = key.as_str();
            match key {
                "version" | "experiment" | "n" | "spectrum" | "sigma0" | "spectrum_seed" | "constant_level"
                | "spectrum_path" => {}
                "ensemble" => c.ensemble = parse_field(key, v)?,
                "sigma_w" => c.sigma_w = parse_list(key, v)?,
                "realizations" => c.realizations = parse_field(key, v)?,
                "master_seed" => c.master_seed = parse_field(key, v)?,
                "rows" => c.rows = parse_list(key, v)?,
                "cyclic_pairs" => c.cyclic_pairs = parse_pairs(key, v)?,
                "factorized_pairs" => c.factorized_pairs = parse_pairs(key, v)?,
                "probes" => c.probes = parse_list(key, v)?,
                "probe_eta" => c.probe_eta = parse_field(key, v)?,
                "mode" => c.mode = parse_field(key, v)?,
                "covariance_mode" => c.covariance_mode = parse_field(key, v)?,
                "block_size" => c.block_size = parse_field(key, v)?,
                "checkpoint_every" => c.checkpoint_every = parse_field(key, v)?,
                "eta_final" => c.solver.eta_final = Some(parse_field(key, v)?),
                "grid_points" => c.solver.grid_points = Some(parse_field(key, v)?),
                "solver_tol" => c.solver.tol = Some(parse_field(key, v)?),
                "max_iters" => c.solver.max_iters = Some(parse_field(key, v)?),
                "damping" => c.solver.damping = Some(parse_field(key, v)?),
                "mask_fraction" => c.thresholds.mask_fraction = parse_field(key, v)?,
                "rel_tol" => c.thresholds.rel_tol = parse_field(key, v)?,
                "z_tol" => c.thresholds.z_tol = parse_field(key, v)?,
                "min_correlation" => c.thresholds.min_correlation = parse_field(key, v)?,
                "sign_mask" => c.thresholds.sign_mask = parse_field(key, v)?,
                "min_sign_agreement" => c.thresholds.min_sign_agreement = parse_field(key, v)?,
                "factorized_fraction" => c.thresholds.factorized_fraction = parse_field(key, v)?,
                "factorized_z_tol" => c.thresholds.factorized_z_tol = parse_field(key, v)?,
                "probe_z_tol" => c.thresholds.probe_z_tol = parse_field(key, v)?,
                "output" => c.output = PathBuf::from(v),
                "threads" => c.threads = parse_field(key, v)?,
                other => return Err(HarnessError::usage(other, "unknown key")),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n < 2 {
            return Err(HarnessError::usage("n", format!("must be >= 2, got {n}")));
        }
        match &self.spectrum {
            SpectrumChoice::Gaussian { sigma0, .. } => positive("sigma0", *sigma0)?,
            SpectrumChoice::Constant { level } => finite("constant_level", *level)?,
            SpectrumChoice::File { path } => {
                if path.as_os_str().is_empty() {
                    return Err(HarnessError::usage("spectrum_path", "empty path"));
                }
            }
        }
        if self.sigma_w.is_empty() {
            return Err(HarnessError::usage("sigma_w", "at least one value is required"));
        }
        for &s in &self.sigma_w {
            positive("sigma_w", s)?;
        }
        let in_range = |key: &str, k: usize| {
            if k < n {
                Ok(())
            } else {
                Err(HarnessError::usage(key, format!("index {k} out of range for n = {n}")))
            }
        };
        for &r in &self.rows {
            in_range("rows", r)?;
        }
        for &(a, b) in &self.cyclic_pairs {
            in_range("cyclic_pairs", a)?;
            in_range("cyclic_pairs", b)?;
            if a == b {
                return Err(HarnessError::usage("cyclic_pairs", format!("pair ({a}, {b}) needs distinct indices")));
            }
        }
        for &(a, b) in &self.factorized_pairs {
            in_range("factorized_pairs", a)?;
            in_range("factorized_pairs", b)?;
        }
        for p in &self.probes {
            for k in [p.n, p.m, p.i, p.j] {
                in_range("probes", k)?;
            }
            if p.n == p.m {
                return Err(HarnessError::usage("probes", format!("probe {p} needs distinct bare indices")));
            }
        }
        positive("probe_eta", self.probe_eta)?;
        if self.block_size == 0 {
            return Err(HarnessError::usage("block_size", "must be >= 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(HarnessError::usage("checkpoint_every", "must be >= 1"));
        }
        if let Some(e) = self.solver.eta_final {
            positive("eta_final", e)?;
        }
        if let Some(g) = self.solver.grid_points {
            if g < 16 {
                return Err(HarnessError::usage("grid_points", format!("must be >= 16, got {g}")));
            }
        }
        if let Some(t) = self.solver.tol {
            positive("solver_tol", t)?;
        }
        if self.solver.max_iters == Some(0) {
            return Err(HarnessError::usage("max_iters", "must be >= 1"));
        }
        if let Some(d) = self.solver.damping {
            if !(d > 0.0 && d <= 1.0) {
                return Err(HarnessError::usage("damping", format!("must lie in (0, 1], got {d}")));
            }
        }
        let t = &self.thresholds;
        for (key, v) in [
            ("mask_fraction", t.mask_fraction),
            ("rel_tol", t.rel_tol),
            ("z_tol", t.z_tol),
            ("sign_mask", t.sign_mask),
            ("factorized_z_tol", t.factorized_z_tol),
            ("probe_z_tol", t.probe_z_tol),
        ] {
            positive(key, v)?;
        }
        for (key, v) in [
            ("min_correlation", t.min_correlation),
            ("min_sign_agreement", t.min_sign_agreement),
            ("factorized_fraction", t.factorized_fraction),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(HarnessError::usage(key, format!("must lie in [-1, 1], got {v}")));
            }
        }
        if self.output.as_os_str().is_empty() {
            return Err(HarnessError::usage("output", "empty path"));
        }
        Ok(())
    }

    /// Canonical text form. `include_local` adds `output` and `threads`,
    /// which never influence results and are left out of the hash.
    pub fn render(&self, include_local: bool) -> String {
        let mut out = Vec::<(String, String)>::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("version", self.version.to_string());
        put("experiment", self.experiment.to_string());
        put("n", self.n.to_string());
        match &self.spectrum {
            SpectrumChoice::Gaussian { sigma0, seed } => {
                put("spectrum", "gaussian".into());
                put("sigma0", fmt_f64(*sigma0));
                put("spectrum_seed", seed.to_string());
            }
            SpectrumChoice::Constant { level } => {
                put("spectrum", "constant".into());
                put("constant_level", fmt_f64(*level));
            }
            SpectrumChoice::File { path } => {
                put("spectrum", "file".into());
                put("spectrum_path", path.display().to_string());
            }
        }
        put("ensemble", self.ensemble.to_string());
        put("sigma_w", join(self.sigma_w.iter().map(|x| fmt_f64(*x))));
        put("realizations", self.realizations.to_string());
        put("master_seed", self.master_seed.to_string());
        put("rows", join(self.rows.iter().map(|r| r.to_string())));
        put("cyclic_pairs", join(self.cyclic_pairs.iter().map(|(a, b)| format!("{a}:{b}"))));
        put("factorized_pairs", join(self.factorized_pairs.iter().map(|(a, b)| format!("{a}:{b}"))));
        put("probes", join(self.probes.iter().map(|p| p.to_string())));
        put("probe_eta", fmt_f64(self.probe_eta));
        put("mode", self.mode.to_string());
        put("covariance_mode", self.covariance_mode.to_string());
        put("block_size", self.block_size.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        if let Some(v) = self.solver.eta_final {
            put("eta_final", fmt_f64(v));
        }
        if let Some(v) = self.solver.grid_points {
            put("grid_points", v.to_string());
        }
        if let Some(v) = self.solver.tol {
            put("solver_tol", fmt_f64(v));
        }
        if let Some(v) = self.solver.max_iters {
            put("max_iters", v.to_string());
        }
        if let Some(v) = self.solver.damping {
            put("damping", fmt_f64(v));
        }
        let t = &self.thresholds;
        put("mask_fraction", fmt_f64(t.mask_fraction));
        put("rel_tol", fmt_f64(t.rel_tol));
        put("z_tol", fmt_f64(t.z_tol));
        put("min_correlation", fmt_f64(t.min_correlation));
        put("sign_mask", fmt_f64(t.sign_mask));
        put("min_sign_agreement", fmt_f64(t.min_sign_agreement));
        put("factorized_fraction", fmt_f64(t.factorized_fraction));
        put("factorized_z_tol", fmt_f64(t.factorized_z_tol));
        put("probe_z_tol", fmt_f64(t.probe_z_tol));
        if include_local {
            put("output", self.output.display().to_string());
            put("threads", self.threads.to_string());
        }
        out.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical form without the local-only keys.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render(false).as_bytes()))
    }
}

/// Ten extradiagonal probes spread over the band, laid out for `n = 128` and rescaled.
pub fn default_probes(n: usize) -> Vec<ProbeSpec> {
    const LAYOUT: [(usize, usize, usize); 10] = [
        (32, 96, 32),
        (32, 96, 96),
        (32, 33, 32),
        (62, 66, 64),
        (10, 20, 15),
        (100, 120, 110),
        (64, 65, 64),
        (40, 90, 64),
        (5, 70, 5),
        (120, 127, 124),
    ];
    let scale = |k: usize| (k * n / 128).min(n - 1);
    LAYOUT
        .iter()
        .map(|&(a, b, i)| {
            let (mut sa, mut sb) = (scale(a), scale(b));
            // Neighbouring levels stay neighbours when the layout shrinks.
            if sa == sb {
                if sb + 1 < n {
                    sb += 1;
                } else {
                    sa -= 1;
                }
            }
            ProbeSpec {
                kind: ProbeKind::Extradiag,
                n: sa,
                m: sb,
                i: scale(i),
                j: scale(i),
            }
        })
        .collect()
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(", ")
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| HarnessError::usage(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_field(key, s))
        .collect()
}

fn parse_pairs(key: &str, value: &str) -> Result<Vec<(usize, usize)>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (a, b) = s
                .split_once(':')
                .ok_or_else(|| HarnessError::usage(key, format!("pair {s:?} must look like a:b")))?;
            Ok((parse_field(key, a)?, parse_field(key, b)?))
        })
        .collect()
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::usage(key, format!("must be finite and > 0, got {v}")))
    }
}

fn finite(key: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::usage(key, format!("must be finite, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn presets_round_trip() {
        for e in Experiment::ALL {
            let c = ExperimentConfig::preset(e);
            c.validate().unwrap();
            let text = c.render(true);
            let back = ExperimentConfig::parse(&text).unwrap();
            assert_eq!(back, c, "{e}");
            assert_eq!(back.render(true), text);
        }
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::parse("version = 1\nexperiment = fig2-fourth-moment\nn = 64\n").unwrap();
        assert_eq!(c.cyclic_pairs, vec![(16, 48)]);
        assert_eq!(c.sigma_w, vec![0.4]);
        assert_eq!(c.mode, CyclicMode::Symmetrized);
    }

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        let err = ExperimentConfig::parse("version = 1\nexperiment = custom\nbogus = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = ExperimentConfig::parse("version = 1\nexperiment = custom\nn = 3\nn = 4\n").unwrap_err();
        assert!(err.to_string().contains("twice"), "{err}");
        let err = ExperimentConfig::parse("experiment = custom\n").unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
        let err = ExperimentConfig::parse("version = 2\nexperiment = custom\n").unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        for (line, field) in [
            ("sigma_w = 0.2, -1", "sigma_w"),
            ("rows = 500", "rows"),
            ("n = 1", "n"),
            ("mode = sideways", "mode"),
            ("constant_level = 1", "constant_level"),
            ("probes = extradiag:3:3:1", "probes"),
        ] {
            let text = format!("version = 1\nexperiment = custom\n{line}\n");
            let err = ExperimentConfig::parse(&text).unwrap_err();
            assert!(err.to_string().contains(field), "{line}: {err}");
        }
    }

    #[test]
    fn hash_ignores_local_keys() {
        let mut a = ExperimentConfig::preset(Experiment::Custom);
        let h = a.hash();
        a.threads = 7;
        a.output = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), h);
        a.master_seed += 1;
        assert_ne!(a.hash(), h);
    }

    #[test]
    fn default_probes_are_valid() {
        for n in [2, 3, 64, 128, 256] {
            let mut c = ExperimentConfig::preset(Experiment::CovarianceCheck);
            c.apply_n_defaults(n);
            assert_eq!(c.probes.len(), 10);
            c.validate().unwrap();
        }
    }

    proptest! {
        #[test]
        fn arbitrary_configs_round_trip(
            n in 2usize..600,
            sigmas in proptest::collection::vec(1e-6f64..10.0, 1..4),
            seed in any::<u64>(),
            realizations in 0u64..1_000_000,
            level in -5.0f64..5.0,
            eta in proptest::option::of(1e-9f64..1.0),
            literal in any::<bool>(),
        ) {
            let mut c = ExperimentConfig::preset(Experiment::Custom);
            c.apply_n_defaults(n);
            c.sigma_w = sigmas;
            c.master_seed = seed;
            c.realizations = realizations;
            c.spectrum = SpectrumChoice::Constant { level };
            c.solver.eta_final = eta;
            c.rows = vec![0, n - 1];
            c.factorized_pairs = vec![(n - 1, 0)];
            if literal {
                c.mode = CyclicMode::PaperLiteral;
            }
            let back = ExperimentConfig::parse(&c.render(true)).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.hash(), c.hash());
        }
    }
}
