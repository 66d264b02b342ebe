//! Theory and Monte Carlo pipelines behind `overlap run`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use overlap_core::montecarlo::{GreenProbe, McConfig, MomentAccumulator, MonteCarlo, TrackingConfig};
use overlap_core::resolvent::default_grid;
use overlap_core::table::{write_atomic, write_numeric_csv};
use overlap_core::{
    load_spectrum, make_gaussian_spectrum, solve_grid, BareSpectrum, CovarianceMode, CyclicMode, InteractionSpec,
    OverlapTheory, SolverConfig,
};
use serde::{Deserialize, Serialize};

use crate::compare::{compare, pearson, CompareOptions};
use crate::config::{ExperimentConfig, ProbeKind, SpectrumChoice};
use crate::error::{HarnessError, Result};
use crate::tables::{CovarianceRow, CovarianceTable, Meta, MomentTable};

pub const CONFIG_FILE: &str = "config.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// Passes when `value <= threshold`.
    Max,
    /// Passes when `value >= threshold`.
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub bound: Bound,
    pub passed: bool,
}

impl Criterion {
    pub fn new(name: impl Into<String>, value: f64, bound: Bound, threshold: f64) -> Self {
        let passed = match bound {
            Bound::Max => value <= threshold,
            Bound::Min => value >= threshold,
        };
        Criterion {
            name: name.into(),
            value,
            threshold,
            bound,
            passed,
        }
    }
}

/// Machine-readable outcome of a run, stored as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub experiment: String,
    pub passed: bool,
    pub criteria: Vec<Criterion>,
    pub metrics: BTreeMap<String, f64>,
    /// Artifact file names relative to the run directory, sorted.
    pub files: Vec<String>,
}

impl RunSummary {
    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            overlap_core::Error::Parse {
                path,
                line: e.line(),
                message: e.to_string(),
            }
            .into()
        })
    }
}

/// Resolves the output directory: relative paths are placed under `root` when given.
pub fn resolve_output(output: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if output.is_relative() => r.join(output),
        _ => output.to_path_buf(),
    }
}

pub fn build_spectrum(config: &ExperimentConfig) -> Result<BareSpectrum> {
    let s = match &config.spectrum {
        SpectrumChoice::Gaussian { sigma0, seed } => make_gaussian_spectrum(config.n, *sigma0, *seed)?,
        SpectrumChoice::Constant { level } => BareSpectrum::constant(config.n, *level)?,
        SpectrumChoice::File { path } => load_spectrum(path)?,
    };
    if s.len() != config.n {
        return Err(HarnessError::usage(
            "n",
            format!("spectrum has {} levels but n = {}", s.len(), config.n),
        ));
    }
    Ok(s)
}

/// Grid and solver settings for one `sigma_w`, with overrides applied.
pub fn solver_setup(config: &ExperimentConfig, spectrum: &BareSpectrum, sigma_w: f64) -> (Vec<f64>, SolverConfig) {
    let o = &config.solver;
    let mut solver = SolverConfig::for_sigma(sigma_w);
    if let Some(eta) = o.eta_final {
        solver.eta_schedule.retain(|&e| e > eta);
        solver.eta_schedule.push(eta);
    }
    if let Some(t) = o.tol {
        solver.tol = t;
    }
    if let Some(k) = o.max_iters {
        solver.max_iters = k;
    }
    if let Some(d) = o.damping {
        solver.damping = d;
    }
    let mut grid = default_grid(spectrum, sigma_w);
    if let Some(points) = o.grid_points {
        let (lo, hi) = (grid[0], grid[grid.len() - 1]);
        grid = (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect();
    }
    (grid, solver)
}

pub fn solve_theory(config: &ExperimentConfig, spectrum: &BareSpectrum, sigma_w: f64) -> Result<OverlapTheory> {
    let (grid, solver) = solver_setup(config, spectrum, sigma_w);
    Ok(OverlapTheory::new(solve_grid(spectrum, sigma_w, &grid, &solver)?)?)
}

/// Complex probe points for `spec`, placed at the predicted mean positions.
fn probe_points(theory: &OverlapTheory, eta: f64, i: usize, j: usize) -> (Complex64, Complex64) {
    let pos = theory.positions();
    (Complex64::new(pos[i], eta), Complex64::new(pos[j], -eta))
}

pub fn tracking_for(config: &ExperimentConfig, theory: &OverlapTheory) -> TrackingConfig {
    let probes = config
        .probes
        .iter()
        .map(|p| {
            let (z1, z2) = probe_points(theory, config.probe_eta, p.i, p.j);
            match p.kind {
                ProbeKind::Extradiag => GreenProbe::extradiag(p.n, p.m, z1, z2),
                ProbeKind::Diag => GreenProbe::diag(p.n, p.m, z1, z2),
            }
        })
        .collect();
    TrackingConfig {
        n: config.n,
        cyclic_pairs: config.cyclic_pairs.clone(),
        factorized_pairs: config.factorized_pairs.clone(),
        probes,
    }
}

/// Runs or resumes the Monte Carlo stage up to `config.realizations`.
///
/// A compatible checkpoint with at most the requested count is resumed;
/// one that belongs to another configuration or is already further along
/// is replaced by a fresh run. A corrupt checkpoint is an error.
pub fn run_monte_carlo(
    config: &ExperimentConfig,
    mc_config: McConfig,
    checkpoint: &Path,
    threads: usize,
) -> Result<MonteCarlo> {
    let target = config.realizations;
    let mut mc = if checkpoint.exists() {
        match MonteCarlo::restore(mc_config.clone(), checkpoint) {
            Ok(mc) if mc.next_index() <= target => mc,
            Ok(_) | Err(overlap_core::Error::IncompatibleCheckpoint { .. }) => MonteCarlo::new(mc_config)?,
            Err(e) => return Err(e.into()),
        }
    } else {
        MonteCarlo::new(mc_config)?
    };
    while mc.next_index() < target {
        let step = config.checkpoint_every.min(target - mc.next_index());
        mc.run(step, threads)?;
        mc.checkpoint(checkpoint)?;
    }
    if !checkpoint.exists() {
        mc.checkpoint(checkpoint)?;
    }
    Ok(mc)
}

struct Ctx<'a> {
    config: &'a ExperimentConfig,
    dir: &'a Path,
    hash: String,
    criteria: Vec<Criterion>,
    metrics: BTreeMap<String, f64>,
    files: Vec<String>,
}

impl Ctx<'_> {
    fn meta(&self, sigma_w: Option<f64>) -> Meta {
        let mut m = vec![
            ("config_hash".to_string(), self.hash.clone()),
            ("experiment".to_string(), self.config.experiment.to_string()),
            ("n".to_string(), self.config.n.to_string()),
            ("ensemble".to_string(), self.config.ensemble.to_string()),
        ];
        if let Some(s) = sigma_w {
            m.push(("sigma_w".to_string(), s.to_string()));
        }
        m.push((
            "index_convention".to_string(),
            "0-based; bare levels and dressed states in descending energy order".to_string(),
        ));
        m
    }

    fn path(&mut self, name: String) -> PathBuf {
        let p = self.dir.join(&name);
        self.files.push(name);
        p
    }

    fn criterion(&mut self, name: String, value: f64, bound: Bound, threshold: f64) {
        self.criteria.push(Criterion::new(name, value, bound, threshold));
    }
}

/// Executes `config`, writing every artifact into `dir`.
pub fn run(config: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let threads = match config.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::usage("threads", e.to_string()))?;
    pool.install(|| run_inner(config, dir, threads))
}

fn run_inner(config: &ExperimentConfig, dir: &Path, threads: usize) -> Result<RunSummary> {
    let mut ctx = Ctx {
        config,
        dir,
        hash: config.hash(),
        criteria: Vec::new(),
        metrics: BTreeMap::new(),
        files: Vec::new(),
    };
    let p = ctx.path(CONFIG_FILE.to_string());
    write_atomic(&p, config.render(false).as_bytes())?;

    let spectrum = build_spectrum(config)?;
    let p = ctx.path("spectrum.txt".to_string());
    spectrum.write(&p)?;
    let center = spectrum.levels().iter().sum::<f64>() / spectrum.len() as f64;

    for (k, &sigma_w) in config.sigma_w.iter().enumerate() {
        let tag = format!("sigma_w={sigma_w}");
        let theory = solve_theory(config, &spectrum, sigma_w)?;
        let p = ctx.path(format!("solution_s{k}.csv"));
        theory.solution().write_csv(&p, &ctx.meta(Some(sigma_w)))?;

        let table = theory.second_moment_table();
        let worst = table
            .iter()
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0f64, f64::max);
        ctx.criterion(format!("sum_rule[{tag}]"), worst, Bound::Max, 1e-2);
        ctx.metrics.insert(format!("gamma_over_d[{tag}]"), theory.delocalization(center)?);

        if let SpectrumChoice::Constant { level } = config.spectrum {
            semicircle_check(&mut ctx, &theory, level, k)?;
        }

        let theory_second = second_table(&ctx, &theory, sigma_w, &config.rows)?;
        let p = ctx.path(format!("theory_second_s{k}.csv"));
        theory_second.write(&p)?;

        let mut cyclic_theory = BTreeMap::new();
        for mode in [CyclicMode::Symmetrized, CyclicMode::PaperLiteral] {
            if config.cyclic_pairs.is_empty() {
                break;
            }
            let mut t = MomentTable::new(ctx.meta(Some(sigma_w)));
            for &(n, m) in &config.cyclic_pairs {
                for (i, j, v) in theory.fourth_moment_cyclic_grid(n, m, mode)? {
                    t.push((n, m, i, j), v, None, &mode.to_string());
                }
            }
            let p = ctx.path(format!("theory_cyclic_{mode}_s{k}.csv"));
            t.write(&p)?;
            cyclic_theory.insert(mode.to_string(), t);
        }

        if !config.factorized_pairs.is_empty() {
            let mut t = MomentTable::new(ctx.meta(Some(sigma_w)));
            for &(n, p) in &config.factorized_pairs {
                for i in 0..config.n {
                    for j in 0..config.n {
                        if n == p && i == j {
                            continue;
                        }
                        t.push((n, p, i, j), table[n][i] * table[p][j], None, "factorized");
                    }
                }
            }
            let p = ctx.path(format!("theory_factorized_s{k}.csv"));
            t.write(&p)?;
        }

        let mut cov_theory = BTreeMap::new();
        for mode in [CovarianceMode::Linear, CovarianceMode::Geometric] {
            if config.probes.is_empty() {
                break;
            }
            let mut t = CovarianceTable {
                meta: ctx.meta(Some(sigma_w)),
                rows: Vec::new(),
            };
            for spec in &config.probes {
                let (z1, z2) = probe_points(&theory, config.probe_eta, spec.i, spec.j);
                let value = match spec.kind {
                    ProbeKind::Extradiag => theory.green_cov_extradiag(spec.n, spec.m, z1, z2, mode)?,
                    ProbeKind::Diag => theory.green_cov_diag(spec.n, spec.m, z1, z2, mode)?,
                };
                t.rows.push(CovarianceRow {
                    kind: spec.kind,
                    n: spec.n,
                    m: spec.m,
                    z1,
                    z2,
                    value,
                    stderr: None,
                    mode: mode.to_string(),
                });
            }
            let p = ctx.path(format!("theory_covariance_{mode}_s{k}.csv"));
            t.write(&p)?;
            cov_theory.insert(mode.to_string(), t);
        }

        let mut positions: Vec<Vec<f64>> = theory
            .positions()
            .iter()
            .enumerate()
            .map(|(i, &x)| vec![i as f64, x])
            .collect();
        let mut position_header = vec!["i", "theory"];

        if config.realizations > 0 {
            let tracking = tracking_for(config, &theory);
            let mut mc_config = McConfig::new(
                spectrum.clone(),
                InteractionSpec::new(config.ensemble, sigma_w)?,
                config.master_seed,
                tracking,
            );
            mc_config.block_size = config.block_size;
            let ckpt = ctx.path(format!("checkpoint_s{k}.ckpt"));
            let mc = run_monte_carlo(config, mc_config, &ckpt, threads)?;
            let acc = mc.snapshot();
            ctx.metrics.insert(format!("realizations[{tag}]"), mc.next_index() as f64);
            ctx.metrics.insert(format!("failures[{tag}]"), mc.failures() as f64);
            ctx.criterion(format!("failed_realizations[{tag}]"), mc.failures() as f64, Bound::Max, 0.0);
            ctx.criterion(
                format!("unitarity_defect[{tag}]"),
                mc.max_unitarity_defect(),
                Bound::Max,
                1e-10,
            );

            let mc_pos = acc.estimate_mean_positions()?;
            for (row, e) in positions.iter_mut().zip(&mc_pos) {
                row.push(e.mean);
                row.push(e.stderr);
            }
            position_header.extend(["mc", "mc_stderr"]);
            let spacing = 1.0 / (config.n as f64 * theory.solution().rho_at(center)?);
            let dev = theory
                .positions()
                .iter()
                .zip(&mc_pos)
                .map(|(a, b)| (a - b.mean).abs())
                .fold(0.0f64, f64::max);
            ctx.metrics.insert(format!("max_position_deviation_spacings[{tag}]"), dev / spacing);

            mc_tables(&mut ctx, &theory, &acc, sigma_w, k, &tag, &theory_second, &cyclic_theory, &cov_theory)?;
        }

        let p = ctx.path(format!("positions_s{k}.csv"));
        write_numeric_csv(&p, &ctx.meta(Some(sigma_w)), &position_header, positions)?;
    }

    let passed = ctx.criteria.iter().all(|c| c.passed);
    let report_rows: Vec<Vec<String>> = ctx
        .criteria
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                c.value.to_string(),
                match c.bound {
                    Bound::Max => "max".to_string(),
                    Bound::Min => "min".to_string(),
                },
                c.threshold.to_string(),
                if c.passed { "PASS" } else { "FAIL" }.to_string(),
            ]
        })
        .collect();
    let p = ctx.path(REPORT_FILE.to_string());
    overlap_core::table::write_csv(
        &p,
        &ctx.meta(None),
        &["criterion", "value", "bound", "threshold", "result"],
        &report_rows,
    )?;
    ctx.files.push(SUMMARY_FILE.to_string());
    ctx.files.sort();
    let summary = RunSummary {
        config_hash: ctx.hash.clone(),
        experiment: config.experiment.to_string(),
        passed,
        criteria: ctx.criteria,
        metrics: ctx.metrics,
        files: ctx.files,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&dir.join(SUMMARY_FILE), json.as_bytes())?;
    Ok(summary)
}

fn second_table(ctx: &Ctx, theory: &OverlapTheory, sigma_w: f64, rows: &[usize]) -> Result<MomentTable> {
    let mut t = MomentTable::new(ctx.meta(Some(sigma_w)));
    for &n in rows {
        for (i, v) in theory.second_moment_row(n)?.into_iter().enumerate() {
            t.push((n, n, i, i), v, None, "second");
        }
    }
    Ok(t)
}

/// Semicircle profile check for a degenerate bare spectrum at `level`.
fn semicircle_check(ctx: &mut Ctx, theory: &OverlapTheory, level: f64, k: usize) -> Result<()> {
    let s = theory.sigma_w();
    let sol = theory.solution();
    let exact = |x: f64| {
        let d = x - level;
        (4.0 * s * s - d * d).max(0.0).sqrt() / (2.0 * PI * s * s)
    };
    let center_err = (sol.rho_at(level)? - 1.0 / (PI * s)).abs();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for (&x, &r) in sol.grid().iter().zip(sol.rho()) {
        let e = exact(x);
        if (x - level).abs() <= 1.9 * s {
            worst = worst.max((r - e).abs());
        }
        rows.push(vec![x, r, e, r - e]);
    }
    let p = ctx.path(format!("semicircle_s{k}.csv"));
    write_numeric_csv(&p, &ctx.meta(Some(s)), &["lambda", "rho", "exact", "error"], rows)?;
    let tag = format!("sigma_w={s}");
    ctx.metrics.insert(format!("semicircle_center_error[{tag}]"), center_err);
    ctx.metrics.insert(format!("semicircle_profile_error[{tag}]"), worst);
    ctx.criterion(format!("semicircle_center[{tag}]"), center_err, Bound::Max, 1e-4);
    ctx.criterion(format!("semicircle_profile[{tag}]"), worst, Bound::Max, 1e-3);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn mc_tables(
    ctx: &mut Ctx,
    theory: &OverlapTheory,
    acc: &MomentAccumulator,
    sigma_w: f64,
    k: usize,
    tag: &str,
    theory_second: &MomentTable,
    cyclic_theory: &BTreeMap<String, MomentTable>,
    cov_theory: &BTreeMap<String, CovarianceTable>,
) -> Result<()> {
    let config = ctx.config;
    let th = &config.thresholds;
    let n_levels = config.n;
    let opts = CompareOptions {
        mask_fraction: th.mask_fraction,
        rel_tol: th.rel_tol,
        z_tol: th.z_tol,
    };

    if !config.rows.is_empty() {
        let mut t = MomentTable::new(ctx.meta(Some(sigma_w)));
        for &n in &config.rows {
            for i in 0..n_levels {
                let e = acc.second_moment(n, i)?;
                t.push((n, n, i, i), e.mean, Some(e.stderr), "mc");
            }
        }
        let p = ctx.path(format!("mc_second_s{k}.csv"));
        t.write(&p)?;
        let report = compare(theory_second, &t, opts)?;
        let p = ctx.path(format!("comparison_second_s{k}.csv"));
        report.write(&p)?;
        ctx.criterion(format!("second_moment_rel_err[{tag}]"), report.max_rel_err, Bound::Max, th.rel_tol);
        ctx.criterion(format!("second_moment_max_z[{tag}]"), report.max_abs_z, Bound::Max, th.z_tol);
    }

    if !config.cyclic_pairs.is_empty() {
        let mut t = MomentTable::new(ctx.meta(Some(sigma_w)));
        let mut worst_imag_z = 0.0f64;
        for &(n, m) in &config.cyclic_pairs {
            for i in 0..n_levels {
                for j in 0..n_levels {
                    if i == j {
                        continue;
                    }
                    let (re, im) = acc.cyclic((n, m), i, j)?;
                    if im.stderr > 0.0 {
                        worst_imag_z = worst_imag_z.max((im.mean / im.stderr).abs());
                    }
                    t.push((n, m, i, j), re.mean, Some(re.stderr), "mc");
                }
            }
        }
        let p = ctx.path(format!("mc_cyclic_s{k}.csv"));
        t.write(&p)?;
        ctx.metrics.insert(format!("cyclic_imag_max_z[{tag}]"), worst_imag_z);
        for (mode, reference) in cyclic_theory {
            let report = compare(reference, &t, opts)?;
            let corr = report.correlation.unwrap_or(f64::NAN);
            let sign = report.sign_agreement(th.sign_mask);
            ctx.metrics.insert(format!("cyclic_correlation_{mode}[{tag}]"), corr);
            ctx.metrics.insert(format!("cyclic_sign_agreement_{mode}[{tag}]"), sign);
            if *mode == config.mode.to_string() {
                let p = ctx.path(format!("comparison_cyclic_s{k}.csv"));
                report.write(&p)?;
                ctx.criterion(format!("cyclic_correlation[{tag}]"), corr, Bound::Min, th.min_correlation);
                ctx.criterion(format!("cyclic_sign_agreement[{tag}]"), sign, Bound::Min, th.min_sign_agreement);
            }
        }
    }

    if !config.factorized_pairs.is_empty() {
        let mut t = MomentTable::new(ctx.meta(Some(sigma_w)));
        let (mut inside, mut total) = (0usize, 0usize);
        let mut theory_vals = Vec::new();
        let mut mc_vals = Vec::new();
        for &(n, p) in &config.factorized_pairs {
            for i in 0..n_levels {
                let a = acc.second_moment(n, i)?;
                for j in 0..n_levels {
                    let e = acc.factorized((n, p), i, j)?;
                    t.push((n, p, i, j), e.mean, Some(e.stderr), "mc");
                    if i == j {
                        continue;
                    }
                    let product = a.mean * acc.second_moment(p, j)?.mean;
                    total += 1;
                    if (e.mean - product).abs() <= th.factorized_z_tol * e.stderr {
                        inside += 1;
                    }
                    theory_vals.push(theory.fourth_moment_factorized(n, p, i, j)?);
                    mc_vals.push(e.mean);
                }
            }
        }
        let p = ctx.path(format!("mc_factorized_s{k}.csv"));
        t.write(&p)?;
        let frac = inside as f64 / total.max(1) as f64;
        ctx.criterion(format!("factorized_fraction[{tag}]"), frac, Bound::Min, th.factorized_fraction);
        if let Some(c) = pearson(&theory_vals, &mc_vals) {
            ctx.metrics.insert(format!("factorized_theory_correlation[{tag}]"), c);
        }
    }

    if !config.probes.is_empty() {
        let mut t = CovarianceTable {
            meta: ctx.meta(Some(sigma_w)),
            rows: Vec::new(),
        };
        let mode = config.covariance_mode.to_string();
        let reference = &cov_theory[&mode];
        let mut worst = 0.0f64;
        let mut worst_diag = 0.0f64;
        for (idx, spec) in config.probes.iter().enumerate() {
            let est = acc.probe(idx)?;
            let row = &reference.rows[idx];
            let (se_re, se_im) = est.cov_stderr;
            let z = (est.covariance - row.value).norm() / se_re.hypot(se_im);
            match spec.kind {
                ProbeKind::Extradiag => worst = worst.max(z),
                ProbeKind::Diag => worst_diag = worst_diag.max(z),
            }
            t.rows.push(CovarianceRow {
                kind: spec.kind,
                n: spec.n,
                m: spec.m,
                z1: est.probe.z1,
                z2: est.probe.z2,
                value: est.covariance,
                stderr: Some(est.cov_stderr),
                mode: "mc".to_string(),
            });
        }
        let p = ctx.path(format!("mc_covariance_s{k}.csv"));
        t.write(&p)?;
        if config.probes.iter().any(|p| p.kind == ProbeKind::Extradiag) {
            ctx.criterion(format!("extradiag_covariance_max_z[{tag}]"), worst, Bound::Max, th.probe_z_tol);
        }
        if config.probes.iter().any(|p| p.kind == ProbeKind::Diag) {
            ctx.metrics.insert(format!("diag_covariance_max_z[{tag}]"), worst_diag);
        }
    }
    Ok(())
}
