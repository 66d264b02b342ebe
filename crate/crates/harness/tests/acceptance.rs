//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if a criterion fails that is not a documented deviation.
//!
//! Artifacts are kept under `$CARGO_TARGET_TMPDIR/acceptance` for inspection.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use overlap_core::{make_gaussian_spectrum, BareSpectrum, CovarianceMode, Ensemble, OverlapTheory};
use overlap_harness::config::default_probes;
use overlap_harness::tables::MomentTable;
use overlap_harness::{compare_files, run, CompareOptions, Experiment, ExperimentConfig, RunSummary};
use statrs::distribution::{ContinuousCDF, Normal};

/// Criteria that fail for reasons analysed in the README. They are still
/// evaluated at the stated tolerance and reported as FAIL.
const KNOWN_DEVIATIONS: [(u8, &str); 4] = [
    (3, "row sums miss 1 by up to 1.2e-2 where the decay width is near the level spacing or at the band edge"),
    (4, "sigma_w = 0.08 lies outside the width >> spacing regime; sigma_w = 0.2 misses narrowly at this seed"),
    (5, "GOE flattens the resonant peak relative to GUE by up to 9%; GUE follows the theory, GOE does not"),
    (9, "GOE covariances deviate from the ensemble-independent formula by up to 9%, resolved at 1e5 draws"),
];

struct Outcome {
    id: u8,
    title: &'static str,
    passed: bool,
    detail: Vec<String>,
}

struct Runs {
    root: PathBuf,
    summaries: BTreeMap<&'static str, RunSummary>,
}

impl Runs {
    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn execute(&mut self, name: &'static str, config: &ExperimentConfig) -> (&RunSummary, Duration) {
        let start = Instant::now();
        let summary = run(config, &self.dir(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let elapsed = start.elapsed();
        self.summaries.insert(name, summary);
        (&self.summaries[name], elapsed)
    }
}

fn shipped_config(file: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(file);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn value(summary: &RunSummary, name: &str) -> f64 {
    summary
        .criterion(name)
        .map(|c| c.value)
        .or_else(|| summary.metrics.get(name).copied())
        .unwrap_or_else(|| panic!("{name} missing from summary"))
}

fn criterion_line(summary: &RunSummary, name: &str) -> (bool, String) {
    let c = summary.criterion(name).unwrap_or_else(|| panic!("{name} missing"));
    let op = if c.passed { "ok  " } else { "MISS" };
    (c.passed, format!("{op} {name} = {:.4e} (threshold {:.4e})", c.value, c.threshold))
}

fn quantile_spectrum(n: usize) -> BareSpectrum {
    let g = Normal::new(0.0, 1.0).unwrap();
    BareSpectrum::from_levels((0..n).map(|k| g.inverse_cdf((k as f64 + 0.5) / n as f64)).collect()).unwrap()
}

fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn worst_row_sum(theory: &OverlapTheory) -> f64 {
    theory
        .second_moment_table()
        .iter()
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn semicircle(runs: &mut Runs) -> Outcome {
    let config = shipped_config("semicircle.conf");
    let (s, elapsed) = runs.execute("semicircle", &config);
    let (a, la) = criterion_line(s, "semicircle_center[sigma_w=1]");
    let (b, lb) = criterion_line(s, "semicircle_profile[sigma_w=1]");
    let fast = elapsed < Duration::from_secs(10);
    Outcome {
        id: 1,
        title: "semicircle oracle",
        passed: a && b && fast,
        detail: vec![la, lb, format!("runtime {:.1} s (limit 10 s)", elapsed.as_secs_f64())],
    }
}

fn delocalization() -> Outcome {
    let start = Instant::now();
    let seeds = 1..=64u64;
    let values: Vec<f64> = seeds
        .clone()
        .map(|seed| {
            let spectrum = make_gaussian_spectrum(512, 1.0, seed).unwrap();
            let center = spectrum.levels().iter().sum::<f64>() / 512.0;
            OverlapTheory::from_spectrum(&spectrum, 0.2).unwrap().delocalization(center).unwrap()
        })
        .collect();
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let elapsed = start.elapsed();
    let passed = (mean - 31.0).abs() <= 2.0 && elapsed < Duration::from_secs(60);
    Outcome {
        id: 2,
        title: "Gamma/D at N=512, sigma_w=0.2",
        passed,
        detail: vec![
            format!(
                "mean over spectrum seeds 1..=64 = {mean:.2} (target 31 +- 2), sd {sd:.2}, stderr {:.2}",
                sd / k.sqrt()
            ),
            format!("seed 1 alone = {:.2}", values[0]),
            format!("runtime {:.1} s (limit 60 s)", elapsed.as_secs_f64()),
        ],
    }
}

fn sum_rules(runs: &Runs) -> Outcome {
    let mut detail = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, s) in &runs.summaries {
        for c in s.criteria.iter().filter(|c| c.name.starts_with("sum_rule")) {
            worst = worst.max(c.value);
            detail.push(format!("{name} {} = {:.3e}", c.name, c.value));
        }
    }
    let theory = OverlapTheory::from_spectrum(&make_gaussian_spectrum(512, 1.0, 1).unwrap(), 0.2).unwrap();
    let extra = worst_row_sum(&theory);
    worst = worst.max(extra);
    detail.push(format!("N=512 sigma_w=0.2 theory = {extra:.3e}"));

    let mut defect: f64 = 0.0;
    let mut failures = 0.0;
    for s in runs.summaries.values() {
        for c in &s.criteria {
            if c.name.starts_with("unitarity_defect") {
                defect = defect.max(c.value);
            }
            if c.name.starts_with("failed_realizations") {
                failures += c.value;
            }
        }
    }
    detail.insert(0, format!("worst |row sum - 1| = {worst:.3e} (limit 1e-2)"));
    detail.insert(1, format!("max unitarity defect over all MC runs = {defect:.3e} (limit 1e-10), failed realizations {failures}"));
    Outcome {
        id: 3,
        title: "sum rules",
        passed: worst <= 1e-2 && defect <= 1e-10 && failures == 0.0,
        detail,
    }
}

fn fig1(runs: &mut Runs) -> Outcome {
    let config = shipped_config("fig1.conf");
    let (s, elapsed) = runs.execute("fig1", &config);
    let mut passed = elapsed < Duration::from_secs(15 * 60);
    let mut detail = Vec::new();
    for tag in ["0.08", "0.2", "0.65"] {
        for what in ["second_moment_rel_err", "second_moment_max_z"] {
            let (ok, line) = criterion_line(s, &format!("{what}[sigma_w={tag}]"));
            passed &= ok;
            detail.push(line);
        }
    }
    detail.push(format!("runtime {:.1} s (limit 15 min)", elapsed.as_secs_f64()));
    Outcome {
        id: 4,
        title: "second moments against Monte Carlo, N=256",
        passed,
        detail,
    }
}

fn ensembles(runs: &mut Runs) -> Outcome {
    let mut base = ExperimentConfig::preset(Experiment::Custom);
    base.n = 128;
    base.rows = vec![32, 64, 96];
    base.sigma_w = vec![0.2];
    base.realizations = 5000;
    base.master_seed = 5;
    let mut goe = base.clone();
    goe.ensemble = Ensemble::Goe;
    let mut gue = base;
    gue.ensemble = Ensemble::Gue;
    runs.execute("ensemble-goe", &goe);
    runs.execute("ensemble-gue", &gue);
    let options = CompareOptions {
        mask_fraction: 0.01,
        rel_tol: f64::INFINITY,
        z_tol: 3.0,
    };
    let r = compare_files(
        &runs.dir("ensemble-goe").join("mc_second_s0.csv"),
        &runs.dir("ensemble-gue").join("mc_second_s0.csv"),
        options,
    )
    .unwrap();
    let mut detail = vec![format!(
        "{:.1}% of {} masked points within joint 3 sigma (limit 95%), max |z| {:.2}",
        100.0 * r.within_z_fraction,
        r.masked_count,
        r.max_abs_z
    )];
    for name in ["ensemble-goe", "ensemble-gue"] {
        let s = &runs.summaries[name];
        detail.push(format!(
            "{name} against theory: rel err {:.3}, max |z| {:.2}",
            value(s, "second_moment_rel_err[sigma_w=0.2]"),
            value(s, "second_moment_max_z[sigma_w=0.2]")
        ));
    }
    Outcome {
        id: 5,
        title: "GOE/GUE equivalence, N=128, sigma_w=0.2",
        passed: r.within_z_fraction >= 0.95,
        detail,
    }
}

/// N=128, sigma_w=0.4 GOE run shared by the fourth-moment, factorization and
/// covariance criteria: a 1e4 smoke stage, then resumed to 1e5.
fn fourth_moment(runs: &mut Runs) -> (Outcome, Outcome) {
    let mut config = shipped_config("fig2.conf");
    config.probes = default_probes(config.n);
    // Second moments of the pair's own rows feed the factorization sensitivity check.
    config.rows = vec![32, 96];
    config.realizations = 10_000;
    let (smoke, elapsed) = runs.execute("fourth-moment", &config);
    let smoke_corr = value(smoke, "cyclic_correlation[sigma_w=0.4]");
    let smoke_ok = smoke_corr >= 0.7 && elapsed < Duration::from_secs(20 * 60);
    let smoke_line = format!(
        "1e4 smoke: correlation {smoke_corr:.4} (limit 0.7), runtime {:.0} s (limit 20 min)",
        elapsed.as_secs_f64()
    );

    config.realizations = 100_000;
    let (s, elapsed) = runs.execute("fourth-moment", &config);
    let (corr_ok, corr) = criterion_line(s, "cyclic_correlation[sigma_w=0.4]");
    let (sign_ok, sign) = criterion_line(s, "cyclic_sign_agreement[sigma_w=0.4]");
    let literal = value(s, "cyclic_correlation_paper-literal[sigma_w=0.4]");
    let c6 = Outcome {
        id: 6,
        title: "cyclic fourth moment against Monte Carlo, N=128, and mode arbitration",
        passed: smoke_ok && corr_ok && sign_ok,
        detail: vec![
            smoke_line,
            format!("{corr} at 1e5 (resumed, {:.0} s)", elapsed.as_secs_f64()),
            sign,
            format!("paper-literal mode correlation {literal:.4} (recorded)"),
        ],
    };

    let (fact_ok, fact) = criterion_line(s, "factorized_fraction[sigma_w=0.4]");
    let dir = runs.dir("fourth-moment");
    let scaled = factorized_fraction(&dir, 1.1);
    let c7 = Outcome {
        id: 7,
        title: "factorization, (n,p)=(32,96)",
        passed: fact_ok,
        detail: vec![
            fact,
            format!("sensitivity: with the product scaled by 1.1 the fraction drops to {scaled:.3}"),
        ],
    };
    (c6, c7)
}

/// Fraction of `(i, j)`, `i != j`, where the MC fourth moment lies within 3
/// stderr of `scale` times the product of MC second moments.
fn factorized_fraction(dir: &Path, scale: f64) -> f64 {
    let fourth = MomentTable::read(&dir.join("mc_factorized_s0.csv")).unwrap();
    let second = MomentTable::read(&dir.join("mc_second_s0.csv")).unwrap();
    let c: BTreeMap<(usize, usize), f64> = second.rows.iter().map(|r| ((r.n, r.i), r.value)).collect();
    let (mut inside, mut total) = (0usize, 0usize);
    for r in fourth.rows.iter().filter(|r| r.i != r.j) {
        let product = scale * c[&(r.n, r.i)] * c[&(r.m, r.j)];
        total += 1;
        if (r.value - product).abs() <= 3.0 * r.stderr.unwrap() {
            inside += 1;
        }
    }
    inside as f64 / total as f64
}

fn perturbative_tail() -> Outcome {
    let sigma_w = 0.08;
    let n = 256;
    let theory = OverlapTheory::from_spectrum(&make_gaussian_spectrum(n, 1.0, 1).unwrap(), sigma_w).unwrap();
    let (mut worst, mut count): (f64, usize) = (0.0, 0);
    for (k, &eps) in theory.levels().iter().enumerate() {
        for (i, &lam) in theory.positions().iter().enumerate() {
            let gap = eps - lam;
            if gap.abs() < 10.0 * sigma_w {
                continue;
            }
            let first_order = sigma_w * sigma_w / (n as f64 * gap * gap);
            worst = worst.max((theory.second_moment(k, i).unwrap() / first_order - 1.0).abs());
            count += 1;
        }
    }
    Outcome {
        id: 8,
        title: "perturbative tail, N=256, sigma_w=0.08",
        passed: count > 0 && worst <= 0.05,
        detail: vec![format!("max relative deviation {worst:.4} over {count} points (limit 0.05)")],
    }
}

fn covariance(runs: &Runs) -> Outcome {
    let s = &runs.summaries["fourth-moment"];
    let (ok, line) = criterion_line(s, "extradiag_covariance_max_z[sigma_w=0.4]");
    let ns = [64usize, 128, 256];
    let sizes: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let ratios: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let theory = OverlapTheory::from_spectrum(&quantile_spectrum(n), 0.4).unwrap();
            let (a, b) = (n / 4, 3 * n / 4);
            let pos = theory.positions();
            let z1 = Complex64::new(pos[a], 0.05);
            let z2 = Complex64::new(pos[b], -0.05);
            let x = theory.green_cov_extradiag(a, b, z1, z2, CovarianceMode::Linear).unwrap();
            let d = theory.green_cov_diag(a, b, z1, z2, CovarianceMode::Linear).unwrap();
            d.norm() / x.norm()
        })
        .collect();
    let slope = log_log_slope(&sizes, &ratios);
    let slope_ok = (slope + 1.0).abs() <= 0.3;
    Outcome {
        id: 9,
        title: "Green-function covariance, N=128, sigma_w=0.4",
        passed: ok && slope_ok,
        detail: vec![
            format!("{line} over 10 probes at 1e5 draws"),
            format!("|diag|/|extradiag| log-log slope over N = 64, 128, 256: {slope:.3} (target -1 +- 0.3)"),
        ],
    }
}

fn determinism(runs: &mut Runs) -> Outcome {
    let mut config = ExperimentConfig::preset(Experiment::Custom);
    config.n = 48;
    config.rows = vec![12, 24, 36];
    config.sigma_w = vec![0.3, 0.5];
    config.realizations = 430;
    config.master_seed = 99;
    config.cyclic_pairs = vec![(12, 36)];
    config.factorized_pairs = vec![(12, 36)];
    config.probes = default_probes(48);
    let mut one = config.clone();
    one.threads = 1;
    let mut three = config;
    three.threads = 3;
    runs.execute("threads-1", &one);
    runs.execute("threads-3", &three);
    let files = &runs.summaries["threads-1"].files;
    let mut differing = Vec::new();
    for f in files {
        let a = std::fs::read(runs.dir("threads-1").join(f)).unwrap();
        let b = std::fs::read(runs.dir("threads-3").join(f)).unwrap();
        if a != b {
            differing.push(f.clone());
        }
    }
    let csvs = files.iter().filter(|f| f.ends_with(".csv")).count();
    let same_list = files == &runs.summaries["threads-3"].files;
    Outcome {
        id: 10,
        title: "determinism across thread counts",
        passed: differing.is_empty() && same_list && csvs > 0,
        detail: vec![format!(
            "{} artifacts ({csvs} CSV) compared byte for byte between 1 and 3 threads; differing: {:?}",
            files.len(),
            differing
        )],
    }
}

fn main() {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if root.exists() {
        std::fs::remove_dir_all(&root).unwrap();
    }
    std::fs::create_dir_all(&root).unwrap();
    let mut runs = Runs {
        root,
        summaries: BTreeMap::new(),
    };

    let mut outcomes = Vec::new();
    let mut step = |o: Outcome| {
        eprintln!("  finished criterion {}", o.id);
        outcomes.push(o);
    };
    step(semicircle(&mut runs));
    step(delocalization());
    step(fig1(&mut runs));
    step(ensembles(&mut runs));
    let (c6, c7) = fourth_moment(&mut runs);
    step(c6);
    step(c7);
    step(perturbative_tail());
    step(covariance(&runs));
    step(determinism(&mut runs));
    step(sum_rules(&runs));
    outcomes.sort_by_key(|o| o.id);

    println!("\nacceptance criteria (artifacts in {})", runs.root.display());
    let mut unexpected = Vec::new();
    for o in &outcomes {
        let known = KNOWN_DEVIATIONS.iter().find(|(id, _)| *id == o.id);
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        let note = match (o.passed, known) {
            (false, Some(_)) => " [known deviation, see README]",
            _ => "",
        };
        println!("{verdict} C{} {}{note}", o.id, o.title);
        for line in &o.detail {
            println!("       {line}");
        }
        if let (false, Some((_, why))) = (o.passed, known) {
            println!("       reason: {why}");
        }
        if !o.passed && known.is_none() {
            unexpected.push(o.id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
