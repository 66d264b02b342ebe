//! Self-consistent Stieltjes transform of `H = diag(eps) + W` and the
//! first-order spectral quantities derived from it.
//!
//! The loop equation solved here is
//! `m(z) = (1/N) sum_n 1 / (eps_n - z - sigma_w^2 m(z))`, with `Im m > 0`
//! whenever `Im z > 0`.

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Pchip;
use crate::spectra::BareSpectrum;
use crate::table;

/// Controls for the damped / Newton fixed-point iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Imaginary offsets, strictly decreasing, in energy units.
    pub eta_schedule: Vec<f64>,
    /// Weight of the new iterate in a plain fixed-point step.
    pub damping: f64,
    /// Residual tolerance, relative to `max(1, |m|)`.
    pub tol: f64,
    pub max_iters: usize,
}

impl SolverConfig {
    /// Default schedule `[1, 0.3, 0.1, ..., 1e-6] * sigma_w`.
    pub fn for_sigma(sigma_w: f64) -> Self {
        let mut eta_schedule = Vec::new();
        let mut decade = 1.0;
        while decade > 1.5e-6 {
            eta_schedule.push(decade * sigma_w);
            eta_schedule.push(0.3 * decade * sigma_w);
            decade *= 0.1;
        }
        eta_schedule.push(1e-6 * sigma_w);
        SolverConfig {
            eta_schedule,
            damping: 0.5,
            tol: 1e-12,
            max_iters: 10_000,
        }
    }

    pub fn eta_final(&self) -> f64 {
        *self.eta_schedule.last().expect("validated schedule is non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta_schedule.is_empty() {
            return Err(Error::Config("eta_schedule is empty".into()));
        }
        if !self.eta_schedule.iter().all(|e| e.is_finite() && *e > 0.0) {
            return Err(Error::Config("eta_schedule entries must be finite and > 0".into()));
        }
        if !self.eta_schedule.windows(2).all(|w| w[1] < w[0]) {
            return Err(Error::Config("eta_schedule must be strictly decreasing".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping {} not in (0, 1]", self.damping)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("tol {} must be > 0", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sums `(1/N) sum g_n` and `(1/N) sum g_n^2` with `g_n = 1/(eps_n - w)`, plus
/// a bound on the rounding error of the first sum.
#[inline]
fn bare_sums(levels: &[f64], w: Complex64) -> (Complex64, Complex64, f64) {
    let mut s1 = Complex64::new(0.0, 0.0);
    let mut s2 = Complex64::new(0.0, 0.0);
    let mut noise = 0.0;
    let wn = w.norm();
    for &e in levels {
        let g = (Complex64::new(e, 0.0) - w).inv();
        s1 += g;
        s2 += g * g;
        noise += g.norm_sqr() * (e.abs() + wn);
    }
    let inv_n = 1.0 / levels.len() as f64;
    (s1 * inv_n, s2 * inv_n, noise * inv_n * f64::EPSILON)
}

struct MapValue {
    f: Complex64,
    df: Complex64,
    noise: f64,
}

/// Right-hand side of the loop equation, its derivative in `m`, and its rounding floor.
#[inline]
fn loop_map(levels: &[f64], sigma2: f64, z: Complex64, m: Complex64) -> MapValue {
    let (f, a, noise) = bare_sums(levels, z + sigma2 * m);
    MapValue {
        f,
        df: sigma2 * a,
        noise,
    }
}

fn scaled_residual(m: Complex64, f: Complex64) -> f64 {
    (m - f).norm() / m.norm().max(1.0)
}

/// Iterates the loop equation at one `z` in the upper half-plane.
///
/// Each step first tries a Newton update; it is kept only if it stays in the
/// upper half-plane and lowers the residual. Otherwise a damped fixed-point
/// step is taken, which maps the upper half-plane into itself.
///
/// Convergence means the scaled residual is below `tol`, or below the
/// rounding floor of the map when `eps_n - z - sigma^2 m` nearly cancels.
fn iterate(
    levels: &[f64],
    sigma2: f64,
    z: Complex64,
    start: Complex64,
    damping: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Complex64> {
    let mut m = start;
    if m.im <= 0.0 || !m.is_finite() {
        m = bare_sums(levels, z).0;
    }
    let done = |m: Complex64, v: &MapValue, res: f64| {
        res < tol || (m - v.f).norm() <= 16.0 * v.noise
    };
    let mut v = loop_map(levels, sigma2, z, m);
    let mut res = scaled_residual(m, v.f);
    for _ in 0..max_iters {
        if done(m, &v, res) {
            return Ok(m);
        }
        let newton = m - (m - v.f) / (Complex64::new(1.0, 0.0) - v.df);
        if newton.im > 0.0 && newton.is_finite() {
            let vn = loop_map(levels, sigma2, z, newton);
            let rn = scaled_residual(newton, vn.f);
            if rn < res {
                m = newton;
                v = vn;
                res = rn;
                debug_assert!(m.im > 0.0);
                continue;
            }
        }
        m = (1.0 - damping) * m + damping * v.f;
        debug_assert!(m.im > 0.0, "fixed-point step left the upper half-plane");
        v = loop_map(levels, sigma2, z, m);
        res = scaled_residual(m, v.f);
    }
    if done(m, &v, res) {
        return Ok(m);
    }
    Err(Error::Convergence {
        z,
        iterations: max_iters,
        residual: res,
    })
}

fn check_sigma(sigma_w: f64) -> Result<()> {
    if !(sigma_w > 0.0 && sigma_w.is_finite()) {
        return Err(Error::Domain(format!("sigma_w must be finite and > 0, got {sigma_w}")));
    }
    Ok(())
}

fn solve_levels(
    levels: &[f64],
    sigma_w: f64,
    z: Complex64,
    config: &SolverConfig,
    warm_start: Option<Complex64>,
) -> Result<Complex64> {
    let sigma2 = sigma_w * sigma_w;
    if let Some(w) = warm_start {
        if let Ok(m) = iterate(levels, sigma2, z, w, config.damping, config.tol, config.max_iters) {
            return Ok(m);
        }
    }
    // Cold path: anneal down the schedule entries above Im z, then land on z.
    let mut m = Complex64::new(0.0, 0.0);
    for &eta in config.eta_schedule.iter().filter(|&&e| e > z.im) {
        let zs = Complex64::new(z.re, eta);
        m = iterate(levels, sigma2, zs, m, config.damping, config.tol, config.max_iters)?;
    }
    iterate(levels, sigma2, z, m, config.damping, config.tol, config.max_iters)
}

/// Solves the loop equation at a single point `z` with `Im z > 0`.
pub fn solve_m(
    spectrum: &BareSpectrum,
    sigma_w: f64,
    z: Complex64,
    config: &SolverConfig,
    warm_start: Option<Complex64>,
) -> Result<Complex64> {
    check_sigma(sigma_w)?;
    config.validate()?;
    if z.im <= 0.0 || !z.is_finite() {
        return Err(Error::Domain(format!("solve_m needs Im z > 0, got z = {z}")));
    }
    solve_levels(spectrum.levels(), sigma_w, z, config, warm_start)
}

/// Default real grid: uniform over `[min eps - 5 sigma_w, max eps + 5 sigma_w]`.
///
/// The point count resolves the narrowest structure the density can carry,
/// an isolated level broadened into a semicircle of radius `2 sigma_w / sqrt(N)`.
pub fn default_grid(spectrum: &BareSpectrum, sigma_w: f64) -> Vec<f64> {
    let n = spectrum.len();
    let lo = spectrum.min() - 5.0 * sigma_w;
    let hi = spectrum.max() + 5.0 * sigma_w;
    let span = hi - lo;
    let fine = (span * 8.0 * (n as f64).sqrt() / sigma_w).ceil() as usize;
    let points = (4 * n).max(4096).max(fine);
    (0..points)
        .map(|k| lo + span * k as f64 / (points - 1) as f64)
        .collect()
}

/// Warm-start chains run over fixed-size contiguous chunks so that the
/// result does not depend on the number of worker threads.
const GRID_CHUNK: usize = 512;

/// Solves the loop equation on a real grid with the full annealing schedule.
pub fn solve_grid(
    spectrum: &BareSpectrum,
    sigma_w: f64,
    grid: &[f64],
    config: &SolverConfig,
) -> Result<StieltjesSolution> {
    check_sigma(sigma_w)?;
    config.validate()?;
    if grid.len() < 2 || !grid.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::Domain("grid must be strictly increasing with at least 2 points".into()));
    }
    let need_lo = spectrum.min() - 5.0 * sigma_w;
    let need_hi = spectrum.max() + 5.0 * sigma_w;
    let tol = 1e-9 * (need_hi - need_lo);
    if grid[0] > need_lo + tol || grid[grid.len() - 1] < need_hi - tol {
        return Err(Error::Domain(format!(
            "grid [{}, {}] does not cover the dressed support with margin: need [{need_lo}, {need_hi}]",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    let levels = spectrum.levels();
    let eta = config.eta_final();
    let chunks: Vec<Result<Vec<Complex64>>> = grid
        .par_chunks(GRID_CHUNK)
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len());
            let mut prev: Option<Complex64> = None;
            for &lambda in chunk {
                let z = Complex64::new(lambda, eta);
                let m = solve_levels(levels, sigma_w, z, config, prev)?;
                prev = Some(m);
                out.push(m);
            }
            Ok(out)
        })
        .collect();
    let mut m_values = Vec::with_capacity(grid.len());
    for chunk in chunks {
        m_values.extend(chunk?);
    }
    Ok(StieltjesSolution::assemble(
        levels.to_vec(),
        sigma_w,
        config.clone(),
        grid.to_vec(),
        m_values,
    ))
}

/// Converged `m(lambda + i eta_final)` on a real grid plus derived profiles.
#[derive(Debug, Clone)]
pub struct StieltjesSolution {
    levels: Vec<f64>,
    sigma_w: f64,
    config: SolverConfig,
    grid: Vec<f64>,
    m_values: Vec<Complex64>,
    rho: Vec<f64>,
    hilbert: Vec<f64>,
    s_shift: Vec<f64>,
    s_width: Vec<f64>,
    re_interp: Pchip,
    im_interp: Pchip,
}

impl StieltjesSolution {
    /// Solves on the default grid with the default schedule for `sigma_w`.
    pub fn solve(spectrum: &BareSpectrum, sigma_w: f64) -> Result<Self> {
        check_sigma(sigma_w)?;
        solve_grid(
            spectrum,
            sigma_w,
            &default_grid(spectrum, sigma_w),
            &SolverConfig::for_sigma(sigma_w),
        )
    }

    fn assemble(
        levels: Vec<f64>,
        sigma_w: f64,
        config: SolverConfig,
        grid: Vec<f64>,
        m_values: Vec<Complex64>,
    ) -> Self {
        let sigma2 = sigma_w * sigma_w;
        let pi = std::f64::consts::PI;
        let rho: Vec<f64> = m_values.iter().map(|m| m.im / pi).collect();
        let hilbert = m_values.iter().map(|m| m.re / pi).collect();
        let s_shift = m_values.iter().map(|m| sigma2 * m.re).collect();
        let s_width = rho.iter().map(|r| pi * sigma2 * r).collect();
        let re: Vec<f64> = m_values.iter().map(|m| m.re).collect();
        let im: Vec<f64> = m_values.iter().map(|m| m.im).collect();
        StieltjesSolution {
            re_interp: Pchip::new(&grid, &re),
            im_interp: Pchip::new(&grid, &im),
            levels,
            sigma_w,
            config,
            grid,
            m_values,
            rho,
            hilbert,
            s_shift,
            s_width,
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn n(&self) -> usize {
        self.levels.len()
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn eta_final(&self) -> f64 {
        self.config.eta_final()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn m_values(&self) -> &[Complex64] {
        &self.m_values
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// `Re m / pi` on the grid.
    pub fn hilbert(&self) -> &[f64] {
        &self.hilbert
    }

    pub fn s_shift(&self) -> &[f64] {
        &self.s_shift
    }

    pub fn s_width(&self) -> &[f64] {
        &self.s_width
    }

    pub fn grid_range(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    fn check_range(&self, what: &'static str, lambda: f64) -> Result<()> {
        let (lo, hi) = self.grid_range();
        if lambda >= lo && lambda <= hi {
            Ok(())
        } else {
            Err(Error::Range {
                what,
                value: lambda,
                lo,
                hi,
            })
        }
    }

    /// Interpolated `m(lambda + i eta_final)`.
    pub fn m_at(&self, lambda: f64) -> Result<Complex64> {
        self.check_range("lambda", lambda)?;
        Ok(Complex64::new(
            self.re_interp.eval(lambda),
            self.im_interp.eval(lambda).max(0.0),
        ))
    }

    pub fn rho_at(&self, lambda: f64) -> Result<f64> {
        Ok(self.m_at(lambda)?.im / std::f64::consts::PI)
    }

    pub fn s_shift_at(&self, lambda: f64) -> Result<f64> {
        Ok(self.sigma_w * self.sigma_w * self.m_at(lambda)?.re)
    }

    pub fn s_width_at(&self, lambda: f64) -> Result<f64> {
        Ok(self.sigma_w * self.sigma_w * self.m_at(lambda)?.im)
    }

    /// Trapezoid integral of `rho` over the grid.
    pub fn rho_integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.rho.windows(2))
            .map(|(x, r)| 0.5 * (x[1] - x[0]) * (r[0] + r[1]))
            .sum()
    }

    /// `E[G_nn(lambda + i eta_final)] = 1/(eps_n - z - sigma_w^2 m(z))` with interpolated `m`.
    pub fn mean_green_diag(&self, n: usize, lambda: f64) -> Result<Complex64> {
        let eps = self.level(n)?;
        let m = self.m_at(lambda)?;
        let z = Complex64::new(lambda, self.eta_final());
        Ok((Complex64::new(eps, 0.0) - z - self.sigma_w * self.sigma_w * m).inv())
    }

    /// Same as [`Self::mean_green_diag`] at an arbitrary complex point.
    pub fn mean_green_diag_at(&self, n: usize, z: Complex64) -> Result<Complex64> {
        let eps = self.level(n)?;
        let m = self.m_complex(z)?;
        Ok((Complex64::new(eps, 0.0) - z - self.sigma_w * self.sigma_w * m).inv())
    }

    pub(crate) fn level(&self, n: usize) -> Result<f64> {
        self.levels.get(n).copied().ok_or_else(|| {
            Error::Domain(format!("level index {n} out of range for N = {}", self.levels.len()))
        })
    }

    /// Mean dressed eigenvalues in descending order.
    ///
    /// `lambda_j` solves `count * int_{lambda_j}^inf rho = j - 1/2` (1-based j),
    /// with the cumulative integral normalized by its grid total.
    pub fn mean_positions(&self, count: usize) -> Vec<f64> {
        let g = &self.grid;
        let mut cum = Vec::with_capacity(g.len());
        cum.push(0.0);
        for k in 1..g.len() {
            let step = 0.5 * (g[k] - g[k - 1]) * (self.rho[k] + self.rho[k - 1]);
            cum.push(cum[k - 1] + step);
        }
        let total = cum[cum.len() - 1];
        let cdf: Vec<f64> = cum.iter().map(|c| c / total).collect();
        let interp = Pchip::new(g, &cdf);
        (1..=count)
            .map(|j| {
                let target = 1.0 - (j as f64 - 0.5) / count as f64;
                invert_monotone(&interp, &cdf, target)
            })
            .collect()
    }

    /// `m` at an arbitrary non-real point; the lower half-plane uses `m(conj z) = conj m(z)`.
    pub fn m_complex(&self, z: Complex64) -> Result<Complex64> {
        if z.im == 0.0 || !z.is_finite() {
            return Err(Error::Domain(format!("m is only defined off the real axis, got z = {z}")));
        }
        if z.im < 0.0 {
            return Ok(self.m_complex(z.conj())?.conj());
        }
        let (lo, hi) = self.grid_range();
        let warm = if z.re >= lo && z.re <= hi {
            self.m_at(z.re).ok().filter(|m| m.im > 0.0)
        } else {
            None
        };
        solve_levels(&self.levels, self.sigma_w, z, &self.config, warm)
    }

    /// `dm/dz = A / (1 - sigma_w^2 A)` with `A = (1/N) sum g_n^2`, from differentiating the loop equation.
    pub fn m_derivative(&self, z: Complex64) -> Result<Complex64> {
        if z.im < 0.0 {
            return Ok(self.m_derivative(z.conj())?.conj());
        }
        let m = self.m_complex(z)?;
        let sigma2 = self.sigma_w * self.sigma_w;
        let (_, a, _) = bare_sums(&self.levels, z + sigma2 * m);
        Ok(a / (1.0 - sigma2 * a))
    }

    /// Second-order subordinate function `sigma_w^2 (m(z1) - m(z2)) / (z1 - z2)`.
    ///
    /// For points in the same half-plane closer than `1e-6 sigma_w` the
    /// coincident-point limit `sigma_w^2 m'(z)` is returned.
    pub fn second_subordinate(&self, z1: Complex64, z2: Complex64) -> Result<Complex64> {
        let (lo, hi) = self.grid_range();
        let outside = |z: Complex64| z.re < lo || z.re > hi;
        if outside(z1) && outside(z2) {
            return Err(Error::Range {
                what: "Re z1 and Re z2",
                value: z1.re,
                lo,
                hi,
            });
        }
        let sigma2 = self.sigma_w * self.sigma_w;
        let same_side = (z1.im > 0.0) == (z2.im > 0.0);
        if same_side && (z1 - z2).norm() < 1e-6 * self.sigma_w {
            return Ok(sigma2 * self.m_derivative(0.5 * (z1 + z2))?);
        }
        let m1 = self.m_complex(z1)?;
        let m2 = self.m_complex(z2)?;
        Ok(sigma2 * (m1 - m2) / (z1 - z2))
    }

    /// Residual of the subordination identity `m(z) = (1/N) sum 1/(eps_n - z - S(z))`
    /// with `S(z) = sigma_w^2 m(z)`, at every `stride`-th grid point.
    pub fn subordination_check(&self, stride: usize) -> SubordinationReport {
        let stride = stride.max(1);
        let sigma2 = self.sigma_w * self.sigma_w;
        let eta = self.eta_final();
        let rows: Vec<(f64, f64)> = (0..self.grid.len())
            .step_by(stride)
            .map(|k| {
                let z = Complex64::new(self.grid[k], eta);
                let m = self.m_values[k];
                let (f, _, _) = bare_sums(&self.levels, z + sigma2 * m);
                (self.grid[k], scaled_residual(m, f))
            })
            .collect();
        let max_residual = rows.iter().map(|r| r.1).fold(0.0, f64::max);
        SubordinationReport { rows, max_residual }
    }

    /// Writes the solution CSV (`lambda,re_m,im_m,rho,s_shift,s_width,eta_final`).
    pub fn write_csv(&self, path: &Path, metadata: &[(String, String)]) -> Result<()> {
        let mut meta = metadata.to_vec();
        meta.push(("sigma_w".into(), format!("{}", self.sigma_w)));
        meta.push(("n".into(), format!("{}", self.levels.len())));
        let header = ["lambda", "re_m", "im_m", "rho", "s_shift", "s_width", "eta_final"];
        let eta = self.eta_final();
        let rows = (0..self.grid.len()).map(|k| {
            vec![
                self.grid[k],
                self.m_values[k].re,
                self.m_values[k].im,
                self.rho[k],
                self.s_shift[k],
                self.s_width[k],
                eta,
            ]
        });
        table::write_numeric_csv(path, &meta, &header, rows)
    }

    /// Rebuilds a solution from [`Self::write_csv`] output and the spectrum it was solved for.
    pub fn read_csv(path: &Path, spectrum: &BareSpectrum) -> Result<Self> {
        let parsed = table::read_numeric_csv(path)?;
        let expected = ["lambda", "re_m", "im_m", "rho", "s_shift", "s_width", "eta_final"];
        table::expect_columns(path, &parsed.header, &expected)?;
        let sigma_w: f64 = parsed.meta_parse(path, "sigma_w")?;
        if parsed.rows.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: parsed.first_data_line,
                message: "solution needs at least two grid rows".into(),
            });
        }
        let grid: Vec<f64> = parsed.rows.iter().map(|r| r[0]).collect();
        let m_values: Vec<Complex64> =
            parsed.rows.iter().map(|r| Complex64::new(r[1], r[2])).collect();
        let eta = parsed.rows[0][6];
        let mut config = SolverConfig::for_sigma(sigma_w);
        config.eta_schedule.retain(|&e| e > eta);
        config.eta_schedule.push(eta);
        Ok(Self::assemble(
            spectrum.levels().to_vec(),
            sigma_w,
            config,
            grid,
            m_values,
        ))
    }
}

/// Finds `t` with `interp(t) = target` for non-decreasing knot values `cdf`.
fn invert_monotone(interp: &Pchip, cdf: &[f64], target: f64) -> f64 {
    let x = interp.knots();
    let k = cdf.partition_point(|&c| c < target);
    if k == 0 {
        return x[0];
    }
    if k >= cdf.len() {
        return x[x.len() - 1];
    }
    let (mut a, mut b) = (x[k - 1], x[k]);
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        if interp.eval(mid) < target {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone)]
pub struct SubordinationReport {
    /// `(lambda, scaled residual)` pairs.
    pub rows: Vec<(f64, f64)>,
    pub max_residual: f64,
}
