//! Closed-form overlap moments built on a converged [`StieltjesSolution`].
//!
//! Index convention: bare levels `eps_n` and dressed positions `lambda_i`
//! are both in descending order, 0-based. Every density dividing an
//! overlap moment is the density of states per unit energy, `N * rho`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resolvent::StieltjesSolution;
use crate::spectra::BareSpectrum;

const PI: f64 = std::f64::consts::PI;

/// Numerator used for the cyclic fourth moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CyclicMode {
    /// `l_n(i) l_m(i) - l_n(j) l_m(i)`, as printed in the source derivation.
    PaperLiteral,
    /// `l_n(i) l_m(j) - l_n(j) l_m(i)`.
    #[default]
    Symmetrized,
}

impl fmt::Display for CyclicMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CyclicMode::PaperLiteral => "paper-literal",
            CyclicMode::Symmetrized => "symmetrized",
        })
    }
}

impl FromStr for CyclicMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-literal" => Ok(CyclicMode::PaperLiteral),
            "symmetrized" => Ok(CyclicMode::Symmetrized),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected paper-literal or symmetrized"
            ))),
        }
    }
}

/// Correction factor applied to the off-diagonal Green covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    /// `1 + S2`.
    #[default]
    Linear,
    /// `1 / (1 - S2)`.
    Geometric,
}

impl fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovarianceMode::Linear => "linear",
            CovarianceMode::Geometric => "geometric",
        })
    }
}

impl FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(CovarianceMode::Linear),
            "geometric" => Ok(CovarianceMode::Geometric),
            other => Err(Error::Config(format!(
                "unknown covariance mode {other:?}; expected linear or geometric"
            ))),
        }
    }
}

/// Which index patterns of `E[G_nm(z1) G_pq(z2)]` survive the ensemble average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ZeroClass {
    DiagDiag,
    CrossExtradiag,
    Zero,
}

pub fn zero_moment_classifier(n: usize, m: usize, p: usize, q: usize) -> ZeroClass {
    if n == m && p == q {
        ZeroClass::DiagDiag
    } else if n == q && m == p {
        ZeroClass::CrossExtradiag
    } else {
        ZeroClass::Zero
    }
}

/// Theory evaluator: a solved Stieltjes transform plus the mean dressed positions.
#[derive(Debug, Clone)]
pub struct OverlapTheory {
    solution: StieltjesSolution,
    positions: Vec<f64>,
    /// `m(lambda_i + i eta_final)` at every mean position.
    m_bar: Vec<Complex64>,
}

impl OverlapTheory {
    pub fn new(solution: StieltjesSolution) -> Result<Self> {
        let positions = solution.mean_positions(solution.n());
        let m_bar = positions
            .iter()
            .map(|&x| solution.m_at(x))
            .collect::<Result<Vec<_>>>()?;
        if let Some(k) = m_bar.iter().position(|m| m.im <= 0.0 || m.im.is_nan()) {
            return Err(Error::Domain(format!(
                "density vanishes at mean position {k} ({})",
                positions[k]
            )));
        }
        Ok(OverlapTheory {
            solution,
            positions,
            m_bar,
        })
    }

    /// Solves on the default grid and builds the evaluator.
    pub fn from_spectrum(spectrum: &BareSpectrum, sigma_w: f64) -> Result<Self> {
        Self::new(StieltjesSolution::solve(spectrum, sigma_w)?)
    }

    pub fn solution(&self) -> &StieltjesSolution {
        &self.solution
    }

    pub fn n(&self) -> usize {
        self.solution.n()
    }

    pub fn sigma_w(&self) -> f64 {
        self.solution.sigma_w()
    }

    pub fn levels(&self) -> &[f64] {
        self.solution.levels()
    }

    /// Mean dressed eigenvalues, descending.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    fn check_index(&self, what: &str, k: usize) -> Result<()> {
        if k < self.n() {
            Ok(())
        } else {
            Err(Error::Domain(format!("{what} index {k} out of range for N = {}", self.n())))
        }
    }

    fn lorentzian(&self, epsilon: f64, lambda: f64, m: Complex64) -> f64 {
        let s2 = self.sigma_w() * self.sigma_w();
        let width = s2 * m.im + self.solution.eta_final();
        let detune = epsilon - lambda - s2 * m.re;
        width / (PI * (detune * detune + width * width))
    }

    /// Local density of states of bare level `epsilon` at energy `lambda`.
    ///
    /// The width is `s_width + eta_final`, so that the profile is exactly
    /// `Im E[G(lambda + i eta)] / pi` and stays normalized as `sigma_w -> 0`.
    pub fn ldos(&self, epsilon: f64, lambda: f64) -> Result<f64> {
        let m = self.solution.m_at(lambda)?;
        Ok(self.lorentzian(epsilon, lambda, m))
    }

    fn ldos_at(&self, n: usize, i: usize) -> f64 {
        self.lorentzian(self.levels()[n], self.positions[i], self.m_bar[i])
    }

    /// Density of states per unit energy at mean position `i`.
    fn dos_at(&self, i: usize) -> f64 {
        self.n() as f64 * self.m_bar[i].im / PI
    }

    /// Predicted `E[|<phi_n|psi_i>|^2]`.
    pub fn second_moment(&self, n: usize, i: usize) -> Result<f64> {
        self.check_index("bare", n)?;
        self.check_index("dressed", i)?;
        Ok(self.ldos_at(n, i) / self.dos_at(i))
    }

    pub fn second_moment_row(&self, n: usize) -> Result<Vec<f64>> {
        self.check_index("bare", n)?;
        Ok((0..self.n()).map(|i| self.ldos_at(n, i) / self.dos_at(i)).collect())
    }

    /// Full `N x N` table `C[n][i]`.
    pub fn second_moment_table(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .into_par_iter()
            .map(|n| (0..self.n()).map(|i| self.ldos_at(n, i) / self.dos_at(i)).collect())
            .collect()
    }

    /// Band delocalization `N pi^2 sigma_w^2 rho(lambda)^2`.
    pub fn delocalization(&self, lambda: f64) -> Result<f64> {
        let rho = self.solution.rho_at(lambda)?;
        let s = self.sigma_w();
        Ok(self.n() as f64 * PI * PI * s * s * rho * rho)
    }

    fn mean_green(&self, n: usize, z: Complex64) -> Result<Complex64> {
        self.solution.mean_green_diag_at(n, z)
    }

    /// `Cov(G_nm(z1), G_mn(z2)) = (sigma_w^2/N) * factor(S2) * G_n(z1) G_m(z1) G_n(z2) G_m(z2)`.
    pub fn green_cov_extradiag(
        &self,
        n: usize,
        m: usize,
        z1: Complex64,
        z2: Complex64,
        mode: CovarianceMode,
    ) -> Result<Complex64> {
        self.check_index("bare", n)?;
        self.check_index("bare", m)?;
        if n == m {
            return Err(Error::Domain("green_cov_extradiag needs n != m".into()));
        }
        let s2 = self.solution.second_subordinate(z1, z2)?;
        let factor = match mode {
            CovarianceMode::Linear => 1.0 + s2,
            CovarianceMode::Geometric => (1.0 - s2).inv(),
        };
        let f = self.mean_green(n, z1)?
            * self.mean_green(m, z1)?
            * self.mean_green(n, z2)?
            * self.mean_green(m, z2)?;
        let sigma2 = self.sigma_w() * self.sigma_w();
        Ok(sigma2 / self.n() as f64 * factor * f)
    }

    /// `Cov(G_nn(z1), G_pp(z2))`, expressed through off-diagonal covariances at
    /// the four point pairs drawn from `{z1, z2}`.
    pub fn green_cov_diag(
        &self,
        n: usize,
        p: usize,
        z1: Complex64,
        z2: Complex64,
        mode: CovarianceMode,
    ) -> Result<Complex64> {
        self.check_index("bare", n)?;
        self.check_index("bare", p)?;
        if n == p {
            return Err(Error::Domain("green_cov_diag needs n != p".into()));
        }
        if z1 == z2 {
            return Err(Error::Domain("green_cov_diag needs z1 != z2".into()));
        }
        let sigma_w = self.sigma_w();
        let sigma2 = sigma_w * sigma_w;
        let dm = self.solution.m_complex(z2)? - self.solution.m_complex(z1)?;
        let denom = self.levels()[n] - self.levels()[p] + z2 - z1 + sigma2 * dm;
        let threshold = 1e-12 * sigma_w;
        if denom.norm() < threshold {
            return Err(Error::NearResonance {
                magnitude: denom.norm(),
                threshold,
            });
        }
        let x = |a: Complex64, b: Complex64| self.green_cov_extradiag(p, n, a, b, mode);
        let inner = x(z2, z2)? - x(z2, z1)? - x(z1, z2)? + x(z1, z1)?;
        Ok(-(sigma2 / self.n() as f64) / (z2 - z1) * inner / denom)
    }

    fn check_separation(&self, gap: f64) -> Result<()> {
        let threshold = 1e-8 * self.sigma_w();
        if gap.abs() < threshold {
            return Err(Error::NearResonance {
                magnitude: gap.abs(),
                threshold,
            });
        }
        Ok(())
    }

    /// Predicted `E[<phi_n|psi_i><psi_i|phi_m><phi_m|psi_j><psi_j|phi_n>]` for `n != m`, `i != j`.
    pub fn fourth_moment_cyclic(
        &self,
        n: usize,
        m: usize,
        i: usize,
        j: usize,
        mode: CyclicMode,
    ) -> Result<f64> {
        for (what, k) in [("bare", n), ("bare", m), ("dressed", i), ("dressed", j)] {
            self.check_index(what, k)?;
        }
        if n == m || i == j {
            return Err(Error::Domain(format!(
                "fourth_moment_cyclic needs n != m and i != j, got ({n}, {m}, {i}, {j})"
            )));
        }
        let (eps, lam) = (self.levels(), &self.positions);
        self.check_separation(eps[n] - eps[m])?;
        self.check_separation(lam[i] - lam[j])?;
        let k = match mode {
            CyclicMode::Symmetrized => {
                self.ldos_at(n, i) * self.ldos_at(m, j) - self.ldos_at(n, j) * self.ldos_at(m, i)
            }
            CyclicMode::PaperLiteral => {
                self.ldos_at(n, i) * self.ldos_at(m, i) - self.ldos_at(n, j) * self.ldos_at(m, i)
            }
        };
        let sigma2 = self.sigma_w() * self.sigma_w();
        let pref = -(sigma2 / self.n() as f64) / (self.dos_at(i) * self.dos_at(j));
        Ok(pref * k / ((lam[i] - lam[j]) * (eps[n] - eps[m])))
    }

    /// `(i, j, value)` for every `i != j`, row-major.
    pub fn fourth_moment_cyclic_grid(
        &self,
        n: usize,
        m: usize,
        mode: CyclicMode,
    ) -> Result<Vec<(usize, usize, f64)>> {
        let size = self.n();
        let rows: Vec<Result<Vec<(usize, usize, f64)>>> = (0..size)
            .into_par_iter()
            .map(|i| {
                (0..size)
                    .filter(|&j| j != i)
                    .map(|j| Ok((i, j, self.fourth_moment_cyclic(n, m, i, j, mode)?)))
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(size * (size - 1));
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Predicted `E[|<phi_n|psi_i>|^2 |<phi_p|psi_j>|^2]` as a product of second moments.
    pub fn fourth_moment_factorized(&self, n: usize, p: usize, i: usize, j: usize) -> Result<f64> {
        if n == p && i == j {
            return Err(Error::Domain(
                "factorized moment excludes n = p with i = j; estimate it by Monte Carlo".into(),
            ));
        }
        Ok(self.second_moment(n, i)? * self.second_moment(p, j)?)
    }
}
