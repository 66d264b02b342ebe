use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::realization::RealizationResult;
use crate::error::{Error, Result};

/// Streaming mean and sum of squared deviations for a fixed-length vector of statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welford {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Welford {
    pub fn new(len: usize) -> Self {
        Welford {
            count: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Adds one observation whose `k`-th component is `value(k)`.
    #[inline]
    pub fn push_with(&mut self, mut value: impl FnMut(usize) -> f64) {
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for (k, (mean, m2)) in self.mean.iter_mut().zip(self.m2.iter_mut()).enumerate() {
            let x = value(k);
            let delta = x - *mean;
            *mean += delta * inv;
            *m2 += delta * (x - *mean);
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.len());
        self.push_with(|k| x[k]);
    }

    /// Pairwise combination of two disjoint sample sets.
    pub fn merge(&mut self, other: &Welford) {
        assert_eq!(self.len(), other.len());
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let w = nb / n;
        let cross = na * nb / n;
        for k in 0..self.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * w;
            self.m2[k] += other.m2[k] + delta * delta * cross;
        }
        self.count += other.count;
    }

    /// `sqrt(m2 / (count (count - 1)))`.
    pub fn stderr(&self, k: usize) -> f64 {
        let c = self.count as f64;
        (self.m2[k] / (c * (c - 1.0))).sqrt()
    }

    pub fn estimate(&self, k: usize) -> Estimate {
        Estimate {
            mean: self.mean[k],
            stderr: self.stderr(k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Records `X = G_ab(z1)` and `Y = G_cd(z2)` per realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenProbe {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub d: usize,
    pub z1: Complex64,
    pub z2: Complex64,
}

impl GreenProbe {
    /// `Cov(G_nm(z1), G_mn(z2))`.
    pub fn extradiag(n: usize, m: usize, z1: Complex64, z2: Complex64) -> Self {
        GreenProbe { a: n, b: m, c: m, d: n, z1, z2 }
    }

    /// `Cov(G_nn(z1), G_pp(z2))`.
    pub fn diag(n: usize, p: usize, z1: Complex64, z2: Complex64) -> Self {
        GreenProbe { a: n, b: n, c: p, d: p, z1, z2 }
    }
}

/// Which statistics a run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub n: usize,
    /// `(n, m)` pairs for `E[O_ni conj(O_mi) O_mj conj(O_nj)]` over all `(i, j)`.
    pub cyclic_pairs: Vec<(usize, usize)>,
    /// `(n, p)` pairs for `E[|O_ni|^2 |O_pj|^2]` over all `(i, j)`.
    pub factorized_pairs: Vec<(usize, usize)>,
    pub probes: Vec<GreenProbe>,
}

impl TrackingConfig {
    pub fn second_moments_only(n: usize) -> Self {
        TrackingConfig {
            n,
            cyclic_pairs: Vec::new(),
            factorized_pairs: Vec::new(),
            probes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidDimension { n: self.n });
        }
        let n = self.n;
        let bad = |k: usize| k >= n;
        for &(a, b) in self.cyclic_pairs.iter().chain(&self.factorized_pairs) {
            if bad(a) || bad(b) {
                return Err(Error::Config(format!("tracked pair ({a}, {b}) out of range for N = {n}")));
            }
        }
        for p in &self.probes {
            if [p.a, p.b, p.c, p.d].into_iter().any(bad) {
                return Err(Error::Config(format!("probe indices out of range for N = {n}: {p:?}")));
            }
            if p.z1.im == 0.0 || p.z2.im == 0.0 || !p.z1.is_finite() || !p.z2.is_finite() {
                return Err(Error::Config(format!("probe points must be off the real axis: {p:?}")));
            }
        }
        Ok(())
    }
}

/// Per-probe moments. `moments` holds `[Re X, Im X, Re Y, Im Y, Re XY, Im XY]`;
/// `comoment` is `sum (X - mean X)(Y - mean Y)` without conjugation;
/// `block_cov` collects the unbiased covariance of each sealed block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub moments: Welford,
    pub comoment: [f64; 2],
    pub block_cov: Welford,
}

impl ProbeStats {
    fn new() -> Self {
        ProbeStats {
            moments: Welford::new(6),
            comoment: [0.0; 2],
            block_cov: Welford::new(2),
        }
    }

    fn mean_x(&self) -> Complex64 {
        Complex64::new(self.moments.mean[0], self.moments.mean[1])
    }

    fn mean_y(&self) -> Complex64 {
        Complex64::new(self.moments.mean[2], self.moments.mean[3])
    }

    fn push(&mut self, x: Complex64, y: Complex64) {
        let dx = x - self.mean_x();
        let xy = x * y;
        let vals = [x.re, x.im, y.re, y.im, xy.re, xy.im];
        self.moments.push(&vals);
        let c = dx * (y - self.mean_y());
        self.comoment[0] += c.re;
        self.comoment[1] += c.im;
    }

    fn merge(&mut self, other: &ProbeStats) {
        let (na, nb) = (self.moments.count as f64, other.moments.count as f64);
        if na > 0.0 && nb > 0.0 {
            let cross = (other.mean_x() - self.mean_x()) * (other.mean_y() - self.mean_y()) * (na * nb / (na + nb));
            self.comoment[0] += other.comoment[0] + cross.re;
            self.comoment[1] += other.comoment[1] + cross.im;
        } else if na == 0.0 {
            self.comoment = other.comoment;
        }
        self.moments.merge(&other.moments);
        self.block_cov.merge(&other.block_cov);
    }

    fn covariance(&self) -> Complex64 {
        let c = self.moments.count as f64;
        Complex64::new(self.comoment[0], self.comoment[1]) / (c - 1.0)
    }

    fn seal(&mut self) {
        if self.moments.count >= 2 {
            let cov = self.covariance();
            self.block_cov.push(&[cov.re, cov.im]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeEstimate {
    pub probe: GreenProbe,
    pub mean_x: Complex64,
    /// Standard errors of the real and imaginary parts of `mean_x`.
    pub mean_x_stderr: (f64, f64),
    pub mean_y: Complex64,
    /// `E[XY] - E[X] E[Y]` from the pooled sample.
    pub covariance: Complex64,
    /// Standard errors of the real and imaginary parts, from the spread of block covariances.
    pub cov_stderr: (f64, f64),
    pub blocks: u64,
}

/// Streaming estimates of every tracked statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentAccumulator {
    tracking: TrackingConfig,
    second: Welford,
    eigen: Welford,
    cyclic: Vec<Welford>,
    factorized: Vec<Welford>,
    probes: Vec<ProbeStats>,
}

impl MomentAccumulator {
    pub fn new(tracking: &TrackingConfig) -> Result<Self> {
        tracking.validate()?;
        let n = tracking.n;
        Ok(MomentAccumulator {
            tracking: tracking.clone(),
            second: Welford::new(n * n),
            eigen: Welford::new(n),
            cyclic: tracking.cyclic_pairs.iter().map(|_| Welford::new(2 * n * n)).collect(),
            factorized: tracking.factorized_pairs.iter().map(|_| Welford::new(n * n)).collect(),
            probes: tracking.probes.iter().map(|_| ProbeStats::new()).collect(),
        })
    }

    pub fn tracking(&self) -> &TrackingConfig {
        &self.tracking
    }

    pub fn count(&self) -> u64 {
        self.second.count
    }

    pub fn accumulate(&mut self, r: &RealizationResult) -> Result<()> {
        let n = self.tracking.n;
        if r.n() != n {
            return Err(Error::Config(format!(
                "realization has dimension {}, accumulator expects {n}",
                r.n()
            )));
        }
        let o = r.overlaps();
        self.second.push_with(|k| o.abs2(k / n, k % n));
        self.eigen.push(r.eigenvalues());
        for (&(a, b), stats) in self.tracking.cyclic_pairs.iter().zip(&mut self.cyclic) {
            let amp: Vec<Complex64> = (0..n).map(|i| o.get(a, i) * o.get(b, i).conj()).collect();
            let nn = n * n;
            stats.push_with(|k| {
                let (kk, imag) = if k < nn { (k, false) } else { (k - nn, true) };
                let v = amp[kk / n] * amp[kk % n].conj();
                if imag {
                    v.im
                } else {
                    v.re
                }
            });
        }
        for (&(a, p), stats) in self.tracking.factorized_pairs.iter().zip(&mut self.factorized) {
            let left: Vec<f64> = (0..n).map(|i| o.abs2(a, i)).collect();
            let right: Vec<f64> = (0..n).map(|j| o.abs2(p, j)).collect();
            stats.push_with(|k| left[k / n] * right[k % n]);
        }
        for (probe, stats) in self.tracking.probes.iter().zip(&mut self.probes) {
            let x = r.green(probe.a, probe.b, probe.z1);
            let y = r.green(probe.c, probe.d, probe.z2);
            stats.push(x, y);
        }
        Ok(())
    }

    /// Combines with an accumulator over a disjoint set of realizations.
    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        if self.tracking != other.tracking {
            return Err(Error::Config("cannot merge accumulators with different tracking".into()));
        }
        self.second.merge(&other.second);
        self.eigen.merge(&other.eigen);
        for (a, b) in self.cyclic.iter_mut().zip(&other.cyclic) {
            a.merge(b);
        }
        for (a, b) in self.factorized.iter_mut().zip(&other.factorized) {
            a.merge(b);
        }
        for (a, b) in self.probes.iter_mut().zip(&other.probes) {
            a.merge(b);
        }
        Ok(())
    }

    /// Closes a block: its covariance estimates enter the block-level statistics.
    pub fn seal(&mut self) {
        for p in &mut self.probes {
            p.seal();
        }
    }

    fn require(&self, required: u64) -> Result<()> {
        if self.count() < required {
            return Err(Error::InsufficientData {
                count: self.count(),
                required,
            });
        }
        Ok(())
    }

    fn pair_index(pairs: &[(usize, usize)], pair: (usize, usize)) -> Result<usize> {
        pairs
            .iter()
            .position(|&p| p == pair)
            .ok_or_else(|| Error::Config(format!("pair {pair:?} is not tracked")))
    }

    pub fn second_moment(&self, n: usize, i: usize) -> Result<Estimate> {
        self.require(2)?;
        Ok(self.second.estimate(n * self.tracking.n + i))
    }

    pub fn second_moment_table(&self) -> Result<Vec<Vec<Estimate>>> {
        self.require(2)?;
        let n = self.tracking.n;
        Ok((0..n)
            .map(|a| (0..n).map(|i| self.second.estimate(a * n + i)).collect())
            .collect())
    }

    /// Mean of the sorted eigenvalues per index (descending), with standard errors.
    pub fn estimate_mean_positions(&self) -> Result<Vec<Estimate>> {
        self.require(2)?;
        Ok((0..self.tracking.n).map(|k| self.eigen.estimate(k)).collect())
    }

    /// Real and imaginary parts of the cyclic moment at `(i, j)` for a tracked `(n, m)`.
    pub fn cyclic(&self, pair: (usize, usize), i: usize, j: usize) -> Result<(Estimate, Estimate)> {
        self.require(2)?;
        let w = &self.cyclic[Self::pair_index(&self.tracking.cyclic_pairs, pair)?];
        let n = self.tracking.n;
        let k = i * n + j;
        Ok((w.estimate(k), w.estimate(n * n + k)))
    }

    pub fn factorized(&self, pair: (usize, usize), i: usize, j: usize) -> Result<Estimate> {
        self.require(2)?;
        let w = &self.factorized[Self::pair_index(&self.tracking.factorized_pairs, pair)?];
        Ok(w.estimate(i * self.tracking.n + j))
    }

    pub fn probe(&self, k: usize) -> Result<ProbeEstimate> {
        self.require(2)?;
        let stats = self
            .probes
            .get(k)
            .ok_or_else(|| Error::Config(format!("probe {k} is not tracked")))?;
        if stats.block_cov.count < 2 {
            return Err(Error::InsufficientData {
                count: stats.block_cov.count,
                required: 2,
            });
        }
        Ok(ProbeEstimate {
            probe: self.tracking.probes[k],
            mean_x: stats.mean_x(),
            mean_x_stderr: (stats.moments.stderr(0), stats.moments.stderr(1)),
            mean_y: stats.mean_y(),
            covariance: stats.covariance(),
            cov_stderr: (stats.block_cov.stderr(0), stats.block_cov.stderr(1)),
            blocks: stats.block_cov.count,
        })
    }
}
