//! Bare spectra and Gaussian interaction matrices.
//!
//! The interaction normalization follows the convention that the spectral
//! variance of `W` is `sigma_w^2 = E[tr W^2]` with `tr = Trace / N`, which
//! fixes the entry covariances to `E[W_nm W_mn] = sigma_w^2 / N`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumSource {
    GaussianSampled,
    File,
    Constant,
    /// Levels handed over directly by the caller.
    Provided,
}

/// Deterministic eigenvalues of `H0`, stored in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BareSpectrum {
    levels: Vec<f64>,
    sigma0: f64,
    source: SpectrumSource,
}

impl BareSpectrum {
    fn build(mut levels: Vec<f64>, sigma0: f64, source: SpectrumSource) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidDimension { n: levels.len() });
        }
        if let Some(bad) = levels.iter().find(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite bare level {bad}")));
        }
        sort_descending(&mut levels);
        Ok(BareSpectrum {
            levels,
            sigma0,
            source,
        })
    }

    /// Wraps caller-supplied levels (sorted internally).
    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        Self::build(levels, 0.0, SpectrumSource::Provided)
    }

    /// `n` degenerate levels at `value`.
    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::build(vec![value; n], 0.0, SpectrumSource::Constant)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn source(&self) -> SpectrumSource {
        self.source
    }

    pub fn min(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    pub fn max(&self) -> f64 {
        self.levels[0]
    }

    /// SHA-256 over the little-endian bit patterns of the levels.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for x in &self.levels {
            hasher.update(x.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Writes one level per line in a form that [`load_spectrum`] reads back exactly.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.levels.len() * 24);
        out.push_str("# bare levels, descending\n");
        for x in &self.levels {
            out.push_str(&format!("{x}\n"));
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

fn sort_descending(levels: &mut [f64]) {
    levels.sort_by(|a, b| b.total_cmp(a));
}

/// `n` independent centered Gaussian levels of standard deviation `sigma0`.
pub fn make_gaussian_spectrum(n: usize, sigma0: f64, seed: u64) -> Result<BareSpectrum> {
    if n < 2 {
        return Err(Error::InvalidDimension { n });
    }
    if !(sigma0 >= 0.0 && sigma0.is_finite()) {
        return Err(Error::Domain(format!("sigma0 must be finite and >= 0, got {sigma0}")));
    }
    let mut stream = GaussianStream::new(seed, StreamDomain::Spectrum, 0);
    let levels = (0..n).map(|_| sigma0 * stream.normal()).collect();
    BareSpectrum::build(levels, sigma0, SpectrumSource::GaussianSampled)
}

/// Reads a spectrum file: one real per line, `#` comment lines and blank lines skipped.
pub fn load_spectrum(path: &Path) -> Result<BareSpectrum> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut levels = Vec::new();
    let mut last_line = 0;
    for (k, raw) in text.lines().enumerate() {
        last_line = k + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message: format!("expected a real number, found {line:?}"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: format!("non-finite level {line:?}"),
            });
        }
        levels.push(value);
    }
    if levels.len() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: last_line,
            message: format!("expected at least 2 levels, found {}", levels.len()),
        });
    }
    BareSpectrum::build(levels, 0.0, SpectrumSource::File)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ensemble {
    Goe,
    Gue,
}

impl fmt::Display for Ensemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ensemble::Goe => "goe",
            Ensemble::Gue => "gue",
        })
    }
}

impl std::str::FromStr for Ensemble {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "goe" => Ok(Ensemble::Goe),
            "gue" => Ok(Ensemble::Gue),
            other => Err(Error::Config(format!("unknown ensemble {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub kind: Ensemble,
    pub sigma_w: f64,
}

impl InteractionSpec {
    pub fn new(kind: Ensemble, sigma_w: f64) -> Result<Self> {
        if !(sigma_w > 0.0 && sigma_w.is_finite()) {
            return Err(Error::Domain(format!("sigma_w must be finite and > 0, got {sigma_w}")));
        }
        Ok(InteractionSpec { kind, sigma_w })
    }
}

/// One draw of `W`: real symmetric for GOE, complex Hermitian for GUE.
#[derive(Debug, Clone)]
pub enum InteractionSample {
    Real(Mat<f64>),
    Complex(Mat<Complex64>),
}

impl InteractionSample {
    pub fn dim(&self) -> usize {
        match self {
            InteractionSample::Real(m) => m.nrows(),
            InteractionSample::Complex(m) => m.nrows(),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        match self {
            InteractionSample::Real(m) => Complex64::new(m[(i, j)], 0.0),
            InteractionSample::Complex(m) => m[(i, j)],
        }
    }

    /// `tr(W^2) = (1/N) sum_ij |W_ij|^2`.
    pub fn normalized_trace_sq(&self) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                acc += self.entry(i, j).norm_sqr();
            }
        }
        acc / n as f64
    }

    /// `W - W^dagger == 0` with exact floating-point comparison.
    pub fn is_exactly_hermitian(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| self.entry(i, j) == self.entry(j, i).conj()))
    }
}

/// Tags the purpose of a random stream so that a spectrum seed and an
/// interaction master seed never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    Spectrum,
    Interaction,
}

impl StreamDomain {
    fn tag(self) -> &'static [u8] {
        match self {
            StreamDomain::Spectrum => b"overlap-core/spectrum",
            StreamDomain::Interaction => b"overlap-core/interaction",
        }
    }
}

/// Counter-based Gaussian source: a ChaCha8 keystream selected by
/// `(seed, domain, stream index)` fed through Box-Muller, so every normal
/// consumes exactly two uniforms.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, domain: StreamDomain, stream: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(domain.tag());
        hasher.update(seed.to_le_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        GaussianStream { rng, spare: None }
    }

    /// Stream for realization `index` of a Monte Carlo run keyed by `master_seed`.
    pub fn for_realization(master_seed: u64, index: u64) -> Self {
        Self::new(master_seed, StreamDomain::Interaction, index)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Draws `W` for dimension `n`.
///
/// GOE: off-diagonal `N(0, s^2/N)`, diagonal `N(0, 2 s^2/N)`.
/// GUE: off-diagonal real and imaginary parts each `N(0, s^2/(2N))`, diagonal `N(0, s^2/N)`.
/// Entries are drawn row by row over the upper triangle, diagonal first.
pub fn sample_interaction(
    spec: &InteractionSpec,
    n: usize,
    stream: &mut GaussianStream,
) -> Result<InteractionSample> {
    if n < 2 {
        return Err(Error::InvalidDimension { n });
    }
    let var = spec.sigma_w * spec.sigma_w / n as f64;
    match spec.kind {
        Ensemble::Goe => {
            let off = var.sqrt();
            let diag = (2.0 * var).sqrt();
            let mut w = Mat::<f64>::zeros(n, n);
            for i in 0..n {
                w[(i, i)] = diag * stream.normal();
                for j in (i + 1)..n {
                    let x = off * stream.normal();
                    w[(i, j)] = x;
                    w[(j, i)] = x;
                }
            }
            Ok(InteractionSample::Real(w))
        }
        Ensemble::Gue => {
            let half = (0.5 * var).sqrt();
            let diag = var.sqrt();
            let mut w = Mat::<Complex64>::zeros(n, n);
            for i in 0..n {
                w[(i, i)] = Complex64::new(diag * stream.normal(), 0.0);
                for j in (i + 1)..n {
                    let re = half * stream.normal();
                    let im = half * stream.normal();
                    let x = Complex64::new(re, im);
                    w[(i, j)] = x;
                    w[(j, i)] = x.conj();
                }
            }
            Ok(InteractionSample::Complex(w))
        }
    }
}
