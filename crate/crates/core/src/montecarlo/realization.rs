use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::{Mat, Par};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectra::{sample_interaction, BareSpectrum, GaussianStream, InteractionSample, InteractionSpec};

/// Overlaps `O[n][i] = <phi_n|psi_i>`; real for GOE draws, complex for GUE.
#[derive(Debug, Clone)]
pub enum OverlapMatrix {
    Real(Mat<f64>),
    Complex(Mat<Complex64>),
}

impl OverlapMatrix {
    pub fn dim(&self) -> usize {
        match self {
            OverlapMatrix::Real(m) => m.nrows(),
            OverlapMatrix::Complex(m) => m.nrows(),
        }
    }

    #[inline]
    pub fn get(&self, n: usize, i: usize) -> Complex64 {
        match self {
            OverlapMatrix::Real(m) => Complex64::new(m[(n, i)], 0.0),
            OverlapMatrix::Complex(m) => m[(n, i)],
        }
    }

    #[inline]
    pub fn abs2(&self, n: usize, i: usize) -> f64 {
        match self {
            OverlapMatrix::Real(m) => {
                let x = m[(n, i)];
                x * x
            }
            OverlapMatrix::Complex(m) => m[(n, i)].norm_sqr(),
        }
    }
}

/// One diagonalized draw of `diag(eps) + W`.
#[derive(Debug, Clone)]
pub struct RealizationResult {
    pub index: u64,
    eigenvalues: Vec<f64>,
    overlaps: OverlapMatrix,
}

impl RealizationResult {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Dressed eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn overlaps(&self) -> &OverlapMatrix {
        &self.overlaps
    }

    /// Largest deviation from one among all row and column sums of `|O|^2`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        let mut cols = vec![0.0; n];
        for a in 0..n {
            let mut row = 0.0;
            for (i, col) in cols.iter_mut().enumerate() {
                let v = self.overlaps.abs2(a, i);
                row += v;
                *col += v;
            }
            worst = worst.max((row - 1.0).abs());
        }
        cols.iter().fold(worst, |w, c| w.max((c - 1.0).abs()))
    }

    /// `G_ab(z) = sum_k O[a][k] conj(O[b][k]) / (lambda_k - z)`.
    pub fn green(&self, a: usize, b: usize, z: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let num = self.overlaps.get(a, k) * self.overlaps.get(b, k).conj();
            acc += num / (lam - z);
        }
        acc
    }

    /// Multiplies eigenvector `i` by `phases[i]`. Real overlaps are promoted
    /// to complex unless every phase is `+1` or `-1`.
    pub fn apply_phases(&mut self, phases: &[Complex64]) {
        let n = self.n();
        assert_eq!(phases.len(), n, "one phase per eigenvector");
        let real_signs = phases.iter().all(|p| p.im == 0.0 && p.re.abs() == 1.0);
        match (&mut self.overlaps, real_signs) {
            (OverlapMatrix::Real(m), true) => {
                for i in 0..n {
                    for a in 0..n {
                        m[(a, i)] *= phases[i].re;
                    }
                }
            }
            (OverlapMatrix::Real(m), false) => {
                let c = Mat::from_fn(n, n, |a, i| phases[i] * m[(a, i)]);
                self.overlaps = OverlapMatrix::Complex(c);
            }
            (OverlapMatrix::Complex(m), _) => {
                for i in 0..n {
                    for a in 0..n {
                        m[(a, i)] *= phases[i];
                    }
                }
            }
        }
    }
}

fn eigh<T: faer::traits::ComplexField>(h: &Mat<T>) -> std::result::Result<(Diag<T>, Mat<T>), evd::EvdError> {
    let n = h.nrows();
    let mut s = Diag::<T>::zeros(n);
    let mut u = Mat::<T>::zeros(n, n);
    let params = Default::default();
    let mut buf = MemBuffer::new(evd::self_adjoint_evd_scratch::<T>(
        n,
        ComputeEigenvectors::Yes,
        Par::Seq,
        params,
    ));
    evd::self_adjoint_evd(
        h.as_ref(),
        s.as_mut(),
        Some(u.as_mut()),
        Par::Seq,
        MemStack::new(&mut buf),
        params,
    )?;
    Ok((s, u))
}

/// Diagonalizes `diag(levels) + w`; eigenpairs come back in descending order.
pub fn diagonalize(levels: &[f64], w: &InteractionSample, index: u64) -> Result<RealizationResult> {
    let n = levels.len();
    if w.dim() != n {
        return Err(Error::Config(format!(
            "interaction dimension {} does not match {n} levels",
            w.dim()
        )));
    }
    let fail = |message: String| Error::Realization { index, message };
    let (eigenvalues, overlaps) = match w {
        InteractionSample::Real(m) => {
            let mut h = m.clone();
            for (k, &e) in levels.iter().enumerate() {
                h[(k, k)] += e;
            }
            let (s, u) = eigh(&h).map_err(|e| fail(format!("eigensolver: {e:?}")))?;
            let vals: Vec<f64> = (0..n).rev().map(|k| s[k]).collect();
            let vecs = Mat::from_fn(n, n, |a, i| u[(a, n - 1 - i)]);
            (vals, OverlapMatrix::Real(vecs))
        }
        InteractionSample::Complex(m) => {
            let mut h = m.clone();
            for (k, &e) in levels.iter().enumerate() {
                h[(k, k)] += e;
            }
            let (s, u) = eigh(&h).map_err(|e| fail(format!("eigensolver: {e:?}")))?;
            let vals: Vec<f64> = (0..n).rev().map(|k| s[k].re).collect();
            let vecs = Mat::from_fn(n, n, |a, i| u[(a, n - 1 - i)]);
            (vals, OverlapMatrix::Complex(vecs))
        }
    };
    if eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(fail("non-finite eigenvalue".into()));
    }
    Ok(RealizationResult {
        index,
        eigenvalues,
        overlaps,
    })
}

/// Draws `W` for `(master_seed, index)` and diagonalizes `diag(eps) + W`.
pub fn run_realization(
    spectrum: &BareSpectrum,
    interaction: &InteractionSpec,
    index: u64,
    master_seed: u64,
) -> Result<RealizationResult> {
    let mut stream = GaussianStream::for_realization(master_seed, index);
    let w = sample_interaction(interaction, spectrum.len(), &mut stream)?;
    diagonalize(spectrum.levels(), &w, index)
}
