//! Properties of the self-consistent solution and of the overlap moments
//! built on it.

use num_complex::Complex64;
use overlap_core::{make_gaussian_spectrum, BareSpectrum, CovarianceMode, CyclicMode, OverlapTheory, StieltjesSolution};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Deterministic spectrum at the Gaussian quantiles `(k + 1/2) / n`, so that
/// different `n` sample the same density without sampling noise.
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solution_and_moment_invariants(
        n in 16usize..96,
        seed in 0u64..10_000,
        sigma_w in 0.05f64..1.0,
        picks in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 8),
    ) {
        let spectrum = make_gaussian_spectrum(n, 1.0, seed).unwrap();
        let theory = OverlapTheory::from_spectrum(&spectrum, sigma_w).unwrap();
        let sol = theory.solution();

        prop_assert!(sol.m_values().iter().all(|m| m.im > 0.0), "Herglotz");
        prop_assert!((sol.rho_integral() - 1.0).abs() <= 1e-3, "normalization {}", sol.rho_integral());
        prop_assert!(sol.subordination_check(11).max_residual <= 10.0 * sol.config().tol);

        let table = theory.second_moment_table();
        prop_assert!(table.iter().flatten().all(|&c| c >= 0.0));

        let idx = |u: f64| ((u * n as f64) as usize).min(n - 1);
        for &(a, b, c, d) in &picks {
            let (k, m, i, j) = (idx(a), idx(b), idx(c), idx(d));
            if k != m && i != j {
                let lhs = theory.fourth_moment_cyclic(k, m, i, j, CyclicMode::Symmetrized);
                let rhs = theory.fourth_moment_cyclic(m, k, j, i, CyclicMode::Symmetrized);
                if let (Ok(l), Ok(r)) = (lhs, rhs) {
                    prop_assert_eq!(l, r);
                }
                prop_assert!(theory.fourth_moment_factorized(k, m, i, j).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn mirrored_spectrum_gives_mirrored_density(
        half in 4usize..40,
        seed in 0u64..10_000,
        sigma_w in 0.1f64..1.0,
    ) {
        let base = make_gaussian_spectrum(half, 1.0, seed).unwrap();
        let levels: Vec<f64> = base.levels().iter().flat_map(|&e| [e.abs(), -e.abs()]).collect();
        let spectrum = BareSpectrum::from_levels(levels).unwrap();
        let theory = OverlapTheory::from_spectrum(&spectrum, sigma_w).unwrap();
        let sol = theory.solution();
        let (grid, rho) = (sol.grid(), sol.rho());
        let len = grid.len();
        for k in 0..len / 2 {
            let mirror = len - 1 - k;
            prop_assert!((grid[k] + grid[mirror]).abs() <= 1e-12 * grid[k].abs().max(1.0));
            prop_assert!((rho[k] - rho[mirror]).abs() <= 1e-8, "rho at {}: {} vs {}", grid[k], rho[k], rho[mirror]);
        }
        let pos = theory.positions();
        let n = pos.len();
        for j in 0..n / 2 {
            prop_assert!((pos[j] + pos[n - 1 - j]).abs() <= 1e-6, "positions {} and {}", pos[j], pos[n - 1 - j]);
        }
    }
}

#[test]
fn density_is_normalized_across_couplings() {
    let spectrum = make_gaussian_spectrum(512, 1.0, 1).unwrap();
    for sigma_w in [0.01, 0.08, 0.4] {
        let sol = StieltjesSolution::solve(&spectrum, sigma_w).unwrap();
        let total = sol.rho_integral();
        assert!((total - 1.0).abs() <= 1e-3, "sigma_w = {sigma_w}: {total}");
    }
}

#[test]
fn strong_coupling_subordination_residual() {
    let spectrum = make_gaussian_spectrum(512, 1.0, 1).unwrap();
    let sol = StieltjesSolution::solve(&spectrum, 0.65).unwrap();
    assert!(sol.subordination_check(1).max_residual <= 10.0 * sol.config().tol);
}

/// The cyclic moment carries `sigma_w^2 / N` times two second-moment factors,
/// each of order `1/N`, so it falls as `N^-3` overall and as `N^-1` relative
/// to `C[n][i] C[m][j]` at fixed quantile positions.
#[test]
fn cyclic_moment_scales_with_dimension() {
    let ns = [64usize, 128, 256];
    let sizes: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let mut absolute = Vec::new();
    let mut relative = Vec::new();
    for &n in &ns {
        let theory = OverlapTheory::from_spectrum(&quantile_spectrum(n), 0.4).unwrap();
        let (a, b) = (n / 4, 3 * n / 4);
        let (i, j) = (n / 4 + n / 16, 3 * n / 4 - n / 16);
        let q = theory.fourth_moment_cyclic(a, b, i, j, CyclicMode::Symmetrized).unwrap();
        let c = theory.second_moment(a, i).unwrap() * theory.second_moment(b, j).unwrap();
        absolute.push(q.abs());
        relative.push(q.abs() / c);
    }
    let s_abs = log_log_slope(&sizes, &absolute);
    let s_rel = log_log_slope(&sizes, &relative);
    assert!((s_abs + 3.0).abs() <= 0.3, "absolute slope {s_abs}");
    assert!((s_rel + 1.0).abs() <= 0.3, "relative slope {s_rel}");
}

/// Diagonal covariances are suppressed relative to extradiagonal ones by
/// `sigma_w^2 / N`.
#[test]
fn diagonal_covariance_is_suppressed_by_one_over_n() {
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
    assert!((slope + 1.0).abs() <= 0.3, "slope {slope}");
}
