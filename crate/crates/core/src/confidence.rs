//! Photon-number resolvability as distribution overlap.
//!
//! The confidence of telling `n` from `n+1` photons is one minus the
//! Bhattacharyya coefficient of the two normalized arrival-time densities.
//! Weights are excluded, so the metric does not depend on the mean photon
//! number; uncertainties come from a parametric bootstrap over the fit
//! covariance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{MixtureFit, PhotonClass};

/// Default integration grid size.
pub const DEFAULT_GRID_POINTS: usize = 4096;
/// Default bootstrap draw count.
pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Uniform integration grid description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn times(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.lo + i as f64 * step).collect()
    }
}

/// One resolvability entry: confidence of separating `from_class` from
/// `to_class`, with its bootstrap standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePair {
    pub from_class: String,
    pub to_class: String,
    pub confidence: f64,
    pub std_error: f64,
}

/// Pairwise confidences of one detector system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub label: String,
    pub pairs: Vec<ConfidencePair>,
    pub grid: GridSpec,
    pub n_bootstrap: usize,
}

/// Trapezoidal Bhattacharyya coefficient of two densities tabulated on the
/// same grid, clamped to [0, 1]. Both inputs must be nonnegative and
/// normalized on the grid to 1e-3.
pub fn bhattacharyya(grid: &[f64], pdf_a: &[f64], pdf_b: &[f64]) -> Result<f64> {
    if grid.len() < 2 || pdf_a.len() != grid.len() || pdf_b.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "grid {} points, densities {} and {}",
            grid.len(),
            pdf_a.len(),
            pdf_b.len()
        )));
    }
    for (name, pdf) in [("a", pdf_a), ("b", pdf_b)] {
        if pdf.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "density {name} has negative or non-finite values"
            )));
        }
        let integral = trapezoid(grid, pdf);
        if (integral - 1.0).abs() > 1e-3 {
            return Err(Error::Unnormalized { integral });
        }
    }
    let sqrt_prod: Vec<f64> = pdf_a
        .iter()
        .zip(pdf_b)
        .map(|(a, b)| (a * b).sqrt())
        .collect();
    Ok(trapezoid(grid, &sqrt_prod).clamp(0.0, 1.0))
}

fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| 0.5 * (v[0] + v[1]) * (g[1] - g[0]))
        .sum()
}

fn class_span(fit: &MixtureFit, class: PhotonClass) -> Result<(f64, f64)> {
    match class {
        PhotonClass::One => {
            let g = &fit.g1;
            let half = 8.0 * g.s + 8.0 * g.tau.abs();
            Ok((g.m - half, g.m + half))
        }
        PhotonClass::Two => {
            if fit.p[1] <= 0.0 || fit.g2.sigma <= 0.0 {
                return Err(Error::MissingClass(class.to_string()));
            }
            Ok((fit.g2.mean - 8.0 * fit.g2.sigma, fit.g2.mean + 8.0 * fit.g2.sigma))
        }
        PhotonClass::ThreePlus => {
            if fit.p[2] <= 0.0 || fit.residual_grid.len() < 2 {
                return Err(Error::MissingClass(class.to_string()));
            }
            Ok((
                fit.residual_grid[0],
                fit.residual_grid[fit.residual_grid.len() - 1],
            ))
        }
    }
}

/// Integration grid spanning both classes' support.
pub fn design_grid(fit: &MixtureFit, from: PhotonClass, to: PhotonClass, points: usize) -> Result<GridSpec> {
    if fit.class_weight(from) <= 0.0 {
        return Err(Error::MissingClass(from.to_string()));
    }
    if fit.class_weight(to) <= 0.0 {
        return Err(Error::MissingClass(to.to_string()));
    }
    let (lo_a, hi_a) = class_span(fit, from)?;
    let (lo_b, hi_b) = class_span(fit, to)?;
    Ok(GridSpec {
        lo: lo_a.min(lo_b),
        hi: hi_a.max(hi_b),
        points: points.max(16),
    })
}

fn shape_on_grid(fit: &MixtureFit, class: PhotonClass, times: &[f64]) -> Result<Vec<f64>> {
    let mut values: Vec<f64> = times
        .iter()
        .map(|&t| fit.shape_density(class, t))
        .collect();
    let integral = trapezoid(times, &values);
    if !(integral > 0.0 && integral.is_finite()) {
        return Err(Error::MissingClass(class.to_string()));
    }
    // Renormalize on the grid: kills truncation and interpolation drift so
    // the Bhattacharyya preconditions hold by construction.
    for v in values.iter_mut() {
        *v /= integral;
    }
    Ok(values)
}

fn confidence_pair_on_grid(
    fit: &MixtureFit,
    from: PhotonClass,
    to: PhotonClass,
    grid: &GridSpec,
) -> Result<f64> {
    let times = grid.times();
    let a = shape_on_grid(fit, from, &times)?;
    let b = shape_on_grid(fit, to, &times)?;
    Ok(1.0 - bhattacharyya(&times, &a, &b)?)
}

/// Confidence of resolving `from` against `to`: `1 - BC(G_from, G_to)` over
/// the normalized shape densities (mixture weights excluded).
pub fn confidence_pair(fit: &MixtureFit, from: PhotonClass, to: PhotonClass) -> Result<f64> {
    let grid = design_grid(fit, from, to, DEFAULT_GRID_POINTS)?;
    confidence_pair_on_grid(fit, from, to, &grid)
}

/// Matrix square root factor of the covariance, eigenvalues clipped at zero
/// (with a warning when repair was needed).
fn sampling_factor(covariance: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = covariance.len();
    if covariance.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidParameter(
            "covariance matrix is not square".to_string(),
        ));
    }
    let mat = DMatrix::from_fn(n, n, |i, j| 0.5 * (covariance[i][j] + covariance[j][i]));
    let eig = mat.symmetric_eigen();
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if min_ev < -1e-9 * max_ev.max(f64::MIN_POSITIVE) {
        log::warn!(
            "fit covariance is not positive semidefinite (min eigenvalue {min_ev:.3e}); clipping at 0"
        );
    }
    let mut factor = eig.eigenvectors.clone();
    for j in 0..n {
        let scale = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            factor[(i, j)] *= scale;
        }
    }
    Ok(factor)
}

/// Parametric bootstrap standard error of a confidence pair: draw parameter
/// vectors from the multivariate normal defined by the fit covariance
/// (order [`crate::fitting::MIXTURE_COV_ORDER`]), recompute the confidence,
/// return the sample standard deviation. Deterministic for a fixed seed;
/// draws use per-index random streams.
pub fn confidence_error(
    fit: &MixtureFit,
    from: PhotonClass,
    to: PhotonClass,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    if n_draws < 2 {
        return Err(Error::InvalidParameter(
            "need at least 2 bootstrap draws".to_string(),
        ));
    }
    // Fixed grid across draws: confidence variation then reflects only the
    // parameter perturbations.
    let grid = design_grid(fit, from, to, DEFAULT_GRID_POINTS)?;
    let factor = sampling_factor(&fit.covariance)?;
    let dim = fit.covariance.len();

    let values: Vec<f64> = (0..n_draws)
        .into_par_iter()
        .map(|draw| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(draw as u64);
            let z = DVector::from_iterator(
                dim,
                (0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
            );
            let delta = &factor * z;
            let mut perturbed = fit.clone();
            perturbed.g1.m += delta[0];
            perturbed.g1.s = (perturbed.g1.s + delta[1]).max(1e-3 * fit.g1.s);
            perturbed.g1.tau += delta[2];
            perturbed.p[0] = (perturbed.p[0] + delta[3]).clamp(0.0, 1.0);
            perturbed.p[1] = (perturbed.p[1] + delta[4]).clamp(0.0, 1.0);
            perturbed.g2.mean += delta[5];
            perturbed.g2.sigma = (perturbed.g2.sigma + delta[6]).max(1e-3 * fit.g2.sigma.max(1e-30));
            confidence_pair_on_grid(&perturbed, from, to, &grid)
        })
        .collect::<Result<_>>()?;

    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (values.len() - 1) as f64;
    Ok(var.sqrt())
}

/// Build the full report for one fitted system: every consecutive pair
/// whose classes are both present.
pub fn confidence_report(
    fit: &MixtureFit,
    label: &str,
    n_bootstrap: usize,
    seed: u64,
) -> Result<ConfidenceReport> {
    let candidates = [
        (PhotonClass::One, PhotonClass::Two),
        (PhotonClass::Two, PhotonClass::ThreePlus),
    ];
    let mut pairs = Vec::new();
    let mut grid = None;
    for (from, to) in candidates {
        match design_grid(fit, from, to, DEFAULT_GRID_POINTS) {
            Ok(g) => {
                let confidence = confidence_pair_on_grid(fit, from, to, &g)?;
                let std_error = confidence_error(fit, from, to, n_bootstrap, seed)?;
                pairs.push(ConfidencePair {
                    from_class: from.to_string(),
                    to_class: to.to_string(),
                    confidence,
                    std_error,
                });
                grid.get_or_insert(g);
            }
            Err(Error::MissingClass(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if pairs.is_empty() {
        return Err(Error::MissingClass(
            "no consecutive class pair present in the fit".to_string(),
        ));
    }
    Ok(ConfidenceReport {
        label: label.to_string(),
        pairs,
        grid: grid.expect("at least one pair"),
        n_bootstrap,
    })
}

/// Aligned comparison of several systems' confidences, one row per class
/// pair; systems missing a pair render as absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub pair_labels: Vec<String>,
    pub systems: Vec<String>,
    /// `cells[row][column]`: (confidence, std_error) or absent.
    pub cells: Vec<Vec<Option<(f64, f64)>>>,
}

impl ComparisonTable {
    /// Render as CSV: `pair,<system>,...` with `-` for absent entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair");
        for s in &self.systems {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for (row, label) in self.pair_labels.iter().enumerate() {
            out.push_str(label);
            for col in 0..self.systems.len() {
                out.push(',');
                match self.cells[row][col] {
                    Some((c, e)) => out.push_str(&format!("{c:.3}±{e:.3}")),
                    None => out.push('-'),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Align several reports into one table, rows ordered by the numeric part
/// of the from-class.
pub fn compare_systems(reports: &[ConfidenceReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one confidence report".to_string(),
        ));
    }
    let mut pair_labels: Vec<(u32, String)> = Vec::new();
    for report in reports {
        for pair in &report.pairs {
            let label = format!("C_{}->{}", pair.from_class, pair.to_class);
            if !pair_labels.iter().any(|(_, l)| l == &label) {
                let order: u32 = pair
                    .from_class
                    .trim_end_matches('+')
                    .parse()
                    .unwrap_or(u32::MAX);
                pair_labels.push((order, label));
            }
        }
    }
    pair_labels.sort_by_key(|(order, _)| *order);

    let systems: Vec<String> = reports.iter().map(|r| r.label.clone()).collect();
    let cells = pair_labels
        .iter()
        .map(|(_, label)| {
            reports
                .iter()
                .map(|report| {
                    report.pairs.iter().find_map(|p| {
                        let l = format!("C_{}->{}", p.from_class, p.to_class);
                        (l == *label).then_some((p.confidence, p.std_error))
                    })
                })
                .collect()
        })
        .collect();
    Ok(ComparisonTable {
        pair_labels: pair_labels.into_iter().map(|(_, l)| l).collect(),
        systems,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{emg_pdf, gauss_pdf, EmgParams, GaussianComponent};

    fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        GridSpec { lo, hi, points: n }.times()
    }

    fn toy_fit(sep: f64, sigma: f64) -> MixtureFit {
        let g1 = EmgParams {
            m: 0.0,
            s: sigma,
            tau: 0.7 * sigma,
        };
        MixtureFit {
            g1,
            bg: GaussianComponent {
                weight: 0.0,
                mean: 0.0,
                sigma: 0.0,
            },
            g2: GaussianComponent {
                weight: 0.3,
                mean: sep,
                sigma: 1.2 * sigma,
            },
            p: [0.4, 0.3, 0.3],
            residual_grid: (0..64)
                .map(|i| 2.0 * sep + (i as f64 - 32.0) * 0.2 * sigma)
                .collect(),
            residual_density: {
                // Triangle density, normalized below.
                let raw: Vec<f64> = (0..64)
                    .map(|i| 32.0 - (i as f64 - 32.0).abs().min(32.0))
                    .collect();
                let dx = 0.2 * sigma;
                let total: f64 = raw.iter().sum::<f64>() * dx;
                raw.iter().map(|v| v / total).collect()
            },
            covariance: vec![vec![0.0; 7]; 7],
            reduced_chi_square: 1.0,
            mu_label: Some(1.77),
            warnings: vec![],
        }
    }

    #[test]
    fn identical_densities_have_coefficient_one() {
        let grid = uniform_grid(-5.0, 5.0, 2001);
        let pdf: Vec<f64> = grid.iter().map(|&t| gauss_pdf(t, 0.0, 1.0)).collect();
        let bc = bhattacharyya(&grid, &pdf, &pdf).unwrap();
        assert!((bc - 1.0).abs() < 1e-6, "bc = {bc}");
    }

    #[test]
    fn disjoint_supports_have_coefficient_zero() {
        let grid = uniform_grid(0.0, 10.0, 1001);
        let a: Vec<f64> = grid
            .iter()
            .map(|&t| if t < 4.0 { 0.25 } else { 0.0 })
            .collect();
        let b: Vec<f64> = grid
            .iter()
            .map(|&t| if t >= 6.0 { 0.25 } else { 0.0 })
            .collect();
        let bc = bhattacharyya(&grid, &a, &b).unwrap();
        assert_eq!(bc, 0.0);
    }

    #[test]
    fn equal_sigma_gaussians_match_closed_form() {
        // BC = exp(-d^2 / (8 sigma^2)); d = 2 sigma gives e^(-1/2).
        let sigma = 1.3;
        let d = 2.0 * sigma;
        let grid = uniform_grid(-8.0 * sigma, d + 8.0 * sigma, 4096);
        let a: Vec<f64> = grid.iter().map(|&t| gauss_pdf(t, 0.0, sigma)).collect();
        let b: Vec<f64> = grid.iter().map(|&t| gauss_pdf(t, d, sigma)).collect();
        let bc = bhattacharyya(&grid, &a, &b).unwrap();
        let expect = (-0.5f64).exp();
        assert!((bc - expect).abs() < 1e-4, "bc = {bc}, expect {expect}");
    }

    #[test]
    fn unnormalized_or_mismatched_inputs_are_rejected() {
        let grid = uniform_grid(-5.0, 5.0, 101);
        let good: Vec<f64> = grid.iter().map(|&t| gauss_pdf(t, 0.0, 1.0)).collect();
        let bad: Vec<f64> = good.iter().map(|v| 2.0 * v).collect();
        assert!(matches!(
            bhattacharyya(&grid, &good, &bad),
            Err(Error::Unnormalized { .. })
        ));
        assert!(matches!(
            bhattacharyya(&grid, &good, &good[..50].to_vec()),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn confidence_of_identical_shapes_is_zero() {
        // Force g2 to coincide with a Gaussian-like g1 by making tau tiny.
        let sigma = 10e-12;
        let mut fit = toy_fit(-80e-12, sigma);
        fit.g1 = EmgParams {
            m: -80e-12,
            s: 1.2 * sigma,
            tau: 1e-17,
        };
        // g1 now equals g2 in shape and location.
        let c = confidence_pair(&fit, PhotonClass::One, PhotonClass::Two).unwrap();
        assert!(c.abs() < 1e-5, "confidence {c}");
    }

    #[test]
    fn confidence_is_symmetric_and_bounded() {
        let fit = toy_fit(-74e-12, 16e-12);
        let ab = confidence_pair(&fit, PhotonClass::One, PhotonClass::Two).unwrap();
        let ba = confidence_pair(&fit, PhotonClass::Two, PhotonClass::One).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&ab));
        let a3 = confidence_pair(&fit, PhotonClass::Two, PhotonClass::ThreePlus).unwrap();
        assert!((0.0..=1.0).contains(&a3));
    }

    #[test]
    fn confidence_matches_independent_fine_quadrature() {
        let fit = toy_fit(-74e-12, 16e-12);
        let got = confidence_pair(&fit, PhotonClass::One, PhotonClass::Two).unwrap();
        // Independent oracle: Simpson integration of sqrt(emg * gauss) on a
        // much finer grid, densities evaluated directly.
        let lo = fit.g2.mean - 12.0 * fit.g2.sigma - 12.0 * fit.g1.s;
        let hi = fit.g1.m + 12.0 * (fit.g1.s + fit.g1.tau.abs());
        let n = 1 << 16;
        let h = (hi - lo) / n as f64;
        let f = |t: f64| (emg_pdf(t, &fit.g1) * fit.g2.pdf(t)).sqrt();
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
        }
        let oracle = 1.0 - acc * h / 3.0;
        assert!((got - oracle).abs() < 1e-3, "got {got}, oracle {oracle}");
    }

    #[test]
    fn confidence_invariant_under_translation_and_rescaling() {
        let base = toy_fit(-74e-12, 16e-12);
        let c0 = confidence_pair(&base, PhotonClass::One, PhotonClass::Two).unwrap();

        // Common translation.
        let mut shifted = base.clone();
        let dt = 3e-10;
        shifted.g1.m += dt;
        shifted.g2.mean += dt;
        let c1 = confidence_pair(&shifted, PhotonClass::One, PhotonClass::Two).unwrap();
        assert!((c0 - c1).abs() < 1e-9, "{c0} vs {c1}");

        // Common rescaling of the time axis.
        let mut scaled = base.clone();
        let k = 3.7;
        scaled.g1.m *= k;
        scaled.g1.s *= k;
        scaled.g1.tau *= k;
        scaled.g2.mean *= k;
        scaled.g2.sigma *= k;
        let c2 = confidence_pair(&scaled, PhotonClass::One, PhotonClass::Two).unwrap();
        assert!((c0 - c2).abs() < 1e-9, "{c0} vs {c2}");
    }

    #[test]
    fn quadrature_converges_under_grid_halving() {
        let fit = toy_fit(-74e-12, 16e-12);
        let g1 = design_grid(&fit, PhotonClass::One, PhotonClass::Two, 4096).unwrap();
        let g2 = GridSpec {
            points: 8192,
            ..g1
        };
        let c1 = confidence_pair_on_grid(&fit, PhotonClass::One, PhotonClass::Two, &g1).unwrap();
        let c2 = confidence_pair_on_grid(&fit, PhotonClass::One, PhotonClass::Two, &g2).unwrap();
        assert!((c1 - c2).abs() < 1e-4, "{c1} vs {c2}");
    }

    #[test]
    fn missing_class_is_reported() {
        let mut fit = toy_fit(-74e-12, 16e-12);
        fit.p[1] = 0.0;
        assert!(matches!(
            confidence_pair(&fit, PhotonClass::One, PhotonClass::Two),
            Err(Error::MissingClass(_))
        ));
    }

    #[test]
    fn zero_covariance_gives_zero_error() {
        let fit = toy_fit(-74e-12, 16e-12);
        let se =
            confidence_error(&fit, PhotonClass::One, PhotonClass::Two, 100, 42).unwrap();
        assert_eq!(se, 0.0);
    }

    #[test]
    fn bootstrap_error_scales_with_covariance() {
        let mut fit = toy_fit(-74e-12, 16e-12);
        let sig = 0.4e-12;
        fit.covariance[5][5] = sig * sig; // g2.mean variance
        fit.covariance[6][6] = sig * sig; // g2.sigma variance
        let se1 =
            confidence_error(&fit, PhotonClass::One, PhotonClass::Two, 2000, 7).unwrap();
        let mut fit4 = fit.clone();
        fit4.covariance[5][5] *= 4.0;
        fit4.covariance[6][6] *= 4.0;
        let se2 =
            confidence_error(&fit4, PhotonClass::One, PhotonClass::Two, 2000, 7).unwrap();
        assert!(se1 > 0.0);
        let ratio = se2 / se1;
        assert!(
            (ratio - 2.0).abs() < 0.4,
            "ratio {ratio} (se1 {se1}, se2 {se2})"
        );
    }

    #[test]
    fn bootstrap_is_deterministic_and_repairs_non_psd() {
        let mut fit = toy_fit(-74e-12, 16e-12);
        fit.covariance[5][5] = 1e-26;
        fit.covariance[6][6] = -1e-30; // slightly non-PSD; gets clipped
        let a = confidence_error(&fit, PhotonClass::One, PhotonClass::Two, 500, 3).unwrap();
        let b = confidence_error(&fit, PhotonClass::One, PhotonClass::Two, 500, 3).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0);
    }

    #[test]
    fn comparison_table_aligns_and_renders_missing_pairs() {
        let grid = GridSpec {
            lo: 0.0,
            hi: 1.0,
            points: 16,
        };
        let full = ConfidenceReport {
            label: "system-a".to_string(),
            pairs: vec![
                ConfidencePair {
                    from_class: "1".into(),
                    to_class: "2".into(),
                    confidence: 0.99,
                    std_error: 0.01,
                },
                ConfidencePair {
                    from_class: "2".into(),
                    to_class: "3".into(),
                    confidence: 0.99,
                    std_error: 0.01,
                },
                ConfidencePair {
                    from_class: "3".into(),
                    to_class: "4".into(),
                    confidence: 0.85,
                    std_error: 0.02,
                },
                ConfidencePair {
                    from_class: "4".into(),
                    to_class: "5+".into(),
                    confidence: 0.7,
                    std_error: 0.2,
                },
            ],
            grid,
            n_bootstrap: 1000,
        };
        let partial = ConfidenceReport {
            label: "system-b".to_string(),
            pairs: vec![
                ConfidencePair {
                    from_class: "1".into(),
                    to_class: "2".into(),
                    confidence: 0.85,
                    std_error: 0.01,
                },
                ConfidencePair {
                    from_class: "2".into(),
                    to_class: "3+".into(),
                    confidence: 0.704,
                    std_error: 0.009,
                },
            ],
            grid,
            n_bootstrap: 1000,
        };

        let single = compare_systems(std::slice::from_ref(&partial)).unwrap();
        assert_eq!(single.systems.len(), 1);
        assert_eq!(single.pair_labels.len(), 2);

        let table = compare_systems(&[full, partial]).unwrap();
        assert_eq!(table.pair_labels.len(), 5);
        assert_eq!(table.pair_labels[0], "C_1->2");
        let csv = table.to_csv();
        assert!(csv.contains("system-a"));
        assert!(csv.contains('-'));
        assert!(csv.starts_with("pair,"));
    }

    #[test]
    fn narrower_peaks_give_higher_confidence() {
        let narrow = toy_fit(-74e-12, 12e-12);
        let wide = toy_fit(-74e-12, 24e-12);
        let c_narrow = confidence_pair(&narrow, PhotonClass::One, PhotonClass::Two).unwrap();
        let c_wide = confidence_pair(&wide, PhotonClass::One, PhotonClass::Two).unwrap();
        assert!(
            c_narrow > c_wide + 0.05,
            "narrow {c_narrow} vs wide {c_wide}"
        );
    }
}
