//! Mixture fitting of projected-time histograms.
//!
//! The single-photon arrival peak is an EMG fitted once on the lowest-mu
//! data (plus a small Gaussian soaking up residual counts). Higher-mu
//! histograms are then decomposed in stages: the fixed-shape EMG amplitude
//! first, a Gaussian on the dominant remaining (two-photon) peak next, and
//! whatever is left, clipped nonnegative and normalized, is the 3-or-more
//! photon density.

pub mod emg;
mod lm;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use emg::{emg_fwhm, emg_params_for_fwhm, emg_pdf, emg_sample, erfcx, gauss_pdf, EmgParams};

use crate::error::{Error, Result};
use lm::levenberg_marquardt;

/// Weight, center, and width of one Gaussian mixture component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

impl GaussianComponent {
    pub fn pdf(&self, t: f64) -> f64 {
        if self.sigma > 0.0 {
            gauss_pdf(t, self.mean, self.sigma)
        } else {
            0.0
        }
    }
}

/// Binned counts on strictly increasing edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if edges.len() < 2 || counts.len() != edges.len() - 1 {
            return Err(Error::Histogram(format!(
                "{} edges with {} counts",
                edges.len(),
                counts.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Histogram("edges must be strictly increasing".to_string()));
        }
        Ok(Histogram { edges, counts })
    }

    /// Bin samples with the given bin count, or Freedman-Diaconis by default.
    pub fn from_samples(samples: &[f64], bins: Option<usize>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Histogram("no samples".to_string()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        if !(hi > lo) {
            return Err(Error::DegenerateInput(
                "all samples identical; histogram is degenerate".to_string(),
            ));
        }
        let n_bins = match bins {
            Some(b) if b >= 2 => b,
            Some(b) => {
                return Err(Error::Histogram(format!("need at least 2 bins, got {b}")))
            }
            None => {
                let q = |f: f64| sorted[((sorted.len() - 1) as f64 * f) as usize];
                let iqr = q(0.75) - q(0.25);
                if iqr <= 0.0 {
                    64
                } else {
                    let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
                    (((hi - lo) / width).ceil() as usize).clamp(8, 1024)
                }
            }
        };
        // Nudge the top edge so the maximum lands in the last bin.
        let span = hi - lo;
        let top = hi + 1e-9 * span;
        let width = (top - lo) / n_bins as f64;
        let edges: Vec<f64> = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0u64; n_bins];
        for &s in samples {
            let bin = (((s - lo) / width) as usize).min(n_bins - 1);
            counts[bin] += 1;
        }
        Histogram::new(edges, counts)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Linearly interpolated quantile over the binned counts.
    fn quantile(&self, q: f64) -> f64 {
        let total = self.total() as f64;
        let target = q * total;
        let mut acc = 0.0;
        for (i, &c) in self.counts.iter().enumerate() {
            let next = acc + c as f64;
            if next >= target && c > 0 {
                let frac = (target - acc) / c as f64;
                return self.edges[i] + frac * (self.edges[i + 1] - self.edges[i]);
            }
            acc = next;
        }
        self.edges[self.edges.len() - 1]
    }
}

/// Result of the lowest-mu fit: EMG single-photon peak plus a Gaussian for
/// the residual counts not in that peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinglePhotonFit {
    pub g1: EmgParams,
    pub bg: GaussianComponent,
    /// Covariance over [a1, m, s, tau, a2, bg_mean, bg_sigma], amplitudes in
    /// counts.
    pub covariance: Vec<Vec<f64>>,
    pub reduced_chi_square: f64,
    pub warnings: Vec<String>,
}

/// Order of the parameter vector that [`MixtureFit::covariance`] describes.
pub const MIXTURE_COV_ORDER: [&str; 7] =
    ["g1.m", "g1.s", "g1.tau", "p1", "p2", "g2.mean", "g2.sigma"];

/// Staged mixture decomposition of one projected-time histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub g1: EmgParams,
    /// Residual-background Gaussian of the single-photon fit (zero weight
    /// when the mixture was fitted without that context).
    pub bg: GaussianComponent,
    pub g2: GaussianComponent,
    /// (P1, P2, P3+), summing to 1.
    pub p: [f64; 3],
    /// Bin centers carrying the tabulated 3-plus density (empty if P3+ = 0).
    pub residual_grid: Vec<f64>,
    /// Normalized density values on `residual_grid`.
    pub residual_density: Vec<f64>,
    /// Covariance over [`MIXTURE_COV_ORDER`]; blocks not constrained by the
    /// stages are zero.
    pub covariance: Vec<Vec<f64>>,
    /// Reduced chi-square of the stage-2 Gaussian window fit.
    pub reduced_chi_square: f64,
    pub mu_label: Option<f64>,
    pub warnings: Vec<String>,
}

impl MixtureFit {
    /// Normalized shape density of a photon class (weights excluded).
    pub fn shape_density(&self, class: PhotonClass, t: f64) -> f64 {
        match class {
            PhotonClass::One => emg_pdf(t, &self.g1),
            PhotonClass::Two => self.g2.pdf(t),
            PhotonClass::ThreePlus => interp_linear(&self.residual_grid, &self.residual_density, t),
        }
    }

    pub fn class_weight(&self, class: PhotonClass) -> f64 {
        match class {
            PhotonClass::One => self.p[0],
            PhotonClass::Two => self.p[1],
            PhotonClass::ThreePlus => self.p[2],
        }
    }
}

/// Photon classes the mixture resolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhotonClass {
    One,
    Two,
    ThreePlus,
}

impl std::fmt::Display for PhotonClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PhotonClass::One => write!(f, "1"),
            PhotonClass::Two => write!(f, "2"),
            PhotonClass::ThreePlus => write!(f, "3+"),
        }
    }
}

fn interp_linear(grid: &[f64], values: &[f64], t: f64) -> f64 {
    if grid.len() < 2 || t < grid[0] || t > grid[grid.len() - 1] {
        return 0.0;
    }
    let idx = match grid.binary_search_by(|g| g.total_cmp(&t)) {
        Ok(i) => return values[i],
        Err(i) => i,
    };
    let (g0, g1) = (grid[idx - 1], grid[idx]);
    let frac = (t - g0) / (g1 - g0);
    values[idx - 1] * (1.0 - frac) + values[idx] * frac
}

/// Fit the lowest-mu histogram to `a1*EMG + a2*Gaussian` with Poisson
/// weights `1/max(count, 1)`.
pub fn fit_single_photon(hist: &Histogram) -> Result<SinglePhotonFit> {
    let total = hist.total();
    if total < 1000 {
        return Err(Error::NotEnoughSamples {
            found: total as usize,
            min: 1000,
        });
    }
    let centers = hist.centers();
    let widths = hist.widths();
    let counts: Vec<f64> = hist.counts().iter().map(|&c| c as f64).collect();

    // Moment-based initialization: median/IQR for location and width, the
    // third moment's sign and size for the exponential tail.
    let median = hist.quantile(0.5);
    let iqr = (hist.quantile(0.75) - hist.quantile(0.25)).max(widths[0]);
    let total_f = total as f64;
    let mean: f64 = centers
        .iter()
        .zip(&counts)
        .map(|(t, c)| t * c)
        .sum::<f64>()
        / total_f;
    let var: f64 = centers
        .iter()
        .zip(&counts)
        .map(|(t, c)| (t - mean) * (t - mean) * c)
        .sum::<f64>()
        / total_f;
    let sd = var.sqrt().max(widths[0]);
    let m3: f64 = centers
        .iter()
        .zip(&counts)
        .map(|(t, c)| (t - mean).powi(3) * c)
        .sum::<f64>()
        / total_f;
    let skew = m3 / sd.powi(3);
    let tau0 = (0.5 * skew.abs()).cbrt().clamp(0.05, 0.9) * sd * skew.signum();
    let s0 = (var - tau0 * tau0).max(0.09 * var).sqrt();
    let m0 = mean - tau0;

    let t_ref = median;
    let t_scale = (iqr / 1.349).max(widths[0]);

    // Scaled parameter vector: [a1, m', s', tau', a2, mb', sb'] with times
    // in units of t_scale relative to t_ref and amplitudes in counts.
    let initial = [
        0.98 * total_f,
        (m0 - t_ref) / t_scale,
        s0 / t_scale,
        tau0 / t_scale,
        0.02 * total_f,
        (median - t_ref) / t_scale,
        3.0 * sd / t_scale,
    ];
    let scales = [total_f, 1.0, 1.0, 1.0, total_f, 1.0, 1.0];

    let model = |p: &[f64], t: f64, w: f64| -> f64 {
        let g1 = EmgParams {
            m: t_ref + p[1] * t_scale,
            s: (p[2].abs().max(1e-6)) * t_scale,
            tau: p[3] * t_scale,
        };
        let bg_mean = t_ref + p[5] * t_scale;
        let bg_sigma = (p[6].abs().max(1e-6)) * t_scale;
        w * (p[0] * emg_pdf(t, &g1) + p[4] * gauss_pdf(t, bg_mean, bg_sigma))
    };
    let residuals = |p: &[f64]| {
        DVector::from_iterator(
            centers.len(),
            centers.iter().zip(&widths).zip(&counts).map(|((t, w), c)| {
                let weight = (1.0 / c.max(1.0)).sqrt();
                (model(p, *t, *w) - c) * weight
            }),
        )
    };

    let fit = levenberg_marquardt(residuals, &initial, &scales, 300)?;
    let p = &fit.params;

    let mut warnings = Vec::new();
    let a1 = p[0];
    let mut a2 = p[4];
    if a2 < 0.0 {
        warnings.push(format!("background amplitude {a2:.3} clamped to 0"));
        a2 = 0.0;
    }
    let g1 = EmgParams {
        m: t_ref + p[1] * t_scale,
        s: p[2].abs().max(1e-6) * t_scale,
        tau: p[3] * t_scale,
    };
    let bg = GaussianComponent {
        weight: a2 / (a1 + a2),
        mean: t_ref + p[5] * t_scale,
        sigma: p[6].abs() * t_scale,
    };

    // Scale covariance back to physical units.
    let unit = [1.0, t_scale, t_scale, t_scale, 1.0, t_scale, t_scale];
    let covariance: Vec<Vec<f64>> = (0..7)
        .map(|i| {
            (0..7)
                .map(|j| fit.covariance[(i, j)] * unit[i] * unit[j])
                .collect()
        })
        .collect();

    let dof = centers.len().saturating_sub(7).max(1);
    Ok(SinglePhotonFit {
        g1,
        bg,
        covariance,
        reduced_chi_square: fit.chi_square / dof as f64,
        warnings,
    })
}

/// Staged mixture fit with a previously fitted single-photon shape. The
/// returned covariance has a zero g1 block; use
/// [`fit_mixture_with_reference`] to carry the single-photon fit
/// uncertainty through.
pub fn fit_mixture(samples: &[f64], g1: &EmgParams, bins: Option<usize>) -> Result<MixtureFit> {
    g1.validate()?;
    if samples.len() < 5000 {
        return Err(Error::NotEnoughSamples {
            found: samples.len(),
            min: 5000,
        });
    }
    let hist = Histogram::from_samples(samples, bins)?;
    let centers = hist.centers();
    let widths = hist.widths();
    let counts: Vec<f64> = hist.counts().iter().map(|&c| c as f64).collect();
    let total = hist.total() as f64;
    let mut warnings = Vec::new();

    // Stage 1: amplitude of the fixed-shape 1-photon peak by weighted
    // linear least squares (chi^2 is quadratic in the single amplitude).
    let phi: Vec<f64> = centers
        .iter()
        .zip(&widths)
        .map(|(t, w)| w * emg_pdf(*t, g1))
        .collect();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for ((&f, &c), _) in phi.iter().zip(&counts).zip(&centers) {
        let w = 1.0 / c.max(1.0);
        num += w * c * f;
        den += w * f * f;
    }
    if den <= 0.0 {
        return Err(Error::DegenerateInput(
            "1-photon shape has no support on the histogram".to_string(),
        ));
    }
    let mut a1 = num / den;
    let var_a1 = 1.0 / den;
    if a1 < 0.0 {
        warnings.push(format!("1-photon amplitude {a1:.3} clamped to 0"));
        a1 = 0.0;
    }

    // Stage 2: subtract and find the dominant remaining peak adjacent to
    // the 1-photon peak.
    let residual1: Vec<f64> = counts
        .iter()
        .zip(&phi)
        .map(|(c, f)| c - a1 * f)
        .collect();
    let loc1 = g1.mean();
    let exclusion = 0.75 * emg_fwhm(g1);
    let smoothed: Vec<f64> = (0..residual1.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(residual1.len() - 1);
            residual1[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let global_max = smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut candidates: Vec<usize> = (1..smoothed.len() - 1)
        .filter(|&i| {
            smoothed[i] >= smoothed[i - 1]
                && smoothed[i] >= smoothed[i + 1]
                && smoothed[i] > 0.15 * global_max
                && smoothed[i] > 0.0
                && (centers[i] - loc1).abs() > exclusion
        })
        .collect();
    candidates.sort_by(|&a, &b| {
        (centers[a] - loc1)
            .abs()
            .total_cmp(&(centers[b] - loc1).abs())
    });

    let (g2, p2, stage2_cov, stage2_chi) = match candidates.first() {
        None => {
            warnings.push("no 2-photon peak found in the residual; P2 = 0".to_string());
            (
                GaussianComponent {
                    weight: 0.0,
                    mean: loc1,
                    sigma: 0.0,
                },
                0.0,
                None,
                0.0,
            )
        }
        Some(&peak_idx) => {
            let t_peak = centers[peak_idx];
            // Window: halfway toward the 1-photon peak on one side; the
            // 3-photon peak sits at the same spacing on the other.
            let half_window = 0.5 * (t_peak - loc1).abs();
            let in_window: Vec<usize> = (0..centers.len())
                .filter(|&i| (centers[i] - t_peak).abs() <= half_window)
                .collect();
            if in_window.len() < 4 {
                return Err(Error::Histogram(
                    "too few bins under the 2-photon peak; increase bin count".to_string(),
                ));
            }
            let t_scale = half_window.max(widths[0]);
            let amp0 = smoothed[peak_idx].max(1.0) / widths[peak_idx]
                * t_scale
                * (2.0 * std::f64::consts::PI).sqrt()
                * 0.5;
            let initial = [amp0, 0.0, 0.5];
            let scales = [total, 1.0, 1.0];
            let residuals = |p: &[f64]| {
                DVector::from_iterator(
                    in_window.len(),
                    in_window.iter().map(|&i| {
                        let weight = (1.0 / counts[i].max(1.0)).sqrt();
                        let model = p[0]
                            * widths[i]
                            * gauss_pdf(
                                centers[i],
                                t_peak + p[1] * t_scale,
                                p[2].abs().max(1e-6) * t_scale,
                            );
                        (model - residual1[i]) * weight
                    }),
                )
            };
            let fit = levenberg_marquardt(residuals, &initial, &scales, 300)?;
            let mut a2 = fit.params[0];
            if a2 < 0.0 {
                warnings.push(format!("2-photon amplitude {a2:.3} clamped to 0"));
                a2 = 0.0;
            }
            let mean2 = t_peak + fit.params[1] * t_scale;
            let sigma2 = fit.params[2].abs() * t_scale;
            let dof = in_window.len().saturating_sub(3).max(1);
            // Covariance over (a2, mean2, sigma2) in physical units.
            let unit = [1.0, t_scale, t_scale];
            let mut cov = [[0.0f64; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] = fit.covariance[(i, j)] * unit[i] * unit[j];
                }
            }
            (
                GaussianComponent {
                    weight: a2 / total,
                    mean: mean2,
                    sigma: sigma2,
                },
                a2 / total,
                Some(cov),
                fit.chi_square / dof as f64,
            )
        }
    };

    // Stage 3: nonnegative-clipped residual, normalized, is the 3-plus
    // density; its weight is whatever probability is left.
    let mut p1 = a1 / total;
    let mut p2 = p2;
    let residual2: Vec<f64> = (0..counts.len())
        .map(|i| {
            let model2 = total * p2 * widths[i] * g2.pdf(centers[i]);
            (residual1[i] - model2).max(0.0)
        })
        .collect();

    if p1 + p2 > 1.0 {
        warnings.push(format!(
            "P1 + P2 = {:.4} exceeds 1; renormalized and P3+ clamped to 0",
            p1 + p2
        ));
        let scale = 1.0 / (p1 + p2);
        p1 *= scale;
        p2 *= scale;
    }
    let p3 = (1.0 - p1 - p2).max(0.0);

    let residual_mass: f64 = residual2
        .iter()
        .zip(&widths)
        .map(|(r, w)| r * w)
        .sum::<f64>();
    let (residual_grid, residual_density) = if p3 > 1e-9 && residual_mass > 0.0 {
        let density: Vec<f64> = residual2.iter().map(|r| r / residual_mass).collect();
        (centers.clone(), density)
    } else {
        (Vec::new(), Vec::new())
    };

    // Covariance over [g1.m, g1.s, g1.tau, p1, p2, g2.mean, g2.sigma]; the
    // g1 block stays zero here.
    let mut covariance = vec![vec![0.0f64; 7]; 7];
    covariance[3][3] = var_a1 / (total * total);
    if let Some(cov2) = stage2_cov {
        let map = [4usize, 5, 6]; // (a2 -> p2, mean, sigma)
        for i in 0..3 {
            for j in 0..3 {
                let mut v = cov2[i][j];
                if i == 0 {
                    v /= total;
                }
                if j == 0 {
                    v /= total;
                }
                covariance[map[i]][map[j]] = v;
            }
        }
    }

    Ok(MixtureFit {
        g1: *g1,
        bg: GaussianComponent {
            weight: 0.0,
            mean: 0.0,
            sigma: 0.0,
        },
        g2: GaussianComponent {
            weight: p2,
            ..g2
        },
        p: [p1, p2, p3],
        residual_grid,
        residual_density,
        covariance,
        reduced_chi_square: stage2_chi,
        mu_label: None,
        warnings,
    })
}

/// [`fit_mixture`] plus the single-photon fit context: the background
/// component is carried over and the g1 parameter covariance block is
/// filled from the reference fit, so confidence errors include the
/// single-photon shape uncertainty.
pub fn fit_mixture_with_reference(
    samples: &[f64],
    reference: &SinglePhotonFit,
    bins: Option<usize>,
) -> Result<MixtureFit> {
    let mut fit = fit_mixture(samples, &reference.g1, bins)?;
    fit.bg = reference.bg;
    // Single-photon covariance order: [a1, m, s, tau, a2, bg_mean, bg_sigma].
    for i in 0..3 {
        for j in 0..3 {
            fit.covariance[i][j] = reference.covariance[i + 1][j + 1];
        }
    }
    Ok(fit)
}

/// Zero-truncated Poisson pmf: `mu^n / (n! (e^mu - 1))`.
pub fn ztp_pmf(n: u32, mu: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidParameter("ztp_pmf needs n >= 1".to_string()));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "ztp_pmf needs mu > 0, got {mu}"
        )));
    }
    let mut ln_fact = 0.0;
    for k in 2..=n {
        ln_fact += (k as f64).ln();
    }
    Ok((n as f64 * mu.ln() - ln_fact).exp() / mu.exp_m1())
}

/// Maximum a posteriori photon class of one projected time; ties break
/// toward the lower class. Outside the tabulated 3-plus support only the
/// two parametric components compete.
pub fn classify(dt: f64, fit: &MixtureFit) -> PhotonClass {
    let score1 = fit.p[0] * fit.shape_density(PhotonClass::One, dt);
    let score2 = fit.p[1] * fit.shape_density(PhotonClass::Two, dt);
    let score3 = fit.p[2] * fit.shape_density(PhotonClass::ThreePlus, dt);
    let mut best = PhotonClass::One;
    let mut best_score = score1;
    if score2 > best_score {
        best = PhotonClass::Two;
        best_score = score2;
    }
    if score3 > best_score {
        best = PhotonClass::ThreePlus;
    }
    best
}
