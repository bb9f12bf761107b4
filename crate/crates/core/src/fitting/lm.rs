//! Damped least squares for the histogram fits.
//!
//! Minimizes the squared norm of a user-supplied (pre-weighted) residual
//! vector with a numeric central-difference Jacobian. Callers pass a
//! per-parameter scale so steps and derivative increments stay conditioned
//! when parameters mix counts with seconds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub struct LmFit {
    pub params: Vec<f64>,
    /// (J^T J)^-1 at the solution, pseudo-inverted where near-singular.
    pub covariance: DMatrix<f64>,
    pub chi_square: f64,
}

fn cost_of(r: &DVector<f64>) -> f64 {
    let c = r.norm_squared();
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

fn jacobian<F>(f: &F, params: &[f64], scales: &[f64], n_res: usize) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    let p = params.len();
    let mut jac = DMatrix::zeros(n_res, p);
    let mut work = params.to_vec();
    for j in 0..p {
        let h = 1e-6 * scales[j];
        work[j] = params[j] + h;
        let plus = f(&work);
        work[j] = params[j] - h;
        let minus = f(&work);
        work[j] = params[j];
        for i in 0..n_res {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Pseudo-inverse of a symmetric PSD matrix, clipping eigenvalues below
/// `rel_tol` of the largest.
fn psd_pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let n = a.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let ev = eig.eigenvalues[k];
        if ev > rel_tol * max_ev {
            let v = eig.eigenvectors.column(k);
            inv += v * v.transpose() / ev;
        }
    }
    inv
}

/// Run Levenberg-Marquardt from `initial`. `residuals` must return the same
/// length every call; non-finite residuals reject the trial step.
pub fn levenberg_marquardt<F>(
    residuals: F,
    initial: &[f64],
    scales: &[f64],
    max_iter: usize,
) -> Result<LmFit>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    assert_eq!(initial.len(), scales.len());
    let p = initial.len();
    let mut params = initial.to_vec();
    let mut r = residuals(&params);
    let n_res = r.len();
    if n_res < p {
        return Err(Error::RankDeficientJacobian);
    }
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(Error::InvalidParameter(
            "initial fit parameters produce non-finite residuals".to_string(),
        ));
    }

    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..max_iter {

        let jac = jacobian(&residuals, &params, scales, n_res);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let max_diag = (0..p).map(|i| jtj[(i, i)]).fold(0.0f64, f64::max);
        if max_diag == 0.0 || !max_diag.is_finite() {
            return Err(Error::RankDeficientJacobian);
        }

        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for i in 0..p {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12 * max_diag);
            }
            let step = match damped.clone().cholesky() {
                Some(chol) => chol.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = params
                .iter()
                .zip(step.iter())
                .map(|(v, s)| v + s)
                .collect();
            let trial_r = residuals(&trial);
            let trial_cost = cost_of(&trial_r);
            if trial_cost < cost {
                let rel_step = step
                    .iter()
                    .zip(scales)
                    .map(|(s, sc)| (s / sc).abs())
                    .fold(0.0f64, f64::max);
                let rel_drop = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                params = trial;
                r = trial_r;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel_drop < 1e-12 || rel_step < 1e-10 {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !accepted {
            // No downhill step found at any damping: stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: max_iter,
        });
    }

    let jac = jacobian(&residuals, &params, scales, n_res);
    let jtj = jac.transpose() * &jac;
    let covariance = psd_pseudo_inverse(&jtj, 1e-12);
    Ok(LmFit {
        params,
        covariance,
        chi_square: cost,

    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_decay_parameters() {
        // y = a exp(-t/tau), noiseless.
        let (a_true, tau_true) = (5.0, 2.5);
        let ts: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = ts.iter().map(|t| a_true * (-t / tau_true).exp()).collect();
        let res = |p: &[f64]| {
            DVector::from_iterator(
                ts.len(),
                ts.iter()
                    .zip(&ys)
                    .map(|(t, y)| p[0] * (-t / p[1]).exp() - y),
            )
        };
        let fit = levenberg_marquardt(res, &[1.0, 1.0], &[1.0, 1.0], 200).unwrap();
        assert!((fit.params[0] - a_true).abs() < 1e-8);
        assert!((fit.params[1] - tau_true).abs() < 1e-8);
        assert!(fit.chi_square < 1e-16);
    }

    #[test]
    fn gaussian_fit_with_weights_recovers_moments() {
        use rand::{Rng, SeedableRng};
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (mu, sigma, n) = (3.0, 0.7, 200_000usize);
        let mut counts = vec![0.0f64; 80];
        let (lo, hi) = (0.0, 6.0);
        let width = (hi - lo) / counts.len() as f64;
        for _ in 0..n {
            let x: f64 = mu + sigma * rng.sample::<f64, _>(StandardNormal);
            let bin = ((x - lo) / width) as usize;
            if bin < counts.len() {
                counts[bin] += 1.0;
            }
        }
        let centers: Vec<f64> = (0..counts.len())
            .map(|i| lo + (i as f64 + 0.5) * width)
            .collect();
        let res = |p: &[f64]| {
            DVector::from_iterator(
                counts.len(),
                centers.iter().zip(&counts).map(|(t, c)| {
                    let w = 1.0 / c.max(1.0);
                    let model = p[0]
                        * width
                        * crate::fitting::emg::gauss_pdf(*t, p[1], p[2].abs());
                    (model - c) * w.sqrt()
                }),
            )
        };
        let fit = levenberg_marquardt(res, &[n as f64 * 0.8, 2.5, 1.0], &[n as f64, 1.0, 1.0], 300)
            .unwrap();
        assert!((fit.params[1] - mu).abs() < 0.01, "mu {}", fit.params[1]);
        assert!(
            (fit.params[2].abs() - sigma).abs() < 0.01,
            "sigma {}",
            fit.params[2]
        );
        // Covariance is sane: positive variances, sub-percent errors at n=2e5.
        assert!(fit.covariance[(1, 1)] > 0.0);
        assert!(fit.covariance[(1, 1)].sqrt() < 0.01);
    }

    #[test]
    fn degenerate_problem_reports_rank_deficiency() {
        // Residual independent of parameters: zero Jacobian.
        let res = |_p: &[f64]| DVector::from_element(10, 1.0);
        assert!(matches!(
            levenberg_marquardt(res, &[1.0, 1.0], &[1.0, 1.0], 50),
            Err(Error::RankDeficientJacobian)
        ));
    }
}
