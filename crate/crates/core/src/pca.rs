//! Principal component analysis over trace ensembles.
//!
//! Exact eigendecomposition of the sample covariance: the d x d covariance
//! route when there are at least as many traces as samples, the Gram-matrix
//! (snapshot) route otherwise. Components carry a deterministic sign so
//! repeated fits are bit-identical.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trace::{mean_trace, Trace, TraceSet};

/// Fitted PCA model: mean trace, orthonormal components ordered by
/// explained variance, and the variance ledger.
#[derive(Debug, Clone)]
pub struct PcaModel {
    mean: Trace,
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
    total_variance: f64,
    n_fitted: usize,
}

impl PcaModel {
    pub fn mean(&self) -> &Trace {
        &self.mean
    }

    /// Unit-norm component vectors, strongest first.
    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Sample variance captured by each component, non-increasing.
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Trace of the sample covariance of the fitted data.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn n_fitted(&self) -> usize {
        self.n_fitted
    }

    /// Scores of one trace against the first `k` components:
    /// `score_i = <trace - mean, component_i>`.
    pub fn scores(&self, trace: &Trace, k: usize) -> Result<Vec<f64>> {
        if trace.len() != self.mean.len() {
            return Err(Error::LengthMismatch {
                expected: self.mean.len(),
                found: trace.len(),
            });
        }
        if k > self.components.len() {
            return Err(Error::RankBoundExceeded {
                requested: k,
                bound: self.components.len(),
            });
        }
        let centered: Vec<f64> = trace
            .samples()
            .iter()
            .zip(self.mean.samples())
            .map(|(x, m)| x - m)
            .collect();
        Ok(self.components[..k]
            .iter()
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Scores for every trace of a set, row per trace.
    pub fn scores_set(&self, set: &TraceSet, k: usize) -> Result<Vec<Vec<f64>>> {
        set.traces()
            .par_iter()
            .map(|t| self.scores(t, k))
            .collect()
    }

    /// Explained-variance ratios and their running sum.
    pub fn scree(&self) -> (Vec<f64>, Vec<f64>) {
        let ratios: Vec<f64> = self
            .explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect();
        let mut cumulative = Vec::with_capacity(ratios.len());
        let mut acc = 0.0;
        for r in &ratios {
            acc += r;
            cumulative.push(acc);
        }
        (ratios, cumulative)
    }
}

/// Fit the top `k` principal components of the mean-centered ensemble.
pub fn fit_pca(set: &TraceSet, k: usize) -> Result<PcaModel> {
    let n = set.len();
    if n < 2 {
        return Err(Error::NotEnoughSamples { found: n, min: 2 });
    }
    let d = set.trace_len();
    let bound = d.min(n);
    if k == 0 || k > bound {
        return Err(Error::RankBoundExceeded {
            requested: k,
            bound,
        });
    }

    let mean = mean_trace(set)?;
    let mean_samples = mean.samples();

    let total_variance: f64 = set
        .traces()
        .par_iter()
        .map(|t| {
            t.samples()
                .iter()
                .zip(mean_samples)
                .map(|(x, m)| (x - m) * (x - m))
                .sum::<f64>()
        })
        .sum::<f64>()
        / (n - 1) as f64;
    if total_variance <= 0.0 || !total_variance.is_finite() {
        return Err(Error::DegenerateInput(
            "all traces are identical; covariance is zero".to_string(),
        ));
    }

    let (eigvals, eigvecs) = if n >= d {
        covariance_eigen(set, mean_samples, n, d)
    } else {
        snapshot_eigen(set, mean_samples, n, d)
    };

    // Order by eigenvalue, largest first; clamp round-off negatives.
    let mut order: Vec<usize> = (0..eigvals.len()).collect();
    order.sort_by(|&a, &b| eigvals[b].total_cmp(&eigvals[a]));

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v = eigvecs[idx].clone();
        fix_sign(&mut v);
        components.push(v);
        explained_variance.push(eigvals[idx].max(0.0));
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
        n_fitted: n,
    })
}

/// d x d covariance route: chunked X^T X accumulation with a fixed
/// reduction order, so thread count does not change the result.
fn covariance_eigen(
    set: &TraceSet,
    mean: &[f64],
    n: usize,
    d: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    const CHUNK: usize = 1024;
    let partials: Vec<DMatrix<f64>> = set
        .traces()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let x = DMatrix::from_row_iterator(
                chunk.len(),
                d,
                chunk
                    .iter()
                    .flat_map(|t| t.samples().iter().zip(mean).map(|(s, m)| s - m)),
            );
            x.transpose() * x
        })
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in partials {
        cov += p;
    }
    cov /= (n - 1) as f64;

    let eig = cov.symmetric_eigen();
    let eigvals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let eigvecs: Vec<Vec<f64>> = (0..d)
        .map(|j| eig.eigenvectors.column(j).iter().copied().collect())
        .collect();
    (eigvals, eigvecs)
}

/// Gram (snapshot) route for n < d: eigenvectors of X X^T / (n-1) map back
/// to covariance eigenvectors through X^T.
fn snapshot_eigen(
    set: &TraceSet,
    mean: &[f64],
    n: usize,
    d: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let x = DMatrix::from_row_iterator(
        n,
        d,
        set.traces()
            .iter()
            .flat_map(|t| t.samples().iter().zip(mean).map(|(s, m)| s - m)),
    );
    let gram = &x * x.transpose() / (n - 1) as f64;
    let eig = gram.symmetric_eigen();

    let mut eigvals = Vec::with_capacity(n);
    let mut eigvecs = Vec::with_capacity(n);
    for j in 0..n {
        let lambda: f64 = eig.eigenvalues[j];
        let u = eig.eigenvectors.column(j);
        let v = x.transpose() * u;
        let norm = v.norm();
        let vec = if norm > 0.0 {
            (v / norm).iter().copied().collect()
        } else {
            vec![0.0; d]
        };
        eigvals.push(lambda);
        eigvecs.push(vec);
    }
    (eigvals, eigvecs)
}

/// Deterministic sign: the entry of largest magnitude is made positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}
