//! Digitizer-jitter correction and the band-limit/downsample path.
//!
//! The digitizer triggers on the synchronization pulse with up to one sample
//! of quantization offset. Each trace's offset is recovered by a
//! least-squares parabola over the top of the sync pulse and removed from
//! the detector trace with a spectral (Fourier-theorem) shift.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::trace::{Trace, TraceSet};

/// Aligned traces plus the per-trace shifts that were removed.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub aligned: TraceSet,
    /// Recovered trigger offsets, one per trace, in seconds.
    pub shifts: Vec<f64>,
}

/// Least-squares parabola over `window`, returning the vertex time.
///
/// The sample maximum must lie strictly inside the window, the fitted
/// curvature must be negative (a peak), and the vertex must fall inside the
/// window. Invariant under amplitude scaling and vertical offset.
pub fn parabola_peak(trace: &Trace, window: Range<usize>) -> Result<f64> {
    let n = trace.len();
    if window.start >= window.end || window.end > n || window.len() < 3 {
        return Err(Error::InvalidWindow {
            start: window.start,
            end: window.end,
            len: n,
        });
    }
    let samples = &trace.samples()[window.clone()];
    let (arg_max, _) = samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("window not empty");
    if arg_max == 0 || arg_max == samples.len() - 1 {
        return Err(Error::InvalidParameter(format!(
            "maximum sample at window edge (offset {arg_max}); widen or recenter the window"
        )));
    }

    // Fit y = a u^2 + b u + c with u in samples, centered for conditioning.
    let m = samples.len() as f64;
    let center = (m - 1.0) / 2.0;
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    let (mut y0, mut y1, mut y2) = (0.0, 0.0, 0.0);
    for (i, &y) in samples.iter().enumerate() {
        let u = i as f64 - center;
        let u2 = u * u;
        s1 += u;
        s2 += u2;
        s3 += u2 * u;
        s4 += u2 * u2;
        y0 += y;
        y1 += y * u;
        y2 += y * u2;
    }
    let a_mat = Matrix3::new(s4, s3, s2, s3, s2, s1, s2, s1, m);
    let rhs = Vector3::new(y2, y1, y0);
    let sol = a_mat
        .lu()
        .solve(&rhs)
        .ok_or(Error::DegenerateFit)?;
    let (a, b) = (sol[0], sol[1]);

    let y_mean = y0 / m;
    let y_scale = samples
        .iter()
        .map(|&y| (y - y_mean).abs())
        .fold(0.0f64, f64::max);
    if !(a < -1e-12 * y_scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateFit);
    }

    let vertex_u = -b / (2.0 * a);
    if vertex_u < -center || vertex_u > center {
        let vertex_s = trace.time_at(window.start) + (vertex_u + center) * trace.dt();
        return Err(Error::VertexOutsideWindow { vertex_s });
    }
    Ok(trace.time_at(window.start) + (vertex_u + center) * trace.dt())
}

/// Shared FFT plans for repeated shifts of equal-length traces.
struct ShiftPlans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    n: usize,
}

impl ShiftPlans {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        ShiftPlans {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            n,
        }
    }

    fn shift(&self, samples: &[f64], dt: f64, shift: f64) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex<f64>> =
            samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
        let mut scratch =
            vec![Complex::default(); self.forward.get_inplace_scratch_len()];
        self.forward.process_with_scratch(&mut buf, &mut scratch);

        // Multiply bin k by exp(-2*pi*i*f_k*shift); bins above n/2 carry
        // negative frequencies, and the Nyquist bin is kept real.
        let total = n as f64 * dt;
        for (k, value) in buf.iter_mut().enumerate() {
            if 2 * k == n {
                let phase = std::f64::consts::PI * shift / dt;
                *value *= phase.cos();
            } else {
                let f_index = if 2 * k < n {
                    k as f64
                } else {
                    k as f64 - n as f64
                };
                let angle = -2.0 * std::f64::consts::PI * f_index * shift / total;
                *value *= Complex::from_polar(1.0, angle);
            }
        }

        let mut scratch =
            vec![Complex::default(); self.inverse.get_inplace_scratch_len()];
        self.inverse.process_with_scratch(&mut buf, &mut scratch);
        buf.iter().map(|c| c.re / n as f64).collect()
    }
}

/// Check that a trace sits near its baseline over the first and last 20
/// samples; the spectral shift is circular and wraps content across the
/// ends otherwise.
fn check_baseline_margins(samples: &[f64]) {
    const MARGIN: usize = 20;
    if samples.len() < 2 * MARGIN {
        return;
    }
    let mut edges: Vec<f64> = samples[..MARGIN]
        .iter()
        .chain(&samples[samples.len() - MARGIN..])
        .copied()
        .collect();
    edges.sort_by(f64::total_cmp);
    let baseline = edges[edges.len() / 2];
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span == 0.0 {
        return;
    }
    let bad = samples[..MARGIN]
        .iter()
        .chain(&samples[samples.len() - MARGIN..])
        .any(|&s| (s - baseline).abs() > 0.05 * span);
    if bad {
        log::warn!(
            "fourier_shift: trace edges are not at baseline; circular shift may wrap pulse content"
        );
    }
}

/// Shift a trace by `shift` seconds (positive = later) using the Fourier
/// shifting theorem. Exact for band-limited content; the transform is
/// circular, so traces should be at baseline near both ends.
pub fn fourier_shift(trace: &Trace, shift: f64) -> Result<Trace> {
    if !shift.is_finite() || shift.abs() >= trace.duration() {
        return Err(Error::ShiftOutOfRange {
            shift_s: shift,
            duration_s: trace.duration(),
        });
    }
    if shift == 0.0 {
        return Ok(trace.clone());
    }
    check_baseline_margins(trace.samples());
    let plans = ShiftPlans::new(trace.len());
    trace.with_samples(plans.shift(trace.samples(), trace.dt(), shift))
}

/// Recover per-trace trigger offsets from the sync channel and remove them
/// from the target channel.
///
/// Each trace's sync peak is located by a parabola over `window_len` samples
/// centered on the maximum sample; the reference time is the median of all
/// peak times, and each target trace is spectrally shifted by the negated
/// offset.
pub fn align_dataset(
    sync: &TraceSet,
    target: &TraceSet,
    window_len: usize,
) -> Result<AlignmentResult> {
    if sync.len() != target.len() {
        return Err(Error::InvalidTraceSet(format!(
            "sync has {} traces, target has {}",
            sync.len(),
            target.len()
        )));
    }
    if sync.dt() != target.dt() {
        return Err(Error::InvalidTraceSet(
            "sync and target sample intervals differ".to_string(),
        ));
    }
    if sync.is_empty() {
        return Ok(AlignmentResult {
            aligned: target.clone(),
            shifts: Vec::new(),
        });
    }
    if window_len < 3 {
        return Err(Error::InvalidParameter(
            "alignment window must span at least 3 samples".to_string(),
        ));
    }

    let peaks: Vec<f64> = sync
        .traces()
        .par_iter()
        .enumerate()
        .map(|(index, trace)| {
            let arg_max = trace
                .samples()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            let half = window_len / 2;
            let start = arg_max.saturating_sub(half);
            let end = (start + window_len).min(trace.len());
            let start = end.saturating_sub(window_len);
            parabola_peak(trace, start..end).map_err(|e| Error::Alignment {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut sorted = peaks.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    let shifts: Vec<f64> = peaks.iter().map(|p| p - median).collect();

    let plans = ShiftPlans::new(target.trace_len());
    let aligned_traces: Vec<Trace> = target
        .traces()
        .par_iter()
        .zip(&shifts)
        .map(|(trace, &shift)| {
            if shift == 0.0 {
                return Ok(trace.clone());
            }
            if shift.abs() >= trace.duration() {
                return Err(Error::ShiftOutOfRange {
                    shift_s: shift,
                    duration_s: trace.duration(),
                });
            }
            trace.with_samples(plans.shift(trace.samples(), trace.dt(), -shift))
        })
        .collect::<Result<_>>()?;

    let aligned = TraceSet::new(aligned_traces, target.channel(), target.mu_label())?
        .with_meta(target.meta().clone());
    Ok(AlignmentResult { aligned, shifts })
}

/// First-order band-pass: one-pole high-pass at `f_lo` cascaded with a
/// one-pole low-pass at `f_hi`, discretized by the bilinear transform with
/// prewarping at each cutoff. Zero initial state, DC gain 0.
pub fn bandpass_first_order(trace: &Trace, f_lo: f64, f_hi: f64) -> Result<Trace> {
    let dt = trace.dt();
    let nyquist = 0.5 / dt;
    if !(f_lo > 0.0 && f_lo < f_hi && f_hi < nyquist) {
        return Err(Error::CutoffOutOfRange(format!(
            "need 0 < f_lo < f_hi < {nyquist}, got f_lo = {f_lo}, f_hi = {f_hi}"
        )));
    }

    let k_lo = (std::f64::consts::PI * f_lo * dt).tan();
    let k_hi = (std::f64::consts::PI * f_hi * dt).tan();
    // High-pass: (1 - z^-1) / ((1+K) + (K-1) z^-1)
    let hp_b0 = 1.0 / (1.0 + k_lo);
    let hp_b1 = -hp_b0;
    let hp_a1 = (k_lo - 1.0) / (1.0 + k_lo);
    // Low-pass: K(1 + z^-1) / ((1+K) + (K-1) z^-1)
    let lp_b0 = k_hi / (1.0 + k_hi);
    let lp_b1 = lp_b0;
    let lp_a1 = (k_hi - 1.0) / (1.0 + k_hi);

    let mut out = Vec::with_capacity(trace.len());
    let (mut hp_x1, mut hp_y1) = (0.0f64, 0.0f64);
    let (mut lp_x1, mut lp_y1) = (0.0f64, 0.0f64);
    for &x in trace.samples() {
        let hp = hp_b0 * x + hp_b1 * hp_x1 - hp_a1 * hp_y1;
        hp_x1 = x;
        hp_y1 = hp;
        let lp = lp_b0 * hp + lp_b1 * lp_x1 - lp_a1 * lp_y1;
        lp_x1 = hp;
        lp_y1 = lp;
        out.push(lp);
    }
    trace.with_samples(out)
}

/// Keep every `k`-th sample starting at index 0; the sample interval grows
/// by `k`. No anti-alias filtering (the band-pass runs first in the
/// pipeline).
pub fn decimate(trace: &Trace, k: usize) -> Result<Trace> {
    if k == 0 {
        return Err(Error::InvalidParameter("decimation factor must be >= 1".to_string()));
    }
    if trace.len() < k {
        return Err(Error::TraceTooShort {
            len: trace.len(),
            min: k,
        });
    }
    if k == 1 {
        return Ok(trace.clone());
    }
    let samples: Vec<f64> = trace.samples().iter().step_by(k).copied().collect();
    Trace::new(samples, trace.dt() * k as f64, trace.t0())
}

/// Band-pass every trace of a set.
pub fn bandpass_set(set: &TraceSet, f_lo: f64, f_hi: f64) -> Result<TraceSet> {
    set.map_traces(|t| bandpass_first_order(t, f_lo, f_hi))
}

/// Decimate every trace of a set.
pub fn decimate_set(set: &TraceSet, k: usize) -> Result<TraceSet> {
    set.map_traces(|t| decimate(t, k))
}
