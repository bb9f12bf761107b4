//! Mean-derivative time projection.
//!
//! Projecting a trace onto the derivative of a reference mean trace turns a
//! small time shift of the pulse into a number: to first order the pulse
//! delayed by `dt` projects to `-C*dt`, with `C` the squared norm of the
//! derivative. [`ProjectionBasis::project_time`] folds in the sign and the
//! normalization so that the returned value is the delay itself (positive =
//! later than the reference).
//!
//! [`HybridBasis`] concatenates the detector basis with a negated
//! synchronization-channel basis so one dot product yields the
//! trigger-corrected projected time without any per-trace alignment.

use rayon::prelude::*;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trace::{derivative, mean_trace, Trace, TraceSet};

pub const BASIS_MAGIC: [u8; 4] = *b"PNRV";
pub const BASIS_VERSION: u16 = 1;

/// Normalized mean-derivative basis for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    deriv: Trace,
    norm_c: f64,
    reference_label: String,
}

impl ProjectionBasis {
    /// Derivative of the reference mean trace (volts/second).
    pub fn deriv(&self) -> &Trace {
        &self.deriv
    }

    /// Normalization constant `C = sum(deriv^2) * dt` (volt^2/second).
    pub fn norm_c(&self) -> f64 {
        self.norm_c
    }

    /// Which reference ensemble the basis came from.
    pub fn reference_label(&self) -> &str {
        &self.reference_label
    }

    /// Projected time of one trace, in seconds. Positive = the pulse
    /// arrives later than the reference.
    pub fn project_time(&self, trace: &Trace) -> Result<f64> {
        if trace.len() != self.deriv.len() {
            return Err(Error::LengthMismatch {
                expected: self.deriv.len(),
                found: trace.len(),
            });
        }
        let dt = self.deriv.dt();
        let inner: f64 = self
            .deriv
            .samples()
            .iter()
            .zip(trace.samples())
            .map(|(d, v)| d * v)
            .sum::<f64>()
            * dt;
        Ok(-inner / self.norm_c)
    }

    /// Elementwise [`Self::project_time`] over a set, ordered by input index.
    pub fn project_set(&self, set: &TraceSet) -> Result<Vec<f64>> {
        set.traces()
            .par_iter()
            .map(|t| self.project_time(t))
            .collect()
    }

    /// Persist as a small binary sidecar (little-endian, like trace bundles),
    /// so a streaming consumer can load one constant vector.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(&BASIS_MAGIC);
        out.extend_from_slice(&BASIS_VERSION.to_le_bytes());
        out.push(0u8); // kind: single-channel
        out.push(0u8);
        out.extend_from_slice(&self.deriv.dt().to_le_bytes());
        out.extend_from_slice(&self.deriv.t0().to_le_bytes());
        out.extend_from_slice(&self.norm_c.to_le_bytes());
        let label = self.reference_label.as_bytes();
        out.extend_from_slice(&(label.len() as u32).to_le_bytes());
        out.extend_from_slice(label);
        out.extend_from_slice(&(self.deriv.len() as u32).to_le_bytes());
        for &v in self.deriv.samples() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = SidecarReader { bytes: &bytes, pos: 0 };
        let (kind, dt, t0) = r.header()?;
        if kind != 0 {
            return Err(Error::MalformedHeader(format!(
                "expected single-channel basis (kind 0), found kind {kind}"
            )));
        }
        let norm_c = r.f64()?;
        let label_len = r.u32()? as usize;
        let reference_label = String::from_utf8(r.take(label_len)?.to_vec())
            .map_err(|e| Error::MalformedHeader(format!("bad label: {e}")))?;
        let n = r.u32()? as usize;
        let samples = r.f64_array(n)?;
        r.finish()?;
        let deriv = Trace::new(samples, dt, t0)?;
        let basis = ProjectionBasis {
            deriv,
            norm_c,
            reference_label,
        };
        basis.validate()?;
        Ok(basis)
    }

    fn validate(&self) -> Result<()> {
        if !(self.norm_c.is_finite() && self.norm_c > 0.0) {
            return Err(Error::DegenerateBasis(format!(
                "norm constant must be positive, got {}",
                self.norm_c
            )));
        }
        let recomputed: f64 = self
            .deriv
            .samples()
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            * self.deriv.dt();
        if (recomputed - self.norm_c).abs() > 1e-12 * self.norm_c {
            return Err(Error::DegenerateBasis(format!(
                "norm constant {} inconsistent with derivative ({})",
                self.norm_c, recomputed
            )));
        }
        Ok(())
    }
}

/// Build the projection basis from a reference ensemble (the paper projects
/// onto the lowest-mu set, where nearly every detection is a single photon).
pub fn build_basis(reference: &TraceSet) -> Result<ProjectionBasis> {
    let mean = mean_trace(reference)?;
    let deriv = derivative(&mean)?;
    let dt = deriv.dt();
    let norm_c: f64 = deriv.samples().iter().map(|d| d * d).sum::<f64>() * dt;
    if !(norm_c.is_finite() && norm_c > 0.0) {
        return Err(Error::DegenerateBasis(
            "reference mean has zero derivative".to_string(),
        ));
    }
    let reference_label = match reference.mu_label() {
        Some(mu) => format!("mu={mu}"),
        None => "single-photon".to_string(),
    };
    Ok(ProjectionBasis {
        deriv,
        norm_c,
        reference_label,
    })
}

/// Combined SNSPD + synchronization projection vector: jitter correction and
/// time projection in a single dot product.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridBasis {
    snspd_part: Vec<f64>,
    sync_part: Vec<f64>,
    dt: f64,
}

impl HybridBasis {
    /// Detector half: `deriv(mean snspd)/C_snspd`.
    pub fn snspd_part(&self) -> &[f64] {
        &self.snspd_part
    }

    /// Synchronization half: `-deriv(mean sync)/C_sync`.
    pub fn sync_part(&self) -> &[f64] {
        &self.sync_part
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Trigger-corrected projected time from one raw (unaligned) trace pair.
    /// Equals the detector delay minus the shared trigger delay under the
    /// first-order model, with the same sign convention as
    /// [`ProjectionBasis::project_time`].
    pub fn project(&self, snspd: &Trace, sync: &Trace) -> Result<f64> {
        if snspd.len() != self.snspd_part.len() {
            return Err(Error::LengthMismatch {
                expected: self.snspd_part.len(),
                found: snspd.len(),
            });
        }
        if sync.len() != self.sync_part.len() {
            return Err(Error::LengthMismatch {
                expected: self.sync_part.len(),
                found: sync.len(),
            });
        }
        let dot_snspd: f64 = self
            .snspd_part
            .iter()
            .zip(snspd.samples())
            .map(|(p, v)| p * v)
            .sum();
        let dot_sync: f64 = self
            .sync_part
            .iter()
            .zip(sync.samples())
            .map(|(p, v)| p * v)
            .sum();
        Ok(-(dot_snspd + dot_sync) * self.dt)
    }

    /// Project every pair of two index-aligned sets.
    pub fn project_sets(&self, snspd: &TraceSet, sync: &TraceSet) -> Result<Vec<f64>> {
        if snspd.len() != sync.len() {
            return Err(Error::InvalidTraceSet(format!(
                "snspd has {} traces, sync has {}",
                snspd.len(),
                sync.len()
            )));
        }
        snspd
            .traces()
            .par_iter()
            .zip(sync.traces().par_iter())
            .map(|(s, y)| self.project(s, y))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(&BASIS_MAGIC);
        out.extend_from_slice(&BASIS_VERSION.to_le_bytes());
        out.push(1u8); // kind: hybrid
        out.push(0u8);
        out.extend_from_slice(&self.dt.to_le_bytes());
        out.extend_from_slice(&0.0f64.to_le_bytes()); // t0 slot, unused
        out.extend_from_slice(&(self.snspd_part.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.sync_part.len() as u32).to_le_bytes());
        for &v in self.snspd_part.iter().chain(&self.sync_part) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = SidecarReader { bytes: &bytes, pos: 0 };
        let (kind, dt, _t0) = r.header()?;
        if kind != 1 {
            return Err(Error::MalformedHeader(format!(
                "expected hybrid basis (kind 1), found kind {kind}"
            )));
        }
        let n_snspd = r.u32()? as usize;
        let n_sync = r.u32()? as usize;
        let snspd_part = r.f64_array(n_snspd)?;
        let sync_part = r.f64_array(n_sync)?;
        r.finish()?;
        if snspd_part.iter().chain(&sync_part).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateBasis(
                "hybrid basis contains non-finite entries".to_string(),
            ));
        }
        Ok(HybridBasis {
            snspd_part,
            sync_part,
            dt,
        })
    }
}

/// Build the hybrid basis from reference ensembles of both channels.
pub fn build_hybrid_basis(snspd_ref: &TraceSet, sync_ref: &TraceSet) -> Result<HybridBasis> {
    let dt_snspd = snspd_ref.dt().ok_or(Error::EmptySet)?;
    let dt_sync = sync_ref.dt().ok_or(Error::EmptySet)?;
    if dt_snspd != dt_sync {
        return Err(Error::InvalidTraceSet(
            "snspd and sync references have different sample intervals".to_string(),
        ));
    }
    let part = |set: &TraceSet, negate: bool| -> Result<Vec<f64>> {
        let deriv = derivative(&mean_trace(set)?)?;
        let c: f64 = deriv.samples().iter().map(|d| d * d).sum::<f64>() * deriv.dt();
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::DegenerateBasis(
                "reference mean has zero derivative".to_string(),
            ));
        }
        let sign = if negate { -1.0 } else { 1.0 };
        Ok(deriv.samples().iter().map(|d| sign * d / c).collect())
    };
    Ok(HybridBasis {
        snspd_part: part(snspd_ref, false)?,
        sync_part: part(sync_ref, true)?,
        dt: dt_snspd,
    })
}

/// Median-subtracted copy of a projected-time series (the raw values keep
/// the reference-dependent offset; fits run on raw values).
pub fn median_centered(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    values.iter().map(|v| v - median).collect()
}

struct SidecarReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> SidecarReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedPayload {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_array(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    fn header(&mut self) -> Result<(u8, f64, f64)> {
        let magic: [u8; 4] = self.take(4)?.try_into().unwrap();
        if magic != BASIS_MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes(self.take(2)?.try_into().unwrap());
        if version != BASIS_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: BASIS_VERSION,
            });
        }
        let kind = self.take(1)?[0];
        let _reserved = self.take(1)?[0];
        let dt = self.f64()?;
        let t0 = self.f64()?;
        Ok((kind, dt, t0))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::MalformedHeader(format!(
                "{} trailing bytes in basis sidecar",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
