//! Trace data model and elementary trace arithmetic.
//!
//! A [`Trace`] is one fixed-length sampled voltage waveform; a [`TraceSet`]
//! is an ensemble of traces sharing the sampling grid and acquisition
//! metadata. Both are immutable after construction, so all operations here
//! are pure functions that are safe to call from multiple threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which digitizer channel a trace set was recorded on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Snspd,
    Sync,
}

impl Channel {
    pub fn as_u8(self) -> u8 {
        match self {
            Channel::Snspd => 0,
            Channel::Sync => 1,
        }
    }

    pub fn from_u8(value: u8) -> Result<Self> {
        match value {
            0 => Ok(Channel::Snspd),
            1 => Ok(Channel::Sync),
            other => Err(Error::MalformedHeader(format!(
                "unknown channel byte {other}"
            ))),
        }
    }
}

/// One sampled voltage waveform on a uniform time grid.
///
/// `t0` is the time of the first sample relative to the trigger, so sample
/// `i` sits at `t0 + i*dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<f64>,
    dt: f64,
    t0: f64,
}

impl Trace {
    /// Build a trace, validating that it has more than one finite sample and
    /// a positive finite sample interval.
    pub fn new(samples: Vec<f64>, dt: f64, t0: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidTrace(format!(
                "need more than one sample, got {}",
                samples.len()
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidTrace(format!("dt must be positive, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidTrace(format!("t0 must be finite, got {t0}")));
        }
        if let Some(bad) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidTrace(format!(
                "non-finite sample at index {bad}"
            )));
        }
        Ok(Self { samples, dt, t0 })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Recording duration `len * dt`.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    /// Time of sample `i` relative to the trigger.
    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// The full time axis.
    pub fn times(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|i| self.time_at(i)).collect()
    }

    /// Same grid, new samples. Fails if the length changed or a sample is
    /// not finite.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != self.samples.len() {
            return Err(Error::LengthMismatch {
                expected: self.samples.len(),
                found: samples.len(),
            });
        }
        Trace::new(samples, self.dt, self.t0)
    }
}

/// Free-form key/value acquisition metadata, stored as JSON.
pub type Meta = serde_json::Map<String, serde_json::Value>;

/// An ensemble of traces sharing length, sampling grid, and channel role.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    traces: Vec<Trace>,
    channel: Channel,
    mu_label: Option<f64>,
    meta: Meta,
}

impl TraceSet {
    /// Build a set, validating that all traces share length, `dt`, and `t0`,
    /// and that the photon-number label (if any) is nonnegative.
    pub fn new(traces: Vec<Trace>, channel: Channel, mu_label: Option<f64>) -> Result<Self> {
        if let Some((first, rest)) = traces.split_first() {
            for (i, t) in rest.iter().enumerate() {
                if t.len() != first.len() || t.dt() != first.dt() || t.t0() != first.t0() {
                    return Err(Error::InvalidTraceSet(format!(
                        "trace {} does not share the grid of trace 0",
                        i + 1
                    )));
                }
            }
        }
        if let Some(mu) = mu_label {
            if !(mu.is_finite() && mu >= 0.0) {
                return Err(Error::InvalidTraceSet(format!(
                    "mu_label must be finite and >= 0, got {mu}"
                )));
            }
        }
        Ok(Self {
            traces,
            channel,
            mu_label,
            meta: Meta::new(),
        })
    }

    pub fn with_meta(mut self, meta: Meta) -> Self {
        self.meta = meta;
        self
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn mu_label(&self) -> Option<f64> {
        self.mu_label
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Samples per trace; 0 for an empty set.
    pub fn trace_len(&self) -> usize {
        self.traces.first().map_or(0, Trace::len)
    }

    pub fn dt(&self) -> Option<f64> {
        self.traces.first().map(Trace::dt)
    }

    pub fn t0(&self) -> Option<f64> {
        self.traces.first().map(Trace::t0)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trace> {
        self.traces.iter()
    }

    /// Replace every trace through a fallible per-trace map, keeping channel,
    /// label, and metadata.
    pub fn map_traces<F>(&self, mut f: F) -> Result<TraceSet>
    where
        F: FnMut(&Trace) -> Result<Trace>,
    {
        let traces = self.traces.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Ok(TraceSet::new(traces, self.channel, self.mu_label)?.with_meta(self.meta.clone()))
    }
}

/// Acquisition constants stamped into bundle metadata by producers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    /// Samples per second.
    pub sample_rate: f64,
    /// Samples recorded before the trigger instant.
    pub pre_trigger_samples: u32,
    /// Free-form origin tag (instrument id, generator config, ...).
    pub source_id: String,
}

impl AcquisitionMeta {
    const KEY: &'static str = "acquisition";

    /// Check `sample_rate` against a trace's sample interval (must agree to
    /// 1 part in 1e9).
    pub fn validate_against_dt(&self, dt: f64) -> Result<()> {
        let implied = 1.0 / dt;
        if (self.sample_rate - implied).abs() > 1e-9 * implied {
            return Err(Error::InvalidParameter(format!(
                "sample_rate {} disagrees with 1/dt = {}",
                self.sample_rate, implied
            )));
        }
        Ok(())
    }

    /// Store under the conventional key in a metadata map.
    pub fn write_to(&self, meta: &mut Meta) {
        meta.insert(
            Self::KEY.to_string(),
            serde_json::to_value(self).expect("acquisition meta serializes"),
        );
    }

    /// Read back from a metadata map, if present.
    pub fn read_from(meta: &Meta) -> Option<Result<Self>> {
        meta.get(Self::KEY)
            .map(|v| serde_json::from_value(v.clone()).map_err(Error::from))
    }
}

/// Pointwise arithmetic mean of all traces in the set.
pub fn mean_trace(set: &TraceSet) -> Result<Trace> {
    let first = set.traces().first().ok_or(Error::EmptySet)?;
    let n = set.len() as f64;
    let mut acc = vec![0.0f64; first.len()];
    for trace in set.iter() {
        for (a, s) in acc.iter_mut().zip(trace.samples()) {
            *a += s;
        }
    }
    for a in acc.iter_mut() {
        *a /= n;
    }
    Trace::new(acc, first.dt(), first.t0())
}

/// Discrete time derivative: central differences in the interior, one-sided
/// differences at the endpoints, scaled by `1/dt`. Exact for linear inputs.
pub fn derivative(trace: &Trace) -> Result<Trace> {
    let s = trace.samples();
    let n = s.len();
    if n < 3 {
        return Err(Error::TraceTooShort { len: n, min: 3 });
    }
    let dt = trace.dt();
    let mut d = vec![0.0f64; n];
    d[0] = (s[1] - s[0]) / dt;
    for i in 1..n - 1 {
        d[i] = (s[i + 1] - s[i - 1]) / (2.0 * dt);
    }
    d[n - 1] = (s[n - 1] - s[n - 2]) / dt;
    trace.with_samples(d)
}
