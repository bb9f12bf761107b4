//! Trace-bundle persistence.
//!
//! Binary layout (all integers and reals little-endian):
//!
//! ```text
//! magic "PNRB"         4 bytes
//! version              u16 = 1
//! channel              u8 (0 = snspd, 1 = sync)
//! reserved             u8 = 0
//! trace_count          u32
//! samples_per_trace    u32
//! dt                   f64 seconds
//! t0                   f64 seconds
//! mu_present           u8
//! mu                   f64 (valid iff mu_present = 1)
//! meta_len             u32
//! meta                 meta_len bytes of UTF-8 JSON
//! payload              trace_count * samples_per_trace f32, row-major
//! ```
//!
//! Samples are stored as 32-bit reals on disk and widened to f64 in memory;
//! write-read-write round trips are byte-identical.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trace::{Channel, Meta, Trace, TraceSet};

pub const BUNDLE_MAGIC: [u8; 4] = *b"PNRB";
pub const BUNDLE_VERSION: u16 = 1;

/// Serialize a trace set to the bundle byte format.
pub fn bundle_to_bytes(set: &TraceSet) -> Result<Vec<u8>> {
    let trace_count = set.len() as u32;
    let samples_per_trace = set.trace_len() as u32;
    let dt = set.dt().unwrap_or(0.0);
    let t0 = set.t0().unwrap_or(0.0);
    let meta_bytes = serde_json::to_vec(set.meta())?;

    let mut out = Vec::with_capacity(45 + meta_bytes.len() + set.len() * set.trace_len() * 4);
    out.extend_from_slice(&BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.push(set.channel().as_u8());
    out.push(0u8);
    out.extend_from_slice(&trace_count.to_le_bytes());
    out.extend_from_slice(&samples_per_trace.to_le_bytes());
    out.extend_from_slice(&dt.to_le_bytes());
    out.extend_from_slice(&t0.to_le_bytes());
    match set.mu_label() {
        Some(mu) => {
            out.push(1u8);
            out.extend_from_slice(&mu.to_le_bytes());
        }
        None => {
            out.push(0u8);
            out.extend_from_slice(&0.0f64.to_le_bytes());
        }
    }
    out.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    for trace in set.iter() {
        for &s in trace.samples() {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedPayload {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Deserialize a trace set from bundle bytes.
pub fn bundle_from_bytes(bytes: &[u8]) -> Result<TraceSet> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != BUNDLE_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = r.u16()?;
    if version != BUNDLE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: BUNDLE_VERSION,
        });
    }
    let channel = Channel::from_u8(r.u8()?)?;
    let reserved = r.u8()?;
    if reserved != 0 {
        return Err(Error::MalformedHeader(format!(
            "reserved byte must be 0, got {reserved}"
        )));
    }
    let trace_count = r.u32()? as usize;
    let samples_per_trace = r.u32()? as usize;
    let dt = r.f64()?;
    let t0 = r.f64()?;
    let mu_present = r.u8()?;
    let mu_raw = r.f64()?;
    let mu = match mu_present {
        0 => None,
        1 => Some(mu_raw),
        other => {
            return Err(Error::MalformedHeader(format!(
                "mu_present must be 0 or 1, got {other}"
            )))
        }
    };
    let meta_len = r.u32()? as usize;
    let meta_bytes = r.take(meta_len)?;
    let meta: Meta = if meta_bytes.is_empty() {
        Meta::new()
    } else {
        serde_json::from_slice(meta_bytes)
            .map_err(|e| Error::MalformedHeader(format!("metadata is not a JSON object: {e}")))?
    };

    let payload_len = trace_count
        .checked_mul(samples_per_trace)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader("payload size overflows".to_string()))?;
    let payload = r.take(payload_len)?;
    if r.pos != bytes.len() {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }

    let mut traces = Vec::with_capacity(trace_count);
    for i in 0..trace_count {
        let row = &payload[i * samples_per_trace * 4..(i + 1) * samples_per_trace * 4];
        let samples: Vec<f64> = row
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        traces.push(Trace::new(samples, dt, t0)?);
    }
    Ok(TraceSet::new(traces, channel, mu)?.with_meta(meta))
}

/// Write a trace set to a bundle file. Deterministic bytes for identical
/// input; single writer per path.
pub fn write_trace_bundle(set: &TraceSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = bundle_to_bytes(set)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a trace set from a bundle file.
pub fn read_trace_bundle(path: impl AsRef<Path>) -> Result<TraceSet> {
    let bytes = fs::read(path)?;
    bundle_from_bytes(&bytes)
}

/// Export one trace per row as CSV, with a `t=<seconds>` header per column.
pub fn export_traces_csv(set: &TraceSet, path: impl AsRef<Path>) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    if let Some(first) = set.traces().first() {
        let header: Vec<String> = (0..first.len())
            .map(|i| format!("t={}", first.time_at(i)))
            .collect();
        writeln!(out, "{}", header.join(","))?;
    }
    for trace in set.iter() {
        let row: Vec<String> = trace.samples().iter().map(|s| s.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Import traces from CSV. With a `t=<seconds>` header the time grid comes
/// from the header; otherwise `dt`/`t0` must be supplied.
pub fn import_traces_csv(
    path: impl AsRef<Path>,
    channel: Channel,
    mu_label: Option<f64>,
    grid: Option<(f64, f64)>,
) -> Result<TraceSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();

    let mut grid = grid;
    if let Some(first) = lines.peek() {
        if first.trim_start().starts_with("t=") {
            let times: Vec<f64> = first
                .split(',')
                .map(|cell| {
                    cell.trim()
                        .strip_prefix("t=")
                        .ok_or_else(|| {
                            Error::MalformedHeader(format!("bad header cell {cell:?}"))
                        })?
                        .parse::<f64>()
                        .map_err(|e| Error::MalformedHeader(format!("bad header time: {e}")))
                })
                .collect::<Result<_>>()?;
            if times.len() < 2 {
                return Err(Error::MalformedHeader(
                    "CSV header needs at least two time columns".to_string(),
                ));
            }
            grid = Some((times[1] - times[0], times[0]));
            lines.next();
        }
    }
    let (dt, t0) = grid.ok_or_else(|| {
        Error::MalformedHeader("CSV has no t= header; pass dt and t0 explicitly".to_string())
    })?;

    let mut traces = Vec::new();
    for (row, line) in lines.enumerate() {
        let samples: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidTrace(format!("row {row}: {e}")))
            })
            .collect::<Result<_>>()?;
        traces.push(Trace::new(samples, dt, t0)?);
    }
    TraceSet::new(traces, channel, mu_label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn small_set(rows: usize, cols: usize) -> TraceSet {
        let traces = (0..rows)
            .map(|r| {
                let samples = (0..cols).map(|c| (r * cols + c) as f64 * 0.125).collect();
                Trace::new(samples, 2e-10, -4e-9).unwrap()
            })
            .collect();
        TraceSet::new(traces, Channel::Snspd, Some(0.003)).unwrap()
    }

    #[test]
    fn minimal_bundle_round_trips() {
        let set = small_set(2, 4);
        let bytes = bundle_to_bytes(&set).unwrap();
        let back = bundle_from_bytes(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.trace_len(), 4);
        assert_eq!(back.channel(), Channel::Snspd);
        assert_eq!(back.mu_label(), Some(0.003));
    }

    #[test]
    fn two_by_four_payload_is_32_bytes() {
        let set = small_set(2, 4);
        let bytes = bundle_to_bytes(&set).unwrap();
        let meta_len = serde_json::to_vec(set.meta()).unwrap().len();
        assert_eq!(bytes.len(), 45 + meta_len + 32);
    }

    #[test]
    fn single_512_sample_trace_payload() {
        let trace = Trace::new(vec![0.25f64; 512], 2e-10, -4e-9).unwrap();
        let set = TraceSet::new(vec![trace], Channel::Snspd, None).unwrap();
        let bytes = bundle_to_bytes(&set).unwrap();
        let meta_len = serde_json::to_vec(set.meta()).unwrap().len();
        assert_eq!(bytes.len() - 45 - meta_len, 512 * 4);
        // dt survives exactly
        let back = bundle_from_bytes(&bytes).unwrap();
        assert_eq!(back.dt(), Some(2e-10));
    }

    #[test]
    fn empty_set_is_header_only() {
        let set = TraceSet::new(vec![], Channel::Sync, None).unwrap();
        let bytes = bundle_to_bytes(&set).unwrap();
        let meta_len = serde_json::to_vec(set.meta()).unwrap().len();
        assert_eq!(bytes.len(), 45 + meta_len);
        let back = bundle_from_bytes(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.channel(), Channel::Sync);
    }

    #[test]
    fn declared_count_exceeding_payload_is_truncation_error() {
        let set = small_set(2, 4);
        let mut bytes = bundle_to_bytes(&set).unwrap();
        // Claim 3 traces but keep payload for 2.
        let count_off = 8;
        bytes[count_off..count_off + 4].copy_from_slice(&3u32.to_le_bytes());
        match bundle_from_bytes(&bytes) {
            Err(Error::TruncatedPayload { .. }) => {}
            other => panic!("expected TruncatedPayload, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version_are_distinct_errors() {
        let set = small_set(1, 4);
        let mut bytes = bundle_to_bytes(&set).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            bundle_from_bytes(&bytes),
            Err(Error::BadMagic { .. })
        ));
        let mut bytes = bundle_to_bytes(&set).unwrap();
        bytes[4..6].copy_from_slice(&9u16.to_le_bytes());
        assert!(matches!(
            bundle_from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn malformed_channel_and_reserved_bytes_rejected() {
        let set = small_set(1, 4);
        let mut bytes = bundle_to_bytes(&set).unwrap();
        bytes[6] = 7;
        assert!(matches!(
            bundle_from_bytes(&bytes),
            Err(Error::MalformedHeader(_))
        ));
        let mut bytes = bundle_to_bytes(&set).unwrap();
        bytes[7] = 1;
        assert!(matches!(
            bundle_from_bytes(&bytes),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn synthetic_100_trace_round_trip_is_byte_identical() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let traces: Vec<Trace> = (0..100)
            .map(|_| {
                let samples = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Trace::new(samples, 2e-10, -4e-9).unwrap()
            })
            .collect();
        let mut meta = Meta::new();
        meta.insert("run".to_string(), serde_json::json!("unit-test"));
        let set = TraceSet::new(traces, Channel::Snspd, Some(1.77))
            .unwrap()
            .with_meta(meta);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.pnrb");
        write_trace_bundle(&set, &path).unwrap();
        let first = fs::read(&path).unwrap();
        let back = read_trace_bundle(&path).unwrap();
        let path2 = dir.path().join("set2.pnrb");
        write_trace_bundle(&back, &path2).unwrap();
        let second = fs::read(&path2).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn csv_export_import_round_trip() {
        let set = small_set(3, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.csv");
        export_traces_csv(&set, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t=-0.000000004,"));
        let back = import_traces_csv(&path, Channel::Snspd, Some(0.003), None).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.trace_len(), 5);
        assert!((back.dt().unwrap() - 2e-10).abs() < 1e-22);
        for (a, b) in back.traces().iter().zip(set.traces()) {
            for (x, y) in a.samples().iter().zip(b.samples()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
