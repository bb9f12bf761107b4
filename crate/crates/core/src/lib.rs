//! Photon-number information from digitized SNSPD traces.
//!
//! The pipeline this crate implements: correct each recorded trace for
//! digitizer trigger jitter using the synchronization channel, project it
//! onto the derivative of a reference mean trace to get a projected arrival
//! time, fit the projected-time histogram with an EMG + Gaussian + residual
//! mixture, and report photon-number resolvability as one minus the
//! Bhattacharyya overlap of consecutive peaks. A synthetic generator with
//! ground-truth labels backs every stage's verification.
//!
//! Modules follow the stages:
//!
//! - [`trace`], [`bundle`]: trace data model and binary/CSV persistence
//! - [`synth`]: labeled synthetic SNSPD + sync trace pairs
//! - [`preprocess`]: parabola peak fit, spectral shift, band-pass, decimation
//! - [`pca`]: principal components of trace ensembles
//! - [`projection`]: mean-derivative time projection (and the hybrid
//!   single-dot-product variant)
//! - [`fitting`]: EMG/Gaussian mixture decomposition of projected times
//! - [`confidence`]: Bhattacharyya-overlap resolvability metric

pub mod bundle;
pub mod confidence;
pub mod error;
pub mod fitting;
pub mod pca;
pub mod preprocess;
pub mod projection;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
