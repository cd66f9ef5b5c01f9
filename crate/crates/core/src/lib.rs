//! Click-stream analytics: log ingestion, logical (referrer-tree) and
//! timeout-based sessionization, per-host and per-user statistics,
//! heavy-tail and log-normal fitting, timeout sweeps, a seeded synthetic
//! click-stream generator, and log-normal anomaly scoring.

pub mod anomaly;
pub mod error;
pub mod fit;
pub mod ingest;
pub mod session;
pub mod stats;
pub mod sweep;
pub mod synth;

pub use error::{Error, ParseError, ParseErrorKind, Result};
pub use ingest::{ClickRecord, Url, UserStream};
