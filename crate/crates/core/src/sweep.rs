//! Session statistics as a function of timeout.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::UserStream;
use crate::session::{logical_sessions, logical_sessions_timeout, timeout_sessions, SessionTree};

/// Default timeout grid in seconds.
pub const DEFAULT_TIMEOUTS_S: [f64; 8] = [30.0, 60.0, 120.0, 300.0, 600.0, 900.0, 1800.0, 3600.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Timeout,
    LogicalTimeout,
    /// Logical sessions without a timeout.
    Logical,
}

impl Mechanism {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::Timeout => "timeout",
            Mechanism::LogicalTimeout => "logical_timeout",
            Mechanism::Logical => "logical",
        }
    }
}

/// Statistics pooled over all sessions of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RowStats {
    Timeout { mean_duration_s: f64, mean_hosts: f64, mean_requests: f64 },
    Logical { mean_nodes: f64, mean_depth: f64, mean_ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    /// `None` for the timeout-free logical row.
    pub timeout_s: Option<f64>,
    pub mechanism: Mechanism,
    pub sessions_per_user: f64,
    #[serde(flatten)]
    pub stats: RowStats,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str =
        "timeout_s,mechanism,sessions_per_user,mean_duration_s,mean_hosts,mean_requests,mean_nodes,mean_depth,mean_ratio";

    pub fn to_csv(&self) -> String {
        let timeout = self.timeout_s.map(|t| t.to_string()).unwrap_or_default();
        let (a, b) = match self.stats {
            RowStats::Timeout { mean_duration_s, mean_hosts, mean_requests } => {
                (format!("{mean_duration_s},{mean_hosts},{mean_requests}"), ",,".to_string())
            }
            RowStats::Logical { mean_nodes, mean_depth, mean_ratio } => {
                (",,".to_string(), format!("{mean_nodes},{mean_depth},{mean_ratio}"))
            }
        };
        format!("{timeout},{},{},{a},{b}", self.mechanism.as_str(), self.sessions_per_user)
    }
}

fn validate(streams: &[UserStream], timeouts_s: &[f64]) -> Result<Vec<i64>> {
    if streams.is_empty() {
        return Err(Error::insufficient("no user streams to sweep"));
    }
    timeout_grid_ms(timeouts_s)
}

/// Checks that a timeout grid is non-empty, strictly ascending and positive,
/// and converts it to milliseconds.
pub fn timeout_grid_ms(timeouts_s: &[f64]) -> Result<Vec<i64>> {
    if timeouts_s.is_empty() {
        return Err(Error::arg("timeout grid is empty"));
    }
    if timeouts_s.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("timeouts must be strictly ascending"));
    }
    timeouts_s
        .iter()
        .map(|&t| {
            let ms = (t * 1000.0).round();
            if t.is_finite() && ms >= 1.0 {
                Ok(ms as i64)
            } else {
                Err(Error::arg(format!("timeout {t}s is not a positive millisecond count")))
            }
        })
        .collect()
}

/// Pure inactivity-timeout statistics at each timeout.
pub fn timeout_sweep(streams: &[UserStream], timeouts_s: &[f64]) -> Result<Vec<SweepRow>> {
    let timeouts_ms = validate(streams, timeouts_s)?;
    let users = streams.len() as f64;
    let mut rows = Vec::with_capacity(timeouts_ms.len());
    for (&t_s, &t_ms) in timeouts_s.iter().zip(&timeouts_ms) {
        let (mut sessions, mut duration_ms, mut hosts, mut requests) = (0u64, 0i64, 0u64, 0u64);
        for s in streams {
            for g in timeout_sessions(s, t_ms)? {
                sessions += 1;
                duration_ms += g.duration_ms();
                hosts += g.distinct_hosts as u64;
                requests += g.len() as u64;
            }
        }
        let n = sessions.max(1) as f64;
        rows.push(SweepRow {
            timeout_s: Some(t_s),
            mechanism: Mechanism::Timeout,
            sessions_per_user: sessions as f64 / users,
            stats: RowStats::Timeout {
                mean_duration_s: duration_ms as f64 / 1000.0 / n,
                mean_hosts: hosts as f64 / n,
                mean_requests: requests as f64 / n,
            },
        });
    }
    Ok(rows)
}

fn logical_row(timeout_s: Option<f64>, mechanism: Mechanism, users: usize, trees: &[SessionTree]) -> SweepRow {
    let (mut nodes, mut depth, mut ratio) = (0u64, 0u64, 0.0);
    for t in trees {
        let m = t.metrics();
        nodes += m.node_count as u64;
        depth += u64::from(m.depth);
        ratio += m.node_depth_ratio;
    }
    let n = trees.len().max(1) as f64;
    SweepRow {
        timeout_s,
        mechanism,
        sessions_per_user: trees.len() as f64 / users as f64,
        stats: RowStats::Logical { mean_nodes: nodes as f64 / n, mean_depth: depth as f64 / n, mean_ratio: ratio / n },
    }
}

/// Logical-with-timeout statistics at each timeout.
pub fn logical_timeout_sweep(streams: &[UserStream], timeouts_s: &[f64]) -> Result<Vec<SweepRow>> {
    let timeouts_ms = validate(streams, timeouts_s)?;
    let mut rows = Vec::with_capacity(timeouts_ms.len());
    for (&t_s, &t_ms) in timeouts_s.iter().zip(&timeouts_ms) {
        let mut trees = Vec::new();
        for s in streams {
            trees.extend(logical_sessions_timeout(s, t_ms)?);
        }
        rows.push(logical_row(Some(t_s), Mechanism::LogicalTimeout, streams.len(), &trees));
    }
    Ok(rows)
}

/// The timeout-free logical row the logical-timeout sweep converges to.
pub fn logical_baseline(streams: &[UserStream]) -> Result<SweepRow> {
    if streams.is_empty() {
        return Err(Error::insufficient("no user streams"));
    }
    let mut trees = Vec::new();
    for s in streams {
        trees.extend(logical_sessions(s)?);
    }
    Ok(logical_row(None, Mechanism::Logical, streams.len(), &trees))
}
