//! Per-host traffic and popularity counts, and per-user behavioral profiles.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{ClickRecord, UserStream};

/// Default minimum request count for rate analyses.
pub const DEFAULT_RATE_MIN_REQUESTS: usize = 50;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HostStats {
    /// Requests targeting the host.
    pub in_strength: u64,
    /// Requests citing the host as referrer.
    pub out_strength: u64,
    pub in_users: BTreeSet<String>,
    pub out_users: BTreeSet<String>,
}

impl HostStats {
    pub fn merge(&mut self, other: HostStats) {
        self.in_strength += other.in_strength;
        self.out_strength += other.out_strength;
        self.in_users.extend(other.in_users);
        self.out_users.extend(other.out_users);
    }
}

/// Host table keyed by host name, accumulated one record at a time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HostTable {
    pub hosts: BTreeMap<String, HostStats>,
}

impl HostTable {
    pub fn add(&mut self, rec: &ClickRecord) {
        let target = self.entry(rec.target.host());
        target.in_strength += 1;
        if !target.in_users.contains(&rec.user) {
            target.in_users.insert(rec.user.clone());
        }
        if let Some(referrer) = &rec.referrer {
            let source = self.entry(referrer.host());
            source.out_strength += 1;
            if !source.out_users.contains(&rec.user) {
                source.out_users.insert(rec.user.clone());
            }
        }
    }

    fn entry(&mut self, host: &str) -> &mut HostStats {
        if !self.hosts.contains_key(host) {
            self.hosts.insert(host.to_string(), HostStats::default());
        }
        self.hosts.get_mut(host).expect("inserted")
    }

    pub fn merge(&mut self, other: HostTable) {
        for (host, stats) in other.hosts {
            self.hosts.entry(host).or_default().merge(stats);
        }
    }
}

pub fn host_stats<'a>(records: impl IntoIterator<Item = &'a ClickRecord>) -> HostTable {
    let mut table = HostTable::default();
    for rec in records {
        table.add(rec);
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserProfile {
    pub user: String,
    pub total_requests: usize,
    pub jump_requests: usize,
    pub jump_ratio: f64,
    pub active_span_s: f64,
    /// Requests per second over the active span; `None` when the span is zero.
    pub rate_rps: Option<f64>,
    pub distinct_ref_hosts: usize,
    pub distinct_target_hosts: usize,
    pub ref_host_ratio: Option<f64>,
    /// Gaps between successive requests, in seconds. Zero gaps are kept here.
    #[serde(skip)]
    pub interclicks_s: Vec<f64>,
}

impl UserProfile {
    /// Interclick gaps usable on a log scale (zero gaps removed).
    pub fn positive_interclicks(&self) -> Vec<f64> {
        self.interclicks_s.iter().copied().filter(|&g| g > 0.0).collect()
    }

    pub fn zero_interclicks(&self) -> usize {
        self.interclicks_s.iter().filter(|&&g| g == 0.0).count()
    }
}

pub fn user_profile(stream: &UserStream) -> Result<UserProfile> {
    let recs = &stream.records;
    let (first, last) = match (recs.first(), recs.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::arg(format!("user `{}` has no requests", stream.user))),
    };
    let total = recs.len();
    let jumps = recs.iter().filter(|r| r.is_jump()).count();
    let span_s = (last.ts_ms - first.ts_ms) as f64 / 1000.0;
    let ref_hosts: HashSet<&str> = recs.iter().filter_map(|r| r.referrer.as_ref()).map(|u| u.host()).collect();
    let target_hosts: HashSet<&str> = recs.iter().map(|r| r.target.host()).collect();
    Ok(UserProfile {
        user: stream.user.clone(),
        total_requests: total,
        jump_requests: jumps,
        jump_ratio: jumps as f64 / total as f64,
        active_span_s: span_s,
        rate_rps: (span_s > 0.0).then(|| total as f64 / span_s),
        distinct_ref_hosts: ref_hosts.len(),
        distinct_target_hosts: target_hosts.len(),
        ref_host_ratio: Some(ref_hosts.len() as f64 / target_hosts.len() as f64),
        interclicks_s: recs.windows(2).map(|w| (w[1].ts_ms - w[0].ts_ms) as f64 / 1000.0).collect(),
    })
}

/// Profiles with enough requests for a meaningful rate.
pub fn rate_filter(profiles: &[UserProfile], min_requests: usize) -> Vec<UserProfile> {
    profiles.iter().filter(|p| p.total_requests >= min_requests).cloned().collect()
}

/// Per user, the fraction of requests whose target or referrer host is one
/// of `portal_hosts`.
pub fn portal_report<'a>(
    records: impl IntoIterator<Item = &'a ClickRecord>,
    portal_hosts: &HashSet<String>,
) -> Result<BTreeMap<String, f64>> {
    if portal_hosts.is_empty() {
        return Err(Error::arg("portal host set is empty"));
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for rec in records {
        let touches = portal_hosts.contains(rec.target.host())
            || rec.referrer.as_ref().is_some_and(|r| portal_hosts.contains(r.host()));
        let c = counts.entry(rec.user.as_str()).or_default();
        c.0 += usize::from(touches);
        c.1 += 1;
    }
    Ok(counts.into_iter().map(|(u, (hit, all))| (u.to_string(), hit as f64 / all as f64)).collect())
}
