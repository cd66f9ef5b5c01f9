//! Seeded synthetic click streams with known session structure.
//!
//! Each user draws a request count from a log-normal, an interclick
//! exponent from a normal, and then emits requests separated by power-law
//! gaps. A request either jumps (empty referrer, new tree) or follows a link
//! out of the current tree: from the most recent node, or with
//! `branch_prob` from a uniformly chosen earlier node. Every generated
//! record carries the id of the tree the generator meant it to join, so a
//! sessionizer can be checked against ground truth.
//!
//! Users are generated lazily and merged by timestamp, so the full stream
//! never has to be resident.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{ClickRecord, Url};
use crate::session::SessionId;

/// Branch probability at which 500 default users average a node-to-depth
/// ratio of 1.94 over their non-trivial sessions (found by bisection).
pub const BRANCH_PROB_FOR_RATIO_194: f64 = 0.82;

/// Tries at drawing a URL not yet in the current tree before forcing a jump.
const FRESH_URL_TRIES: usize = 64;
/// Tries at drawing an earlier node whose URL still maps to the current tree.
const BRANCH_TRIES: usize = 8;
const DAY_MS: i64 = 86_400_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub n_users: usize,
    /// `(mu, sigma)` of the log-normal per-user request count.
    pub requests_lognormal: (f64, f64),
    /// Request counts below this are raised to it.
    pub min_requests: usize,
    pub jump_prob: f64,
    /// `(mean, sd)` of the per-user interclick exponent.
    pub interclick_tau: (f64, f64),
    pub x_min_s: f64,
    pub max_gap_s: f64,
    pub branch_prob: f64,
    /// Number of distinct hosts.
    pub url_pool: usize,
    pub paths_per_host: usize,
    pub start_ts_ms: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 100,
            requests_lognormal: (1000f64.ln(), 0.5),
            min_requests: 1,
            jump_prob: 0.15,
            interclick_tau: (1.6, 0.1),
            x_min_s: 1.0,
            max_gap_s: 1e7,
            branch_prob: BRANCH_PROB_FOR_RATIO_194,
            url_pool: 200,
            paths_per_host: 20,
            // 2008-03-05T00:00:00Z
            start_ts_ms: 1_204_675_200_000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::arg(format!("synth config: {m}")));
        if self.n_users == 0 {
            return bad("n_users must be positive");
        }
        let (mu, sigma) = self.requests_lognormal;
        if !mu.is_finite() || !(sigma >= 0.0 && sigma.is_finite()) {
            return bad("requests log-normal needs finite mu and sigma >= 0");
        }
        if !(self.jump_prob > 0.0 && self.jump_prob <= 1.0) {
            return bad("jump_prob must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.branch_prob) {
            return bad("branch_prob must be in [0, 1)");
        }
        let (tau, tau_sd) = self.interclick_tau;
        if !(tau > 1.0 && tau.is_finite()) || !(tau_sd >= 0.0 && tau_sd.is_finite()) {
            return bad("interclick exponent mean must exceed 1 with sd >= 0");
        }
        if !(self.x_min_s > 0.0 && self.x_min_s.is_finite()) {
            return bad("x_min_s must be positive");
        }
        if !(self.max_gap_s >= self.x_min_s) {
            return bad("max_gap_s must be at least x_min_s");
        }
        if self.url_pool == 0 || self.paths_per_host == 0 {
            return bad("url pool must be non-empty");
        }
        if self.start_ts_ms < 0 {
            return bad("start_ts_ms must be non-negative");
        }
        Ok(())
    }

    /// Parses flat `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_kv_str(text: &str) -> Result<SynthConfig> {
        let mut cfg = SynthConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::arg(format!("config line {}: expected key=value", i + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::arg(format!("config `{key}`: cannot parse `{v}`")))
        }
        match key {
            "users" | "n_users" => self.n_users = num(key, value)?,
            "requests_mu" => self.requests_lognormal.0 = num(key, value)?,
            "requests_sigma" => self.requests_lognormal.1 = num(key, value)?,
            "min_requests" => self.min_requests = num(key, value)?,
            "jump_prob" => self.jump_prob = num(key, value)?,
            "tau_mean" => self.interclick_tau.0 = num(key, value)?,
            "tau_sd" => self.interclick_tau.1 = num(key, value)?,
            "x_min_s" => self.x_min_s = num(key, value)?,
            "max_gap_s" => self.max_gap_s = num(key, value)?,
            "branch_prob" => self.branch_prob = num(key, value)?,
            "url_pool" => self.url_pool = num(key, value)?,
            "paths_per_host" => self.paths_per_host = num(key, value)?,
            "start_ts_ms" => self.start_ts_ms = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::arg(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}

pub fn user_name(index: usize) -> String {
    format!("u{index:05}")
}

/// Per-user sizes drawn up front.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UserPlan {
    pub requests: usize,
    pub tau: f64,
}

/// A generated record and the session the generator placed it in.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub record: ClickRecord,
    pub session_id: SessionId,
}

struct TreeState {
    /// URL keys of the current tree's nodes, in insertion order.
    nodes: Vec<u32>,
    latest: usize,
}

struct UserGen {
    user: String,
    rng: ChaCha8Rng,
    plan: UserPlan,
    emitted: usize,
    ts: i64,
    jump_prob: f64,
    branch_prob: f64,
    x_min_s: f64,
    max_gap_s: f64,
    url_pool: u32,
    paths_per_host: u32,
    /// URL key -> tree of the latest request that targeted it.
    owner: HashMap<u32, SessionId>,
    tree: Option<TreeState>,
    tree_id: SessionId,
    clamped: usize,
}

impl UserGen {
    fn new(cfg: &SynthConfig, index: usize) -> UserGen {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let (mu, sigma) = cfg.requests_lognormal;
        let count = if sigma > 0.0 {
            LogNormal::new(mu, sigma).expect("validated").sample(&mut rng)
        } else {
            mu.exp()
        };
        let requests = (count.round() as usize).max(cfg.min_requests).max(1);
        let (tau_mean, tau_sd) = cfg.interclick_tau;
        let tau = if tau_sd > 0.0 {
            let d = Normal::new(tau_mean, tau_sd).expect("validated");
            // exponents at or below 1 are not normalizable; redraw
            (0..1000).map(|_| d.sample(&mut rng)).find(|t| *t > 1.01).unwrap_or(tau_mean)
        } else {
            tau_mean
        };
        let offset = rng.random_range(0..DAY_MS);
        UserGen {
            user: user_name(index),
            rng,
            plan: UserPlan { requests, tau },
            emitted: 0,
            ts: cfg.start_ts_ms + offset,
            jump_prob: cfg.jump_prob,
            branch_prob: cfg.branch_prob,
            x_min_s: cfg.x_min_s,
            max_gap_s: cfg.max_gap_s,
            url_pool: cfg.url_pool as u32,
            paths_per_host: cfg.paths_per_host as u32,
            owner: HashMap::new(),
            tree: None,
            tree_id: 0,
            clamped: 0,
        }
    }

    fn url(&self, key: u32) -> Url {
        let host = key / self.paths_per_host;
        let path = key % self.paths_per_host;
        Url::from_parts(&format!("h{host:04}.example"), &format!("/p/{path}")).expect("well-formed")
    }

    fn random_key(&mut self) -> u32 {
        self.rng.random_range(0..self.url_pool * self.paths_per_host)
    }

    fn gap_ms(&mut self) -> i64 {
        let u: f64 = self.rng.random();
        let mut gap = self.x_min_s * (1.0 - u).powf(-1.0 / (self.plan.tau - 1.0));
        if gap > self.max_gap_s {
            gap = self.max_gap_s;
            self.clamped += 1;
        }
        ((gap * 1000.0).round() as i64).max(1)
    }

    fn next_record(&mut self) -> Option<SynthRecord> {
        if self.emitted == self.plan.requests {
            return None;
        }
        if self.emitted > 0 {
            self.ts += self.gap_ms();
        }
        self.emitted += 1;

        let jump = self.tree.is_none() || self.rng.random::<f64>() < self.jump_prob;
        let link = if jump { None } else { self.pick_link() };
        let (referrer, target) = match link {
            Some((parent, target)) => {
                let tree = self.tree.as_mut().expect("linking inside a tree");
                tree.nodes.push(target);
                tree.latest = tree.nodes.len() - 1;
                (Some(parent), target)
            }
            None => {
                if self.tree.is_some() {
                    self.tree_id += 1;
                }
                let target = self.random_key();
                self.tree = Some(TreeState { nodes: vec![target], latest: 0 });
                (None, target)
            }
        };
        self.owner.insert(target, self.tree_id);
        let record = ClickRecord {
            ts_ms: self.ts,
            user: self.user.clone(),
            target: self.url(target),
            referrer: referrer.map(|k| self.url(k)),
            is_browser: true,
        };
        Some(SynthRecord { record, session_id: self.tree_id })
    }

    /// Picks (referrer, target) for a link inside the current tree, or `None`
    /// when no URL outside the tree could be found.
    fn pick_link(&mut self) -> Option<(u32, u32)> {
        let tree = self.tree.as_ref()?;
        let mut parent = tree.nodes[tree.latest];
        if tree.nodes.len() > 1 && self.rng.random::<f64>() < self.branch_prob {
            for _ in 0..BRANCH_TRIES {
                let i = self.rng.random_range(0..tree.nodes.len());
                let key = tree.nodes[i];
                if i != tree.latest && self.owner.get(&key) == Some(&self.tree_id) {
                    parent = key;
                    break;
                }
            }
        }
        for _ in 0..FRESH_URL_TRIES {
            let key = self.random_key();
            if !self.tree.as_ref().expect("checked above").nodes.contains(&key) {
                return Some((parent, key));
            }
        }
        None
    }
}

/// Lazily generated, timestamp-merged synthetic stream.
pub struct SynthStream {
    users: Vec<UserGen>,
    heap: BinaryHeap<Reverse<(i64, usize)>>,
    pending: Vec<Option<SynthRecord>>,
}

impl SynthStream {
    pub fn new(cfg: &SynthConfig) -> Result<SynthStream> {
        cfg.validate()?;
        let mut users: Vec<UserGen> = (0..cfg.n_users).map(|i| UserGen::new(cfg, i)).collect();
        let mut heap = BinaryHeap::with_capacity(users.len());
        let mut pending = Vec::with_capacity(users.len());
        for (i, u) in users.iter_mut().enumerate() {
            let rec = u.next_record();
            if let Some(r) = &rec {
                heap.push(Reverse((r.record.ts_ms, i)));
            }
            pending.push(rec);
        }
        Ok(SynthStream { users, heap, pending })
    }

    pub fn plans(&self) -> Vec<UserPlan> {
        self.users.iter().map(|u| u.plan).collect()
    }

    pub fn total_requests(&self) -> usize {
        self.users.iter().map(|u| u.plan.requests).sum()
    }

    /// Gaps that hit `max_gap_s` so far.
    pub fn clamped_gaps(&self) -> usize {
        self.users.iter().map(|u| u.clamped).sum()
    }
}

impl Iterator for SynthStream {
    type Item = SynthRecord;

    fn next(&mut self) -> Option<SynthRecord> {
        let Reverse((_, i)) = self.heap.pop()?;
        let out = self.pending[i].take();
        let next = self.users[i].next_record();
        if let Some(r) = &next {
            self.heap.push(Reverse((r.record.ts_ms, i)));
        }
        self.pending[i] = next;
        out
    }
}

/// Generates the whole stream, globally sorted by timestamp (ties by user).
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthRecord>> {
    Ok(SynthStream::new(cfg)?.collect())
}

/// Ground-truth sidecar line: user, 1-based line number in the emitted log,
/// session id.
pub fn truth_line(rec: &SynthRecord, line_no: usize) -> String {
    format!("{}\t{}\t{}", rec.record.user, line_no, rec.session_id)
}
