//! Segmenting a user's click stream into sessions.
//!
//! Three mechanisms are provided:
//!
//! * logical sessions: referrer trees built by matching each request's
//!   referrer against the most recent session that used that URL, with an
//!   optional timeout on the attachment point;
//! * pure inactivity timeout;
//! * a rolling-average click rate threshold.
//!
//! [`LogicalSessionizer`] is the incremental form of the referrer-tree
//! algorithm. It holds only the URL map and the trees that map still points
//! to; a tree that no URL maps to can never grow again and is handed back
//! as finished.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{ClickRecord, Url, UserStream};

pub type SessionId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub url: Url,
    /// Index of the parent in [`SessionTree::nodes`]; `None` for the root.
    pub parent: Option<usize>,
    /// Root depth is 1.
    pub depth: u32,
    pub added_ts: i64,
    /// Requests in this session that targeted the URL. Zero only for a root
    /// synthesized from an unseen referrer.
    pub request_count: u32,
}

/// A logical session: a referrer tree for one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionTree {
    pub id: SessionId,
    pub user: String,
    /// Nodes in insertion order; `nodes[0]` is the root.
    pub nodes: Vec<Node>,
    pub created_ts: i64,
    pub last_attach_ts: i64,
    index: HashMap<Url, usize>,
    max_depth: u32,
}

impl SessionTree {
    fn with_root(id: SessionId, user: &str, root: Url, ts: i64, request_count: u32) -> Self {
        let mut tree = SessionTree {
            id,
            user: user.to_string(),
            nodes: Vec::new(),
            created_ts: ts,
            last_attach_ts: ts,
            index: HashMap::new(),
            max_depth: 1,
        };
        tree.index.insert(root.clone(), 0);
        tree.nodes.push(Node { url: root, parent: None, depth: 1, added_ts: ts, request_count });
        tree
    }

    pub fn root(&self) -> &Url {
        &self.nodes[0].url
    }

    pub fn node(&self, url: &Url) -> Option<&Node> {
        self.index.get(url).map(|&i| &self.nodes[i])
    }

    pub fn parent_url(&self, node: &Node) -> Option<&Url> {
        node.parent.map(|p| &self.nodes[p].url)
    }

    fn add_child(&mut self, parent: usize, url: Url, ts: i64) -> usize {
        let depth = self.nodes[parent].depth + 1;
        let idx = self.nodes.len();
        self.index.insert(url.clone(), idx);
        self.nodes.push(Node { url, parent: Some(parent), depth, added_ts: ts, request_count: 1 });
        self.max_depth = self.max_depth.max(depth);
        self.last_attach_ts = ts;
        idx
    }

    /// True when every node has at most one child.
    pub fn is_chain(&self) -> bool {
        let mut has_child = vec![false; self.nodes.len()];
        for n in &self.nodes {
            if let Some(p) = n.parent {
                if std::mem::replace(&mut has_child[p], true) {
                    return false;
                }
            }
        }
        true
    }

    pub fn metrics(&self) -> SessionMetrics {
        tree_metrics(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SessionMetrics {
    pub node_count: usize,
    pub request_count: u64,
    pub depth: u32,
    pub node_depth_ratio: f64,
    pub duration_ms: i64,
}

impl SessionMetrics {
    /// At least one link was followed.
    pub fn is_nontrivial(&self) -> bool {
        self.node_count >= 2
    }
}

pub fn tree_metrics(tree: &SessionTree) -> SessionMetrics {
    let node_count = tree.nodes.len();
    let depth = tree.max_depth;
    SessionMetrics {
        node_count,
        request_count: tree.nodes.iter().map(|n| u64::from(n.request_count)).sum(),
        depth,
        node_depth_ratio: node_count as f64 / f64::from(depth),
        duration_ms: tree.last_attach_ts - tree.created_ts,
    }
}

struct LiveTree {
    tree: SessionTree,
    /// Number of URL-map entries naming this tree.
    refs: usize,
}

/// Incremental referrer-tree sessionizer for a single user.
///
/// Feed records in timestamp order with [`push`](Self::push); finished trees
/// accumulate and can be taken with [`drain_finished`](Self::drain_finished).
pub struct LogicalSessionizer {
    timeout_ms: Option<i64>,
    user: Option<String>,
    live: HashMap<SessionId, LiveTree>,
    /// URL -> (session, node index) of the most recent session to use it.
    url_map: HashMap<Url, (SessionId, usize)>,
    finished: Vec<SessionTree>,
    next_id: SessionId,
    last_ts: i64,
    live_nodes: usize,
}

impl LogicalSessionizer {
    pub fn new() -> Self {
        LogicalSessionizer {
            timeout_ms: None,
            user: None,
            live: HashMap::new(),
            url_map: HashMap::new(),
            finished: Vec::new(),
            next_id: 0,
            last_ts: i64::MIN,
            live_nodes: 0,
        }
    }

    /// An attachment is allowed only while `ts - added_ts(referrer) <= timeout_ms`.
    pub fn with_timeout(timeout_ms: i64) -> Result<Self> {
        if timeout_ms <= 0 {
            return Err(Error::arg("session timeout must be positive"));
        }
        Ok(LogicalSessionizer { timeout_ms: Some(timeout_ms), ..Self::new() })
    }

    /// Assigns `rec` to a session and returns that session's id.
    pub fn push(&mut self, rec: &ClickRecord) -> Result<SessionId> {
        match &self.user {
            None => self.user = Some(rec.user.clone()),
            Some(u) if *u != rec.user => {
                return Err(Error::arg(format!("record for `{}` fed to sessionizer of `{u}`", rec.user)))
            }
            Some(_) => {}
        }
        if rec.ts_ms < self.last_ts {
            return Err(Error::arg(format!(
                "stream for `{}` is not time-ordered ({} after {})",
                rec.user, rec.ts_ms, self.last_ts
            )));
        }
        self.last_ts = rec.ts_ms;

        let Some(referrer) = &rec.referrer else {
            let id = self.open(rec.target.clone(), rec.ts_ms, 1);
            self.point(rec.target.clone(), id, 0);
            return Ok(id);
        };

        if let Some(&(id, parent)) = self.url_map.get(referrer) {
            let live = &mut self.live.get_mut(&id).expect("url map names a live tree").tree;
            let fresh = self
                .timeout_ms
                .is_none_or(|t| rec.ts_ms - live.nodes[parent].added_ts <= t);
            if fresh {
                let idx = match live.index.get(&rec.target) {
                    Some(&idx) => {
                        live.nodes[idx].request_count += 1;
                        idx
                    }
                    None => {
                        self.live_nodes += 1;
                        live.add_child(parent, rec.target.clone(), rec.ts_ms)
                    }
                };
                self.point(rec.target.clone(), id, idx);
                return Ok(id);
            }
        }

        // Unknown (or expired) referrer: it becomes the root of a new tree.
        if *referrer == rec.target {
            let id = self.open(rec.target.clone(), rec.ts_ms, 1);
            self.point(rec.target.clone(), id, 0);
            return Ok(id);
        }
        let id = self.open(referrer.clone(), rec.ts_ms, 0);
        let live = &mut self.live.get_mut(&id).expect("just opened").tree;
        let idx = live.add_child(0, rec.target.clone(), rec.ts_ms);
        self.live_nodes += 1;
        self.point(referrer.clone(), id, 0);
        self.point(rec.target.clone(), id, idx);
        Ok(id)
    }

    fn open(&mut self, root: Url, ts: i64, request_count: u32) -> SessionId {
        let id = self.next_id;
        self.next_id += 1;
        let user = self.user.as_deref().unwrap_or_default();
        let tree = SessionTree::with_root(id, user, root, ts, request_count);
        self.live.insert(id, LiveTree { tree, refs: 0 });
        self.live_nodes += 1;
        id
    }

    fn point(&mut self, url: Url, id: SessionId, idx: usize) {
        self.live.get_mut(&id).expect("live tree").refs += 1;
        if let Some((old, _)) = self.url_map.insert(url, (id, idx)) {
            let entry = self.live.get_mut(&old).expect("url map names a live tree");
            entry.refs -= 1;
            if entry.refs == 0 {
                let done = self.live.remove(&old).expect("present").tree;
                self.live_nodes -= done.nodes.len();
                self.finished.push(done);
            }
        }
    }

    /// Trees that can no longer grow, in the order they were retired.
    pub fn drain_finished(&mut self) -> Vec<SessionTree> {
        std::mem::take(&mut self.finished)
    }

    /// Number of nodes held in trees that may still grow.
    pub fn live_nodes(&self) -> usize {
        self.live_nodes
    }

    pub fn live_trees(&self) -> usize {
        self.live.len()
    }

    pub fn mapped_urls(&self) -> usize {
        self.url_map.len()
    }

    /// Retires every remaining tree. The result holds earlier-retired trees
    /// first, then the rest in id order.
    pub fn finish(mut self) -> Vec<SessionTree> {
        let mut rest: Vec<SessionTree> = self.live.drain().map(|(_, l)| l.tree).collect();
        rest.sort_by_key(|t| t.id);
        let mut out = std::mem::take(&mut self.finished);
        out.extend(rest);
        out
    }
}

impl Default for LogicalSessionizer {
    fn default() -> Self {
        Self::new()
    }
}

/// Streams records of many users through one [`LogicalSessionizer`] each.
///
/// Records only need to be time-ordered within each user. Memory is the
/// per-user URL maps plus trees that may still grow.
pub struct MultiUserSessionizer {
    timeout_ms: Option<i64>,
    users: HashMap<String, LogicalSessionizer>,
    finished: Vec<SessionTree>,
    live_nodes: usize,
    mapped_urls: usize,
    peak_state: usize,
}

impl MultiUserSessionizer {
    pub fn new(timeout_ms: Option<i64>) -> Result<Self> {
        if let Some(t) = timeout_ms {
            LogicalSessionizer::with_timeout(t)?;
        }
        Ok(MultiUserSessionizer {
            timeout_ms,
            users: HashMap::new(),
            finished: Vec::new(),
            live_nodes: 0,
            mapped_urls: 0,
            peak_state: 0,
        })
    }

    pub fn push(&mut self, rec: &ClickRecord) -> Result<SessionId> {
        let s = match self.users.get_mut(&rec.user) {
            Some(s) => s,
            None => {
                let s = match self.timeout_ms {
                    Some(t) => LogicalSessionizer::with_timeout(t)?,
                    None => LogicalSessionizer::new(),
                };
                self.users.entry(rec.user.clone()).or_insert(s)
            }
        };
        let (nodes, urls) = (s.live_nodes(), s.mapped_urls());
        let id = s.push(rec)?;
        self.live_nodes = self.live_nodes + s.live_nodes() - nodes;
        self.mapped_urls = self.mapped_urls + s.mapped_urls() - urls;
        self.peak_state = self.peak_state.max(self.live_nodes + self.mapped_urls);
        if !s.finished.is_empty() {
            self.finished.append(&mut s.finished);
        }
        Ok(id)
    }

    /// Trees retired since the last call, in retirement order.
    pub fn drain_finished(&mut self) -> Vec<SessionTree> {
        std::mem::take(&mut self.finished)
    }

    /// Live tree nodes plus URL-map entries across all users.
    pub fn state_size(&self) -> usize {
        self.live_nodes + self.mapped_urls
    }

    pub fn peak_state_size(&self) -> usize {
        self.peak_state
    }

    pub fn users(&self) -> usize {
        self.users.len()
    }

    /// Retires everything: undrained trees first, then each user's remaining
    /// trees ordered by user and id.
    pub fn finish(mut self) -> Vec<SessionTree> {
        let mut out = std::mem::take(&mut self.finished);
        let mut users: Vec<(String, LogicalSessionizer)> = self.users.drain().collect();
        users.sort_by(|a, b| a.0.cmp(&b.0));
        for (_, s) in users {
            out.extend(s.finish());
        }
        out
    }
}

fn run_logical(stream: &UserStream, mut sessionizer: LogicalSessionizer) -> Result<Vec<SessionTree>> {
    for rec in &stream.records {
        sessionizer.push(rec)?;
    }
    let mut trees = sessionizer.finish();
    trees.sort_by_key(|t| t.id);
    Ok(trees)
}

/// Logical sessions of a sorted stream, ordered by session id.
pub fn logical_sessions(stream: &UserStream) -> Result<Vec<SessionTree>> {
    run_logical(stream, LogicalSessionizer::new())
}

/// Logical sessions where a request may only attach under a node added at
/// most `timeout_ms` earlier.
pub fn logical_sessions_timeout(stream: &UserStream, timeout_ms: i64) -> Result<Vec<SessionTree>> {
    run_logical(stream, LogicalSessionizer::with_timeout(timeout_ms)?)
}

/// Session id for each record of the stream, in stream order.
pub fn logical_assignments(stream: &UserStream, timeout_ms: Option<i64>) -> Result<Vec<SessionId>> {
    let mut s = match timeout_ms {
        Some(t) => LogicalSessionizer::with_timeout(t)?,
        None => LogicalSessionizer::new(),
    };
    stream.records.iter().map(|r| s.push(r)).collect()
}

/// A contiguous run of a stream's records forming one time-based session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordGroup {
    pub range: Range<usize>,
    pub start_ts: i64,
    pub end_ts: i64,
    pub distinct_hosts: usize,
}

impl RecordGroup {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn duration_ms(&self) -> i64 {
        self.end_ts - self.start_ts
    }

    pub fn records<'a>(&self, stream: &'a UserStream) -> &'a [ClickRecord] {
        &stream.records[self.range.clone()]
    }
}

fn groups_from_starts(stream: &UserStream, starts: impl IntoIterator<Item = usize>) -> Vec<RecordGroup> {
    let recs = &stream.records;
    let mut bounds: Vec<usize> = starts.into_iter().collect();
    bounds.push(recs.len());
    bounds
        .windows(2)
        .map(|w| {
            let slice = &recs[w[0]..w[1]];
            let hosts: HashSet<&str> = slice.iter().map(|r| r.target.host()).collect();
            RecordGroup {
                range: w[0]..w[1],
                start_ts: slice[0].ts_ms,
                end_ts: slice[slice.len() - 1].ts_ms,
                distinct_hosts: hosts.len(),
            }
        })
        .collect()
}

/// Inactivity-timeout sessions: a new session starts whenever the gap to the
/// previous request is strictly greater than `timeout_ms`.
pub fn timeout_sessions(stream: &UserStream, timeout_ms: i64) -> Result<Vec<RecordGroup>> {
    if timeout_ms <= 0 {
        return Err(Error::arg("session timeout must be positive"));
    }
    let recs = &stream.records;
    if recs.is_empty() {
        return Ok(Vec::new());
    }
    let starts = std::iter::once(0)
        .chain((1..recs.len()).filter(|&i| recs[i].ts_ms - recs[i - 1].ts_ms > timeout_ms));
    Ok(groups_from_starts(stream, starts))
}

/// Rolling-rate sessions.
///
/// At each request the rolling count is the number of requests in the
/// trailing window `(ts - window_ms, ts]`, the request itself included. A
/// request whose rolling count is at or below `threshold` starts a new
/// session: the click rate has dropped to the floor since the previous one.
pub fn rolling_avg_sessions(stream: &UserStream, window_ms: i64, threshold: f64) -> Result<Vec<RecordGroup>> {
    if window_ms <= 0 {
        return Err(Error::arg("rolling window must be positive"));
    }
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::arg("rolling threshold must be positive"));
    }
    let recs = &stream.records;
    if recs.is_empty() {
        return Ok(Vec::new());
    }
    let mut starts = vec![0];
    let mut lo = 0;
    for i in 1..recs.len() {
        while recs[lo].ts_ms <= recs[i].ts_ms - window_ms {
            lo += 1;
        }
        let count = (i - lo + 1) as f64;
        if count <= threshold {
            starts.push(i);
        }
    }
    Ok(groups_from_starts(stream, starts))
}
