//! Parsing, normalization and filtering of Click Log v1 input.
//!
//! A Click Log v1 file is UTF-8 text with one request per line and five
//! tab-separated fields:
//!
//! ```text
//! ts_ms <TAB> user_id <TAB> target_url <TAB> referrer_url | "-" <TAB> 0|1
//! ```
//!
//! Lines starting with `#` are comments. URLs are normalized on the way in:
//! the scheme, query string and fragment are dropped and the host is
//! lowercased, so two requests for the same page with different query
//! parameters become the same [`Url`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, ParseErrorKind, Result};

/// Default width of the duplicate-burst window.
pub const DEFAULT_BURST_WINDOW_MS: i64 = 1000;
/// Default low-activity thresholds: total requests, then empty-referrer requests.
pub const DEFAULT_MIN_REQUESTS: usize = 2500;
pub const DEFAULT_MIN_JUMPS: usize = 500;

/// Extensions treated as page fetches. Paths without an extension, and
/// paths ending in `/`, are pages too.
pub const PAGE_EXTENSIONS: &[&str] = &[
    "html", "htm", "shtml", "php", "php3", "asp", "aspx", "jsp", "jspx", "cfm", "cgi", "pl", "py",
    "do", "action",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Url {
    host: String,
    path: String,
}

impl Url {
    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    /// Builds a URL from already-normalized parts.
    pub fn from_parts(host: &str, path: &str) -> Result<Url> {
        normalize_url(&format!("{host}{path}"))
    }
}

impl fmt::Display for Url {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "http://{}{}", self.host, self.path)
    }
}

/// Normalizes an absolute `http(s)://` URL or a scheme-less `host/path`.
///
/// The host is lowercased, the query and fragment are removed, and an empty
/// path becomes `/`. Trailing slashes are otherwise left alone.
pub fn normalize_url(raw: &str) -> Result<Url> {
    let invalid = |reason| Error::InvalidUrl { url: raw.to_string(), reason };
    let trimmed = raw.trim();
    let rest = match trimmed.find("://") {
        Some(i) if trimmed[..i].chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c)) => {
            &trimmed[i + 3..]
        }
        _ => trimmed,
    };
    let host_end = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    let host = &rest[..host_end];
    if host.is_empty() {
        return Err(invalid("empty host"));
    }
    if host.chars().any(char::is_whitespace) {
        return Err(invalid("whitespace in host"));
    }
    let tail = &rest[host_end..];
    let path = if tail.starts_with('/') {
        let end = tail.find(['?', '#']).unwrap_or(tail.len());
        &tail[..end]
    } else {
        "/"
    };
    Ok(Url { host: host.to_ascii_lowercase(), path: path.to_string() })
}

/// Extension heuristic for "this request fetched a Web page".
pub fn is_page_request(url: &Url) -> bool {
    let segment = url.path.rsplit('/').next().unwrap_or("");
    match segment.rfind('.') {
        None => true,
        Some(dot) => {
            let ext = &segment[dot + 1..];
            PAGE_EXTENSIONS.iter().any(|p| p.eq_ignore_ascii_case(ext))
        }
    }
}

/// One logged HTTP GET.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub ts_ms: i64,
    pub user: String,
    pub target: Url,
    /// `None` is the empty referrer: the user jumped to `target` directly.
    pub referrer: Option<Url>,
    pub is_browser: bool,
}

impl ClickRecord {
    pub fn is_jump(&self) -> bool {
        self.referrer.is_none()
    }

    /// Formats the record as a Click Log v1 line, without the newline.
    pub fn to_line(&self) -> String {
        let referrer = self.referrer.as_ref().map_or_else(|| "-".to_string(), Url::to_string);
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.ts_ms,
            self.user,
            self.target,
            referrer,
            u8::from(self.is_browser)
        )
    }
}

/// Decodes one Click Log v1 line. `line_no` is only used for error reporting.
pub fn parse_line(line: &str, line_no: usize) -> Result<ClickRecord, ParseError> {
    let err = |kind| ParseError { line: line_no, kind };
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(err(ParseErrorKind::FieldCount(fields.len())));
    }
    let ts_ms: i64 = fields[0]
        .parse()
        .ok()
        .filter(|ts| *ts >= 0)
        .ok_or_else(|| err(ParseErrorKind::Timestamp(fields[0].to_string())))?;
    if fields[1].is_empty() {
        return Err(err(ParseErrorKind::EmptyUser));
    }
    let target = normalize_url(fields[2]).map_err(|e| err(ParseErrorKind::Url(e.to_string())))?;
    let referrer = match fields[3] {
        "-" | "" => None,
        raw => Some(normalize_url(raw).map_err(|e| err(ParseErrorKind::Url(e.to_string())))?),
    };
    let is_browser = match fields[4] {
        "1" => true,
        "0" => false,
        other => return Err(err(ParseErrorKind::BrowserFlag(other.to_string()))),
    };
    Ok(ClickRecord { ts_ms, user: fields[1].to_string(), target, referrer, is_browser })
}

/// Streaming Click Log v1 reader.
///
/// In lenient mode malformed lines are counted and skipped; in strict mode
/// the first malformed line is returned as an error and iteration stops.
pub struct ClickLogReader<R> {
    input: R,
    strict: bool,
    line_no: usize,
    buf: String,
    records: usize,
    malformed: usize,
    done: bool,
}

impl<R: BufRead> ClickLogReader<R> {
    pub fn new(input: R, strict: bool) -> Self {
        ClickLogReader {
            input,
            strict,
            line_no: 0,
            buf: String::new(),
            records: 0,
            malformed: 0,
            done: false,
        }
    }

    pub fn records_read(&self) -> usize {
        self.records
    }

    pub fn malformed(&self) -> usize {
        self.malformed
    }
}

impl<R: BufRead> Iterator for ClickLogReader<R> {
    type Item = std::io::Result<Result<ClickRecord, ParseError>>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.line_no += 1;
                    let line = self.buf.trim_end_matches(['\n', '\r']);
                    if line.trim().is_empty() || line.starts_with('#') {
                        continue;
                    }
                    match parse_line(line, self.line_no) {
                        Ok(rec) => {
                            self.records += 1;
                            return Some(Ok(Ok(rec)));
                        }
                        Err(e) => {
                            self.malformed += 1;
                            if self.strict {
                                self.done = true;
                                return Some(Ok(Err(e)));
                            }
                        }
                    }
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
        None
    }
}

/// One user's requests in time order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserStream {
    pub user: String,
    pub records: Vec<ClickRecord>,
}

impl UserStream {
    /// Wraps records that all belong to `user`, stably sorting them by time.
    pub fn new(user: impl Into<String>, mut records: Vec<ClickRecord>) -> Result<UserStream> {
        let user = user.into();
        if let Some(r) = records.iter().find(|r| r.user != user) {
            return Err(Error::arg(format!("record for user `{}` in stream of `{user}`", r.user)));
        }
        records.sort_by_key(|r| r.ts_ms);
        Ok(UserStream { user, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn jumps(&self) -> usize {
        self.records.iter().filter(|r| r.is_jump()).count()
    }

    /// Time between first and last request, in milliseconds.
    pub fn span_ms(&self) -> i64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.ts_ms - a.ts_ms,
            _ => 0,
        }
    }
}

/// Partitions records by user. Streams come back ordered by user id and each
/// is stably sorted by timestamp, so same-millisecond requests keep their
/// input order.
pub fn group_users(records: impl IntoIterator<Item = ClickRecord>) -> Vec<UserStream> {
    let mut by_user: BTreeMap<String, Vec<ClickRecord>> = BTreeMap::new();
    for rec in records {
        by_user.entry(rec.user.clone()).or_default().push(rec);
    }
    by_user
        .into_iter()
        .map(|(user, mut records)| {
            records.sort_by_key(|r| r.ts_ms);
            UserStream { user, records }
        })
        .collect()
}

/// Incremental duplicate-burst filter for one user's time-ordered requests.
///
/// A request repeating the exact (referrer, target) pair of an earlier
/// request is dropped when it arrives within `window_ms` of the previous
/// occurrence of that pair, whether or not that occurrence was itself kept.
#[derive(Debug)]
pub struct BurstFilter {
    window_ms: i64,
    last_seen: HashMap<(Option<Url>, Url), i64>,
    prune_at: usize,
}

impl BurstFilter {
    pub fn new(window_ms: i64) -> Result<BurstFilter> {
        if window_ms < 0 {
            return Err(Error::arg("burst window must be non-negative"));
        }
        Ok(BurstFilter { window_ms, last_seen: HashMap::new(), prune_at: 1024 })
    }

    /// Returns whether `rec` should be kept. Records must arrive in time order.
    pub fn admit(&mut self, rec: &ClickRecord) -> bool {
        let key = (rec.referrer.clone(), rec.target.clone());
        let keep = match self.last_seen.insert(key, rec.ts_ms) {
            Some(prev) => rec.ts_ms - prev > self.window_ms,
            None => true,
        };
        if self.last_seen.len() >= self.prune_at {
            let horizon = rec.ts_ms - self.window_ms;
            self.last_seen.retain(|_, ts| *ts >= horizon);
            self.prune_at = (self.last_seen.len() * 2).max(1024);
        }
        keep
    }
}

/// Removes sub-window duplicate bursts from a sorted stream.
pub fn dedup_bursts(stream: &UserStream, window_ms: i64) -> Result<UserStream> {
    let mut filter = BurstFilter::new(window_ms)?;
    let records = stream.records.iter().filter(|r| filter.admit(r)).cloned().collect();
    Ok(UserStream { user: stream.user.clone(), records })
}

/// Keeps users with at least `min_requests` requests and at least
/// `min_jumps` empty-referrer requests. Returns the survivors and the number
/// of users removed.
pub fn filter_low_activity(
    streams: Vec<UserStream>,
    min_requests: usize,
    min_jumps: usize,
) -> (Vec<UserStream>, usize) {
    let before = streams.len();
    let kept: Vec<UserStream> = streams
        .into_iter()
        .filter(|s| s.len() >= min_requests && s.jumps() >= min_jumps)
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}
