//! Shared test oracles and stream generators.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wss_core::session::SessionTree;
use wss_core::{ClickRecord, Url, UserStream};

/// One node as the oracle sees it: url, parent url, depth, added ts, count.
pub type OracleNode = (Url, Option<Url>, u32, i64, u32);

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSession {
    pub nodes: Vec<OracleNode>,
}

impl OracleSession {
    fn find(&self, url: &Url) -> Option<usize> {
        self.nodes.iter().position(|n| &n.0 == url)
    }
}

/// Brute-force referrer-tree sessionizer.
///
/// For each request it rescans the entire history backwards for the most
/// recent request that put the referrer into a session, either as target or
/// as the synthesized root of a new tree. No URL map is kept.
pub fn oracle_sessions(records: &[ClickRecord], timeout_ms: Option<i64>) -> (Vec<usize>, Vec<OracleSession>) {
    let mut assign: Vec<usize> = Vec::with_capacity(records.len());
    // true when record j opened a tree rooted at its referrer
    let mut rooted_at_referrer: Vec<bool> = Vec::with_capacity(records.len());
    let mut sessions: Vec<OracleSession> = Vec::new();

    for (i, rec) in records.iter().enumerate() {
        let Some(r) = &rec.referrer else {
            sessions.push(OracleSession { nodes: vec![(rec.target.clone(), None, 1, rec.ts_ms, 1)] });
            assign.push(sessions.len() - 1);
            rooted_at_referrer.push(false);
            continue;
        };
        let mut found = None;
        for j in (0..i).rev() {
            let used = records[j].target == *r || (rooted_at_referrer[j] && records[j].referrer.as_ref() == Some(r));
            if used {
                found = Some(assign[j]);
                break;
            }
        }
        if let Some(s) = found {
            let p = sessions[s].find(r).expect("referrer was put into this session");
            let (_, _, pdepth, padded, _) = sessions[s].nodes[p];
            if timeout_ms.is_none_or(|t| rec.ts_ms - padded <= t) {
                match sessions[s].find(&rec.target) {
                    Some(k) => sessions[s].nodes[k].4 += 1,
                    None => sessions[s].nodes.push((rec.target.clone(), Some(r.clone()), pdepth + 1, rec.ts_ms, 1)),
                }
                assign.push(s);
                rooted_at_referrer.push(false);
                continue;
            }
        }
        if *r == rec.target {
            sessions.push(OracleSession { nodes: vec![(rec.target.clone(), None, 1, rec.ts_ms, 1)] });
            rooted_at_referrer.push(false);
        } else {
            sessions.push(OracleSession {
                nodes: vec![
                    (r.clone(), None, 1, rec.ts_ms, 0),
                    (rec.target.clone(), Some(r.clone()), 2, rec.ts_ms, 1),
                ],
            });
            rooted_at_referrer.push(true);
        }
        assign.push(sessions.len() - 1);
    }
    (assign, sessions)
}

/// Converts a sessionizer tree into the oracle's representation.
pub fn as_oracle(tree: &SessionTree) -> OracleSession {
    let nodes = tree
        .nodes
        .iter()
        .map(|n| (n.url.clone(), tree.parent_url(n).cloned(), n.depth, n.added_ts, n.request_count))
        .collect();
    OracleSession { nodes }
}

pub fn url(k: usize) -> Url {
    Url::from_parts(&format!("s{}.test", k % 4), &format!("/{k}")).unwrap()
}

/// Random stream: at most `max_len` records over at most `universe` URLs.
/// A request jumps with `jump_prob`; otherwise its referrer is usually an
/// earlier target and sometimes an arbitrary URL.
pub fn random_stream(seed: u64, max_len: usize, universe: usize, jump_prob: f64) -> UserStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(1..=max_len);
    let universe = rng.random_range(1..=universe);
    let mut ts = rng.random_range(0..1_000_000i64);
    let mut seen: Vec<usize> = Vec::new();
    let mut records = Vec::with_capacity(len);
    for _ in 0..len {
        ts += rng.random_range(0..5_000);
        let target = rng.random_range(0..universe);
        let referrer = if rng.random::<f64>() < jump_prob {
            None
        } else if !seen.is_empty() && rng.random::<f64>() < 0.75 {
            Some(seen[rng.random_range(0..seen.len())])
        } else {
            Some(rng.random_range(0..universe))
        };
        seen.push(target);
        records.push(ClickRecord {
            ts_ms: ts,
            user: "r".into(),
            target: url(target),
            referrer: referrer.map(url),
            is_browser: true,
        });
    }
    UserStream::new("r", records).unwrap()
}
