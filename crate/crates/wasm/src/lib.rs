//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export takes plain numbers or text and returns a JSON string the
//! page draws on a canvas. The work happens in the `*_json` functions, which
//! are ordinary Rust and tested natively.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use wss_core::fit::{fit_powerlaw_lsq_with, fit_powerlaw_mle, log_binned_pdf, TailCut};
use wss_core::ingest::{group_users, ClickLogReader};
use wss_core::session::logical_sessions_timeout;
use wss_core::session::{logical_sessions, SessionTree};
use wss_core::sweep::{logical_baseline, logical_timeout_sweep, timeout_sweep, RowStats, DEFAULT_TIMEOUTS_S};
use wss_core::synth::{generate, SynthConfig};

/// Largest synthetic population the page may request.
const MAX_DEMO_USERS: usize = 200;
/// Largest power-law sample the page may request.
const MAX_DEMO_SAMPLES: usize = 1_000_000;

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// A short synthetic log for the session view, as Click Log v1 text.
#[wasm_bindgen]
pub fn sample_log(users: usize, requests: usize, branch_prob: f64, seed: u64) -> Result<String, JsValue> {
    to_js(sample_log_text(users, requests, branch_prob, seed))
}

/// Logical sessions of a Click Log v1 text, with every node, as JSON.
#[wasm_bindgen]
pub fn sessionize(log: &str, timeout_s: f64) -> Result<String, JsValue> {
    to_js(sessionize_json(log, timeout_s))
}

/// Timeout and logical-timeout sweep curves for a synthetic population.
#[wasm_bindgen]
pub fn sweep_curves(users: usize, branch_prob: f64, seed: u64) -> Result<String, JsValue> {
    to_js(sweep_json(users, branch_prob, seed))
}

/// Log-binned density of a seeded Pareto sample with both fitted exponents.
#[wasm_bindgen]
pub fn powerlaw_fit(tau: f64, n: usize, bins_per_decade: u32, seed: u64) -> Result<String, JsValue> {
    to_js(powerlaw_json(tau, n, bins_per_decade, seed))
}

pub fn sample_log_text(users: usize, requests: usize, branch_prob: f64, seed: u64) -> Result<String, String> {
    if users == 0 || users > 20 || requests == 0 || requests > 2_000 {
        return Err("sample logs are limited to 20 users of 2000 requests".into());
    }
    let cfg = SynthConfig {
        n_users: users,
        requests_lognormal: ((requests as f64).ln(), 0.0),
        min_requests: requests,
        branch_prob,
        url_pool: 12,
        paths_per_host: 6,
        seed,
        ..SynthConfig::default()
    };
    let recs = generate(&cfg).map_err(|e| e.to_string())?;
    Ok(recs.iter().map(|r| r.record.to_line() + "\n").collect())
}

#[derive(Serialize)]
struct NodeOut {
    url: String,
    parent: Option<usize>,
    depth: u32,
    requests: u32,
}

#[derive(Serialize)]
struct TreeOut {
    user: String,
    id: u64,
    node_count: usize,
    depth: u32,
    ratio: f64,
    duration_ms: i64,
    nodes: Vec<NodeOut>,
}

#[derive(Serialize)]
struct SessionsOut {
    records: usize,
    malformed: usize,
    users: usize,
    mean_ratio: f64,
    trees: Vec<TreeOut>,
}

fn tree_out(t: &SessionTree) -> TreeOut {
    let m = t.metrics();
    TreeOut {
        user: t.user.clone(),
        id: t.id,
        node_count: m.node_count,
        depth: m.depth,
        ratio: m.node_depth_ratio,
        duration_ms: m.duration_ms,
        nodes: t
            .nodes
            .iter()
            .map(|n| NodeOut { url: n.url.to_string(), parent: n.parent, depth: n.depth, requests: n.request_count })
            .collect(),
    }
}

/// `timeout_s <= 0` means no timeout.
pub fn sessionize_json(log: &str, timeout_s: f64) -> Result<String, String> {
    let mut reader = ClickLogReader::new(log.as_bytes(), false);
    let records: Vec<_> = reader.by_ref().filter_map(|r| r.ok().and_then(Result::ok)).collect();
    if records.is_empty() {
        return Err("no valid records in the log".into());
    }
    let streams = group_users(records);
    let mut trees = Vec::new();
    for s in &streams {
        let t = if timeout_s > 0.0 {
            logical_sessions_timeout(s, (timeout_s * 1000.0).round().max(1.0) as i64)
        } else {
            logical_sessions(s)
        };
        trees.extend(t.map_err(|e| e.to_string())?);
    }
    let nontrivial: Vec<f64> =
        trees.iter().map(SessionTree::metrics).filter(|m| m.is_nontrivial()).map(|m| m.node_depth_ratio).collect();
    let mean_ratio =
        if nontrivial.is_empty() { 1.0 } else { nontrivial.iter().sum::<f64>() / nontrivial.len() as f64 };
    let out = SessionsOut {
        records: reader.records_read(),
        malformed: reader.malformed(),
        users: streams.len(),
        mean_ratio,
        trees: trees.iter().map(tree_out).collect(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SweepOut {
    timeouts_s: Vec<f64>,
    timeout_sessions_per_user: Vec<f64>,
    timeout_mean_duration_s: Vec<f64>,
    logical_sessions_per_user: Vec<f64>,
    logical_mean_nodes: Vec<f64>,
    logical_mean_ratio: Vec<f64>,
    /// The timeout-free logical row.
    baseline_sessions_per_user: f64,
    baseline_mean_nodes: f64,
}

pub fn sweep_json(users: usize, branch_prob: f64, seed: u64) -> Result<String, String> {
    if users == 0 || users > MAX_DEMO_USERS {
        return Err(format!("users must be between 1 and {MAX_DEMO_USERS}"));
    }
    let cfg = SynthConfig {
        n_users: users,
        requests_lognormal: (300f64.ln(), 0.5),
        branch_prob,
        seed,
        ..SynthConfig::default()
    };
    let streams = group_users(generate(&cfg).map_err(|e| e.to_string())?.into_iter().map(|r| r.record));
    let err = |e: wss_core::Error| e.to_string();
    let t = timeout_sweep(&streams, &DEFAULT_TIMEOUTS_S).map_err(err)?;
    let l = logical_timeout_sweep(&streams, &DEFAULT_TIMEOUTS_S).map_err(err)?;
    let base = logical_baseline(&streams).map_err(err)?;
    let logical = |r: &wss_core::sweep::SweepRow| match r.stats {
        RowStats::Logical { mean_nodes, mean_ratio, .. } => (mean_nodes, mean_ratio),
        RowStats::Timeout { .. } => (f64::NAN, f64::NAN),
    };
    let out = SweepOut {
        timeouts_s: DEFAULT_TIMEOUTS_S.to_vec(),
        timeout_sessions_per_user: t.iter().map(|r| r.sessions_per_user).collect(),
        timeout_mean_duration_s: t
            .iter()
            .map(|r| match r.stats {
                RowStats::Timeout { mean_duration_s, .. } => mean_duration_s,
                RowStats::Logical { .. } => f64::NAN,
            })
            .collect(),
        logical_sessions_per_user: l.iter().map(|r| r.sessions_per_user).collect(),
        logical_mean_nodes: l.iter().map(|r| logical(r).0).collect(),
        logical_mean_ratio: l.iter().map(|r| logical(r).1).collect(),
        baseline_sessions_per_user: base.sessions_per_user,
        baseline_mean_nodes: logical(&base).0,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct BinOut {
    lo: f64,
    hi: f64,
    pdf: f64,
    count: u64,
}

#[derive(Serialize)]
struct PowerLawOut {
    n: usize,
    bins: Vec<BinOut>,
    lsq_exponent: f64,
    lsq_r2: f64,
    lsq_first_empty_exponent: Option<f64>,
    mle_exponent: f64,
}

pub fn powerlaw_json(tau: f64, n: usize, bins_per_decade: u32, seed: u64) -> Result<String, String> {
    if !(tau > 1.0 && tau < 10.0) {
        return Err("exponent must lie in (1, 10)".into());
    }
    if !(100..=MAX_DEMO_SAMPLES).contains(&n) {
        return Err(format!("sample size must be between 100 and {MAX_DEMO_SAMPLES}"));
    }
    if !(1..=50).contains(&bins_per_decade) {
        return Err("bins per decade must be between 1 and 50".into());
    }
    let dist = Pareto::new(1.0, tau - 1.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
    let err = |e: wss_core::Error| e.to_string();
    let h = log_binned_pdf(&xs, bins_per_decade).map_err(err)?;
    let lsq = fit_powerlaw_lsq_with(&h, TailCut::AllOccupied).map_err(err)?;
    let first_empty = fit_powerlaw_lsq_with(&h, TailCut::FirstEmpty).ok().and_then(|f| f.exponent());
    let mle = fit_powerlaw_mle(&xs, 1.0).map_err(err)?;
    let out = PowerLawOut {
        n,
        bins: h.bins.iter().map(|b| BinOut { lo: b.lo, hi: b.hi, pdf: b.pdf, count: b.count }).collect(),
        lsq_exponent: lsq.exponent().unwrap_or(f64::NAN),
        lsq_r2: lsq.r2.unwrap_or(f64::NAN),
        lsq_first_empty_exponent: first_empty,
        mle_exponent: mle.exponent().unwrap_or(f64::NAN),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}
