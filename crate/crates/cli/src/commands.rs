use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;

use wss_core::anomaly::{build_population_model, score_user, Flag, UserFeatures};
use wss_core::fit::{
    fit_bimodal_lognormal, fit_lognormal, fit_normal, fit_powerlaw_lsq, fit_powerlaw_mle, fit_powerlaw_mle_ks,
    log_binned_pdf, per_user_exponents, ExponentOptions, FitResult, LogHistogram,
};
use wss_core::ingest::{filter_low_activity, group_users, is_page_request, BurstFilter};
use wss_core::session::{
    logical_sessions, logical_sessions_timeout, rolling_avg_sessions, timeout_sessions, MultiUserSessionizer,
    RecordGroup, SessionTree,
};
use wss_core::stats::{host_stats, portal_report, user_profile, HostTable, UserProfile};
use wss_core::sweep::{
    logical_baseline, logical_timeout_sweep, timeout_grid_ms, timeout_sweep, SweepRow, DEFAULT_TIMEOUTS_S,
};
use wss_core::synth::{truth_line, SynthConfig, SynthStream};
use wss_core::{ClickRecord, Error, UserStream};

use crate::{
    create_output, for_each_record, is_stdio, par_map, read_all, seconds_to_ms, AnomalyArgs, CmdResult, Failure,
    FitArgs, IngestArgs, SessionMechanism, SessionizeArgs, StatsArgs, SweepArgs, SweepMechanism, SynthArgs,
};

type Res<T> = std::result::Result<T, Failure>;

struct IngestFilter {
    keep_non_pages: bool,
    window_ms: Option<i64>,
    bursts: HashMap<String, BurstFilter>,
    non_page: usize,
    burst_dropped: usize,
}

impl IngestFilter {
    fn new(a: &IngestArgs) -> Res<IngestFilter> {
        let window_ms = (!a.no_dedup).then_some(a.burst_window_ms);
        if let Some(w) = window_ms {
            BurstFilter::new(w)?;
        }
        Ok(IngestFilter {
            keep_non_pages: a.keep_non_pages,
            window_ms,
            bursts: HashMap::new(),
            non_page: 0,
            burst_dropped: 0,
        })
    }

    fn admit(&mut self, rec: &ClickRecord) -> bool {
        if !self.keep_non_pages && !is_page_request(&rec.target) {
            self.non_page += 1;
            return false;
        }
        let Some(w) = self.window_ms else { return true };
        let filter = match self.bursts.get_mut(&rec.user) {
            Some(f) => f,
            None => self.bursts.entry(rec.user.clone()).or_insert(BurstFilter::new(w).expect("validated")),
        };
        let keep = filter.admit(rec);
        self.burst_dropped += usize::from(!keep);
        keep
    }
}

pub fn ingest(a: &IngestArgs) -> CmdResult {
    if a.low_activity && is_stdio(&a.input.input) {
        return Err(Failure::Usage("--low-activity reads the input twice and needs a file, not stdin".into()));
    }
    // first pass: per-user activity of the records that survive filtering
    let keep_users: Option<HashSet<String>> = if a.low_activity {
        let mut filter = IngestFilter::new(a)?;
        let mut activity: HashMap<String, (usize, usize)> = HashMap::new();
        for_each_record(&a.input, |rec| {
            if filter.admit(&rec) {
                let e = activity.entry(rec.user.clone()).or_default();
                e.0 += 1;
                e.1 += usize::from(rec.is_jump());
            }
            Ok(())
        })?;
        Some(
            activity
                .into_iter()
                .filter(|(_, (n, j))| *n >= a.min_requests && *j >= a.min_jumps)
                .map(|(u, _)| u)
                .collect(),
        )
    } else {
        None
    };

    let mut out = create_output(&a.out)?;
    let mut filter = IngestFilter::new(a)?;
    let mut users = HashSet::new();
    let mut dropped_users = HashSet::new();
    let mut written = 0usize;
    let counts = for_each_record(&a.input, |rec| {
        if !filter.admit(&rec) {
            return Ok(());
        }
        if keep_users.as_ref().is_some_and(|k| !k.contains(&rec.user)) {
            if !dropped_users.contains(&rec.user) {
                dropped_users.insert(rec.user.clone());
            }
            return Ok(());
        }
        if !users.contains(&rec.user) {
            users.insert(rec.user.clone());
        }
        writeln!(out, "{}", rec.to_line())?;
        written += 1;
        Ok(())
    })?;
    out.flush()?;
    eprintln!(
        "ingest: {} records read ({} malformed skipped), {} non-page, {} bursts, {} low-activity users dropped; {} written for {} users",
        counts.records,
        counts.malformed,
        filter.non_page,
        filter.burst_dropped,
        dropped_users.len(),
        written,
        users.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct NodeRow {
    url: String,
    parent: Option<usize>,
    depth: u32,
    added_ts: i64,
    request_count: u32,
}

#[derive(Serialize)]
struct SessionRow<'a> {
    user: &'a str,
    id: u64,
    mechanism: &'static str,
    created_ts: i64,
    duration_ms: i64,
    node_count: Option<usize>,
    request_count: u64,
    depth: Option<u32>,
    ratio: Option<f64>,
    root_host: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    distinct_hosts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nodes: Option<Vec<NodeRow>>,
}

fn tree_line(tree: &SessionTree, mechanism: &'static str, dump: bool) -> Res<String> {
    let m = tree.metrics();
    let nodes = dump.then(|| {
        tree.nodes
            .iter()
            .map(|n| NodeRow {
                url: n.url.to_string(),
                parent: n.parent,
                depth: n.depth,
                added_ts: n.added_ts,
                request_count: n.request_count,
            })
            .collect()
    });
    let row = SessionRow {
        user: &tree.user,
        id: tree.id,
        mechanism,
        created_ts: tree.created_ts,
        duration_ms: m.duration_ms,
        node_count: Some(m.node_count),
        request_count: m.request_count,
        depth: Some(m.depth),
        ratio: Some(m.node_depth_ratio),
        root_host: tree.root().host(),
        distinct_hosts: None,
        nodes,
    };
    Ok(serde_json::to_string(&row)?)
}

fn group_line(stream: &UserStream, id: usize, g: &RecordGroup, mechanism: &'static str) -> Res<String> {
    let row = SessionRow {
        user: &stream.user,
        id: id as u64,
        mechanism,
        created_ts: g.start_ts,
        duration_ms: g.duration_ms(),
        node_count: None,
        request_count: g.len() as u64,
        depth: None,
        ratio: None,
        root_host: g.records(stream)[0].target.host(),
        distinct_hosts: Some(g.distinct_hosts),
        nodes: None,
    };
    Ok(serde_json::to_string(&row)?)
}

enum Segmenter {
    Logical(Option<i64>),
    Timeout(i64),
    Rolling(i64, f64),
}

impl Segmenter {
    fn from_args(a: &SessionizeArgs) -> Res<(Segmenter, &'static str)> {
        let need = |v: Option<f64>, name: &str| {
            let mechanism = a.mechanism.to_possible_value().expect("no skipped variants");
            v.ok_or_else(|| Failure::Usage(format!("--mechanism {} needs --{name}", mechanism.get_name())))
        };
        Ok(match a.mechanism {
            SessionMechanism::Logical => (Segmenter::Logical(None), "logical"),
            SessionMechanism::LogicalTimeout => {
                let t = seconds_to_ms("timeout", need(a.timeout, "timeout")?)?;
                (Segmenter::Logical(Some(t)), "logical_timeout")
            }
            SessionMechanism::Timeout => {
                (Segmenter::Timeout(seconds_to_ms("timeout", need(a.timeout, "timeout")?)?), "timeout")
            }
            SessionMechanism::Rolling => {
                let w = seconds_to_ms("window", need(a.window, "window")?)?;
                let th = need(a.threshold, "threshold")?;
                if !(th > 0.0 && th.is_finite()) {
                    return Err(Failure::Usage(format!("--threshold must be positive, got {th}")));
                }
                (Segmenter::Rolling(w, th), "rolling")
            }
        })
    }

    fn lines(&self, stream: &UserStream, mechanism: &'static str, dump: bool) -> Res<Vec<String>> {
        match *self {
            Segmenter::Logical(timeout) => {
                let trees = match timeout {
                    Some(t) => logical_sessions_timeout(stream, t)?,
                    None => logical_sessions(stream)?,
                };
                trees.iter().map(|t| tree_line(t, mechanism, dump)).collect()
            }
            Segmenter::Timeout(t) => {
                let groups = timeout_sessions(stream, t)?;
                groups.iter().enumerate().map(|(i, g)| group_line(stream, i, g, mechanism)).collect()
            }
            Segmenter::Rolling(w, th) => {
                let groups = rolling_avg_sessions(stream, w, th)?;
                groups.iter().enumerate().map(|(i, g)| group_line(stream, i, g, mechanism)).collect()
            }
        }
    }
}

pub fn sessionize(a: &SessionizeArgs) -> CmdResult {
    let (segmenter, mechanism) = Segmenter::from_args(a)?;
    if a.stream {
        let Segmenter::Logical(timeout) = segmenter else {
            return Err(Failure::Usage("--stream applies to the logical mechanisms only".into()));
        };
        return sessionize_streaming(a, timeout, mechanism);
    }
    let (records, counts) = read_all(&a.input)?;
    let streams = group_users(records);
    let per_user = par_map(&streams, a.workers.workers, |s| segmenter.lines(s, mechanism, a.dump_trees));
    let mut out = create_output(&a.out)?;
    let mut sessions = 0;
    for lines in per_user {
        for line in lines? {
            writeln!(out, "{line}")?;
            sessions += 1;
        }
    }
    out.flush()?;
    eprintln!(
        "sessionize: {} records ({} malformed skipped), {} users, {sessions} {mechanism} sessions",
        counts.records,
        counts.malformed,
        streams.len()
    );
    Ok(())
}

fn sessionize_streaming(a: &SessionizeArgs, timeout: Option<i64>, mechanism: &'static str) -> CmdResult {
    let mut sessionizer = MultiUserSessionizer::new(timeout)?;
    let mut out = create_output(&a.out)?;
    let mut sessions = 0;
    let counts = for_each_record(&a.input, |rec| {
        // out-of-order input is a property of the data, not of the flags
        sessionizer.push(&rec).map_err(|e| Failure::Data(e.to_string()))?;
        for tree in sessionizer.drain_finished() {
            writeln!(out, "{}", tree_line(&tree, mechanism, a.dump_trees)?)?;
            sessions += 1;
        }
        Ok(())
    })?;
    let users = sessionizer.users();
    let peak = sessionizer.peak_state_size();
    for tree in sessionizer.finish() {
        writeln!(out, "{}", tree_line(&tree, mechanism, a.dump_trees)?)?;
        sessions += 1;
    }
    out.flush()?;
    eprintln!(
        "sessionize: {} records ({} malformed skipped), {users} users, {sessions} {mechanism} sessions, peak live state {peak}",
        counts.records, counts.malformed
    );
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn profiles(streams: &[UserStream], workers: u16) -> Res<Vec<UserProfile>> {
    par_map(streams, workers, user_profile).into_iter().map(|p| p.map_err(Failure::from)).collect()
}

fn hosts(streams: &[UserStream], workers: u16) -> HostTable {
    let mut table = HostTable::default();
    for t in par_map(streams, workers, |s| host_stats(&s.records)) {
        table.merge(t);
    }
    table
}

fn out_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn ensure_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))
}

fn csv_writer(path: &Path) -> Res<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(create_output(path)?))
}

pub fn stats(a: &StatsArgs) -> CmdResult {
    let portals: HashSet<String> = a.portals.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let (records, counts) = read_all(&a.input)?;
    let streams = group_users(records);
    ensure_dir(&a.out_dir)?;

    let table = hosts(&streams, a.workers.workers);
    let mut w = csv_writer(&out_file(&a.out_dir, "hosts.csv"))?;
    w.write_record(["host", "in_strength", "out_strength", "in_users", "out_users"])?;
    for (host, h) in &table.hosts {
        w.write_record([
            host.clone(),
            h.in_strength.to_string(),
            h.out_strength.to_string(),
            h.in_users.len().to_string(),
            h.out_users.len().to_string(),
        ])?;
    }
    w.flush()?;

    let profiles = profiles(&streams, a.workers.workers)?;
    let mut w = csv_writer(&out_file(&a.out_dir, "users.csv"))?;
    w.write_record(["user", "total", "jumps", "jump_ratio", "rate_rps", "ref_host_ratio", "active_span_s"])?;
    for p in &profiles {
        let rate = p.rate_rps.filter(|_| p.total_requests >= a.min_rate_requests);
        w.write_record([
            p.user.clone(),
            p.total_requests.to_string(),
            p.jump_requests.to_string(),
            p.jump_ratio.to_string(),
            opt(rate),
            opt(p.ref_host_ratio),
            p.active_span_s.to_string(),
        ])?;
    }
    w.flush()?;

    if !portals.is_empty() {
        let report = portal_report(streams.iter().flat_map(|s| &s.records), &portals)?;
        let mut w = csv_writer(&out_file(&a.out_dir, "portals.csv"))?;
        w.write_record(["user", "portal_fraction"])?;
        for (user, f) in report {
            w.write_record([user, f.to_string()])?;
        }
        w.flush()?;
    }
    eprintln!(
        "stats: {} records ({} malformed skipped), {} users, {} hosts",
        counts.records,
        counts.malformed,
        streams.len(),
        table.hosts.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct FitRow {
    quantity: String,
    method: &'static str,
    #[serde(flatten)]
    fit: FitResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
}

struct Fitter<'a> {
    args: &'a FitArgs,
    rows: Vec<FitRow>,
    histograms: Vec<(String, LogHistogram)>,
    skipped: Vec<String>,
}

impl Fitter<'_> {
    fn keep(&mut self, quantity: &str, method: &'static str, fit: wss_core::Result<FitResult>) {
        match fit {
            Ok(fit) => self.rows.push(FitRow { quantity: quantity.into(), method, fit, weight: None }),
            Err(e) => self.skipped.push(format!("{quantity}/{method} ({e})")),
        }
    }

    fn power_law(&mut self, quantity: &str, samples: &[f64]) {
        let xs: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0).collect();
        match log_binned_pdf(&xs, self.args.bins_per_decade) {
            Ok(h) => {
                self.keep(quantity, "lsq", fit_powerlaw_lsq(&h));
                self.histograms.push((quantity.into(), h));
            }
            Err(e) => self.skipped.push(format!("{quantity}/lsq ({e})")),
        }
        let mle = if self.args.ks {
            fit_powerlaw_mle_ks(&xs)
        } else {
            match xs.iter().copied().reduce(f64::min) {
                Some(x_min) => fit_powerlaw_mle(&xs, x_min),
                None => Err(Error::InsufficientData("no positive samples".into())),
            }
        };
        self.keep(quantity, "mle", mle);
    }

    fn lognormal(&mut self, quantity: &str, samples: &[f64]) {
        let xs: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0).collect();
        self.keep(quantity, "moments", fit_lognormal(&xs));
    }

    fn bimodal(&mut self, quantity: &str, samples: &[f64]) {
        let xs: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0).collect();
        match fit_bimodal_lognormal(&xs) {
            Ok(m) => {
                for (k, (fit, w)) in [(m.comp1, m.weight1), (m.comp2, 1.0 - m.weight1)].into_iter().enumerate() {
                    let quantity = format!("{quantity}.{}", k + 1);
                    self.rows.push(FitRow { quantity, method: "em", fit, weight: Some(w) });
                }
            }
            Err(e) => self.skipped.push(format!("{quantity}/em ({e})")),
        }
    }

    fn exponents(&mut self, quantity: &str, per_user: &[(String, Vec<f64>)]) {
        let opts = ExponentOptions {
            min_samples: self.args.min_samples,
            bins_per_decade: self.args.bins_per_decade,
            ..ExponentOptions::default()
        };
        let fit = per_user_exponents(per_user, opts).map(|s| FitResult { r2: Some(s.mean_r2), ..s.normal });
        self.keep(quantity, "per_user_lsq", fit);
    }
}

/// Per-user session figures over non-trivial logical sessions.
struct SessionFigures {
    durations_s: Vec<f64>,
    nodes: Vec<f64>,
    depths: Vec<f64>,
    mean_requests: Option<f64>,
    mean_depth: Option<f64>,
    mean_ratio: Option<f64>,
}

fn session_figures(stream: &UserStream) -> wss_core::Result<SessionFigures> {
    let metrics: Vec<_> = logical_sessions(stream)?.iter().map(SessionTree::metrics).collect();
    let nontrivial: Vec<_> = metrics.iter().filter(|m| m.is_nontrivial()).collect();
    let n = nontrivial.len() as f64;
    let mean = |f: &dyn Fn(&wss_core::session::SessionMetrics) -> f64| {
        (!nontrivial.is_empty()).then(|| nontrivial.iter().map(|m| f(m)).sum::<f64>() / n)
    };
    Ok(SessionFigures {
        durations_s: metrics.iter().map(|m| m.duration_ms as f64 / 1000.0).filter(|d| *d > 0.0).collect(),
        nodes: metrics.iter().map(|m| m.node_count as f64).collect(),
        depths: metrics.iter().map(|m| f64::from(m.depth)).collect(),
        mean_requests: mean(&|m| m.request_count as f64),
        mean_depth: mean(&|m| f64::from(m.depth)),
        mean_ratio: mean(&|m| m.node_depth_ratio),
    })
}

pub fn fit(a: &FitArgs) -> CmdResult {
    if a.bins_per_decade == 0 {
        return Err(Failure::Usage("--bins-per-decade must be at least 1".into()));
    }
    let (records, counts) = read_all(&a.input)?;
    let mut streams = group_users(records);
    let mut removed = 0;
    if a.low_activity {
        (streams, removed) = filter_low_activity(streams, a.min_requests, a.min_jumps);
    }
    if streams.is_empty() {
        return Err(Failure::Data("no users to fit".into()));
    }
    ensure_dir(&a.out_dir)?;
    let workers = a.workers.workers;
    let table = hosts(&streams, workers);
    let profiles = profiles(&streams, workers)?;
    let figures: Vec<SessionFigures> =
        par_map(&streams, workers, session_figures).into_iter().collect::<wss_core::Result<_>>()?;

    let mut f = Fitter { args: a, rows: Vec::new(), histograms: Vec::new(), skipped: Vec::new() };
    let col = |g: fn(&wss_core::stats::HostStats) -> f64| table.hosts.values().map(g).collect::<Vec<f64>>();
    f.power_law("host_in_strength", &col(|h| h.in_strength as f64));
    f.power_law("host_out_strength", &col(|h| h.out_strength as f64));
    f.power_law("host_in_users", &col(|h| h.in_users.len() as f64));
    f.power_law("host_out_users", &col(|h| h.out_users.len() as f64));

    let by_user = |g: fn(&UserProfile) -> Option<f64>| profiles.iter().filter_map(g).collect::<Vec<f64>>();
    f.lognormal("requests_per_user", &by_user(|p| Some(p.total_requests as f64)));
    f.lognormal("jump_ratio", &by_user(|p| Some(p.jump_ratio)));
    let min_rate = wss_core::stats::DEFAULT_RATE_MIN_REQUESTS;
    let rates: Vec<f64> = profiles.iter().filter(|p| p.total_requests >= min_rate).filter_map(|p| p.rate_rps).collect();
    f.lognormal("rate_rps", &rates);
    f.bimodal("ref_host_ratio", &by_user(|p| p.ref_host_ratio));

    let interclicks: Vec<(String, Vec<f64>)> =
        profiles.iter().map(|p| (p.user.clone(), p.positive_interclicks())).collect();
    let pooled: Vec<f64> = interclicks.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    f.power_law("interclick_s", &pooled);
    f.exponents("interclick_exponent", &interclicks);

    let durations: Vec<(String, Vec<f64>)> =
        streams.iter().zip(&figures).map(|(s, g)| (s.user.clone(), g.durations_s.clone())).collect();
    let pooled: Vec<f64> = durations.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    f.power_law("session_duration_s", &pooled);
    f.exponents("session_duration_exponent", &durations);
    let all = |g: fn(&SessionFigures) -> &Vec<f64>| figures.iter().flat_map(|x| g(x).iter().copied()).collect::<Vec<_>>();
    f.power_law("session_nodes", &all(|x| &x.nodes));
    f.power_law("session_depth", &all(|x| &x.depths));
    let means = |g: fn(&SessionFigures) -> Option<f64>| figures.iter().filter_map(g).collect::<Vec<f64>>();
    f.lognormal("session_requests_per_user", &means(|x| x.mean_requests));
    f.lognormal("session_depth_per_user", &means(|x| x.mean_depth));
    let ratios = means(|x| x.mean_ratio);
    f.keep("session_ratio_per_user", "moments", fit_normal(&ratios));

    if f.rows.is_empty() {
        return Err(Failure::Data(format!("no distribution could be fitted: {}", f.skipped.join("; "))));
    }
    let mut out = create_output(&out_file(&a.out_dir, "fits.json"))?;
    serde_json::to_writer_pretty(&mut out, &f.rows)?;
    writeln!(out)?;
    out.flush()?;
    for (quantity, h) in &f.histograms {
        let mut w = csv_writer(&out_file(&a.out_dir, &format!("hist_{quantity}.csv")))?;
        w.write_record(["bin_lo", "bin_hi", "pdf"])?;
        for b in &h.bins {
            w.write_record([b.lo.to_string(), b.hi.to_string(), b.pdf.to_string()])?;
        }
        w.flush()?;
    }
    eprintln!(
        "fit: {} records ({} malformed skipped), {} users ({removed} low-activity removed), {} fits, {} histograms{}",
        counts.records,
        counts.malformed,
        streams.len(),
        f.rows.len(),
        f.histograms.len(),
        if f.skipped.is_empty() { String::new() } else { format!("; skipped {}", f.skipped.join(", ")) }
    );
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> CmdResult {
    let timeouts: Vec<f64> = if a.timeouts.is_empty() { DEFAULT_TIMEOUTS_S.to_vec() } else { a.timeouts.clone() };
    timeout_grid_ms(&timeouts)?;

    let (records, counts) = read_all(&a.input)?;
    let streams = group_users(records);
    let workers = a.workers.workers;
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut collect = |cells: Vec<wss_core::Result<Vec<SweepRow>>>| -> CmdResult {
        for c in cells {
            rows.extend(c?);
        }
        Ok(())
    };
    if matches!(a.mechanism, SweepMechanism::Timeout | SweepMechanism::Both) {
        collect(par_map(&timeouts, workers, |t| timeout_sweep(&streams, &[*t])))?;
    }
    if matches!(a.mechanism, SweepMechanism::LogicalTimeout | SweepMechanism::Both) {
        collect(par_map(&timeouts, workers, |t| logical_timeout_sweep(&streams, &[*t])))?;
        rows.push(logical_baseline(&streams)?);
    }
    let mut out = create_output(&a.out)?;
    writeln!(out, "{}", SweepRow::CSV_HEADER)?;
    for r in &rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    out.flush()?;
    eprintln!(
        "sweep: {} records ({} malformed skipped), {} users, {} rows",
        counts.records,
        counts.malformed,
        streams.len(),
        rows.len()
    );
    Ok(())
}

fn synth_config(a: &SynthArgs) -> Res<SynthConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            SynthConfig::from_kv_str(&text)?
        }
        None => SynthConfig::default(),
    };
    let overrides: [(&str, Option<String>); 14] = [
        ("users", a.users.map(|v| v.to_string())),
        ("requests_mu", a.requests_mu.map(|v| v.to_string())),
        ("requests_sigma", a.requests_sigma.map(|v| v.to_string())),
        ("min_requests", a.min_requests.map(|v| v.to_string())),
        ("jump_prob", a.jump_prob.map(|v| v.to_string())),
        ("tau_mean", a.tau_mean.map(|v| v.to_string())),
        ("tau_sd", a.tau_sd.map(|v| v.to_string())),
        ("x_min_s", a.x_min.map(|v| v.to_string())),
        ("max_gap_s", a.max_gap.map(|v| v.to_string())),
        ("branch_prob", a.branch_prob.map(|v| v.to_string())),
        ("url_pool", a.url_pool.map(|v| v.to_string())),
        ("paths_per_host", a.paths_per_host.map(|v| v.to_string())),
        ("start_ts_ms", a.start_ts_ms.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth(a: &SynthArgs) -> CmdResult {
    let cfg = synth_config(a)?;
    let truth_path = match &a.truth {
        Some(p) => p.clone(),
        None if is_stdio(&a.out) => PathBuf::from("synth.truth.tsv"),
        None => a.out.with_extension("truth.tsv"),
    };
    let mut stream = SynthStream::new(&cfg)?;
    let mut log = create_output(&a.out)?;
    let mut truth = create_output(&truth_path)?;
    writeln!(truth, "user\tline_no\tsession_id")?;
    let mut n = 0;
    for rec in stream.by_ref() {
        n += 1;
        writeln!(log, "{}", rec.record.to_line())?;
        writeln!(truth, "{}", truth_line(&rec, n))?;
    }
    log.flush()?;
    truth.flush()?;
    eprintln!(
        "synth: {n} records for {} users (seed {}, {} gaps clamped); truth in {}",
        cfg.n_users,
        cfg.seed,
        stream.clamped_gaps(),
        truth_path.display()
    );
    Ok(())
}

pub fn anomaly(a: &AnomalyArgs) -> CmdResult {
    if !(a.z_threshold > 0.0) || !(a.cv_threshold > 0.0) {
        return Err(Failure::Usage("anomaly thresholds must be positive".into()));
    }
    let (records, counts) = read_all(&a.input)?;
    let streams = group_users(records);
    let features: Vec<UserFeatures> = par_map(&streams, a.workers.workers, |s| -> wss_core::Result<UserFeatures> {
        Ok(UserFeatures::new(&user_profile(s)?, &logical_sessions(s)?))
    })
    .into_iter()
    .collect::<wss_core::Result<_>>()?;
    let model = build_population_model(&features)?;
    let mut out = create_output(&a.out)?;
    let (mut outliers, mut regular) = (0, 0);
    for u in &features {
        let report = score_user(u, &model, a.z_threshold, a.cv_threshold)?;
        outliers += usize::from(report.flags.contains(&Flag::Outlier));
        regular += usize::from(report.flags.contains(&Flag::TooRegular));
        writeln!(out, "{}", serde_json::to_string(&report)?)?;
    }
    out.flush()?;
    eprintln!(
        "anomaly: {} records ({} malformed skipped), {} users, {outliers} outlier, {regular} too_regular",
        counts.records,
        counts.malformed,
        features.len()
    );
    Ok(())
}
