//! The `wss` command line: ingest, sessionize, stats, fit, sweep, synth and
//! anomaly over Click Log v1 files.
//!
//! [`run`] takes an argument vector and returns the process exit status, so
//! the whole tool can be driven from tests. Exit status 2 means bad usage or
//! unreadable input, 1 means the data could not be processed.

use std::ffi::OsString;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

use wss_core::ingest::{ClickLogReader, DEFAULT_BURST_WINDOW_MS, DEFAULT_MIN_JUMPS, DEFAULT_MIN_REQUESTS};
use wss_core::{ClickRecord, Error};

#[derive(Debug, Parser)]
#[command(name = "wss", version, about = "Click-stream sessionization and traffic statistics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a raw log: drop malformed lines, non-page requests and bursts.
    Ingest(IngestArgs),
    /// Split each user's stream into sessions and write one JSON line per session.
    Sessionize(SessionizeArgs),
    /// Write per-host and per-user tables.
    Stats(StatsArgs),
    /// Fit the traffic distributions and write fits.json plus histograms.
    Fit(FitArgs),
    /// Session statistics across a grid of timeouts.
    Sweep(SweepArgs),
    /// Generate a synthetic log with a ground-truth session sidecar.
    Synth(SynthArgs),
    /// Score users against population feature models.
    Anomaly(AnomalyArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Click Log v1 input; `-` reads standard input.
    #[arg(long = "in", env = "WSS_IN", default_value = "-")]
    pub input: PathBuf,
    /// Abort on the first malformed line instead of skipping it.
    #[arg(long, env = "WSS_STRICT")]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    /// Worker threads for per-user work. Output bytes do not depend on it.
    #[arg(long, env = "WSS_WORKERS", default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: u16,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Normalized output; `-` writes standard output.
    #[arg(long, env = "WSS_OUT", default_value = "-")]
    pub out: PathBuf,
    /// Repeats of the same (referrer, target) pair within this many
    /// milliseconds are one request.
    #[arg(long, env = "WSS_BURST_WINDOW_MS", default_value_t = DEFAULT_BURST_WINDOW_MS)]
    pub burst_window_ms: i64,
    #[arg(long)]
    pub no_dedup: bool,
    /// Keep media, style and script requests.
    #[arg(long)]
    pub keep_non_pages: bool,
    /// Drop users below --min-requests or --min-jumps. Needs a file input.
    #[arg(long, env = "WSS_LOW_ACTIVITY")]
    pub low_activity: bool,
    #[arg(long, default_value_t = DEFAULT_MIN_REQUESTS)]
    pub min_requests: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_JUMPS)]
    pub min_jumps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SessionMechanism {
    Logical,
    LogicalTimeout,
    Timeout,
    Rolling,
}

#[derive(Debug, Args)]
pub struct SessionizeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, env = "WSS_OUT", default_value = "sessions.jsonl")]
    pub out: PathBuf,
    #[arg(long, env = "WSS_MECHANISM", value_enum, default_value_t = SessionMechanism::Logical)]
    pub mechanism: SessionMechanism,
    /// Timeout in seconds for the timeout and logical-timeout mechanisms.
    #[arg(long, env = "WSS_TIMEOUT")]
    pub timeout: Option<f64>,
    /// Rolling window in seconds.
    #[arg(long, env = "WSS_WINDOW")]
    pub window: Option<f64>,
    /// Rolling-count floor (requests per window) at which a session ends.
    #[arg(long, env = "WSS_THRESHOLD")]
    pub threshold: Option<f64>,
    /// Include every tree node in the output.
    #[arg(long)]
    pub dump_trees: bool,
    /// Sessionize while reading, keeping only live per-user state. Sessions
    /// are written as they finish instead of sorted by user.
    #[arg(long)]
    pub stream: bool,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, env = "WSS_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    /// Comma-separated portal hosts; writes portals.csv.
    #[arg(long, value_delimiter = ',')]
    pub portals: Vec<String>,
    /// Users with fewer requests get an empty rate column.
    #[arg(long, default_value_t = wss_core::stats::DEFAULT_RATE_MIN_REQUESTS)]
    pub min_rate_requests: usize,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, env = "WSS_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = wss_core::fit::DEFAULT_BINS_PER_DECADE)]
    pub bins_per_decade: u32,
    /// Minimum per-user sample size for per-user exponents.
    #[arg(long, default_value_t = wss_core::fit::DEFAULT_MIN_EXPONENT_SAMPLES)]
    pub min_samples: usize,
    /// Choose the power-law x_min by a Kolmogorov-Smirnov scan instead of
    /// using the sample minimum.
    #[arg(long)]
    pub ks: bool,
    /// Fit only users with at least --min-requests and --min-jumps.
    #[arg(long, env = "WSS_LOW_ACTIVITY")]
    pub low_activity: bool,
    #[arg(long, default_value_t = DEFAULT_MIN_REQUESTS)]
    pub min_requests: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_JUMPS)]
    pub min_jumps: usize,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepMechanism {
    Timeout,
    LogicalTimeout,
    Both,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, env = "WSS_OUT", default_value = "sweep.csv")]
    pub out: PathBuf,
    #[arg(long, env = "WSS_MECHANISM", value_enum, default_value_t = SweepMechanism::Both)]
    pub mechanism: SweepMechanism,
    /// Ascending timeouts in seconds.
    #[arg(long, env = "WSS_TIMEOUTS", value_delimiter = ',')]
    pub timeouts: Vec<f64>,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "WSS_OUT", default_value = "synth.log")]
    pub out: PathBuf,
    /// Ground-truth sidecar; defaults to the output path with a
    /// `.truth.tsv` extension.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Flat key=value configuration file; flags override it.
    #[arg(long, env = "WSS_SYNTH_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub requests_mu: Option<f64>,
    #[arg(long)]
    pub requests_sigma: Option<f64>,
    #[arg(long)]
    pub min_requests: Option<usize>,
    #[arg(long)]
    pub jump_prob: Option<f64>,
    #[arg(long)]
    pub tau_mean: Option<f64>,
    #[arg(long)]
    pub tau_sd: Option<f64>,
    #[arg(long)]
    pub x_min: Option<f64>,
    #[arg(long)]
    pub max_gap: Option<f64>,
    #[arg(long)]
    pub branch_prob: Option<f64>,
    #[arg(long)]
    pub url_pool: Option<usize>,
    #[arg(long)]
    pub paths_per_host: Option<usize>,
    #[arg(long)]
    pub start_ts_ms: Option<i64>,
    #[arg(long, env = "WSS_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AnomalyArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, env = "WSS_OUT", default_value = "anomalies.jsonl")]
    pub out: PathBuf,
    #[arg(long, env = "WSS_Z_THRESHOLD", default_value_t = wss_core::anomaly::DEFAULT_Z_THRESHOLD)]
    pub z_threshold: f64,
    #[arg(long, env = "WSS_CV_THRESHOLD", default_value_t = wss_core::anomaly::DEFAULT_CV_THRESHOLD)]
    pub cv_threshold: f64,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

/// Why a command failed, mapped to its exit status.
#[derive(Debug)]
pub enum Failure {
    /// Invalid parameters or unreadable input (exit 2).
    Usage(String),
    /// Input that parses but cannot be processed, or failed output (exit 1).
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(format!("csv output: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(format!("json output: {e}"))
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

/// Parses `argv` (program name first), runs the command and returns the
/// exit status. Diagnostics and the summary line go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Sessionize(a) => commands::sessionize(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Anomaly(a) => commands::anomaly(&a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("wss: {f}");
            f.exit_code()
        }
    }
}

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

pub(crate) fn open_input(path: &Path) -> std::result::Result<Box<dyn BufRead>, Failure> {
    if is_stdio(path) {
        return Ok(Box::new(BufReader::new(io::stdin().lock())));
    }
    File::open(path)
        .map(|f| Box::new(BufReader::with_capacity(1 << 16, f)) as Box<dyn BufRead>)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

pub(crate) fn create_output(path: &Path) -> std::result::Result<Box<dyn Write>, Failure> {
    if is_stdio(path) {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    File::create(path)
        .map(|f| Box::new(BufWriter::with_capacity(1 << 16, f)) as Box<dyn Write>)
        .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

/// Counts from one pass over a click log.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct ReadCounts {
    pub records: usize,
    pub malformed: usize,
}

/// Streams records to `sink`; malformed lines are skipped or fatal per `strict`.
pub(crate) fn for_each_record(
    input: &InputArgs,
    mut sink: impl FnMut(ClickRecord) -> CmdResult,
) -> std::result::Result<ReadCounts, Failure> {
    let mut reader = ClickLogReader::new(open_input(&input.input)?, input.strict);
    for item in reader.by_ref() {
        match item {
            Ok(Ok(rec)) => sink(rec)?,
            Ok(Err(e)) => return Err(Failure::Data(e.to_string())),
            Err(e) => return Err(Failure::Usage(format!("cannot read {}: {e}", input.input.display()))),
        }
    }
    Ok(ReadCounts { records: reader.records_read(), malformed: reader.malformed() })
}

pub(crate) fn read_all(input: &InputArgs) -> std::result::Result<(Vec<ClickRecord>, ReadCounts), Failure> {
    let mut records = Vec::new();
    let counts = for_each_record(input, |r| {
        records.push(r);
        Ok(())
    })?;
    Ok((records, counts))
}

/// Order-preserving parallel map over contiguous chunks.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], workers: u16, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = usize::from(workers).min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> =
            items.chunks(chunk).map(|c| scope.spawn(move || c.iter().map(f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

pub(crate) fn seconds_to_ms(name: &str, seconds: f64) -> std::result::Result<i64, Failure> {
    let ms = (seconds * 1000.0).round();
    if seconds.is_finite() && ms >= 1.0 && ms < i64::MAX as f64 {
        Ok(ms as i64)
    } else {
        Err(Failure::Usage(format!("--{name} must be a positive number of seconds, got {seconds}")))
    }
}
