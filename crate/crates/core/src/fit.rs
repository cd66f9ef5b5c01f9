//! Distribution estimation for heavy-tailed and log-normal data.
//!
//! Power laws are fitted two ways: least squares on the log of a
//! log-binned density, and the continuous maximum-likelihood estimator
//! `alpha = 1 + n / sum(ln(x / x_min))`. Log-normal and normal fits use the
//! population (divide-by-n) standard deviation throughout. A two-component
//! log-normal mixture is fitted by expectation-maximization on `ln x`.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_BINS_PER_DECADE: u32 = 10;
/// Per-user sample size required before an exponent is fitted.
pub const DEFAULT_MIN_EXPONENT_SAMPLES: usize = 500;

const EM_TOLERANCE: f64 = 1e-9;
const EM_MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub pdf: f64,
}

impl Bin {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        (self.lo * self.hi).sqrt()
    }
}

/// Histogram with geometrically spaced bins and density-normalized counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogHistogram {
    pub x_min: f64,
    pub x_max: f64,
    pub bins: Vec<Bin>,
    pub n: u64,
}

impl LogHistogram {
    /// Builds a histogram from explicit bins. `pdf` values are taken as given.
    pub fn from_bins(bins: Vec<Bin>, n: u64) -> Result<LogHistogram> {
        let (first, last) = match (bins.first(), bins.last()) {
            (Some(a), Some(b)) => (a.lo, b.hi),
            _ => return Err(Error::insufficient("histogram has no bins")),
        };
        Ok(LogHistogram { x_min: first, x_max: last, bins, n })
    }

    pub fn occupied(&self) -> usize {
        self.bins.iter().filter(|b| b.count > 0).count()
    }

    /// Sum of pdf times bin width; 1 up to rounding for histograms built from samples.
    pub fn integral(&self) -> f64 {
        self.bins.iter().map(|b| b.pdf * b.width()).sum()
    }
}

/// Log-binned probability density of positive samples.
///
/// Bin `i` covers `[m * 10^(i/b), m * 10^((i+1)/b))` where `m` is the sample
/// minimum and `b` is `bins_per_decade`; the last bin contains the maximum.
pub fn log_binned_pdf(samples: &[f64], bins_per_decade: u32) -> Result<LogHistogram> {
    if samples.is_empty() {
        return Err(Error::arg("no samples to bin"));
    }
    if bins_per_decade == 0 {
        return Err(Error::arg("bins_per_decade must be at least 1"));
    }
    if let Some(bad) = samples.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::arg(format!("log binning needs positive finite samples, got {bad}")));
    }
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(0.0, f64::max);
    let per_decade = f64::from(bins_per_decade);
    let index = |x: f64| ((x / min).log10() * per_decade).floor().max(0.0) as usize;
    let n_bins = index(max) + 1;
    let mut counts = vec![0u64; n_bins];
    for &x in samples {
        counts[index(x).min(n_bins - 1)] += 1;
    }
    let n = samples.len() as u64;
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let lo = min * 10f64.powf(i as f64 / per_decade);
            let hi = min * 10f64.powf((i + 1) as f64 / per_decade);
            Bin { lo, hi, count, pdf: count as f64 / (n as f64 * (hi - lo)) }
        })
        .collect();
    Ok(LogHistogram { x_min: min, x_max: max, bins, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", content = "params", rename_all = "lowercase")]
pub enum Params {
    PowerLaw { exponent: f64 },
    /// Mean and standard deviation of `ln x`.
    LogNormal { mu: f64, sigma: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    #[serde(flatten)]
    pub params: Params,
    /// Lower support cutoff used by a power-law fit.
    pub x_min: Option<f64>,
    pub r2: Option<f64>,
    pub n: usize,
    /// Zero spread: every sample was the same value.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl FitResult {
    pub fn exponent(&self) -> Option<f64> {
        match self.params {
            Params::PowerLaw { exponent } => Some(exponent),
            _ => None,
        }
    }

    /// `(mu, sigma)` of a log-normal fit.
    pub fn log_params(&self) -> Option<(f64, f64)> {
        match self.params {
            Params::LogNormal { mu, sigma } => Some((mu, sigma)),
            _ => None,
        }
    }

    /// `(mean, sd)` of a normal fit.
    pub fn normal_params(&self) -> Option<(f64, f64)> {
        match self.params {
            Params::Normal { mean, sd } => Some((mean, sd)),
            _ => None,
        }
    }

    /// Median of a log-normal fit, `exp(mu)`.
    pub fn median(&self) -> Option<f64> {
        self.log_params().map(|(mu, _)| mu.exp())
    }

    /// Mean of a log-normal fit, `exp(mu + sigma^2 / 2)`.
    pub fn lognormal_mean(&self) -> Option<f64> {
        self.log_params().map(|(mu, sigma)| (mu + sigma * sigma / 2.0).exp())
    }
}

/// Which occupied bins enter a least-squares power-law fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TailCut {
    /// Every occupied bin.
    #[default]
    AllOccupied,
    /// Occupied bins up to the first empty one. Sparse tails of small
    /// samples otherwise flatten the fitted slope.
    FirstEmpty,
}

struct LineFit {
    slope: f64,
    r2: f64,
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    LineFit { slope, r2 }
}

/// Least-squares power-law fit on every occupied bin.
pub fn fit_powerlaw_lsq(h: &LogHistogram) -> Result<FitResult> {
    fit_powerlaw_lsq_with(h, TailCut::AllOccupied)
}

/// Regresses `ln pdf` on `ln(bin center)`; the exponent is minus the slope.
pub fn fit_powerlaw_lsq_with(h: &LogHistogram, cut: TailCut) -> Result<FitResult> {
    let used: Vec<&Bin> = match cut {
        TailCut::AllOccupied => h.bins.iter().filter(|b| b.count > 0).collect(),
        TailCut::FirstEmpty => h.bins.iter().take_while(|b| b.count > 0).collect(),
    };
    if used.len() < 3 {
        return Err(Error::insufficient(format!("power-law regression needs 3 occupied bins, have {}", used.len())));
    }
    let xs: Vec<f64> = used.iter().map(|b| b.center().ln()).collect();
    let ys: Vec<f64> = used.iter().map(|b| b.pdf.ln()).collect();
    let line = linear_fit(&xs, &ys);
    Ok(FitResult {
        params: Params::PowerLaw { exponent: -line.slope },
        x_min: Some(used[0].lo),
        r2: Some(line.r2),
        n: h.n as usize,
        degenerate: false,
    })
}

/// Continuous power-law maximum-likelihood exponent over samples `>= x_min`.
pub fn fit_powerlaw_mle(samples: &[f64], x_min: f64) -> Result<FitResult> {
    if !(x_min > 0.0 && x_min.is_finite()) {
        return Err(Error::arg("x_min must be positive"));
    }
    let tail: Vec<f64> = samples.iter().copied().filter(|&x| x >= x_min).collect();
    if tail.len() < 2 {
        return Err(Error::insufficient(format!("need 2 samples >= x_min, have {}", tail.len())));
    }
    let log_sum: f64 = tail.iter().map(|x| (x / x_min).ln()).sum();
    if log_sum <= 0.0 {
        return Err(Error::Degenerate("every sample equals x_min".into()));
    }
    Ok(FitResult {
        params: Params::PowerLaw { exponent: 1.0 + tail.len() as f64 / log_sum },
        x_min: Some(x_min),
        r2: None,
        n: tail.len(),
        degenerate: false,
    })
}

/// Power-law MLE with `x_min` chosen to minimize the Kolmogorov-Smirnov
/// distance between the tail and the fitted model.
pub fn fit_powerlaw_mle_ks(samples: &[f64]) -> Result<FitResult> {
    const MIN_TAIL: usize = 10;
    const MAX_CANDIDATES: usize = 400;
    let mut sorted: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() < MIN_TAIL {
        return Err(Error::insufficient(format!("x_min scan needs {MIN_TAIL} positive samples")));
    }
    let mut candidates: Vec<usize> = (0..=sorted.len() - MIN_TAIL)
        .filter(|&i| i == 0 || sorted[i] != sorted[i - 1])
        .collect();
    if candidates.len() > MAX_CANDIDATES {
        let stride = candidates.len().div_ceil(MAX_CANDIDATES);
        candidates = candidates.into_iter().step_by(stride).collect();
    }
    let mut best: Option<(f64, FitResult)> = None;
    for start in candidates {
        let tail = &sorted[start..];
        let Ok(fit) = fit_powerlaw_mle(tail, tail[0]) else { continue };
        let alpha = fit.exponent().expect("power law");
        let n = tail.len() as f64;
        let d = tail
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let model = 1.0 - (x / tail[0]).powf(1.0 - alpha);
                ((i as f64 / n) - model).abs().max(((i + 1) as f64 / n - model).abs())
            })
            .fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, fit));
        }
    }
    best.map(|(_, f)| f).ok_or_else(|| Error::Degenerate("no x_min candidate gave a fit".into()))
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    (-0.5 * ((x - mean) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Log-normal fit: mean and population standard deviation of `ln x`.
///
/// With at least 30 samples `r2` compares the fitted density with the
/// log-binned empirical density on a log scale.
pub fn fit_lognormal(samples: &[f64]) -> Result<FitResult> {
    if samples.len() < 2 {
        return Err(Error::insufficient(format!("log-normal fit needs 2 samples, have {}", samples.len())));
    }
    if let Some(bad) = samples.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::arg(format!("log-normal fit needs positive samples, got {bad}")));
    }
    let logs: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
    let (mu, sigma) = mean_sd(&logs);
    let degenerate = sigma == 0.0;
    let r2 = if samples.len() >= 30 && !degenerate {
        let h = log_binned_pdf(samples, DEFAULT_BINS_PER_DECADE)?;
        let pairs: Vec<(f64, f64)> = h
            .bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| {
                let x = b.center();
                (b.pdf.ln(), (normal_pdf(x.ln(), mu, sigma) / x).ln())
            })
            .collect();
        let mean_obs = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
        let ss_tot: f64 = pairs.iter().map(|p| (p.0 - mean_obs).powi(2)).sum();
        let ss_res: f64 = pairs.iter().map(|p| (p.0 - p.1).powi(2)).sum();
        (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
    } else {
        None
    };
    Ok(FitResult { params: Params::LogNormal { mu, sigma }, x_min: None, r2, n: samples.len(), degenerate })
}

/// Normal fit with population standard deviation.
pub fn fit_normal(samples: &[f64]) -> Result<FitResult> {
    if samples.len() < 2 {
        return Err(Error::insufficient(format!("normal fit needs 2 samples, have {}", samples.len())));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("normal fit needs finite samples"));
    }
    let (mean, sd) = mean_sd(samples);
    Ok(FitResult { params: Params::Normal { mean, sd }, x_min: None, r2: None, n: samples.len(), degenerate: sd == 0.0 })
}

/// Two-component log-normal mixture, components ordered by `mu`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BimodalFit {
    pub comp1: FitResult,
    pub comp2: FitResult,
    /// Mixing weight of `comp1`.
    pub weight1: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Mean log-likelihood per sample of `ln x` under the mixture.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Copy)]
struct Mixture {
    w: [f64; 2],
    mu: [f64; 2],
    sd: [f64; 2],
}

impl Mixture {
    fn is_degenerate(&self, scale: f64) -> bool {
        (0..2).any(|k| !(self.sd[k] > 1e-6 * scale) || !(self.w[k] > 1e-6) || !self.mu[k].is_finite())
    }
}

/// Median split refined by one-dimensional k-means.
fn kmeans_split(sorted: &[f64]) -> Mixture {
    let mut split = sorted.len() / 2;
    for _ in 0..100 {
        let (lo, hi) = sorted.split_at(split);
        let c = [mean_sd(lo).0, mean_sd(hi).0];
        let mid = (c[0] + c[1]) / 2.0;
        let next = sorted.partition_point(|&y| y < mid).clamp(1, sorted.len() - 1);
        if next == split {
            break;
        }
        split = next;
    }
    let (lo, hi) = sorted.split_at(split);
    let (a, b) = (mean_sd(lo), mean_sd(hi));
    let w0 = split as f64 / sorted.len() as f64;
    Mixture { w: [w0, 1.0 - w0], mu: [a.0, b.0], sd: [a.1, b.1] }
}

fn quartile_start(sorted: &[f64], scale: f64) -> Mixture {
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    Mixture { w: [0.5, 0.5], mu: [q(0.25), q(0.75)], sd: [scale / 2.0, scale / 2.0] }
}

struct EmRun {
    mix: Mixture,
    ll: f64,
    iterations: usize,
    converged: bool,
    degenerate: bool,
}

fn run_em(ys: &[f64], mut mix: Mixture, scale: f64) -> EmRun {
    let n = ys.len() as f64;
    let mut resp = vec![0.0; ys.len()];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut best = (mix, f64::NEG_INFINITY);
    for iter in 1..=EM_MAX_ITERATIONS {
        if mix.is_degenerate(scale) {
            return EmRun { mix: best.0, ll: best.1, iterations: iter, converged: false, degenerate: true };
        }
        // E-step
        let mut ll = 0.0;
        for (r, &y) in resp.iter_mut().zip(ys) {
            let l0 = mix.w[0].ln() + log_normal_density(y, mix.mu[0], mix.sd[0]);
            let l1 = mix.w[1].ln() + log_normal_density(y, mix.mu[1], mix.sd[1]);
            let m = l0.max(l1);
            let total = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
            *r = (l0 - total).exp();
            ll += total;
        }
        let ll = ll / n;
        if ll > best.1 {
            best = (mix, ll);
        }
        if (ll - prev_ll).abs() < EM_TOLERANCE {
            return EmRun { mix, ll, iterations: iter, converged: true, degenerate: false };
        }
        prev_ll = ll;
        // M-step
        let n0: f64 = resp.iter().sum();
        let n1 = n - n0;
        let mu0 = resp.iter().zip(ys).map(|(r, y)| r * y).sum::<f64>() / n0;
        let mu1 = resp.iter().zip(ys).map(|(r, y)| (1.0 - r) * y).sum::<f64>() / n1;
        let v0 = resp.iter().zip(ys).map(|(r, y)| r * (y - mu0).powi(2)).sum::<f64>() / n0;
        let v1 = resp.iter().zip(ys).map(|(r, y)| (1.0 - r) * (y - mu1).powi(2)).sum::<f64>() / n1;
        mix = Mixture { w: [n0 / n, n1 / n], mu: [mu0, mu1], sd: [v0.sqrt(), v1.sqrt()] };
    }
    EmRun { mix: best.0, ll: best.1, iterations: EM_MAX_ITERATIONS, converged: false, degenerate: false }
}

fn log_normal_density(y: f64, mean: f64, sd: f64) -> f64 {
    -0.5 * ((y - mean) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Fits a two-component log-normal mixture by expectation-maximization.
///
/// Starts from a k-means split of `ln x`; stops when the mean
/// log-likelihood moves by less than 1e-9 or after 500 iterations, in which
/// case the best iterate is returned with `converged == false`. A collapsed
/// component triggers one restart from the quartiles before giving up.
pub fn fit_bimodal_lognormal(samples: &[f64]) -> Result<BimodalFit> {
    if samples.len() < 50 {
        return Err(Error::insufficient(format!("mixture fit needs 50 samples, have {}", samples.len())));
    }
    if let Some(bad) = samples.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::arg(format!("mixture fit needs positive samples, got {bad}")));
    }
    let mut ys: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
    ys.sort_by(f64::total_cmp);
    let scale = mean_sd(&ys).1;
    if scale == 0.0 {
        return Err(Error::Degenerate("all samples are equal".into()));
    }
    let mut run = run_em(&ys, kmeans_split(&ys), scale);
    if run.degenerate {
        run = run_em(&ys, quartile_start(&ys, scale), scale);
        if run.degenerate {
            return Err(Error::Degenerate("a mixture component collapsed twice".into()));
        }
    }
    let mut m = run.mix;
    if m.mu[0] > m.mu[1] {
        m = Mixture { w: [m.w[1], m.w[0]], mu: [m.mu[1], m.mu[0]], sd: [m.sd[1], m.sd[0]] };
    }
    let comp = |k: usize| FitResult {
        params: Params::LogNormal { mu: m.mu[k], sigma: m.sd[k] },
        x_min: None,
        r2: None,
        n: (m.w[k] * samples.len() as f64).round() as usize,
        degenerate: false,
    };
    Ok(BimodalFit {
        comp1: comp(0),
        comp2: comp(1),
        weight1: m.w[0],
        converged: run.converged,
        iterations: run.iterations,
        log_likelihood: run.ll,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ExponentOptions {
    pub min_samples: usize,
    pub bins_per_decade: u32,
    pub tail: TailCut,
}

impl Default for ExponentOptions {
    fn default() -> Self {
        ExponentOptions {
            min_samples: DEFAULT_MIN_EXPONENT_SAMPLES,
            bins_per_decade: DEFAULT_BINS_PER_DECADE,
            tail: TailCut::FirstEmpty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentSummary {
    /// Per-user power-law fits, in input order.
    pub per_user: Vec<(String, FitResult)>,
    /// Normal fit over the per-user exponents.
    pub normal: FitResult,
    pub mean_r2: f64,
    /// Users below the sample-size minimum or without enough occupied bins.
    pub skipped: usize,
}

impl ExponentSummary {
    pub fn exponents(&self) -> Vec<f64> {
        self.per_user.iter().filter_map(|(_, f)| f.exponent()).collect()
    }
}

/// Fits a power law to each user's positive samples and a normal
/// distribution to the resulting exponents.
pub fn per_user_exponents<S: AsRef<str>>(per_user: &[(S, Vec<f64>)], opts: ExponentOptions) -> Result<ExponentSummary> {
    let mut fits = Vec::new();
    let mut skipped = 0;
    for (user, samples) in per_user {
        let positive: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0).collect();
        if positive.len() < opts.min_samples {
            skipped += 1;
            continue;
        }
        let h = log_binned_pdf(&positive, opts.bins_per_decade)?;
        match fit_powerlaw_lsq_with(&h, opts.tail) {
            Ok(f) => fits.push((user.as_ref().to_string(), f)),
            Err(Error::InsufficientData(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if fits.is_empty() {
        return Err(Error::insufficient(format!("no user has {} samples to fit", opts.min_samples)));
    }
    let exponents: Vec<f64> = fits.iter().filter_map(|(_, f)| f.exponent()).collect();
    let normal = fit_normal(&exponents)?;
    let mean_r2 = fits.iter().filter_map(|(_, f)| f.r2).sum::<f64>() / fits.len() as f64;
    Ok(ExponentSummary { per_user: fits, normal, mean_r2, skipped })
}
