use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Pareto};
use wss_core::fit::{
    fit_lognormal, fit_powerlaw_lsq, fit_powerlaw_lsq_with, fit_powerlaw_mle, fit_powerlaw_mle_ks, log_binned_pdf,
    TailCut,
};

fn pareto(seed: u64, tau: f64, n: usize) -> Vec<f64> {
    // rand_distr's shape parameter is the survival exponent, tau - 1
    let d = Pareto::new(1.0, tau - 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

fn lognormal(seed: u64, mu: f64, sigma: f64, n: usize) -> Vec<f64> {
    let d = LogNormal::new(mu, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

fn rms(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

#[test]
fn mle_error_shrinks_like_root_n() {
    let tau = 1.6;
    let mut prev = f64::INFINITY;
    for n in [1_000, 10_000, 100_000] {
        let errs: Vec<f64> = (0..8)
            .map(|s| fit_powerlaw_mle(&pareto(s, tau, n), 1.0).unwrap().exponent().unwrap() - tau)
            .collect();
        let e = rms(&errs);
        // asymptotic sd is (tau - 1) / sqrt(n)
        assert!(e < 3.0 * (tau - 1.0) / (n as f64).sqrt(), "n={n} rms={e}");
        assert!(e < prev, "n={n}");
        prev = e;
    }
}

#[test]
fn lognormal_error_shrinks() {
    let mut prev = f64::INFINITY;
    for n in [1_000, 10_000, 100_000] {
        let errs: Vec<f64> = (0..8)
            .map(|s| {
                let (mu, sigma) = fit_lognormal(&lognormal(s, 2.0, 0.5, n)).unwrap().log_params().unwrap();
                (mu - 2.0).abs().max((sigma - 0.5).abs())
            })
            .collect();
        let e = rms(&errs);
        assert!(e < 4.0 * 0.5 / (n as f64).sqrt(), "n={n} rms={e}");
        assert!(e < prev);
        prev = e;
    }
}

#[test]
fn lsq_converges_with_sample_size() {
    for (tau, tol) in [(1.6, 0.1), (2.5, 0.15)] {
        let big = fit_powerlaw_lsq(&log_binned_pdf(&pareto(3, tau, 100_000), 10).unwrap()).unwrap();
        assert!((big.exponent().unwrap() - tau).abs() < tol, "tau={tau} got {big:?}");
        assert!(big.r2.unwrap() > 0.98);
    }
}

#[test]
fn first_empty_cut_is_less_biased_for_small_samples() {
    let tau = 1.6;
    let (mut all, mut cut) = (Vec::new(), Vec::new());
    for s in 0..40 {
        let h = log_binned_pdf(&pareto(100 + s, tau, 2_000), 10).unwrap();
        all.push(fit_powerlaw_lsq_with(&h, TailCut::AllOccupied).unwrap().exponent().unwrap() - tau);
        cut.push(fit_powerlaw_lsq_with(&h, TailCut::FirstEmpty).unwrap().exponent().unwrap() - tau);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&cut).abs() < mean(&all).abs());
    assert!(mean(&cut).abs() < 0.05, "bias {}", mean(&cut));
}

#[test]
fn ks_scan_finds_tail_behind_a_uniform_head() {
    let mut xs = pareto(9, 2.2, 20_000).into_iter().map(|x| x * 5.0).collect::<Vec<_>>();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let head = rand_distr::Uniform::new(0.1, 5.0).unwrap();
    xs.extend((0..5_000).map(|_| head.sample(&mut rng)));
    let fit = fit_powerlaw_mle_ks(&xs).unwrap();
    // any start inside the pure tail is acceptable, none inside the head
    let x_min = fit.x_min.unwrap();
    assert!((4.5..50.0).contains(&x_min), "{fit:?}");
    assert!((fit.exponent().unwrap() - 2.2).abs() < 0.1, "{fit:?}");
}
