use serde_json::Value;
use wss_wasm::{powerlaw_json, sample_log_text, sessionize_json, sweep_json};

#[test]
fn sessionize_counts_every_record() {
    let log = sample_log_text(3, 50, 0.5, 1).unwrap();
    assert_eq!(log.lines().count(), 150);
    let v: Value = serde_json::from_str(&sessionize_json(&log, 0.0).unwrap()).unwrap();
    assert_eq!(v["records"], 150);
    assert_eq!(v["users"], 3);
    let requests: u64 = v["trees"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|t| t["nodes"].as_array().unwrap().iter().map(|n| n["requests"].as_u64().unwrap()))
        .sum();
    assert_eq!(requests, 150);
    assert!(v["mean_ratio"].as_f64().unwrap() >= 1.0);
}

#[test]
fn tiny_timeout_splits_sessions() {
    let log = sample_log_text(2, 80, 0.3, 2).unwrap();
    let count = |t: f64| {
        let v: Value = serde_json::from_str(&sessionize_json(&log, t).unwrap()).unwrap();
        v["trees"].as_array().unwrap().len()
    };
    assert!(count(1.0) > count(0.0));
}

#[test]
fn sessionize_skips_junk_and_rejects_empty() {
    let v: Value = serde_json::from_str(&sessionize_json("junk\n1000\tu\thttp://a.b/\t-\t1\n", 0.0).unwrap()).unwrap();
    assert_eq!(v["malformed"], 1);
    assert!(sessionize_json("nothing here", 0.0).is_err());
}

#[test]
fn sweep_curves_converge() {
    let v: Value = serde_json::from_str(&sweep_json(20, 0.5, 3).unwrap()).unwrap();
    let spu: Vec<f64> =
        v["timeout_sessions_per_user"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(spu.len(), 8);
    assert!(spu.windows(2).all(|w| w[0] >= w[1]));
    let logical: Vec<f64> =
        v["logical_sessions_per_user"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(logical.last().unwrap() >= &v["baseline_sessions_per_user"].as_f64().unwrap());
    assert!(sweep_json(0, 0.5, 3).is_err());
}

#[test]
fn powerlaw_fit_recovers_exponent() {
    let v: Value = serde_json::from_str(&powerlaw_json(2.0, 50_000, 10, 4).unwrap()).unwrap();
    assert!((v["mle_exponent"].as_f64().unwrap() - 2.0).abs() < 0.05);
    assert!((v["lsq_exponent"].as_f64().unwrap() - 2.0).abs() < 0.2);
    assert!(v["bins"].as_array().unwrap().len() > 10);
    assert!(powerlaw_json(0.5, 1000, 10, 4).is_err());
    assert!(powerlaw_json(2.0, 10, 10, 4).is_err());
}
