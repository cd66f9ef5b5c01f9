//! Scoring users against population log-normal feature models.
//!
//! Human rate, jump ratio, referrer-to-host ratio and mean logical-session
//! size and depth are each roughly log-normal across users, so a client far
//! from the population in log space is an outlier. Human interclick times
//! are heavy tailed, so a small coefficient of variation marks a client as
//! too regular to be a person.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{fit_lognormal, FitResult};
use crate::session::SessionTree;
use crate::stats::UserProfile;

pub const DEFAULT_Z_THRESHOLD: f64 = 3.0;
pub const DEFAULT_CV_THRESHOLD: f64 = 0.1;
pub const MIN_MODEL_USERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    RateRps,
    JumpRatio,
    RefHostRatio,
    MeanSessionRequests,
    MeanSessionDepth,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::RateRps,
        Feature::JumpRatio,
        Feature::RefHostRatio,
        Feature::MeanSessionRequests,
        Feature::MeanSessionDepth,
    ];
}

/// One user's feature values and interclick gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct UserFeatures {
    pub user: String,
    pub values: BTreeMap<Feature, f64>,
    pub interclicks_s: Vec<f64>,
}

impl UserFeatures {
    /// Session features average over non-trivial trees (two or more nodes).
    pub fn new(profile: &UserProfile, sessions: &[SessionTree]) -> UserFeatures {
        let mut values = BTreeMap::new();
        if let Some(r) = profile.rate_rps {
            values.insert(Feature::RateRps, r);
        }
        values.insert(Feature::JumpRatio, profile.jump_ratio);
        if let Some(r) = profile.ref_host_ratio {
            values.insert(Feature::RefHostRatio, r);
        }
        let metrics: Vec<_> = sessions.iter().map(SessionTree::metrics).filter(|m| m.is_nontrivial()).collect();
        if !metrics.is_empty() {
            let n = metrics.len() as f64;
            values.insert(Feature::MeanSessionRequests, metrics.iter().map(|m| m.request_count as f64).sum::<f64>() / n);
            values.insert(Feature::MeanSessionDepth, metrics.iter().map(|m| f64::from(m.depth)).sum::<f64>() / n);
        }
        UserFeatures { user: profile.user.clone(), values, interclicks_s: profile.interclicks_s.clone() }
    }

    /// The value of `f` when it is positive and finite.
    pub fn usable(&self, f: Feature) -> Option<f64> {
        self.values.get(&f).copied().filter(|v| *v > 0.0 && v.is_finite())
    }

    fn is_complete(&self) -> bool {
        Feature::ALL.iter().all(|&f| self.usable(f).is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationModel {
    pub features: BTreeMap<Feature, FitResult>,
}

impl PopulationModel {
    pub fn median(&self, f: Feature) -> Option<f64> {
        self.features.get(&f).and_then(FitResult::median)
    }
}

/// Fits one log-normal per feature over the users where it is positive.
pub fn build_population_model(users: &[UserFeatures]) -> Result<PopulationModel> {
    let complete = users.iter().filter(|u| u.is_complete()).count();
    if complete < MIN_MODEL_USERS {
        return Err(Error::insufficient(format!(
            "population model needs {MIN_MODEL_USERS} users with every feature, have {complete}"
        )));
    }
    let mut features = BTreeMap::new();
    for f in Feature::ALL {
        let xs: Vec<f64> = users.iter().filter_map(|u| u.usable(f)).collect();
        features.insert(f, fit_lognormal(&xs)?);
    }
    Ok(PopulationModel { features })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Outlier,
    TooRegular,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnomalyReport {
    pub user: String,
    pub z_scores: BTreeMap<Feature, f64>,
    /// Features without a z-score: missing for the user, or degenerate in the model.
    pub missing: Vec<Feature>,
    pub max_abs_z: f64,
    /// Coefficient of variation of interclick gaps; `None` with fewer than two gaps.
    pub regularity_cv: Option<f64>,
    pub flags: Vec<Flag>,
}

fn coefficient_of_variation(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return Some(0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some(var.sqrt() / mean)
}

pub fn score_user(
    user: &UserFeatures,
    model: &PopulationModel,
    z_threshold: f64,
    cv_threshold: f64,
) -> Result<AnomalyReport> {
    if !(z_threshold > 0.0) || !(cv_threshold > 0.0) {
        return Err(Error::arg("anomaly thresholds must be positive"));
    }
    let mut z_scores = BTreeMap::new();
    let mut missing = Vec::new();
    for f in Feature::ALL {
        let params = model.features.get(&f).and_then(|fit| fit.log_params()).filter(|(_, s)| *s > 0.0);
        match (user.usable(f), params) {
            (Some(x), Some((mu, sigma))) => {
                z_scores.insert(f, (x.ln() - mu) / sigma);
            }
            _ => missing.push(f),
        }
    }
    let max_abs_z = z_scores.values().fold(0.0f64, |m, z| m.max(z.abs()));
    let regularity_cv = coefficient_of_variation(&user.interclicks_s);
    let mut flags = Vec::new();
    if max_abs_z > z_threshold {
        flags.push(Flag::Outlier);
    }
    if regularity_cv.is_some_and(|cv| cv < cv_threshold) {
        flags.push(Flag::TooRegular);
    }
    Ok(AnomalyReport { user: user.user.clone(), z_scores, missing, max_abs_z, regularity_cv, flags })
}
