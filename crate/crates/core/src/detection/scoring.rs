//! Rarity scoring for unclear credential switches.
//!
//! Each changepoint of a path is summarized by three feature values counted
//! over the history window:
//!
//! * `f1` — rarest edge strictly before the switch (absent prefix → MAX:
//!   no prefix carries no rarity evidence);
//! * `f2` — rarest edge from the switch to the end of the path;
//! * `f3` — days on which any path connected the path's root source to its
//!   final destination.
//!
//! A sub-score per feature is the certainty-weighted fraction of historical
//! switch paths whose feature value is strictly larger (rarer ⇒ more of the
//! population above you ⇒ higher sub-score). The path's score is the product
//! of the three sub-scores, maximized over its changepoints.
//!
//! Two implementations are kept deliberately: `sub_score` scans the
//! population directly, `ScoreIndex` answers from sorted columns with
//! precomputed suffix weights. Both use compensated summation so they agree
//! to near machine precision, and tests hold them to each other and to an
//! exact integer-expansion oracle.

use serde::{Deserialize, Serialize};

use crate::causality::LoginPath;
use crate::login_graph::{EdgeKey, HistoryIndex};

/// Feature triple for one changepoint of a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathFeatures {
    /// Minimum edge frequency (distinct days) over hops before the changepoint.
    pub f1_min_freq_before: u32,
    /// Minimum edge frequency from the changepoint through the final hop.
    pub f2_min_freq_from_changepoint: u32,
    /// Days on which some path connected root source to final destination.
    pub f3_connectivity: u32,
    /// Which hop these features describe.
    pub changepoint_index: usize,
}

impl PathFeatures {
    pub fn triple(&self) -> (u32, u32, u32) {
        (
            self.f1_min_freq_before,
            self.f2_min_freq_from_changepoint,
            self.f3_connectivity,
        )
    }
}

/// Compute the feature triple for one changepoint against a history window.
pub fn extract_features(
    path: &LoginPath,
    changepoint: usize,
    history: &HistoryIndex,
) -> PathFeatures {
    let freq = |l: &crate::log_model::LoginEvent| history.edge_frequency(&EdgeKey::of(l));
    let f1 = path.logins[..changepoint].iter().map(freq).min().unwrap_or(u32::MAX);
    let f2 = path.logins[changepoint..]
        .iter()
        .map(freq)
        .min()
        .expect("changepoint within path");
    let f3 =
        history.connectivity_days(&path.root_login().src, &path.final_login().dst);
    PathFeatures {
        f1_min_freq_before: f1,
        f2_min_freq_from_changepoint: f2,
        f3_connectivity: f3,
        changepoint_index: changepoint,
    }
}

/// One historical switch path as the scoring population sees it: its feature
/// triple and its certainty weight (certainty × collapsed duplicates).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistEntry {
    pub f1: u32,
    pub f2: u32,
    pub f3: u32,
    pub weight: f64,
}

impl HistEntry {
    pub fn feature(&self, feature: Feature) -> u32 {
        match feature {
            Feature::F1 => self.f1,
            Feature::F2 => self.f2,
            Feature::F3 => self.f3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    F1,
    F2,
    F3,
}

/// Neumaier-compensated sum: order-insensitive to ~1 ulp, so the direct and
/// indexed scorers agree far below the comparison tolerance.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut compensation = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            compensation += (sum - t) + v;
        } else {
            compensation += (v - t) + sum;
        }
        sum = t;
    }
    sum + compensation
}

/// Weighted fraction of the population whose `feature` value is strictly
/// greater than `value`. Empty population → 1.0 (nothing contradicts
/// suspicion, and alerting falls back to bootstrap mode anyway).
pub fn sub_score(value: u32, feature: Feature, population: &[HistEntry]) -> f64 {
    let total = compensated_sum(population.iter().map(|e| e.weight));
    if total == 0.0 {
        return 1.0;
    }
    let above = compensated_sum(
        population.iter().filter(|e| value < e.feature(feature)).map(|e| e.weight),
    );
    above / total
}

/// Sorted-column scorer: one binary search per sub-score.
#[derive(Debug, Clone)]
pub struct ScoreIndex {
    columns: [FeatureColumn; 3],
    total: f64,
}

#[derive(Debug, Clone)]
struct FeatureColumn {
    values: Vec<u32>,
    /// `suffix[i]` = compensated sum of weights for `values[i..]`.
    suffix: Vec<f64>,
}

impl FeatureColumn {
    fn build(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut suffix = vec![0.0; pairs.len() + 1];
        let mut sum = 0.0f64;
        let mut compensation = 0.0f64;
        for (i, &(_, w)) in pairs.iter().enumerate().rev() {
            let t = sum + w;
            if sum.abs() >= w.abs() {
                compensation += (sum - t) + w;
            } else {
                compensation += (w - t) + sum;
            }
            sum = t;
            suffix[i] = sum + compensation;
        }
        Self { values: pairs.into_iter().map(|(v, _)| v).collect(), suffix }
    }

    fn weight_above(&self, value: u32) -> f64 {
        let idx = self.values.partition_point(|&v| v <= value);
        self.suffix[idx]
    }
}

impl ScoreIndex {
    pub fn build(population: &[HistEntry]) -> Self {
        let column = |f: Feature| {
            FeatureColumn::build(
                population.iter().map(|e| (e.feature(f), e.weight)).collect(),
            )
        };
        Self {
            columns: [column(Feature::F1), column(Feature::F2), column(Feature::F3)],
            total: compensated_sum(population.iter().map(|e| e.weight)),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0.0
    }

    pub fn sub_score(&self, value: u32, feature: Feature) -> f64 {
        if self.total == 0.0 {
            return 1.0;
        }
        let column = &self.columns[match feature {
            Feature::F1 => 0,
            Feature::F2 => 1,
            Feature::F3 => 2,
        }];
        column.weight_above(value) / self.total
    }

    /// Product of the three sub-scores for a feature triple.
    pub fn score_triple(&self, (f1, f2, f3): (u32, u32, u32)) -> f64 {
        self.sub_score(f1, Feature::F1)
            * self.sub_score(f2, Feature::F2)
            * self.sub_score(f3, Feature::F3)
    }
}

/// A path with its anomaly score and the features of its scoring changepoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPath {
    pub path: LoginPath,
    pub score: f64,
    pub features: PathFeatures,
}

/// Score a switch path: per-changepoint feature triples, most suspicious
/// (highest) product wins; earlier changepoint wins ties.
pub fn score_path(path: &LoginPath, history: &HistoryIndex, population: &ScoreIndex) -> ScoredPath {
    let mut best: Option<(f64, PathFeatures)> = None;
    for &cp in &path.changepoints {
        let features = extract_features(path, cp, history);
        let score = population.score_triple(features.triple());
        if best.map(|(s, _)| score > s).unwrap_or(true) {
            best = Some((score, features));
        }
    }
    let (score, features) = best.expect("switch paths have a changepoint");
    ScoredPath { path: path.clone(), score, features }
}
